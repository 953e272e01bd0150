from __future__ import annotations

from dataclasses import replace

from hypothesis import given, strategies as st

from thunderlens import synth as S
from thunderlens.advanced import (
    classify_advanced, detect_anti_liquidation, detect_arbitrage, detect_collateral_swap,
    detect_loan_swap, detect_platform_swap,
)
from thunderlens.diagnostics import Diagnostics
from thunderlens.identifier import identify_bundle
from thunderlens.pipeline import Settings
from thunderlens.primitives import classify
from thunderlens.registry import load_default
from thunderlens.synth import (
    AaveFlashLoan, Borrow, DefiSaverAction, Deposit, DydxFlashLoan, Redeem, Repay, Scenario, Swap,
    generate, scenario_at,
)

from conftest import make_registry, run_script

R1, R2 = S.RUNNER_POOL[1], S.RUNNER_POOL[2]


def phases(registry, *steps):
    bundle, truth = generate(Scenario(5, tuple(steps)))
    loans = identify_bundle(bundle, registry)
    return bundle, truth, loans, classify(bundle, loans, registry)


def kinds(items):
    return sorted(a.kind for a in items)


def test_arbitrage_same_runner(registry):
    _, truth, _, prims = phases(registry, DydxFlashLoan(), Swap("Kyber", R1, S.WETH, S.DAI),
                                Swap("OneInch", R1, S.DAI, S.WETH))
    (arb,) = detect_arbitrage(prims)
    assert arb.kind == "Arbitrage" and len(arb.evidence) == 2 and arb.runner == R1
    assert [(a.kind, tuple(sorted(a.details))) for a in [arb]] == list(truth.advanced)


def test_single_exchange_no_arbitrage(registry):
    _, _, _, prims = phases(registry, DydxFlashLoan(), Swap("Kyber", R1))
    assert detect_arbitrage(prims) == []


def test_different_runners_no_arbitrage(registry):
    _, truth, _, prims = phases(registry, DydxFlashLoan(), Swap("Kyber", R1), Swap("CurveFi", R2))
    assert detect_arbitrage(prims) == [] and truth.advanced == ()


def test_anti_liquidation_configured(registry):
    bundle, truth, loans, prims = phases(registry, AaveFlashLoan(), DefiSaverAction(runner=R1))
    (a,) = detect_anti_liquidation(bundle, registry)
    assert a.kind == "AntiLiquidation" and truth.advanced[0][0] == "AntiLiquidation"


def test_anti_liquidation_not_configured():
    bundle, _ = generate(Scenario(5, (AaveFlashLoan(), DefiSaverAction())))
    diag = Diagnostics()
    assert detect_anti_liquidation(bundle, load_default(), diag) == []
    assert "detector_disabled" in diag.codes()


def test_anti_liquidation_wrong_emitter(registry):
    bundle, truth = generate(Scenario(5, (AaveFlashLoan(), DefiSaverAction(registered=False))))
    assert detect_anti_liquidation(bundle, registry) == [] and truth.advanced == ()


def test_maker_collateral_swap(registry):
    bundle, truth, loans, prims = phases(registry, DydxFlashLoan(), Redeem("MakerDAO", S.ILKS[0], R1),
                                         Deposit("MakerDAO", S.ILKS[1], R1))
    (a,) = detect_collateral_swap(bundle, prims, loans, registry)
    assert a.detail["oldCollateral"] == S.ILKS[0] and a.detail["newCollateral"] == S.ILKS[1]
    assert [(a.kind, tuple(sorted(a.details)))] == list(truth.advanced)


def test_collateral_swap_same_asset(registry):
    bundle, _, loans, prims = phases(registry, DydxFlashLoan(), Redeem("MakerDAO", S.ILKS[0], R1),
                                     Deposit("MakerDAO", S.ILKS[0], R1))
    assert detect_collateral_swap(bundle, prims, loans, registry) == []


def test_collateral_swap_needs_both_actions(registry):
    bundle, _, loans, prims = phases(registry, DydxFlashLoan(), Redeem("MakerDAO", S.ILKS[0], R1))
    assert detect_collateral_swap(bundle, prims, loans, registry) == []


def test_loan_swap(registry):
    bundle, truth, loans, prims = phases(registry, AaveFlashLoan(asset=S.DAI), Repay("Compound", S.DAI, R1),
                                         Borrow("Compound", S.USDC, R1))
    (a,) = detect_loan_swap(bundle, prims, loans, registry)
    assert (a.detail["oldDebtAsset"], a.detail["newDebtAsset"]) == (S.DAI, S.USDC)
    assert [(a.kind, tuple(sorted(a.details)))] == list(truth.advanced)


def test_loan_swap_identity_switch(registry):
    bundle, _, loans, prims = phases(registry, AaveFlashLoan(asset=S.USDC), Repay("Compound", S.DAI, R1),
                                     Borrow("Compound", S.DAI, R1))
    assert detect_loan_swap(bundle, prims, loans, registry) == []
    (a,) = detect_loan_swap(bundle, prims, loans, registry, identity="newloan")
    assert a.detail["identity"] == "newloan"


def test_loan_swap_same_asset_or_borrow_only(registry):
    bundle, _, loans, prims = phases(registry, AaveFlashLoan(asset=S.DAI), Repay("Compound", S.DAI, R1),
                                     Borrow("Compound", S.DAI, R1))
    assert detect_loan_swap(bundle, prims, loans, registry) == []
    bundle, _, loans, prims = phases(registry, AaveFlashLoan(asset=S.DAI), Borrow("Compound", S.USDC, R1))
    assert detect_loan_swap(bundle, prims, loans, registry) == []


def test_platform_swap(registry):
    bundle, truth, loans, prims = phases(registry, AaveFlashLoan(asset=S.DAI), Repay("Compound", S.DAI, R1),
                                         Redeem("Compound", S.WETH, R1), Deposit("Aave", S.WETH, R1))
    found = detect_platform_swap(bundle, prims, loans, registry)
    assert [(a.detail["platformA"], a.detail["platformB"]) for a in found] == [("Compound", "Aave")]
    assert ("PlatformSwap", tuple(sorted(found[0].details))) in truth.advanced


def test_platform_swap_single_platform_or_no_close(registry):
    bundle, _, loans, prims = phases(registry, AaveFlashLoan(asset=S.DAI), Repay("Compound", S.DAI, R1),
                                     Redeem("Compound", S.WETH, R1), Deposit("Compound", S.WBTC, R1))
    assert detect_platform_swap(bundle, prims, loans, registry) == []
    bundle, _, loans, prims = phases(registry, AaveFlashLoan(asset=S.DAI), Deposit("Aave", S.WETH, R1))
    assert detect_platform_swap(bundle, prims, loans, registry) == []


SWAP_SCRIPTS = [
    (DydxFlashLoan(), Redeem("MakerDAO", S.ILKS[0], R1), Deposit("MakerDAO", S.ILKS[1], R1)),
    (AaveFlashLoan(asset=S.DAI), Repay("Compound", S.DAI, R1), Borrow("Compound", S.USDC, R1)),
    (AaveFlashLoan(asset=S.DAI), Repay("Compound", S.DAI, R1), Redeem("Compound", S.WETH, R1),
     Deposit("Aave", S.WETH, R1)),
]


def test_swaps_need_every_compulsory_action(registry):
    for script in SWAP_SCRIPTS:
        assert phases_advanced(registry, script)
        for drop in range(1, len(script)):
            reduced = script[:drop] + script[drop + 1:]
            swaps = [a for a in phases_advanced(registry, reduced) if a.kind.endswith("Swap")]
            assert swaps == [], (script, drop)


def phases_advanced(registry, script):
    bundle, _, loans, prims = phases(registry, *script)
    return classify_advanced(bundle, prims, loans, registry)


_REG = make_registry()


@given(st.integers(0, 2**32), st.randoms(use_true_random=False))
def test_advanced_invariants_and_input_order(seed, rnd):
    bundle, _ = generate(scenario_at(seed, seed % 211))
    loans = identify_bundle(bundle, _REG)
    prims = classify(bundle, loans, _REG)
    out = classify_advanced(bundle, prims, loans, _REG)
    shuffled = list(prims)
    rnd.shuffle(shuffled)
    assert set(map(_key, classify_advanced(bundle, shuffled, loans, _REG))) == set(map(_key, out))
    for a in out:
        if a.kind == "Arbitrage":
            assert len(a.evidence) >= 2
            runners = {p.runner for p in prims if p.kind == "Exchange" and p.ref() in a.evidence}
            assert runners == {a.runner}
        if a.kind == "CollateralSwap":
            assert a.detail["oldCollateral"] != a.detail["newCollateral"]
        if a.kind == "PlatformSwap":
            assert a.detail["platformA"] != a.detail["platformB"]


def _key(a):
    return (a.kind, a.runner, tuple(sorted(a.detail.items())), tuple(a.evidence))


def test_pipeline_settings_reach_phase3(registry):
    script = (AaveFlashLoan(asset=S.USDC), Repay("Compound", S.DAI, R1), Borrow("Compound", S.DAI, R1))
    _, _, res = run_script(registry, *script, settings=Settings(loan_swap_identity="newloan"))
    assert kinds(res.advanced) == ["LoanSwap"]
    _, _, res = run_script(registry, *script)
    assert res.advanced == []
    assert replace(Settings(), paper_faithful=True).strict is False
