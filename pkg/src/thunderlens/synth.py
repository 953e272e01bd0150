"""Synthetic transactions with ground truth derived from the script alone.

A scenario script lists what a transaction does (flash loans, swaps, lending
actions ...). The builder lays out the call tree and logs with ABI-encoded
payloads and records the expected labels from the indexes it emits. Only
pattern constants (hashes, selectors, addresses) come from the registry; no
matching code is shared with the detectors.
"""

from __future__ import annotations

import hashlib
import json
import random
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Sequence

from eth_abi import encode

from .ingestion import Corpus, write_fixture
from .model import ETH, TRANSFER, TRANSFER_FROM, EventLog, InternalCall, Span, TransactionBundle
from .registry import PatternRegistry, load_default, parse_registry


class GenerationError(ValueError):
    """The script cannot be realized (bad mutation target, missing context ...)."""


def _label(name: str) -> str:
    return "0x" + hashlib.sha256(name.encode()).hexdigest()[:40]


def _key32(text: str) -> str:
    return "0x" + text.encode().ljust(32, b"\0").hex()


# -- fixed universe -------------------------------------------------------------

WETH = "0xc02aaa39b223fe8d0a0e5c4f27ead9083c756cc2"
SAI = "0x89d24a6b4ccb1b6faa2625fe562bdd9a23260359"
USDC = "0xa0b86991c6218b36c1d19d4a2e9eb0ce3606eb48"
DAI = "0x6b175474e89094c44da98b954eedeac495271d0f"
WBTC = "0x2260fac5e5542a773aa44fbcfedf7c193bc2c599"
BAT = "0x0d8775f648430679a709e98d2b0cb6250d2887ef"
LINK = "0x514910771af9ca656af840dff83e8264ecf986ca"
KNC = "0xdd974d5c2e2928dea5f71b9825b8b646686bd200"
TOKENS = (WETH, SAI, USDC, DAI, WBTC, BAT, LINK, KNC)
DYDX_MARKETS = (WETH, SAI, USDC, DAI)
SYNTHS = tuple(_key32(k) for k in ("sETH", "sUSD", "sBTC", "sEUR"))
ILKS = tuple(_key32(k) for k in ("ETH-A", "BAT-A", "WBTC-A", "USDC-A"))

RUNNER_POOL = tuple(_label(f"runner:{i}") for i in range(64))

AAVE_CORE = _label("aave:core")
BZX_PROTOCOL = _label("bzx:protocol")
PTOKEN = _label("bzx:ptoken")
UNIV1_FACTORY = _label("uniswapv1:factory")
BALANCER_POOL = _label("balancer:pool")
ONEINCH = _label("oneinch:exchange")
SYNTHETIX = _label("synthetix:proxy")
CURVE_POOL = _label("curve:pool")
KYBER_PROXY = _label("kyber:proxy")
KYBER_NETWORK = _label("kyber:network")
MAKER_VAT = _label("maker:vat")
OPYN_OTOKEN = _label("opyn:otoken")
DEFI_SAVER = _label("defisaver:monitor")
DEFI_SAVER_EVENT = "0x" + hashlib.sha256(b"synthetic DeFiSaver repay event").hexdigest()
FAKE_AAVE_POOL = _label("fake:aave-pool")
FAKE_SOLO = _label("fake:solo")
FAKE_ITOKEN = _label("fake:itoken")
FAKE_SAVER = _label("fake:defisaver")
NOT_A_PAIR = _label("fake:pair-sink")
GENESIS_DEPLOYER = _label("genesis:deployer")


def itoken(asset: str) -> str:
    return _label(f"bzx:itoken:{asset}")


def ctoken(asset: str) -> str:
    return _label(f"compound:ctoken:{asset}")


def atoken(asset: str) -> str:
    return _label(f"aave:atoken:{asset}")


def univ1_exchange(asset: str) -> str:
    return _label(f"uniswapv1:exchange:{asset}")


def pair_tokens(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


def pair_address(a: str, b: str) -> str:
    t0, t1 = pair_tokens(a, b)
    return _label(f"uniswapv2:pair:{t0}:{t1}")


ALL_PAIRS = tuple(pair_tokens(a, b) for i, a in enumerate(TOKENS) for b in TOKENS[i + 1:])

# Real signatures for calls that carry no pattern constant.
SEL = {
    "execute": "0x61461954",
    "flashLoan": "0x5cffe9de",
    "executeOperation": "0xee872558",
    "transferToUser": "0xfa93b2a5",
    "transferToReserve": "0x28fcf4d3",
    "operate": "0xa67a6a45",
    "callFunction": "0x8b418713",
    "flashBorrowToken": "0x66fa576f",
    "pairSwap": "0x022c0d9f",
    "uniswapV2Call": "0x10d1e85c",
    "ethToTokenSwapInput": "0xf39b5b9b",
    "tokenToEthSwapInput": "0x95e3c50b",
    "swapExactAmountIn": "0x8201aa3f",
    "synthExchange": "0xee52a2f3",
    "curveExchange": "0x3df02124",
    "kyberTrade": "0xcb3c28c7",
    "tradeWithHint": "0x088322ef",
    "cMint": "0xa0712d68",
    "cRedeemUnderlying": "0x852a12e3",
    "cBorrow": "0xc5ebeaec",
    "cRepayBorrow": "0x0e752702",
    "aDeposit": "0xd2d0e066",
    "aRedeem": "0xdb006a75",
    "aRedeemUnderlying": "0x9895e3d8",
    "aBorrow": "0xc858f5f9",
    "aRepay": "0x5ceae9c4",
    "iMint": "0x40c10f19",
    "iBurn": "0x9dc29fac",
    "iBorrow": "0x47e917e7",
    "bzxPayback": "0x30501fd1",
    "frob": "0x76088703",
    "liquidationCall": "0x00a718a9",
    "liquidateBorrow": "0xf5e3c462",
    "opynLiquidate": "0xbcbaf487",
    "burnToEther": "0x81a6b250",
    "createPair": "0xc9c65396",
    "balanceOf": "0x70a08231",
    "accrueInterest": "0xa6afed95",
    "saverRepay": "0x135fe6bf",
    "oneinchSwap": "0xe2a7515e",
}
BAD_BZX_SELECTOR = "0x66fa576e"

LOAN_RANGE = (10**21, 10**24)
ACTION_RANGE = (10**15, 10**20)


@lru_cache(maxsize=1)
def _constants() -> dict:
    """Hashes, selectors and addresses read from the built-in registry."""
    reg = load_default()
    book = reg.address_book

    def ev(platform, name):
        return reg.named(platform, name).event_hash

    dydx = reg.named("dYdX", "operate")
    chain = {s.name: s.event_hash for s in dydx.chain}
    margin = [p.selector for p in reg.find("bZx", "MarginTrade")]
    return {
        "aave_pool": next(iter(book.resolve(["@aave_lending_pool"]))),
        "factory": next(iter(book.resolve(["@uniswap_v2_factory"]))),
        "solo": next(iter(book.resolve(["@dydx_solo_margin"]))),
        "aave_flashloan": ev("Aave", "FlashLoan"),
        "pair_created": ev("UniswapV2", "PairCreated"),
        "v2_swap": ev("UniswapV2", "Swap"),
        "v2_swap_selector": reg.named("UniswapV2", "swap").selector,
        "bzx_flash_selector": reg.named("bZx", "flashBorrowToken").selector,
        "log_operate": chain["LogOperate"],
        "log_call": chain["LogCall"],
        "log_withdraw": chain["LogWithdraw"],
        "log_deposit": chain["LogDeposit"],
        "token_purchase": ev("UniswapV1", "TokenPurchase"),
        "eth_purchase": ev("UniswapV1", "ETHPurchase"),
        "log_swap": ev("Balancer", "LOG_SWAP"),
        "swapped": ev("OneInch", "Swapped"),
        "synth_exchange": ev("Synthetix", "Exchange"),
        "token_exchange": ev("CurveFi", "TokenExchange"),
        "execute_trade": ev("Kyber", "ExecuteTrade"),
        "kyber_trade": ev("Kyber", "KyberTrade"),
        "aave_borrow": ev("Aave", "Borrow"),
        "aave_repay": ev("Aave", "Repay"),
        "aave_deposit": ev("Aave", "Deposit"),
        "aave_redeem": ev("Aave", "RedeemUnderlying"),
        "bzx_borrow": ev("bZx", "Borrow"),
        "bzx_repay": ev("bZx", "Repay"),
        "bzx_mint": ev("bZx", "Mint"),
        "bzx_burn": ev("bZx", "Burn"),
        "c_borrow": ev("Compound", "Borrow"),
        "c_repay": ev("Compound", "RepayBorrow"),
        "c_mint": ev("Compound", "Mint"),
        "c_redeem": ev("Compound", "Redeem"),
        "frob": ev("MakerDAO", "frob"),
        "margin_selectors": margin,
        "margin_event": reg.find("bZx", "MarginTrade")[0].event_hash,
        "aave_liq": ev("Aave", "LiquidationCall"),
        "c_liq": ev("Compound", "LiquidateBorrow"),
        "dydx_liq": ev("dYdX", "LogLiquidate"),
        "opyn_liq": ev("Opyn", "Liquidate"),
    }


# -- script steps -----------------------------------------------------------------

@dataclass(frozen=True)
class AaveFlashLoan:
    asset: str | None = None
    amount: int | None = None
    genuine_emitter: bool = True


@dataclass(frozen=True)
class DydxFlashLoan:
    with_call: bool = True
    market: int | None = None
    amount: int | None = None
    ordered: bool = True
    genuine_emitter: bool = True


@dataclass(frozen=True)
class UniV2FlashSwap:
    payback_to_pair: bool = True
    empty_data: bool = False
    token_out: str | None = None
    token_other: str | None = None
    amount: int | None = None


@dataclass(frozen=True)
class BzxFlashBorrow:
    on_itoken: bool = True
    asset: str | None = None
    amount: int | None = None
    genuine_selector: bool = True


@dataclass(frozen=True)
class Swap:
    platform: str
    runner: str | None = None
    asset_in: str | None = None
    asset_out: str | None = None


@dataclass(frozen=True)
class Borrow:
    platform: str
    asset: str | None = None
    runner: str | None = None


@dataclass(frozen=True)
class Repay:
    platform: str
    asset: str | None = None
    runner: str | None = None


@dataclass(frozen=True)
class Deposit:
    platform: str
    asset: str | None = None
    runner: str | None = None


@dataclass(frozen=True)
class Redeem:
    platform: str
    asset: str | None = None
    runner: str | None = None


@dataclass(frozen=True)
class MarginMint:
    with_selector: bool = True
    variant: int = 0
    runner: str | None = None


@dataclass(frozen=True)
class Liquidate:
    platform: str
    runner: str | None = None


@dataclass(frozen=True)
class DefiSaverAction:
    registered: bool = True
    runner: str | None = None


@dataclass(frozen=True)
class Mutate:
    target: int
    mutation: str


LOAN_STEPS = (AaveFlashLoan, DydxFlashLoan, UniV2FlashSwap, BzxFlashBorrow)
LB_STEPS = {Borrow: "Borrow", Repay: "Repay", Deposit: "Deposit", Redeem: "Redeem"}
EXCHANGE_PLATFORMS = ("UniswapV1", "UniswapV2", "Balancer", "OneInch", "Synthetix", "CurveFi", "Kyber")
LB_PLATFORMS = ("Aave", "Compound", "bZx", "MakerDAO")
LIQUIDATION_PLATFORMS = ("Aave", "Compound", "dYdX", "Opyn")

# mutation name -> (step type, field changes)
MUTATIONS = {
    ("AaveFlashLoan", "wrong_emitter"): {"genuine_emitter": False},
    ("DydxFlashLoan", "wrong_emitter"): {"genuine_emitter": False},
    ("DydxFlashLoan", "broken_order"): {"ordered": False},
    ("UniV2FlashSwap", "empty_data"): {"empty_data": True},
    ("UniV2FlashSwap", "payback_non_pair"): {"payback_to_pair": False},
    ("BzxFlashBorrow", "wrong_selector"): {"genuine_selector": False},
    ("BzxFlashBorrow", "wrong_callee"): {"on_itoken": False},
    ("MarginMint", "no_selector"): {"with_selector": False},
    ("DefiSaverAction", "wrong_emitter"): {"registered": False},
}

_STEP_TYPES = {cls.__name__: cls for cls in (
    *LOAN_STEPS, Swap, Borrow, Repay, Deposit, Redeem, MarginMint, Liquidate, DefiSaverAction, Mutate,
)}


def step_to_json(step) -> dict:
    out = {"type": type(step).__name__}
    for f in fields(step):
        out[f.name] = getattr(step, f.name)
    return out


def step_from_json(obj: dict):
    obj = dict(obj)
    cls = _STEP_TYPES.get(obj.pop("type", None))
    if cls is None:
        raise GenerationError(f"unknown step type in {obj!r}")
    return cls(**obj)


@dataclass(frozen=True)
class Scenario:
    seed: int
    script: tuple = ()
    block_number: int = 12_000_000
    tx_index: int = 0
    bot: str | None = None
    family: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "script", tuple(self.script))

    def tx_hash(self) -> str:
        doc = {"seed": self.seed, "script": [step_to_json(s) for s in self.script],
               "block": self.block_number, "index": self.tx_index, "bot": self.bot}
        return "0x" + hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class GroundTruth:
    tx_hash: str
    loans: tuple[tuple[str, Span], ...] = ()
    primitives: tuple[tuple[str, str, Span], ...] = ()
    advanced: tuple[tuple[str, tuple], ...] = ()
    family: str = "custom"

    def __post_init__(self):
        # canonical detail order, so labels survive a sorted-key JSON round trip
        object.__setattr__(self, "advanced", tuple((k, tuple(sorted(d))) for k, d in self.advanced))

    def to_json(self) -> dict:
        return {
            "txHash": self.tx_hash,
            "family": self.family,
            "expectedLoans": [{"provider": p, "span": s.to_json()} for p, s in self.loans],
            "expectedPrimitives": [{"kind": k, "platform": p, "span": s.to_json()}
                                   for k, p, s in self.primitives],
            "expectedAdvanced": [{"kind": k, "details": dict(d)} for k, d in self.advanced],
        }

    @classmethod
    def from_json(cls, d: dict) -> "GroundTruth":
        return cls(
            tx_hash=d["txHash"], family=d.get("family", "custom"),
            loans=tuple((x["provider"], Span.from_json(x["span"])) for x in d["expectedLoans"]),
            primitives=tuple((x["kind"], x["platform"], Span.from_json(x["span"]))
                             for x in d["expectedPrimitives"]),
            advanced=tuple((x["kind"], tuple(x["details"].items())) for x in d["expectedAdvanced"]),
        )


# -- trace builder ----------------------------------------------------------------

def _topic(value) -> str:
    if isinstance(value, str):
        return "0x" + value[2:].rjust(64, "0")
    return "0x" + format(value, "064x")


class TraceBuilder:
    def __init__(self, sender: str):
        self.sender = sender
        self.calls: list[InternalCall] = []
        self.logs: list[EventLog] = []
        self.stack: list[int] = []

    @property
    def ctx(self) -> str:
        return self.calls[self.stack[-1]].callee if self.stack else self.sender

    @property
    def last(self) -> int:
        return len(self.calls) - 1

    @contextmanager
    def frame(self, callee: str, selector: str | None = None, types=(), args=(), value: int = 0):
        calldata = b""
        if selector is not None:
            calldata = bytes.fromhex(selector[2:]) + (encode(list(types), list(args)) if types else b"")
        i = len(self.calls)
        self.calls.append(InternalCall(i, len(self.stack), self.ctx, callee, selector, calldata, value))
        self.stack.append(i)
        try:
            yield i
        finally:
            self.stack.pop()

    def call(self, callee, selector=None, types=(), args=(), value=0) -> int:
        with self.frame(callee, selector, types, args, value) as i:
            return i

    def transfer(self, token: str, to: str, amount: int) -> int:
        if token == ETH:
            return self.call(to, value=amount)
        return self.call(token, TRANSFER, ["address", "uint256"], [to, amount])

    def transfer_from(self, token: str, src: str, to: str, amount: int) -> int:
        return self.call(token, TRANSFER_FROM, ["address", "address", "uint256"], [src, to, amount])

    def balance_of(self, token: str, holder: str) -> int:
        return self.call(token, SEL["balanceOf"], ["address"], [holder])

    def log(self, emitter: str, topics: Sequence, types=(), values=()) -> int:
        data = encode(list(types), list(values)) if types else b""
        i = len(self.logs)
        self.logs.append(EventLog(i, emitter, tuple(_topic(t) for t in topics), data, self.last))
        return i


@dataclass
class _Prim:
    kind: str
    platform: str
    span: Span
    runner: str
    action: str | None = None
    asset: str | None = None


@dataclass
class _Truth:
    loans: list[tuple[str, Span, str]] = field(default_factory=list)  # provider, span, asset
    prims: list[_Prim] = field(default_factory=list)
    saver_logs: list[tuple[str, int]] = field(default_factory=list)


# -- script checks --------------------------------------------------------------------

def apply_mutations(script: Sequence) -> list:
    """Fold ``Mutate`` steps into their targets; returns the effective script."""
    steps = list(script)
    for pos, step in enumerate(steps):
        if not isinstance(step, Mutate):
            continue
        if not 0 <= step.target < len(steps) or step.target == pos:
            raise GenerationError(f"script[{pos}]: mutation target {step.target} does not exist")
        target = steps[step.target]
        changes = MUTATIONS.get((type(target).__name__, step.mutation))
        if changes is None:
            raise GenerationError(
                f"script[{pos}]: mutation {step.mutation!r} does not apply to {type(target).__name__}")
        steps[step.target] = replace(target, **changes)
    return [s for s in steps if not isinstance(s, Mutate)]


def _check(script: Sequence) -> None:
    seen_loan = False
    borrowed: set[str] = set()
    providers: set[type] = set()
    for pos, step in enumerate(script):
        if isinstance(step, LOAN_STEPS):
            if type(step) in providers:
                raise GenerationError(f"script[{pos}]: one {type(step).__name__} per scenario")
            providers.add(type(step))
            seen_loan = True
        elif isinstance(step, Swap):
            if step.platform not in EXCHANGE_PLATFORMS:
                raise GenerationError(f"script[{pos}]: unknown exchange platform {step.platform!r}")
        elif isinstance(step, tuple(LB_STEPS)):
            if step.platform not in LB_PLATFORMS:
                raise GenerationError(f"script[{pos}]: unknown lending platform {step.platform!r}")
            if isinstance(step, Borrow):
                borrowed.add(step.platform)
            if isinstance(step, Repay) and not seen_loan and step.platform not in borrowed:
                raise GenerationError(f"script[{pos}]: Repay with no prior loan context")
        elif isinstance(step, Liquidate):
            if step.platform not in LIQUIDATION_PLATFORMS:
                raise GenerationError(f"script[{pos}]: unknown liquidation platform {step.platform!r}")
        elif isinstance(step, MarginMint):
            if not 0 <= step.variant < 4:
                raise GenerationError(f"script[{pos}]: margin variant must be 0..3")


# -- rendering -------------------------------------------------------------------------

class _Gen:
    def __init__(self, rng: random.Random, bot: str, sender: str):
        self.rng = rng
        self.bot = bot
        self.b = TraceBuilder(sender)
        self.t = _Truth()
        self.c = _constants()
        self.flash_pair: str | None = None

    def amount(self) -> int:
        return self.rng.randrange(*ACTION_RANGE)

    def loan_amount(self) -> int:
        return self.rng.randrange(*LOAN_RANGE)

    def token(self, exclude=()) -> str:
        return self.rng.choice([t for t in TOKENS if t not in exclude])

    @contextmanager
    def acting(self, runner: str | None):
        runner = runner or self.bot
        if runner == self.b.ctx:
            yield runner
        else:
            with self.b.frame(runner, SEL["execute"]):
                yield runner

    def run(self, steps: list) -> None:
        for k, step in enumerate(steps):
            if isinstance(step, LOAN_STEPS):
                getattr(self, "loan_" + type(step).__name__)(step, steps[k + 1:])
                return
            self.action(step)

    def action(self, step) -> None:
        if isinstance(step, Swap):
            self.swap(step)
        elif isinstance(step, tuple(LB_STEPS)):
            self.lending(step, LB_STEPS[type(step)])
        elif isinstance(step, MarginMint):
            self.margin(step)
        elif isinstance(step, Liquidate):
            self.liquidate(step)
        elif isinstance(step, DefiSaverAction):
            self.saver(step)
        else:
            raise GenerationError(f"cannot render {step!r}")

    def prim(self, kind, platform, start, runner, action=None, asset=None):
        self.t.prims.append(_Prim(kind, platform, Span(start, self._end(start)), runner, action, asset))

    def _end(self, start: int) -> int:
        depth = self.b.calls[start].depth
        end = start
        for c in self.b.calls[start + 1:]:
            if c.depth <= depth:
                break
            end = c.index
        return end

    # flash loans ----------------------------------------------------------------------

    def loan_AaveFlashLoan(self, step: AaveFlashLoan, rest) -> None:
        b, c = self.b, self.c
        asset = step.asset or self.token()
        amount = step.amount or self.loan_amount()
        fee = amount * 9 // 10000
        pool = c["aave_pool"]
        with b.frame(pool, SEL["flashLoan"], ["address", "address", "uint256", "bytes"],
                     [self.bot, asset, amount, b""]):
            with b.frame(AAVE_CORE, SEL["transferToUser"], ["address", "address", "uint256"],
                         [asset, self.bot, amount]):
                start = b.transfer(asset, self.bot, amount)
            with b.frame(self.bot, SEL["executeOperation"], ["address", "uint256", "uint256", "bytes"],
                         [asset, amount, fee, b""]):
                self.run(rest)
                end = b.transfer(asset, AAVE_CORE, amount + fee)
            b.balance_of(asset, AAVE_CORE)
            emitter = pool if step.genuine_emitter else FAKE_AAVE_POOL
            b.log(emitter, [c["aave_flashloan"], self.bot, asset],
                  ["uint256"] * 4, [amount, fee, fee * 3 // 10, 1_600_000_000])
        if step.genuine_emitter:
            self.t.loans.append(("Aave", Span(start, end), asset))

    def loan_DydxFlashLoan(self, step: DydxFlashLoan, rest) -> None:
        b, c = self.b, self.c
        market = step.market if step.market is not None else self.rng.randrange(len(DYDX_MARKETS))
        asset = DYDX_MARKETS[market]
        amount = step.amount or self.loan_amount()
        solo = c["solo"] if step.genuine_emitter else FAKE_SOLO
        update = ["bool", "uint256", "bool", "uint256"]

        def withdraw():
            i = b.transfer(asset, self.bot, amount)
            b.log(solo, [c["log_withdraw"], self.bot],
                  ["uint256", "uint256", *update, "address"],
                  [0, market, False, amount, False, amount, self.bot])
            return i

        def deposit():
            i = b.transfer_from(asset, self.bot, solo, amount + 2)
            b.log(solo, [c["log_deposit"], self.bot],
                  ["uint256", "uint256", *update, "address"],
                  [0, market, True, amount + 2, False, 0, self.bot])
            return i

        def callback():
            if step.with_call:
                with b.frame(self.bot, SEL["callFunction"], ["address", "(address,uint256)", "bytes"],
                             [solo, (self.bot, 0), b"\x01"]):
                    self.run(rest)
                b.log(solo, [c["log_call"], self.bot], ["uint256", "address"], [0, self.bot])

        with b.frame(solo, SEL["operate"], ["uint256", "uint256"], [market, amount]):
            b.log(solo, [c["log_operate"]], ["address"], [self.bot])
            if step.ordered:
                start = withdraw()
                callback()
                end = deposit()
            else:
                deposit()
                withdraw()
                callback()
        if not step.with_call:
            self.run(rest)
        if step.ordered and step.genuine_emitter:
            self.t.loans.append(("dYdX", Span(start, end), asset))

    def loan_UniV2FlashSwap(self, step: UniV2FlashSwap, rest) -> None:
        b, c = self.b, self.c
        tout = step.token_out or self.token()
        other = step.token_other or self.token(exclude=(tout,))
        t0, t1 = pair_tokens(tout, other)
        pair = pair_address(t0, t1)
        amount = step.amount or self.loan_amount()
        payback = amount * 1004 // 1000
        out0, out1 = (amount, 0) if tout == t0 else (0, amount)
        in0, in1 = (payback, 0) if tout == t0 else (0, payback)
        data = b"" if step.empty_data else b"\x01"
        if step.empty_data:
            # ordinary swap: pay in first, no callback
            in_token = other
            in0, in1 = (0, payback) if tout == t0 else (payback, 0)
            b.transfer(in_token, pair, payback)
        with b.frame(pair, c["v2_swap_selector"], ["uint256", "uint256", "address", "bytes"],
                     [out0, out1, self.bot, data]) as s:
            b.transfer(tout, self.bot, amount)
            end = None
            if not step.empty_data:
                self.flash_pair = pair
                with b.frame(self.bot, SEL["uniswapV2Call"], ["address", "uint256", "uint256", "bytes"],
                             [self.bot, out0, out1, data]):
                    self.run(rest)
                    end = b.transfer(tout, pair if step.payback_to_pair else NOT_A_PAIR, payback)
                self.flash_pair = None
            b.balance_of(t0, pair)
            b.balance_of(t1, pair)
            b.log(pair, [c["v2_swap"], self.bot, self.bot], ["uint256"] * 4, [in0, in1, out0, out1])
        self.prim("Exchange", "UniswapV2", s, self.bot)
        if step.empty_data:
            self.run(rest)
        elif step.payback_to_pair:
            self.t.loans.append(("UniswapV2", Span(s, end), tout))

    def loan_BzxFlashBorrow(self, step: BzxFlashBorrow, rest) -> None:
        b = self.b
        asset = step.asset or self.token()
        amount = step.amount or self.loan_amount()
        lender = itoken(asset) if step.on_itoken else FAKE_ITOKEN
        selector = self.c["bzx_flash_selector"] if step.genuine_selector else BAD_BZX_SELECTOR
        with b.frame(lender, selector, ["uint256", "address", "address", "string", "bytes"],
                     [amount, self.bot, self.bot, "", b"\x01"]):
            start = b.transfer(asset, self.bot, amount)
            with b.frame(self.bot, SEL["execute"]):
                self.run(rest)
                end = b.transfer(asset, lender, amount)
            b.balance_of(asset, lender)
        if step.on_itoken and step.genuine_selector:
            self.t.loans.append(("bZx", Span(start, end), asset))

    # exchanges ------------------------------------------------------------------------

    def swap(self, step: Swap) -> None:
        b, c, rng = self.b, self.c, self.rng
        p = step.platform
        a = self.amount()
        o = self.amount()
        if p == "Synthetix":
            x = step.asset_in or rng.choice(SYNTHS)
            y = step.asset_out or rng.choice([s for s in SYNTHS if s != x])
        elif p == "UniswapV1":
            x = step.asset_in or (ETH if rng.random() < 0.5 else self.token())
            y = step.asset_out or (self.token() if x == ETH else ETH)
            if (x == ETH) == (y == ETH):
                raise GenerationError("a UniswapV1 swap trades ETH against a token")
        else:
            x, y = step.asset_in, step.asset_out
            for _ in range(64):
                if x is not None and y is not None and x != y and not (
                        p == "UniswapV2" and pair_address(x, y) == self.flash_pair):
                    break
                x = step.asset_in or self.token()
                y = step.asset_out or self.token(exclude=(x,))
            if p == "UniswapV2" and pair_address(x, y) == self.flash_pair:
                raise GenerationError("swap on the pair that is lending the flash swap")
        if x == y:
            raise GenerationError("swap needs two distinct assets")
        with self.acting(step.runner) as r:
            if p == "UniswapV1":
                if x == ETH:
                    ex = univ1_exchange(y)
                    with b.frame(ex, SEL["ethToTokenSwapInput"], ["uint256", "uint256"], [1, 2**32],
                                 value=a) as i:
                        b.balance_of(y, ex)
                        b.transfer(y, r, o)
                        b.log(ex, [c["token_purchase"], r, a, o])
                else:
                    ex = univ1_exchange(x)
                    with b.frame(ex, SEL["tokenToEthSwapInput"], ["uint256"] * 3, [a, 1, 2**32]) as i:
                        b.balance_of(x, ex)
                        b.transfer(ETH, r, o)
                        b.transfer_from(x, r, ex, a)
                        b.log(ex, [c["eth_purchase"], r, a, o])
            elif p == "UniswapV2":
                t0, t1 = pair_tokens(x, y)
                pair = pair_address(t0, t1)
                in0, in1 = (a, 0) if x == t0 else (0, a)
                out0, out1 = (0, o) if x == t0 else (o, 0)
                b.transfer(x, pair, a)
                with b.frame(pair, c["v2_swap_selector"], ["uint256", "uint256", "address", "bytes"],
                             [out0, out1, r, b""]) as i:
                    b.transfer(y, r, o)
                    b.balance_of(t0, pair)
                    b.balance_of(t1, pair)
                    b.log(pair, [c["v2_swap"], r, r], ["uint256"] * 4, [in0, in1, out0, out1])
            elif p == "Balancer":
                with b.frame(BALANCER_POOL, SEL["swapExactAmountIn"],
                             ["address", "uint256", "address", "uint256", "uint256"],
                             [x, a, y, 1, 2**128]) as i:
                    b.transfer_from(x, r, BALANCER_POOL, a)
                    b.transfer(y, r, o)
                    b.log(BALANCER_POOL, [c["log_swap"], r, x, y], ["uint256", "uint256"], [a, o])
            elif p == "OneInch":
                with b.frame(ONEINCH, SEL["oneinchSwap"],
                             ["address", "address", "uint256", "uint256", "uint256[]", "uint256"],
                             [x, y, a, 1, [1, 0, 0], 0]) as i:
                    b.transfer_from(x, r, ONEINCH, a)
                    b.transfer(y, r, o)
                    b.log(ONEINCH, [c["swapped"]], ["address", "address", "uint256", "uint256"],
                          [x, y, a, o])
            elif p == "Synthetix":
                with b.frame(SYNTHETIX, SEL["synthExchange"], ["bytes32", "uint256", "bytes32"],
                             [bytes.fromhex(x[2:]), a, bytes.fromhex(y[2:])]) as i:
                    b.log(SYNTHETIX, [c["synth_exchange"], r],
                          ["bytes32", "uint256", "bytes32", "uint256", "address"],
                          [bytes.fromhex(x[2:]), a, bytes.fromhex(y[2:]), o, r])
            elif p == "CurveFi":
                ci, cj = rng.randrange(4), rng.randrange(4)
                with b.frame(CURVE_POOL, SEL["curveExchange"], ["int128", "int128", "uint256", "uint256"],
                             [ci, cj, a, 1]) as i:
                    b.transfer_from(x, r, CURVE_POOL, a)
                    b.transfer(y, r, o)
                    b.log(CURVE_POOL, [c["token_exchange"], r], ["int128", "uint256", "int128", "uint256"],
                          [ci, a, cj, o])
            elif p == "Kyber":
                with b.frame(KYBER_PROXY, SEL["kyberTrade"],
                             ["address", "uint256", "address", "address", "uint256", "uint256", "address"],
                             [x, a, y, r, 2**128, 1, r]) as i:
                    b.transfer_from(x, r, KYBER_PROXY, a)
                    if rng.random() < 0.5:
                        b.transfer(y, r, o)
                        b.log(KYBER_PROXY, [c["execute_trade"], r], ["address", "address", "uint256", "uint256"],
                              [x, y, a, o])
                    else:
                        with b.frame(KYBER_NETWORK, SEL["tradeWithHint"],
                                     ["address", "address", "uint256", "address", "address",
                                      "uint256", "uint256", "address", "bytes"],
                                     [r, x, a, y, r, 2**128, 1, r, b""]) as i:
                            b.transfer(y, r, o)
                            b.log(KYBER_NETWORK, [c["kyber_trade"], r],
                                  ["address", "address", "uint256", "uint256", "address", "uint256",
                                   "address", "address", "bytes"],
                                  [x, y, a, o, r, a, r, r, b""])
        self.prim("Exchange", p, i, r)

    # lending -----------------------------------------------------------------------

    def lending(self, step, action: str) -> None:
        b, c, rng = self.b, self.c, self.rng
        p = step.platform
        a = self.amount()
        if p == "MakerDAO":
            asset = step.asset or rng.choice(ILKS)
        else:
            asset = step.asset or self.token()
        with self.acting(step.runner) as r:
            if p == "Compound":
                ct = ctoken(asset)
                sel = {"Deposit": "cMint", "Redeem": "cRedeemUnderlying",
                       "Borrow": "cBorrow", "Repay": "cRepayBorrow"}[action]
                with b.frame(ct, SEL[sel], ["uint256"], [a]) as i:
                    b.call(ct, SEL["accrueInterest"])
                    if action == "Deposit":
                        b.transfer_from(asset, r, ct, a)
                        b.log(ct, [c["c_mint"]], ["address", "uint256", "uint256"], [r, a, a * 50])
                    elif action == "Redeem":
                        b.transfer(asset, r, a)
                        b.log(ct, [c["c_redeem"]], ["address", "uint256", "uint256"], [r, a, a * 50])
                    elif action == "Borrow":
                        b.transfer(asset, r, a)
                        b.log(ct, [c["c_borrow"]], ["address"] + ["uint256"] * 3, [r, a, a, a * 7])
                    else:
                        b.transfer_from(asset, r, ct, a)
                        b.log(ct, [c["c_repay"]], ["address", "address"] + ["uint256"] * 3,
                              [r, r, a, 0, a * 7])
            elif p == "Aave":
                pool = c["aave_pool"]
                if action == "Deposit":
                    with b.frame(pool, SEL["aDeposit"], ["address", "uint256", "uint16"], [asset, a, 0]) as i:
                        with b.frame(AAVE_CORE, SEL["transferToReserve"], ["address", "address", "uint256"],
                                     [asset, r, a]):
                            b.transfer_from(asset, r, AAVE_CORE, a)
                        b.log(pool, [c["aave_deposit"], asset, r, 0], ["uint256", "uint256"], [a, 1_600_000_000])
                elif action == "Redeem":
                    with b.frame(atoken(asset), SEL["aRedeem"], ["uint256"], [a]):
                        with b.frame(pool, SEL["aRedeemUnderlying"],
                                     ["address", "address", "uint256", "uint256"], [asset, r, a, 0]) as i:
                            with b.frame(AAVE_CORE, SEL["transferToUser"], ["address", "address", "uint256"],
                                         [asset, r, a]):
                                b.transfer(asset, r, a)
                            b.log(pool, [c["aave_redeem"], asset, r], ["uint256", "uint256"],
                                  [a, 1_600_000_000])
                elif action == "Borrow":
                    with b.frame(pool, SEL["aBorrow"], ["address", "uint256", "uint256", "uint16"],
                                 [asset, a, 2, 0]) as i:
                        with b.frame(AAVE_CORE, SEL["transferToUser"], ["address", "address", "uint256"],
                                     [asset, r, a]):
                            b.transfer(asset, r, a)
                        b.log(pool, [c["aave_borrow"], asset, r, 0], ["uint256"] * 6,
                              [a, 2, 10**25, a // 100, 0, 1_600_000_000])
                else:
                    with b.frame(pool, SEL["aRepay"], ["address", "uint256", "address"], [asset, a, r]) as i:
                        with b.frame(AAVE_CORE, SEL["transferToReserve"], ["address", "address", "uint256"],
                                     [asset, r, a]):
                            b.transfer_from(asset, r, AAVE_CORE, a)
                        b.log(pool, [c["aave_repay"], asset, r, r], ["uint256"] * 4,
                              [a, a // 100, 0, 1_600_000_000])
            elif p == "bZx":
                it = itoken(asset)
                if action == "Deposit":
                    with b.frame(it, SEL["iMint"], ["address", "uint256"], [r, a]) as i:
                        b.transfer_from(asset, r, it, a)
                        b.log(it, [c["bzx_mint"], r], ["uint256"] * 3, [a * 5, a, 10**18])
                elif action == "Redeem":
                    with b.frame(it, SEL["iBurn"], ["address", "uint256"], [r, a * 5]) as i:
                        b.transfer(asset, r, a)
                        b.log(it, [c["bzx_burn"], r], ["uint256"] * 3, [a * 5, a, 10**18])
                elif action == "Borrow":
                    with b.frame(it, SEL["iBorrow"],
                                 ["uint256", "uint256", "uint256", "uint256", "address", "address", "bytes"],
                                 [a, 0, 2**32, a * 2, WETH, r, b""]) as i:
                        b.transfer(asset, r, a)
                        b.log(it, [c["bzx_borrow"], r], ["uint256", "uint256", "address", "address", "bool"],
                              [a, 10**17, WETH, asset, False])
                else:
                    loan_id = bytes.fromhex(_label(f"bzx:loan:{r}")[2:]).rjust(32, b"\0")
                    with b.frame(BZX_PROTOCOL, SEL["bzxPayback"],
                                 ["bytes32", "address", "address", "address", "uint256"],
                                 [loan_id, r, r, r, a]) as i:
                        b.transfer_from(asset, r, BZX_PROTOCOL, a)
                        b.log(BZX_PROTOCOL, [c["bzx_repay"], "0x" + loan_id.hex(), r],
                              ["address", "uint256", "bool"], [r, a, False])
            else:
                dink = {"Deposit": a, "Redeem": -a}.get(action, 0)
                dart = {"Borrow": a, "Repay": -a}.get(action, 0)
                ilk = bytes.fromhex(asset[2:])
                args = [ilk, r, r, r, dink, dart]
                types = ["bytes32", "address", "address", "address", "int256", "int256"]
                with b.frame(MAKER_VAT, SEL["frob"], types, args) as i:
                    calldata = b.calls[i].calldata
                    b.log(MAKER_VAT, [c["frob"], asset, r, r], ["bytes"], [calldata])
        self.prim("LendingBorrowing", p, i, r, action, asset)

    # margin, liquidation, anti-liquidation ---------------------------------------------

    def margin(self, step: MarginMint) -> None:
        b, c = self.b, self.c
        a = self.amount()
        selector = c["margin_selectors"][step.variant] if step.with_selector else SEL["burnToEther"]
        with_ether = step.variant < 2
        token = self.token()
        with self.acting(step.runner) as r:
            if with_ether:
                frame = b.frame(PTOKEN, selector, ["address", "uint256"], [r, 0], value=a)
            else:
                frame = b.frame(PTOKEN, selector, ["address", "address", "uint256"], [r, token, a])
            with frame as i:
                if not with_ether:
                    b.transfer_from(token, r, PTOKEN, a)
                with b.frame(BZX_PROTOCOL, SEL["accrueInterest"]):
                    b.balance_of(WETH, BZX_PROTOCOL)
                b.log(PTOKEN, [c["margin_event"], r], ["uint256"] * 3, [a * 3, a, 10**18])
        if step.with_selector:
            self.prim("MarginTrade", "bZx", i, r)

    def liquidate(self, step: Liquidate) -> None:
        b, c, rng = self.b, self.c, self.rng
        p = step.platform
        a, seized = self.amount(), self.amount()
        victim = rng.choice(RUNNER_POOL)
        with self.acting(step.runner) as r:
            if p == "Aave":
                pool = c["aave_pool"]
                debt, coll = self.token(), self.token()
                with b.frame(pool, SEL["liquidationCall"], ["address", "address", "address", "uint256", "bool"],
                             [coll, debt, victim, a, False]) as i:
                    with b.frame(AAVE_CORE, SEL["transferToReserve"], ["address", "address", "uint256"],
                                 [debt, r, a]):
                        b.transfer_from(debt, r, AAVE_CORE, a)
                    with b.frame(AAVE_CORE, SEL["transferToUser"], ["address", "address", "uint256"],
                                 [coll, r, seized]):
                        b.transfer(coll, r, seized)
                    b.log(pool, [c["aave_liq"], coll, debt, victim],
                          ["uint256", "uint256", "uint256", "address", "bool", "uint256"],
                          [a, seized, 0, r, False, 1_600_000_000])
            elif p == "Compound":
                debt = self.token()
                ct, coll = ctoken(debt), ctoken(self.token(exclude=(debt,)))
                with b.frame(ct, SEL["liquidateBorrow"], ["address", "uint256", "address"],
                             [victim, a, coll]) as i:
                    b.transfer_from(debt, r, ct, a)
                    b.log(ct, [c["c_liq"]], ["address", "address", "uint256", "address", "uint256"],
                          [r, victim, a, coll, seized])
            elif p == "dYdX":
                solo = c["solo"]
                held, owed = rng.sample(range(len(DYDX_MARKETS)), 2)
                words = [0, 0, held, owed] + [1, seized, 1, seized, 0, a, 0, 0,
                                              0, seized, 0, 0, 1, a, 0, 0]
                with b.frame(solo, SEL["operate"], ["uint256", "uint256"], [held, a]) as i:
                    b.log(solo, [c["log_operate"]], ["address"], [r])
                    b.transfer_from(DYDX_MARKETS[owed], r, solo, a)
                    b.log(solo, [c["dydx_liq"], r, victim], ["uint256"] * 20, words)
            else:
                with b.frame(OPYN_OTOKEN, SEL["opynLiquidate"], ["address", "uint256"], [victim, a]) as i:
                    b.transfer(ETH, r, seized)
                    b.log(OPYN_OTOKEN, [c["opyn_liq"]], ["uint256", "address", "address"], [seized, victim, r])
        self.prim("Liquidation", p, i, r)

    def saver(self, step: DefiSaverAction) -> None:
        b = self.b
        emitter = DEFI_SAVER if step.registered else FAKE_SAVER
        with self.acting(step.runner) as r:
            with b.frame(emitter, SEL["saverRepay"], ["address", "uint256"], [r, self.amount()]):
                b.balance_of(DAI, emitter)
                log = b.log(emitter, [DEFI_SAVER_EVENT, r], ["address", "uint256"], [r, self.amount()])
        if step.registered:
            self.t.saver_logs.append((emitter, log))


# -- labels ------------------------------------------------------------------------------

def _advanced(truth: _Truth) -> list[tuple[str, tuple]]:
    out: list[tuple[str, tuple]] = []
    runners: dict[str, int] = {}
    for p in truth.prims:
        if p.kind == "Exchange":
            runners[p.runner] = runners.get(p.runner, 0) + 1
    for runner, n in sorted(runners.items()):
        if n >= 2:
            out.append(("Arbitrage", (("runner", runner), ("trades", n))))
    for emitter, log in truth.saver_logs:
        out.append(("AntiLiquidation", (("emitter", emitter), ("logIndex", log))))

    lb = [p for p in truth.prims if p.kind == "LendingBorrowing"]

    def of(action):
        return [p for p in lb if p.action == action]

    seen = set()
    for r in of("Redeem"):
        for d in of("Deposit"):
            if r.platform == d.platform and r.asset != d.asset:
                seen.add(("CollateralSwap", (("platform", r.platform), ("oldCollateral", r.asset),
                                             ("newCollateral", d.asset))))
    flash_assets = {asset for _, _, asset in truth.loans}
    for r in of("Repay"):
        for bw in of("Borrow"):
            if r.platform == bw.platform and r.asset != bw.asset and r.asset in flash_assets:
                seen.add(("LoanSwap", (("platform", r.platform), ("oldDebtAsset", r.asset),
                                       ("newDebtAsset", bw.asset))))
    closed = {p.platform for p in of("Repay")} & {p.platform for p in of("Redeem")}
    for a in closed:
        for d in of("Deposit"):
            if d.platform != a:
                seen.add(("PlatformSwap", (("platformA", a), ("platformB", d.platform))))
    out.extend(sorted(seen))
    return out


def generate(scenario: Scenario) -> tuple[TransactionBundle, GroundTruth]:
    """Realize ``scenario`` as a bundle plus the labels its script implies."""
    script = apply_mutations(scenario.script)
    _check(script)
    rng = random.Random(scenario.seed)
    bot = scenario.bot or RUNNER_POOL[rng.randrange(len(RUNNER_POOL))]
    sender = _label(f"eoa:{scenario.seed}")
    gen = _Gen(rng, bot, sender)
    with gen.b.frame(bot, SEL["execute"]):
        gen.run(script)
    tx_hash = scenario.tx_hash()
    bundle = TransactionBundle(tx_hash, scenario.block_number, scenario.tx_index, sender,
                               tuple(gen.b.calls), tuple(gen.b.logs))
    truth = gen.t
    loans = tuple(sorted(((p, s) for p, s, _ in truth.loans), key=lambda x: (x[1].start, x[1].end, x[0])))
    if loans:
        prims = tuple(sorted(((p.kind, p.platform, p.span) for p in truth.prims),
                             key=lambda x: (x[2].start, x[2].end, x[0], x[1])))
        advanced = tuple(_advanced(truth))
    else:
        prims, advanced = (), ()
    return bundle, GroundTruth(tx_hash, loans, prims, advanced, scenario.family)


# -- genesis and registry sidecar ---------------------------------------------------------

def genesis_bundle(block_number: int = 11_999_999) -> TransactionBundle:
    """One transaction creating every UniswapV2 pair the generator trades on."""
    c = _constants()
    b = TraceBuilder(GENESIS_DEPLOYER)
    with b.frame(_label("genesis:helper"), SEL["execute"]):
        for n, (t0, t1) in enumerate(ALL_PAIRS, start=1):
            with b.frame(c["factory"], SEL["createPair"], ["address", "address"], [t0, t1]):
                b.log(c["factory"], [c["pair_created"], t0, t1], ["address", "uint256"],
                      [pair_address(t0, t1), n])
    tx = "0x" + hashlib.sha256(b"thunderlens synthetic genesis").hexdigest()
    return TransactionBundle(tx, block_number, 0, GENESIS_DEPLOYER, tuple(b.calls), tuple(b.logs))


def synth_registry_doc() -> dict:
    """Registry extension naming the synthetic bZx iTokens and DeFi Saver event."""
    return {
        "mode": "extend",
        "address_book": {
            "bzx_itokens": sorted(itoken(t) for t in TOKENS),
            "defi_saver_emitters": [DEFI_SAVER],
        },
        "patterns": [{
            "platform": "DeFiSaver", "category": "AntiLiquidation", "name": "DeFiSaver",
            "matcher_kind": "event_topic", "event_hash": DEFI_SAVER_EVENT,
            "emitter": ["@defi_saver_emitters"],
            "parameter_map": {"runner": "topic:1"},
        }],
    }


def synth_registry(base: PatternRegistry | None = None) -> PatternRegistry:
    return parse_registry(json.dumps(synth_registry_doc()), base or load_default())


# -- corpus -------------------------------------------------------------------------------

def _runner(rng, bot_share: float = 0.7) -> str | None:
    return None if rng.random() < bot_share else rng.choice(RUNNER_POOL)


def _swaps(rng, k: int) -> list:
    return [Swap(rng.choice(EXCHANGE_PLATFORMS), runner=_runner(rng)) for _ in range(k)]


def _any_loan(rng):
    kind = rng.choice(LOAN_STEPS)
    return kind()


def _fam_aave_arb(rng):
    return [AaveFlashLoan(), *_swaps(rng, rng.randint(2, 3))]


def _fam_dydx_arb(rng):
    return [DydxFlashLoan(with_call=rng.random() < 0.8), *_swaps(rng, rng.randint(2, 3))]


def _fam_univ2(rng):
    return [UniV2FlashSwap(), *_swaps(rng, rng.randint(0, 2))]


def _fam_bzx(rng):
    lb = rng.choice((Deposit, Borrow, Redeem))
    return [BzxFlashBorrow(), lb(rng.choice(LB_PLATFORMS)), *_swaps(rng, rng.randint(0, 1))]


def _fam_liquidation(rng):
    return [_any_loan(rng), Liquidate(rng.choice(LIQUIDATION_PLATFORMS), runner=_runner(rng)),
            *_swaps(rng, rng.randint(0, 1))]


def _fam_margin(rng):
    return [rng.choice((AaveFlashLoan, DydxFlashLoan))(), MarginMint(variant=rng.randrange(4)),
            *_swaps(rng, rng.randint(0, 1))]


def _fam_anti_liq(rng):
    return [_any_loan(rng), DefiSaverAction()]


def _collateral_assets(rng, platform):
    pool = ILKS if platform == "MakerDAO" else TOKENS
    return rng.sample(pool, 2)


def _fam_collateral_swap(rng):
    platform = rng.choice(("MakerDAO", "MakerDAO", "Compound", "Aave"))
    old, new = _collateral_assets(rng, platform)
    return [_any_loan(rng), Redeem(platform, old), Deposit(platform, new)]


def _fam_loan_swap(rng):
    platform = rng.choice(("Compound", "Compound", "Aave", "bZx"))
    old = rng.choice(DYDX_MARKETS)
    new = rng.choice([t for t in TOKENS if t != old])
    if rng.random() < 0.5:
        loan = AaveFlashLoan(asset=old)
    else:
        loan = DydxFlashLoan(market=DYDX_MARKETS.index(old))
    return [loan, Repay(platform, old), Borrow(platform, new)]


def _fam_platform_swap(rng):
    a, b = rng.sample(("Compound", "Aave", "MakerDAO", "bZx"), 2)
    debt = rng.choice(ILKS) if a == "MakerDAO" else rng.choice(TOKENS)
    coll_a = rng.choice(ILKS) if a == "MakerDAO" else rng.choice(TOKENS)
    coll_b = rng.choice(ILKS) if b == "MakerDAO" else rng.choice(TOKENS)
    return [_any_loan(rng), Repay(a, debt), Redeem(a, coll_a), Deposit(b, coll_b)]


def _fam_nested(rng):
    outer, inner = (AaveFlashLoan(), DydxFlashLoan()) if rng.random() < 0.5 else (DydxFlashLoan(), AaveFlashLoan())
    return [outer, *_swaps(rng, 1), inner, *_swaps(rng, rng.randint(1, 2))]


def _fam_no_loan(rng):
    steps = _swaps(rng, rng.randint(1, 3))
    if rng.random() < 0.5:
        steps.append(rng.choice((Deposit, Borrow))(rng.choice(LB_PLATFORMS)))
    return steps


def _mutated(family, mutation):
    def build(rng):
        return [*family(rng), Mutate(0, mutation)]
    return build


def _fam_saver_wrong(rng):
    return [_any_loan(rng), DefiSaverAction(), Mutate(1, "wrong_emitter")]


def _fam_margin_no_selector(rng):
    return [AaveFlashLoan(), MarginMint(variant=rng.randrange(4)), Mutate(1, "no_selector")]


FAMILIES: dict[str, tuple[float, Callable]] = {
    "aave_arbitrage": (0.08, _fam_aave_arb),
    "dydx_arbitrage": (0.08, _fam_dydx_arb),
    "univ2_flash_swap": (0.07, _fam_univ2),
    "bzx_flash_borrow": (0.07, _fam_bzx),
    "liquidation": (0.07, _fam_liquidation),
    "margin_trade": (0.06, _fam_margin),
    "anti_liquidation": (0.07, _fam_anti_liq),
    "collateral_swap": (0.07, _fam_collateral_swap),
    "loan_swap": (0.07, _fam_loan_swap),
    "platform_swap": (0.07, _fam_platform_swap),
    "nested_loans": (0.05, _fam_nested),
    "mut_aave_wrong_emitter": (0.02, _mutated(_fam_aave_arb, "wrong_emitter")),
    "mut_bzx_wrong_selector": (0.02, _mutated(_fam_bzx, "wrong_selector")),
    "mut_bzx_wrong_callee": (0.02, _mutated(_fam_bzx, "wrong_callee")),
    "mut_dydx_broken_order": (0.02, _mutated(_fam_dydx_arb, "broken_order")),
    "mut_dydx_wrong_emitter": (0.02, _mutated(_fam_dydx_arb, "wrong_emitter")),
    "mut_univ2_empty_data": (0.02, _mutated(_fam_univ2, "empty_data")),
    "mut_univ2_payback_non_pair": (0.02, _mutated(_fam_univ2, "payback_non_pair")),
    "mut_margin_no_selector": (0.02, _fam_margin_no_selector),
    "mut_saver_wrong_emitter": (0.02, _fam_saver_wrong),
    "no_loan": (0.06, _fam_no_loan),
}


def scenario_at(seed: int, index: int) -> Scenario:
    """The ``index``-th scenario of the corpus for ``seed``."""
    rng = random.Random(f"{seed}:{index}")
    names = list(FAMILIES)
    family = rng.choices(names, weights=[FAMILIES[n][0] for n in names])[0]
    script = FAMILIES[family][1](rng)
    sub_seed = int.from_bytes(hashlib.sha256(f"{seed}:{index}".encode()).digest()[:8], "big")
    return Scenario(sub_seed, tuple(script), 12_000_000 + index // 8, index % 8 + 1, family=family)


def negative_sibling(scenario: Scenario) -> Scenario | None:
    """Same scenario with one mutation that turns its first loan (or saver/margin step) negative."""
    script = apply_mutations(scenario.script)
    options = {
        AaveFlashLoan: "wrong_emitter", DydxFlashLoan: "broken_order",
        UniV2FlashSwap: "payback_non_pair", BzxFlashBorrow: "wrong_callee",
    }
    for pos, step in enumerate(script):
        mutation = options.get(type(step))
        if mutation is None:
            continue
        if isinstance(step, AaveFlashLoan) and not step.genuine_emitter:
            continue
        if isinstance(step, DydxFlashLoan) and not (step.ordered and step.genuine_emitter):
            continue
        if isinstance(step, UniV2FlashSwap) and (step.empty_data or not step.payback_to_pair):
            continue
        if isinstance(step, BzxFlashBorrow) and not (step.on_itoken and step.genuine_selector):
            continue
        return replace(scenario, script=(*script, Mutate(pos, mutation)), family=scenario.family + "/negative")
    return None


def generate_corpus(n: int, seed: int) -> tuple[Corpus, list[GroundTruth]]:
    """``n`` scenarios plus, when ``n > 0``, the pair-creation genesis transaction.

    Ground truths come back in corpus order; the genesis entry is all-negative.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return Corpus([]), []
    genesis = genesis_bundle()
    bundles = [genesis]
    truths = [GroundTruth(genesis.tx_hash, family="genesis")]
    for i in range(n):
        bundle, truth = generate(scenario_at(seed, i))
        bundles.append(bundle)
        truths.append(truth)
    corpus = Corpus(bundles)
    order = {b.tx_hash: k for k, b in enumerate(corpus)}
    truths.sort(key=lambda t: order[t.tx_hash])
    return corpus, truths


def write_corpus(out_dir, n: int, seed: int) -> tuple[Corpus, list[GroundTruth]]:
    """Write ``fixtures/``, ``ground_truth.jsonl`` and ``registry.json`` under ``out_dir``."""
    out = Path(out_dir)
    fixtures = out / "fixtures"
    fixtures.mkdir(parents=True, exist_ok=True)
    corpus, truths = generate_corpus(n, seed)
    for bundle in corpus:
        write_fixture(bundle, fixtures)
    with open(out / "ground_truth.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for t in truths:
            fh.write(json.dumps(t.to_json(), sort_keys=True) + "\n")
    (out / "registry.json").write_text(json.dumps(synth_registry_doc(), indent=1, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return corpus, truths


def read_truths(path) -> list[GroundTruth]:
    with open(path, encoding="utf-8") as fh:
        return [GroundTruth.from_json(json.loads(line)) for line in fh if line.strip()]


# -- scoring ------------------------------------------------------------------------------

@dataclass
class Score:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return 1.0 if self.tp + self.fp == 0 else self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        return 1.0 if self.tp + self.fn == 0 else self.tp / (self.tp + self.fn)


def _tally(scores: dict, group: str, expected: Iterable, found: Iterable) -> None:
    exp: dict = {}
    got: dict = {}
    for item in expected:
        exp[item] = exp.get(item, 0) + 1
    for item in found:
        got[item] = got.get(item, 0) + 1
    for item in set(exp) | set(got):
        s = scores.setdefault((group, item[0]), Score())
        e, g = exp.get(item, 0), got.get(item, 0)
        s.tp += min(e, g)
        s.fp += max(0, g - e)
        s.fn += max(0, e - g)


def score(results, truths: Iterable[GroundTruth]) -> dict[tuple[str, str], Score]:
    """Compare pipeline results with labels, keyed by (``loan``|``primitive``|``advanced``, name)."""
    loans: dict[str, list] = {}
    prims: dict[str, list] = {}
    adv: dict[str, list] = {}
    for r in results.flashloans:
        loans.setdefault(r.tx_hash, []).append((r.provider, r.span.start, r.span.end))
    for p in results.primitives:
        prims.setdefault(p.tx_hash, []).append((p.kind, p.platform, p.span.start, p.span.end))
    for a in results.advanced:
        adv.setdefault(a.tx_hash, []).append((a.kind, json.dumps(dict(a.details), sort_keys=True)))
    scores: dict = {}
    known = set()
    for t in truths:
        known.add(t.tx_hash)
        _tally(scores, "loan", [(p, s.start, s.end) for p, s in t.loans], loans.get(t.tx_hash, []))
        _tally(scores, "primitive", [(k, p, s.start, s.end) for k, p, s in t.primitives],
               prims.get(t.tx_hash, []))
        _tally(scores, "advanced", [(k, json.dumps(dict(d), sort_keys=True)) for k, d in t.advanced],
               adv.get(t.tx_hash, []))
    for tx in set(loans) - known:
        _tally(scores, "loan", [], loans[tx])
    for tx in set(prims) - known:
        _tally(scores, "primitive", [], prims[tx])
    for tx in set(adv) - known:
        _tally(scores, "advanced", [], adv[tx])
    return scores


__all__ = [
    "AaveFlashLoan", "Borrow", "BzxFlashBorrow", "DefiSaverAction", "Deposit", "DydxFlashLoan",
    "FAMILIES", "GenerationError", "GroundTruth", "Liquidate", "MarginMint", "Mutate", "Redeem",
    "Repay", "Scenario", "Score", "Swap", "TraceBuilder", "UniV2FlashSwap", "apply_mutations",
    "generate", "generate_corpus", "genesis_bundle", "negative_sibling", "read_truths", "scenario_at",
    "score", "synth_registry", "synth_registry_doc", "write_corpus",
]
