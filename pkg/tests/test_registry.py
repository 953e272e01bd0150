from __future__ import annotations

import json

import pytest
from eth_hash.auto import keccak
from hypothesis import given, strategies as st

from thunderlens.registry import (
    DuplicatePatternError, RegistryError, load_default, load_from_file, parse_registry, serialize,
)

# Literal values from the published catalog, one entry per row.
CATALOG_SELECTORS = {
    ("Aave", "FlashLoan", "FlashLoan"): "0x5cffe9de",
    ("bZx", "FlashLoan", "flashBorrowToken"): "0x66fa576f",
    ("UniswapV2", "FlashLoan", "swap"): "0x022c0d9f",
    ("OneInch", "Exchange", "Swapped"): "0xf88309d7",
    ("MakerDAO", "LendingBorrowing", "frob"): "0x76088703",
}
CATALOG_EVENTS = {
    ("Aave", "FlashLoan"): "0x5b8f46461c1dd69fb968f1a003acee221ea3e19540e350233b612ddb43433b55",
    ("UniswapV2", "PairCreated"): "0x0d3648bd0f6ba80134a33ba9275ac585d9d315f0ad8355cddefde31afa28d0e9",
    ("UniswapV2", "swap"): "0xd78ad95fa46c994b6551d0da85fc275fe613ce37657fb8d5e3d130840159d822",
    ("UniswapV1", "NewExchange"): "0x9d42cb017eb05bd8944ab536a8b35bc68085931dd5f4356489801453923953f9",
    ("UniswapV1", "TokenPurchase"): "0xcd60aa75dea3072fbc07ae6d7d856b5dc5f4eee88854f5b4abf7b680ef8bc50f",
    ("UniswapV1", "ETHPurchase"): "0x7f4091b46c33e918a0f3aa42307641d17bb67029427a5369e54b353984238705",
    ("Balancer", "LOG_SWAP"): "0x908fb5ee8f16c6bc9bc3690973819f32a4d4b10188134543c88706e0e1d43378",
    ("OneInch", "Swapped"): "0xe2cee3f6836059820b673943853afebd9b3026125dab0d774284e6f28a4855be",
    ("Synthetix", "Exchange"): "0xdb1741ffc6844b04a9284bb6337fb0ccfe543a493ef0ac8e725242201e93d4bd",
    ("CurveFi", "TokenExchange"): "0x8b3e96f2b889fa771c53c981b40daf005f63f637f1869f707052d15a3dd97140",
    ("Kyber", "ExecuteTrade"): "0x1849bd6a030a1bca28b83437fd3de96f3d27a5d172fa7e9c78e7b61468928a39",
    ("Kyber", "KyberTrade"): "0xd30ca399cb43507ecec6a629a35cf45eb98cda550c27696dcb0d8c4a3873ce6c",
    ("UniswapV2", "Swap"): "0xd78ad95fa46c994b6551d0da85fc275fe613ce37657fb8d5e3d130840159d822",
    ("Aave", "Borrow"): "0x1e77446728e5558aa1b7e81e0cdab9cc1b075ba893b740600c76a315c2caa553",
    ("Aave", "Repay"): "0xb718f0b14f03d8c3adf35b15e3da52421b042ac879e5a689011a8b1e0036773d",
    ("Aave", "Deposit"): "0xc12c57b1c73a2c3a2ea4613e9476abb3d8d146857aab7329e24243fb59710c82",
    ("Aave", "RedeemUnderlying"): "0x9c4ed599cd8555b9c1e8cd7643240d7d71eb76b792948c49fcb4d411f7b6b3c6",
    ("bZx", "Borrow"): "0x86e15dd78cd784ab7788bcf5b96b9395e86030e048e5faedcfe752c700f6157e",
    ("bZx", "Repay"): "0x85dfc0033a3e5b3b9b3151bd779c1f9b855d66b83ff5bb79283b68d82e8e5b73",
    ("bZx", "Mint"): "0xb4c03061fb5b7fed76389d5af8f2e0ddb09f8c70d1333abbb62582835e10accb",
    ("bZx", "Burn"): "0x743033787f4738ff4d6a7225ce2bd0977ee5f86b91a902a58f5e4d0b297b4644",
    ("Compound", "Borrow"): "0x13ed6866d4e1ee6da46f845c46d7e54120883d75c5ea9a2dacc1c4ca8984ab80",
    ("Compound", "RepayBorrow"): "0x1a2a22cb034d26d1854bdc6666a5b91fe25efbbb5dcad3b0355478d6f5c362a1",
    ("Compound", "Mint"): "0x4c209b5fc8ad50758f13e2e1088ba56a560dff690a1c6fef26394f4c03821c4f",
    ("Compound", "Redeem"): "0xe5b754fb1abb7f01b499791d0b820ae3b6af3424ac1c59768edb53f4ec31a929",
    ("MakerDAO", "frob"): "0x7608870300000000000000000000000000000000000000000000000000000000",
    ("Aave", "LiquidationCall"): "0x56864757fd5b1fc9f38f5f3a981cd8ae512ce41b902cf73fc506ee369c6bc237",
    ("Compound", "LiquidateBorrow"): "0x196893d3172b176a2d1d257008db8d8d97c8d19c485b21a653c309df6503262f",
    ("dYdX", "LogLiquidate"): "0x1b9e65b359b871d74b1af1fc8b13b11635bfb097c4631b091eb762fda7e67dc7",
    ("Opyn", "Liquidate"): "0xcab8e1abb9f8235c6db895cf185336dc9461aecf477b98c1be83687ee549e66a",
}
DYDX_CHAIN = {
    "LogOperate": "0x91b01baeee3a24b590d112613814d86801005c7ef9353e7fc1eaeaf33ccf83b0",
    "LogWithdraw": "0xbc83c08f0b269b1726990c8348ffdf1ae1696244a14868d766e542a2f18cd7d4",
    "LogCall": "0xab38cdc4a831ebe6542bf277d36b65dbc5c66a4d03ec6cf56ac38de05dc30098",
    "LogDeposit": "0x2bad8bc95088af2c247b30fa2b2e6a0886f88625e0945cd3051008e0e270198f",
}
MARGIN_SELECTORS = {"0x4e07008d", "0xd24f22a9", "0x39039497", "0xf5acf904"}
MARGIN_MINT = "0x458f5fa412d0f69b08dd84872b0215675cc67bc1d5b6fd93300a1c3878b86196"


def test_catalog_event_hashes_pinned():
    reg = load_default()
    for (platform, name), expected in CATALOG_EVENTS.items():
        assert reg.named(platform, name).event_hash == expected, (platform, name)


def test_catalog_selectors_pinned():
    reg = load_default()
    for (platform, category, name), expected in CATALOG_SELECTORS.items():
        pattern = reg.named(platform, name)
        assert pattern.category == category
        assert pattern.selector == expected, (platform, name)


def test_dydx_chain_pinned_with_optional_logcall():
    (pattern,) = load_default().find("dYdX", "FlashLoan")
    assert pattern.matcher_kind == "ordered_event_chain"
    order = ["LogOperate", "LogCall", "LogWithdraw", "LogDeposit"]
    assert [(s.name, s.event_hash) for s in pattern.chain] == [(n, DYDX_CHAIN[n]) for n in order]
    assert [s.optional for s in pattern.chain] == [False, True, False, False]


def test_margin_trade_rows_pinned():
    rows = load_default().find("bZx", "MarginTrade")
    assert {p.selector for p in rows} == MARGIN_SELECTORS
    assert {p.event_hash for p in rows} == {MARGIN_MINT}


# Independent oracle: hash the canonical signatures and compare.
SIGNATURES = {
    "0x5cffe9de": "flashLoan(address,address,uint256,bytes)",
    "0x66fa576f": "flashBorrowToken(uint256,address,address,string,bytes)",
    "0x022c0d9f": "swap(uint256,uint256,address,bytes)",
    "0x76088703": "frob(bytes32,address,address,address,int256,int256)",
}
EVENT_SIGNATURES = {
    ("Aave", "FlashLoan"): "FlashLoan(address,address,uint256,uint256,uint256,uint256)",
    ("UniswapV2", "PairCreated"): "PairCreated(address,address,address,uint256)",
    ("UniswapV2", "Swap"): "Swap(address,uint256,uint256,uint256,uint256,address)",
    ("Compound", "Borrow"): "Borrow(address,uint256,uint256,uint256)",
    ("Compound", "Mint"): "Mint(address,uint256,uint256)",
    ("Compound", "Redeem"): "Redeem(address,uint256,uint256)",
    ("Compound", "RepayBorrow"): "RepayBorrow(address,address,uint256,uint256,uint256)",
    ("UniswapV1", "TokenPurchase"): "TokenPurchase(address,uint256,uint256)",
    ("UniswapV1", "ETHPurchase"): "EthPurchase(address,uint256,uint256)",
}


def test_selectors_match_keccak_of_signatures():
    for selector, sig in SIGNATURES.items():
        assert "0x" + keccak(sig.encode())[:4].hex() == selector, sig


def test_event_hashes_match_keccak_of_signatures():
    reg = load_default()
    for (platform, name), sig in EVENT_SIGNATURES.items():
        assert reg.named(platform, name).event_hash == "0x" + keccak(sig.encode()).hex(), sig


def test_find_examples():
    reg = load_default()
    assert reg.find("Aave", "FlashLoan")[0].event_hash == CATALOG_EVENTS[("Aave", "FlashLoan")]
    assert reg.find("Compound", "Liquidation")[0].event_hash == CATALOG_EVENTS[("Compound", "LiquidateBorrow")]
    assert {p.platform for p in reg.patterns if p.category == "FlashLoan"} == {"Aave", "bZx", "UniswapV2", "dYdX"}
    assert [p.name for p in reg.find("bZx", "LendingBorrowing")] == ["Borrow", "Repay", "Mint", "Burn"]
    assert reg.find("Aave", "MarginTrade") == []


def test_default_address_book():
    book = load_default().address_book
    assert book.aave_lending_pool == "0x398ec7346dcd622edc5ae82352f02be94c62d119"
    assert book.uniswap_v2_factory == "0x5c69bee701ef814a2b6a3edd4b1652cb9cc5aa6f"
    assert book.bzx_itokens == frozenset() and book.defi_saver_emitters == frozenset()


def test_defisaver_slot_is_placeholder_until_configured(tmp_path):
    assert not load_default().named("DeFiSaver", "DeFiSaver").active
    path = tmp_path / "saver.json"
    path.write_text(json.dumps({"mode": "extend", "patterns": [{
        "platform": "DeFiSaver", "category": "AntiLiquidation", "name": "RepayEvent",
        "matcher_kind": "event_topic", "event_hash": "0x" + "ab" * 32,
        "emitter": ["@defi_saver_emitters"], "parameter_map": {"runner": "topic:1"},
    }], "address_book": {"defi_saver_emitters": ["0x" + "12" * 20]}}))
    reg = load_from_file(path)
    (pattern,) = reg.find("DeFiSaver", "AntiLiquidation")
    assert pattern.active and pattern.event_hash == "0x" + "ab" * 32
    assert len(reg.patterns) == len(load_default().patterns)


def test_short_selector_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"patterns": [{
        "platform": "custom:x", "category": "Exchange", "name": "x",
        "matcher_kind": "function_selector", "selector": "0xabcdef"}]}))
    with pytest.raises(RegistryError, match="selector must be 4 bytes"):
        load_from_file(path)


def test_replace_mode_drops_defaults(tmp_path):
    doc = load_default().to_json()
    doc["patterns"] = [p for p in doc["patterns"] if p["platform"] == "dYdX"]
    path = tmp_path / "dydx.json"
    path.write_text(json.dumps(doc))
    reg = load_from_file(path)
    assert reg.find("Aave", "FlashLoan") == []
    assert len(reg.find("dYdX", "FlashLoan")) == 1


def test_duplicate_pattern_rejected():
    aave = load_default().named("Aave", "Borrow").to_json()
    with pytest.raises(DuplicatePatternError):
        parse_registry(json.dumps({"patterns": [aave]}), base=load_default())


def test_unknown_composite_rejected():
    with pytest.raises(RegistryError, match="composite"):
        parse_registry(json.dumps({"patterns": [{
            "platform": "custom:x", "category": "Exchange", "name": "x",
            "matcher_kind": "composite", "composite": "no_such_detector", "selector": "0x12345678"}]}))


def test_chain_rules():
    def chain(steps):
        return json.dumps({"patterns": [{
            "platform": "custom:x", "category": "FlashLoan", "name": "x",
            "matcher_kind": "ordered_event_chain", "chain": steps}]})
    step = {"name": "a", "event_hash": "0x" + "01" * 32}
    with pytest.raises(RegistryError):
        parse_registry(chain([step]))
    with pytest.raises(RegistryError):
        parse_registry(chain([dict(step, optional=True), dict(step, name="b", optional=True), step]))


def test_malformed_json_names_line():
    with pytest.raises(RegistryError, match="line 2"):
        parse_registry('{\n  "mode": ,\n}')


def test_round_trip_and_determinism(tmp_path):
    reg = load_default()
    assert load_default() == reg
    path = tmp_path / "reg.json"
    path.write_text(serialize(reg))
    again = load_from_file(path)
    assert again == reg
    assert serialize(again) == serialize(reg)
    assert again.checksum() == reg.checksum()


def test_known_pairs_grow_monotonically_and_skip_checksum():
    reg = load_default()
    before = reg.checksum()
    reg.address_book.add_pair("0x" + "01" * 20, "0x" + "02" * 20, "0x" + "03" * 20)
    reg.address_book.add_pair("0x" + "01" * 20, "0x" + "04" * 20, "0x" + "05" * 20)
    assert reg.address_book.known_pairs == {"0x" + "01" * 20: ("0x" + "02" * 20, "0x" + "03" * 20)}
    assert reg.checksum() == before


@given(st.permutations(range(len(load_default().patterns))))
def test_registry_serialization_round_trips_under_reordering(order):
    base = load_default()
    doc = base.to_json()
    doc["patterns"] = [doc["patterns"][i] for i in order]
    text = json.dumps(doc)
    reg = parse_registry(text)
    assert parse_registry(serialize(reg)) == reg
    assert sorted(serialize(reg)) == sorted(serialize(parse_registry(serialize(reg))))
