"""Rebuild ``bzx_hack.json``, a structural reconstruction of the Feb 2020 bZx attack.

Protocol contracts use their public mainnet addresses; the attacker EOA and
contract are placeholders. Frame indexes of every labelled step match the
published case study, and filler calls (balance reads, comptroller and
oracle hooks) pad the tree to those positions.

Usage: python tests/golden/build_bzx_hack.py [out.json]
"""

from __future__ import annotations

import sys
from pathlib import Path

from thunderlens.ingestion import dumps_bundle
from thunderlens.model import ETH, TransactionBundle
from thunderlens.registry import load_default
from thunderlens.synth import TraceBuilder

TX_HASH = "0xb5c8bd9430b6cc87a0e2fe110ece6bf527fa4f170a4bc8cd032f768fc5219838"
BLOCK = 9484688
TX_INDEX = 29

ATTACKER = "0x000000000000000000000000000000000000a77a"
CONTRACT = "0x000000000000000000000000000000000000c0de"
SOLO = "0x1e0447b19bb6ecfdae1e4ae1694b0c3659614e4e"
WETH = "0xc02aaa39b223fe8d0a0e5c4f27ead9083c756cc2"
WBTC = "0x2260fac5e5542a773aa44fbcfedf7c193bc2c599"
CETH = "0x4ddc2d193948926d02f9b1fe9e1daa0718270ed5"
CWBTC = "0xc11b1268c1a384e55c48c2391d8d480264a3a7f4"
COMPTROLLER = "0x3d9819210a31b4961b30ef54be2aed79b9c9cd3b"
PRICE_ORACLE = "0x1d8aedc9e924730dd3f9641cdb4d1b92b848b4bd"
PTOKEN = "0xb0200b0677dd825bb32b93d055ebb9dc3521db9d"
BZX = "0x1cf226e9413addaf22412a2e182f9c0de44af002"
KYBER_PROXY = "0x818e6fecd516ecc3849daf6845e3ec868087b755"
KYBER_NETWORK = "0x65bf64ff5f51272f729bdcd7acfb00677ced86cd"
UNISWAP_RESERVE = "0x31e085afd48a1d6e51cc193153d625e8f0514c7f"
UNI_WBTC = "0x4d2f5cfba55ae412221182d8475bc85799a5644b"

E18 = 10**18
LOAN = 10_000 * E18
ETH_COLLATERAL = 5_500 * E18
WBTC_BORROWED = 112 * 10**8
MARGIN_ETH = 1_300 * E18
PUMP_ETH = 5_637 * E18
PUMP_WBTC = 5_134_000_000
DUMP_ETH = 6_871 * E18

BALANCE_OF = "0x70a08231"
SIG = {
    "execute": "0x61461954",
    "operate": "0xa67a6a45",
    "callFunction": "0x8b418713",
    "withdraw": "0x2e1a7d4d",
    "deposit": "0xd0e30db0",
    "mint": "0x1249c58b",
    "mintAllowed": "0x4ef4c3e1",
    "enterMarkets": "0xc2998238",
    "borrow": "0xc5ebeaec",
    "borrowAllowed": "0xda3d454c",
    "getUnderlyingPrice": "0xfc57d4df",
    "accrueInterest": "0xa6afed95",
    "marginTrade": "0x6f6c5f8b",
    "tradeWithHint": "0x29589f61",
    "reserveTrade": "0x6cf69811",
    "ethToTokenSwapInput": "0xf39b5b9b",
    "tokenToEthSwapInput": "0x95e3c50b",
    "approve": "0x095ea7b3",
}


def _pad(b: TraceBuilder, target: int, holder: str, token: str = WETH) -> None:
    """Add balance reads in the current frame until the next index is ``target``."""
    while len(b.calls) < target:
        b.call(token, BALANCE_OF, ["address"], [holder])


def build() -> TransactionBundle:
    reg = load_default()
    chain = {s.name: s.event_hash for s in reg.named("dYdX", "operate").chain}
    c_mint = reg.named("Compound", "Mint").event_hash
    c_borrow = reg.named("Compound", "Borrow").event_hash
    margin_mint = reg.find("bZx", "MarginTrade")[0]
    token_purchase = reg.named("UniswapV1", "TokenPurchase").event_hash
    eth_purchase = reg.named("UniswapV1", "ETHPurchase").event_hash
    update = ["bool", "uint256", "bool", "uint256"]

    b = TraceBuilder(ATTACKER)
    with b.frame(CONTRACT, SIG["execute"]):                                       # 0
        with b.frame(SOLO, SIG["operate"], ["uint256", "uint256"], [0, LOAN]):     # 1
            b.log(SOLO, [chain["LogOperate"]], ["address"], [CONTRACT])
            b.transfer(WETH, CONTRACT, LOAN)                                      # 2
            b.log(SOLO, [chain["LogWithdraw"], CONTRACT], ["uint256", "uint256", *update, "address"],
                  [0, 0, False, LOAN, False, LOAN, CONTRACT])
            with b.frame(CONTRACT, SIG["callFunction"], ["address", "(address,uint256)", "bytes"],
                         [SOLO, (CONTRACT, 0), b"\x01"]):                          # 3
                with b.frame(WETH, SIG["withdraw"], ["uint256"], [LOAN]):          # 4
                    b.transfer(ETH, CONTRACT, LOAN)                               # 5
                _pad(b, 21, CONTRACT)                                             # 6..20
                with b.frame(CETH, SIG["mint"], value=ETH_COLLATERAL):            # 21
                    with b.frame(COMPTROLLER, SIG["mintAllowed"], ["address", "address", "uint256"],
                                 [CETH, CONTRACT, ETH_COLLATERAL]):               # 22
                        _pad(b, 27, CETH)                                         # 23..26
                    _pad(b, 31, CETH)                                             # 27..30
                    b.log(CETH, [c_mint], ["address", "uint256", "uint256"],
                          [CONTRACT, ETH_COLLATERAL, ETH_COLLATERAL * 50])
                with b.frame(COMPTROLLER, SIG["enterMarkets"], ["address[]"], [[CETH]]):   # 31
                    _pad(b, 33, COMPTROLLER)                                      # 32
                with b.frame(CWBTC, SIG["borrow"], ["uint256"], [WBTC_BORROWED]):  # 33
                    with b.frame(COMPTROLLER, SIG["borrowAllowed"], ["address", "address", "uint256"],
                                 [CWBTC, CONTRACT, WBTC_BORROWED]):               # 34
                        for _ in range(4):
                            b.call(PRICE_ORACLE, SIG["getUnderlyingPrice"], ["address"], [CETH])  # 35..38
                    _pad(b, 45, CWBTC, WBTC)                                      # 39..44
                    b.transfer(WBTC, CONTRACT, WBTC_BORROWED)                     # 45
                    _pad(b, 47, CWBTC, WBTC)                                      # 46
                    b.log(CWBTC, [c_borrow], ["address", "uint256", "uint256", "uint256"],
                          [CONTRACT, WBTC_BORROWED, WBTC_BORROWED, WBTC_BORROWED * 3])
                with b.frame(PTOKEN, margin_mint.selector, ["address", "uint256"], [CONTRACT, 0],
                             value=MARGIN_ETH):                                  # 47
                    with b.frame(BZX, SIG["marginTrade"], ["uint256"], [MARGIN_ETH]):  # 48
                        _pad(b, 156, BZX)                                         # 49..155
                        with b.frame(KYBER_PROXY, SIG["tradeWithHint"], ["uint256"], [PUMP_ETH],
                                     value=PUMP_ETH):                             # 156
                            with b.frame(KYBER_NETWORK, SIG["reserveTrade"], ["uint256"], [PUMP_ETH],
                                         value=PUMP_ETH):                         # 157
                                with b.frame(UNI_WBTC, SIG["ethToTokenSwapInput"], ["uint256", "uint256"],
                                             [1, 2**32], value=PUMP_ETH):         # 158
                                    b.balance_of(WBTC, UNI_WBTC)                  # 159
                                    b.transfer(WBTC, UNISWAP_RESERVE, PUMP_WBTC)  # 160
                                    b.balance_of(WBTC, UNI_WBTC)                  # 161
                                    b.log(UNI_WBTC, [token_purchase, UNISWAP_RESERVE, PUMP_ETH, PUMP_WBTC])
                                b.transfer(WBTC, BZX, PUMP_WBTC)                  # 162
                            b.balance_of(WBTC, KYBER_PROXY)                       # 163
                        _pad(b, 174, BZX, WBTC)                                   # 164..173
                    b.balance_of(WETH, PTOKEN)                                    # 174
                    b.log(PTOKEN, [margin_mint.event_hash, CONTRACT], ["uint256"] * 3,
                          [MARGIN_ETH * 5, MARGIN_ETH, 10**18])
                b.call(WBTC, SIG["approve"], ["address", "uint256"], [UNI_WBTC, WBTC_BORROWED])  # 175
                with b.frame(UNI_WBTC, SIG["tokenToEthSwapInput"], ["uint256"] * 3,
                             [WBTC_BORROWED, 1, 2**32]):                          # 176
                    b.balance_of(WBTC, UNI_WBTC)                                  # 177
                    b.transfer(ETH, CONTRACT, DUMP_ETH)                           # 178
                    b.transfer_from(WBTC, CONTRACT, UNI_WBTC, WBTC_BORROWED)      # 179
                    b.balance_of(WBTC, UNI_WBTC)                                  # 180
                    b.log(UNI_WBTC, [eth_purchase, CONTRACT, WBTC_BORROWED, DUMP_ETH])
                b.call(WETH, SIG["deposit"], value=LOAN + 2)                     # 181
                _pad(b, 188, CONTRACT)                                            # 182..187
            b.log(SOLO, [chain["LogCall"], CONTRACT], ["uint256", "address"], [0, CONTRACT])
            b.transfer_from(WETH, CONTRACT, SOLO, LOAN + 2)                       # 188
            b.log(SOLO, [chain["LogDeposit"], CONTRACT], ["uint256", "uint256", *update, "address"],
                  [0, 0, True, LOAN + 2, False, 0, CONTRACT])
        b.transfer(ETH, ATTACKER, 71 * E18)                                      # 189
    return TransactionBundle(TX_HASH, BLOCK, TX_INDEX, ATTACKER, tuple(b.calls), tuple(b.logs))


def main(argv: list[str]) -> int:
    out = Path(argv[1]) if len(argv) > 1 else Path(__file__).with_name("bzx_hack.json")
    out.write_text(dumps_bundle(build()), encoding="utf-8")
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv))
