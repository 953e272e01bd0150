"""Result records emitted by the three analysis phases, with JSON codecs."""

from __future__ import annotations

from dataclasses import dataclass

from .model import ModelError, Span

PRIMITIVE_KINDS = ("Exchange", "LendingBorrowing", "MarginTrade", "Liquidation")
ADVANCED_KINDS = ("Arbitrage", "AntiLiquidation", "CollateralSwap", "LoanSwap", "PlatformSwap")
SWAP_KINDS = ("CollateralSwap", "LoanSwap", "PlatformSwap")

# Required (True) / forbidden (False) fields per primitive kind; others optional.
_PRESENCE = {
    "Exchange": {"receiver": True, "asset_in": True, "asset_out": True, "amount_in": True},
    "LendingBorrowing": {"receiver": True, "asset_in": True, "asset_out": True, "amount_in": True},
    "MarginTrade": {"receiver": False, "asset_in": True, "asset_out": True, "amount_in": True},
    "Liquidation": {"receiver": True, "asset_in": False, "asset_out": True, "amount_in": True},
}


def _amount(value) -> str | None:
    return None if value is None else str(value)


def _opt_int(value) -> int | None:
    return None if value is None else int(value)


@dataclass(frozen=True)
class FlashLoanRecord:
    provider: str
    service_provider: str
    runner: str
    asset_in: str | None
    asset_out: str
    amount_in: int
    block_number: int
    tx_index: int
    tx_hash: str
    span: Span

    def __post_init__(self):
        for name in ("service_provider", "runner", "asset_out", "amount_in"):
            if getattr(self, name) is None:
                raise ModelError(name, "required for a flash loan")

    def sort_key(self):
        return (self.block_number, self.tx_index, self.span.start, self.span.end, self.provider)

    def to_json(self) -> dict:
        return {
            "provider": self.provider,
            "serviceProviderAddr": self.service_provider,
            "runner": self.runner,
            "assetIn": self.asset_in,
            "assetOut": self.asset_out,
            "amountIn": _amount(self.amount_in),
            "blockNumber": self.block_number,
            "txIndex": self.tx_index,
            "txHash": self.tx_hash,
            "span": self.span.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "FlashLoanRecord":
        return cls(
            provider=d["provider"], service_provider=d["serviceProviderAddr"], runner=d["runner"],
            asset_in=d["assetIn"], asset_out=d["assetOut"], amount_in=int(d["amountIn"]),
            block_number=d["blockNumber"], tx_index=d["txIndex"], tx_hash=d["txHash"],
            span=Span.from_json(d["span"]),
        )

    def ref(self) -> dict:
        return {"txHash": self.tx_hash, "span": self.span.to_json()}


@dataclass(frozen=True)
class PrimitiveBehavior:
    kind: str
    platform: str
    sub_action: str | None
    action: str | None
    service_provider: str
    runner: str
    receiver: str | None
    asset_in: str | None
    asset_out: str | None
    amount_in: int | None
    block_number: int
    tx_index: int
    tx_hash: str
    span: Span
    site: int | None = None
    inside_loan: bool = False
    loan_ref: dict | None = None

    def __post_init__(self):
        rules = _PRESENCE.get(self.kind)
        if rules is None:
            raise ModelError("kind", f"unknown primitive kind {self.kind!r}")
        for name, required in rules.items():
            present = getattr(self, name) is not None
            if required and not present:
                raise ModelError(name, f"required for {self.kind}")
            if not required and present:
                raise ModelError(name, f"not allowed for {self.kind}")

    def sort_key(self):
        return (self.block_number, self.tx_index, self.span.start, self.span.end,
                self.kind, self.platform, -1 if self.site is None else self.site)

    def key(self):
        return (self.tx_hash, self.kind, self.span.start, self.span.end, self.site)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "platform": self.platform,
            "subAction": self.sub_action,
            "action": self.action,
            "serviceProviderAddr": self.service_provider,
            "runner": self.runner,
            "receiver": self.receiver,
            "assetIn": self.asset_in,
            "assetOut": self.asset_out,
            "amountIn": _amount(self.amount_in),
            "blockNumber": self.block_number,
            "txIndex": self.tx_index,
            "txHash": self.tx_hash,
            "span": self.span.to_json(),
            "logIndex": self.site,
            "insideLoan": self.inside_loan,
            "loanRef": self.loan_ref,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PrimitiveBehavior":
        return cls(
            kind=d["kind"], platform=d["platform"], sub_action=d["subAction"], action=d["action"],
            service_provider=d["serviceProviderAddr"], runner=d["runner"], receiver=d["receiver"],
            asset_in=d["assetIn"], asset_out=d["assetOut"], amount_in=_opt_int(d["amountIn"]),
            block_number=d["blockNumber"], tx_index=d["txIndex"], tx_hash=d["txHash"],
            span=Span.from_json(d["span"]), site=d["logIndex"], inside_loan=d["insideLoan"],
            loan_ref=d["loanRef"],
        )

    def ref(self) -> "EvidenceRef":
        return EvidenceRef(self.kind, self.span, self.site)


@dataclass(frozen=True)
class EvidenceRef:
    """Points at a primitive (kind + span) or, for event evidence, a log."""

    kind: str
    span: Span | None
    log_index: int | None = None

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "span": None if self.span is None else self.span.to_json(),
            "logIndex": self.log_index,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EvidenceRef":
        span = d.get("span")
        return cls(d["kind"], None if span is None else Span.from_json(span), d.get("logIndex"))


@dataclass(frozen=True)
class AdvancedBehavior:
    kind: str
    runner: str | None
    evidence: tuple[EvidenceRef, ...]
    tx_hash: str
    details: tuple[tuple[str, object], ...]
    block_number: int = 0
    tx_index: int = 0

    def __post_init__(self):
        if self.kind not in ADVANCED_KINDS:
            raise ModelError("kind", f"unknown advanced kind {self.kind!r}")
        d = dict(self.details)
        if self.kind == "Arbitrage" and len(self.evidence) < 2:
            raise ModelError("evidence", "arbitrage needs at least two trades")
        if self.kind == "CollateralSwap" and d.get("oldCollateral") == d.get("newCollateral"):
            raise ModelError("details", "collateral swap needs two different assets")
        if self.kind == "LoanSwap" and d.get("oldDebtAsset") == d.get("newDebtAsset") \
                and d.get("identity") != "newloan":
            raise ModelError("details", "loan swap needs two different debt assets")
        if self.kind == "PlatformSwap" and d.get("platformA") == d.get("platformB"):
            raise ModelError("details", "platform swap needs two platforms")

    @property
    def detail(self) -> dict:
        return dict(self.details)

    def sort_key(self):
        return (self.block_number, self.tx_index, self.kind,
                tuple((k, str(v)) for k, v in self.details), self.runner or "")

    def key(self):
        return (self.tx_hash, self.kind, tuple((k, str(v)) for k, v in self.details))

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "runner": self.runner,
            "txHash": self.tx_hash,
            "blockNumber": self.block_number,
            "txIndex": self.tx_index,
            "details": dict(self.details),
            "evidence": [e.to_json() for e in self.evidence],
        }

    @classmethod
    def from_json(cls, d: dict) -> "AdvancedBehavior":
        return cls(
            kind=d["kind"], runner=d["runner"],
            evidence=tuple(EvidenceRef.from_json(e) for e in d["evidence"]),
            tx_hash=d["txHash"], details=tuple(d["details"].items()),
            block_number=d.get("blockNumber", 0), tx_index=d.get("txIndex", 0),
        )
