"""Run the three phases over a corpus, optionally across worker processes."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .advanced import classify_advanced
from .diagnostics import Diagnostics
from .identifier import identify_bundle
from .model import TransactionBundle
from .primitives import classify
from .records import AdvancedBehavior, FlashLoanRecord, PrimitiveBehavior
from .registry import PatternRegistry


@dataclass(frozen=True)
class Settings:
    paper_faithful: bool = False
    include_all: bool = False
    loan_swap_identity: str = "flashloan"

    @property
    def strict(self) -> bool:
        return not self.paper_faithful


@dataclass
class Results:
    flashloans: list[FlashLoanRecord] = field(default_factory=list)
    primitives: list[PrimitiveBehavior] = field(default_factory=list)
    advanced: list[AdvancedBehavior] = field(default_factory=list)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def extend(self, other: "Results") -> None:
        self.flashloans.extend(other.flashloans)
        self.primitives.extend(other.primitives)
        self.advanced.extend(other.advanced)
        self.diagnostics.extend(other.diagnostics)

    def sort(self) -> "Results":
        self.flashloans.sort(key=FlashLoanRecord.sort_key)
        self.primitives.sort(key=PrimitiveBehavior.sort_key)
        self.advanced.sort(key=AdvancedBehavior.sort_key)
        return self

    def for_tx(self, tx_hash: str) -> "Results":
        return Results(
            [r for r in self.flashloans if r.tx_hash == tx_hash],
            [r for r in self.primitives if r.tx_hash == tx_hash],
            [r for r in self.advanced if r.tx_hash == tx_hash],
        )


def analyze_bundle(bundle: TransactionBundle, registry: PatternRegistry, settings: Settings = Settings(),
                   phases: int = 3, loans: Sequence[FlashLoanRecord] | None = None) -> Results:
    """Phase 1 (unless ``loans`` is given), then phases 2 and 3 when asked."""
    diag = Diagnostics()
    if loans is None:
        loans = identify_bundle(bundle, registry, settings.strict, diag)
    else:
        loans = [l for l in loans if l.tx_hash == bundle.tx_hash]
    res = Results(list(loans), diagnostics=diag)
    if phases < 2 or not (loans or settings.include_all):
        return res
    res.primitives = classify(bundle, loans, registry, diag)
    res.advanced = classify_advanced(bundle, res.primitives, loans, registry,
                                     settings.loan_swap_identity, diag)
    return res


def _chunk_worker(args) -> Results:
    bundles, registry, settings, phases, loans = args
    out = Results()
    for bundle in bundles:
        out.extend(analyze_bundle(bundle, registry, settings, phases,
                                  None if loans is None else loans.get(bundle.tx_hash, [])))
    return out


def run(bundles: Iterable[TransactionBundle], registry: PatternRegistry, settings: Settings = Settings(),
        phases: int = 3, workers: int = 1, loans: Sequence[FlashLoanRecord] | None = None,
        chunk_size: int = 250) -> Results:
    """Analyze every bundle; output order never depends on ``workers``."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    bundles = list(bundles)
    by_tx = None
    if loans is not None:
        by_tx = {}
        for l in loans:
            by_tx.setdefault(l.tx_hash, []).append(l)
    chunks = [bundles[i:i + chunk_size] for i in range(0, len(bundles), chunk_size)]
    jobs = [(c, registry, settings, phases,
             None if by_tx is None else {b.tx_hash: by_tx.get(b.tx_hash, []) for b in c})
            for c in chunks]
    out = Results()
    if workers == 1 or len(chunks) <= 1:
        parts = map(_chunk_worker, jobs)
        for part in parts:
            out.extend(part)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_chunk_worker, jobs):
                out.extend(part)
    return out.sort()
