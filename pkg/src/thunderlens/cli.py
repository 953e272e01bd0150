"""Command-line entry point: identify, classify, report, fetch, synth.

Exit status 0 means success, 1 an input problem (missing or malformed
fixtures, unknown transaction, unreachable node) and 2 a configuration
problem (bad registry, bad flags). Diagnostics and errors go to standard
error as one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .diagnostics import write_jsonl
from .ingestion import BundleSource, Corpus, FixtureError, discover_pairs, load_fixtures, write_fixture
from .model import ModelError
from .pipeline import Results, Settings, run
from .registry import PatternRegistry, RegistryError, load_default, load_from_file
from .reporting import (
    StaleResultsError, behavior_summary, distribution, load, persist, span_table, write_reports,
    write_span_table,
)
from .rpc import RpcError, fetch_corpus
from .synth import write_corpus

RPC_ENV = "THUNDERLENS_RPC_URL"
OK, INPUT_ERROR, CONFIG_ERROR = 0, 1, 2


class CliError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _error(code: str, message: str) -> None:
    sys.stderr.write(json.dumps({"code": code, "message": message}) + "\n")


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--registry", type=Path, help="registry JSON (extends the built-in catalog)")
    common.add_argument("--fixtures", type=Path, help="fixture file or directory")
    common.add_argument("--rpc-url", default=os.environ.get(RPC_ENV),
                        help=f"archive node endpoint (default: ${RPC_ENV})")
    common.add_argument("-o", "--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--workers", type=_positive, default=1)
    common.add_argument("--paper-faithful", action="store_true",
                        help="hash-only dYdX matching (drops the emitter check)")
    common.add_argument("--all", dest="include_all", action="store_true",
                        help="classify transactions without flash loans too")
    common.add_argument("--loan-swap-identity", choices=("flashloan", "newloan"), default="flashloan")

    parser = argparse.ArgumentParser(prog="thunderlens", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("identify", parents=[common], help="find flash loans")
    p.add_argument("--tx", action="append", default=[], help="transaction hash (RPC input)")

    p = sub.add_parser("classify", parents=[common], help="primitive and advanced behaviors")
    p.add_argument("--pipeline", action="store_true", help="run identification first")
    p.add_argument("--tx", action="append", default=[], help="transaction hash (RPC input)")

    p = sub.add_parser("report", parents=[common], help="aggregate reports and span tables")
    p.add_argument("--tx", help="write the span table for this transaction")

    p = sub.add_parser("fetch", parents=[common], help="download bundles from an archive node")
    p.add_argument("hashes", nargs="*", help="transaction hashes")
    p.add_argument("--blocks", help="inclusive block range FROM:TO")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic labelled corpus")
    p.add_argument("-n", type=_non_negative, default=100, help="number of scenarios")
    p.add_argument("--seed", type=int, default=7)
    return parser


# -- shared steps -----------------------------------------------------------------------

def _registry(args) -> PatternRegistry:
    if args.registry is None:
        return load_default()
    try:
        return load_from_file(args.registry)
    except FileNotFoundError:
        raise CliError(CONFIG_ERROR, f"registry not found: {args.registry}") from None
    except (RegistryError, ValueError) as exc:
        raise CliError(CONFIG_ERROR, f"{args.registry}: {exc}") from None


def _settings(args) -> Settings:
    return Settings(paper_faithful=args.paper_faithful, include_all=args.include_all,
                    loan_swap_identity=args.loan_swap_identity)


def _corpus(args) -> Corpus:
    try:
        if args.fixtures is not None:
            return load_fixtures(args.fixtures)
        hashes = tuple(getattr(args, "tx", None) or ())
        if args.rpc_url and hashes:
            return load_fixtures(BundleSource(rpc_url=args.rpc_url, tx_hashes=hashes))
    except FileNotFoundError as exc:
        raise CliError(INPUT_ERROR, str(exc)) from None
    except (FixtureError, ModelError, RpcError, ValueError) as exc:
        raise CliError(INPUT_ERROR, str(exc)) from None
    raise CliError(CONFIG_ERROR, "no input: pass --fixtures, or --rpc-url with --tx")


def _analyze(args, phases: int, loans=None) -> tuple[Results, PatternRegistry, Corpus]:
    registry = _registry(args)
    corpus = _corpus(args)
    discover_pairs(corpus, registry)
    results = run(corpus, registry, _settings(args), phases=phases, workers=args.workers, loans=loans)
    write_jsonl(results.diagnostics, sys.stderr)
    return results, registry, corpus


# -- commands -------------------------------------------------------------------------------

def cmd_identify(args) -> int:
    results, registry, corpus = _analyze(args, phases=1)
    persist(Results(results.flashloans), args.out, registry, corpus.identity(), mode="overwrite")
    return OK


def cmd_classify(args) -> int:
    loans = None
    if not args.pipeline:
        if not (args.out / "flashloans.jsonl").is_file():
            raise CliError(INPUT_ERROR, f"{args.out}/flashloans.jsonl missing: run identify or pass --pipeline")
        try:
            loans = load(args.out, _registry(args)).flashloans
        except StaleResultsError as exc:
            raise CliError(INPUT_ERROR, str(exc)) from None
        except (ValueError, KeyError) as exc:
            raise CliError(INPUT_ERROR, str(exc)) from None
    results, registry, corpus = _analyze(args, phases=3, loans=loans)
    persist(results, args.out, registry, corpus.identity(), mode="overwrite")
    return OK


def cmd_report(args) -> int:
    registry = _registry(args) if args.registry is not None else None
    try:
        results = load(args.out, registry)
    except FileNotFoundError as exc:
        raise CliError(INPUT_ERROR, str(exc)) from None
    except (StaleResultsError, ValueError, KeyError) as exc:
        raise CliError(INPUT_ERROR, str(exc)) from None
    write_reports(args.out, distribution(results.flashloans),
                  behavior_summary(results.primitives, results.advanced))
    if args.tx:
        tx = args.tx.lower()
        known = {r.tx_hash for r in results.flashloans} | {p.tx_hash for p in results.primitives}
        if tx not in known:
            raise CliError(INPUT_ERROR, f"no results for transaction {args.tx}")
        write_span_table(args.out, span_table(tx, results.flashloans, results.primitives))
    return OK


def cmd_fetch(args) -> int:
    if not args.rpc_url:
        raise CliError(CONFIG_ERROR, f"no endpoint: pass --rpc-url or set {RPC_ENV}")
    block_range = None
    if args.blocks:
        try:
            lo, hi = (int(x) for x in args.blocks.split(":"))
        except ValueError:
            raise CliError(CONFIG_ERROR, "--blocks expects FROM:TO") from None
        block_range = (lo, hi)
    if not args.hashes and block_range is None:
        raise CliError(CONFIG_ERROR, "pass transaction hashes or --blocks")
    try:
        source = BundleSource(rpc_url=args.rpc_url, tx_hashes=tuple(args.hashes), block_range=block_range)
    except ValueError as exc:
        raise CliError(CONFIG_ERROR, str(exc)) from None
    try:
        corpus = fetch_corpus(source)
    except (RpcError, ModelError, ValueError) as exc:
        raise CliError(INPUT_ERROR, str(exc)) from None
    for bundle in corpus:
        write_fixture(bundle, args.out)
    return OK


def cmd_synth(args) -> int:
    write_corpus(args.out, args.n, args.seed)
    return OK


COMMANDS = {"identify": cmd_identify, "classify": cmd_classify, "report": cmd_report,
            "fetch": cmd_fetch, "synth": cmd_synth}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        _error("input_error" if exc.status == INPUT_ERROR else "config_error", str(exc))
        return exc.status
    except OSError as exc:
        _error("input_error", str(exc))
        return INPUT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
