"""Command-line entry point.

One config file drives the pipeline; flags override config values for
experimentation. Exit codes are categorized so shell callers can triage:
0 success, 2 configuration, 3 I/O, 4 backend, 5 validation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

from filelock import FileLock, Timeout

from . import __version__
from .config import PipelineConfig, load_config
from .dataset import (
    annotate_explanations,
    build_pairs,
    emit_dataset,
    emit_training_config,
    load_split,
    split_by_lineage,
)
from .errors import (
    BackendError,
    ConfigError,
    EvalError,
    VulnforgeError,
)
from .evaluate import VerdictLog, compute_accuracy, render_report, run_eval
from .replicate import run_campaign, sampling_schedule
from .rtl import parse_module, port_signature, tokenize
from .specdoc import generate_spec, render_spec
from .store import CorpusStore, DesignRecord
from .taxonomy import lookup

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_BACKEND = 4
EXIT_VALIDATION = 5


# ----------------------------------------------------------------- helpers


def _open_store(config: PipelineConfig, create: bool = False) -> CorpusStore:
    manifest = config.corpus_path / "manifest.json"
    if manifest.exists():
        return CorpusStore.open(config.corpus_path)
    if not create:
        raise ConfigError(f"corpus: no corpus at {config.corpus_path} (run ingest first)")
    clock = None
    if config.corpus_created_at is not None:
        pinned = config.corpus_created_at
        clock = lambda: pinned  # noqa: E731 - trivial closure
    return CorpusStore.create(config.corpus_path, clock=clock, tool_version=__version__)


@contextmanager
def _write_guard(config: PipelineConfig):
    """One writing subcommand per corpus at a time. This is the CLI-level
    guard; the store takes its own lock per mutation."""
    config.corpus_path.parent.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(config.corpus_path) + ".cli.lock")
    try:
        with lock.acquire(timeout=10):
            yield
    except Timeout:
        raise VulnforgeError(
            f"another writing command holds the lock on {config.corpus_path}"
        ) from None


def _write_run_log(config: PipelineConfig, command: str, payload: dict) -> Path:
    config.run_log_dir.mkdir(parents=True, exist_ok=True)
    entry = {
        "tool_version": __version__,
        "command": command,
        "config_digest": config.digest,
        "seeds": config.seeds(),
    }
    entry.update(payload)
    existing = len(list(config.run_log_dir.glob(f"{command}-*.json")))
    path = config.run_log_dir / f"{command}-{existing:04d}.json"
    path.write_text(json.dumps(entry, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ------------------------------------------------------------- subcommands


def cmd_ingest(args) -> int:
    config = load_config(args.config)
    source = Path(args.design).read_text(encoding="utf-8")
    label = lookup(args.cwe, args.disambiguator)
    design_id = args.design_id or parse_module(source).module_name
    with _write_guard(config):
        store = _open_store(config, create=True)
        store.add_design(DesignRecord(
            design_id=design_id,
            lineage_id=design_id,
            source_text=source,
            label=label,
            origin="benchmark",
        ))
        golden_id = None
        if args.golden:
            golden_source = Path(args.golden).read_text(encoding="utf-8")
            golden_id = f"{design_id}_golden"
            store.add_design(DesignRecord(
                design_id=golden_id,
                lineage_id=design_id,
                source_text=golden_source,
                label=None,
                origin="secure_counterpart",
            ))
    _write_run_log(config, "ingest", {
        "design_id": design_id, "golden_id": golden_id, "label": label.to_dict(),
    })
    print(f"ingested {design_id} ({label.describe()})"
          + (f" with secure counterpart {golden_id}" if golden_id else ""))
    return EXIT_OK


def cmd_inspect(args) -> int:
    source = Path(args.file).read_text(encoding="utf-8")
    info = parse_module(source)
    tokens = tokenize(source)
    if args.format == "json":
        print(json.dumps({
            "module_name": info.module_name,
            "ports": [
                {"name": p.name, "direction": p.direction, "width": p.width_text}
                for p in info.ports
            ],
            "parameters": [{"name": n, "default": d} for n, d in info.parameters],
            "other_modules": list(info.other_modules),
            "port_signature": port_signature(info),
            "token_count": len(tokens),
        }, indent=2, sort_keys=True))
    else:
        print(f"module {info.module_name}")
        for p in info.ports:
            print(f"  port {p.name}: {p.direction}, {p.width_text}")
        for name, default in info.parameters:
            print(f"  parameter {name} = {default}")
        for other in info.other_modules:
            print(f"  (additional module in file: {other})")
        print(f"  signature: {port_signature(info)}")
        print(f"  tokens: {len(tokens)}")
    return EXIT_OK


def cmd_spec(args) -> int:
    config = load_config(args.config)
    store = _open_store(config)
    client = None
    if args.enrich:
        client = config.require_backend().build_client()
    targets = [store.get(args.design_id)] if args.design_id else store.labeled_bases()
    written = 0
    with _write_guard(config):
        for record in targets:
            if store.load_spec(record.design_id) is not None and not args.force:
                continue
            notes_path = config.corpus_path / "notes" / f"{record.design_id}.txt"
            notes = notes_path.read_text(encoding="utf-8") if notes_path.exists() else None
            doc = generate_spec(record, client=client, notes=notes)
            store.attach_spec(record.design_id, render_spec(doc))
            written += 1
    _write_run_log(config, "spec", {"written": written, "enriched": bool(client)})
    print(f"wrote {written} spec document(s) to {config.corpus_path / 'specs'}")
    return EXIT_OK


def _apply_replicate_flags(args, settings):
    if args.replicas is not None:
        settings.replicas_per_design = args.replicas
    if args.seed is not None:
        settings.seed = args.seed
    if args.threshold is not None:
        settings.diversity_threshold = args.threshold
    if args.regen_budget is not None:
        settings.regen_budget = args.regen_budget
    return settings


def cmd_replicate(args) -> int:
    config = load_config(args.config)
    settings = _apply_replicate_flags(args, config.require_replication())
    campaign = settings.to_campaign_config()
    campaign.validate()
    store = _open_store(config)
    bases = store.labeled_bases()
    schedule = sampling_schedule(
        campaign.replicas_per_design, campaign.temperature_lo,
        campaign.temperature_hi, campaign.top_p,
    )

    if args.dry_run:
        print(f"planned {len(bases) * campaign.replicas_per_design} slot(s) "
              f"across {len(bases)} design(s):")
        for base in bases:
            for slot in range(campaign.replicas_per_design):
                style = campaign.styles[slot % len(campaign.styles)]
                params = schedule[slot]
                print(f"  {base.design_id}  slot {slot}  {style}  "
                      f"temperature={params.temperature} top_p={params.top_p}")
        return EXIT_OK

    client = config.require_backend().build_client()
    judge = None
    if campaign.use_judge and config.judge_backend is not None:
        judge = config.judge_backend.build_client()
    with _write_guard(config):
        summary = run_campaign(
            store, campaign, client, judge=judge,
            rejection_log_path=config.run_log_dir / "rejections.jsonl",
        )
    _write_run_log(config, "replicate", {
        "summary": summary.as_dict(), "usage": client.usage.as_dict(),
    })
    print(
        f"requested={summary.requested} accepted={summary.accepted} "
        f"rejected_fidelity={summary.rejected_fidelity} "
        f"rejected_diversity={summary.rejected_diversity} "
        f"llm_failures={summary.llm_failures}"
    )
    if summary.halted:
        print(f"campaign halted: {summary.halt_reason}", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    config = load_config(args.config)
    settings = config.require_dataset()
    if args.policy is not None:
        settings.policy = args.policy
    if args.seed is not None:
        settings.seed = args.seed
    store = _open_store(config)
    pairs = build_pairs(store, policy=settings.policy, token_budget=settings.token_budget)
    annotate = settings.annotate or args.annotate
    if annotate:
        client = config.require_backend().build_client()
        pairs = annotate_explanations(pairs, client)
    assignment = split_by_lineage(store, ratios=settings.ratios, seed=settings.seed)
    stats = emit_dataset(pairs, assignment, settings.out_dir, extra_stats={
        "pairing_policy": settings.policy,
        "split_seed": settings.seed,
        "annotated": bool(annotate),
    })
    _write_run_log(config, "build-dataset", {"stats": stats})
    print(f"emitted {stats['rows_total']} row(s) to {settings.out_dir}")
    for split_name, split_stats in stats["per_split"].items():
        print(f"  {split_name}: {split_stats['rows']} row(s), "
              f"{split_stats['over_budget']} over budget")
    return EXIT_OK


def _parse_override(item: str) -> tuple[str, object]:
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    raw = raw.strip()
    if raw in ("true", "false"):
        return key.strip(), raw == "true"
    for caster in (int, float):
        try:
            return key.strip(), caster(raw)
        except ValueError:
            continue
    return key.strip(), raw


def cmd_emit_train_config(args) -> int:
    config = load_config(args.config)
    overrides = dict(config.training.overrides)
    for item in args.set or []:
        key, value = _parse_override(item)
        overrides[key] = value
    out_path = Path(args.out) if args.out else config.training.out_path
    out_path.parent.mkdir(parents=True, exist_ok=True)
    emit_training_config(out_path, overrides)
    _write_run_log(config, "emit-train-config", {
        "out_path": str(out_path), "overrides": {k: repr(v) for k, v in overrides.items()},
    })
    print(f"wrote training config to {out_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config)
    settings = config.require_eval()
    rows = load_split(settings.test_path)
    if args.limit is not None:
        rows = sorted(rows, key=lambda r: r.row_id)[: args.limit]
    backends = {m.name: m.backend.build_client() for m in settings.models}
    settings.log_path.parent.mkdir(parents=True, exist_ok=True)
    vlog = run_eval(rows, backends, settings.log_path)
    _write_run_log(config, "eval", {
        "cells": len(vlog), "models": sorted(backends), "rows": len(rows),
    })
    print(f"verdict log has {len(vlog)} cell(s) at {settings.log_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    config = load_config(args.config)
    settings = config.require_eval()
    rows = load_split(settings.test_path)
    if not settings.log_path.exists():
        raise EvalError(f"no verdict log at {settings.log_path} (run eval first)")
    vlog = VerdictLog(settings.log_path)
    report = compute_accuracy(vlog, rows)
    table = render_report(report, settings.report_dir)
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(table, end="")
    _write_run_log(config, "report", {
        "models": [m.model_name for m in report.models],
        "report_dir": str(settings.report_dir),
    })
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vulnforge",
        description="Forge a labeled RTL vulnerability corpus and evaluate detector models.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="add a labeled base design (and optional secure twin)")
    p.add_argument("--config", required=True)
    p.add_argument("--design", required=True, help="path to the vulnerable RTL file")
    p.add_argument("--cwe", required=True, help="CWE id, e.g. CWE-321")
    p.add_argument("--disambiguator", default=None, help="variant tag for multi-entry CWE ids")
    p.add_argument("--golden", default=None, help="path to the secure counterpart RTL file")
    p.add_argument("--design-id", default=None, help="override the module-name-derived id")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("inspect", help="show one RTL file's parsed interface")
    p.add_argument("file")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("spec", help="generate spec documents for labeled base designs")
    p.add_argument("--config", required=True)
    p.add_argument("--design-id", default=None, help="only this design")
    p.add_argument("--enrich", action="store_true", help="draft prose via the configured backend")
    p.add_argument("--force", action="store_true", help="regenerate existing specs")
    p.set_defaults(func=cmd_spec)

    p = sub.add_parser("replicate", help="run a replication campaign")
    p.add_argument("--config", required=True)
    p.add_argument("--dry-run", action="store_true",
                   help="print planned slots; no backend calls, no writes")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--regen-budget", type=int, default=None)
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("build-dataset", help="emit instruction-tuning splits from the corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", choices=("secure-counterpart", "positives-only", "cross-cwe"),
                   default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--annotate", action="store_true",
                   help="draft rationales via the configured backend")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("emit-train-config", help="write the fine-tuning hyperparameter file")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one field (repeatable)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_emit_train_config)

    p = sub.add_parser("eval", help="query detector models on the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--limit", type=int, default=None, help="evaluate only the first N rows")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate the verdict log into the comparison report")
    p.add_argument("--config", required=True)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except VulnforgeError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
