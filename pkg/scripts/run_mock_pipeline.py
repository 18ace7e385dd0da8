#!/usr/bin/env python3
"""End-to-end desk-scale demo on the bundled fixture designs.

Runs the whole pipeline against the deterministic mock backend: ingest five
labeled modules (one with a secure twin), generate spec documents, run a
replication campaign, emit the instruction-tuning splits and the training
config, sweep two scripted detector models over the test split, and print
the accuracy report. No network, no credentials, a few seconds of work.

Usage:
    python scripts/run_mock_pipeline.py [--workdir DIR] [--replicas N]
"""

import argparse
import shutil
import sys
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[1]
FIXTURES = REPO_ROOT / "tests" / "fixtures"

DESIGNS = [
    ("csr_unit.v", "CWE-310", "csr-access", "csr_unit_golden.v"),
    ("aes_key_store.v", "CWE-321", None, None),
    ("jtag_lock.v", "CWE-1244", None, None),
    ("lock_ctrl.v", "CWE-1245", None, None),
    ("dma_gate.v", "CWE-284", None, None),
]

CONFIG = """\
corpus: corpus
run_log_dir: runs
corpus_created_at: "2024-01-01T00:00:00+00:00"
backend:
  kind: mock
  script: replicator_rules.yaml
replication:
  replicas_per_design: {replicas}
  regen_budget: 1
dataset:
  out_dir: dataset
  seed: 0
training:
  out_path: train_config.txt
eval:
  models:
    - name: eager-detector
      kind: mock
      script: detector_eager.yaml
    - name: dismissive-detector
      kind: mock
      script: detector_dismissive.yaml
  test_path: dataset/test.jsonl
  log_path: runs/verdicts.jsonl
  report_dir: report
"""

REPLICATOR_RULES = """\
# The mock replicator reworks the prompt's code block deterministically:
# internal signals are renamed with a hash derived from the request, so
# different slots give different (but reproducible) rewrites.
rules:
  - match: "REWRITE DIRECTIVE"
    transform: rename_signals
"""

DETECTOR_EAGER = """\
# Flags everything as vulnerable: right on every positive row, wrong on
# every negative one.
rules:
  - match: "Target weakness"
    response: "VERDICT: PRESENT\\nRATIONALE: the design matches the weakness pattern."
"""

DETECTOR_DISMISSIVE = """\
# Waves everything through: the mirror image of the eager detector.
rules:
  - match: "Target weakness"
    response: "VERDICT: ABSENT\\nRATIONALE: no evidence of the weakness found."
"""


def run_cli(argv: list[str]) -> None:
    from vulnforge.cli import main

    code = main(argv)
    if code != 0:
        sys.exit(f"command {' '.join(argv[:1])} failed with exit code {code}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", type=Path, default=None,
                        help="where to build the demo workspace (default: a temp dir)")
    parser.add_argument("--replicas", type=int, default=4,
                        help="replication slots per design (default 4)")
    args = parser.parse_args()

    workdir = args.workdir or Path(tempfile.mkdtemp(prefix="vulnforge_demo_"))
    if workdir.exists() and any(workdir.iterdir()):
        sys.exit(f"workdir {workdir} is not empty; refusing to overwrite")
    workdir.mkdir(parents=True, exist_ok=True)

    (workdir / "config.yaml").write_text(CONFIG.format(replicas=args.replicas), encoding="utf-8")
    (workdir / "replicator_rules.yaml").write_text(REPLICATOR_RULES, encoding="utf-8")
    (workdir / "detector_eager.yaml").write_text(DETECTOR_EAGER, encoding="utf-8")
    (workdir / "detector_dismissive.yaml").write_text(DETECTOR_DISMISSIVE, encoding="utf-8")
    config = str(workdir / "config.yaml")

    print(f"== workspace: {workdir}")

    print("== ingesting labeled designs")
    for design, cwe, disambiguator, golden in DESIGNS:
        argv = ["ingest", "--config", config, "--design", str(FIXTURES / design), "--cwe", cwe]
        if disambiguator:
            argv += ["--disambiguator", disambiguator]
        if golden:
            argv += ["--golden", str(FIXTURES / golden)]
        run_cli(argv)

    print("== generating spec documents")
    run_cli(["spec", "--config", config])

    print("== replication campaign (planned slots)")
    run_cli(["replicate", "--config", config, "--dry-run"])
    print("== replication campaign (running)")
    run_cli(["replicate", "--config", config])

    print("== building the instruction-tuning dataset")
    run_cli(["build-dataset", "--config", config])

    print("== emitting the training config")
    run_cli(["emit-train-config", "--config", config])

    print("== sweeping detector models over the test split")
    run_cli(["eval", "--config", config])

    print("== accuracy report")
    run_cli(["report", "--config", config])

    print(f"\nartifacts live under {workdir}")
    if args.workdir is None:
        answer = input("delete the temp workspace? [y/N] ").strip().lower()
        if answer == "y":
            shutil.rmtree(workdir)
            print("removed")


if __name__ == "__main__":
    main()
