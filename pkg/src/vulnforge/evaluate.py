"""Detector evaluation: query candidate models on held-out rows, parse
verdicts, and aggregate per-CWE accuracy into a comparison report.

Hard rules: only test-split rows may be scored (anything else raises), and
an output the parser cannot read counts as a wrong answer rather than being
dropped. A detector that fails to answer has not detected.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .dataset import InstructionPair
from .errors import BackendError, EvalError, LeakageError
from .llm import CompletionRequest, LlmClient
from .sampling import SamplingParams

log = logging.getLogger(__name__)

_DETECTOR_SYSTEM = (
    "You are a hardware security reviewer. Inspect the RTL design and "
    "answer the security query. Reply with a line 'VERDICT: PRESENT' or "
    "'VERDICT: ABSENT', then a line starting with 'RATIONALE:'."
)

_VERDICT_LINE_RE = re.compile(r"^\s*\**\s*VERDICT\s*\**\s*:\s*(.+)$", re.IGNORECASE)

# order matters: negation is checked before affirmation, so "not present"
# never falls through to the "present" match
_NEGATION_RES = tuple(re.compile(p) for p in (
    r"\bnot\s+present\b",
    r"\bno\s+(?:\w+\s+){0,4}?(?:vulnerability|weakness|trojan|flaw|issue)\b",
    r"\bis\s+not\s+vulnerable\b",
    r"\bdoes\s+not\s+(?:contain|exhibit|have|include)\b",
    r"\bfree\s+of\b",
    r"\babsent\b",
))
_AFFIRMATION_RES = tuple(re.compile(p) for p in (
    r"\bis\s+present\b",
    r"\bvulnerability\s+(?:exists|is\s+present|was\s+found)\b",
    r"\bcontains?\s+(?:the|this|a)\s+(?:\w+\s+){0,3}?(?:vulnerability|weakness|trojan|flaw)\b",
    r"\bis\s+vulnerable\b",
    r"\bpresent\s+in\s+th(?:is|e)\b",
))


def parse_verdict(raw_text: str) -> str:
    """'present', 'absent', or 'unparseable'.

    Primary rule: the first VERDICT: line carrying exactly one of PRESENT
    or ABSENT. A verdict line that resolves to neither (format echoes like
    'VERDICT: PRESENT or ABSENT') is terminal: the model used its answer
    channel and said nothing, so no fuzzy fallback applies. Only responses
    without any verdict line get the phrase scan, negation tried first.
    """
    saw_verdict_line = False
    for line in raw_text.splitlines():
        m = _VERDICT_LINE_RE.match(line)
        if not m:
            continue
        saw_verdict_line = True
        tail = m.group(1).upper()
        has_present = re.search(r"\bPRESENT\b", tail)
        has_absent = re.search(r"\bABSENT\b", tail)
        if has_absent and not has_present:
            return "absent"
        if has_present and not has_absent:
            return "present"
    if saw_verdict_line:
        return "unparseable"
    lowered = raw_text.lower()
    if any(p.search(lowered) for p in _NEGATION_RES):
        return "absent"
    if any(p.search(lowered) for p in _AFFIRMATION_RES):
        return "present"
    return "unparseable"


# ------------------------------------------------------------- verdict log


@dataclass(frozen=True)
class Verdict:
    row_id: str
    model_name: str
    parsed: str  # present | absent | unparseable
    raw_text: str
    latency: float

    def to_json_dict(self) -> dict:
        return {
            "row_id": self.row_id,
            "model_name": self.model_name,
            "parsed": self.parsed,
            "raw_text": self.raw_text,
            "latency": self.latency,
        }


class VerdictLog:
    """Append-only JSONL log of (row, model) outcomes. Re-opening an
    interrupted log lets run_eval fill in only the missing cells."""

    def __init__(self, path: Path | str | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[Verdict] = []
        self._seen: set[tuple[str, str]] = set()
        if self.path is not None and self.path.exists():
            for i, line in enumerate(self.path.read_text(encoding="utf-8").splitlines()):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                    verdict = Verdict(
                        row_id=data["row_id"],
                        model_name=data["model_name"],
                        parsed=data["parsed"],
                        raw_text=data.get("raw_text", ""),
                        latency=data.get("latency", 0.0),
                    )
                except (json.JSONDecodeError, KeyError) as exc:
                    raise EvalError(f"{self.path}:{i + 1}: corrupt verdict log ({exc})") from exc
                self._ingest(verdict)

    def _ingest(self, verdict: Verdict) -> None:
        self.records.append(verdict)
        self._seen.add((verdict.row_id, verdict.model_name))

    def has(self, row_id: str, model_name: str) -> bool:
        return (row_id, model_name) in self._seen

    def record(self, verdict: Verdict) -> None:
        self._ingest(verdict)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(verdict.to_json_dict(), sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def run_eval(
    rows: list[InstructionPair],
    backends: dict[str, LlmClient],
    log_path: Path | str | None = None,
) -> VerdictLog:
    """Query every configured model on every test row.

    Rows whose split is not 'test' are refused outright; scoring training
    data would fabricate accuracy. Cells already present in the log are
    skipped, making interrupted runs resumable. Backend failures mark the
    cell unparseable instead of aborting the sweep.
    """
    offenders = [r.row_id for r in rows if r.split != "test"]
    if offenders:
        raise LeakageError(
            f"{len(offenders)} row(s) outside the test split "
            f"(first: {offenders[0]}); refusing to score them"
        )
    if not backends:
        raise EvalError("no model backends configured")

    vlog = VerdictLog(log_path)
    ordered_rows = sorted(rows, key=lambda r: r.row_id)
    for model_name in sorted(backends):
        client = backends[model_name]
        for row in ordered_rows:
            if vlog.has(row.row_id, model_name):
                continue
            request = CompletionRequest(
                system_text=_DETECTOR_SYSTEM,
                user_text=row.prompt_text,
                sampling=SamplingParams(temperature=0.0, top_p=0.9),
                model_name=model_name,
            )
            try:
                result = client.complete(request)
                verdict = Verdict(
                    row_id=row.row_id,
                    model_name=model_name,
                    parsed=parse_verdict(result.text),
                    raw_text=result.text,
                    latency=result.latency,
                )
            except BackendError as exc:
                log.warning("eval cell (%s, %s) failed: %s", row.row_id, model_name, exc)
                verdict = Verdict(
                    row_id=row.row_id,
                    model_name=model_name,
                    parsed="unparseable",
                    raw_text=f"[backend failure] {exc}",
                    latency=0.0,
                )
            vlog.record(verdict)
    return vlog


# --------------------------------------------------------------- accuracy


def percent_tenths(correct: int, total: int) -> str:
    """Exact one-decimal percent via integer arithmetic (no float drift):
    848/1000 renders as '84.8'."""
    if total <= 0:
        raise EvalError("cannot render a percentage over zero rows")
    tenths = (correct * 2000 + total) // (2 * total)  # round half up
    return f"{tenths // 10}.{tenths % 10}"


@dataclass(frozen=True)
class ModelAccuracy:
    model_name: str
    correct: int
    total: int
    unparseable: int
    # true_present / false_present / true_absent / false_absent; unparseable
    # cells land in the false bucket for their ground truth
    confusion: dict[str, int]
    per_cwe: dict[str, tuple[int, int]]  # cwe slug -> (correct, total)

    @property
    def overall(self) -> float:
        return self.correct / self.total

    @property
    def overall_percent(self) -> str:
        return percent_tenths(self.correct, self.total)

    def cwe_percent(self, slug: str) -> str:
        correct, total = self.per_cwe[slug]
        return percent_tenths(correct, total)

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "correct": self.correct,
            "total": self.total,
            "unparseable": self.unparseable,
            "overall_percent": self.overall_percent,
            "confusion": dict(sorted(self.confusion.items())),
            "per_cwe": {
                slug: {"correct": c, "total": t, "percent": percent_tenths(c, t)}
                for slug, (c, t) in sorted(self.per_cwe.items())
            },
        }


@dataclass(frozen=True)
class AccuracyReport:
    models: tuple[ModelAccuracy, ...]  # sorted: overall desc, then name

    def to_dict(self) -> dict:
        return {"models": [m.to_dict() for m in self.models]}


def compute_accuracy(vlog: VerdictLog, rows: list[InstructionPair]) -> AccuracyReport:
    """Aggregate a verdict log against the rows' ground truth.

    Counts are exact integers; unparseable verdicts are scored incorrect.
    Every logged cell must have a matching row.
    """
    if len(vlog) == 0:
        raise EvalError("verdict log is empty; nothing to score")
    truth = {row.row_id: row for row in rows}

    per_model: dict[str, list[Verdict]] = {}
    for verdict in vlog:
        if verdict.row_id not in truth:
            raise EvalError(f"verdict for unknown row {verdict.row_id}")
        per_model.setdefault(verdict.model_name, []).append(verdict)

    models: list[ModelAccuracy] = []
    for model_name in sorted(per_model):
        verdicts = per_model[model_name]
        correct = unparseable = 0
        confusion = {"true_present": 0, "false_present": 0,
                     "true_absent": 0, "false_absent": 0}
        per_cwe: dict[str, list[int]] = {}
        for verdict in verdicts:
            row = truth[verdict.row_id]
            gt = row.ground_truth
            slug = row.target_cwe.slug
            cwe_cell = per_cwe.setdefault(slug, [0, 0])
            cwe_cell[1] += 1
            if verdict.parsed == "unparseable":
                unparseable += 1
                confusion["false_absent" if gt == "present" else "false_present"] += 1
                continue
            if verdict.parsed == gt:
                correct += 1
                cwe_cell[0] += 1
                confusion[f"true_{gt}"] += 1
            else:
                confusion[f"false_{verdict.parsed}"] += 1
        models.append(ModelAccuracy(
            model_name=model_name,
            correct=correct,
            total=len(verdicts),
            unparseable=unparseable,
            confusion=confusion,
            per_cwe={slug: (c, t) for slug, (c, t) in per_cwe.items()},
        ))

    models.sort(key=lambda m: (-m.overall, m.model_name))
    return AccuracyReport(models=tuple(models))


# ------------------------------------------------------------------ report


def render_report(report: AccuracyReport, out_dir: Path | str) -> str:
    """Comparison table plus a machine-readable plot-data file.

    Models appear by overall accuracy descending (ties by name); equal
    reports render byte-identically.
    """
    if not report.models:
        raise EvalError("empty accuracy report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    slugs = sorted({slug for m in report.models for slug in m.per_cwe})
    header = ["model", "overall %", "unparseable"] + slugs
    rows = []
    for m in report.models:
        row = [m.model_name, m.overall_percent, str(m.unparseable)]
        for slug in slugs:
            row.append(m.cwe_percent(slug) if slug in m.per_cwe else "-")
        rows.append(row)

    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)).rstrip(),
        "  ".join("-" * widths[i] for i in range(len(header))),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    table = "\n".join(lines) + "\n"

    (out_dir / "report.txt").write_text(table, encoding="utf-8")
    plot_data = {
        "models": [m.model_name for m in report.models],
        "overall_percent": [m.overall_percent for m in report.models],
        "per_cwe": {
            m.model_name: {slug: m.cwe_percent(slug) for slug in sorted(m.per_cwe)}
            for m in report.models
        },
        "unparseable": [m.unparseable for m in report.models],
    }
    (out_dir / "plot_data.json").write_text(
        json.dumps(plot_data, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return table
