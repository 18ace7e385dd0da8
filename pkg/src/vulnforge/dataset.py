"""Instruction-tuning dataset construction.

Corpus designs become prompt-response rows: the design source plus a
CWE-targeted security query, answered by a verdict line and a rationale.
Splits are assigned per lineage so no design family straddles train and
test. Over-long rows are flagged against the token budget, never dropped or
truncated; the budget consumer decides what to do with them.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .errors import BackendError, ConfigError, DatasetError, UnknownLabelError
from .llm import CompletionRequest, LlmClient, estimate_tokens
from .sampling import SamplingParams
from .store import CorpusStore
from .taxonomy import BUILTIN_TAXONOMY, CweLabel

log = logging.getLogger(__name__)

TOKEN_BUDGET = 512
SPLIT_NAMES = ("train", "validation", "test")
PAIRING_POLICIES = ("secure-counterpart", "positives-only", "cross-cwe")


# -------------------------------------------------------------------- rows


@dataclass(frozen=True)
class InstructionPair:
    row_id: str
    design_id: str
    lineage_id: str
    target_cwe: CweLabel
    prompt_text: str
    response_text: str
    ground_truth: str  # present | absent
    split: str = "unassigned"  # train | validation | test once emitted
    token_estimate: int = 0
    over_budget: bool = False
    annotation: str = "template"  # template | llm

    def to_json_dict(self) -> dict:
        return {
            "row_id": self.row_id,
            "design_id": self.design_id,
            "lineage_id": self.lineage_id,
            "target_cwe": self.target_cwe.to_dict(),
            "prompt_text": self.prompt_text,
            "response_text": self.response_text,
            "ground_truth": self.ground_truth,
            "split": self.split,
            "token_estimate": self.token_estimate,
            "over_budget": self.over_budget,
            "annotation": self.annotation,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "InstructionPair":
        return cls(
            row_id=data["row_id"],
            design_id=data["design_id"],
            lineage_id=data["lineage_id"],
            target_cwe=CweLabel.from_dict(data["target_cwe"]),
            prompt_text=data["prompt_text"],
            response_text=data["response_text"],
            ground_truth=data["ground_truth"],
            split=data.get("split", "unassigned"),
            token_estimate=data.get("token_estimate", 0),
            over_budget=data.get("over_budget", False),
            annotation=data.get("annotation", "template"),
        )


def make_query(target: CweLabel, taxonomy: tuple[CweLabel, ...] = BUILTIN_TAXONOMY) -> str:
    """Deterministic security query for one taxonomy entry. The answer
    format is pinned so verdict parsing stays mechanical."""
    if target.key not in {lab.key for lab in taxonomy}:
        raise UnknownLabelError(f"label {target.key} not in taxonomy")
    variant = f" (variant: {target.disambiguator})" if target.disambiguator else ""
    return (
        "Review the RTL design above for one specific weakness.\n"
        f"Target weakness: {target.cwe_id}{variant}: {target.short_name}.\n"
        "Determine whether this specific vulnerability is present in the design.\n"
        "Answer in exactly this format:\n"
        "VERDICT: PRESENT or VERDICT: ABSENT\n"
        "RATIONALE: one short paragraph justifying the verdict."
    )


def _prompt_text(source: str, query: str) -> str:
    return f"```verilog\n{source}\n```\n\n{query}"


def _template_response(target: CweLabel, ground_truth: str) -> str:
    variant = f" (variant: {target.disambiguator})" if target.disambiguator else ""
    if ground_truth == "present":
        return (
            "VERDICT: PRESENT\n"
            f"RATIONALE: This design contains {target.cwe_id}{variant}: "
            f"{target.short_name}."
        )
    return (
        "VERDICT: ABSENT\n"
        f"RATIONALE: This design shows no evidence of {target.cwe_id}{variant}: "
        f"{target.short_name}."
    )


def _pick_other_label(design_id: str, own: CweLabel, taxonomy: tuple[CweLabel, ...]) -> CweLabel:
    """Stable pseudo-random non-matching query target for negative rows."""
    others = sorted((lab for lab in taxonomy if lab.key != own.key), key=lambda l: l.sort_key)
    if not others:
        raise DatasetError("taxonomy has no alternative label for a negative row")
    idx = int(hashlib.sha256(design_id.encode("utf-8")).hexdigest()[:8], 16)
    return others[idx % len(others)]


def build_pairs(
    store: CorpusStore,
    policy: str = "secure-counterpart",
    token_budget: int = TOKEN_BUDGET,
) -> list[InstructionPair]:
    """One positive row per vulnerable design, plus negatives per policy.

    secure-counterpart: the lineage's secure twin answers the same query
    with ABSENT; designs without a twin fall back to a non-matching query
    against themselves. cross-cwe: always the non-matching-query fallback.
    positives-only: no negatives.
    """
    if policy not in PAIRING_POLICIES:
        raise ConfigError(f"unknown pairing policy {policy!r}")
    if len(store) == 0:
        raise DatasetError("corpus is empty")
    taxonomy = store.taxonomy
    keys = {lab.key for lab in taxonomy}

    pairs: list[InstructionPair] = []

    def add(design, target: CweLabel, ground_truth: str) -> None:
        query = make_query(target, taxonomy)
        prompt = _prompt_text(design.source_text, query)
        response = _template_response(target, ground_truth)
        tokens = estimate_tokens(prompt) + estimate_tokens(response)
        row_id = f"{len(pairs):05d}_{design.design_id}_{target.slug}_{ground_truth}"
        pairs.append(InstructionPair(
            row_id=row_id,
            design_id=design.design_id,
            lineage_id=design.lineage_id,
            target_cwe=target,
            prompt_text=prompt,
            response_text=response,
            ground_truth=ground_truth,
            token_estimate=tokens,
            over_budget=tokens > token_budget,
        ))

    for rec in store:  # sorted by design_id, so row ids are stable
        if rec.label is None:
            continue
        if rec.label.key not in keys:
            raise UnknownLabelError(
                f"{rec.design_id}: label {rec.label.key} missing from taxonomy"
            )
        add(rec, rec.label, "present")
        if policy == "positives-only":
            continue
        counterpart = store.secure_counterpart(rec.lineage_id)
        if policy == "secure-counterpart" and counterpart is not None:
            add(counterpart, rec.label, "absent")
        else:
            add(rec, _pick_other_label(rec.design_id, rec.label, taxonomy), "absent")

    return pairs


# -------------------------------------------------------------- annotation


_ANNOTATOR_SYSTEM = (
    "You explain hardware security verdicts. Reply with one short paragraph "
    "of rationale, no verdict line, no markdown."
)


def annotate_explanations(
    pairs: list[InstructionPair], client: LlmClient
) -> list[InstructionPair]:
    """Replace template rationales with drafted ones.

    The verdict line is never touched; a failed request leaves the template
    in place. Rows already annotated pass through unchanged.
    """
    out: list[InstructionPair] = []
    failures = 0
    for pair in pairs:
        if pair.annotation == "llm":
            out.append(pair)
            continue
        verdict_line, _, _ = pair.response_text.partition("\n")
        request = CompletionRequest(
            system_text=_ANNOTATOR_SYSTEM,
            user_text=(
                f"{pair.prompt_text}\n\n"
                f"The correct verdict is {pair.ground_truth.upper()}. Explain why "
                "in one short paragraph grounded in the design text."
            ),
            sampling=SamplingParams(temperature=0.3, top_p=0.9),
        )
        try:
            rationale = client.complete(request).text.strip()
        except BackendError as exc:
            failures += 1
            log.warning("annotation failed for %s: %s", pair.row_id, exc)
            out.append(pair)
            continue
        # a drafted rationale must not smuggle in a second verdict line
        rationale = " ".join(
            line for line in rationale.splitlines() if not line.strip().upper().startswith("VERDICT")
        ).strip()
        if not rationale:
            out.append(pair)
            continue
        response = f"{verdict_line}\nRATIONALE: {rationale}"
        tokens = estimate_tokens(pair.prompt_text) + estimate_tokens(response)
        out.append(replace(
            pair,
            response_text=response,
            annotation="llm",
            token_estimate=tokens,
            over_budget=tokens > TOKEN_BUDGET,
        ))
    if failures:
        log.warning("%d of %d rows kept template rationales", failures, len(pairs))
    return out


# ------------------------------------------------------------------ splits


@dataclass(frozen=True)
class SplitAssignment:
    mapping: dict[str, str]  # lineage_id -> split name
    ratios: tuple[float, float, float]
    seed: int

    def split_of(self, lineage_id: str) -> str:
        try:
            return self.mapping[lineage_id]
        except KeyError:
            raise DatasetError(f"lineage {lineage_id} has no split assignment") from None

    def to_dict(self) -> dict:
        return {
            "ratios": list(self.ratios),
            "seed": self.seed,
            "mapping": dict(sorted(self.mapping.items())),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplitAssignment":
        return cls(
            mapping=dict(data["mapping"]),
            ratios=tuple(data["ratios"]),
            seed=data["seed"],
        )


def _apportion(n: int, ratios: tuple[float, float, float]) -> list[int]:
    """Largest-remainder seat counts; every split gets at least one lineage
    when n allows it."""
    quotas = [n * r for r in ratios]
    counts = [int(q) for q in quotas]
    remainder = n - sum(counts)
    by_frac = sorted(range(3), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in range(remainder):
        counts[by_frac[i % 3]] += 1
    if n >= 3:
        while min(counts) == 0:
            counts[counts.index(max(counts))] -= 1
            counts[counts.index(min(counts))] += 1
    return counts


def split_by_lineage(
    lineages: CorpusStore | Sequence[str],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitAssignment:
    """Shuffle lineages by seed and apportion them across train/validation/
    test at lineage granularity. Every member design inherits its lineage's
    split, which is what keeps test designs unseen during training."""
    ids = sorted(lineages.lineage_ids() if isinstance(lineages, CorpusStore) else lineages)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"split ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-6:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    if len(ids) < 3:
        raise DatasetError(
            f"need at least 3 lineages for a train/validation/test split, have {len(ids)}"
        )
    shuffled = list(ids)
    random.Random(seed).shuffle(shuffled)
    counts = _apportion(len(ids), tuple(ratios))
    mapping: dict[str, str] = {}
    cursor = 0
    for split_name, count in zip(SPLIT_NAMES, counts):
        for lineage_id in shuffled[cursor : cursor + count]:
            mapping[lineage_id] = split_name
        cursor += count
    return SplitAssignment(mapping=mapping, ratios=tuple(ratios), seed=seed)


# ---------------------------------------------------------------- emission


def emit_dataset(
    pairs: list[InstructionPair],
    assignment: SplitAssignment,
    out_dir: Path | str,
    extra_stats: dict | None = None,
) -> dict:
    """Write one line-delimited record file per split plus a stats file.

    Deterministic: rows sorted by row_id, canonical JSON, no timestamps, so
    re-emission of equal inputs is byte-identical.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    assigned = [replace(p, split=assignment.split_of(p.lineage_id)) for p in pairs]
    assigned.sort(key=lambda p: p.row_id)

    stats: dict = {
        "rows_total": len(assigned),
        "per_split": {},
        "per_cwe": {},
        "per_ground_truth": {"present": 0, "absent": 0},
        "over_budget": 0,
        "token_budget": TOKEN_BUDGET,
    }
    if extra_stats:
        stats.update(extra_stats)

    for split_name in SPLIT_NAMES:
        rows = [p for p in assigned if p.split == split_name]
        path = out_dir / f"{split_name}.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for pair in rows:
                fh.write(json.dumps(pair.to_json_dict(), sort_keys=True) + "\n")
        split_stats = {
            "rows": len(rows),
            "present": sum(1 for p in rows if p.ground_truth == "present"),
            "absent": sum(1 for p in rows if p.ground_truth == "absent"),
            "over_budget": sum(1 for p in rows if p.over_budget),
        }
        stats["per_split"][split_name] = split_stats

    for pair in assigned:
        slug = pair.target_cwe.slug
        per_cwe = stats["per_cwe"].setdefault(slug, {"present": 0, "absent": 0})
        per_cwe[pair.ground_truth] += 1
        stats["per_ground_truth"][pair.ground_truth] += 1
        if pair.over_budget:
            stats["over_budget"] += 1

    (out_dir / "stats.json").write_text(
        json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "split_assignment.json").write_text(
        json.dumps(assignment.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return stats


def load_split(path: Path | str) -> list[InstructionPair]:
    """Read one emitted split file back into rows."""
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(InstructionPair.from_json_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DatasetError(f"{path}:{i + 1}: malformed dataset row ({exc})") from exc
    return rows


# --------------------------------------------------------- training config


@dataclass(frozen=True)
class TrainingConfig:
    """Fine-tuning hyperparameters handed to the external trainer. The
    defaults are the pipeline's reference recipe; overrides are logged so a
    run can always be reconstructed."""

    lora_rank: int = 128
    lora_alpha: int = 256
    lora_dropout: float = 0.1
    quantization: str = "nf4-4bit"
    compute_dtype: str = "float16"
    learning_rate: float = 2e-6
    batch_size: int = 4
    grad_accum_steps: int = 1
    epochs: int = 3
    optimizer: str = "paged-adamw-32bit"
    weight_decay: float = 0.001
    max_grad_norm: float = 0.3
    lr_schedule: str = "constant"
    warmup_ratio: float = 0.03
    gradient_checkpointing: bool = True
    max_seq_len: int = 512

    def as_items(self) -> list[tuple[str, object]]:
        return [(name, getattr(self, name)) for name in self.__dataclass_fields__]


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def emit_training_config(
    out_path: Path | str, overrides: dict[str, object] | None = None
) -> TrainingConfig:
    """Write the flat key-value training config. Unknown override keys are
    rejected; applied overrides are logged."""
    overrides = overrides or {}
    known = set(TrainingConfig.__dataclass_fields__)
    for key in overrides:
        if key not in known:
            raise ConfigError(f"unknown training-config field {key!r}")
    config = TrainingConfig(**overrides)
    for key, value in sorted(overrides.items()):
        log.info("training-config override: %s = %r (default %r)",
                 key, value, getattr(TrainingConfig(), key))
    lines = [f"{name} = {_format_value(value)}" for name, value in config.as_items()]
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return config


def parse_training_config(path: Path | str) -> TrainingConfig:
    """Round-trip reader for emitted training configs."""
    fields_map = TrainingConfig.__dataclass_fields__
    values: dict[str, object] = {}
    for i, raw_line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or key not in fields_map:
            raise ConfigError(f"{path}:{i + 1}: unknown training-config line {raw_line!r}")
        ftype = fields_map[key].type
        if ftype == "bool":
            if raw not in ("true", "false"):
                raise ConfigError(f"{path}:{i + 1}: {key} must be true or false")
            values[key] = raw == "true"
        elif ftype == "int":
            values[key] = int(raw)
        elif ftype == "float":
            values[key] = float(raw)
        else:
            values[key] = raw
    return TrainingConfig(**values)
