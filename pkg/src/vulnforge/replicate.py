"""Design diversification: style-conditioned prompts, sampling sweeps, and
the fidelity/diversity gates that decide which generated replicas enter the
corpus.

A campaign walks every labeled base design through a fixed schedule of
(style, temperature) slots. Each slot's candidate must parse, keep the port
interface of its lineage root, optionally survive a vulnerability-retention
judge, and stay under the similarity ceiling against its already-accepted
siblings. Slots are processed in a fixed order so a scripted backend yields
byte-identical corpora run over run.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import (
    BackendError,
    BackendUnreachableError,
    CampaignError,
    CompletionFailedError,
    ConfigError,
    CredentialMissingError,
    RtlError,
)
from .llm import CompletionRequest, LlmClient
from .rtl import TokenStream, parse_module, port_signature, tokenize
from .sampling import SamplingParams
from .specdoc import SpecDoc, generate_spec, render_spec
from .store import CorpusStore, DesignRecord

log = logging.getLogger(__name__)

NGRAM_ORDER = 4
DEFAULT_DIVERSITY_THRESHOLD = 0.85


class CodingStyle(str, Enum):
    PARAMETERIZED = "parameterized"
    SINGLE_PROCESS_FSM = "single-process-fsm"
    DUAL_PROCESS_FSM = "dual-process-fsm"
    SIGNAL_RENAMING = "signal-renaming"


_STYLE_DIRECTIVES: dict[str, str] = {
    CodingStyle.PARAMETERIZED.value: (
        "Rewrite the module so that widths, depths, and magic constants are "
        "expressed through parameters and localparams. Do not add, remove, "
        "rename, or resize any port."
    ),
    CodingStyle.SINGLE_PROCESS_FSM.value: (
        "Restructure the control logic as a single-process finite state "
        "machine: one clocked always block holding state register, "
        "transitions, and outputs together. Do not add, remove, rename, or "
        "resize any port."
    ),
    CodingStyle.DUAL_PROCESS_FSM.value: (
        "Restructure the control logic as a dual-process finite state "
        "machine: one combinational always block for next-state and output "
        "logic, one clocked always block for the state register. Do not "
        "add, remove, rename, or resize any port."
    ),
    CodingStyle.SIGNAL_RENAMING.value: (
        "Rename every internal signal, register, and local identifier to a "
        "fresh, plausible name. Port names and the module name must stay "
        "exactly as they are."
    ),
}

REPLICATOR_ROLE = (
    "You are an expert RTL engineer. You rework Verilog modules into "
    "alternative implementations that preserve the documented functionality "
    "and the documented security weakness exactly, while changing how the "
    "code is written. Reply with one complete Verilog module in a fenced "
    "code block."
)


def register_style_template(name: str, directive: str) -> None:
    """Extend the style registry (campaign configs may name custom styles)."""
    _STYLE_DIRECTIVES[name] = directive


def style_directive(style: str | CodingStyle) -> str:
    key = style.value if isinstance(style, CodingStyle) else style
    try:
        return _STYLE_DIRECTIVES[key]
    except KeyError:
        raise ConfigError(f"no prompt template registered for style {key!r}") from None


def build_replication_prompt(spec: SpecDoc | str, source: str, style: str | CodingStyle) -> str:
    """Deterministic per (spec, source, style): role context, then the spec
    document, then the original source, then the style directive."""
    directive = style_directive(style)
    spec_text = spec if isinstance(spec, str) else render_spec(spec)
    return (
        "Below is the specification of a hardware IP and its current RTL "
        "implementation.\n\n"
        "--- SPECIFICATION ---\n"
        f"{spec_text}\n"
        "--- CURRENT IMPLEMENTATION ---\n"
        f"```verilog\n{source}\n```\n\n"
        "--- REWRITE DIRECTIVE ---\n"
        f"{directive}\n"
        "Preserve the module's functionality and its security weakness "
        "exactly as documented."
    )


def sampling_schedule(count: int, lo: float, hi: float, top_p: float = 0.9) -> list[SamplingParams]:
    """`count` temperatures evenly spaced across [lo, hi], fixed top_p."""
    if count < 1:
        raise ConfigError("schedule count must be >= 1")
    if not (0.0 < lo <= hi <= 2.0):
        raise ConfigError(f"temperature range [{lo}, {hi}] must satisfy 0 < lo <= hi <= 2")
    if count == 1:
        return [SamplingParams(temperature=lo, top_p=top_p)]
    step = (hi - lo) / (count - 1)
    return [SamplingParams(temperature=round(lo + i * step, 6), top_p=top_p) for i in range(count)]


# -------------------------------------------------------------------- gates


@dataclass(frozen=True)
class FidelityReport:
    parses: bool
    signature_match: bool
    vuln_retained: str = "unchecked"  # unchecked | judged_yes | judged_no
    notes: str = ""

    @property
    def accepted(self) -> bool:
        return self.parses and self.signature_match and self.vuln_retained != "judged_no"


@dataclass(frozen=True)
class DiversityReport:
    max_similarity: float
    nearest_neighbor: str | None
    threshold: float

    @property
    def accepted(self) -> bool:
        return self.max_similarity <= self.threshold


def token_ngrams(stream: TokenStream, n: int = NGRAM_ORDER) -> set[tuple[str, ...]]:
    """Contiguous n-gram set. Streams shorter than n contribute their whole
    token tuple as the single element, so short-but-different streams still
    compare as different; an empty stream gives the empty set."""
    toks = tuple(stream)
    if not toks:
        return set()
    if len(toks) < n:
        return {toks}
    return {toks[i : i + n] for i in range(len(toks) - n + 1)}


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union


def check_diversity(
    candidate: TokenStream,
    siblings: list[tuple[str, TokenStream]],
    threshold: float = DEFAULT_DIVERSITY_THRESHOLD,
) -> DiversityReport:
    """Max 4-gram Jaccard similarity against same-lineage siblings.
    `siblings` pairs each stream with its design id for reporting."""
    if not (0.0 < threshold <= 1.0):
        raise ConfigError(f"diversity threshold {threshold} outside (0, 1]")
    cand_grams = token_ngrams(candidate)
    worst, nearest = 0.0, None
    for sib_id, sib_stream in siblings:
        sim = jaccard(cand_grams, token_ngrams(sib_stream))
        if sim > worst or nearest is None:
            worst, nearest = sim, sib_id
    return DiversityReport(max_similarity=worst, nearest_neighbor=nearest, threshold=threshold)


_JUDGE_SYSTEM = (
    "You audit Verilog modules for a specific documented weakness. Answer "
    "with the single word YES or NO."
)


def check_fidelity(
    original: DesignRecord,
    candidate_source: str,
    judge: LlmClient | None = None,
) -> FidelityReport:
    """Structural gate: candidate parses and keeps the original's port
    interface. With a judge client, a yes/no retention query fills
    vuln_retained; judge trouble leaves it unchecked (structural gates are
    the hard floor, the judge is best-effort)."""
    try:
        original_info = parse_module(original.source_text)
    except RtlError as exc:
        raise CampaignError(f"lineage root {original.design_id} does not parse: {exc}") from exc
    try:
        candidate_info = parse_module(candidate_source)
    except RtlError as exc:
        return FidelityReport(parses=False, signature_match=False, notes=f"parse failure: {exc}")

    match = port_signature(candidate_info) == port_signature(original_info)
    retained, notes = "unchecked", ""
    if judge is not None and match and original.label is not None:
        question = (
            f"Does this module still contain the following vulnerability? "
            f"{original.label.describe()}.\n\n"
            f"```verilog\n{candidate_source}\n```\n"
            "Answer YES or NO."
        )
        try:
            answer = judge.complete(
                CompletionRequest(
                    system_text=_JUDGE_SYSTEM,
                    user_text=question,
                    sampling=SamplingParams(temperature=0.0, top_p=0.9),
                )
            ).text.strip().upper()
            if answer.startswith("YES"):
                retained = "judged_yes"
            elif answer.startswith("NO"):
                retained = "judged_no"
            else:
                notes = f"judge answer not yes/no: {answer[:40]!r}"
        except CompletionFailedError as exc:
            notes = f"judge unavailable: {exc}"
    return FidelityReport(parses=True, signature_match=match, vuln_retained=retained, notes=notes)


def extract_code(completion_text: str) -> str | None:
    """Largest fenced code block, else the largest module..endmodule span."""
    fences = re.findall(r"```(?:\w+)?\n(.*?)```", completion_text, re.DOTALL)
    if fences:
        return max(fences, key=len).strip("\n")
    spans = re.findall(r"\bmodule\b.*?\bendmodule\b", completion_text, re.DOTALL)
    if spans:
        return max(spans, key=len)
    return None


# ----------------------------------------------------------------- campaign


@dataclass
class CampaignConfig:
    styles: list[str] = field(
        default_factory=lambda: [s.value for s in CodingStyle]
    )
    replicas_per_design: int = 4
    temperature_lo: float = 0.6
    temperature_hi: float = 1.5
    top_p: float = 0.9
    diversity_threshold: float = DEFAULT_DIVERSITY_THRESHOLD
    regen_budget: int = 2  # extra generations per slot after a rejection
    seed: int = 0
    max_output_tokens: int = 4096
    use_judge: bool = False

    def validate(self) -> None:
        if not self.styles:
            raise ConfigError("campaign needs at least one style")
        for style in self.styles:
            style_directive(style)  # raises on unregistered styles
        if self.replicas_per_design < 1:
            raise ConfigError("replicas_per_design must be >= 1")
        if self.regen_budget < 0:
            raise ConfigError("regen_budget must be >= 0")
        sampling_schedule(self.replicas_per_design, self.temperature_lo,
                          self.temperature_hi, self.top_p)
        if not (0.0 < self.diversity_threshold <= 1.0):
            raise ConfigError(
                f"diversity threshold {self.diversity_threshold} outside (0, 1]"
            )


@dataclass
class CampaignSummary:
    requested: int = 0
    accepted: int = 0
    rejected_fidelity: int = 0
    rejected_diversity: int = 0
    llm_failures: int = 0
    halted: bool = False
    halt_reason: str = ""

    def as_dict(self) -> dict:
        return {
            "requested": self.requested,
            "accepted": self.accepted,
            "rejected_fidelity": self.rejected_fidelity,
            "rejected_diversity": self.rejected_diversity,
            "llm_failures": self.llm_failures,
            "halted": self.halted,
            "halt_reason": self.halt_reason,
        }

    @property
    def balanced(self) -> bool:
        return (
            self.accepted + self.rejected_fidelity
            + self.rejected_diversity + self.llm_failures
        ) == self.requested


class _RejectionLog:
    def __init__(self, path: Path | None):
        self.path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("", encoding="utf-8")

    def write(self, **fields) -> None:
        if self.path is None:
            return
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(fields, sort_keys=True) + "\n")


def _slot_prompt(spec_text: str, source: str, style: str, attempt: int) -> str:
    prompt = build_replication_prompt(spec_text, source, style)
    if attempt > 0:
        # vary the prompt so a regeneration is not a verbatim replay
        prompt += f"\n(Regeneration attempt {attempt}: produce a noticeably different rewrite.)"
    return prompt


def run_campaign(
    store: CorpusStore,
    config: CampaignConfig,
    client: LlmClient,
    judge: LlmClient | None = None,
    rejection_log_path: Path | None = None,
) -> CampaignSummary:
    """Replicate every labeled base design across the slot schedule.

    Slot i uses styles[i mod len(styles)] and the i-th scheduled
    temperature. Every slot lands in exactly one summary bucket, so the
    counts always sum to `requested`. A dead backend halts the campaign;
    everything accepted so far stays persisted and the untried slots are
    booked as llm_failures.
    """
    config.validate()
    bases = store.labeled_bases()
    if not bases:
        raise CampaignError("corpus has no labeled base designs to replicate")

    schedule = sampling_schedule(
        config.replicas_per_design, config.temperature_lo, config.temperature_hi, config.top_p
    )
    summary = CampaignSummary(requested=len(bases) * config.replicas_per_design)
    rejections = _RejectionLog(rejection_log_path)

    for base in bases:
        spec_text = store.load_spec(base.design_id)
        if spec_text is None:
            spec_text = render_spec(generate_spec(base))
            store.attach_spec(base.design_id, spec_text)

        siblings: list[tuple[str, TokenStream]] = [
            (rec.design_id, tokenize(rec.source_text))
            for rec in store.replicas_of(base.design_id)
        ]
        slot_base = len(siblings)  # resume-safe replica numbering

        for slot in range(config.replicas_per_design):
            if summary.halted:
                summary.llm_failures += 1
                rejections.write(
                    base=base.design_id, slot=slot, stage="llm",
                    reason="campaign halted", detail=summary.halt_reason,
                )
                continue

            style = config.styles[slot % len(config.styles)]
            sampling = schedule[slot]
            outcome: str | None = None
            detail = ""

            for attempt in range(config.regen_budget + 1):
                request = CompletionRequest(
                    system_text=REPLICATOR_ROLE,
                    user_text=_slot_prompt(spec_text, base.source_text, style, attempt),
                    sampling=sampling,
                    max_output_tokens=config.max_output_tokens,
                )
                try:
                    result = client.complete(request)
                except BackendError as exc:
                    dead_backend = isinstance(exc, CredentialMissingError) or (
                        isinstance(exc, CompletionFailedError)
                        and isinstance(exc.last, BackendUnreachableError)
                    )
                    if dead_backend:
                        summary.halted = True
                        summary.halt_reason = str(exc)
                        log.error("backend unusable; halting campaign: %s", exc)
                    outcome, detail = "llm", str(exc)
                    break

                code = extract_code(result.text)
                if code is None:
                    outcome, detail = "fidelity", "completion contained no code"
                    continue

                fidelity = check_fidelity(base, code, judge if config.use_judge else None)
                if not fidelity.accepted:
                    outcome = "fidelity"
                    detail = (
                        f"parses={fidelity.parses} signature_match={fidelity.signature_match} "
                        f"vuln_retained={fidelity.vuln_retained} {fidelity.notes}".strip()
                    )
                    continue

                stream = tokenize(code)
                diversity = check_diversity(stream, siblings, config.diversity_threshold)
                if not diversity.accepted:
                    outcome = "diversity"
                    detail = (
                        f"similarity {diversity.max_similarity:.3f} to "
                        f"{diversity.nearest_neighbor} over threshold {diversity.threshold}"
                    )
                    continue

                replica_id = f"{base.design_id}_r{slot_base + slot:02d}"
                store.add_design(DesignRecord(
                    design_id=replica_id,
                    lineage_id=base.design_id,
                    source_text=code if code.endswith("\n") else code + "\n",
                    label=base.label,
                    origin="replica",
                    style=style,
                    sampling=sampling,
                ))
                siblings.append((replica_id, stream))
                summary.accepted += 1
                outcome = "accepted"
                break

            if outcome == "accepted":
                continue
            if outcome == "llm":
                summary.llm_failures += 1
            elif outcome == "diversity":
                summary.rejected_diversity += 1
            else:
                summary.rejected_fidelity += 1
            rejections.write(
                base=base.design_id, slot=slot, style=style,
                temperature=sampling.temperature, stage=outcome, reason=detail,
            )

    log.info(
        "campaign done: %d requested, %d accepted, %d fidelity-rejected, "
        "%d diversity-rejected, %d llm failures",
        summary.requested, summary.accepted, summary.rejected_fidelity,
        summary.rejected_diversity, summary.llm_failures,
    )
    return summary
