"""Per-design specification documents.

Each design gets a sectioned plain-text spec: baseline functionality,
registers, I/O ports, and (for labeled designs) vulnerability
characteristics. The document anchors replication prompts, so rendering is
byte-deterministic. Prose is template-filled by default; an LLM client can
draft the functionality and register-role text when available, and any
client failure falls back to the template rather than aborting.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .errors import BackendError
from .llm import CompletionRequest, LlmClient
from .rtl import ModuleInfo, PortDecl, extract_register_names, parse_module
from .sampling import SamplingParams
from .store import DesignRecord

log = logging.getLogger(__name__)

# spec drafting wants near-greedy decoding, independent of campaign sampling
_DRAFT_SAMPLING = SamplingParams(temperature=0.2, top_p=0.9)

_SYSTEM_TEXT = (
    "You are a hardware documentation assistant. Answer with plain prose, "
    "no markdown, no code."
)


@dataclass(frozen=True)
class SpecDoc:
    design_id: str
    module_name: str
    baseline_function: str
    registers: tuple[tuple[str, str], ...]  # (name, role prose)
    ports: tuple[tuple[PortDecl, str], ...]  # (decl, role prose)
    vulnerability: str | None  # None for secure designs
    provenance: str = "template_only"  # template_only | llm_enriched
    parameters: tuple[tuple[str, str], ...] = field(default=())


def _port_role(port: PortDecl) -> str:
    kind = {"input": "input", "output": "output", "inout": "bidirectional"}[port.direction]
    if port.width is None:
        return f"single-bit {kind} signal"
    return f"{port.width_text} {kind} bus"


def _template_baseline(info: ModuleInfo) -> str:
    bits = [
        f"Module {info.module_name} exposes {len(info.ports)} port(s)",
    ]
    if info.parameters:
        names = ", ".join(name for name, _ in info.parameters)
        bits.append(f"and is parameterized by {names}")
    text = " ".join(bits) + ". "
    text += (
        "It implements the behavior expressed in its RTL body; consult the "
        "source below for the authoritative definition."
    )
    return text


def _draft_baseline(client: LlmClient, record: DesignRecord, info: ModuleInfo) -> str:
    request = CompletionRequest(
        system_text=_SYSTEM_TEXT,
        user_text=(
            f"Summarize the baseline functionality of Verilog module "
            f"{info.module_name} in two or three sentences.\n\n"
            f"```verilog\n{record.source_text}\n```"
        ),
        sampling=_DRAFT_SAMPLING,
    )
    return client.complete(request).text.strip()


def _draft_register_roles(
    client: LlmClient, record: DesignRecord, names: list[str]
) -> dict[str, str]:
    request = CompletionRequest(
        system_text=_SYSTEM_TEXT,
        user_text=(
            "For each register listed below, describe its role in one short "
            "line formatted exactly as 'name: role'.\n"
            f"Registers: {', '.join(names)}\n\n"
            f"```verilog\n{record.source_text}\n```"
        ),
        sampling=_DRAFT_SAMPLING,
    )
    roles: dict[str, str] = {}
    for line in client.complete(request).text.splitlines():
        m = re.match(r"^\s*[-*]?\s*([A-Za-z_][A-Za-z0-9_$]*)\s*:\s*(.+?)\s*$", line)
        if m and m.group(1) in names:
            roles[m.group(1)] = m.group(2)
    return roles


def _vulnerability_prose(record: DesignRecord, notes: str | None) -> str:
    label = record.label
    variant = f" (variant: {label.disambiguator})" if label.disambiguator else ""
    prose = (
        f"This design carries a known weakness, {label.cwe_id}{variant}: "
        f"{label.short_name}. A detector must flag this design when queried "
        f"for {label.cwe_id}."
    )
    if notes:
        prose += "\n" + notes.strip()
    return prose


def generate_spec(
    record: DesignRecord,
    client: LlmClient | None = None,
    notes: str | None = None,
) -> SpecDoc:
    """Build the spec document for one design.

    Parse failures propagate (an unparseable design cannot be specified).
    Client failures downgrade to template prose with a warning.
    """
    info = parse_module(record.source_text)
    register_names = extract_register_names(record.source_text, info)

    baseline = _template_baseline(info)
    roles = {name: "storage element updated by the module body" for name in register_names}
    provenance = "template_only"

    if client is not None:
        try:
            baseline = _draft_baseline(client, record, info)
            if register_names:
                roles.update(_draft_register_roles(client, record, register_names))
            provenance = "llm_enriched"
        except BackendError as exc:
            log.warning(
                "spec enrichment for %s failed (%s); falling back to template",
                record.design_id, exc,
            )
            baseline = _template_baseline(info)
            provenance = "template_only"

    return SpecDoc(
        design_id=record.design_id,
        module_name=info.module_name,
        baseline_function=baseline,
        registers=tuple((name, roles[name]) for name in register_names),
        ports=tuple((port, _port_role(port)) for port in info.ports),
        vulnerability=_vulnerability_prose(record, notes) if record.label else None,
        provenance=provenance,
        parameters=info.parameters,
    )


def render_spec(doc: SpecDoc) -> str:
    """Deterministic sectioned text. Fixed heading order; the vulnerability
    heading is omitted entirely for secure designs."""
    lines: list[str] = [
        f"SPECIFICATION: {doc.design_id}",
        f"Module: {doc.module_name}",
        f"Provenance: {doc.provenance}",
        "",
        "== Baseline Functionality ==",
        doc.baseline_function,
        "",
        "== Registers ==",
    ]
    if doc.registers:
        lines.extend(f"- {name}: {role}" for name, role in doc.registers)
    else:
        lines.append("- none identified")
    lines.extend(["", "== I/O Ports =="])
    if doc.ports:
        lines.extend(
            f"- {port.name} ({port.direction}, {port.width_text}): {role}"
            for port, role in doc.ports
        )
    else:
        lines.append("- none")
    if doc.vulnerability is not None:
        lines.extend(["", "== Vulnerability Characteristics ==", doc.vulnerability])
    return "\n".join(lines) + "\n"
