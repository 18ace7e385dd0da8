"""Shared fixtures: handcrafted RTL modules, seeded corpora, mock clients."""

from __future__ import annotations

from pathlib import Path

import pytest

from vulnforge import BUILTIN_TAXONOMY, CorpusStore, DesignRecord
from vulnforge.llm import LlmClient, MockBackend, MockRule
from vulnforge.taxonomy import lookup

FIXTURE_DIR = Path(__file__).parent / "fixtures"

FIXED_CLOCK = "2024-01-01T00:00:00+00:00"


def fixture_source(name: str) -> str:
    return (FIXTURE_DIR / name).read_text(encoding="utf-8")


# (file, cwe_id, disambiguator) for the labeled parser/gate fixtures
LABELED_FIXTURES = (
    ("csr_unit.v", "CWE-310", "csr-access"),
    ("aes_key_store.v", "CWE-321", None),
    ("jtag_lock.v", "CWE-1244", None),
    ("lock_ctrl.v", "CWE-1245", None),
    ("dma_gate.v", "CWE-284", None),
)


def make_base_design(i: int) -> str:
    """Synthetic base module family for campaign fixtures. Internal signal
    names are renameable without touching the interface."""
    return f"""\
module unit_{i:02d} (
    input  wire clk,
    input  wire rst_n,
    input  wire [7:0] din,
    output reg  [7:0] dout
);
    reg [7:0] acc_{i};
    reg [7:0] mix_{i};
    always @(posedge clk or negedge rst_n) begin
        if (!rst_n) begin
            acc_{i} <= 8'h00;
            mix_{i} <= 8'h{i:02x};
        end else begin
            acc_{i} <= acc_{i} + din;
            mix_{i} <= acc_{i} ^ 8'ha5;
            dout <= mix_{i};
        end
    end
endmodule
"""


def build_campaign_store(root: Path, n_designs: int = 10) -> CorpusStore:
    store = CorpusStore.create(root, clock=lambda: FIXED_CLOCK)
    for i in range(n_designs):
        store.add_design(DesignRecord(
            design_id=f"unit_{i:02d}",
            lineage_id=f"unit_{i:02d}",
            source_text=make_base_design(i),
            label=BUILTIN_TAXONOMY[i % len(BUILTIN_TAXONOMY)],
            origin="benchmark",
        ))
    return store


def build_fixture_store(root: Path, with_golden: bool = True) -> CorpusStore:
    """Corpus of the five labeled handcrafted modules, one with a secure
    counterpart."""
    store = CorpusStore.create(root, clock=lambda: FIXED_CLOCK)
    for filename, cwe_id, disambiguator in LABELED_FIXTURES:
        design_id = filename[:-2]
        store.add_design(DesignRecord(
            design_id=design_id,
            lineage_id=design_id,
            source_text=fixture_source(filename),
            label=lookup(cwe_id, disambiguator),
            origin="benchmark",
        ))
    if with_golden:
        store.add_design(DesignRecord(
            design_id="csr_unit_golden",
            lineage_id="csr_unit",
            source_text=fixture_source("csr_unit_golden.v"),
            label=None,
            origin="secure_counterpart",
        ))
    return store


def instant_client(backend: MockBackend, **kwargs) -> LlmClient:
    kwargs.setdefault("sleeper", lambda s: None)
    return LlmClient(backend, **kwargs)


def renaming_client(**kwargs) -> LlmClient:
    return instant_client(
        MockBackend([MockRule(match="REWRITE DIRECTIVE", transform="rename_signals")]),
        **kwargs,
    )


@pytest.fixture
def campaign_store(tmp_path):
    return build_campaign_store(tmp_path / "corpus")


@pytest.fixture
def fixture_store(tmp_path):
    return build_fixture_store(tmp_path / "corpus")
