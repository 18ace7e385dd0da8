"""vulnforge: forge a labeled RTL vulnerability corpus with LLM replication
and measure per-CWE detection accuracy of candidate models."""

__version__ = "0.1.0"

from .taxonomy import BUILTIN_TAXONOMY, CweLabel, lookup
from .store import CorpusStore, DesignRecord
from .sampling import SamplingParams
from .rtl import ModuleInfo, PortDecl, TokenStream, parse_module, port_signature, tokenize
from .specdoc import SpecDoc, generate_spec, render_spec
from .llm import (
    CompletionRequest,
    CompletionResult,
    HttpBackend,
    HttpBackendConfig,
    LlmClient,
    MockBackend,
    MockRule,
    estimate_tokens,
)
from .replicate import (
    CampaignConfig,
    CampaignSummary,
    CodingStyle,
    DiversityReport,
    FidelityReport,
    build_replication_prompt,
    check_diversity,
    check_fidelity,
    extract_code,
    jaccard,
    run_campaign,
    sampling_schedule,
    token_ngrams,
)
from .dataset import (
    InstructionPair,
    SplitAssignment,
    TrainingConfig,
    annotate_explanations,
    build_pairs,
    emit_dataset,
    emit_training_config,
    load_split,
    make_query,
    parse_training_config,
    split_by_lineage,
)
from .evaluate import (
    AccuracyReport,
    Verdict,
    VerdictLog,
    compute_accuracy,
    parse_verdict,
    percent_tenths,
    render_report,
    run_eval,
)

__all__ = [
    "__version__",
    "BUILTIN_TAXONOMY", "CweLabel", "lookup",
    "CorpusStore", "DesignRecord", "SamplingParams",
    "ModuleInfo", "PortDecl", "TokenStream",
    "parse_module", "port_signature", "tokenize",
    "SpecDoc", "generate_spec", "render_spec",
    "CompletionRequest", "CompletionResult", "HttpBackend", "HttpBackendConfig",
    "LlmClient", "MockBackend", "MockRule", "estimate_tokens",
    "CampaignConfig", "CampaignSummary", "CodingStyle",
    "DiversityReport", "FidelityReport",
    "build_replication_prompt", "check_diversity", "check_fidelity",
    "extract_code", "jaccard", "run_campaign", "sampling_schedule", "token_ngrams",
    "InstructionPair", "SplitAssignment", "TrainingConfig",
    "annotate_explanations", "build_pairs", "emit_dataset",
    "emit_training_config", "load_split", "make_query",
    "parse_training_config", "split_by_lineage",
    "AccuracyReport", "Verdict", "VerdictLog",
    "compute_accuracy", "parse_verdict", "percent_tenths",
    "render_report", "run_eval",
]
