"""Pipeline configuration: one YAML file drives every subcommand.

Loading is strict: unknown keys and out-of-range values fail immediately
with the dotted key path, so a typo surfaces before any backend call or
corpus write. Relative paths are resolved against the config file's
directory, which keeps configs relocatable.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dataset import PAIRING_POLICIES
from .errors import ConfigError
from .llm import HttpBackend, HttpBackendConfig, LlmClient, MockBackend
from .replicate import CampaignConfig, style_directive

log = logging.getLogger(__name__)


def _check_keys(section: dict, known: set[str], where: str) -> None:
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}: unknown key")


def _need(section: dict, key: str, where: str):
    if key not in section or section[key] is None:
        raise ConfigError(f"{where}.{key}: required key is missing")
    return section[key]


@dataclass
class BackendSettings:
    kind: str  # mock | http
    model: str = "default"
    script: Path | None = None  # mock
    endpoint: str | None = None  # http
    credential_env: str | None = None  # http
    rate_per_second: float | None = None
    retry_budget: int = 2
    max_in_flight: int = 4
    base_delay: float = 0.5
    timeout: float = 60.0

    @classmethod
    def parse(cls, section: dict, where: str, base_dir: Path) -> "BackendSettings":
        known = {"kind", "model", "script", "endpoint", "credential_env",
                 "rate_per_second", "retry_budget", "max_in_flight",
                 "base_delay", "timeout"}
        _check_keys(section, known, where)
        kind = _need(section, "kind", where)
        if kind not in ("mock", "http"):
            raise ConfigError(f"{where}.kind: must be 'mock' or 'http', got {kind!r}")
        settings = cls(
            kind=kind,
            model=section.get("model", "default"),
            script=(base_dir / section["script"]) if section.get("script") else None,
            endpoint=section.get("endpoint"),
            credential_env=section.get("credential_env"),
            rate_per_second=section.get("rate_per_second"),
            retry_budget=int(section.get("retry_budget", 2)),
            max_in_flight=int(section.get("max_in_flight", 4)),
            base_delay=float(section.get("base_delay", 0.5)),
            timeout=float(section.get("timeout", 60.0)),
        )
        if kind == "mock" and settings.script is None:
            raise ConfigError(f"{where}.script: mock backend needs a script file")
        if kind == "http":
            if not settings.endpoint:
                raise ConfigError(f"{where}.endpoint: http backend needs an endpoint URL")
            if not settings.credential_env:
                raise ConfigError(
                    f"{where}.credential_env: http backend needs the name of the "
                    "environment variable holding the credential"
                )
        if settings.retry_budget < 0:
            raise ConfigError(f"{where}.retry_budget: must be >= 0")
        return settings

    def build_client(self, sleeper=None) -> LlmClient:
        if self.kind == "mock":
            backend = MockBackend.from_script(self.script)
        else:
            backend = HttpBackend(HttpBackendConfig(
                endpoint=self.endpoint,
                model_name=self.model,
                credential_env=self.credential_env,
                timeout=self.timeout,
            ))
        return LlmClient(
            backend,
            retry_budget=self.retry_budget,
            base_delay=self.base_delay,
            rate_per_second=self.rate_per_second,
            max_in_flight=self.max_in_flight,
            sleeper=sleeper,
        )


@dataclass
class ReplicationSettings:
    styles: list[str]
    replicas_per_design: int = 4
    temperature_lo: float = 0.6
    temperature_hi: float = 1.5
    top_p: float = 0.9
    diversity_threshold: float = 0.85
    regen_budget: int = 2
    seed: int = 0
    use_judge: bool = False
    max_output_tokens: int = 4096

    @classmethod
    def parse(cls, section: dict, where: str) -> "ReplicationSettings":
        known = {"styles", "replicas_per_design", "temperature_range", "top_p",
                 "diversity_threshold", "regen_budget", "seed", "use_judge",
                 "max_output_tokens"}
        _check_keys(section, known, where)
        styles = section.get("styles") or [
            "parameterized", "single-process-fsm", "dual-process-fsm", "signal-renaming"
        ]
        for style in styles:
            try:
                style_directive(style)
            except ConfigError:
                raise ConfigError(f"{where}.styles: unregistered style {style!r}") from None
        temp_range = section.get("temperature_range", [0.6, 1.5])
        if not (isinstance(temp_range, (list, tuple)) and len(temp_range) == 2):
            raise ConfigError(f"{where}.temperature_range: expected [lo, hi]")
        settings = cls(
            styles=list(styles),
            replicas_per_design=int(section.get("replicas_per_design", 4)),
            temperature_lo=float(temp_range[0]),
            temperature_hi=float(temp_range[1]),
            top_p=float(section.get("top_p", 0.9)),
            diversity_threshold=float(section.get("diversity_threshold", 0.85)),
            regen_budget=int(section.get("regen_budget", 2)),
            seed=int(section.get("seed", 0)),
            use_judge=bool(section.get("use_judge", False)),
            max_output_tokens=int(section.get("max_output_tokens", 4096)),
        )
        try:
            settings.to_campaign_config().validate()
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        return settings

    def to_campaign_config(self) -> CampaignConfig:
        return CampaignConfig(
            styles=list(self.styles),
            replicas_per_design=self.replicas_per_design,
            temperature_lo=self.temperature_lo,
            temperature_hi=self.temperature_hi,
            top_p=self.top_p,
            diversity_threshold=self.diversity_threshold,
            regen_budget=self.regen_budget,
            seed=self.seed,
            max_output_tokens=self.max_output_tokens,
            use_judge=self.use_judge,
        )


@dataclass
class DatasetSettings:
    policy: str = "secure-counterpart"
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    token_budget: int = 512
    out_dir: Path = Path("dataset")
    annotate: bool = False

    @classmethod
    def parse(cls, section: dict, where: str, base_dir: Path) -> "DatasetSettings":
        known = {"policy", "ratios", "seed", "token_budget", "out_dir", "annotate"}
        _check_keys(section, known, where)
        policy = section.get("policy", "secure-counterpart")
        if policy not in PAIRING_POLICIES:
            raise ConfigError(
                f"{where}.policy: {policy!r} is not one of {list(PAIRING_POLICIES)}"
            )
        ratios = section.get("ratios", [0.8, 0.1, 0.1])
        if not (isinstance(ratios, (list, tuple)) and len(ratios) == 3):
            raise ConfigError(f"{where}.ratios: expected three numbers")
        ratios = tuple(float(r) for r in ratios)
        if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
            raise ConfigError(f"{where}.ratios: must be positive and sum to 1")
        token_budget = int(section.get("token_budget", 512))
        if token_budget <= 0:
            raise ConfigError(f"{where}.token_budget: must be positive")
        return cls(
            policy=policy,
            ratios=ratios,
            seed=int(section.get("seed", 0)),
            token_budget=token_budget,
            out_dir=base_dir / section.get("out_dir", "dataset"),
            annotate=bool(section.get("annotate", False)),
        )


@dataclass
class TrainingSettings:
    out_path: Path = Path("train_config.txt")
    overrides: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, section: dict, where: str, base_dir: Path) -> "TrainingSettings":
        _check_keys(section, {"out_path", "overrides"}, where)
        overrides = section.get("overrides") or {}
        if not isinstance(overrides, dict):
            raise ConfigError(f"{where}.overrides: expected a mapping")
        return cls(
            out_path=base_dir / section.get("out_path", "train_config.txt"),
            overrides=dict(overrides),
        )


@dataclass
class EvalModelSettings:
    name: str
    backend: BackendSettings


@dataclass
class EvalSettings:
    models: list[EvalModelSettings]
    test_path: Path
    log_path: Path
    report_dir: Path

    @classmethod
    def parse(cls, section: dict, where: str, base_dir: Path) -> "EvalSettings":
        known = {"models", "test_path", "log_path", "report_dir"}
        _check_keys(section, known, where)
        raw_models = _need(section, "models", where)
        if not isinstance(raw_models, list) or not raw_models:
            raise ConfigError(f"{where}.models: expected a non-empty list")
        models = []
        for i, entry in enumerate(raw_models):
            model_where = f"{where}.models[{i}]"
            if not isinstance(entry, dict):
                raise ConfigError(f"{model_where}: expected a mapping")
            name = _need(entry, "name", model_where)
            backend_section = {k: v for k, v in entry.items() if k != "name"}
            models.append(EvalModelSettings(
                name=name,
                backend=BackendSettings.parse(backend_section, model_where, base_dir),
            ))
        if len({m.name for m in models}) != len(models):
            raise ConfigError(f"{where}.models: duplicate model names")
        return cls(
            models=models,
            test_path=base_dir / section.get("test_path", "dataset/test.jsonl"),
            log_path=base_dir / section.get("log_path", "runs/verdicts.jsonl"),
            report_dir=base_dir / section.get("report_dir", "report"),
        )


@dataclass
class PipelineConfig:
    corpus_path: Path
    run_log_dir: Path
    corpus_created_at: str | None
    backend: BackendSettings | None
    judge_backend: BackendSettings | None
    replication: ReplicationSettings | None
    dataset: DatasetSettings | None
    training: TrainingSettings
    eval_settings: EvalSettings | None
    digest: str
    source_path: Path

    def require_backend(self) -> BackendSettings:
        if self.backend is None:
            raise ConfigError("backend: section is required for this command")
        return self.backend

    def require_replication(self) -> ReplicationSettings:
        if self.replication is None:
            raise ConfigError("replication: section is required for this command")
        return self.replication

    def require_dataset(self) -> DatasetSettings:
        if self.dataset is None:
            raise ConfigError("dataset: section is required for this command")
        return self.dataset

    def require_eval(self) -> EvalSettings:
        if self.eval_settings is None:
            raise ConfigError("eval: section is required for this command")
        return self.eval_settings

    def seeds(self) -> dict:
        out = {}
        if self.replication is not None:
            out["replication"] = self.replication.seed
        if self.dataset is not None:
            out["dataset"] = self.dataset.seed
        return out


_TOP_KEYS = {
    "corpus", "run_log_dir", "corpus_created_at", "backend", "judge_backend",
    "replication", "dataset", "training", "eval",
}


def load_config(path: Path | str) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    _check_keys(raw, _TOP_KEYS, "config")
    base_dir = path.parent

    def section(name: str) -> dict | None:
        value = raw.get(name)
        if value is None:
            return None
        if not isinstance(value, dict):
            raise ConfigError(f"{name}: expected a mapping")
        return value

    corpus = raw.get("corpus")
    if not corpus or not isinstance(corpus, str):
        raise ConfigError("corpus: required key naming the corpus directory")

    backend_sec = section("backend")
    judge_sec = section("judge_backend")
    replication_sec = section("replication")
    dataset_sec = section("dataset")
    training_sec = section("training") or {}
    eval_sec = section("eval")

    created_at = raw.get("corpus_created_at")
    if created_at is not None and not isinstance(created_at, str):
        raise ConfigError("corpus_created_at: expected an ISO timestamp string")

    return PipelineConfig(
        corpus_path=base_dir / corpus,
        run_log_dir=base_dir / raw.get("run_log_dir", "runs"),
        corpus_created_at=created_at,
        backend=BackendSettings.parse(backend_sec, "backend", base_dir) if backend_sec else None,
        judge_backend=BackendSettings.parse(judge_sec, "judge_backend", base_dir) if judge_sec else None,
        replication=ReplicationSettings.parse(replication_sec, "replication") if replication_sec else None,
        dataset=DatasetSettings.parse(dataset_sec, "dataset", base_dir) if dataset_sec else None,
        training=TrainingSettings.parse(training_sec, "training", base_dir),
        eval_settings=EvalSettings.parse(eval_sec, "eval", base_dir) if eval_sec else None,
        digest=hashlib.sha256(text.encode("utf-8")).hexdigest(),
        source_path=path,
    )
