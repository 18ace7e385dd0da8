"""Chat-completion abstraction: remote HTTP endpoints plus a deterministic
scriptable mock backend, with retries, rate limiting, and usage accounting.

Credentials come from an environment variable named in the backend config.
The credential value must never reach logs or persisted artifacts; only the
variable's *name* may be mentioned anywhere.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol

import yaml

from .errors import (
    BackendUnreachableError,
    CompletionFailedError,
    ConfigError,
    CredentialMissingError,
    PermanentBackendError,
    RequestTooLargeError,
    TransientBackendError,
)
from .rtl import VERILOG_KEYWORDS, parse_module
from .sampling import SamplingParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompletionRequest:
    system_text: str
    user_text: str
    sampling: SamplingParams
    max_output_tokens: int = 2048
    model_name: str = "default"

    def __post_init__(self):
        if not self.system_text or not self.user_text:
            raise ValueError("system_text and user_text must be non-empty")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    finish_reason: str  # stop | length | error
    usage: tuple[int, int]  # (input_tokens, output_tokens)
    latency: float
    attempt_count: int = 1

    def __post_init__(self):
        if self.usage[0] < 0 or self.usage[1] < 0:
            raise ValueError("usage counts must be non-negative")
        if self.attempt_count < 1:
            raise ValueError("attempt_count must be >= 1")


def estimate_tokens(text: str) -> int:
    """Budget-flagging token estimate, not tokenizer parity.

    Word runs (identifier characters) count ceil(len/8) with a floor of 1;
    every other non-space character counts 1. Monotone under prefixing.
    """
    total = 0
    for piece in re.findall(r"[A-Za-z0-9_]+|[^\sA-Za-z0-9_]", text):
        if re.match(r"[A-Za-z0-9_]", piece):
            total += max(1, (len(piece) + 7) // 8)
        else:
            total += 1
    return total


class Backend(Protocol):
    name: str

    def complete_once(self, request: CompletionRequest) -> CompletionResult: ...


# --------------------------------------------------------------------- mock


_TRANSFORMS = (
    "echo_code",
    "perturb_comments",
    "rename_signals",
    "rename_port",
    "drop_module",
)


@dataclass
class MockRule:
    """One scripted behavior: when `match` (regex, searched over the user
    text) hits and the `times` budget is not exhausted, produce the response,
    apply the transform, or raise the failure."""

    match: str
    response: str | None = None
    transform: str | None = None
    failure: str | None = None  # transient | permanent | unreachable
    status: int | None = None
    times: int | None = None  # remaining budget; None = unlimited

    def __post_init__(self):
        modes = [m for m in (self.response, self.transform, self.failure) if m is not None]
        if len(modes) != 1:
            raise ConfigError(
                f"mock rule {self.match!r} needs exactly one of response/transform/failure"
            )
        if self.transform is not None and self.transform not in _TRANSFORMS:
            raise ConfigError(f"unknown mock transform {self.transform!r}")
        if self.failure is not None and self.failure not in ("transient", "permanent", "unreachable"):
            raise ConfigError(f"unknown mock failure kind {self.failure!r}")


def _extract_prompt_code(user_text: str) -> str | None:
    m = re.search(r"```(?:\w+)?\n(.*?)```", user_text, re.DOTALL)
    return m.group(1) if m else None


def _rename_suffix(user_text: str, sampling: SamplingParams) -> str:
    seed = f"{user_text}|{sampling.temperature:.4f}|{sampling.top_p:.4f}"
    return hashlib.sha256(seed.encode("utf-8")).hexdigest()[:6]


def _rename_internal_signals(source: str, suffix: str) -> str:
    """Rename every non-port, non-keyword identifier to <name>_<suffix>.

    Port and module names are preserved so the rewrite passes the interface
    gate while changing the token stream.
    """
    info = parse_module(source)
    keep = {p.name for p in info.ports} | {info.module_name}
    keep |= {name for name, _ in info.parameters}

    def sub(m: re.Match) -> str:
        word = m.group(0)
        if word in VERILOG_KEYWORDS or word in keep or word.startswith("$"):
            return word
        return f"{word}_{suffix}"

    # (?<!') keeps based-literal payloads like 8'hdead_beef intact
    return re.sub(r"(?<!['$\w])[A-Za-z_][A-Za-z0-9_$]*", sub, source)


def _rename_one_port(source: str) -> str:
    info = parse_module(source)
    if not info.ports:
        return source
    victim = info.ports[0].name
    return re.sub(rf"(?<![\w$]){re.escape(victim)}(?![\w$])", victim + "_x", source)


def _apply_transform(kind: str, request: CompletionRequest) -> str:
    code = _extract_prompt_code(request.user_text)
    if code is None:
        return "no code block found in prompt"
    code = code.strip("\n")
    if kind == "echo_code":
        out = code
    elif kind == "perturb_comments":
        out = "// regenerated copy\n" + code + "\n// end of module\n"
    elif kind == "rename_signals":
        out = _rename_internal_signals(code, _rename_suffix(request.user_text, request.sampling))
    elif kind == "rename_port":
        out = _rename_one_port(code)
    elif kind == "drop_module":
        out = "// model omitted the code entirely"
        return out
    else:  # pragma: no cover - guarded by MockRule validation
        raise ConfigError(f"unknown transform {kind!r}")
    return f"Here is the reworked design:\n```verilog\n{out}\n```"


class MockBackend:
    """Deterministic scripted backend: ordered match rules, optional per-rule
    budgets. Same script + same requests gives identical results."""

    name = "mock"

    def __init__(self, rules: list[MockRule]):
        self.rules = [replace(r) for r in rules]  # private budgets
        self.calls = 0

    @classmethod
    def from_script(cls, path: Path | str) -> "MockBackend":
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"unreadable mock script {path}: {exc}") from exc
        if not isinstance(raw, dict) or not isinstance(raw.get("rules"), list):
            raise ConfigError(f"mock script {path} must map 'rules' to a list")
        rules = []
        for i, entry in enumerate(raw["rules"]):
            if not isinstance(entry, dict) or "match" not in entry:
                raise ConfigError(f"mock script {path}: rule {i} needs a 'match' key")
            unknown = set(entry) - {"match", "response", "transform", "failure", "status", "times"}
            if unknown:
                raise ConfigError(
                    f"mock script {path}: rule {i} has unknown keys {sorted(unknown)}"
                )
            rules.append(MockRule(**entry))
        return cls(rules)

    def complete_once(self, request: CompletionRequest) -> CompletionResult:
        self.calls += 1
        for rule in self.rules:
            if rule.times is not None and rule.times <= 0:
                continue
            if not re.search(rule.match, request.user_text, re.DOTALL):
                continue
            if rule.times is not None:
                rule.times -= 1
            if rule.failure == "transient":
                raise TransientBackendError("scripted transient failure", status=rule.status or 429)
            if rule.failure == "permanent":
                raise PermanentBackendError("scripted permanent failure", status=rule.status or 400)
            if rule.failure == "unreachable":
                raise BackendUnreachableError("scripted unreachable backend")
            text = rule.response if rule.response is not None else _apply_transform(rule.transform, request)
            return CompletionResult(
                text=text,
                finish_reason="stop",
                usage=(estimate_tokens(request.system_text + request.user_text), estimate_tokens(text)),
                latency=0.0,
            )
        raise PermanentBackendError(
            f"no mock rule matched request (model={request.model_name})", status=404
        )


# --------------------------------------------------------------------- http


@dataclass
class HttpBackendConfig:
    endpoint: str
    model_name: str
    credential_env: str
    timeout: float = 60.0
    max_request_chars: int = 400_000

    def __post_init__(self):
        if not self.credential_env:
            raise ConfigError("backend config needs credential_env (variable name)")


class HttpBackend:
    """OpenAI-style chat-completion endpoint. The credential is read from the
    environment per call and never stored on the instance."""

    def __init__(self, config: HttpBackendConfig):
        self.config = config
        self.name = config.model_name

    def __repr__(self):
        return f"HttpBackend(endpoint={self.config.endpoint!r}, model={self.config.model_name!r})"

    def complete_once(self, request: CompletionRequest) -> CompletionResult:
        import httpx

        credential = os.environ.get(self.config.credential_env)
        if not credential:
            raise CredentialMissingError(
                f"environment variable {self.config.credential_env} is not set"
            )
        body_chars = len(request.system_text) + len(request.user_text)
        if body_chars > self.config.max_request_chars:
            raise RequestTooLargeError(
                f"request is {body_chars} chars; backend limit {self.config.max_request_chars}"
            )
        payload = {
            "model": request.model_name if request.model_name != "default" else self.config.model_name,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "max_tokens": request.max_output_tokens,
        }
        started = time.monotonic()
        try:
            resp = httpx.post(
                self.config.endpoint,
                json=payload,
                headers={"Authorization": f"Bearer {credential}"},
                timeout=self.config.timeout,
            )
        except httpx.HTTPError as exc:
            raise BackendUnreachableError(f"endpoint unreachable: {type(exc).__name__}") from exc
        latency = time.monotonic() - started

        if resp.status_code in (408, 409, 429) or resp.status_code >= 500:
            raise TransientBackendError(f"backend returned {resp.status_code}", status=resp.status_code)
        if resp.status_code == 413:
            raise RequestTooLargeError("backend rejected request size (413)")
        if resp.status_code >= 400:
            raise PermanentBackendError(f"backend returned {resp.status_code}", status=resp.status_code)

        try:
            data = resp.json()
            choice = data["choices"][0]
            text = choice["message"]["content"]
            finish = choice.get("finish_reason", "stop")
            usage = data.get("usage", {})
            in_tok = int(usage.get("prompt_tokens", 0))
            out_tok = int(usage.get("completion_tokens", 0))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise PermanentBackendError(f"malformed backend response: {exc}", status=resp.status_code) from exc
        if finish not in ("stop", "length"):
            finish = "error"
        return CompletionResult(
            text=text, finish_reason=finish, usage=(in_tok, out_tok), latency=latency
        )


# ------------------------------------------------------------------- client


@dataclass
class UsageMeter:
    calls: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    transient_failures: int = 0

    def as_dict(self) -> dict:
        return {
            "calls": self.calls,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "transient_failures": self.transient_failures,
        }


class LlmClient:
    """Retry/rate-limit wrapper over one backend.

    Transient failures back off exponentially up to `retry_budget` extra
    attempts; attempt_count on the result is 1 + transient failures seen.
    Permanent failures surface immediately.
    """

    def __init__(
        self,
        backend: Backend,
        retry_budget: int = 2,
        base_delay: float = 0.5,
        max_delay: float = 8.0,
        rate_per_second: float | None = None,
        max_in_flight: int = 4,
        sleeper: Callable[[float], None] | None = None,
    ):
        self.backend = backend
        self.retry_budget = retry_budget
        self.base_delay = base_delay
        self.max_delay = max_delay
        self.rate_per_second = rate_per_second
        self.usage = UsageMeter()
        self._sleep = sleeper or time.sleep
        self._gate = threading.BoundedSemaphore(max(1, max_in_flight))
        self._rate_lock = threading.Lock()
        self._last_start = 0.0

    def _pace(self) -> None:
        if not self.rate_per_second:
            return
        interval = 1.0 / self.rate_per_second
        with self._rate_lock:
            now = time.monotonic()
            wait = self._last_start + interval - now
            if wait > 0:
                self._sleep(wait)
                now = time.monotonic()
            self._last_start = max(now, self._last_start + interval)

    def complete(self, request: CompletionRequest) -> CompletionResult:
        attempts = 0
        delay = self.base_delay
        last_error: Exception | None = None
        with self._gate:
            while attempts <= self.retry_budget:
                self._pace()
                attempts += 1
                try:
                    result = self.backend.complete_once(request)
                except (TransientBackendError, BackendUnreachableError) as exc:
                    last_error = exc
                    self.usage.transient_failures += 1
                    log.warning(
                        "attempt %d/%d against %s failed (%s); backing off %.2fs",
                        attempts, self.retry_budget + 1, self.backend.name, exc, delay,
                    )
                    if attempts > self.retry_budget:
                        break
                    self._sleep(delay)
                    delay = min(delay * 2, self.max_delay)
                    continue
                self.usage.calls += 1
                self.usage.input_tokens += result.usage[0]
                self.usage.output_tokens += result.usage[1]
                return replace(result, attempt_count=attempts)
        raise CompletionFailedError(attempts=attempts, last=last_error)
