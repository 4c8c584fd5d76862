"""Chat-completion backends: a live Ollama-compatible client and a scripted one.

The live client speaks POST /api/chat with stream=false and maps the reply's
message.content plus server counters into a Completion. The scripted backend
replays a fixed list of replies for deterministic tests and the offline demo.
Token budgeting uses the chars/4 heuristic so the harness never depends on a
model's tokenizer.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Protocol, Sequence

import requests

DEFAULT_BASE_URL = "http://127.0.0.1:11434"
TRUNCATION_MARKER = "[TRUNCATED]"

# Transient-failure policy for local servers that drop requests during model
# load: 2 retries after the first attempt, 1s then 4s.
RETRY_BACKOFF_S = (1.0, 4.0)


class BackendError(Exception):
    """Base class for backend failures."""


class BackendUnavailableError(BackendError):
    """Server unreachable or timing out after all retries."""


class UnknownModelError(BackendError):
    """The server does not know the requested model name."""


class ProtocolError(BackendError):
    """The server answered, but not with the expected JSON shape."""


class ScriptExhaustedError(BackendError):
    """A scripted backend was asked for more replies than it holds."""


class BudgetTooSmallError(BackendError):
    """Input budget cannot hold even the system prompt plus marker."""


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self) -> None:
        if self.role in (Role.SYSTEM, Role.USER) and not self.content:
            raise ValueError(f"{self.role.value} message content must be nonempty")

    def to_dict(self) -> dict:
        return {"role": self.role.value, "content": self.content}


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_output_tokens: int = 1024
    input_token_budget: int = 8192
    seed: int | None = None
    request_timeout: float = 120.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1 or self.input_token_budget < 1:
            raise ValueError("token limits must be positive")


class ModelGroup(str, Enum):
    G1 = "G1"
    G2 = "G2"


@dataclass(frozen=True)
class ModelSpec:
    name: str
    group: ModelGroup
    params_billions: float
    context_window_tokens: int
    attention: str = ""
    activation: str = ""
    normalization: str = ""

    def __post_init__(self) -> None:
        if self.context_window_tokens <= 0:
            raise ValueError("context_window_tokens must be positive")


@dataclass(frozen=True)
class Telemetry:
    latency_ms: float
    response_chars: int
    prompt_tokens: int | None = None
    output_tokens: int | None = None
    server_eval_duration_ms: float | None = None

    def to_dict(self) -> dict:
        return {
            "latency_ms": self.latency_ms,
            "response_chars": self.response_chars,
            "prompt_tokens": self.prompt_tokens,
            "output_tokens": self.output_tokens,
            "server_eval_duration_ms": self.server_eval_duration_ms,
        }


@dataclass(frozen=True)
class Completion:
    text: str
    telemetry: Telemetry

    def to_dict(self) -> dict:
        return {"text": self.text, "telemetry": self.telemetry.to_dict()}


class Backend(Protocol):
    def complete(
        self,
        model: ModelSpec,
        messages: Sequence[ChatMessage],
        params: GenerationParams,
    ) -> Completion: ...


def estimate_tokens(messages: Sequence[ChatMessage]) -> int:
    """chars/4 heuristic, rounded up per message."""
    return sum((len(m.content) + 3) // 4 for m in messages)


def truncate_to_budget(
    messages: Sequence[ChatMessage], budget_tokens: int
) -> list[ChatMessage]:
    """Fit a transcript into the input token budget.

    Oldest non-system turns are dropped whole first; the system prompt and
    the latest turn are never dropped. If that is not enough, the latest
    turn's content is tail-truncated and marked. Input is never mutated.
    """
    if budget_tokens <= 0:
        raise ValueError("budget_tokens must be positive")
    out = list(messages)
    if estimate_tokens(out) <= budget_tokens:
        return out

    while estimate_tokens(out) > budget_tokens:
        droppable = next(
            (i for i, m in enumerate(out[:-1]) if m.role is not Role.SYSTEM),
            None,
        )
        if droppable is None:
            break
        del out[droppable]

    if estimate_tokens(out) <= budget_tokens:
        return out

    last = out[-1]
    if last.role is Role.SYSTEM:
        raise BudgetTooSmallError(
            f"budget of {budget_tokens} tokens cannot hold the system prompt"
        )
    kept_tokens = estimate_tokens(out[:-1])
    keep_chars = (budget_tokens - kept_tokens) * 4 - len(TRUNCATION_MARKER)
    if keep_chars < 0:
        raise BudgetTooSmallError(
            f"budget of {budget_tokens} tokens cannot hold the system prompt "
            f"plus the truncation marker"
        )
    out[-1] = replace(last, content=last.content[:keep_chars] + TRUNCATION_MARKER)
    return out


class OllamaBackend:
    """Live client for an Ollama-compatible /api/chat endpoint.

    Stateless per request and shareable across worker threads. Transient
    failures (connection errors, timeouts, 5xx) are retried with the fixed
    backoff schedule before surfacing BackendUnavailableError.
    """

    def __init__(
        self,
        base_url: str = DEFAULT_BASE_URL,
        retries: int = len(RETRY_BACKOFF_S),
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self._session = session or requests.Session()
        self._sleep = sleep

    def is_reachable(self, timeout: float = 5.0) -> bool:
        try:
            self._session.get(f"{self.base_url}/api/tags", timeout=timeout)
            return True
        except requests.RequestException:
            return False

    def complete(
        self,
        model: ModelSpec,
        messages: Sequence[ChatMessage],
        params: GenerationParams,
    ) -> Completion:
        if not messages:
            raise ValueError("messages must be nonempty")
        options: dict = {
            "temperature": params.temperature,
            "num_predict": params.max_output_tokens,
        }
        if params.seed is not None:
            options["seed"] = params.seed
        payload = {
            "model": model.name,
            "messages": [m.to_dict() for m in messages],
            "stream": False,
            "options": options,
        }

        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(RETRY_BACKOFF_S[min(attempt - 1, len(RETRY_BACKOFF_S) - 1)])
            start = time.monotonic()
            try:
                resp = self._session.post(
                    f"{self.base_url}/api/chat",
                    json=payload,
                    timeout=params.request_timeout,
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                continue
            latency_ms = (time.monotonic() - start) * 1000.0

            if resp.status_code == 404:
                raise UnknownModelError(
                    f"server has no model named {model.name!r}"
                )
            if resp.status_code >= 500:
                last_exc = ProtocolError(
                    f"server error {resp.status_code}: {resp.text[:200]}"
                )
                continue
            if resp.status_code != 200:
                raise ProtocolError(
                    f"unexpected status {resp.status_code}: {resp.text[:200]}"
                )

            try:
                body = resp.json()
                text = body["message"]["content"]
            except (ValueError, KeyError, TypeError) as exc:
                raise ProtocolError(
                    f"malformed server reply: {resp.text[:200]!r}"
                ) from exc

            total_ns = body.get("total_duration")
            telemetry = Telemetry(
                latency_ms=latency_ms,
                response_chars=len(text),
                prompt_tokens=body.get("prompt_eval_count"),
                output_tokens=body.get("eval_count"),
                server_eval_duration_ms=(
                    total_ns / 1e6 if isinstance(total_ns, (int, float)) else None
                ),
            )
            return Completion(text=text, telemetry=telemetry)

        raise BackendUnavailableError(
            f"backend at {self.base_url} unavailable after "
            f"{self.retries + 1} attempts: {last_exc}"
        )


class ScriptedBackend:
    """Replays a fixed reply queue; telemetry latency is exactly 0.

    Every complete() call is recorded in .calls so tests can assert on the
    outgoing prompts. Exhausting the script is an error, signalling a test
    or demo-script bug rather than a model condition.
    """

    def __init__(self, script: Sequence[str]) -> None:
        if not script:
            raise ValueError("script must be nonempty")
        self._script = list(script)
        self._pos = 0
        self._lock = threading.Lock()
        self.calls: list[tuple[str, tuple[ChatMessage, ...], GenerationParams]] = []

    def remaining(self) -> int:
        with self._lock:
            return len(self._script) - self._pos

    def complete(
        self,
        model: ModelSpec,
        messages: Sequence[ChatMessage],
        params: GenerationParams,
    ) -> Completion:
        if not messages:
            raise ValueError("messages must be nonempty")
        with self._lock:
            if self._pos >= len(self._script):
                raise ScriptExhaustedError(
                    f"script exhausted after {len(self._script)} replies"
                )
            reply = self._script[self._pos]
            self._pos += 1
            self.calls.append((model.name, tuple(messages), params))
        return Completion(
            text=reply,
            telemetry=Telemetry(latency_ms=0.0, response_chars=len(reply)),
        )


_REGISTRY_ROWS: tuple[tuple[str, str, float, int, str, str, str], ...] = (
    # Group 1: larger models (20B-70B class).
    ("Cogito 70B", "G1", 70, 128_000, "MHA", "SwiGLU", "RMSNorm"),
    ("DeepSeek R1 70B", "G1", 70, 128_000, "MLA", "SwiGLU", "RMSNorm"),
    ("Falcon3 10B", "G1", 10, 32_000, "GQA", "ReLU", "LayerNorm"),
    ("Gemma 2 27B", "G1", 27, 8_192, "GQA", "GeGLU", "RMSNorm"),
    ("Gemma 3 27B", "G1", 27, 128_000, "GQA", "GeGLU", "RMSNorm"),
    ("GPT-OSS 20B", "G1", 20, 131_072, "MoE", "SwiGLU", "RMSNorm"),
    ("Llama 3.3 70B", "G1", 70, 131_072, "GQA", "SwiGLU", "RMSNorm"),
    ("Mistral Small 24B", "G1", 24, 32_768, "GQA", "SwiGLU", "RMSNorm"),
    ("Phi-4 14B", "G1", 14, 16_000, "MHA", "GeGLU", "RMSNorm"),
    ("Qwen2.5 32B", "G1", 32, 131_072, "GQA", "SwiGLU", "RMSNorm"),
    ("Qwen3 32B", "G1", 32, 131_072, "GQA", "SwiGLU", "RMSNorm"),
    # Group 2: smaller models (7B-12B class).
    ("Qwen3 8B", "G2", 8, 262_144, "GQA", "SwiGLU", "RMSNorm"),
    ("Qwen2.5 7B", "G2", 7, 131_072, "GQA", "SwiGLU", "RMSNorm"),
    ("Cogito 8B", "G2", 8, 128_000, "MHA", "SwiGLU", "RMSNorm"),
    ("DeepSeek R1 8B", "G2", 8, 128_000, "MLA", "SwiGLU", "RMSNorm"),
    ("Falcon3 7B", "G2", 7, 32_000, "GQA", "ReLU", "LayerNorm"),
    ("Gemma 2 9B", "G2", 9, 8_192, "GQA", "GeGLU", "RMSNorm"),
    ("Gemma 3 12B", "G2", 12, 128_000, "GQA", "GeGLU", "RMSNorm"),
    ("Granite3.2 8B", "G2", 8, 131_072, "MHA", "SwiGLU", "RMSNorm"),
    ("Llama 3.1 8B", "G2", 8, 128_000, "MHA", "SwiGLU", "RMSNorm"),
    ("Mistral 7B", "G2", 7, 32_768, "GQA, SWA", "SwiGLU", "RMSNorm"),
    ("Foundation-Sec 8B", "G2", 8, 128_000, "MHA", "SwiGLU", "RMSNorm"),
)


def builtin_model_registry() -> tuple[ModelSpec, ...]:
    """All 22 evaluated models (11 per group) with their published metadata."""
    return tuple(
        ModelSpec(name, ModelGroup(group), float(size), ctx, attn, act, norm)
        for name, group, size, ctx, attn, act, norm in _REGISTRY_ROWS
    )


def _normalize_name(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


def resolve_model(name: str, default_group: ModelGroup = ModelGroup.G2) -> ModelSpec:
    """Map a model identifier to a registry entry, or build an ad-hoc spec.

    Matching is lenient ("qwen3:8b" resolves to "Qwen3 8B") but the
    user-supplied name is preserved so run files key on what was actually
    served. Unrecognized names get the default group.
    """
    norm = _normalize_name(name)
    for spec in builtin_model_registry():
        if _normalize_name(spec.name) == norm:
            return replace(spec, name=name) if spec.name != name else spec
    return ModelSpec(
        name=name,
        group=default_group,
        params_billions=0.0,
        context_window_tokens=8192,
    )
