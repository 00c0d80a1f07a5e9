"""Chat-completion gateway with live, record, replay and scripted backends."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx

from .fileio import write_json

log = logging.getLogger(__name__)

MODES = ("live", "record", "replay", "script")
ROLES = ("system", "user", "assistant")

ENV_BASE_URL = "GAMEBUG_BASE_URL"
ENV_API_KEY = "GAMEBUG_API_KEY"
ENV_MODEL = "GAMEBUG_MODEL"


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    pass


class ReplayMiss(GatewayError):
    def __init__(self, digest: str) -> None:
        super().__init__(f"no recorded response for request digest {digest}")
        self.digest = digest


class ScriptExhausted(GatewayError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 2048

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        for role, _ in self.messages:
            if role not in ROLES:
                raise ValueError(f"bad role {role!r}")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": r, "content": t} for r, t in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    usage: dict | None = None
    provenance: str = "live"

    def to_dict(self) -> dict:
        return {"text": self.text, "finish_reason": self.finish_reason, "usage": self.usage}


class TokenBucket:
    """Token-bucket admission, refilled continuously at ``per_minute``.

    ``per_minute=None`` admits everything immediately.  The clock and sleep
    functions are injectable so tests can run on simulated time.
    """

    def __init__(
        self,
        per_minute: float | None,
        capacity: float | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if per_minute is not None and per_minute <= 0:
            raise ValueError("rate must be positive")
        self.per_minute = per_minute
        self.capacity = float(capacity if capacity is not None else (per_minute or 0))
        self._clock = clock
        self._sleep = sleep
        self._tokens = self.capacity
        self._stamp = clock()
        self._lock = threading.Lock()

    def _refill(self) -> None:
        now = self._clock()
        elapsed = max(0.0, now - self._stamp)
        self._stamp = now
        self._tokens = min(self.capacity, self._tokens + elapsed * self.per_minute / 60.0)

    def try_acquire(self, cost: float = 1.0) -> float:
        """Take ``cost`` tokens if available; return 0, else the seconds to wait."""
        if self.per_minute is None:
            return 0.0
        with self._lock:
            self._refill()
            # tolerance: refill arithmetic can stall a hair below a whole token
            if self._tokens + 1e-9 >= cost:
                self._tokens = max(0.0, self._tokens - cost)
                return 0.0
            return (cost - self._tokens) * 60.0 / self.per_minute

    def acquire(self, cost: float = 1.0) -> None:
        if self.per_minute is not None and cost > self.capacity:
            raise ValueError("cost exceeds bucket capacity")
        while (wait := self.try_acquire(cost)) > 0:
            self._sleep(wait)


class HttpBackend:
    """POSTs to ``{base_url}/chat/completions`` using the common JSON schema."""

    retry_statuses = frozenset({408, 409, 429, 500, 502, 503, 504})

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        transport: httpx.BaseTransport | None = None,
        timeout: float = 120.0,
        max_attempts: int = 5,
        backoff: float = 1.0,
        max_backoff: float = 60.0,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.client = httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport
        )
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.max_backoff = max_backoff
        self._sleep = sleep

    def send(self, request: ChatRequest) -> ChatResponse:
        last_error = "no attempt made"
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self.client.post("/chat/completions", json=request.to_dict())
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    return self._decode(resp)
                last_error = f"HTTP {resp.status_code}"
                if resp.status_code not in self.retry_statuses:
                    raise TransportError(f"{last_error}: {resp.text[:200]}")
            if attempt < self.max_attempts:
                delay = min(self.max_backoff, self.backoff * 2 ** (attempt - 1))
                log.warning("chat completion attempt %d failed (%s); retrying in %.1fs", attempt, last_error, delay)
                self._sleep(delay)
        raise TransportError(f"giving up after {self.max_attempts} attempts: {last_error}")

    @staticmethod
    def _decode(resp: httpx.Response) -> ChatResponse:
        try:
            body = resp.json()
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion body: {exc}") from None
        finish = choice.get("finish_reason") or "stop"
        if finish == "length":
            raise GatewayError("completion truncated at max output length")
        usage = body.get("usage")
        if usage is not None:
            usage = {k: usage.get(k) for k in ("prompt_tokens", "completion_tokens") if k in usage}
        return ChatResponse(text, finish, usage, "live")


class Gateway:
    """Uniform ``complete()`` over the four backend modes."""

    def __init__(
        self,
        mode: str,
        *,
        backend: HttpBackend | None = None,
        store: str | Path | None = None,
        script: Iterable[str] | None = None,
        limiter: TokenBucket | None = None,
        model: str = "gpt-4",
    ) -> None:
        if mode not in MODES:
            raise ValueError(f"unknown gateway mode {mode!r}")
        if mode in ("live", "record") and backend is None:
            raise ValueError(f"{mode} mode needs an HTTP backend")
        if mode in ("record", "replay") and store is None:
            raise ValueError(f"{mode} mode needs a replay store directory")
        if mode == "script" and script is None:
            raise ValueError("script mode needs scripted replies")
        self.mode = mode
        self.model = model
        self.backend = backend
        self.store = Path(store) if store is not None else None
        self.limiter = limiter or TokenBucket(None)
        self._script = list(script or ())
        self._cursor = 0
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def scripted(cls, replies: Sequence[str], model: str = "gpt-4") -> "Gateway":
        return cls("script", script=replies, model=model)

    @classmethod
    def from_env(cls, mode: str, store: str | Path | None = None, **kw) -> "Gateway":
        backend = None
        if mode in ("live", "record"):
            base = os.environ.get(ENV_BASE_URL)
            if not base:
                raise ValueError(f"{ENV_BASE_URL} is not set")
            backend = HttpBackend(base, os.environ.get(ENV_API_KEY))
        model = os.environ.get(ENV_MODEL, kw.pop("model", "gpt-4"))
        return cls(mode, backend=backend, store=store, model=model, **kw)

    def request(self, messages: Sequence[tuple[str, str]], **kw) -> ChatRequest:
        return ChatRequest(self.model, tuple(messages), **kw)

    @property
    def remaining_script(self) -> int:
        return len(self._script) - self._cursor

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        if self.mode == "script":
            with self._lock:
                if self._cursor >= len(self._script):
                    raise ScriptExhausted(f"script exhausted after {len(self._script)} replies")
                text = self._script[self._cursor]
                self._cursor += 1
            return ChatResponse(text, "stop", None, "scripted")
        if self.mode == "replay":
            path = self.store / f"{request.digest}.json"
            if not path.exists():
                raise ReplayMiss(request.digest)
            data = json.loads(path.read_text(encoding="utf-8"))["response"]
            return ChatResponse(data["text"], data.get("finish_reason", "stop"), data.get("usage"), "cached")
        self.limiter.acquire()
        response = self.backend.send(request)
        if self.mode == "record":
            write_json(
                self.store / f"{request.digest}.json",
                {"request": request.to_dict(), "response": response.to_dict()},
            )
        return response
