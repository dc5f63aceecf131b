"""Chat-completion gateway with live, record and replay modes.

Replay mode never opens a network client. Fixtures are JSONL rows of
``{"hash", "request", "response"}`` keyed by a SHA-256 over the canonical request.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import httpx

logger = logging.getLogger(__name__)

GENERATION_TEMPERATURE = 0.7
CRITIC_TEMPERATURE = 0.0


class GatewayError(RuntimeError):
    pass


class AuthError(GatewayError):
    pass


class GatewayTimeout(GatewayError):
    pass


class ReplayMiss(GatewayError):
    def __init__(self, request_hash: str):
        self.request_hash = request_hash
        super().__init__(f"replay fixture has no response for request {request_hash}")


class HashCollision(GatewayError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    temperature: float = GENERATION_TEMPERATURE
    max_tokens: int = 2048
    model_id: str = "default"

    def __post_init__(self):
        if not self.user:
            raise ValueError("user message must be nonempty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def wire(self) -> dict:
        messages = []
        if self.system:
            messages.append({"role": "system", "content": self.system})
        messages.append({"role": "user", "content": self.user})
        return {
            "model": self.model_id,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: dict = field(default_factory=lambda: {"prompt_tokens": 0, "completion_tokens": 0})
    latency_ms: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChatResponse":
        return cls(d["text"], dict(d.get("usage") or {}), int(d.get("latency_ms", 0)))


def load_fixture(path: str | Path) -> dict[str, tuple[dict, ChatResponse]]:
    table: dict[str, tuple[dict, ChatResponse]] = {}
    path = Path(path)
    if not path.exists():
        return table
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                table[row["hash"]] = (row["request"], ChatResponse.from_dict(row["response"]))
    return table


def record_session(
    session: Iterable[tuple[ChatRequest, ChatResponse]], path: str | Path, merge: bool = True
) -> Path:
    """Write a request-hash -> response fixture; distinct requests sharing a hash are an error.

    With ``merge`` the rows already in ``path`` are kept, so several commands can record
    into one fixture.
    """
    path = Path(path)
    rows: dict[str, tuple[dict, ChatResponse]] = load_fixture(path) if merge else {}
    for req, resp in session:
        h = req.hash()
        if h in rows and rows[h][0] != req.to_dict():
            raise HashCollision(f"distinct requests share hash {h}")
        rows[h] = (req.to_dict(), resp)
    with path.open("w", encoding="utf-8") as fh:
        for h, (req, resp) in sorted(rows.items()):
            fh.write(json.dumps({"hash": h, "request": req, "response": resp.to_dict()}, ensure_ascii=False) + "\n")
    return path


class Gateway:
    """Provider-agnostic chat-completion client.

    ``mode`` is ``"live"``, ``"record"`` (live, keeping every exchange in ``session``)
    or ``"replay"`` (answers only from ``fixture``).
    """

    def __init__(
        self,
        mode: str = "replay",
        *,
        endpoint: str | None = None,
        api_key: str | None = None,
        fixture: str | Path | None = None,
        transport: httpx.BaseTransport | None = None,
        attempts: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        max_in_flight: int = 4,
        audit_path: str | Path | None = None,
        sleep: Callable[[float], None] = time.sleep,
        seed: int = 0,
    ):
        if mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown gateway mode {mode!r}")
        self.mode = mode
        self.endpoint = (endpoint or os.environ.get("GATEWAY_ENDPOINT") or "").rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("GATEWAY_API_KEY")
        self.attempts = attempts
        self.backoff = backoff
        self.timeout = timeout
        self._transport = transport
        self._sleep = sleep
        self._jitter = random.Random(seed)
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._log_lock = threading.Lock()
        self.audit: list[dict] = []
        self.audit_path = Path(audit_path) if audit_path else None
        self.session: list[tuple[ChatRequest, ChatResponse]] = []
        self._fixture: dict[str, tuple[dict, ChatResponse]] = {}
        if mode == "replay":
            if fixture is None:
                raise ValueError("replay mode needs a fixture path")
            self._fixture = load_fixture(fixture)
        elif not self.endpoint:
            raise ValueError("live mode needs an endpoint (argument or GATEWAY_ENDPOINT)")

    def _log(self, entry: dict) -> None:
        with self._log_lock:
            self.audit.append(entry)
            if self.audit_path:
                with self.audit_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def complete(self, req: ChatRequest) -> ChatResponse:
        h = req.hash()
        if self.mode == "replay":
            hit = self._fixture.get(h)
            self._log({"hash": h, "mode": "replay", "attempt": 1, "status": "hit" if hit else "miss"})
            if hit is None:
                raise ReplayMiss(h)
            return hit[1]
        with self._slots:
            resp = self._complete_live(req, h)
        if self.mode == "record":
            with self._log_lock:
                self.session.append((req, resp))
        return resp

    def _complete_live(self, req: ChatRequest, h: str) -> ChatResponse:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last: Exception | None = None
        with httpx.Client(transport=self._transport, timeout=self.timeout) as client:
            for attempt in range(1, self.attempts + 1):
                t0 = time.monotonic()
                try:
                    r = client.post(f"{self.endpoint}/chat/completions", json=req.wire(), headers=headers)
                except httpx.TimeoutException as exc:
                    last = GatewayTimeout(str(exc))
                except httpx.TransportError as exc:
                    last = GatewayError(f"transport error: {exc}")
                else:
                    latency = int((time.monotonic() - t0) * 1000)
                    if r.status_code in (401, 403):
                        self._log({"hash": h, "mode": self.mode, "attempt": attempt, "status": r.status_code})
                        raise AuthError(f"authentication failed with status {r.status_code}")
                    if r.status_code == 429 or r.status_code >= 500:
                        last = GatewayError(f"transient status {r.status_code}")
                    elif r.status_code >= 400:
                        self._log({"hash": h, "mode": self.mode, "attempt": attempt, "status": r.status_code})
                        raise GatewayError(f"request rejected with status {r.status_code}: {r.text[:200]}")
                    else:
                        self._log({"hash": h, "mode": self.mode, "attempt": attempt, "status": r.status_code})
                        return self._parse(r.json(), latency)
                self._log({"hash": h, "mode": self.mode, "attempt": attempt, "status": "error", "error": str(last)})
                logger.warning("gateway attempt %d/%d failed: %s", attempt, self.attempts, last)
                if attempt < self.attempts:
                    self._sleep(self.backoff * 2 ** (attempt - 1) * (1 + self._jitter.random()))
        assert last is not None
        if isinstance(last, GatewayTimeout):
            raise last
        raise GatewayError(f"gave up after {self.attempts} attempts: {last}")

    @staticmethod
    def _parse(payload: dict, latency: int) -> ChatResponse:
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion payload: {exc}") from exc
        usage = payload.get("usage") or {}
        return ChatResponse(
            text,
            {
                "prompt_tokens": int(usage.get("prompt_tokens", 0)),
                "completion_tokens": int(usage.get("completion_tokens", 0)),
            },
            latency,
        )

    def save_session(self, path: str | Path, merge: bool = True) -> Path:
        return record_session(self.session, path, merge)
