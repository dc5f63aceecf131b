"""Translation quality metrics: a lexical oracle and a remote metric-service client."""

from __future__ import annotations

import hashlib
import json
import logging
import random
import threading
import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import httpx

from .corpus import tokenize

logger = logging.getLogger(__name__)

LEXICAL_METRIC_ID = "tokenF1-affine-v1"


class MetricError(RuntimeError):
    pass


class Metric(Protocol):
    metric_id: str

    def score(self, hypothesis: str, reference: str, source: str = "", lang: str = "en") -> float: ...


@dataclass(frozen=True)
class MetricRequest:
    source: str
    hypothesis: str
    reference: str

    def __post_init__(self):
        if not self.hypothesis or not self.reference:
            raise ValueError("hypothesis and reference must be nonempty")

    def wire(self) -> dict:
        return {"src": self.source, "mt": self.hypothesis, "ref": self.reference}

    def content_hash(self) -> str:
        blob = json.dumps(self.wire(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class QualityScore:
    value: float
    metric_id: str
    hyp_id: str


def token_f1(hyp: str, ref: str, lang: str) -> float:
    h = Counter(tokenize(hyp, lang))
    r = Counter(tokenize(ref, lang))
    denom = sum(h.values()) + sum(r.values())
    if not denom:
        return 0.0
    return 2 * sum((h & r).values()) / denom


def lexical_quality(hyp: str, ref: str, lang: str = "en") -> float:
    """Multiset token F1 mapped affinely onto [-1, 1]."""
    if not ref.strip():
        raise ValueError("reference must be nonempty")
    if not hyp.strip():
        return -1.0
    return 2 * token_f1(hyp, ref, lang) - 1


class LexicalMetric:
    metric_id = LEXICAL_METRIC_ID

    def score(self, hypothesis: str, reference: str, source: str = "", lang: str = "en") -> float:
        return lexical_quality(hypothesis, reference, lang)


class RemoteMetric:
    """Client for a ``POST /score`` quality service with retry and a content-hash cache.

    Cached items are never resent; a batch made entirely of cached items issues no request.
    """

    def __init__(
        self,
        endpoint: str,
        *,
        metric_id: str = "remote",
        timeout: float = 30.0,
        attempts: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 4,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        seed: int = 0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.metric_id = metric_id
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self._transport = transport
        self._sleep = sleep
        self._jitter = random.Random(seed)
        self._cache: dict[str, float] = {}
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self.network_calls = 0

    @classmethod
    def from_config(cls, cfg: dict, **kwargs) -> "RemoteMetric":
        return cls(
            cfg["endpoint"],
            metric_id=cfg.get("metric_id", "remote"),
            timeout=float(cfg.get("timeout", 30.0)),
            attempts=int(cfg.get("attempts", 3)),
            max_in_flight=int(cfg.get("max_in_flight", 4)),
            **kwargs,
        )

    def _post(self, items: list[dict]) -> list[float]:
        last: Exception | None = None
        for attempt in range(1, self.attempts + 1):
            try:
                with self._slots, httpx.Client(transport=self._transport, timeout=self.timeout) as client:
                    with self._lock:
                        self.network_calls += 1
                    resp = client.post(f"{self.endpoint}/score", json={"items": items})
                if resp.status_code >= 500 or resp.status_code == 429:
                    raise httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
                resp.raise_for_status()
                scores = resp.json()["scores"]
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                if isinstance(exc, httpx.HTTPStatusError) and exc.response.status_code < 500 and exc.response.status_code != 429:
                    raise MetricError(f"metric service rejected request: {exc}") from exc
                last = exc
                logger.warning("metric call attempt %d/%d failed: %s", attempt, self.attempts, exc)
                if attempt < self.attempts:
                    self._sleep(self.backoff * 2 ** (attempt - 1) * (1 + self._jitter.random()))
                continue
            except (KeyError, ValueError) as exc:
                raise MetricError(f"malformed metric response: {exc}") from exc
            if len(scores) != len(items):
                raise MetricError(f"metric service returned {len(scores)} scores for {len(items)} items")
            return [float(s) for s in scores]
        raise MetricError(f"metric service unavailable after {self.attempts} attempts: {last}")

    def remote_quality(self, batch: Sequence[MetricRequest]) -> list[QualityScore]:
        if not batch:
            raise ValueError("batch must be nonempty")
        keys = [req.content_hash() for req in batch]
        with self._lock:
            missing = {k: req for k, req in zip(keys, batch) if k not in self._cache}
        if missing:
            values = self._post([req.wire() for req in missing.values()])
            with self._lock:
                self._cache.update(zip(missing, values))
        with self._lock:
            return [QualityScore(self._cache[k], self.metric_id, k) for k in keys]

    def score(self, hypothesis: str, reference: str, source: str = "", lang: str = "en") -> float:
        if not hypothesis.strip():
            hypothesis = " "
        return self.remote_quality([MetricRequest(source, hypothesis, reference)])[0].value


def remote_quality(endpoint: str | RemoteMetric, batch: Sequence[MetricRequest]) -> list[QualityScore]:
    client = endpoint if isinstance(endpoint, RemoteMetric) else RemoteMetric(endpoint)
    return client.remote_quality(batch)
