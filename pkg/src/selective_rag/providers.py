"""External I/O: generator and retriever HTTP clients, record/replay fixture
store, simulated providers for offline runs, and file loaders.

The generator speaks the common completions wire format: POST a JSON body
{prompt, temperature, top_p, max_tokens, logprobs: true} and read back
{text, tokens[], token_logprobs[]}.  Log-probabilities are converted to
linear probabilities.  The retriever POSTs {query, k} and reads
{docs: [{id, text, score}]}.

In replay mode every response is served from the fixture store by canonical
request digest and no transport call is ever made; in record mode live
responses are appended to the fixture file together with their measured
latency so later replays are deterministic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import requests

from .calibration import GradientVector
from .metrics import WordFrequencyTable
from .tokenizer import count_tokens

logger = logging.getLogger(__name__)

AUTH_TOKEN_ENV = "SELECTIVE_RAG_TOKEN"


class ProviderError(RuntimeError):
    """A provider call failed or returned an unusable response."""


class FixtureMissError(ProviderError):
    """Replay mode found no stored response for a request digest."""


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = 0.6
    top_p: float = 0.9
    max_tokens: int = 256
    want_logprobs: bool = True

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0.0 < self.top_p <= 1.0):
            raise ValueError("top_p must be in (0, 1]")


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    tokens: tuple[str, ...]
    token_probs: tuple[float, ...]
    model_id: str = ""
    latency_ms: float | None = None

    def __post_init__(self):
        if len(self.tokens) != len(self.token_probs):
            raise ValueError("tokens and token_probs must have equal length")


@dataclass(frozen=True)
class RetrievedDoc:
    doc_id: str
    text: str
    score: float
    rank: int

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")


@dataclass(frozen=True)
class RetrievalResponse:
    docs: tuple[RetrievedDoc, ...]
    latency_ms: float | None = None
    shortfall: bool = False


def _normalize(value):
    """Floats rendered to 6 decimals so logically equal requests digest equally."""
    if isinstance(value, float):
        return format(value, ".6f")
    if isinstance(value, dict):
        return {k: _normalize(v) for k, v in sorted(value.items())}
    if isinstance(value, (list, tuple)):
        return [_normalize(v) for v in value]
    return value


def canonical_digest(payload: dict) -> str:
    """Stable SHA-256 of a request payload (sorted keys, normalized floats)."""
    canonical = json.dumps(_normalize(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class FixtureStore:
    """Digest-keyed store of provider responses, backed by a JSONL file.

    Modes: ``record`` appends live responses, ``replay`` serves stored ones
    (a missing digest is an error, never a live call), ``passthrough``
    stores nothing.
    """

    def __init__(self, path: str | Path | None, mode: str = "replay"):
        if mode not in ("record", "replay", "passthrough"):
            raise ValueError(f"unknown fixture mode {mode!r}")
        self.mode = mode
        self.path = Path(path) if path is not None else None
        self._records: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    entry = json.loads(line)
                    self._records[entry["digest"]] = entry

    def get(self, digest: str) -> dict:
        entry = self._records.get(digest)
        if entry is None:
            raise FixtureMissError(f"no fixture recorded for digest {digest}")
        return entry

    def put(self, digest: str, request: dict, response: dict, latency_ms: float) -> None:
        entry = {"digest": digest, "request": request, "response": response, "latency_ms": latency_ms}
        with self._lock:
            self._records[digest] = entry
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self._records)


class CallLog:
    """Append-only, thread-safe record of provider calls."""

    def __init__(self):
        self._entries: list[dict] = []
        self._lock = threading.Lock()

    def append(self, entry: dict) -> None:
        with self._lock:
            self._entries.append(entry)

    def entries(self) -> list[dict]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def http_transport(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    response = requests.post(url, json=payload, headers=headers, timeout=timeout)
    response.raise_for_status()
    return response.json()


def _auth_headers() -> dict:
    token = os.environ.get(AUTH_TOKEN_ENV)
    return {"Authorization": f"Bearer {token}"} if token else {}


class _HttpClient:
    def __init__(
        self,
        endpoint: str = "",
        fixtures: FixtureStore | None = None,
        transport=http_transport,
        attempts: int = 3,
        backoff_s: float = 0.25,
        timeout_s: float = 30.0,
    ):
        self.endpoint = endpoint
        self.fixtures = fixtures
        self.transport = transport
        self.attempts = attempts
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self.call_log = CallLog()

    def _replaying(self) -> bool:
        return self.fixtures is not None and self.fixtures.mode == "replay"

    def _call(self, payload: dict, digest: str) -> tuple[dict, float | None]:
        """Return (response json, latency_ms or None for live wall clock)."""
        if self._replaying():
            entry = self.fixtures.get(digest)
            return entry["response"], entry.get("latency_ms")
        last_error: Exception | None = None
        for attempt in range(1, self.attempts + 1):
            try:
                start = time.perf_counter()
                raw = self.transport(self.endpoint, payload, _auth_headers(), self.timeout_s)
                elapsed_ms = (time.perf_counter() - start) * 1000.0
                break
            except Exception as exc:  # noqa: BLE001 - transport failures are retryable
                last_error = exc
                if attempt < self.attempts:
                    time.sleep(self.backoff_s * (2 ** (attempt - 1)))
        else:
            raise ProviderError(f"provider call failed after {self.attempts} attempts: {last_error}") from last_error
        if self.fixtures is not None and self.fixtures.mode == "record":
            self.fixtures.put(digest, payload, raw, elapsed_ms)
        return raw, None


class GeneratorClient(_HttpClient):
    """Completion-endpoint client returning text plus per-token probabilities."""

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        payload = {
            "prompt": request.prompt,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
            "logprobs": True,
        }
        digest = canonical_digest({"kind": "generate", **payload})
        self.call_log.append({"kind": "generate", "digest": digest, "prompt": request.prompt})
        raw, latency_ms = self._call(payload, digest)
        return _parse_generation(raw, latency_ms)


def _parse_generation(raw: dict, latency_ms: float | None) -> GenerationResponse:
    for key in ("text", "tokens", "token_logprobs"):
        if key not in raw:
            if key == "token_logprobs":
                raise ProviderError("provider lacks token probabilities")
            raise ProviderError(f"generator response missing field {key!r}")
    logprobs = raw["token_logprobs"]
    tokens = raw["tokens"]
    if len(tokens) != len(logprobs):
        raise ProviderError("generator response tokens/token_logprobs length mismatch")
    probs = []
    for lp in logprobs:
        p = math.exp(lp)
        if not (0.0 < p <= 1.0):
            raise ProviderError(f"log-probability {lp!r} yields probability outside (0, 1]")
        probs.append(p)
    return GenerationResponse(
        text=raw["text"],
        tokens=tuple(tokens),
        token_probs=tuple(probs),
        model_id=raw.get("model_id", ""),
        latency_ms=latency_ms,
    )


class RetrieverClient(_HttpClient):
    """Dense-retriever service client: POST {query, k} -> ranked documents."""

    def retrieve(self, question: str, k: int) -> RetrievalResponse:
        if k < 0:
            raise ValueError("k must be >= 0")
        if k == 0:
            return RetrievalResponse(docs=())
        payload = {"query": question, "k": k}
        digest = canonical_digest({"kind": "retrieve", **payload})
        self.call_log.append({"kind": "retrieve", "digest": digest, "query": question, "k": k})
        raw, latency_ms = self._call(payload, digest)
        if "docs" not in raw:
            raise ProviderError("retriever response missing field 'docs'")
        docs = []
        for rank, item in enumerate(raw["docs"], start=1):
            for key in ("id", "text", "score"):
                if key not in item:
                    raise ProviderError(f"retriever doc missing field {key!r}")
            docs.append(RetrievedDoc(doc_id=str(item["id"]), text=item["text"], score=float(item["score"]), rank=rank))
        shortfall = len(docs) < k
        if shortfall:
            logger.warning("retriever returned %d of %d requested docs", len(docs), k)
        return RetrievalResponse(docs=tuple(docs), latency_ms=latency_ms, shortfall=shortfall)


@dataclass
class SimulatedGenerator:
    """Offline generator with a linear latency model.

    Latency is ``base_latency_ms + latency_per_token_ms * prompt tokens`` and
    is reported on the response; set ``time_scale`` > 0 to actually sleep a
    scaled fraction of it.  ``script`` maps exact prompts to (text, probs)
    pairs; unscripted prompts get the default answer.
    """

    latency_per_token_ms: float = 0.0
    base_latency_ms: float = 0.0
    time_scale: float = 0.0
    script: dict[str, tuple[str, tuple[float, ...]]] = field(default_factory=dict)
    default_text: str = "simulated answer"
    default_probs: tuple[float, ...] = (0.9, 0.8)
    model_id: str = "simulated"

    def __post_init__(self):
        self.call_log = CallLog()

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        self.call_log.append({"kind": "generate", "prompt": request.prompt})
        n_tokens = count_tokens(request.prompt)
        latency_ms = self.base_latency_ms + self.latency_per_token_ms * n_tokens
        if self.time_scale > 0:
            time.sleep(latency_ms / 1000.0 * self.time_scale)
        text, probs = self.script.get(request.prompt, (self.default_text, self.default_probs))
        return GenerationResponse(
            text=text,
            tokens=tuple(f"t{i}" for i in range(len(probs))),
            token_probs=tuple(probs),
            model_id=self.model_id,
            latency_ms=latency_ms,
        )


@dataclass
class SimulatedRetriever:
    """Offline retriever yielding deterministic synthetic documents.

    Each request costs ``latency_ms``; documents have exactly
    ``doc_token_count`` tokens unless a per-question corpus is supplied.
    """

    latency_ms: float = 0.0
    doc_token_count: int = 50
    time_scale: float = 0.0
    corpus: dict[str, list[RetrievedDoc]] = field(default_factory=dict)

    def __post_init__(self):
        self.call_log = CallLog()

    def retrieve(self, question: str, k: int) -> RetrievalResponse:
        if k < 0:
            raise ValueError("k must be >= 0")
        if k == 0:
            return RetrievalResponse(docs=())
        self.call_log.append({"kind": "retrieve", "query": question, "k": k})
        if self.time_scale > 0:
            time.sleep(self.latency_ms / 1000.0 * self.time_scale)
        if question in self.corpus:
            docs = tuple(self.corpus[question][:k])
        else:
            stem = canonical_digest({"kind": "retrieve", "query": question})[:8]
            docs = tuple(
                RetrievedDoc(
                    doc_id=f"{stem}-{rank}",
                    text=" ".join(f"ctx{rank}w{j}" for j in range(self.doc_token_count)),
                    score=1.0 / rank,
                    rank=rank,
                )
                for rank in range(1, k + 1)
            )
        return RetrievalResponse(docs=docs, latency_ms=self.latency_ms, shortfall=len(docs) < k)


def load_word_frequency_table(path: str | Path, floor_frequency: float = 1e-8) -> WordFrequencyTable:
    """Parse a "token<TAB>relative_frequency" file into a frequency table.

    Validates positive frequencies, no duplicates, and a total of at most
    1 + 1e-6.  The floor is lowered to the smallest stored frequency if needed.
    """
    path = Path(path)
    frequencies: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'token<TAB>frequency'")
            token, freq_text = parts
            try:
                freq = float(freq_text)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed frequency {freq_text!r}") from exc
            if freq <= 0:
                raise ValueError(f"{path}:{lineno}: non-positive frequency for {token!r}")
            if token in frequencies:
                raise ValueError(f"{path}:{lineno}: duplicate token {token!r}")
            frequencies[token] = freq
    if not frequencies:
        raise ValueError(f"{path}: empty table")
    total = math.fsum(frequencies.values())
    if total > 1 + 1e-6:
        raise ValueError(f"{path}: frequencies sum to {total}, exceeding 1")
    floor = min([floor_frequency] + list(frequencies.values()))
    return WordFrequencyTable(frequencies=frequencies, floor_frequency=floor, corpus_name=path.name)


def default_word_frequency_table(floor_frequency: float = 1e-8) -> WordFrequencyTable:
    """The bundled English table: Zipf-shaped frequencies over common words.

    Good enough for demos and relative comparisons; load your own corpus
    table for anything where absolute frequency values matter.
    """
    path = resources.files("selective_rag").joinpath("data/word_frequencies_en.tsv")
    with resources.as_file(path) as real_path:
        table = load_word_frequency_table(real_path, floor_frequency)
    return WordFrequencyTable(
        frequencies=table.frequencies,
        floor_frequency=table.floor_frequency,
        corpus_name="bundled-english-zipf",
    )


def load_gradients(path: str | Path) -> tuple[GradientVector, dict[str, GradientVector]]:
    """Load a gradient file: first line {"mean": [...]}, then one
    {"instance_id": ..., "grad": [...]} object per line, all same dimension."""
    path = Path(path)
    mean: GradientVector | None = None
    per_instance: dict[str, GradientVector] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if mean is None:
                if "mean" not in obj:
                    raise ValueError(f"{path}:{lineno}: first line must carry the dataset mean")
                mean = GradientVector(values=tuple(float(v) for v in obj["mean"]), instance_id="<mean>")
                continue
            if "instance_id" not in obj or "grad" not in obj:
                raise ValueError(f"{path}:{lineno}: expected instance_id and grad fields")
            instance_id = str(obj["instance_id"])
            vec = GradientVector(values=tuple(float(v) for v in obj["grad"]), instance_id=instance_id)
            if vec.dimension != mean.dimension:
                raise ValueError(
                    f"{path}:{lineno}: gradient dimension mismatch for instance {instance_id!r}: "
                    f"{vec.dimension} != {mean.dimension}"
                )
            if instance_id in per_instance:
                raise ValueError(f"{path}:{lineno}: duplicate instance {instance_id!r}")
            per_instance[instance_id] = vec
    if mean is None:
        raise ValueError(f"{path}: missing mean line")
    return mean, per_instance


def write_gradient_file(path: str | Path, mean: GradientVector, per_instance: dict[str, GradientVector]) -> None:
    """Write the gradient JSONL format (mean line first)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"mean": list(mean.values)}) + "\n")
        for instance_id in sorted(per_instance):
            fh.write(json.dumps({"instance_id": instance_id, "grad": list(per_instance[instance_id].values)}) + "\n")
