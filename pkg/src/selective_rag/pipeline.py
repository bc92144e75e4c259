"""Selective retrieval routing: long-tail queries are answered with retrieved
documents prepended to the prompt, common queries go straight to the
generator.

Latency is wall-clock around each provider call unless the provider reports
its own latency (fixture replay and simulated providers do, which keeps
batch reports deterministic offline).
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .providers import GenerationRequest, ProviderError, RetrievedDoc
from .tokenizer import count_tokens, truncate_to_tokens

logger = logging.getLogger(__name__)

COMMON = "common"
LONG_TAIL = "long_tail"
ROUTES = (COMMON, LONG_TAIL)

OPEN_QA = "open_qa"
MULTIPLE_CHOICE = "multiple_choice"

DEFAULT_DOC_TOKEN_BUDGET = 512
DEFAULT_ALLOWED_K = frozenset({10, 15, 20})


@dataclass(frozen=True)
class Query:
    instance_id: str
    question: str
    route: str
    task_type: str = OPEN_QA

    def __post_init__(self):
        if not self.question:
            raise ValueError("question must be non-empty")
        if self.route not in ROUTES:
            raise ValueError(f"unknown route {self.route!r}")


@dataclass(frozen=True)
class PromptTemplate:
    """Documents block, then the question, then an answer cue."""

    name: str = "docs-question-v1"

    def render(self, question: str, doc_texts: list[str]) -> str:
        if doc_texts:
            return "\n\n".join(doc_texts) + "\n\n" + question + "\nAnswer:"
        return question + "\nAnswer:"


DEFAULT_TEMPLATE = PromptTemplate()


@dataclass(frozen=True)
class PromptAssembly:
    prompt_text: str
    doc_token_count: int
    included_doc_ids: tuple[str, ...]
    doc_token_counts: tuple[int, ...] = ()


@dataclass(frozen=True)
class GenerationResult:
    instance_id: str
    text: str
    token_probs: tuple[float, ...]
    latency_ms: float
    route_taken: str
    retrieval_count: int
    k: int = 0
    error: str | None = None

    def __post_init__(self):
        if self.route_taken == COMMON and self.retrieval_count != 0:
            raise ValueError("common route must not carry retrieved documents")
        if self.latency_ms < 0:
            raise ValueError("latency must be >= 0")


def _check_k(k: int, allowed_k: frozenset[int] | None) -> None:
    if k < 0:
        raise ValueError("k must be >= 0")
    if k > 0 and allowed_k is not None and k not in allowed_k:
        raise ValueError(f"k={k} is not in the configured set {sorted(allowed_k)}")


def _validate_ranks(docs: list[RetrievedDoc]) -> None:
    for prev, cur in zip(docs, docs[1:]):
        if cur.rank <= prev.rank:
            raise ProviderError("retriever ranks must be strictly increasing")


def retrieve(retriever, question: str, k: int, allowed_k: frozenset[int] | None = DEFAULT_ALLOWED_K) -> list[RetrievedDoc]:
    """Fetch up to k rank-ordered documents from the retriever provider.

    k = 0 short-circuits to an empty list; a shortfall is passed through with
    a logged warning.
    """
    _check_k(k, allowed_k)
    if k == 0:
        return []
    response = retriever.retrieve(question, k)
    docs = list(response.docs)
    _validate_ranks(docs)
    if response.shortfall:
        logger.warning("retrieval shortfall for %r: got %d of %d docs", question, len(docs), k)
    return docs


def assemble_prompt(
    question: str,
    docs: list[RetrievedDoc],
    budget: int = DEFAULT_DOC_TOKEN_BUDGET,
    template: PromptTemplate = DEFAULT_TEMPLATE,
) -> PromptAssembly:
    """Concatenate docs in rank order under a total document-token budget.

    A document that would overflow the budget is cut at the token boundary
    and everything after it is dropped; the question is always kept whole.
    """
    remaining = budget
    texts: list[str] = []
    ids: list[str] = []
    counts: list[int] = []
    for doc in docs:
        if remaining <= 0:
            break
        n_tokens = count_tokens(doc.text)
        if n_tokens <= remaining:
            texts.append(doc.text)
            counts.append(n_tokens)
            remaining -= n_tokens
        else:
            texts.append(truncate_to_tokens(doc.text, remaining))
            counts.append(remaining)
            remaining = 0
        ids.append(doc.doc_id)
        if remaining == 0:
            break
    return PromptAssembly(
        prompt_text=template.render(question, texts),
        doc_token_count=budget - remaining,
        included_doc_ids=tuple(ids),
        doc_token_counts=tuple(counts),
    )


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.6
    top_p: float = 0.9
    max_tokens: int = 256


def _timed_latency(call):
    """Run a provider call, preferring its self-reported latency over wall clock."""
    start = time.perf_counter()
    result = call()
    measured_ms = (time.perf_counter() - start) * 1000.0
    reported = getattr(result, "latency_ms", None)
    return result, (reported if reported is not None else measured_ms)


def answer(
    query: Query,
    k: int,
    generator,
    retriever,
    *,
    params: GenerationParams = GenerationParams(),
    budget: int = DEFAULT_DOC_TOKEN_BUDGET,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    allowed_k: frozenset[int] | None = DEFAULT_ALLOWED_K,
) -> GenerationResult:
    """Answer one routed query; long-tail routes retrieve first, common never do."""
    retrieval_latency = 0.0
    docs: list[RetrievedDoc] = []
    try:
        if query.route == LONG_TAIL and k > 0:
            _check_k(k, allowed_k)
            response, retrieval_latency = _timed_latency(lambda: retriever.retrieve(query.question, k))
            docs = list(response.docs)
            _validate_ranks(docs)
            if response.shortfall:
                logger.warning(
                    "retrieval shortfall for %s: got %d of %d docs", query.instance_id, len(docs), k
                )
        assembly = assemble_prompt(query.question, docs, budget=budget, template=template)
        request = GenerationRequest(
            prompt=assembly.prompt_text,
            temperature=params.temperature,
            top_p=params.top_p,
            max_tokens=params.max_tokens,
        )
        gen_response, generation_latency = _timed_latency(lambda: generator.generate(request))
    except (ProviderError, ValueError) as exc:
        return GenerationResult(
            instance_id=query.instance_id,
            text="",
            token_probs=(),
            latency_ms=retrieval_latency,
            route_taken=query.route,
            retrieval_count=len(docs) if query.route == LONG_TAIL else 0,
            k=k,
            error=str(exc),
        )
    return GenerationResult(
        instance_id=query.instance_id,
        text=gen_response.text,
        token_probs=gen_response.token_probs,
        latency_ms=retrieval_latency + generation_latency,
        route_taken=query.route,
        retrieval_count=len(docs),
        k=k,
        error=None,
    )


@dataclass
class BatchTiming:
    wall_ms: float
    latency_total_ms: dict[str, float] = field(default_factory=dict)
    route_counts: dict[str, int] = field(default_factory=dict)

    @property
    def mean_latency_ms(self) -> float:
        n = sum(self.route_counts.values())
        return sum(self.latency_total_ms.values()) / n if n else 0.0


@dataclass
class BatchResult:
    results: list[GenerationResult]
    timing: BatchTiming

    @property
    def failures(self) -> list[GenerationResult]:
        return [r for r in self.results if r.error is not None]


def write_batch_results(results: list[GenerationResult], path) -> None:
    """Emit one JSON object per result: instance_id, route, text, latency_ms,
    retrieval_count, k."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(
                json.dumps(
                    {
                        "instance_id": r.instance_id,
                        "route": r.route_taken,
                        "text": r.text,
                        "latency_ms": r.latency_ms,
                        "retrieval_count": r.retrieval_count,
                        "k": r.k,
                        "error": r.error,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def run_batch(
    queries: list[Query],
    *,
    k: int,
    generator,
    retriever,
    params: GenerationParams = GenerationParams(),
    budget: int = DEFAULT_DOC_TOKEN_BUDGET,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    allowed_k: frozenset[int] | None = DEFAULT_ALLOWED_K,
    parallelism: int = 8,
) -> BatchResult:
    """Answer all queries with bounded parallelism, preserving input order.

    Per-query failures become error results; the batch always completes.
    """
    start = time.perf_counter()
    if not queries:
        return BatchResult(results=[], timing=BatchTiming(wall_ms=0.0))

    def work(query: Query) -> GenerationResult:
        return answer(
            query, k, generator, retriever,
            params=params, budget=budget, template=template, allowed_k=allowed_k,
        )

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(work, queries))
    else:
        results = [work(q) for q in queries]
    wall_ms = (time.perf_counter() - start) * 1000.0

    latency_total: dict[str, float] = {route: 0.0 for route in ROUTES}
    route_counts: dict[str, int] = {route: 0 for route in ROUTES}
    for result in results:
        latency_total[result.route_taken] += result.latency_ms
        route_counts[result.route_taken] += 1
    return BatchResult(results=results, timing=BatchTiming(wall_ms, latency_total, route_counts))
