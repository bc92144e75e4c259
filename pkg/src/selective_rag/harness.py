"""Experiment driver: dataset ingestion, the always-retrieve vs selective
comparison, metric aggregation, speedup, paired significance, and scatter
table emission.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from scipy import stats

from .detector import (
    CorpusScores,
    InstanceScore,
    ThresholdPolicy,
    assign_routes,
    score_corpus,
    threshold_top_fraction,
)
from .metrics import bleu4, rouge1
from .pipeline import (
    COMMON,
    LONG_TAIL,
    MULTIPLE_CHOICE,
    OPEN_QA,
    GenerationParams,
    GenerationResult,
    PromptTemplate,
    Query,
    run_batch,
)
from .tokenizer import tokenize

ABLATION_VARIANTS = ("full", "no_stats_semantics")


@dataclass(frozen=True)
class DatasetRecord:
    instance_id: str
    question: str
    references: tuple[str, ...] = ()
    options: tuple[str, ...] | None = None
    gold_option: int | None = None

    def __post_init__(self):
        if not self.question:
            raise ValueError("question must be non-empty")
        if self.options is not None:
            if not self.options:
                raise ValueError("multiple-choice record needs options")
            if self.gold_option is None or not (0 <= self.gold_option < len(self.options)):
                raise ValueError("multiple-choice record needs a valid gold_option")
        else:
            if not self.references or any(not r for r in self.references):
                raise ValueError("open-QA record needs non-empty references")

    @property
    def task_type(self) -> str:
        return MULTIPLE_CHOICE if self.options is not None else OPEN_QA


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    """Parse a JSONL dataset, validate each record, and order by instance_id."""
    path = Path(path)
    records: list[DatasetRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                record = DatasetRecord(
                    instance_id=str(obj["instance_id"]),
                    question=obj["question"],
                    references=tuple(obj.get("references", ())),
                    options=tuple(obj["options"]) if "options" in obj else None,
                    gold_option=obj.get("gold_option"),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if record.instance_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate instance_id {record.instance_id!r}")
            seen.add(record.instance_id)
            records.append(record)
    return sorted(records, key=lambda r: r.instance_id)


def _gold_letter(record: DatasetRecord) -> str:
    return chr(ord("a") + record.gold_option)


def _extract_option_letter(text: str) -> str | None:
    """First standalone single-letter token of the generated text."""
    for token in tokenize(text).tokens:
        if len(token) == 1 and token.isalpha():
            return token
    return None


@dataclass
class EvaluationResult:
    task_type: str
    n: int
    rouge1: float | None = None
    bleu4: float | None = None
    accuracy: float | None = None
    per_instance: dict[str, dict[str, float]] = field(default_factory=dict)


def evaluate(results: list[GenerationResult], records: list[DatasetRecord], task_type: str) -> EvaluationResult:
    """Aggregate metrics over a run.

    Open QA: per-instance best-reference ROUGE-1 and BLEU-4, averaged.
    Multiple choice: accuracy by normalized option-letter match.
    """
    by_id = {r.instance_id: r for r in records}
    if {res.instance_id for res in results} != set(by_id):
        raise ValueError("result and record instance sets differ")

    per_instance: dict[str, dict[str, float]] = {}
    for res in sorted(results, key=lambda r: r.instance_id):
        record = by_id[res.instance_id]
        pred = tokenize(res.text)
        if task_type == OPEN_QA:
            refs = [tokenize(ref) for ref in record.references]
            best_rouge = max((rouge1(pred, ref).value for ref in refs), default=0.0)
            best_bleu = max((bleu4(pred, [ref]).value for ref in refs), default=0.0)
            per_instance[res.instance_id] = {"rouge1": best_rouge, "bleu4": best_bleu}
        elif task_type == MULTIPLE_CHOICE:
            predicted = _extract_option_letter(res.text)
            correct = 1.0 if predicted == _gold_letter(record) else 0.0
            per_instance[res.instance_id] = {"accuracy": correct}
        else:
            raise ValueError(f"unknown task type {task_type!r}")

    n = len(per_instance)
    out = EvaluationResult(task_type=task_type, n=n, per_instance=per_instance)
    if task_type == OPEN_QA:
        out.rouge1 = math.fsum(m["rouge1"] for m in per_instance.values()) / n if n else 0.0
        out.bleu4 = math.fsum(m["bleu4"] for m in per_instance.values()) / n if n else 0.0
    else:
        out.accuracy = math.fsum(m["accuracy"] for m in per_instance.values()) / n if n else 0.0
    return out


@dataclass
class PassReport:
    """One experiment pass (always_retrieve or selective)."""

    mode: str
    k: int
    results: list[GenerationResult]
    evaluation: EvaluationResult
    mean_latency_ms: float
    latency_total_ms: dict[str, float]
    route_counts: dict[str, int]
    wall_ms: float


def measure_speedup(baseline_report: PassReport, selective_report: PassReport) -> float:
    """Mean per-instance latency ratio baseline / selective, same instance set."""
    baseline_ids = {r.instance_id for r in baseline_report.results}
    selective_ids = {r.instance_id for r in selective_report.results}
    if baseline_ids != selective_ids:
        raise ValueError("speedup requires identical instance sets")
    if selective_report.mean_latency_ms == 0:
        raise ValueError("selective mean latency is zero")
    return baseline_report.mean_latency_ms / selective_report.mean_latency_ms


@dataclass(frozen=True)
class SignificanceResult:
    p_value: float
    t_statistic: float
    dof: int
    degenerate_zero_variance: bool = False


def significance(paired_scores_a: list[float], paired_scores_b: list[float]) -> SignificanceResult:
    """Two-tailed paired t-test over per-instance differences.

    Identical samples give p = 1; a constant nonzero difference has zero
    variance, which is reported as p = 0 with the degenerate flag set.
    """
    if len(paired_scores_a) != len(paired_scores_b):
        raise ValueError("paired samples must have equal length")
    n = len(paired_scores_a)
    if n < 2:
        raise ValueError("significance requires at least two paired observations")
    diffs = [a - b for a, b in zip(paired_scores_a, paired_scores_b)]
    if all(d == diffs[0] for d in diffs):
        if diffs[0] == 0:
            return SignificanceResult(p_value=1.0, t_statistic=0.0, dof=n - 1)
        return SignificanceResult(
            p_value=0.0, t_statistic=math.inf if diffs[0] > 0 else -math.inf,
            dof=n - 1, degenerate_zero_variance=True,
        )
    t_stat, p_value = stats.ttest_rel(paired_scores_a, paired_scores_b)
    return SignificanceResult(p_value=float(p_value), t_statistic=float(t_stat), dof=n - 1)


def emit_scatter(instance_scores: list[InstanceScore], variant: str = "full") -> list[dict]:
    """Rows for a score scatter: full uses the complete calibration score, the
    ablated variant keeps only the numerator |agreement - mean probability|."""
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown scatter variant {variant!r}")
    rows = []
    for s in sorted(instance_scores, key=lambda s: s.instance_id):
        c = s.components
        if variant == "full":
            value = s.gece.value
        else:
            value = abs(c.meteor_score - c.mean_token_prob)
        rows.append({"instance_id": s.instance_id, "variant": variant, "value": value, "route": s.route})
    return rows


@dataclass
class ExperimentSettings:
    """Everything one pass needs besides the providers themselves."""

    k: int = 10
    fraction: float = 0.2
    seed: int = 0
    parallelism: int = 8
    budget: int = 512
    denom_floor: float = 1e-6
    agreement_metric: str = "meteor"
    params: GenerationParams = field(default_factory=GenerationParams)
    template: PromptTemplate = field(default_factory=PromptTemplate)
    allowed_k: frozenset[int] | None = frozenset({10, 15, 20})


def run_pass(
    mode: str,
    records: list[DatasetRecord],
    scores: list[InstanceScore] | None,
    generator,
    retriever,
    settings: ExperimentSettings,
) -> PassReport:
    """Answer every record under one routing mode and evaluate the results."""
    if mode == "always_retrieve":
        routes = {r.instance_id: LONG_TAIL for r in records}
    elif mode == "selective":
        if scores is None:
            raise ValueError("selective mode requires instance scores")
        labeled = assign_routes(scores, ThresholdPolicy(fraction=settings.fraction))
        routes = {s.instance_id: s.route for s in labeled}
        for r in records:
            routes.setdefault(r.instance_id, COMMON)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    queries = [
        Query(instance_id=r.instance_id, question=r.question, route=routes[r.instance_id], task_type=r.task_type)
        for r in records
    ]
    batch = run_batch(
        queries,
        k=settings.k,
        generator=generator,
        retriever=retriever,
        params=settings.params,
        budget=settings.budget,
        template=settings.template,
        allowed_k=settings.allowed_k,
        parallelism=settings.parallelism,
    )
    task_type = records[0].task_type if records else OPEN_QA
    evaluation = evaluate(batch.results, records, task_type)
    return PassReport(
        mode=mode,
        k=settings.k,
        results=batch.results,
        evaluation=evaluation,
        mean_latency_ms=batch.timing.mean_latency_ms,
        latency_total_ms=batch.timing.latency_total_ms,
        route_counts=batch.timing.route_counts,
        wall_ms=batch.timing.wall_ms,
    )


@dataclass
class RunReport:
    """Aggregated outcome of an experiment: one or both passes plus comparisons."""

    config: dict
    baseline: PassReport | None = None
    selective: PassReport | None = None
    scores: list[InstanceScore] = field(default_factory=list)
    score_errors: list = field(default_factory=list)
    threshold: float | None = None
    speedup: float | None = None
    p_value: float | None = None
    significance_degenerate: bool = False


def run_experiment(
    records: list[DatasetRecord],
    generator,
    retriever,
    grad_source,
    freq_table,
    settings: ExperimentSettings,
    mode: str = "both",
    config_echo: dict | None = None,
) -> RunReport:
    """Drive scoring, routing, one or two answer passes, and the comparison."""
    report = RunReport(config=dict(config_echo or {}))

    scores: list[InstanceScore] | None = None
    if mode in ("selective", "both"):
        corpus: CorpusScores = score_corpus(
            records,
            generator,
            grad_source,
            freq_table,
            denom_floor=settings.denom_floor,
            agreement_metric=settings.agreement_metric,
            params=settings.params,
            template=settings.template,
            parallelism=settings.parallelism,
        )
        scores = corpus.scores
        report.score_errors = corpus.errors
        if scores:
            policy = ThresholdPolicy(fraction=settings.fraction)
            report.threshold = threshold_top_fraction(scores, policy)
            report.scores = assign_routes(scores, policy)

    if mode in ("always_retrieve", "both"):
        report.baseline = run_pass("always_retrieve", records, None, generator, retriever, settings)
    if mode in ("selective", "both"):
        report.selective = run_pass("selective", records, scores, generator, retriever, settings)

    if report.baseline is not None and report.selective is not None:
        report.speedup = measure_speedup(report.baseline, report.selective)
        metric_key = "accuracy" if records and records[0].task_type == MULTIPLE_CHOICE else "rouge1"
        ids = sorted(report.baseline.evaluation.per_instance)
        a = [report.selective.evaluation.per_instance[i][metric_key] for i in ids]
        b = [report.baseline.evaluation.per_instance[i][metric_key] for i in ids]
        if len(ids) >= 2:
            sig = significance(a, b)
            report.p_value = sig.p_value
            report.significance_degenerate = sig.degenerate_zero_variance
    return report


def _pass_to_dict(p: PassReport | None) -> dict | None:
    if p is None:
        return None
    ev = p.evaluation
    return {
        "mode": p.mode,
        "k": p.k,
        "mean_latency_ms": p.mean_latency_ms,
        "latency_total_ms": dict(sorted(p.latency_total_ms.items())),
        "route_counts": dict(sorted(p.route_counts.items())),
        "metrics": {
            "task_type": ev.task_type,
            "n": ev.n,
            "rouge1": ev.rouge1,
            "bleu4": ev.bleu4,
            "accuracy": ev.accuracy,
        },
        "results": [
            {
                "instance_id": r.instance_id,
                "route": r.route_taken,
                "text": r.text,
                "latency_ms": r.latency_ms,
                "retrieval_count": r.retrieval_count,
                "k": r.k,
                "error": r.error,
            }
            for r in p.results
        ],
    }


def report_to_dict(report: RunReport) -> dict:
    """Deterministic JSON-ready view of a run report."""
    return {
        "config": report.config,
        "threshold": report.threshold,
        "speedup": report.speedup,
        "p_value": report.p_value,
        "significance_degenerate": report.significance_degenerate,
        "scores": [
            {
                "instance_id": s.instance_id,
                "gece": s.gece.value,
                "meteor": s.components.meteor_score,
                "mean_prob": s.components.mean_token_prob,
                "alpha": s.components.alpha,
                "dot": s.components.gradient_dot,
                "route": s.route,
            }
            for s in report.scores
        ],
        "score_errors": [
            {"instance_id": e.instance_id, "message": e.message} for e in report.score_errors
        ],
        "baseline": _pass_to_dict(report.baseline),
        "selective": _pass_to_dict(report.selective),
    }


def render_report_table(report: RunReport) -> str:
    """Small human-readable summary table."""
    lines = []
    header = f"{'pass':<16}{'n':>5}{'rouge1':>9}{'bleu4':>9}{'acc':>7}{'mean ms':>10}"
    lines.append(header)
    lines.append("-" * len(header))

    def fmt(value: float | None) -> str:
        return f"{value:.4f}" if value is not None else "-"

    for p in (report.baseline, report.selective):
        if p is None:
            continue
        ev = p.evaluation
        lines.append(
            f"{p.mode:<16}{ev.n:>5}{fmt(ev.rouge1):>9}{fmt(ev.bleu4):>9}{fmt(ev.accuracy):>7}"
            f"{p.mean_latency_ms:>10.1f}"
        )
    if report.speedup is not None:
        lines.append(f"speedup: {report.speedup:.2f}x")
    if report.p_value is not None:
        flag = " (zero-variance)" if report.significance_degenerate else ""
        lines.append(f"paired t-test p-value: {report.p_value:.4g}{flag}")
    if report.threshold is not None:
        lines.append(f"long-tail threshold: {report.threshold:.6g}")
    return "\n".join(lines)
