"""Corpus scoring and long-tail classification.

Every (question, reference) instance is answered once without retrieval, its
generative calibration error is computed, and the top fraction of scores is
labeled long-tail.  Selection is by (score descending, instance_id ascending),
takes exactly ceil(fraction * N) instances, and is therefore invariant under
input permutation.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .calibration import (
    DEFAULT_DENOM_FLOOR,
    GeceInputs,
    GeceScore,
    GradientVector,
    gece,
    gradient_alignment,
)
from .metrics import WordFrequencyTable, avg_word_frequency, chrf, mean_token_prob, meteor, ter
from .pipeline import COMMON, LONG_TAIL, DEFAULT_TEMPLATE, PromptTemplate, GenerationParams
from .providers import GenerationRequest, ProviderError
from .tokenizer import tokenize

AGREEMENT_METRICS = ("meteor", "chrf", "ter")


@dataclass(frozen=True)
class InstanceScore:
    instance_id: str
    gece: GeceScore
    route: str | None = None

    @property
    def components(self) -> GeceInputs:
        return self.gece.components


@dataclass(frozen=True)
class ThresholdPolicy:
    """Label the top ``fraction`` of scores long-tail, ties by instance_id."""

    fraction: float = 0.2

    def __post_init__(self):
        if not (0.0 < self.fraction < 1.0):
            raise ValueError("fraction must be in (0, 1)")

    def selected_count(self, n: int) -> int:
        return math.ceil(self.fraction * n)


@dataclass(frozen=True)
class ScoreError:
    """A per-instance scoring failure; the rest of the run continues."""

    instance_id: str
    message: str


@dataclass(frozen=True)
class GradientSource:
    """Dataset mean gradient plus per-instance gradients, as loaded from file."""

    mean: GradientVector
    per_instance: dict[str, GradientVector]

    def alignment(self, instance_id: str) -> float:
        if instance_id not in self.per_instance:
            raise KeyError(f"missing gradient for instance {instance_id!r}")
        return gradient_alignment(self.mean, self.per_instance[instance_id])


@dataclass
class CorpusScores:
    scores: list[InstanceScore]
    errors: list[ScoreError]


def agreement_score(metric: str, generated_text: str, references: list[str]) -> float:
    """Best agreement between the generation and any reference, in [0, 1].

    TER is mapped to max(0, 1 - TER) so all three metrics share the same
    orientation and scale.
    """
    if metric not in AGREEMENT_METRICS:
        raise ValueError(f"unknown agreement metric {metric!r}")
    pred_tokens = tokenize(generated_text)
    best = 0.0
    for ref_text in references:
        if metric == "meteor":
            value = meteor(pred_tokens, tokenize(ref_text)).value
        elif metric == "chrf":
            value = chrf(generated_text, ref_text).value
        else:
            value = max(0.0, 1.0 - ter(pred_tokens, tokenize(ref_text)).value)
        best = max(best, value)
    return best


def score_corpus(
    instances,
    generator,
    grad_source: GradientSource,
    freq_table: WordFrequencyTable,
    *,
    denom_floor: float = DEFAULT_DENOM_FLOOR,
    agreement_metric: str = "meteor",
    params: GenerationParams = GenerationParams(),
    template: PromptTemplate = DEFAULT_TEMPLATE,
    parallelism: int = 1,
) -> CorpusScores:
    """Score every instance's long-tailness; no retrieval is ever performed.

    Instances need ``instance_id``, ``question`` and ``references`` attributes.
    Provider or data failures yield per-instance error records and the run
    continues.  Scores come back ordered by instance_id.
    """

    def score_one(instance) -> InstanceScore | ScoreError:
        try:
            prompt = template.render(instance.question, [])
            request = GenerationRequest(
                prompt=prompt,
                temperature=params.temperature,
                top_p=params.top_p,
                max_tokens=params.max_tokens,
            )
            response = generator.generate(request)
            agreement = agreement_score(agreement_metric, response.text, list(instance.references))
            mean_prob = mean_token_prob(list(response.token_probs))
            alpha = avg_word_frequency(tokenize(instance.question), freq_table)
            dot = grad_source.alignment(instance.instance_id)
            inputs = GeceInputs(
                meteor_score=agreement, mean_token_prob=mean_prob, alpha=alpha, gradient_dot=dot
            )
            return InstanceScore(instance_id=instance.instance_id, gece=gece(inputs, denom_floor))
        except (ProviderError, ValueError, KeyError) as exc:
            return ScoreError(instance_id=instance.instance_id, message=str(exc))

    items = list(instances)
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(score_one, items))
    else:
        outcomes = [score_one(inst) for inst in items]

    scores = sorted((o for o in outcomes if isinstance(o, InstanceScore)), key=lambda s: s.instance_id)
    errors = sorted((o for o in outcomes if isinstance(o, ScoreError)), key=lambda e: e.instance_id)
    return CorpusScores(scores=scores, errors=errors)


def _selection_order(scores: list[InstanceScore]) -> list[InstanceScore]:
    return sorted(scores, key=lambda s: (-s.gece.value, s.instance_id))


def select_long_tail(scores: list[InstanceScore], policy: ThresholdPolicy = ThresholdPolicy()) -> frozenset[str]:
    """Instance ids of the top ceil(fraction * N) scores."""
    if not scores:
        raise ValueError("cannot select from an empty score list")
    count = policy.selected_count(len(scores))
    return frozenset(s.instance_id for s in _selection_order(scores)[:count])


def threshold_top_fraction(scores: list[InstanceScore], policy: ThresholdPolicy = ThresholdPolicy()) -> float:
    """The smallest score among the selected top fraction."""
    if not scores:
        raise ValueError("cannot threshold an empty score list")
    count = policy.selected_count(len(scores))
    return _selection_order(scores)[count - 1].gece.value


@dataclass(frozen=True)
class TieContext:
    """Which instances the quota admitted, for scores equal to the threshold."""

    instance_id: str
    selected_ids: frozenset[str]


def classify(score: GeceScore, threshold: float, tie_context: TieContext | None = None) -> str:
    """Route long-tail when strictly above threshold, or on it and in quota.

    Without a tie context (e.g. a frozen threshold applied to new data),
    scores equal to the threshold count as long-tail.
    """
    if score.value > threshold:
        return LONG_TAIL
    if score.value == threshold:
        if tie_context is None or tie_context.instance_id in tie_context.selected_ids:
            return LONG_TAIL
        return COMMON
    return COMMON


def assign_routes(scores: list[InstanceScore], policy: ThresholdPolicy = ThresholdPolicy()) -> list[InstanceScore]:
    """Label every score; exactly ceil(fraction * N) come back long-tail."""
    selected = select_long_tail(scores, policy)
    threshold = threshold_top_fraction(scores, policy)
    return [
        replace(
            s,
            route=classify(s.gece, threshold, TieContext(s.instance_id, selected)),
        )
        for s in scores
    ]


def write_instance_scores(scores: list[InstanceScore], path: str | Path) -> None:
    """Emit one JSON object per instance: instance_id, gece, meteor, mean_prob,
    alpha, dot, route."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in scores:
            c = s.components
            fh.write(
                json.dumps(
                    {
                        "instance_id": s.instance_id,
                        "gece": s.gece.value,
                        "meteor": c.meteor_score,
                        "mean_prob": c.mean_token_prob,
                        "alpha": c.alpha,
                        "dot": c.gradient_dot,
                        "route": s.route,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_instance_scores(path: str | Path, denom_floor: float = DEFAULT_DENOM_FLOOR) -> list[InstanceScore]:
    """Load scores written by write_instance_scores."""
    scores = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                inputs = GeceInputs(
                    meteor_score=obj["meteor"],
                    mean_token_prob=obj["mean_prob"],
                    alpha=obj["alpha"],
                    gradient_dot=obj["dot"],
                )
                scores.append(
                    InstanceScore(
                        instance_id=str(obj["instance_id"]),
                        gece=GeceScore(
                            value=obj["gece"],
                            components=inputs,
                            denominator_floored=obj["dot"] < denom_floor,
                        ),
                        route=obj.get("route"),
                    )
                )
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed score record: {exc}") from exc
    return scores
