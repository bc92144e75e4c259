"""Calibration error metrics.

Classic expected calibration error over equal-width confidence bins, and its
generative extension: the absolute gap between an agreement score (METEOR by
default) and the mean token probability, divided by average word frequency
times gradient alignment.  A larger generative score marks an instance as
more long-tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_DENOM_FLOOR = 1e-6


@dataclass(frozen=True)
class CalibrationRecord:
    """One (confidence, correctness) observation."""

    confidence: float
    correct: bool

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence!r} outside [0, 1]")


def ece(records: list[CalibrationRecord], num_bins: int) -> float:
    """Bin-weighted mean absolute gap between accuracy and mean confidence.

    [0, 1] is split into ``num_bins`` equal-width bins; a confidence exactly
    on an interior boundary belongs to the higher bin, and 1.0 to the last.
    Empty bins contribute nothing.
    """
    if not records:
        raise ValueError("ece requires at least one record")
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    edges = np.array([i / num_bins for i in range(num_bins + 1)])
    confidences = np.array([r.confidence for r in records])
    correct = np.array([1.0 if r.correct else 0.0 for r in records])
    # side="right" puts boundary values in the higher bin; clamp 1.0 into the last.
    indices = np.clip(np.searchsorted(edges, confidences, side="right") - 1, 0, num_bins - 1)
    total = len(records)
    value = 0.0
    for b in range(num_bins):
        mask = indices == b
        n_b = int(mask.sum())
        if n_b == 0:
            continue
        acc = float(correct[mask].mean())
        conf = float(confidences[mask].mean())
        value += (n_b / total) * abs(acc - conf)
    return value


@dataclass(frozen=True)
class GradientVector:
    """A fixed-dimension reduced gradient for one instance (or a dataset mean)."""

    values: tuple[float, ...]
    instance_id: str = ""

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("gradient vector must have positive dimension")
        for v in self.values:
            if not math.isfinite(v):
                raise ValueError(f"non-finite gradient component in {self.instance_id!r}")

    @property
    def dimension(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)


def dataset_mean_gradient(grads: list[GradientVector]) -> GradientVector:
    """Element-wise mean over instance gradients; dimensions must agree."""
    if not grads:
        raise ValueError("dataset_mean_gradient requires at least one gradient")
    dim = grads[0].dimension
    for g in grads:
        if g.dimension != dim:
            raise ValueError(
                f"gradient dimension mismatch for instance {g.instance_id!r}: {g.dimension} != {dim}"
            )
    stacked = np.stack([g.as_array() for g in grads])
    return GradientVector(values=tuple(stacked.mean(axis=0).tolist()), instance_id="<mean>")


def gradient_alignment(mean_grad: GradientVector, inst_grad: GradientVector) -> float:
    """Dot product between the dataset mean gradient and an instance gradient."""
    if mean_grad.dimension != inst_grad.dimension:
        raise ValueError(
            f"gradient dimension mismatch: {mean_grad.dimension} != {inst_grad.dimension}"
        )
    return float(np.dot(mean_grad.as_array(), inst_grad.as_array()))


@dataclass(frozen=True)
class GeceInputs:
    """The four measured quantities behind one instance's long-tailness score."""

    meteor_score: float
    mean_token_prob: float
    alpha: float
    gradient_dot: float

    def __post_init__(self):
        for name in ("meteor_score", "mean_token_prob", "alpha", "gradient_dot"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite {name}")
        if not (0.0 <= self.meteor_score <= 1.0):
            raise ValueError(f"meteor_score {self.meteor_score!r} outside [0, 1]")
        if not (0.0 < self.mean_token_prob <= 1.0):
            raise ValueError(f"mean_token_prob {self.mean_token_prob!r} outside (0, 1]")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class GeceScore:
    """Generative calibration error; larger means more long-tail."""

    value: float
    components: GeceInputs
    denominator_floored: bool


def gece(inputs: GeceInputs, denom_floor: float = DEFAULT_DENOM_FLOOR) -> GeceScore:
    """|agreement - mean token probability| / (alpha * gradient alignment).

    The gradient dot product is floored at ``denom_floor`` so that zero or
    negative alignment (an instance pointing away from the dataset mean, i.e.
    maximally long-tail) yields a large finite score instead of a sign flip
    or infinity; the flooring is flagged on the result.
    """
    if denom_floor <= 0:
        raise ValueError("denom_floor must be positive")
    floored = inputs.gradient_dot < denom_floor
    denom = inputs.alpha * max(inputs.gradient_dot, denom_floor)
    value = abs(inputs.meteor_score - inputs.mean_token_prob) / denom
    return GeceScore(value=value, components=inputs, denominator_floored=floored)
