"""From classic calibration error to the generative long-tailness score.

Run with:  python demos/calibration_walkthrough.py
"""

from selective_rag import (
    CalibrationRecord,
    GeceInputs,
    GradientVector,
    dataset_mean_gradient,
    ece,
    gece,
    gradient_alignment,
)

# Classic expected calibration error: bin predictions by confidence and
# weight each bin's |accuracy - mean confidence| gap by its share of the data.
records = [
    CalibrationRecord(confidence=0.95, correct=True),
    CalibrationRecord(confidence=0.90, correct=True),
    CalibrationRecord(confidence=0.85, correct=False),
    CalibrationRecord(confidence=0.60, correct=True),
    CalibrationRecord(confidence=0.40, correct=False),
    CalibrationRecord(confidence=0.30, correct=False),
]
for bins in (1, 2, 5, 10):
    print(f"ECE with {bins:>2} bins: {ece(records, bins):.4f}")
print()

# The generative variant replaces accuracy with an agreement metric (METEOR)
# and confidence with the mean token probability, then divides by average
# word frequency times gradient alignment.  Two sketched queries:
#
#   common:    frequent words, generation agrees with the reference, and the
#              instance gradient points with the dataset mean.
#   long-tail: rare words, overconfident disagreement, gradient misaligned.
mean_grad = dataset_mean_gradient(
    [
        GradientVector(values=(0.9, 0.2), instance_id="a"),
        GradientVector(values=(1.1, -0.1), instance_id="b"),
        GradientVector(values=(1.0, 0.1), instance_id="c"),
    ]
)
common_dot = gradient_alignment(mean_grad, GradientVector(values=(1.05, 0.05)))
tail_dot = gradient_alignment(mean_grad, GradientVector(values=(0.02, 0.3)))

common = gece(GeceInputs(meteor_score=0.85, mean_token_prob=0.80, alpha=0.02, gradient_dot=common_dot))
tail = gece(GeceInputs(meteor_score=0.30, mean_token_prob=0.75, alpha=0.0005, gradient_dot=tail_dot))

print(f"common query    score = {common.value:10.1f}  (dot {common_dot:+.3f})")
print(f"long-tail query score = {tail.value:10.1f}  (dot {tail_dot:+.3f})")
print("larger score = more long-tail; only within one run's frequency table")
print("and gradient source are values comparable.")

# A misaligned (negative) gradient dot would flip the sign of the score, so
# the denominator is floored and the flooring is flagged.
floored = gece(GeceInputs(meteor_score=0.3, mean_token_prob=0.7, alpha=0.001, gradient_dot=-0.4))
print(f"\nnegative alignment floors the denominator: floored={floored.denominator_floored}")
