"""Ablations: swap the agreement metric and strip the denominator.

The scatter rows show why the frequency and gradient terms matter: with only
the numerator |agreement - mean probability|, common and long-tail instances
interleave; the full score separates them.

Run with:  python demos/ablation_scatter.py
"""

from dataclasses import dataclass

from selective_rag import GradientVector, SimulatedGenerator, emit_scatter
from selective_rag.detector import GradientSource, score_corpus
from selective_rag.harness import ABLATION_VARIANTS
from selective_rag.providers import default_word_frequency_table


@dataclass(frozen=True)
class Instance:
    instance_id: str
    question: str
    references: tuple


instances = [
    Instance("c00", "what is the first thing people said", ("the first thing",)),
    Instance("c01", "what is the second thing people said", ("the second thing",)),
    Instance("c02", "what is the third thing people said", ("the third thing",)),
    Instance("t00", "who played raoul in the phantom of the opera", ("patrick wilson",)),
    Instance("t01", "which obscure footballer won the 2014 award", ("yaya toure",)),
]

# Common questions get aligned gradients; the two long-tail ones do not.
grads = {
    inst.instance_id: GradientVector(
        values=(2.0 if inst.instance_id.startswith("c") else 0.01, 0.0),
        instance_id=inst.instance_id,
    )
    for inst in instances
}
grad_source = GradientSource(mean=GradientVector(values=(1.0, 0.0)), per_instance=grads)
freq_table = default_word_frequency_table()
generator = SimulatedGenerator(default_text="the first thing", default_probs=(0.8, 0.7, 0.9))

# The numerator metric is swappable: METEOR by default, chrF or TER (as the
# similarity 1 - TER, clamped at zero) for ablation runs.
for metric in ("meteor", "chrf", "ter"):
    corpus = score_corpus(instances, generator, grad_source, freq_table, agreement_metric=metric)
    values = {s.instance_id: s.gece.value for s in corpus.scores}
    print(f"{metric:>6}: " + "  ".join(f"{k}={v:9.2f}" for k, v in sorted(values.items())))

print()

# Scatter rows, full score vs numerator-only ablation.
corpus = score_corpus(instances, generator, grad_source, freq_table)
for variant in ABLATION_VARIANTS:
    print(f"variant = {variant}")
    for row in emit_scatter(corpus.scores, variant):
        print(f"  {row['instance_id']}  value={row['value']:12.4f}")
