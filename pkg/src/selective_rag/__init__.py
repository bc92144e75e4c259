"""Selective retrieval-augmented generation toolkit.

Scores queries for long-tailness with a generative calibration error metric
and routes only long-tail queries through document retrieval, skipping the
redundant work for questions the model already answers well.
"""

from .calibration import (
    CalibrationRecord,
    GeceInputs,
    GeceScore,
    GradientVector,
    dataset_mean_gradient,
    ece,
    gece,
    gradient_alignment,
)
from .detector import (
    GradientSource,
    InstanceScore,
    ThresholdPolicy,
    assign_routes,
    classify,
    score_corpus,
    select_long_tail,
    threshold_top_fraction,
)
from .harness import (
    DatasetRecord,
    ExperimentSettings,
    emit_scatter,
    evaluate,
    load_dataset,
    measure_speedup,
    run_experiment,
    significance,
)
from .metrics import (
    AlignmentResult,
    MeteorParams,
    MetricScore,
    WordFrequencyTable,
    avg_word_frequency,
    bleu4,
    chrf,
    mean_token_prob,
    meteor,
    rouge1,
    ter,
)
from .pipeline import (
    GenerationParams,
    GenerationResult,
    PromptAssembly,
    PromptTemplate,
    Query,
    answer,
    assemble_prompt,
    retrieve,
    run_batch,
)
from .providers import (
    FixtureStore,
    GenerationRequest,
    GenerationResponse,
    GeneratorClient,
    ProviderError,
    RetrievedDoc,
    RetrieverClient,
    SimulatedGenerator,
    SimulatedRetriever,
    canonical_digest,
    load_gradients,
    load_word_frequency_table,
)
from .tokenizer import TokenSequence, tokenize

__version__ = "0.1.0"
