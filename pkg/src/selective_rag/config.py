"""TOML configuration: one file describes providers, generation parameters,
routing, detector settings, and data paths.

Relative paths are resolved against the config file's directory.  An API
token, when needed, comes from the SELECTIVE_RAG_TOKEN environment variable,
never from the file.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .detector import GradientSource
from .harness import ExperimentSettings
from .metrics import WordFrequencyTable
from .pipeline import GenerationParams, PromptTemplate
from .providers import (
    FixtureStore,
    GeneratorClient,
    RetrieverClient,
    SimulatedGenerator,
    SimulatedRetriever,
    load_gradients,
    load_word_frequency_table,
)

PROVIDER_MODES = ("replay", "record", "passthrough", "simulated")


@dataclass
class ProviderConfig:
    mode: str = "simulated"
    generator_url: str = ""
    retriever_url: str = ""
    fixtures: Path | None = None
    timeout_s: float = 30.0
    attempts: int = 3
    backoff_s: float = 0.25


@dataclass
class SimulatedConfig:
    retrieval_latency_ms: float = 400.0
    gen_latency_ms_per_token: float = 1.0
    gen_base_latency_ms: float = 0.0
    doc_token_count: int = 50
    time_scale: float = 0.0


@dataclass
class DataConfig:
    dataset: Path | None = None
    word_frequencies: Path | None = None
    gradients: Path | None = None


@dataclass
class AppConfig:
    providers: ProviderConfig = field(default_factory=ProviderConfig)
    simulated: SimulatedConfig = field(default_factory=SimulatedConfig)
    data: DataConfig = field(default_factory=DataConfig)
    settings: ExperimentSettings = field(default_factory=ExperimentSettings)
    run_mode: str = "both"
    raw: dict = field(default_factory=dict)


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path) -> AppConfig:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    base = path.parent

    prov = raw.get("providers", {})
    mode = prov.get("mode", "simulated")
    if mode not in PROVIDER_MODES:
        raise ValueError(f"unknown provider mode {mode!r}")
    providers = ProviderConfig(
        mode=mode,
        generator_url=prov.get("generator_url", ""),
        retriever_url=prov.get("retriever_url", ""),
        fixtures=_resolve(base, prov.get("fixtures")),
        timeout_s=float(prov.get("timeout_s", 30.0)),
        attempts=int(prov.get("attempts", 3)),
        backoff_s=float(prov.get("backoff_s", 0.25)),
    )

    sim = raw.get("simulated", {})
    simulated = SimulatedConfig(
        retrieval_latency_ms=float(sim.get("retrieval_latency_ms", 400.0)),
        gen_latency_ms_per_token=float(sim.get("gen_latency_ms_per_token", 1.0)),
        gen_base_latency_ms=float(sim.get("gen_base_latency_ms", 0.0)),
        doc_token_count=int(sim.get("doc_token_count", 50)),
        time_scale=float(sim.get("time_scale", 0.0)),
    )

    data_raw = raw.get("data", {})
    data = DataConfig(
        dataset=_resolve(base, data_raw.get("dataset")),
        word_frequencies=_resolve(base, data_raw.get("word_frequencies")),
        gradients=_resolve(base, data_raw.get("gradients")),
    )

    gen = raw.get("generation", {})
    params = GenerationParams(
        temperature=float(gen.get("temperature", 0.6)),
        top_p=float(gen.get("top_p", 0.9)),
        max_tokens=int(gen.get("max_tokens", 256)),
    )
    retrieval = raw.get("retrieval", {})
    detector = raw.get("detector", {})
    prompt = raw.get("prompt", {})
    run = raw.get("run", {})
    allowed = retrieval.get("allowed_k", [10, 15, 20])
    settings = ExperimentSettings(
        k=int(retrieval.get("k", 10)),
        fraction=float(detector.get("fraction", 0.2)),
        seed=int(run.get("seed", 0)),
        parallelism=int(run.get("parallelism", 8)),
        budget=int(prompt.get("budget", 512)),
        denom_floor=float(detector.get("denom_floor", 1e-6)),
        agreement_metric=detector.get("metric", "meteor"),
        params=params,
        template=PromptTemplate(name=prompt.get("template", "docs-question-v1")),
        allowed_k=frozenset(int(k) for k in allowed) if allowed else None,
    )

    run_mode = run.get("mode", "both")
    if run_mode not in ("both", "selective", "always_retrieve"):
        raise ValueError(f"unknown run mode {run_mode!r}")
    return AppConfig(
        providers=providers, simulated=simulated, data=data,
        settings=settings, run_mode=run_mode, raw=raw,
    )


@dataclass
class ProviderBundle:
    generator: object
    retriever: object
    grad_source: GradientSource | None
    freq_table: WordFrequencyTable | None
    fixtures: FixtureStore | None = None


def build_providers(config: AppConfig, transport=None) -> ProviderBundle:
    """Instantiate providers per config; a custom transport is test plumbing."""
    prov = config.providers
    if prov.mode == "simulated":
        sim = config.simulated
        generator = SimulatedGenerator(
            latency_per_token_ms=sim.gen_latency_ms_per_token,
            base_latency_ms=sim.gen_base_latency_ms,
            time_scale=sim.time_scale,
        )
        retriever = SimulatedRetriever(
            latency_ms=sim.retrieval_latency_ms,
            doc_token_count=sim.doc_token_count,
            time_scale=sim.time_scale,
        )
        fixtures = None
    else:
        fixtures = FixtureStore(prov.fixtures, mode=prov.mode) if prov.fixtures else None
        kwargs = dict(
            fixtures=fixtures,
            attempts=prov.attempts,
            backoff_s=prov.backoff_s,
            timeout_s=prov.timeout_s,
        )
        if transport is not None:
            kwargs["transport"] = transport
        generator = GeneratorClient(endpoint=prov.generator_url, **kwargs)
        retriever = RetrieverClient(endpoint=prov.retriever_url, **kwargs)

    grad_source = None
    if config.data.gradients is not None:
        mean, per_instance = load_gradients(config.data.gradients)
        grad_source = GradientSource(mean=mean, per_instance=per_instance)
    freq_table = None
    if config.data.word_frequencies is not None:
        freq_table = load_word_frequency_table(config.data.word_frequencies)
    return ProviderBundle(
        generator=generator, retriever=retriever,
        grad_source=grad_source, freq_table=freq_table, fixtures=fixtures,
    )
