"""Command-line entry points.

Subcommands: score, detect, run, eval, scatter, record-fixtures.  All paths
and provider wiring come from a TOML config file; individual flags override
the config values for quick experiments.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import statistics
import sys
from pathlib import Path

from .config import AppConfig, ProviderBundle, build_providers, load_config
from .detector import (
    ThresholdPolicy,
    assign_routes,
    read_instance_scores,
    score_corpus,
    threshold_top_fraction,
    write_instance_scores,
)
from .harness import (
    ExperimentSettings,
    emit_scatter,
    evaluate,
    load_dataset,
    render_report_table,
    report_to_dict,
    run_experiment,
)
from .pipeline import GenerationResult, write_batch_results


def _write_json(path: str | None, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _apply_overrides(config: AppConfig, args: argparse.Namespace) -> AppConfig:
    settings = config.settings
    updates = {}
    if getattr(args, "k", None) is not None:
        updates["k"] = args.k
    if getattr(args, "fraction", None) is not None:
        updates["fraction"] = args.fraction
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if updates:
        config.settings = dataclasses.replace(settings, **updates)
    if getattr(args, "dataset", None) is not None:
        config.data.dataset = Path(args.dataset)
    if getattr(args, "fixtures", None) is not None:
        config.providers.fixtures = Path(args.fixtures)
    if getattr(args, "mode", None) is not None:
        config.run_mode = args.mode
    return config


def _load_bundle(config: AppConfig) -> ProviderBundle:
    bundle = build_providers(config)
    if bundle.grad_source is None:
        raise SystemExit("config error: [data].gradients is required for scoring")
    if bundle.freq_table is None:
        raise SystemExit("config error: [data].word_frequencies is required for scoring")
    return bundle


def _config_echo(config: AppConfig) -> dict:
    s = config.settings
    return {
        "dataset": str(config.data.dataset) if config.data.dataset else None,
        "k": s.k,
        "fraction": s.fraction,
        "mode": config.run_mode,
        "seed": s.seed,
        "budget": s.budget,
        "agreement_metric": s.agreement_metric,
        "provider_mode": config.providers.mode,
        "template": s.template.name,
    }


def cmd_score(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    bundle = _load_bundle(config)
    records = load_dataset(config.data.dataset)
    s = config.settings
    corpus = score_corpus(
        records,
        bundle.generator,
        bundle.grad_source,
        bundle.freq_table,
        denom_floor=s.denom_floor,
        agreement_metric=s.agreement_metric,
        params=s.params,
        template=s.template,
        parallelism=s.parallelism,
    )
    write_instance_scores(corpus.scores, args.out)
    for err in corpus.errors:
        print(f"error: {err.instance_id}: {err.message}", file=sys.stderr)
    print(f"scored {len(corpus.scores)} instances ({len(corpus.errors)} errors) -> {args.out}")
    return 0 if not corpus.errors else 1


def cmd_detect(args: argparse.Namespace) -> int:
    scores = read_instance_scores(args.scores)
    if not scores:
        raise SystemExit("no scores to threshold")
    policy = ThresholdPolicy(fraction=args.fraction)
    threshold = threshold_top_fraction(scores, policy)
    labeled = assign_routes(scores, policy)
    write_instance_scores(labeled, args.out)
    n_tail = sum(1 for s in labeled if s.route == "long_tail")
    print(f"threshold: {threshold:.6g}")
    print(f"routed {n_tail}/{len(labeled)} instances long_tail -> {args.out}")
    return 0


def _run_summary(report, seed: int) -> dict:
    out = {"seed": seed, "speedup": report.speedup, "p_value": report.p_value}
    for name, p in (("baseline", report.baseline), ("selective", report.selective)):
        if p is None:
            continue
        out[f"{name}_mean_latency_ms"] = p.mean_latency_ms
        for metric in ("rouge1", "bleu4", "accuracy"):
            value = getattr(p.evaluation, metric)
            if value is not None:
                out[f"{name}_{metric}"] = value
    return out


def cmd_run(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    bundle = _load_bundle(config)
    records = load_dataset(config.data.dataset)
    runs = args.runs if getattr(args, "runs", None) is not None else int(config.raw.get("run", {}).get("runs", 3))
    base_seed = config.settings.seed
    first_report = None
    summaries = []
    for i in range(runs):
        settings_i = dataclasses.replace(config.settings, seed=base_seed + i)
        report = run_experiment(
            records,
            bundle.generator,
            bundle.retriever,
            bundle.grad_source,
            bundle.freq_table,
            settings_i,
            mode=config.run_mode,
            config_echo=_config_echo(config) | {"seed": settings_i.seed, "runs": runs},
        )
        if first_report is None:
            first_report = report
        summaries.append(_run_summary(report, settings_i.seed))

    payload = report_to_dict(first_report)
    payload["runs"] = summaries
    payload["runs_summary"] = _aggregate_run_summaries(summaries)
    _write_json(args.out, payload)
    if getattr(args, "results_out", None):
        chosen = first_report.selective or first_report.baseline
        write_batch_results(chosen.results, args.results_out)
    print(render_report_table(first_report))
    if runs > 1:
        print(f"runs: {runs} (per-run metrics are in the report's 'runs' array)")
    return 0


def _aggregate_run_summaries(summaries: list[dict]) -> dict:
    keys = sorted({k for s in summaries for k, v in s.items() if k != "seed" and isinstance(v, (int, float))})
    out = {}
    for key in keys:
        values = [s[key] for s in summaries if isinstance(s.get(key), (int, float))]
        if not values:
            continue
        out[key] = {
            "mean": statistics.fmean(values),
            "std": statistics.stdev(values) if len(values) > 1 else 0.0,
        }
    return out


def cmd_eval(args: argparse.Namespace) -> int:
    records = load_dataset(args.dataset)
    results = []
    with open(args.results, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                results.append(
                    GenerationResult(
                        instance_id=str(obj["instance_id"]),
                        text=obj.get("text", ""),
                        token_probs=(),
                        latency_ms=float(obj.get("latency_ms", 0.0)),
                        route_taken=obj.get("route", "common"),
                        retrieval_count=int(obj.get("retrieval_count", 0)),
                        k=int(obj.get("k", 0)),
                        error=obj.get("error"),
                    )
                )
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise SystemExit(f"{args.results}:{lineno}: malformed result: {exc}")
    task_type = records[0].task_type if records else "open_qa"
    evaluation = evaluate(results, records, task_type)
    payload = {
        "task_type": evaluation.task_type,
        "n": evaluation.n,
        "rouge1": evaluation.rouge1,
        "bleu4": evaluation.bleu4,
        "accuracy": evaluation.accuracy,
        "per_instance": evaluation.per_instance,
    }
    _write_json(args.out, payload)
    return 0


def cmd_scatter(args: argparse.Namespace) -> int:
    scores = read_instance_scores(args.scores)
    full = {r["instance_id"]: r for r in emit_scatter(scores, "full")}
    ablated = {r["instance_id"]: r for r in emit_scatter(scores, "no_stats_semantics")}
    lines = ["instance_id\tgece_full\tgece_ablated\troute"]
    for instance_id in sorted(full):
        f, a = full[instance_id], ablated[instance_id]
        lines.append(f"{instance_id}\t{f['value']:.10g}\t{a['value']:.10g}\t{f['route']}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_record_fixtures(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    config.providers.mode = "record"
    if config.providers.fixtures is None:
        raise SystemExit("config error: [providers].fixtures path is required to record")
    bundle = _load_bundle(config)
    records = load_dataset(config.data.dataset)
    run_experiment(
        records,
        bundle.generator,
        bundle.retriever,
        bundle.grad_source,
        bundle.freq_table,
        config.settings,
        mode=config.run_mode,
        config_echo=_config_echo(config),
    )
    print(f"recorded {len(bundle.fixtures)} fixtures -> {config.providers.fixtures}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selective-rag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *, config=False, dataset=False, out_default=None):
        if config:
            p.add_argument("--config", required=True, help="TOML config file")
        if dataset:
            p.add_argument("--dataset", help="dataset JSONL (overrides config)")
        p.add_argument("--out", default=out_default, help="output path")

    p = sub.add_parser("score", help="score a corpus into an instance-score JSONL")
    add_common(p, config=True, dataset=True, out_default="scores.jsonl")
    p.add_argument("--fixtures", help="fixture file (overrides config)")
    p.add_argument("--k", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("detect", help="compute the top-fraction threshold and routes")
    p.add_argument("--scores", required=True, help="instance-score JSONL from `score`")
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--out", default="routes.jsonl")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("run", help="run the end-to-end experiment")
    add_common(p, config=True, dataset=True)
    p.add_argument("--mode", choices=["both", "selective", "always_retrieve"])
    p.add_argument("--fixtures", help="fixture file (overrides config)")
    p.add_argument("--k", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int, help="repeat the experiment this many times (default 3)")
    p.add_argument("--results-out", help="also write the selective pass results JSONL here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="aggregate metrics over a results JSONL")
    p.add_argument("--results", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scatter", help="emit full vs ablated score scatter rows")
    p.add_argument("--scores", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_scatter)

    p = sub.add_parser("record-fixtures", help="record live provider responses to fixtures")
    add_common(p, config=True, dataset=True)
    p.add_argument("--mode", choices=["both", "selective", "always_retrieve"])
    p.add_argument("--fixtures", help="fixture file (overrides config)")
    p.add_argument("--k", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_record_fixtures)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
