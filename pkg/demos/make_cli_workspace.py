"""Write a ready-to-use CLI workspace: dataset, gradients, frequencies, config.

Run with:  python demos/make_cli_workspace.py [target_dir]
then follow the printed commands.
"""

import json
import shutil
import sys
from importlib import resources
from pathlib import Path

target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demos/workspace")
target.mkdir(parents=True, exist_ok=True)

records = []
for i in range(20):
    records.append(
        {
            "instance_id": f"q{i:02d}",
            "question": f"what is the name of item {i} in the catalog of items",
            "references": [f"item {i}"],
        }
    )
(target / "dataset.jsonl").write_text(
    "".join(json.dumps(r) + "\n" for r in records), encoding="utf-8"
)

lines = [json.dumps({"mean": [1.0, 0.0]})]
for i, record in enumerate(records):
    aligned = 1.5 if i % 5 else 0.02  # every fifth question is atypical
    lines.append(json.dumps({"instance_id": record["instance_id"], "grad": [aligned, 0.1]}))
(target / "gradients.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")

freq_source = resources.files("selective_rag").joinpath("data/word_frequencies_en.tsv")
with resources.as_file(freq_source) as src:
    shutil.copy(src, target / "word_frequencies.tsv")

(target / "config.toml").write_text(
    """[providers]
mode = "simulated"

[simulated]
retrieval_latency_ms = 400.0
gen_latency_ms_per_token = 1.0
doc_token_count = 50

[retrieval]
k = 10

[detector]
fraction = 0.2

[data]
dataset = "dataset.jsonl"
word_frequencies = "word_frequencies.tsv"
gradients = "gradients.jsonl"

[run]
mode = "both"
parallelism = 8
seed = 0
""",
    encoding="utf-8",
)

config = target / "config.toml"
print(f"workspace ready in {target}/  — try:")
print(f"  selective-rag score   --config {config} --out {target}/scores.jsonl")
print(f"  selective-rag detect  --scores {target}/scores.jsonl --out {target}/routes.jsonl")
print(f"  selective-rag scatter --scores {target}/routes.jsonl")
print(f"  selective-rag run     --config {config} --out {target}/report.json")
