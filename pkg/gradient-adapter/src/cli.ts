/** Batch export: read jobs JSONL ({instance_id, input_text, target_text}),
 * compute every gradient, write the gradient file.
 *
 * Usage: node dist/cli.js --jobs jobs.jsonl --out gradients.jsonl
 */

import { readFileSync } from "node:fs";

import { computeGradient } from "./gradients.js";
import { writeGradientFile } from "./export.js";
import { TinyTransformer } from "./model.js";

function arg(name: string): string {
  const index = process.argv.indexOf(`--${name}`);
  if (index < 0 || index + 1 >= process.argv.length) {
    console.error(`missing --${name}; usage: cli --jobs jobs.jsonl --out gradients.jsonl`);
    process.exit(2);
  }
  return process.argv[index + 1];
}

const jobsPath = arg("jobs");
const outPath = arg("out");

const model = new TinyTransformer();
const perInstance = new Map<string, number[]>();
const lines = readFileSync(jobsPath, "utf-8").split("\n");
for (const [index, line] of lines.entries()) {
  if (!line.trim()) continue;
  const obj = JSON.parse(line);
  const { grad } = computeGradient(model, {
    instanceId: String(obj.instance_id),
    inputText: obj.input_text,
    targetText: obj.target_text,
  });
  if (perInstance.has(String(obj.instance_id))) {
    console.error(`${jobsPath}:${index + 1}: duplicate instance_id ${obj.instance_id}`);
    process.exit(1);
  }
  perInstance.set(String(obj.instance_id), grad);
}
const count = writeGradientFile(outPath, perInstance);
console.log(`wrote ${count} gradients (dim ${[...perInstance.values()][0]?.length}) -> ${outPath}`);
