/** Gradient-file export: JSONL with the dataset mean on the first line, then
 * one {"instance_id", "grad"} object per instance, sorted by id.  This is the
 * exact format the primary toolkit's gradient loader reads. */

import { writeFileSync } from "node:fs";

import { meanGradient } from "./gradients.js";

export function writeGradientFile(path: string, perInstance: Map<string, number[]>): number {
  if (perInstance.size === 0) throw new Error("no gradients to export");
  const mean = meanGradient([...perInstance.values()]);
  const lines = [JSON.stringify({ mean })];
  for (const instanceId of [...perInstance.keys()].sort()) {
    lines.push(JSON.stringify({ instance_id: instanceId, grad: perInstance.get(instanceId) }));
  }
  writeFileSync(path, lines.join("\n") + "\n", "utf-8");
  return perInstance.size;
}
