/** HTTP surface: POST /gradient, GET /mean, GET /health, POST /export.
 *
 * Gradient computations hold the model exclusively, so requests are queued
 * and executed one at a time; the HTTP layer itself stays concurrent.
 */

import express, { type Express } from "express";

import { weightChecksum } from "./checksum.js";
import { computeGradient, meanGradient, type GradientJob } from "./gradients.js";
import { writeGradientFile } from "./export.js";
import { DEFAULT_CONFIG, TinyTransformer } from "./model.js";

export interface Service {
  app: Express;
  model: TinyTransformer;
  runs: Map<string, Map<string, number[]>>;
  /** High-water mark of concurrent gradient computations (must stay 1). */
  peakInFlight(): number;
}

export function createService(model: TinyTransformer = new TinyTransformer(DEFAULT_CONFIG)): Service {
  const app = express();
  app.use(express.json({ limit: "1mb" }));
  const runs = new Map<string, Map<string, number[]>>();
  const initialChecksum = weightChecksum(model);

  let queue: Promise<unknown> = Promise.resolve();
  let inFlight = 0;
  let peak = 0;
  const enqueue = <T>(work: () => T): Promise<T> => {
    const next = queue.then(() => {
      inFlight += 1;
      peak = Math.max(peak, inFlight);
      try {
        return work();
      } finally {
        inFlight -= 1;
      }
    });
    queue = next.catch(() => undefined);
    return next;
  };

  app.get("/health", (_req, res) => {
    res.json({
      status: "ok",
      model: {
        layers: model.cfg.nLayers,
        d_model: model.cfg.dModel,
        vocab_size: model.cfg.vocabSize,
        context: model.cfg.maxSeq,
      },
      weight_checksum: weightChecksum(model),
      weights_unchanged: weightChecksum(model) === initialChecksum,
    });
  });

  app.post("/gradient", async (req, res) => {
    const { instance_id, input_text, target_text, run_id, layer_range } = req.body ?? {};
    if (typeof instance_id !== "string" || !instance_id) {
      res.status(400).json({ error: "instance_id is required" });
      return;
    }
    const job: GradientJob = {
      instanceId: instance_id,
      inputText: typeof input_text === "string" ? input_text : "",
      targetText: typeof target_text === "string" ? target_text : "",
      layerRange: Array.isArray(layer_range) ? (layer_range as [number, number]) : undefined,
    };
    try {
      const { grad } = await enqueue(() => computeGradient(model, job));
      const runKey = typeof run_id === "string" && run_id ? run_id : "default";
      let run = runs.get(runKey);
      if (!run) {
        run = new Map();
        runs.set(runKey, run);
      }
      run.set(instance_id, grad);
      res.json({ instance_id, grad });
    } catch (err) {
      res.status(400).json({ error: String(err instanceof Error ? err.message : err) });
    }
  });

  app.get("/mean", (req, res) => {
    const runKey = typeof req.query.run_id === "string" && req.query.run_id ? req.query.run_id : "default";
    const run = runs.get(runKey);
    if (!run || run.size === 0) {
      res.status(404).json({ error: `no gradients stored for run ${runKey}` });
      return;
    }
    res.json({ run_id: runKey, mean: meanGradient([...run.values()]), count: run.size });
  });

  app.post("/export", (req, res) => {
    const { run_id, path } = req.body ?? {};
    const runKey = typeof run_id === "string" && run_id ? run_id : "default";
    const run = runs.get(runKey);
    if (!run || run.size === 0) {
      res.status(404).json({ error: `no gradients stored for run ${runKey}` });
      return;
    }
    if (typeof path !== "string" || !path) {
      res.status(400).json({ error: "path is required" });
      return;
    }
    try {
      const count = writeGradientFile(path, run);
      res.json({ path, count });
    } catch (err) {
      res.status(500).json({ error: String(err instanceof Error ? err.message : err) });
    }
  });

  return { app, model, runs, peakInFlight: () => peak };
}
