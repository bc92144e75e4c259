/** Job handling: run one forward+backward, reduce the FFN gradients of the
 * configured layers to one scalar mean per weight matrix, and concatenate the
 * means in fixed block order (layer ascending, input matrix then output
 * matrix).  The vector dimension is constant for a fixed model and range. */

import type { FfnGradients, ModelConfig } from "./model.js";
import { buildSequence } from "./tokenizer.js";

export interface GradientJob {
  instanceId: string;
  inputText: string;
  targetText: string;
  /** 1-based inclusive layer range; defaults to [29, 32]. */
  layerRange?: [number, number];
}

export interface GradientModel {
  cfg: ModelConfig;
  lossAndFfnGrads(tokens: number[], targetStart: number): { loss: number; ffn: FfnGradients[] };
}

export const DEFAULT_LAYER_RANGE: [number, number] = [29, 32];

/** Map the configured range onto the model.  The default range names the
 * last four layers of a 32-layer model; shallower or deeper models use their
 * last four layers.  An explicit non-default range must fit the depth. */
export function resolveLayerRange(depth: number, range?: [number, number]): number[] {
  const isDefault =
    range === undefined ||
    (range[0] === DEFAULT_LAYER_RANGE[0] && range[1] === DEFAULT_LAYER_RANGE[1]);
  if (isDefault && depth !== 32) {
    const count = Math.min(4, depth);
    return Array.from({ length: count }, (_, i) => depth - count + i);
  }
  const [lo, hi] = range ?? DEFAULT_LAYER_RANGE;
  if (!Number.isInteger(lo) || !Number.isInteger(hi) || lo < 1 || hi < lo || hi > depth) {
    throw new Error(`layer range [${lo}, ${hi}] is outside model depth ${depth}`);
  }
  return Array.from({ length: hi - lo + 1 }, (_, i) => lo - 1 + i);
}

function blockMean(block: Float64Array): number {
  let total = 0;
  for (let i = 0; i < block.length; i++) total += block[i];
  return total / block.length;
}

export function computeGradient(model: GradientModel, job: GradientJob): { grad: number[]; loss: number } {
  if (!job.inputText || !job.targetText) {
    throw new Error("input_text and target_text must be non-empty");
  }
  const layers = resolveLayerRange(model.cfg.nLayers, job.layerRange);
  const { tokens, targetStart } = buildSequence(job.inputText, job.targetText, model.cfg.vocabSize);
  const { loss, ffn } = model.lossAndFfnGrads(tokens, targetStart);
  const grad: number[] = [];
  for (const layer of layers) {
    grad.push(blockMean(ffn[layer].w1));
    grad.push(blockMean(ffn[layer].w2));
  }
  return { grad, loss };
}

export function meanGradient(vectors: number[][]): number[] {
  if (vectors.length === 0) throw new Error("mean of an empty job set");
  const dim = vectors[0].length;
  const mean = new Array<number>(dim).fill(0);
  for (const vec of vectors) {
    if (vec.length !== dim) {
      throw new Error(`gradient dimension mismatch: ${vec.length} != ${dim}`);
    }
    for (let i = 0; i < dim; i++) mean[i] += vec[i];
  }
  return mean.map((v) => v / vectors.length);
}
