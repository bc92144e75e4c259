/** A miniature causal transformer with a hand-written backward pass.
 *
 * Pre-norm decoder blocks (RMSNorm -> multi-head attention -> residual,
 * RMSNorm -> two-matrix GELU FFN -> residual), learned positional embeddings,
 * and a linear head.  RMSNorm rather than LayerNorm: mean-subtracting norms
 * make every per-position gradient below the final norm sum to zero, which
 * would collapse the per-block gradient means this adapter serves.
 *
 * The backward pass propagates the next-token cross-entropy loss through the
 * whole stack but accumulates weight gradients only for the FFN matrices,
 * which is all the adapter needs.  No update is ever applied.
 */

import { gaussian, mulberry32 } from "./rng.js";

export interface ModelConfig {
  vocabSize: number;
  dModel: number;
  nHeads: number;
  nLayers: number;
  ffnDim: number;
  maxSeq: number;
  seed: number;
}

export const DEFAULT_CONFIG: ModelConfig = {
  vocabSize: 96,
  dModel: 16,
  nHeads: 2,
  nLayers: 4,
  ffnDim: 32,
  maxSeq: 96,
  seed: 1234,
};

export interface FfnGradients {
  /** d loss / d W1, shape dModel x ffnDim (flat, row-major). */
  w1: Float64Array;
  /** d loss / d W2, shape ffnDim x dModel (flat, row-major). */
  w2: Float64Array;
}

const LN_EPS = 1e-5;
const GELU_C = Math.sqrt(2 / Math.PI);

function gelu(x: number): number {
  const u = GELU_C * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1 + Math.tanh(u));
}

function geluGrad(x: number): number {
  const u = GELU_C * (x + 0.044715 * x * x * x);
  const t = Math.tanh(u);
  return 0.5 * (1 + t) + 0.5 * x * (1 - t * t) * GELU_C * (1 + 3 * 0.044715 * x * x);
}

interface NormCache {
  x: Float64Array; // T x d, the norm input
  invRms: Float64Array; // T
}

/** y[t,i] = gamma[i] * x[t,i] / rms(x[t]), per position. */
function rmsNorm(
  x: Float64Array, T: number, d: number, gamma: Float64Array,
): { y: Float64Array; cache: NormCache } {
  const y = new Float64Array(T * d);
  const invRms = new Float64Array(T);
  for (let t = 0; t < T; t++) {
    let meanSq = 0;
    for (let i = 0; i < d; i++) meanSq += x[t * d + i] * x[t * d + i];
    meanSq /= d;
    const inv = 1 / Math.sqrt(meanSq + LN_EPS);
    invRms[t] = inv;
    for (let i = 0; i < d; i++) y[t * d + i] = gamma[i] * x[t * d + i] * inv;
  }
  return { y, cache: { x, invRms } };
}

/** dx for RMS norm; gamma gradients are not tracked. */
function rmsNormBackward(
  dy: Float64Array, T: number, d: number, gamma: Float64Array, cache: NormCache,
): Float64Array {
  const dx = new Float64Array(T * d);
  for (let t = 0; t < T; t++) {
    const inv = cache.invRms[t];
    let dot = 0;
    for (let i = 0; i < d; i++) dot += dy[t * d + i] * gamma[i] * cache.x[t * d + i];
    const scale = (dot * inv * inv * inv) / d;
    for (let i = 0; i < d; i++) {
      dx[t * d + i] = dy[t * d + i] * gamma[i] * inv - cache.x[t * d + i] * scale;
    }
  }
  return dx;
}

/** out[T x n] = x[T x m] . W[m x n] */
function matmul(x: Float64Array, W: Float64Array, T: number, m: number, n: number): Float64Array {
  const out = new Float64Array(T * n);
  for (let t = 0; t < T; t++) {
    for (let i = 0; i < m; i++) {
      const xv = x[t * m + i];
      if (xv === 0) continue;
      for (let j = 0; j < n; j++) out[t * n + j] += xv * W[i * n + j];
    }
  }
  return out;
}

/** dX[T x m] = dOut[T x n] . W^T */
function matmulBackX(dOut: Float64Array, W: Float64Array, T: number, m: number, n: number): Float64Array {
  const dx = new Float64Array(T * m);
  for (let t = 0; t < T; t++) {
    for (let i = 0; i < m; i++) {
      let acc = 0;
      for (let j = 0; j < n; j++) acc += dOut[t * n + j] * W[i * n + j];
      dx[t * m + i] = acc;
    }
  }
  return dx;
}

/** dW[m x n] += X^T . dOut */
function matmulBackW(x: Float64Array, dOut: Float64Array, dW: Float64Array, T: number, m: number, n: number): void {
  for (let t = 0; t < T; t++) {
    for (let i = 0; i < m; i++) {
      const xv = x[t * m + i];
      if (xv === 0) continue;
      for (let j = 0; j < n; j++) dW[i * n + j] += xv * dOut[t * n + j];
    }
  }
}

interface LayerCache {
  xIn: Float64Array;
  norm1: NormCache;
  a: Float64Array;
  q: Float64Array;
  k: Float64Array;
  v: Float64Array;
  probs: Float64Array[]; // per head, T x T
  ctx: Float64Array;
  xMid: Float64Array;
  norm2: NormCache;
  f: Float64Array;
  pre1: Float64Array;
  h1: Float64Array;
}

export class TinyTransformer {
  readonly cfg: ModelConfig;
  private readonly params = new Map<string, Float64Array>();

  constructor(cfg: ModelConfig = DEFAULT_CONFIG) {
    this.cfg = cfg;
    const normal = gaussian(mulberry32(cfg.seed));
    const init = (name: string, size: number, scale: number, offset = 0) => {
      const block = new Float64Array(size);
      for (let i = 0; i < size; i++) block[i] = offset + normal() * scale;
      this.params.set(name, block);
    };
    const zeros = (name: string, size: number) => {
      this.params.set(name, new Float64Array(size));
    };

    const { vocabSize: V, dModel: d, nLayers, ffnDim: ff, maxSeq } = cfg;
    const scale = 1 / Math.sqrt(d);
    init("emb", V * d, 0.1);
    init("pos", maxSeq * d, 0.1);
    for (let l = 0; l < nLayers; l++) {
      // norm gains jittered around 1, as in a model that has actually trained
      init(`layer${l}.norm1.g`, d, 0.1, 1.0);
      init(`layer${l}.attn.wq`, d * d, scale);
      init(`layer${l}.attn.wk`, d * d, scale);
      init(`layer${l}.attn.wv`, d * d, scale);
      init(`layer${l}.attn.wo`, d * d, scale);
      init(`layer${l}.norm2.g`, d, 0.1, 1.0);
      init(`layer${l}.ffn.w1`, d * ff, scale);
      zeros(`layer${l}.ffn.b1`, ff);
      init(`layer${l}.ffn.w2`, ff * d, 1 / Math.sqrt(ff));
      zeros(`layer${l}.ffn.b2`, d);
    }
    init("normf.g", d, 0.1, 1.0);
    init("head.w", d * V, scale);
    zeros("head.b", V);
  }

  param(name: string): Float64Array {
    const block = this.params.get(name);
    if (!block) throw new Error(`unknown parameter block ${name}`);
    return block;
  }

  paramNames(): string[] {
    return [...this.params.keys()];
  }

  get depth(): number {
    return this.cfg.nLayers;
  }

  /** Forward pass; caches per-layer activations when `keep` is set. */
  private forward(tokens: number[], keep: boolean) {
    const { dModel: d, nHeads, ffnDim: ff, vocabSize: V } = this.cfg;
    const T = tokens.length;
    if (T < 2) throw new Error("sequence must contain at least two tokens");
    if (T > this.cfg.maxSeq) {
      throw new Error(`sequence length ${T} exceeds model context ${this.cfg.maxSeq}`);
    }
    const dh = d / nHeads;
    const emb = this.param("emb");
    const pos = this.param("pos");

    let x = new Float64Array(T * d);
    for (let t = 0; t < T; t++) {
      for (let i = 0; i < d; i++) x[t * d + i] = emb[tokens[t] * d + i] + pos[t * d + i];
    }

    const layers: LayerCache[] = [];
    for (let l = 0; l < this.cfg.nLayers; l++) {
      const xIn = x;
      const { y: a, cache: norm1 } = rmsNorm(xIn, T, d, this.param(`layer${l}.norm1.g`));
      const q = matmul(a, this.param(`layer${l}.attn.wq`), T, d, d);
      const k = matmul(a, this.param(`layer${l}.attn.wk`), T, d, d);
      const v = matmul(a, this.param(`layer${l}.attn.wv`), T, d, d);

      const probs: Float64Array[] = [];
      const ctx = new Float64Array(T * d);
      for (let h = 0; h < nHeads; h++) {
        const p = new Float64Array(T * T);
        for (let t = 0; t < T; t++) {
          let maxScore = -Infinity;
          const scores = new Float64Array(t + 1);
          for (let u = 0; u <= t; u++) {
            let s = 0;
            for (let i = 0; i < dh; i++) s += q[t * d + h * dh + i] * k[u * d + h * dh + i];
            s /= Math.sqrt(dh);
            scores[u] = s;
            if (s > maxScore) maxScore = s;
          }
          let total = 0;
          for (let u = 0; u <= t; u++) {
            scores[u] = Math.exp(scores[u] - maxScore);
            total += scores[u];
          }
          for (let u = 0; u <= t; u++) {
            const weight = scores[u] / total;
            p[t * T + u] = weight;
            for (let i = 0; i < dh; i++) ctx[t * d + h * dh + i] += weight * v[u * d + h * dh + i];
          }
        }
        probs.push(p);
      }
      const attnOut = matmul(ctx, this.param(`layer${l}.attn.wo`), T, d, d);
      const xMid = new Float64Array(T * d);
      for (let i = 0; i < T * d; i++) xMid[i] = xIn[i] + attnOut[i];

      const { y: f, cache: norm2 } = rmsNorm(xMid, T, d, this.param(`layer${l}.norm2.g`));
      const pre1 = matmul(f, this.param(`layer${l}.ffn.w1`), T, d, ff);
      const b1 = this.param(`layer${l}.ffn.b1`);
      for (let t = 0; t < T; t++) for (let j = 0; j < ff; j++) pre1[t * ff + j] += b1[j];
      const h1 = new Float64Array(T * ff);
      for (let i = 0; i < T * ff; i++) h1[i] = gelu(pre1[i]);
      const ffnOut = matmul(h1, this.param(`layer${l}.ffn.w2`), T, ff, d);
      const b2 = this.param(`layer${l}.ffn.b2`);
      const xOut = new Float64Array(T * d);
      for (let t = 0; t < T; t++) {
        for (let i = 0; i < d; i++) xOut[t * d + i] = xMid[t * d + i] + ffnOut[t * d + i] + b2[i];
      }
      if (keep) layers.push({ xIn, norm1, a, q, k, v, probs, ctx, xMid, norm2, f, pre1, h1 });
      x = xOut;
    }

    const { y, cache: normf } = rmsNorm(x, T, d, this.param("normf.g"));
    const logits = matmul(y, this.param("head.w"), T, d, V);
    const hb = this.param("head.b");
    for (let t = 0; t < T; t++) for (let j = 0; j < V; j++) logits[t * V + j] += hb[j];
    return { T, layers, y, normf, logits };
  }

  /** Mean next-token cross entropy over positions >= targetStart - 1. */
  loss(tokens: number[], targetStart: number): number {
    if (targetStart < 1 || targetStart >= tokens.length) {
      throw new Error("targetStart must leave at least one input and one target token");
    }
    const { logits } = this.forward(tokens, false);
    return this.lossFromLogits(logits, tokens, targetStart).loss;
  }

  private lossFromLogits(logits: Float64Array, tokens: number[], targetStart: number) {
    const V = this.cfg.vocabSize;
    const T = tokens.length;
    const positions: number[] = [];
    for (let t = targetStart - 1; t < T - 1; t++) positions.push(t);
    let loss = 0;
    const dLogits = new Float64Array(T * V);
    for (const t of positions) {
      let maxLogit = -Infinity;
      for (let j = 0; j < V; j++) maxLogit = Math.max(maxLogit, logits[t * V + j]);
      let total = 0;
      for (let j = 0; j < V; j++) total += Math.exp(logits[t * V + j] - maxLogit);
      const target = tokens[t + 1];
      const logProb = logits[t * V + target] - maxLogit - Math.log(total);
      loss -= logProb;
      for (let j = 0; j < V; j++) {
        const p = Math.exp(logits[t * V + j] - maxLogit) / total;
        dLogits[t * V + j] = (p - (j === target ? 1 : 0)) / positions.length;
      }
    }
    return { loss: loss / positions.length, dLogits };
  }

  /** One forward + backward; returns the loss and per-layer FFN weight
   * gradients.  Model parameters are never modified. */
  lossAndFfnGrads(tokens: number[], targetStart: number): { loss: number; ffn: FfnGradients[] } {
    if (targetStart < 1 || targetStart >= tokens.length) {
      throw new Error("targetStart must leave at least one input and one target token");
    }
    const { dModel: d, nHeads, ffnDim: ff, vocabSize: V } = this.cfg;
    const dh = d / nHeads;
    const { T, layers, normf, logits } = this.forward(tokens, true);
    const { loss, dLogits } = this.lossFromLogits(logits, tokens, targetStart);

    // head: logits = y . Whead + b
    const dy = matmulBackX(dLogits, this.param("head.w"), T, d, V);
    let dx = rmsNormBackward(dy, T, d, this.param("normf.g"), normf);

    const ffnGrads: FfnGradients[] = [];
    for (let l = this.cfg.nLayers - 1; l >= 0; l--) {
      const cache = layers[l];
      const dW1 = new Float64Array(d * ff);
      const dW2 = new Float64Array(ff * d);

      // FFN block: xOut = xMid + gelu(LN2(xMid) . W1 + b1) . W2 + b2
      const dFfnOut = dx;
      matmulBackW(cache.h1, dFfnOut, dW2, T, ff, d);
      const dH1 = matmulBackX(dFfnOut, this.param(`layer${l}.ffn.w2`), T, ff, d);
      const dPre1 = new Float64Array(T * ff);
      for (let i = 0; i < T * ff; i++) dPre1[i] = dH1[i] * geluGrad(cache.pre1[i]);
      matmulBackW(cache.f, dPre1, dW1, T, d, ff);
      const dF = matmulBackX(dPre1, this.param(`layer${l}.ffn.w1`), T, d, ff);
      const dxMid = rmsNormBackward(dF, T, d, this.param(`layer${l}.norm2.g`), cache.norm2);
      for (let i = 0; i < T * d; i++) dxMid[i] += dx[i]; // residual

      // attention block: xMid = xIn + (heads(LN1(xIn)) . Wo)
      const dAttnOut = dxMid;
      const dCtx = matmulBackX(dAttnOut, this.param(`layer${l}.attn.wo`), T, d, d);
      const dQ = new Float64Array(T * d);
      const dK = new Float64Array(T * d);
      const dV = new Float64Array(T * d);
      for (let h = 0; h < nHeads; h++) {
        const p = cache.probs[h];
        for (let t = 0; t < T; t++) {
          // dp[u] = dctx_h[t] . v_h[u]; softmax backward over u <= t
          let dot = 0;
          const dp = new Float64Array(t + 1);
          for (let u = 0; u <= t; u++) {
            let acc = 0;
            for (let i = 0; i < dh; i++) acc += dCtx[t * d + h * dh + i] * cache.v[u * d + h * dh + i];
            dp[u] = acc;
            dot += p[t * T + u] * acc;
          }
          for (let u = 0; u <= t; u++) {
            const weight = p[t * T + u];
            for (let i = 0; i < dh; i++) {
              dV[u * d + h * dh + i] += weight * dCtx[t * d + h * dh + i];
            }
            const dScore = weight * (dp[u] - dot) / Math.sqrt(dh);
            for (let i = 0; i < dh; i++) {
              dQ[t * d + h * dh + i] += dScore * cache.k[u * d + h * dh + i];
              dK[u * d + h * dh + i] += dScore * cache.q[t * d + h * dh + i];
            }
          }
        }
      }
      const dA = matmulBackX(dQ, this.param(`layer${l}.attn.wq`), T, d, d);
      const dAk = matmulBackX(dK, this.param(`layer${l}.attn.wk`), T, d, d);
      const dAv = matmulBackX(dV, this.param(`layer${l}.attn.wv`), T, d, d);
      for (let i = 0; i < T * d; i++) dA[i] += dAk[i] + dAv[i];
      const dxIn = rmsNormBackward(dA, T, d, this.param(`layer${l}.norm1.g`), cache.norm1);
      for (let i = 0; i < T * d; i++) dxIn[i] += dxMid[i]; // residual

      ffnGrads[l] = { w1: dW1, w2: dW2 };
      dx = dxIn;
    }
    return { loss, ffn: ffnGrads };
  }
}
