/**
 * Embedding backends behind one interface.
 *
 * `TransformersClapEncoder` drives a real pretrained contrastive
 * audio-text checkpoint through transformers.js (optional dependency;
 * model weights must be reachable or cached locally).
 *
 * `DeterministicEncoder` is a dependency-free stand-in: hashed character
 * n-gram features for text and log-band spectral energies for audio.  It
 * produces stable, unit-norm vectors of the right shape so the export and
 * mapper pipelines can run and be tested offline; it makes no claim of
 * semantic audio-text alignment.
 */

import { normalize } from "./format.js";
import { readWav, resample } from "./wav.js";

export interface PairEncoder {
  readonly dim: number;
  encodeText(texts: string[]): Promise<Float32Array[]>;
  /** null marks a clip that could not be read/encoded (logged, skipped). */
  encodeAudio(paths: string[]): Promise<(Float32Array | null)[]>;
}

// -- deterministic fallback ---------------------------------------------------

function fnv1a(data: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < data.length; i++) {
    h ^= data.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

export class DeterministicEncoder implements PairEncoder {
  constructor(readonly dim: number = 64) {
    if (dim < 8) throw new Error("deterministic encoder needs dim >= 8");
  }

  async encodeText(texts: string[]): Promise<Float32Array[]> {
    return texts.map((text) => {
      const acc = new Float64Array(this.dim);
      const tokens: string[] = text.toLowerCase().split(/[^a-z0-9]+/).filter(Boolean);
      for (const token of tokens) {
        const padded = `^${token}$`;
        for (let i = 0; i + 3 <= padded.length; i++) {
          const h = fnv1a(padded.slice(i, i + 3));
          acc[h % this.dim] += (h & 0x100) === 0 ? 1 : -1;
        }
        const h = fnv1a(token);
        acc[h % this.dim] += (h & 0x100) === 0 ? 2 : -2;
      }
      if (acc.every((x) => x === 0)) acc[0] = 1; // empty/degenerate text
      return normalize(acc);
    });
  }

  async encodeAudio(paths: string[]): Promise<(Float32Array | null)[]> {
    const out: (Float32Array | null)[] = [];
    for (const path of paths) {
      try {
        const { samples, sampleRate } = readWav(path);
        out.push(this.spectralSignature(samples, sampleRate));
      } catch (err) {
        console.warn(`skipping ${path}: ${(err as Error).message}`);
        out.push(null);
      }
    }
    return out;
  }

  /** Log energies in `dim` geometrically spaced bands (Goertzel probes). */
  private spectralSignature(samples: Float64Array, sampleRate: number): Float32Array {
    const window = samples.subarray(0, Math.min(samples.length, sampleRate * 4));
    const acc = new Float64Array(this.dim);
    const fMin = 40;
    const fMax = Math.min(sampleRate / 2 - 1, 12_000);
    for (let b = 0; b < this.dim; b++) {
      const freq = fMin * Math.pow(fMax / fMin, b / Math.max(1, this.dim - 1));
      acc[b] = Math.log1p(goertzelPower(window, sampleRate, freq));
    }
    if (acc.every((x) => x === 0)) acc[0] = 1; // silence
    return normalize(acc);
  }
}

function goertzelPower(samples: Float64Array, sampleRate: number, freq: number): number {
  const w = (2 * Math.PI * freq) / sampleRate;
  const coeff = 2 * Math.cos(w);
  let s0 = 0;
  let s1 = 0;
  let s2 = 0;
  for (let i = 0; i < samples.length; i++) {
    s0 = samples[i] + coeff * s1 - s2;
    s2 = s1;
    s1 = s0;
  }
  const power = s1 * s1 + s2 * s2 - coeff * s1 * s2;
  return power / Math.max(1, samples.length);
}

// -- real checkpoint via transformers.js --------------------------------------

export class TransformersClapEncoder implements PairEncoder {
  private constructor(
    private readonly tokenizer: any,
    private readonly textModel: any,
    private readonly processor: any,
    private readonly audioModel: any,
    readonly dim: number,
  ) {}

  static async load(modelId: string): Promise<TransformersClapEncoder> {
    let transformers: any;
    try {
      // optional dependency; resolved at runtime only
      const moduleId = "@xenova/transformers";
      transformers = await import(/* @vite-ignore */ moduleId);
    } catch {
      throw new Error(
        "checkpoint backend unavailable: install the optional dependency " +
          "@xenova/transformers (and ensure model weights are reachable or cached)",
      );
    }
    const { AutoTokenizer, AutoProcessor, ClapTextModelWithProjection, ClapAudioModelWithProjection } =
      transformers;
    const tokenizer = await AutoTokenizer.from_pretrained(modelId);
    const textModel = await ClapTextModelWithProjection.from_pretrained(modelId, { quantized: true });
    const processor = await AutoProcessor.from_pretrained(modelId);
    const audioModel = await ClapAudioModelWithProjection.from_pretrained(modelId, { quantized: true });
    const probe = await textModel(tokenizer(["dimension probe"], { padding: true, truncation: true }));
    const dim = probe.text_embeds.dims.at(-1);
    return new TransformersClapEncoder(tokenizer, textModel, processor, audioModel, dim);
  }

  async encodeText(texts: string[]): Promise<Float32Array[]> {
    const out: Float32Array[] = [];
    for (const text of texts) {
      const inputs = this.tokenizer([text], { padding: true, truncation: true });
      const { text_embeds } = await this.textModel(inputs);
      out.push(normalize(Array.from(text_embeds.data as Float32Array)));
    }
    return out;
  }

  async encodeAudio(paths: string[]): Promise<(Float32Array | null)[]> {
    const rate = this.processor.feature_extractor.config.sampling_rate;
    const out: (Float32Array | null)[] = [];
    for (const path of paths) {
      try {
        const { samples, sampleRate } = readWav(path);
        const mono = Float32Array.from(resample(samples, sampleRate, rate));
        const inputs = await this.processor(mono);
        const { audio_embeds } = await this.audioModel(inputs);
        out.push(normalize(Array.from(audio_embeds.data as Float32Array)));
      } catch (err) {
        console.warn(`skipping ${path}: ${(err as Error).message}`);
        out.push(null);
      }
    }
    return out;
  }
}

/** "deterministic:<dim>" or "xenova:<model-id>" (also accepts a bare
 * transformers.js model id). */
export async function loadEncoder(checkpoint: string): Promise<PairEncoder> {
  if (checkpoint.startsWith("deterministic")) {
    const [, dim] = checkpoint.split(":");
    return new DeterministicEncoder(dim ? Number(dim) : 64);
  }
  const modelId = checkpoint.startsWith("xenova:") ? checkpoint.slice("xenova:".length) : checkpoint;
  return TransformersClapEncoder.load(modelId);
}
