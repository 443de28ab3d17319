/** Minimal RIFF/WAVE reader: PCM 16-bit or IEEE float 32-bit, any channel
 * count (averaged to mono). */

import { readFileSync } from "node:fs";

export interface WavData {
  samples: Float64Array; // mono
  sampleRate: number;
}

export function readWav(path: string): WavData {
  const raw = readFileSync(path);
  if (raw.length < 44 || raw.toString("ascii", 0, 4) !== "RIFF" || raw.toString("ascii", 8, 12) !== "WAVE") {
    throw new Error(`${path}: not a RIFF/WAVE file`);
  }
  let offset = 12;
  let format = 0;
  let channels = 0;
  let sampleRate = 0;
  let bitsPerSample = 0;
  let data: Buffer | null = null;
  while (offset + 8 <= raw.length) {
    const chunkId = raw.toString("ascii", offset, offset + 4);
    const chunkSize = raw.readUInt32LE(offset + 4);
    const body = offset + 8;
    if (chunkId === "fmt ") {
      format = raw.readUInt16LE(body);
      channels = raw.readUInt16LE(body + 2);
      sampleRate = raw.readUInt32LE(body + 4);
      bitsPerSample = raw.readUInt16LE(body + 14);
    } else if (chunkId === "data") {
      data = raw.subarray(body, body + chunkSize);
    }
    offset = body + chunkSize + (chunkSize % 2);
  }
  if (!data || !channels || !sampleRate) throw new Error(`${path}: missing fmt/data chunk`);
  const bytesPer = bitsPerSample / 8;
  const frames = Math.floor(data.length / (bytesPer * channels));
  const samples = new Float64Array(frames);
  for (let f = 0; f < frames; f++) {
    let acc = 0;
    for (let c = 0; c < channels; c++) {
      const at = (f * channels + c) * bytesPer;
      if (format === 1 && bitsPerSample === 16) acc += data.readInt16LE(at) / 32768;
      else if (format === 3 && bitsPerSample === 32) acc += data.readFloatLE(at);
      else throw new Error(`${path}: unsupported WAV encoding (format ${format}, ${bitsPerSample} bit)`);
    }
    samples[f] = acc / channels;
  }
  return { samples, sampleRate };
}

/** Naive linear resampling; adequate for feature extraction. */
export function resample(samples: Float64Array, from: number, to: number): Float64Array {
  if (from === to) return samples;
  const outLength = Math.max(1, Math.round((samples.length * to) / from));
  const out = new Float64Array(outLength);
  for (let i = 0; i < outLength; i++) {
    const position = (i * (samples.length - 1)) / Math.max(1, outLength - 1);
    const lo = Math.floor(position);
    const hi = Math.min(samples.length - 1, lo + 1);
    const frac = position - lo;
    out[i] = samples[lo] * (1 - frac) + samples[hi] * frac;
  }
  return out;
}
