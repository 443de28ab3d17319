import { execFileSync } from "node:child_process";
import { writeFileSync } from "node:fs";

/** Run the primary engine's CLI; returns stdout. */
export function runEngine(args: string[]): string {
  return execFileSync("python3", ["-m", "ragcap", ...args], {
    encoding: "utf-8",
    timeout: 120_000,
  });
}

/** Deterministic pseudo-random generator for test fixtures. */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randomUnit(dim: number, rand: () => number): Float32Array {
  const v = new Float64Array(dim);
  let sq = 0;
  for (let i = 0; i < dim; i++) {
    // Box-Muller from two uniforms
    const u1 = Math.max(rand(), 1e-12);
    const u2 = rand();
    v[i] = Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2);
    sq += v[i] * v[i];
  }
  const norm = Math.sqrt(sq);
  return Float32Array.from(v, (x) => x / norm);
}

/** 16-bit PCM mono WAV with the given tones. */
export function writeWav(
  path: string,
  freqs: number[],
  seconds = 0.5,
  sampleRate = 16_000,
): void {
  const frames = Math.round(seconds * sampleRate);
  const data = Buffer.alloc(frames * 2);
  for (let i = 0; i < frames; i++) {
    let sample = 0;
    for (const freq of freqs) {
      sample += Math.sin((2 * Math.PI * freq * i) / sampleRate) / freqs.length;
    }
    data.writeInt16LE(Math.round(sample * 0.8 * 32767), i * 2);
  }
  const header = Buffer.alloc(44);
  header.write("RIFF", 0, "ascii");
  header.writeUInt32LE(36 + data.length, 4);
  header.write("WAVE", 8, "ascii");
  header.write("fmt ", 12, "ascii");
  header.writeUInt32LE(16, 16);
  header.writeUInt16LE(1, 20); // PCM
  header.writeUInt16LE(1, 22); // mono
  header.writeUInt32LE(sampleRate, 24);
  header.writeUInt32LE(sampleRate * 2, 28);
  header.writeUInt16LE(2, 32);
  header.writeUInt16LE(16, 34);
  header.write("data", 36, "ascii");
  header.writeUInt32LE(data.length, 40);
  writeFileSync(path, Buffer.concat([header, data]));
}
