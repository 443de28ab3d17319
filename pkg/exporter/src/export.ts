/**
 * Export operations: caption lists to engine stores, audio clip lists to
 * paired vector tables, and offline least-squares mapper fitting.
 */

import { readFileSync } from "node:fs";

import { loadEncoder, type PairEncoder } from "./encoders.js";
import {
  readStore,
  readVectorTable,
  unescapeField,
  writeMapper,
  writeStore,
  writeVectorTable,
  type StoreEntry,
} from "./format.js";
import { applyAffine, fitAffine } from "./linalg.js";

export interface ExportManifest {
  /** "deterministic:<dim>" or "xenova:<model-id>" */
  checkpoint: string;
  /** caption list: either `id TAB source TAB text` lines (engine metadata
   * format) or one bare caption per line */
  captions?: string;
  /** audio list: `id TAB path-to-wav` lines */
  audio?: string;
  /** output base path (text export) or vector table path (audio export) */
  out: string;
  batchSize?: number;
  device?: string;
  label?: string;
}

export function loadManifest(path: string): ExportManifest {
  const manifest = JSON.parse(readFileSync(path, "utf-8"));
  if (!manifest.checkpoint || !manifest.out) {
    throw new Error(`${path}: manifest needs at least "checkpoint" and "out"`);
  }
  return manifest;
}

interface CaptionRecord {
  id: string;
  source: string;
  text: string;
}

export function readCaptionList(path: string, label: string): CaptionRecord[] {
  const records: CaptionRecord[] = [];
  const lines = readFileSync(path, "utf-8").split("\n").filter((l) => l.length > 0);
  lines.forEach((line, i) => {
    const fields = line.split("\t");
    if (fields.length === 3) {
      records.push({
        id: unescapeField(fields[0]),
        source: unescapeField(fields[1]),
        text: unescapeField(fields[2]),
      });
    } else if (fields.length === 1) {
      records.push({ id: `${label}-${String(i).padStart(5, "0")}`, source: label, text: line });
    } else {
      throw new Error(`${path}:${i + 1}: expected 1 or 3 tab-separated fields`);
    }
  });
  if (records.length === 0) throw new Error(`${path}: caption list is empty`);
  return records;
}

export async function exportTextEmbeddings(
  manifest: ExportManifest,
  encoder?: PairEncoder,
): Promise<{ written: number; dim: number }> {
  if (!manifest.captions) throw new Error('text export needs "captions" in the manifest');
  const enc = encoder ?? (await loadEncoder(manifest.checkpoint));
  const label = manifest.label ?? "export";
  const records = readCaptionList(manifest.captions, label);
  const batchSize = manifest.batchSize ?? 32;
  const entries: StoreEntry[] = [];
  for (let at = 0; at < records.length; at += batchSize) {
    const batch = records.slice(at, at + batchSize);
    let vectors: Float32Array[];
    try {
      vectors = await enc.encodeText(batch.map((r) => r.text));
    } catch (err) {
      // batch-level failure: retry captions one by one so a single bad
      // caption is skipped, not the whole batch
      vectors = [];
      for (const record of batch) {
        try {
          vectors.push((await enc.encodeText([record.text]))[0]);
        } catch (inner) {
          console.warn(`skipping caption ${record.id}: ${(inner as Error).message}`);
          vectors.push(undefined as unknown as Float32Array);
        }
      }
    }
    batch.forEach((record, i) => {
      if (vectors[i]) entries.push({ ...record, embedding: vectors[i] });
    });
  }
  if (entries.length === 0) throw new Error("no caption could be encoded");
  writeStore(manifest.out, entries, enc.dim);
  return { written: entries.length, dim: enc.dim };
}

export async function exportAudioEmbeddings(
  manifest: ExportManifest,
  encoder?: PairEncoder,
): Promise<{ written: number; skipped: number; dim: number }> {
  if (!manifest.audio) throw new Error('audio export needs "audio" in the manifest');
  const enc = encoder ?? (await loadEncoder(manifest.checkpoint));
  const lines = readFileSync(manifest.audio, "utf-8").split("\n").filter((l) => l.length > 0);
  const ids: string[] = [];
  const paths: string[] = [];
  lines.forEach((line, i) => {
    const fields = line.split("\t");
    if (fields.length !== 2) throw new Error(`${manifest.audio}:${i + 1}: expected "id TAB path"`);
    ids.push(unescapeField(fields[0]));
    paths.push(fields[1]);
  });
  const vectors = await enc.encodeAudio(paths);
  const keptIds: string[] = [];
  const keptRows: Float32Array[] = [];
  vectors.forEach((vec, i) => {
    if (vec) {
      keptIds.push(ids[i]);
      keptRows.push(vec);
    }
  });
  writeVectorTable(manifest.out, keptIds, keptRows);
  return { written: keptRows.length, skipped: ids.length - keptIds.length, dim: enc.dim };
}

export function fitLinearMapper(
  storeBase: string,
  targetsPath: string,
  outPath: string,
  onWarning?: (message: string) => void,
): { inDim: number; outDim: number; pairs: number; regularized: boolean; maxResidual: number } {
  const store = readStore(storeBase);
  const targets = readVectorTable(targetsPath);
  const targetById = new Map(targets.ids.map((id, i) => [id, targets.rows[i]]));
  const inputs: Float32Array[] = [];
  const outputs: Float32Array[] = [];
  for (const entry of store.entries) {
    const target = targetById.get(entry.id);
    if (target) {
      inputs.push(entry.embedding);
      outputs.push(target);
    }
  }
  if (inputs.length === 0) throw new Error("no target vector matches any store id");
  const outDim = outputs[0].length;
  const fit = fitAffine(inputs, outputs, onWarning);
  writeMapper(outPath, {
    weight: Float32Array.from(fit.weight),
    bias: Float32Array.from(fit.bias),
    inDim: store.dim,
    outDim,
  });
  let maxResidual = 0;
  inputs.forEach((x, r) => {
    const prediction = applyAffine(fit, store.dim, outDim, x);
    for (let j = 0; j < outDim; j++) {
      maxResidual = Math.max(maxResidual, Math.abs(prediction[j] - outputs[r][j]));
    }
  });
  return {
    inDim: store.dim,
    outDim,
    pairs: inputs.length,
    regularized: fit.regularized,
    maxResidual,
  };
}
