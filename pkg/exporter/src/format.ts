/**
 * Byte-exact writers and readers for the caption engine's file formats.
 *
 * Store (two files per base path):
 *   <base>.bin  header: magic "DRC1", uint32 LE version=1, uint32 LE dim,
 *               uint64 LE count; then count*dim float32 LE, row-major.
 *   <base>.tsv  one line per entry: id TAB source TAB text, with
 *               backslash/tab/newline/CR escaped as \\ \t \n \r.
 *
 * Mapper: magic "DRM1", uint32 LE version=1, uint32 LE outDim,
 * uint32 LE inDim, then weight row-major and bias, float32 LE.
 *
 * Vector table: id TAB v1,v2,...,vd per line.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { endianness } from "node:os";

export interface StoreEntry {
  id: string;
  source: string;
  text: string;
  embedding: Float32Array;
}

export interface Store {
  entries: StoreEntry[];
  dim: number;
}

export interface Mapper {
  weight: Float32Array; // outDim * inDim, row-major
  bias: Float32Array;
  inDim: number;
  outDim: number;
}

const STORE_MAGIC = "DRC1";
const MAPPER_MAGIC = "DRM1";
const VERSION = 1;

function assertLittleEndian(): void {
  if (endianness() !== "LE") {
    throw new Error("store files are little-endian; big-endian hosts are unsupported");
  }
}

export function escapeField(field: string): string {
  return field
    .replaceAll("\\", "\\\\")
    .replaceAll("\t", "\\t")
    .replaceAll("\n", "\\n")
    .replaceAll("\r", "\\r");
}

export function unescapeField(field: string): string {
  if (!field.includes("\\")) return field;
  let out = "";
  for (let i = 0; i < field.length; i++) {
    const ch = field[i];
    if (ch === "\\" && i + 1 < field.length) {
      const next = field[i + 1];
      const mapped =
        next === "\\" ? "\\" : next === "t" ? "\t" : next === "n" ? "\n" : next === "r" ? "\r" : null;
      if (mapped !== null) {
        out += mapped;
        i++;
        continue;
      }
    }
    out += ch;
  }
  return out;
}

/** v / ||v||_2 rounded to float32; accumulation happens in float64. */
export function normalize(values: ArrayLike<number>): Float32Array {
  let sq = 0;
  for (let i = 0; i < values.length; i++) {
    const x = values[i];
    if (!Number.isFinite(x)) throw new Error("vector contains NaN/Inf");
    sq += x * x;
  }
  const norm = Math.sqrt(sq);
  if (norm < 1e-12) throw new Error("cannot normalize a zero vector");
  const out = new Float32Array(values.length);
  for (let i = 0; i < values.length; i++) out[i] = values[i] / norm;
  return out;
}

export function writeStore(base: string, entries: StoreEntry[], dim: number): void {
  assertLittleEndian();
  const header = Buffer.alloc(20);
  header.write(STORE_MAGIC, 0, "ascii");
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(dim, 8);
  header.writeBigUInt64LE(BigInt(entries.length), 12);
  const payload = Buffer.alloc(entries.length * dim * 4);
  entries.forEach((entry, row) => {
    if (entry.embedding.length !== dim) {
      throw new Error(`entry ${entry.id}: dim ${entry.embedding.length}, expected ${dim}`);
    }
    payload.set(Buffer.from(entry.embedding.buffer, entry.embedding.byteOffset, dim * 4), row * dim * 4);
  });
  writeFileSync(`${base}.bin`, Buffer.concat([header, payload]));
  const lines = entries.map(
    (e) => `${escapeField(e.id)}\t${escapeField(e.source)}\t${escapeField(e.text)}\n`,
  );
  writeFileSync(`${base}.tsv`, lines.join(""), "utf-8");
}

export function readStore(base: string): Store {
  assertLittleEndian();
  const raw = readFileSync(`${base}.bin`);
  if (raw.length < 20) throw new Error(`${base}.bin: shorter than the header`);
  if (raw.toString("ascii", 0, 4) !== STORE_MAGIC) throw new Error(`${base}.bin: bad magic`);
  if (raw.readUInt32LE(4) !== VERSION) throw new Error(`${base}.bin: unsupported version`);
  const dim = raw.readUInt32LE(8);
  const count = Number(raw.readBigUInt64LE(12));
  if (raw.length !== 20 + count * dim * 4) throw new Error(`${base}.bin: payload size mismatch`);
  const meta = readFileSync(`${base}.tsv`, "utf-8").split("\n").filter((l) => l.length > 0);
  if (meta.length !== count) throw new Error(`${base}.tsv: ${meta.length} rows for count ${count}`);
  const entries: StoreEntry[] = meta.map((line, row) => {
    const fields = line.split("\t");
    if (fields.length !== 3) throw new Error(`${base}.tsv:${row + 1}: expected 3 fields`);
    const embedding = new Float32Array(dim);
    for (let i = 0; i < dim; i++) embedding[i] = raw.readFloatLE(20 + (row * dim + i) * 4);
    return {
      id: unescapeField(fields[0]),
      source: unescapeField(fields[1]),
      text: unescapeField(fields[2]),
      embedding,
    };
  });
  return { entries, dim };
}

export function writeMapper(path: string, mapper: Mapper): void {
  assertLittleEndian();
  if (mapper.weight.length !== mapper.outDim * mapper.inDim || mapper.bias.length !== mapper.outDim) {
    throw new Error("mapper shape mismatch");
  }
  const header = Buffer.alloc(16);
  header.write(MAPPER_MAGIC, 0, "ascii");
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(mapper.outDim, 8);
  header.writeUInt32LE(mapper.inDim, 12);
  writeFileSync(
    path,
    Buffer.concat([
      header,
      Buffer.from(mapper.weight.buffer, mapper.weight.byteOffset, mapper.weight.length * 4),
      Buffer.from(mapper.bias.buffer, mapper.bias.byteOffset, mapper.bias.length * 4),
    ]),
  );
}

export function readMapper(path: string): Mapper {
  assertLittleEndian();
  const raw = readFileSync(path);
  if (raw.length < 16 || raw.toString("ascii", 0, 4) !== MAPPER_MAGIC) {
    throw new Error(`${path}: bad mapper header`);
  }
  const outDim = raw.readUInt32LE(8);
  const inDim = raw.readUInt32LE(12);
  if (raw.length !== 16 + 4 * (outDim * inDim + outDim)) {
    throw new Error(`${path}: payload size mismatch`);
  }
  const weight = new Float32Array(outDim * inDim);
  for (let i = 0; i < weight.length; i++) weight[i] = raw.readFloatLE(16 + i * 4);
  const bias = new Float32Array(outDim);
  for (let i = 0; i < outDim; i++) bias[i] = raw.readFloatLE(16 + (weight.length + i) * 4);
  return { weight, bias, inDim, outDim };
}

export function writeVectorTable(path: string, ids: string[], rows: Float32Array[]): void {
  const lines = ids.map((id, i) => {
    const values = Array.from(rows[i], (x) => fullPrecision(x)).join(",");
    return `${escapeField(id)}\t${values}\n`;
  });
  writeFileSync(path, lines.join(""), "utf-8");
}

export function readVectorTable(path: string): { ids: string[]; rows: Float32Array[] } {
  const ids: string[] = [];
  const rows: Float32Array[] = [];
  for (const line of readFileSync(path, "utf-8").split("\n")) {
    if (!line) continue;
    const fields = line.split("\t");
    if (fields.length !== 2) throw new Error(`${path}: expected 2 fields per line`);
    ids.push(unescapeField(fields[0]));
    rows.push(Float32Array.from(fields[1].split(",").map(Number)));
  }
  return { ids, rows };
}

/** Shortest decimal string that round-trips to the same float64. */
function fullPrecision(x: number): string {
  return Object.is(x, -0) ? "-0.0" : String(x);
}
