import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import {
  escapeField,
  normalize,
  readMapper,
  readStore,
  readVectorTable,
  unescapeField,
  writeMapper,
  writeStore,
  writeVectorTable,
} from "../src/format.js";
import { mulberry32, randomUnit } from "./helpers.js";

const tmp = () => mkdtempSync(join(tmpdir(), "ragcap-exporter-"));

describe("store format", () => {
  it("writes the exact header layout", () => {
    const base = join(tmp(), "s");
    writeStore(base, [
      { id: "a", source: "s", text: "t", embedding: normalize([3, 4]) },
    ], 2);
    const raw = readFileSync(`${base}.bin`);
    expect(raw.toString("ascii", 0, 4)).toBe("DRC1");
    expect(raw.readUInt32LE(4)).toBe(1); // version
    expect(raw.readUInt32LE(8)).toBe(2); // dim
    expect(Number(raw.readBigUInt64LE(12))).toBe(1); // count
    expect(raw.length).toBe(20 + 2 * 4);
    expect(raw.readFloatLE(20)).toBeCloseTo(0.6, 6);
    expect(raw.readFloatLE(24)).toBeCloseTo(0.8, 6);
  });

  it("round-trips entries bit-exactly", () => {
    const rand = mulberry32(1);
    const base = join(tmp(), "s");
    const entries = Array.from({ length: 20 }, (_, i) => ({
      id: `id-${i}`,
      source: "unit",
      text: `caption number ${i}`,
      embedding: randomUnit(16, rand),
    }));
    writeStore(base, entries, 16);
    const loaded = readStore(base);
    expect(loaded.dim).toBe(16);
    loaded.entries.forEach((entry, i) => {
      expect(entry.id).toBe(entries[i].id);
      expect(entry.text).toBe(entries[i].text);
      expect(Array.from(entry.embedding)).toEqual(Array.from(entries[i].embedding));
    });
  });

  it("escapes control characters losslessly", () => {
    const nasty = "tab\there\nnewline \\ slash\rcr";
    expect(unescapeField(escapeField(nasty))).toBe(nasty);
    const base = join(tmp(), "s");
    writeStore(base, [{ id: "x\ty", source: "a\nb", text: nasty, embedding: normalize([1]) }], 1);
    const entry = readStore(base).entries[0];
    expect(entry.id).toBe("x\ty");
    expect(entry.source).toBe("a\nb");
    expect(entry.text).toBe(nasty);
  });
});

describe("mapper format", () => {
  it("writes the exact layout and round-trips", () => {
    const path = join(tmp(), "m.bin");
    const weight = Float32Array.from([1, 2, 3, 4, 5, 6]); // 2x3
    const bias = Float32Array.from([0.5, -0.5]);
    writeMapper(path, { weight, bias, inDim: 3, outDim: 2 });
    const raw = readFileSync(path);
    expect(raw.toString("ascii", 0, 4)).toBe("DRM1");
    expect(raw.readUInt32LE(8)).toBe(2);
    expect(raw.readUInt32LE(12)).toBe(3);
    expect(raw.length).toBe(16 + 4 * (6 + 2));
    const loaded = readMapper(path);
    expect(Array.from(loaded.weight)).toEqual(Array.from(weight));
    expect(Array.from(loaded.bias)).toEqual(Array.from(bias));
  });
});

describe("vector table", () => {
  it("round-trips float32 values exactly", () => {
    const rand = mulberry32(2);
    const path = join(tmp(), "v.tsv");
    const ids = ["q-0", "q-1", "q-2"];
    const rows = ids.map(() => randomUnit(8, rand));
    writeVectorTable(path, ids, rows);
    const loaded = readVectorTable(path);
    expect(loaded.ids).toEqual(ids);
    loaded.rows.forEach((row, i) => {
      expect(Array.from(row)).toEqual(Array.from(rows[i]));
    });
  });
});

describe("normalize", () => {
  it("matches the 3-4-5 triangle", () => {
    const out = normalize([3, 4]);
    expect(out[0]).toBeCloseTo(0.6, 7);
    expect(out[1]).toBeCloseTo(0.8, 7);
  });

  it("rejects zero vectors", () => {
    expect(() => normalize([0, 0])).toThrow(/zero/);
  });

  it("rejects non-finite input", () => {
    expect(() => normalize([1, Number.NaN])).toThrow(/NaN/);
  });
});
