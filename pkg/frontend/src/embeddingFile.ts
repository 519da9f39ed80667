/**
 * The frozen embedding file format shared with the risk-prediction workbench:
 * first line `#dim=D count=N encoder=<id>`, then one `system<TAB>code<TAB>`
 * row per code whose third column is the comma-separated vector. UTF-8, LF
 * line endings, `%.9g` float formatting, rows ordered by catalog row.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { FileFormatError } from "./errors.js";

export interface EmbeddingRow {
  system: string;
  code: string;
  vector: Float64Array;
}

export interface EmbeddingFile {
  dim: number;
  encoderId: string;
  rows: EmbeddingRow[];
}

/**
 * Format like C's `%.9g`: at most nine significant digits, fixed notation for
 * decimal exponents in [-4, 9), exponential otherwise, trailing zeros
 * stripped. Deterministic, so rewriting the same table is byte-identical.
 */
export function formatFloat9(x: number): string {
  if (!Number.isFinite(x)) {
    throw new RangeError(`cannot format non-finite value ${x}`);
  }
  if (x === 0) return Object.is(x, -0) ? "-0" : "0";
  const exp = Number(x.toExponential(8).split("e")[1]);
  if (exp >= -4 && exp < 9) {
    const fixed = x.toFixed(Math.max(0, 8 - exp));
    return fixed.includes(".")
      ? fixed.replace(/0+$/, "").replace(/\.$/, "")
      : fixed;
  }
  const [mantissa, rawExp] = x.toExponential(8).split("e");
  const trimmed = mantissa.replace(/0+$/, "").replace(/\.$/, "");
  const sign = rawExp.startsWith("-") ? "-" : "+";
  const digits = rawExp.replace(/^[+-]/, "").padStart(2, "0");
  return `${trimmed}e${sign}${digits}`;
}

export function serializeEmbeddingFile(file: EmbeddingFile): string {
  const lines = [`#dim=${file.dim} count=${file.rows.length} encoder=${file.encoderId}`];
  for (const row of file.rows) {
    if (row.vector.length !== file.dim) {
      throw new RangeError(
        `vector for ${row.system} ${row.code} has length ${row.vector.length}, expected ${file.dim}`);
    }
    const floats = Array.from(row.vector, formatFloat9).join(",");
    lines.push(`${row.system}\t${row.code}\t${floats}`);
  }
  return lines.join("\n") + "\n";
}

export function writeEmbeddingFile(file: EmbeddingFile, path: string): void {
  writeFileSync(path, serializeEmbeddingFile(file), "utf-8");
}

const HEADER_RE = /^#dim=(\d+) count=(\d+) encoder=(.+)$/;

export function parseEmbeddingFile(text: string, path: string): EmbeddingFile {
  const lines = text.split("\n");
  const header = HEADER_RE.exec(lines[0] ?? "");
  if (!header) {
    throw new FileFormatError(
      "embedding header must be '#dim=D count=N encoder=ID'", path, 1);
  }
  const dim = Number(header[1]);
  const count = Number(header[2]);
  const encoderId = header[3];
  const rows: EmbeddingRow[] = [];
  const seen = new Set<string>();
  for (let i = 1; i < lines.length; i++) {
    if (lines[i] === "") continue;
    const parts = lines[i].split("\t");
    if (parts.length !== 3) {
      throw new FileFormatError("embedding row needs 3 columns", path, i + 1);
    }
    const [system, code, floats] = parts;
    const pieces = floats.split(",");
    if (pieces.length !== dim) {
      throw new FileFormatError(
        `vector has ${pieces.length} entries, header says dim=${dim}`, path, i + 1);
    }
    const vector = new Float64Array(dim);
    for (let j = 0; j < dim; j++) {
      const value = Number(pieces[j]);
      if (pieces[j].trim() === "" || !Number.isFinite(value)) {
        throw new FileFormatError(`bad float '${pieces[j]}'`, path, i + 1);
      }
      vector[j] = value;
    }
    const key = `${system}\t${code}`;
    if (seen.has(key)) {
      throw new FileFormatError(`duplicate code ${system} ${code}`, path, i + 1);
    }
    seen.add(key);
    rows.push({ system, code, vector });
  }
  if (rows.length !== count) {
    throw new FileFormatError(
      `header promises ${count} rows, file has ${rows.length}`, path);
  }
  return { dim, encoderId, rows };
}

export function readEmbeddingFile(path: string): EmbeddingFile {
  return parseEmbeddingFile(readFileSync(path, "utf-8"), path);
}
