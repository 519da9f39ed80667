/**
 * The two batch operations behind the CLIs: encode a whole catalog into an
 * embedding file, and evaluate cosine similarity for a list of code pairs.
 */

import { readFileSync } from "node:fs";

import { CatalogRow } from "./catalog.js";
import { EmbeddingFile, EmbeddingRow } from "./embeddingFile.js";
import { SentenceEncoder } from "./encoder.js";
import { FileFormatError, MissingCode } from "./errors.js";
import { cosineSimilarity } from "./similarity.js";

/** One embedding row per catalog row, in catalog order. */
export function exportEmbeddings(
  catalog: CatalogRow[],
  encoder: SentenceEncoder,
): EmbeddingFile {
  const rows: EmbeddingRow[] = catalog.map((entry) => ({
    system: entry.system,
    code: entry.code,
    vector: encoder.encode(entry.description),
  }));
  return { dim: encoder.dim, encoderId: encoder.id, rows };
}

export interface CodePair {
  systemA: string;
  codeA: string;
  systemB: string;
  codeB: string;
}

const PAIRS_HEADER = ["system_a", "code_a", "system_b", "code_b"];

/** Parse a pairs TSV: `system_a<TAB>code_a<TAB>system_b<TAB>code_b` rows. */
export function parsePairs(text: string, path: string): CodePair[] {
  const lines = text.split("\n");
  const header = (lines[0] ?? "").split("\t").map((h) => h.trim().toLowerCase());
  if (header.length < 4 || PAIRS_HEADER.some((want, i) => header[i] !== want)) {
    throw new FileFormatError(
      "pairs header must be system_a<TAB>code_a<TAB>system_b<TAB>code_b", path, 1);
  }
  const pairs: CodePair[] = [];
  for (let i = 1; i < lines.length; i++) {
    if (lines[i].trim() === "") continue;
    const parts = lines[i].split("\t").map((p) => p.trim());
    if (parts.length < 4 || parts.slice(0, 4).some((p) => p === "")) {
      throw new FileFormatError("pairs row needs 4 columns", path, i + 1);
    }
    pairs.push({ systemA: parts[0], codeA: parts[1], systemB: parts[2], codeB: parts[3] });
  }
  return pairs;
}

export function readPairs(path: string): CodePair[] {
  return parsePairs(readFileSync(path, "utf-8"), path);
}

export interface SimilarityRow extends CodePair {
  cosine: number;
}

export function cosineReport(emb: EmbeddingFile, pairs: CodePair[]): SimilarityRow[] {
  const index = new Map<string, Float64Array>();
  for (const row of emb.rows) {
    index.set(`${row.system}\t${row.code}`, row.vector);
  }
  const lookup = (system: string, code: string): Float64Array => {
    const vector = index.get(`${system}\t${code}`);
    if (!vector) {
      throw new MissingCode(`code ${system} ${code} is not in the embedding file`);
    }
    return vector;
  };
  return pairs.map((pair) => ({
    ...pair,
    cosine: cosineSimilarity(
      lookup(pair.systemA, pair.codeA),
      lookup(pair.systemB, pair.codeB),
    ),
  }));
}

/** TSV text for a similarity report; cosines carry six decimal places. */
export function serializeReport(rows: SimilarityRow[]): string {
  const lines = ["system_a\tcode_a\tsystem_b\tcode_b\tcosine"];
  for (const row of rows) {
    lines.push([
      row.systemA, row.codeA, row.systemB, row.codeB, row.cosine.toFixed(6),
    ].join("\t"));
  }
  return lines.join("\n") + "\n";
}
