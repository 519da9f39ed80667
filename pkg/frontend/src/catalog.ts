/**
 * Reader for the code-catalog TSV consumed and produced by the risk-prediction
 * workbench: a `system<TAB>code<TAB>description` header row, then one row per
 * code. Codes are treated as opaque strings here; the workbench normalizes
 * them on its side when it loads the embedding file.
 */

import { readFileSync } from "node:fs";

import { EmptyCatalog, FileFormatError } from "./errors.js";

export interface CatalogRow {
  system: string;
  code: string;
  description: string;
}

const HEADER = ["system", "code", "description"];

export function parseCatalog(text: string, path: string): CatalogRow[] {
  const lines = text.split("\n");
  if (lines.length === 0 || lines[0].trim() === "") {
    throw new FileFormatError("catalog is missing its header row", path, 1);
  }
  const header = lines[0].split("\t").map((h) => h.trim().toLowerCase());
  if (header.length < 3 || HEADER.some((want, i) => header[i] !== want)) {
    throw new FileFormatError(
      "catalog header must be system<TAB>code<TAB>description", path, 1);
  }
  const rows: CatalogRow[] = [];
  const seen = new Set<string>();
  for (let i = 1; i < lines.length; i++) {
    const line = lines[i];
    if (line.trim() === "") continue;
    const parts = line.split("\t");
    if (parts.length < 3) {
      throw new FileFormatError("catalog row needs 3 columns", path, i + 1);
    }
    const system = parts[0].trim();
    const code = parts[1].trim();
    const description = parts[2].trim();
    if (system === "" || code === "") {
      throw new FileFormatError("empty system or code", path, i + 1);
    }
    if (description === "") {
      throw new FileFormatError(`empty description for ${code}`, path, i + 1);
    }
    const key = `${system}\t${code}`;
    if (seen.has(key)) {
      throw new FileFormatError(`duplicate catalog code ${system} ${code}`, path, i + 1);
    }
    seen.add(key);
    rows.push({ system, code, description });
  }
  if (rows.length === 0) {
    throw new EmptyCatalog(`${path}: catalog has a header but no code rows`);
  }
  return rows;
}

export function readCatalog(path: string): CatalogRow[] {
  return parseCatalog(readFileSync(path, "utf-8"), path);
}
