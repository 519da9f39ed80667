#!/usr/bin/env node
/**
 * Encode every description in a code catalog with a pinned sentence encoder
 * and write the frozen embedding file.
 *
 * Usage: embed-export --catalog catalog.tsv [--encoder <id>] --out emb.tsv
 */

import { parseArgs } from "node:util";
import process from "node:process";

import { readCatalog } from "../catalog.js";
import { writeEmbeddingFile } from "../embeddingFile.js";
import { DEFAULT_ENCODER_ID, getEncoder } from "../encoder.js";
import { EmbedExportError } from "../errors.js";
import { exportEmbeddings } from "../export.js";

export function main(argv: string[]): number {
  let values;
  try {
    ({ values } = parseArgs({
      args: argv,
      options: {
        catalog: { type: "string" },
        encoder: { type: "string", default: DEFAULT_ENCODER_ID },
        out: { type: "string" },
      },
    }));
  } catch (err) {
    process.stderr.write(`embed-export: ${(err as Error).message}\n`);
    return 2;
  }
  if (!values.catalog || !values.out) {
    process.stderr.write(
      "usage: embed-export --catalog catalog.tsv [--encoder <id>] --out emb.tsv\n");
    return 2;
  }
  try {
    const encoder = getEncoder(values.encoder as string);
    const catalog = readCatalog(values.catalog);
    const file = exportEmbeddings(catalog, encoder);
    writeEmbeddingFile(file, values.out);
    process.stderr.write(
      `wrote ${file.rows.length} vectors (dim=${file.dim}, encoder=${file.encoderId}) to ${values.out}\n`);
    return 0;
  } catch (err) {
    if (err instanceof EmbedExportError) {
      process.stderr.write(`embed-export: ${err.message}\n`);
      return 2;
    }
    if (err instanceof Error && "code" in err && err.code === "ENOENT") {
      process.stderr.write(`embed-export: ${err.message}\n`);
      return 2;
    }
    throw err;
  }
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv.slice(2)));
}
