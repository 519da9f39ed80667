#!/usr/bin/env node
/**
 * Report pairwise cosine similarities between stored embedding vectors.
 *
 * Usage: cosine-report --emb emb.tsv --pairs pairs.tsv --out sims.tsv
 */

import { writeFileSync } from "node:fs";
import { parseArgs } from "node:util";
import process from "node:process";

import { readEmbeddingFile } from "../embeddingFile.js";
import { EmbedExportError } from "../errors.js";
import { cosineReport, readPairs, serializeReport } from "../export.js";

export function main(argv: string[]): number {
  let values;
  try {
    ({ values } = parseArgs({
      args: argv,
      options: {
        emb: { type: "string" },
        pairs: { type: "string" },
        out: { type: "string" },
      },
    }));
  } catch (err) {
    process.stderr.write(`cosine-report: ${(err as Error).message}\n`);
    return 2;
  }
  if (!values.emb || !values.pairs || !values.out) {
    process.stderr.write(
      "usage: cosine-report --emb emb.tsv --pairs pairs.tsv --out sims.tsv\n");
    return 2;
  }
  try {
    const emb = readEmbeddingFile(values.emb);
    const pairs = readPairs(values.pairs);
    const report = cosineReport(emb, pairs);
    writeFileSync(values.out, serializeReport(report), "utf-8");
    process.stderr.write(`wrote ${report.length} similarities to ${values.out}\n`);
    return 0;
  } catch (err) {
    if (err instanceof EmbedExportError) {
      process.stderr.write(`cosine-report: ${err.message}\n`);
      return 2;
    }
    if (err instanceof Error && "code" in err && err.code === "ENOENT") {
      process.stderr.write(`cosine-report: ${err.message}\n`);
      return 2;
    }
    throw err;
  }
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv.slice(2)));
}
