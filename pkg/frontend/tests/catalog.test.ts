import { describe, expect, it } from "vitest";

import { parseCatalog } from "../src/catalog.js";
import { EmptyCatalog, FileFormatError } from "../src/errors.js";

const GOOD = [
  "system\tcode\tdescription",
  "ICD10\tF10.13\tAlcohol abuse, with withdrawal",
  "ICD10\tA17.0\tTuberculosis meningitis",
  "",
].join("\n");

describe("catalog parsing", () => {
  it("parses header plus rows in order", () => {
    const rows = parseCatalog(GOOD, "cat.tsv");
    expect(rows.map((r) => r.code)).toEqual(["F10.13", "A17.0"]);
    expect(rows[0]).toEqual({
      system: "ICD10",
      code: "F10.13",
      description: "Alcohol abuse, with withdrawal",
    });
  });

  it("requires the exact header", () => {
    expect(() => parseCatalog("code\tdescription\nA\tB", "cat.tsv"))
      .toThrow(FileFormatError);
    expect(() => parseCatalog("", "cat.tsv")).toThrow(FileFormatError);
  });

  it("raises EmptyCatalog when only the header is present", () => {
    expect(() => parseCatalog("system\tcode\tdescription\n", "cat.tsv"))
      .toThrow(EmptyCatalog);
  });

  it("rejects short rows, blank descriptions, and duplicates", () => {
    const header = "system\tcode\tdescription\n";
    expect(() => parseCatalog(header + "ICD10\tA17.0", "cat.tsv"))
      .toThrow(/3 columns/);
    expect(() => parseCatalog(header + "ICD10\tA17.0\t ", "cat.tsv"))
      .toThrow(/empty description/);
    expect(() => parseCatalog(
      header + "ICD10\tA17.0\tone\nICD10\tA17.0\ttwo", "cat.tsv"))
      .toThrow(/duplicate/);
  });

  it("keeps tabs inside descriptions out but commas in", () => {
    const rows = parseCatalog(
      "system\tcode\tdescription\nICD9\t250.41\tDiabetes, type I, with renal manifestations",
      "cat.tsv");
    expect(rows[0].description).toContain(",");
  });
});
