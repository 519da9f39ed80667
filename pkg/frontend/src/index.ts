export { CatalogRow, parseCatalog, readCatalog } from "./catalog.js";
export {
  EmbeddingFile,
  EmbeddingRow,
  formatFloat9,
  parseEmbeddingFile,
  readEmbeddingFile,
  serializeEmbeddingFile,
  writeEmbeddingFile,
} from "./embeddingFile.js";
export { DEFAULT_ENCODER_ID, SentenceEncoder, getEncoder } from "./encoder.js";
export {
  EmbedExportError,
  EmptyCatalog,
  EncoderUnavailable,
  FileFormatError,
  MissingCode,
} from "./errors.js";
export {
  CodePair,
  SimilarityRow,
  cosineReport,
  exportEmbeddings,
  parsePairs,
  readPairs,
  serializeReport,
} from "./export.js";
export { cosineSimilarity } from "./similarity.js";
