/** Typed failures shared by the export and report tools. */

export class EmbedExportError extends Error {
  constructor(message: string) {
    super(message);
    this.name = new.target.name;
  }
}

/** The requested encoder id is not registered. */
export class EncoderUnavailable extends EmbedExportError {}

/** The catalog parsed but contains no code rows. */
export class EmptyCatalog extends EmbedExportError {}

/** A pair references a code that is not present in the embedding file. */
export class MissingCode extends EmbedExportError {}

/** A catalog, embedding, or pairs file violates its documented layout. */
export class FileFormatError extends EmbedExportError {
  constructor(message: string, readonly path: string, readonly line?: number) {
    super(line === undefined ? `${path}: ${message}` : `${path}:${line}: ${message}`);
  }
}
