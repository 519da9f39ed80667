/**
 * Deterministic sentence encoders for code descriptions.
 *
 * The default encoder maps a description to a 384-dimensional vector by
 * feature hashing: word unigrams plus boundary-padded character 3- and
 * 4-grams, each hashed to a signed bucket and L2-normalized. Related
 * descriptions share words (and to a lesser degree character n-grams), so
 * their vectors point in similar directions, while unrelated descriptions
 * land near-orthogonal. The encoder is pure arithmetic: the same description
 * maps to bit-identical floats on every run, which is what the frozen
 * embedding file format requires.
 */

import { EncoderUnavailable } from "./errors.js";

export interface SentenceEncoder {
  readonly id: string;
  readonly dim: number;
  encode(text: string): Float64Array;
}

export const DEFAULT_ENCODER_ID = "char-ngram-384-v1";

const WORD_WEIGHT = 1.0;
const NGRAM_WEIGHT = 0.35;
const NGRAM_SIZES = [3, 4];

/** 32-bit FNV-1a over the UTF-16 code units of `text`. */
function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

function words(text: string): string[] {
  return text
    .toLowerCase()
    .replace(/[^a-z0-9]+/g, " ")
    .trim()
    .split(" ")
    .filter((w) => w.length > 0);
}

/** (feature, weight) pairs for one description, in deterministic order. */
function features(text: string): Array<[string, number]> {
  const out: Array<[string, number]> = [];
  for (const word of words(text)) {
    out.push([`w:${word}`, WORD_WEIGHT]);
    const padded = `<${word}>`;
    for (const n of NGRAM_SIZES) {
      for (let i = 0; i + n <= padded.length; i++) {
        out.push([`g:${padded.slice(i, i + n)}`, NGRAM_WEIGHT]);
      }
    }
  }
  if (out.length === 0) {
    // Degenerate description (no alphanumeric content): hash it whole so the
    // vector is still well defined and identical texts still agree.
    out.push([`raw:${text}`, WORD_WEIGHT]);
  }
  return out;
}

class CharNgramEncoder implements SentenceEncoder {
  readonly id = DEFAULT_ENCODER_ID;
  readonly dim = 384;

  encode(text: string): Float64Array {
    const vec = new Float64Array(this.dim);
    for (const [feature, weight] of features(text)) {
      const bucket = fnv1a(feature) % this.dim;
      const sign = fnv1a(`±${feature}`) & 1 ? 1.0 : -1.0;
      vec[bucket] += sign * weight;
    }
    let norm = 0;
    for (let i = 0; i < vec.length; i++) norm += vec[i] * vec[i];
    norm = Math.sqrt(norm);
    if (norm > 0) {
      for (let i = 0; i < vec.length; i++) vec[i] /= norm;
    }
    return vec;
  }
}

const REGISTRY: ReadonlyMap<string, () => SentenceEncoder> = new Map([
  [DEFAULT_ENCODER_ID, () => new CharNgramEncoder()],
]);

export function getEncoder(id: string): SentenceEncoder {
  const make = REGISTRY.get(id);
  if (!make) {
    const known = [...REGISTRY.keys()].join(", ");
    throw new EncoderUnavailable(`unknown encoder '${id}' (available: ${known})`);
  }
  return make();
}
