import * as path from 'node:path';
import { readFileSync } from 'node:fs';

export interface SessionVector {
  send: Record<string, unknown>;
  expect: Record<string, unknown> | null;
}

export interface WireVectors {
  framing: { frame: Record<string, unknown>; hex: string }[];
  session: SessionVector[];
}

/** Conformance vectors shared with the supervisor build. */
export function loadVectors(): WireVectors {
  const vectorsPath = path.resolve(__dirname, '..', '..', '..', 'src', 'evisynth', 'data', 'conformance', 'wire_vectors.json');
  return JSON.parse(readFileSync(vectorsPath, 'utf-8')) as WireVectors;
}

/** Tiny deterministic PRNG (mulberry32) for generated-mix properties. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}
