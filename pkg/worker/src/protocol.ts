/**
 * Wire protocol shared with the supervisor: canonical JSON frames behind a
 * 4-byte big-endian length prefix. Canonical means recursively sorted keys,
 * compact separators, ASCII-escaped text, so both sides produce identical
 * bytes for identical frames.
 */

export const PROTOCOL_VERSION = 1;

export type Frame = Record<string, unknown> & { v: number; kind: string };

const REQUIRED_FIELDS: Record<string, string[]> = {
  init: ['manifest', 'thresholds'],
  ready: ['tables', 'thresholds'],
  init_failure: ['error'],
  exec: ['code'],
  exec_result: ['status', 'stdout', 'stderr', 'vars', 'duration'],
  shutdown: [],
};

export class FrameError extends Error {}

export function validateFrame(frame: unknown): asserts frame is Frame {
  if (typeof frame !== 'object' || frame === null || Array.isArray(frame)) {
    throw new FrameError('frame must be a map');
  }
  const record = frame as Record<string, unknown>;
  if (record.v !== PROTOCOL_VERSION) {
    throw new FrameError(`unsupported protocol version ${String(record.v)}`);
  }
  const kind = record.kind;
  if (typeof kind !== 'string' || !(kind in REQUIRED_FIELDS)) {
    throw new FrameError(`unknown frame kind ${String(kind)}`);
  }
  for (const field of REQUIRED_FIELDS[kind]) {
    if (!(field in record)) {
      throw new FrameError(`${kind} frame missing field '${field}'`);
    }
  }
}

function escapeAscii(json: string): string {
  return json.replace(/[-￿]/g, (ch) => '\\u' + ch.charCodeAt(0).toString(16).padStart(4, '0'));
}

export function canonicalJson(value: unknown): string {
  const normalize = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(normalize);
    if (v !== null && typeof v === 'object') {
      const out: Record<string, unknown> = {};
      for (const key of Object.keys(v as object).sort()) {
        out[key] = normalize((v as Record<string, unknown>)[key]);
      }
      return out;
    }
    return v;
  };
  return escapeAscii(JSON.stringify(normalize(value)));
}

export function encodeFrame(frame: Frame): Buffer {
  validateFrame(frame);
  const body = Buffer.from(canonicalJson(frame), 'utf-8');
  const header = Buffer.alloc(4);
  header.writeUInt32BE(body.length, 0);
  return Buffer.concat([header, body]);
}

export function makeFrame(kind: string, fields: Record<string, unknown> = {}): Frame {
  const frame = { v: PROTOCOL_VERSION, kind, ...fields } as Frame;
  validateFrame(frame);
  return frame;
}

/** Incremental decoder: feed byte chunks, drain complete frames. */
export class FrameReader {
  private buffer: Buffer = Buffer.alloc(0);

  feed(chunk: Buffer): Frame[] {
    this.buffer = Buffer.concat([this.buffer, chunk]);
    const frames: Frame[] = [];
    while (this.buffer.length >= 4) {
      const length = this.buffer.readUInt32BE(0);
      if (this.buffer.length < 4 + length) break;
      const body = this.buffer.subarray(4, 4 + length).toString('utf-8');
      this.buffer = this.buffer.subarray(4 + length);
      const frame: unknown = JSON.parse(body);
      validateFrame(frame);
      frames.push(frame);
    }
    return frames;
  }
}

// ---------------------------------------------------------------------------
// Primitive persistence filter: text, integer, real, boolean, list, map only
// ---------------------------------------------------------------------------

function isPlainObject(value: object): boolean {
  // Realm-agnostic: a plain object's prototype chain is exactly one link long
  // (or null for Object.create(null)), which holds for objects created inside
  // the vm context too.
  const proto = Object.getPrototypeOf(value);
  if (proto === null) return true;
  return Object.getPrototypeOf(proto) === null;
}

export function isPrimitive(value: unknown): boolean {
  if (typeof value === 'string' || typeof value === 'boolean') return true;
  if (typeof value === 'number') return Number.isFinite(value);
  if (Array.isArray(value)) return value.every(isPrimitive);
  if (value !== null && typeof value === 'object' && isPlainObject(value)) {
    return Object.entries(value).every(([, v]) => isPrimitive(v));
  }
  return false;
}

export function filterPrimitives(variables: Record<string, unknown>): Record<string, unknown> {
  const kept: Record<string, unknown> = {};
  for (const [name, value] of Object.entries(variables)) {
    if (isPrimitive(value)) kept[name] = value;
  }
  return kept;
}
