/**
 * Worker entry point: a single-threaded frame loop over stdio. Exactly one
 * exec is in flight at a time; stdout carries nothing but protocol frames.
 */

import { encodeFrame, Frame, FrameReader, makeFrame } from './protocol';
import { ManifestEntry, WorkerRuntime } from './runtime';

function send(frame: Frame): void {
  process.stdout.write(encodeFrame(frame));
}

export function handleFrame(runtime: WorkerRuntime, frame: Frame): Frame | null {
  switch (frame.kind) {
    case 'init': {
      try {
        runtime.init(
          frame.manifest as ManifestEntry[],
          frame.thresholds as Record<string, number>,
          (frame.vars as Record<string, unknown>) ?? {},
        );
      } catch (error) {
        return makeFrame('init_failure', { error: String((error as Error).message ?? error) });
      }
      return makeFrame('ready', { tables: runtime.tables, thresholds: runtime.thresholds });
    }
    case 'exec': {
      try {
        const outcome = runtime.exec(frame.code as string);
        return makeFrame('exec_result', { ...outcome });
      } catch (error) {
        return makeFrame('init_failure', { error: String((error as Error).message ?? error) });
      }
    }
    case 'shutdown':
      return null;
    default:
      return makeFrame('init_failure', { error: `worker cannot handle ${frame.kind} frames` });
  }
}

export function main(): void {
  const runtime = new WorkerRuntime();
  const reader = new FrameReader();
  process.stdin.on('data', (chunk: Buffer) => {
    for (const frame of reader.feed(chunk)) {
      const reply = handleFrame(runtime, frame);
      if (reply === null) {
        process.exit(0);
      }
      send(reply);
    }
  });
  process.stdin.on('end', () => process.exit(0));
}

if (require.main === module) {
  main();
}
