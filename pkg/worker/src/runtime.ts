/**
 * Restricted execution runtime: a fresh vm context per session with the
 * blocked names absent, the THRESHOLDS map and loaded tables installed, the
 * analysis prelude bound, and primitive-only variable persistence between
 * blocks. Calling any blocked name raises a ReferenceError (the JS
 * name-resolution failure), which the supervisor relays as an observable
 * error rather than a crash.
 */

import * as vm from 'node:vm';

import * as prelude from './prelude';
import { filterPrimitives } from './protocol';
import { loadTable, Table } from './tables';

export const BLOCKED_NAMES = ['exec', 'eval', 'compile', '__import__', 'open', 'input', 'breakpoint'] as const;

export interface ManifestEntry {
  name: string;
  path: string;
}

export interface ExecOutcome {
  status: 'ok' | 'error';
  stdout: string;
  stderr: string;
  vars: Record<string, unknown>;
  duration: number;
}

function busySleep(seconds: number): void {
  const end = Date.now() + seconds * 1000;
  while (Date.now() < end) {
    /* runaway blocks are killed by the supervisor's timeout */
  }
}

export class WorkerRuntime {
  private context: vm.Context | null = null;
  private baseline: Set<string> = new Set();
  private stdoutParts: string[] = [];
  private stderrParts: string[] = [];
  readonly tables: string[] = [];
  thresholds: Record<string, number> = {};

  init(manifest: ManifestEntry[], thresholds: Record<string, number>, vars: Record<string, unknown>): void {
    const sandbox: Record<string, unknown> = {
      THRESHOLDS: thresholds,
      print: (...args: unknown[]) => {
        this.stdoutParts.push(args.map((a) => this.format(a)).join(' ') + '\n');
      },
      printerr: (text: unknown) => {
        this.stderrParts.push(this.format(text));
      },
      sleep: busySleep,
      Math,
      JSON,
    };
    for (const [name, fn] of Object.entries(prelude)) {
      if (typeof fn === 'function') sandbox[name] = fn;
    }
    for (const entry of manifest) {
      const table: Table = loadTable(entry.path); // throws on a missing path
      sandbox[entry.name] = table;
      this.tables.push(entry.name);
    }
    const context = vm.createContext(sandbox);
    // eval is the one blocked name every fresh JS realm still defines
    vm.runInContext('delete globalThis.eval;', context);
    this.context = context;
    this.baseline = new Set(Object.keys(context));
    for (const [name, value] of Object.entries(vars)) {
      (context as Record<string, unknown>)[name] = value;
    }
    this.thresholds = thresholds;
  }

  private format(value: unknown): string {
    if (typeof value === 'string') return value;
    if (typeof value === 'object' && value !== null) return JSON.stringify(value);
    return String(value);
  }

  exec(code: string): ExecOutcome {
    if (this.context === null) throw new Error('exec before init');
    this.stdoutParts = [];
    this.stderrParts = [];
    let status: 'ok' | 'error' = 'ok';
    const started = process.hrtime.bigint();
    try {
      vm.runInContext(code, this.context, { filename: '<block>' });
    } catch (error) {
      status = 'error';
      const err = error as Error;
      this.stderrParts.push(`${err.name}: ${err.message}\n`);
    }
    const duration = Number(process.hrtime.bigint() - started) / 1e9;
    const user: Record<string, unknown> = {};
    for (const name of Object.keys(this.context)) {
      if (!this.baseline.has(name)) user[name] = (this.context as Record<string, unknown>)[name];
    }
    // JSON round-trip detaches kept values from the vm realm
    const vars = JSON.parse(JSON.stringify(filterPrimitives(user))) as Record<string, unknown>;
    return {
      status,
      stdout: this.stdoutParts.join(''),
      stderr: this.stderrParts.join(''),
      vars,
      duration,
    };
  }
}
