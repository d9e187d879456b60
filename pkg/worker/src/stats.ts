/**
 * Statistics used by the analysis prelude: rank-sum via the normal
 * approximation with tie correction, Benjamini-Hochberg FDR, correlation and
 * percentile helpers. Everything is pure and deterministic.
 */

export function mean(values: number[]): number {
  return values.reduce((a, b) => a + b, 0) / values.length;
}

export function std(values: number[]): number {
  const m = mean(values);
  return Math.sqrt(values.reduce((acc, v) => acc + (v - m) ** 2, 0) / values.length);
}

/** Average ranks (1-based), ties share the mean rank. */
export function ranks(values: number[]): number[] {
  const order = values.map((v, i) => ({ v, i })).sort((a, b) => a.v - b.v);
  const out = new Array<number>(values.length);
  let index = 0;
  while (index < order.length) {
    let j = index;
    while (j + 1 < order.length && order[j + 1].v === order[index].v) j++;
    const shared = (index + j + 2) / 2; // mean of 1-based ranks index+1 .. j+1
    for (let k = index; k <= j; k++) out[order[k].i] = shared;
    index = j + 1;
  }
  return out;
}

/** Abramowitz-Stegun 7.1.26 erf approximation (|error| < 1.5e-7). */
function erf(x: number): number {
  const sign = x < 0 ? -1 : 1;
  const ax = Math.abs(x);
  const t = 1 / (1 + 0.3275911 * ax);
  const y =
    1 -
    (((((1.061405429 * t - 1.453152027) * t + 1.421413741) * t - 0.284496736) * t + 0.254829592) *
      t) *
      Math.exp(-ax * ax);
  return sign * y;
}

export function normalCdf(z: number): number {
  return 0.5 * (1 + erf(z / Math.SQRT2));
}

export interface RankSumResult {
  u1: number;
  u2: number;
  z: number;
  p: number; // two-sided, normal approximation with tie correction
}

export function rankSumTest(a: number[], b: number[]): RankSumResult {
  const n1 = a.length;
  const n2 = b.length;
  if (n1 === 0 || n2 === 0) {
    return { u1: 0, u2: 0, z: 0, p: 1 };
  }
  const combined = [...a, ...b];
  const allRanks = ranks(combined);
  const r1 = allRanks.slice(0, n1).reduce((x, y) => x + y, 0);
  const u1 = r1 - (n1 * (n1 + 1)) / 2;
  const u2 = n1 * n2 - u1;
  const n = n1 + n2;

  // tie correction over the grouped values
  const counts = new Map<number, number>();
  for (const v of combined) counts.set(v, (counts.get(v) ?? 0) + 1);
  let tieTerm = 0;
  for (const t of counts.values()) tieTerm += t ** 3 - t;
  const variance = ((n1 * n2) / 12) * (n + 1 - tieTerm / (n * (n - 1)));
  if (variance <= 0) {
    return { u1, u2, z: 0, p: 1 };
  }
  const z = (u1 - (n1 * n2) / 2) / Math.sqrt(variance);
  const p = 2 * (1 - normalCdf(Math.abs(z)));
  return { u1, u2, z, p: Math.min(1, p) };
}

/** q-values: q_(i) = min_{j >= i} p_(j) * n / j, mapped back to input order. */
export function benjaminiHochberg(pvals: number[]): number[] {
  const n = pvals.length;
  const order = pvals.map((p, i) => ({ p, i })).sort((a, b) => a.p - b.p);
  const q = new Array<number>(n);
  let running = 1;
  for (let rank = n; rank >= 1; rank--) {
    const { p, i } = order[rank - 1];
    running = Math.min(running, (p * n) / rank);
    q[i] = running;
  }
  return q;
}

export function pearson(xs: number[], ys: number[]): number {
  const mx = mean(xs);
  const my = mean(ys);
  let num = 0;
  let dx = 0;
  let dy = 0;
  for (let i = 0; i < xs.length; i++) {
    num += (xs[i] - mx) * (ys[i] - my);
    dx += (xs[i] - mx) ** 2;
    dy += (ys[i] - my) ** 2;
  }
  const denom = Math.sqrt(dx * dy);
  return denom === 0 ? 0 : num / denom;
}

export function spearman(xs: number[], ys: number[]): number {
  return pearson(ranks(xs), ranks(ys));
}

/** Fraction of values at or below x, counting ties as half. */
export function percentileRank(values: number[], x: number): number {
  let less = 0;
  let equal = 0;
  for (const v of values) {
    if (v < x) less++;
    else if (v === x) equal++;
  }
  return (less + 0.5 * equal) / values.length;
}
