/**
 * Analysis prelude exposed inside the execution namespace: 18 pure functions
 * over the loaded tables, spanning dependency correlation, expression and
 * mutation association, threshold calls, synthetic-lethality screening,
 * interaction lookup, outlier detection and a synergy stub.
 */

import { createHash } from 'node:crypto';

import {
  benjaminiHochberg,
  mean,
  pearson,
  percentileRank,
  rankSumTest,
  spearman,
  std,
  RankSumResult,
} from './stats';
import { Table } from './tables';

export type Thresholds = Record<string, number>;

export interface GeneScore {
  gene: string;
  r: number;
}

export interface StratificationRow {
  gene: string;
  nMut: number;
  nWt: number;
  meanMut: number;
  meanWt: number;
  u1: number;
  z: number;
  p: number;
  q?: number;
}

// A small static interaction neighborhood / pathway map; enough for lookups
// without shipping a real network.
const NEIGHBORS: Record<string, string[]> = {
  ATR: ['ATM', 'CHEK1', 'TOPBP1', 'RPA1'],
  ATM: ['ATR', 'CHEK2', 'TP53', 'MRE11'],
  TP53: ['ATM', 'MDM2', 'CDKN1A'],
  TOP1: ['TDP1', 'PARP1', 'XRCC1'],
  PARP1: ['TOP1', 'XRCC1', 'BRCA1', 'BRCA2'],
  BRCA1: ['BRCA2', 'PARP1', 'PALB2'],
  BRCA2: ['BRCA1', 'PALB2', 'RAD51'],
  EGFR: ['ERBB2', 'KRAS', 'GRB2'],
  KRAS: ['BRAF', 'EGFR', 'NRAS'],
};

const PATHWAYS: Record<string, string[]> = {
  ATR: ['DNA damage response', 'replication stress'],
  ATM: ['DNA damage response', 'double-strand break repair'],
  TP53: ['cell cycle checkpoint', 'apoptosis'],
  TOP1: ['DNA topology', 'replication'],
  PARP1: ['base excision repair'],
  BRCA1: ['homologous recombination'],
  BRCA2: ['homologous recombination'],
  EGFR: ['RTK signaling'],
  KRAS: ['MAPK signaling'],
};

function column(table: Table, gene: string): number[] {
  const values = table.columns[gene];
  if (!values) throw new Error(`gene ${gene} not in table`);
  return values;
}

// 1-5: generic statistics re-exported into the namespace
export { pearson as pearsonCorrelation, spearman as spearmanCorrelation, rankSumTest, benjaminiHochberg, percentileRank };

/** 6. Genome-wide co-dependency of one gene against every other column. */
export function dependencyCorrelation(dep: Table, gene: string): GeneScore[] {
  const anchor = column(dep, gene);
  const out: GeneScore[] = [];
  for (const other of Object.keys(dep.columns).sort()) {
    if (other === gene) continue;
    out.push({ gene: other, r: pearson(anchor, dep.columns[other]) });
  }
  out.sort((a, b) => b.r - a.r || (a.gene < b.gene ? -1 : 1));
  return out;
}

/** 7. Correlate a target's dependency profile with every gene's expression. */
export function expressionDependencyAssociation(expr: Table, dep: Table, targetGene: string): GeneScore[] {
  const anchor = column(dep, targetGene);
  const out: GeneScore[] = [];
  for (const gene of Object.keys(expr.columns).sort()) {
    out.push({ gene, r: pearson(expr.columns[gene], anchor) });
  }
  out.sort((a, b) => a.r - b.r || (a.gene < b.gene ? -1 : 1));
  return out;
}

/** 8. Rank-sum stratification of a target's dependency by a marker's mutation status. */
export function mutationStratification(
  dep: Table,
  mut: Table,
  markerGene: string,
  targetGene: string,
): StratificationRow {
  const flags = column(mut, markerGene);
  const scores = column(dep, targetGene);
  const mutant: number[] = [];
  const wildType: number[] = [];
  flags.forEach((flag, i) => (flag > 0 ? mutant : wildType).push(scores[i]));
  const test: RankSumResult = rankSumTest(mutant, wildType);
  return {
    gene: markerGene,
    nMut: mutant.length,
    nWt: wildType.length,
    meanMut: mutant.length ? mean(mutant) : NaN,
    meanWt: wildType.length ? mean(wildType) : NaN,
    u1: test.u1,
    z: test.z,
    p: test.p,
  };
}

/** 9. Stratify across all markers with enough carriers, BH-corrected. */
export function genomeWideMutationScreen(
  dep: Table,
  mut: Table,
  targetGene: string,
  thresholds: Thresholds,
): StratificationRow[] {
  const minSamples = thresholds.min_samples ?? 3;
  const rows: StratificationRow[] = [];
  for (const marker of Object.keys(mut.columns).sort()) {
    const row = mutationStratification(dep, mut, marker, targetGene);
    if (row.nMut >= minSamples && row.nWt >= minSamples) rows.push(row);
  }
  const qvals = benjaminiHochberg(rows.map((r) => r.p));
  rows.forEach((row, i) => (row.q = qvals[i]));
  rows.sort((a, b) => a.p - b.p || (a.gene < b.gene ? -1 : 1));
  return rows;
}

/** 10. Lines whose dependency score crosses the likely-dependent cutoff. */
export function likelyDependentLines(dep: Table, gene: string, thresholds: Thresholds): string[] {
  const cutoff = thresholds.crispr_likely_dependent;
  return dep.labels.filter((_, i) => column(dep, gene)[i] < cutoff);
}

/** 11. Lines past the strongly-dependent cutoff. */
export function stronglyDependentLines(dep: Table, gene: string, thresholds: Thresholds): string[] {
  const cutoff = thresholds.crispr_strongly_dependent;
  return dep.labels.filter((_, i) => column(dep, gene)[i] < cutoff);
}

/** 12. Dependency-probability calls: dependent vs resistant lines. */
export function dependencyProbabilityCalls(
  prob: Table,
  gene: string,
  thresholds: Thresholds,
): { dependent: string[]; resistant: string[] } {
  const values = column(prob, gene);
  return {
    dependent: prob.labels.filter((_, i) => values[i] > thresholds.dep_prob_dependent),
    resistant: prob.labels.filter((_, i) => values[i] < thresholds.dep_prob_resistant),
  };
}

/** 13. Copy-number calls at the gain/amplification/loss cutoffs. */
export function copyNumberCalls(
  cn: Table,
  gene: string,
  thresholds: Thresholds,
): { gain: string[]; amplification: string[]; loss: string[] } {
  const values = column(cn, gene);
  return {
    gain: cn.labels.filter((_, i) => values[i] > thresholds.cn_gain),
    amplification: cn.labels.filter((_, i) => values[i] > thresholds.cn_amplification),
    loss: cn.labels.filter((_, i) => values[i] < thresholds.cn_loss),
  };
}

export interface LethalityCandidate {
  marker: string;
  target: string;
  deltaMean: number;
  percentile: number;
  p: number;
}

/** 14. Synthetic-lethality screen: absolute thresholds plus percentile ranking. */
export function syntheticLethalityScreen(
  dep: Table,
  mut: Table,
  targetGene: string,
  thresholds: Thresholds,
): LethalityCandidate[] {
  const minSamples = thresholds.min_samples ?? 3;
  const scores = column(dep, targetGene);
  const candidates: LethalityCandidate[] = [];
  const deltas: { marker: string; delta: number; meanMut: number; p: number }[] = [];
  for (const marker of Object.keys(mut.columns).sort()) {
    if (marker === targetGene) continue;
    const flags = column(mut, marker);
    const mutant: number[] = [];
    const wildType: number[] = [];
    flags.forEach((flag, i) => (flag > 0 ? mutant : wildType).push(scores[i]));
    if (mutant.length < minSamples || wildType.length < minSamples) continue;
    const test = rankSumTest(mutant, wildType);
    deltas.push({ marker, delta: mean(mutant) - mean(wildType), meanMut: mean(mutant), p: test.p });
  }
  const allDeltas = deltas.map((d) => d.delta);
  for (const { marker, delta, meanMut, p } of deltas) {
    // absolute cutoff: mutant lines must actually be dependent; direction:
    // mutants more dependent than wild type
    if (delta >= 0 || meanMut >= thresholds.crispr_likely_dependent) continue;
    candidates.push({
      marker,
      target: targetGene,
      deltaMean: delta,
      percentile: percentileRank(allDeltas, delta),
      p,
    });
  }
  candidates.sort((a, b) => a.deltaMean - b.deltaMean || (a.marker < b.marker ? -1 : 1));
  return candidates;
}

/** 15. Expression outliers by z-score. */
export function expressionOutliers(expr: Table, gene: string, zCutoff = 2): { line: string; z: number }[] {
  const values = column(expr, gene);
  const m = mean(values);
  const s = std(values);
  if (s === 0) return [];
  const out: { line: string; z: number }[] = [];
  values.forEach((v, i) => {
    const z = (v - m) / s;
    if (Math.abs(z) > zCutoff) out.push({ line: expr.labels[i], z });
  });
  return out;
}

/** 16. Static interaction neighborhood lookup. */
export function interactionNeighbors(gene: string): string[] {
  return NEIGHBORS[gene] ?? [];
}

/** 17. Static pathway annotation lookup. */
export function pathwayAnnotations(gene: string): string[] {
  return PATHWAYS[gene] ?? [];
}

/** 18. Synergy-prediction stub: deterministic hash of the (unordered) pair. */
export function predictSynergy(drugA: string, drugB: string): { pair: string[]; score: number } {
  const pair = [drugA, drugB].sort();
  const digest = createHash('sha256').update(pair.join('|')).digest();
  const score = digest.readUInt16BE(0) / 0xffff;
  return { pair, score: Math.round(score * 1000) / 1000 };
}
