"""Benchmark report rendering: delimiter-separated tables plus matplotlib figures.

Every bench subcommand writes its TSV tables with fixed headers and a PNG
chart next to them, all under the configured output directory.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evalharness import LAYERS, CaseResult, PsrNsrResult, SingleStepAggregate


def write_tsv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    lines = ["\t".join(header)]
    lines.extend("\t".join(row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_single_step_report(
    outdir: Path,
    aggregate: SingleStepAggregate,
    per_case: list[list[CaseResult]],
) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for result in per_case[0]:
        scores = [run[result.case_index].score for run in per_case]
        passes = [run[result.case_index].passed for run in per_case]
        rows.append(
            [
                str(result.case_index + 1),
                result.layer,
                f"{sum(scores) / len(scores):.3f}",
                f"{100.0 * sum(passes) / len(passes):.2f}",
            ]
        )
    results_path = outdir / "single_step_results.tsv"
    write_tsv(results_path, ["case", "layer", "mean_score", "pass_rate_pct"], rows)

    summary_rows = []
    for layer in LAYERS:
        if layer in aggregate.layer_pass_rate:
            mean, std = aggregate.layer_pass_rate[layer]
            summary_rows.append([layer, f"{mean:.2f}", f"{std:.2f}"])
    total_mean, total_std = aggregate.total_pass_rate
    score_mean, score_std = aggregate.average_score
    summary_rows.append(["Total", f"{total_mean:.2f}", f"{total_std:.2f}"])
    summary_rows.append(["AvgScore", f"{score_mean:.3f}", f"{score_std:.3f}"])
    summary_path = outdir / "single_step_summary.tsv"
    write_tsv(summary_path, ["subset", "mean", "std"], summary_rows)

    figure_path = outdir / "single_step_pass_rates.png"
    labels = [layer for layer in LAYERS if layer in aggregate.layer_pass_rate] + ["Total"]
    values = [aggregate.layer_pass_rate[layer][0] for layer in LAYERS if layer in aggregate.layer_pass_rate]
    values.append(total_mean)
    errors = [aggregate.layer_pass_rate[layer][1] for layer in LAYERS if layer in aggregate.layer_pass_rate]
    errors.append(total_std)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(labels, values, yerr=errors, color="#4878a8", capsize=4)
    ax.set_ylabel("Pass rate (%)")
    ax.set_ylim(0, 100)
    ax.set_title(f"Single-step pass rates (mean over {aggregate.runs} runs)")
    fig.tight_layout()
    fig.savefig(figure_path)
    plt.close(fig)
    return [results_path, summary_path, figure_path]


def write_e2e_report(outdir: Path, result: PsrNsrResult, tier_sizes: dict[int, int]) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for tier in sorted(result.tier_psr):
        rows.append(
            [
                f"T{tier}",
                str(tier_sizes[tier]),
                f"{float(result.tier_psr[tier] * 100):.2f}",
                f"{float(result.tier_nsr[tier] * 100):.2f}",
            ]
        )
    rows.append(["Overall", str(sum(tier_sizes.values())), f"{result.psr_percent():.2f}", f"{result.nsr_percent():.2f}"])
    table_path = outdir / "e2e_tiers.tsv"
    write_tsv(table_path, ["tier", "n", "psr_pct", "nsr_pct"], rows)

    figure_path = outdir / "e2e_psr_nsr.png"
    tiers = sorted(result.tier_psr)
    x = range(len(tiers))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([i - width / 2 for i in x], [float(result.tier_psr[t] * 100) for t in tiers], width, label="PSR", color="#4878a8")
    ax.bar([i + width / 2 for i in x], [float(result.tier_nsr[t] * 100) for t in tiers], width, label="NSR", color="#a85448")
    ax.set_xticks(list(x), [f"T{t}" for t in tiers])
    ax.set_ylabel("%")
    ax.set_ylim(0, 105)
    ax.legend()
    ax.set_title(f"Positive hit / negative clear rates (mean over {result.runs} runs)")
    fig.tight_layout()
    fig.savefig(figure_path)
    plt.close(fig)
    return [table_path, figure_path]


def write_discovery_report(outdir: Path, scores: list[tuple[str, float]]) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    rows = [[item_id, f"{score:.1f}"] for item_id, score in scores]
    mean = sum(score for _, score in scores) / len(scores) if scores else 0.0
    rows.append(["mean", f"{mean:.4f}"])
    table_path = outdir / "discovery_scores.tsv"
    write_tsv(table_path, ["item", "score"], rows)

    figure_path = outdir / "discovery_scores.png"
    buckets = {0.0: 0, 0.5: 0, 1.0: 0}
    for _, score in scores:
        buckets[score] += 1
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(["0", "0.5", "1"], [buckets[0.0], buckets[0.5], buckets[1.0]], color="#548848")
    ax.set_ylabel("items")
    ax.set_title("Trichotomous score distribution")
    fig.tight_layout()
    fig.savefig(figure_path)
    plt.close(fig)
    return [table_path, figure_path]
