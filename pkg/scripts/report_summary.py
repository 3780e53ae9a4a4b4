#!/usr/bin/env python3
"""Render correlation_report.json and stability.json as a markdown summary."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.reports import read_report_json  # noqa: E402


def format_r(entry: dict) -> str:
    if entry.get("r") is None:
        return "n/a"
    return f"{entry['r']:.4f}"


def format_t(entry: dict) -> str:
    if entry.get("r") is None:
        return "n/a"
    t = "inf" if entry.get("t") is None else f"{entry['t']:.3f}"
    marker = "*" if entry.get("passed") else ""
    return f"{t}{marker} ({entry['t_crit']:.3f})"


def correlation_table(report: dict) -> list[str]:
    md = [
        "| Period | Range | n | Corr 1 | t (crit) | Corr 2 | t (crit) | Differences | Corr 3 | t (crit) |",
        "|--------|-------|---|--------|----------|--------|----------|-------------|--------|----------|",
    ]
    for p in report.get("periods", []):
        first, last = p.get("index_range") or (None, None)
        diff = "n/a" if p.get("difference") is None else f"{p['difference']:.4f}"
        md.append(
            f"| {p['label']} | {first or '-'} .. {last or '-'} | {p['n']} "
            f"| {format_r(p['corr1'])} | {format_t(p['corr1'])} "
            f"| {format_r(p['corr2'])} | {format_t(p['corr2'])} "
            f"| {diff} "
            f"| {format_r(p['corr3'])} | {format_t(p['corr3'])} |"
        )
    return md


def get_report_summary(out_dir: str) -> str:
    report = read_report_json(str(Path(out_dir) / "correlation_report.json"))
    stability = read_report_json(str(Path(out_dir) / "stability.json"))

    md = ["# Conditioning Intensity Report", ""]
    md.append(f"Significance level {report.get('alpha')}, {report.get('returns', 'simple')} returns.")
    md.append("")
    md.append("## Correlation and Significance Test")
    md.append("")
    if report.get("periods"):
        md += correlation_table(report)
        md.append("")
        md.append("Corr 1: mean return vs trading intensity change; Corr 2: mean return vs amount change; "
                  "Corr 3: intensity change vs amount change. * marks significance.")
    else:
        md.append("*No period had enough rate points*")
    md.append("")

    md.append("## Fit Cascade")
    md.append("")
    md.append("| Stage | Days |")
    md.append("|-------|------|")
    for key, label in (
        ("first_pass", "Bessel0, first pass"),
        ("refined", "Bessel0, half-cent retry"),
        ("two_peak", "Two-peak Bessel0"),
        ("kummer", "Kummer1"),
        ("unfit", "Unfit"),
        ("degenerate", "Degenerate"),
    ):
        md.append(f"| {label} | {stability.get(key, 0)} |")
    md.append("")
    md.append(f"- **Total days:** {stability['total_days']}")
    md.append(f"- **Single-Bessel pass rate:** {stability['pass_rate'] * 100:.2f}%")
    md.append(f"- **Stability index:** {stability['stability_index'] * 100:.2f}%")
    md.append(f"- **Abnormal before the half-cent retry:** {stability['pre_refinement_abnormal'] * 100:.2f}%")
    return "\n".join(md)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", nargs="?", default="out", help="Directory written by `main.py analyze`")
    args = parser.parse_args()
    print(get_report_summary(args.out_dir))
