"""Report emission: funnel bar charts and binned-confusion heatmaps as
deterministic hand-written SVG, plus small markdown tables."""

from __future__ import annotations

from pathlib import Path

from .errors import EmptyInput
from .metrics import BIN_LABELS, BinnedReport

_SVG_HEADER = '<?xml version="1.0" encoding="UTF-8"?>\n'


def funnel_svg(funnel_stages: list[dict], width: int = 640, height: int = 360) -> str:
    """One labeled bar per stage, scaled to the largest 'after' count."""
    if len(funnel_stages) < 2:
        raise EmptyInput("funnel needs at least two stages")
    peak = max(max(s["after"], s["before"]) for s in funnel_stages) or 1
    margin = 40
    plot_h = height - 2 * margin
    bar_gap = (width - 2 * margin) / len(funnel_stages)
    bar_w = bar_gap * 0.6

    parts = [
        _SVG_HEADER,
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for i, stage in enumerate(funnel_stages):
        count = stage["after"]
        bar_h = plot_h * count / peak
        x = margin + i * bar_gap + (bar_gap - bar_w) / 2
        y = margin + plot_h - bar_h
        parts.append(
            f'<rect class="funnel-bar" x="{x:.1f}" y="{y:.1f}" '
            f'width="{bar_w:.1f}" height="{bar_h:.1f}" fill="#2d7dd2"/>'
        )
        parts.append(
            f'<text class="funnel-count" x="{x + bar_w / 2:.1f}" y="{y - 6:.1f}" '
            f'text-anchor="middle" font-size="13">{count}</text>'
        )
        parts.append(
            f'<text class="funnel-label" x="{x + bar_w / 2:.1f}" '
            f'y="{margin + plot_h + 16:.1f}" text-anchor="middle" font-size="12">'
            f'{stage["name"]}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_funnel(funnel_stages: list[dict], svg_path, table_path=None) -> None:
    Path(svg_path).write_text(funnel_svg(funnel_stages), encoding="utf-8")
    if table_path is not None:
        lines = ["| Stage | Before | After | Dropped |", "| --- | --- | --- | --- |"]
        for s in funnel_stages:
            lines.append(f"| {s['name']} | {s['before']} | {s['after']} | {s['dropped']} |")
        Path(table_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def confusion_svg(report: BinnedReport, title: str = "", cell: int = 80) -> str:
    """3x3 heatmap with Low/Medium/High axes; cell text carries the count."""
    margin = 70
    size = margin + 3 * cell + 20
    counts = report.confusion
    peak = int(counts.max()) or 1
    parts = [
        _SVG_HEADER,
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<text x="{size / 2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for row in range(3):
        for col in range(3):
            value = int(counts[row, col])
            # light-to-dark blue ramp by count
            shade = 255 - int(175 * value / peak)
            x = margin + col * cell
            y = margin + row * cell
            parts.append(
                f'<rect class="cell" data-row="{row}" data-col="{col}" x="{x}" y="{y}" '
                f'width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" '
                f'stroke="#444"/>'
            )
            parts.append(
                f'<text class="count" data-row="{row}" data-col="{col}" '
                f'x="{x + cell / 2:.0f}" y="{y + cell / 2 + 5:.0f}" '
                f'text-anchor="middle" font-size="16">{value}</text>'
            )
    for i, label in enumerate(BIN_LABELS):
        parts.append(
            f'<text x="{margin + i * cell + cell / 2:.0f}" y="{margin - 10}" '
            f'text-anchor="middle" font-size="12">{label}</text>'
        )
        parts.append(
            f'<text x="{margin - 10}" y="{margin + i * cell + cell / 2 + 4:.0f}" '
            f'text-anchor="end" font-size="12">{label}</text>'
        )
    parts.append(
        f'<text x="{margin + 1.5 * cell:.0f}" y="{margin - 30}" text-anchor="middle" '
        f'font-size="12">predicted</text>'
    )
    parts.append(f'<text x="14" y="{margin - 30}" font-size="12">actual</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_confusions(reports: list[BinnedReport], out_dir, prefix: str = "confusion") -> list[Path]:
    """One heatmap file per report; returns the written paths."""
    if not reports:
        raise EmptyInput("no binned reports to draw")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, report in enumerate(reports):
        tag = report.parameter.parameter.value if report.parameter else report.model_tag or str(i)
        path = out / f"{prefix}_{tag}.svg"
        path.write_text(confusion_svg(report, title=tag), encoding="utf-8")
        paths.append(path)
    return paths
