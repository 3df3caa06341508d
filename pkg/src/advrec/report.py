"""Consolidated run report and dependency-free SVG line charts."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")

_num = {"type": "number"}
_nullable_num = {"type": ["number", "null"]}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "advrec run report",
    "type": "object",
    "required": ["tool", "version", "config_hash", "stages", "warnings", "charts"],
    "additionalProperties": False,
    "properties": {
        "tool": {"const": "advrec"},
        "version": {"type": "string"},
        "config_hash": {"type": ["string", "null"]},
        "stages": {"type": "array", "items": {"enum": ["train-agent", "attack", "detect"]}},
        "warnings": {"type": "array", "items": {"type": "string"}},
        "charts": {"type": "array", "items": {"type": "string"}},
        "agent": {
            "type": "object",
            "required": ["episodes", "epochs", "final_ndcg10", "first_mean_reward", "last_mean_reward"],
            "properties": {
                "episodes": {"type": "integer"},
                "epochs": {"type": "integer"},
                "final_ndcg10": _num,
                "first_mean_reward": _nullable_num,
                "last_mean_reward": _nullable_num,
            },
        },
        "attack": {
            "type": "object",
            "required": ["comparison"],
            "properties": {
                "comparison": {"type": "array", "items": {"type": "object"}},
                "reports": {"type": "array", "items": {"type": "object"}},
                "sweeps": {"type": "object", "additionalProperties": {"type": "array"}},
            },
        },
        "detect": {
            "type": "object",
            "required": ["validation", "rows"],
            "properties": {
                "validation": {"type": "object"},
                "rows": {"type": "array", "items": {"type": "object"}},
            },
        },
    },
}


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {}
        for key, value in row.items():
            try:
                parsed[key] = float(value)
            except ValueError:
                parsed[key] = value
        out.append(parsed)
    return out


def write_csv(path, columns, rows) -> None:
    """Comma separated with a header; floats at 6 decimals; LF endings."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def _cell(value):
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return f"{value:.6f}"
    return value


def line_chart(series: dict[str, tuple[list[float], list[float]]], title: str, xlabel: str, ylabel: str,
               width: int = 480, height: int = 320) -> str:
    """Render named (xs, ys) polylines on shared linear axes."""
    pad_l, pad_r, pad_t, pad_b = 56, 120, 32, 44
    xs = [x for s in series.values() for x in s[0]]
    ys = [y for s in series.values() for y in s[1]]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def py(y):
        return pad_t + (1.0 - (y - y0) / (y1 - y0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{pad_l}" y1="{pad_t + ph}" x2="{pad_l + pw}" y2="{pad_t + ph}" stroke="black"/>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + ph}" stroke="black"/>',
        f'<text x="{pad_l + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{pad_t + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {pad_t + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        parts.append(f'<text x="{px(fx):.1f}" y="{pad_t + ph + 16}" text-anchor="middle">{fx:.3g}</text>')
        parts.append(f'<text x="{pad_l - 6}" y="{py(fy) + 4:.1f}" text-anchor="end">{fy:.3g}</text>')
    for i, (name, (sx, sy)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(sx, sy))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = pad_t + 14 * i + 6
        parts.append(f'<line x1="{pad_l + pw + 10}" y1="{ly}" x2="{pad_l + pw + 28}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{pad_l + pw + 32}" y="{ly + 4}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _load_json(path: Path):
    return json.loads(path.read_text())


def build_report(out: Path, manifest: dict | None) -> tuple[dict, dict[str, str]]:
    """Gather whatever stages exist under ``out``.

    Returns the report document and a mapping of chart file name to SVG text.
    Missing artifacts become warnings rather than errors.
    """
    from . import __version__

    warnings: list[str] = []
    charts: dict[str, str] = {}
    stages = manifest.get("stages", {}) if manifest else {}
    if manifest is None:
        warnings.append("manifest.json missing; report built from files present")
    doc: dict = {"tool": "advrec", "version": __version__,
                 "config_hash": manifest.get("config_hash") if manifest else None,
                 "stages": [], "warnings": warnings, "charts": []}

    train = out / "agent" / "train_report.json"
    if train.exists():
        rep = _load_json(train)
        curve = rep["mean_reward_curve"]
        doc["agent"] = {"episodes": rep["episodes"], "epochs": len(curve),
                        "final_ndcg10": rep["final_ndcg10"],
                        "first_mean_reward": curve[0] if curve else None,
                        "last_mean_reward": curve[-1] if curve else None}
        doc["stages"].append("train-agent")
        if curve:
            epochs = list(range(1, len(curve) + 1))
            charts["training_curve.svg"] = line_chart(
                {"mean reward": (epochs, curve)}, "Agent training", "epoch", "mean shaped reward")
    elif "train-agent" in stages:
        warnings.append(f"missing {train}")

    comparison = out / "attack" / "comparison.csv"
    if comparison.exists():
        section = {"comparison": read_csv(comparison), "reports": []}
        for path in sorted((out / "attack").glob("*.report.json")):
            section["reports"].append(_load_json(path))
        sweeps = {}
        for path in sorted((out / "attack").glob("sweep_*.csv")):
            kind = path.stem.removeprefix("sweep_")
            rows = read_csv(path)
            sweeps[kind] = rows
            series: dict[str, tuple[list, list]] = {}
            for row in rows:
                xs, ys = series.setdefault(str(row["attack"]), ([], []))
                xs.append(row["achieved_frequency"])
                ys.append(row["ndcg"])
            charts[f"sweep_{kind}.svg"] = line_chart(
                series, f"NDCG@10 vs attack frequency ({kind})", "achieved attack frequency", "NDCG@10")
        if sweeps:
            section["sweeps"] = sweeps
        doc["attack"] = section
        doc["stages"].append("attack")
    elif "attack" in stages:
        warnings.append(f"missing {comparison}")

    detect = out / "detect" / "detect_report.json"
    if detect.exists():
        rep = _load_json(detect)
        doc["detect"] = {"validation": rep["validation"], "rows": rep["rows"]}
        doc["stages"].append("detect")
    elif "detect" in stages:
        warnings.append(f"missing {detect}")

    for stage, entry in sorted(stages.items()):
        for artifact in entry.get("artifacts", []):
            if not (out / artifact).exists():
                warnings.append(f"{stage}: listed artifact {artifact} is missing")
    if not doc["stages"]:
        warnings.append("no stage outputs found")
    doc["charts"] = sorted(charts)
    return doc, charts
