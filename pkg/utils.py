import json
import math
import os
import shutil
import tempfile
from pathlib import Path
from typing import Dict, List

import numpy as np


def format_number(value: float) -> str:
    """JSON number with 17 significant digits; non-finite values become null."""
    value = float(value)
    if not math.isfinite(value):
        return "null"
    return format(value, ".17g")


def _emit(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    close = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_number(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(key), ensure_ascii=False)}: {_emit(value, indent, level + 1)}" for key, value in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [_emit(value, indent, level + 1) for value in obj]
        if all(not isinstance(value, (dict, list, tuple, np.ndarray)) for value in obj):
            return "[" + ", ".join(items) + "]"
        return "[\n" + ",\n".join(pad + item for item in items) + "\n" + close + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__} to JSON")


def dump_json(obj, indent: int = 2) -> str:
    """
    Serializes a report to JSON text, printing every float with 17
    significant digits so values round-trip exactly.
    """
    return _emit(obj, indent, 0) + "\n"


def _fmt(value) -> str:
    if value is None:
        return "-"
    return f"{float(value):.4g}"


def _interval(pair) -> str:
    return f"[{_fmt(pair[0])}, {_fmt(pair[1])}]"


def _summary_lines(title: str, rows: List[dict]) -> List[str]:
    if not rows:
        return []
    width = max(len("target"), max(len(str(r["target"])) for r in rows))
    lines = ["", title, f"  {'target':<{width}}  {'mean':>10}  {'sd':>10}  {'median':>10}  95% interval"]
    for r in rows:
        lines.append(
            f"  {r['target']:<{width}}  {_fmt(r['mean']):>10}  {_fmt(r['sd']):>10}  {_fmt(r['median']):>10}  {_interval(r['ci95'])}"
        )
    return lines


def format_report(report: dict) -> str:
    """Human-readable rendering of the JSON report."""
    dataset, model, tau = report["dataset"], report["model"], report["tau"]
    lines = [f"dataset: {dataset['name'] or '-'} (k = {dataset['k']})"]
    if dataset.get("excluded"):
        lines.append(f"excluded study: {dataset['excluded']}")
    regression = ", ".join(model["regression"]) if model["regression"] else "intercept only"
    lines.append(f"model: {regression}; columns: {', '.join(model['columns'])}")

    if model["mode"] == "bayes":
        lines.append(f"heterogeneity prior: {tau['prior']}")
        if "prior_median" in tau:
            lines.append(f"  prior median {_fmt(tau['prior_median'])}, prior 95% quantile {_fmt(tau['prior_q95'])}")
        lines.append(
            f"tau posterior: median {_fmt(tau['median'])}, mean {_fmt(tau['mean'])}, mode {_fmt(tau['mode'])}, "
            f"95% {model['interval']} interval {_interval(tau['ci95'])}"
        )
    else:
        flag = " (degenerate)" if tau["degenerate"] else ""
        lines.append(
            f"tau estimate ({tau['estimator'].upper()}): {_fmt(tau['estimate'])}, "
            f"Q-profile {int(round(tau['ci_level'] * 100))}% interval {_interval(tau['ci95'])}{flag}, "
            f"Q(0) = {_fmt(tau['q_at_zero'])} on {tau['dof']} df"
        )

    kind = "marginal" if model["mode"] == "bayes" else "BLUP"
    lines += _summary_lines(f"study effects ({kind}):", report["studies"])
    lines += _summary_lines("contrasts:", report["contrasts"])
    lines += _summary_lines("predictions:", report["predictions"])
    return "\n".join(lines) + "\n"


def format_loo_table(rows: List[dict]) -> str:
    width = max(len("excluded"), max(len(str(r["excluded"] or "none")) for r in rows))
    target = rows[0]["target"] if rows else "target"
    lines = [f"{'excluded':<{width}}  {'tau median':>12}  {target + ' median':>14}"]
    for r in rows:
        lines.append(f"{str(r['excluded'] or 'none'):<{width}}  {_fmt(r['tau_median']):>12}  {_fmt(r['target_median']):>14}")
    return "\n".join(lines) + "\n"


def write_outputs(out_dir, files: Dict[str, str]) -> List[Path]:
    """
    Writes every file to a staging directory next to `out_dir` first and only
    then moves them into place, so a failure leaves `out_dir` untouched.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".metatrace-", dir=out_dir))
    written = []
    try:
        for name, text in files.items():
            with open(staging / name, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
        for name in files:
            target = out_dir / name
            os.replace(staging / name, target)
            written.append(target)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return written
