"""Reporting over completed run directories.

Reads the evaluation matrices a run wrote, computes the forgetting and
aggregate metrics, and emits metrics.json (full precision), a fixed-width
text table (one decimal, the reporting convention), per-domain forgetting
curves as CSV, and optional static plots. With a comparison run, a
side-by-side delta table is produced.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import EvalMatrix, matrix_from_csv, mmae, mrmse, nbwt


@dataclass
class RunReport:
    run_dir: Path
    mode: str
    eval: EvalMatrix
    unseen_rows: list[dict]

    @property
    def n(self) -> int:
        return self.eval.n

    def final_row(self) -> tuple[list[float], list[float]]:
        t = self.eval.n
        return list(self.eval.mae[t - 1]), list(self.eval.rmse[t - 1])


def load_run(run_dir) -> RunReport:
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    if not cfg_path.is_file():
        raise FileNotFoundError(f"not a run directory (missing {cfg_path})")
    with open(cfg_path) as f:
        cfg = json.load(f)
    mode = cfg.get("mode", "flcb")
    mae_path = run_dir / "e_matrix_mae.csv"
    rmse_path = run_dir / "e_matrix_rmse.csv"
    if not mae_path.is_file() or not rmse_path.is_file():
        raise FileNotFoundError(f"run directory {run_dir} is missing its e-matrix CSVs")
    mae_m, names = matrix_from_csv(mae_path)
    rmse_m, names_r = matrix_from_csv(rmse_path)
    if names != names_r:
        raise ValueError(f"e-matrix headers disagree in {run_dir}")
    E = EvalMatrix(domain_names=names, mae=mae_m, rmse=rmse_m)
    # Completeness: incremental runs must have every row 1..N; the joint
    # reference writes only the final row.
    required = range(1, E.n + 1) if mode != "joint" else [E.n]
    for t in required:
        for i in range(1, t + 1):
            if not E.defined(t, i):
                raise ValueError(f"e-matrix incomplete: missing row t={t} (domain {names[i - 1]})")
    unseen_rows = []
    unseen_path = run_dir / "unseen.csv"
    if unseen_path.is_file():
        with open(unseen_path) as f:
            lines = [ln.strip() for ln in f if ln.strip()]
        for line in lines[1:]:
            step, domain, mae_v, rmse_v = line.split(",")
            unseen_rows.append(
                {"step": int(step), "domain": domain, "mae": float(mae_v), "rmse": float(rmse_v)}
            )
    return RunReport(run_dir=run_dir, mode=mode, eval=E, unseen_rows=unseen_rows)


def build_metrics(report: RunReport) -> dict:
    """Full-precision metric document for metrics.json."""
    E = report.eval
    maes, rmses = report.final_row()
    nbwt_steps: list[float] = []
    if report.mode != "joint":
        nbwt_steps = [nbwt(E, t) for t in range(2, E.n + 1)]
    doc = {
        "mode": report.mode,
        "domains": list(E.domain_names),
        "nbwt_per_step": nbwt_steps,
        "final_mmae": mmae(maes),
        "final_mrmse": mrmse(rmses),
        "per_domain_final": {
            name: {"mae": maes[i], "rmse": rmses[i]} for i, name in enumerate(E.domain_names)
        },
    }
    if report.unseen_rows:
        last = report.unseen_rows[-1]
        doc["unseen"] = {"domain": last["domain"], "mae": last["mae"], "rmse": last["rmse"]}
    return doc


def _fmt(x: float | None, width: int = 9) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return " " * (width - 1) + "-"
    return f"{x:{width}.1f}"


def render_table(report: RunReport) -> str:
    """Fixed-width summary: per-domain final MAE/RMSE plus aggregates."""
    doc = build_metrics(report)
    lines = []
    lines.append(f"run: {report.run_dir.name}   mode: {report.mode}")
    header = f"{'domain':<16}{'MAE':>9}{'RMSE':>9}"
    lines.append(header)
    lines.append("-" * len(header))
    for name in report.eval.domain_names:
        entry = doc["per_domain_final"][name]
        lines.append(f"{name:<16}{_fmt(entry['mae'])}{_fmt(entry['rmse'])}")
    lines.append("-" * len(header))
    lines.append(f"{'mMAE':<16}{_fmt(doc['final_mmae'])}")
    lines.append(f"{'mRMSE':<16}{_fmt(doc['final_mrmse'])}")
    if doc["nbwt_per_step"]:
        lines.append(f"{'nBwT':<16}{doc['nbwt_per_step'][-1]:>9.3f}")
    if "unseen" in doc:
        u = doc["unseen"]
        lines.append(f"{'unseen ' + u['domain']:<16}{_fmt(u['mae'])}{_fmt(u['rmse'])}")
    return "\n".join(lines) + "\n"


def render_compare(a: RunReport, b: RunReport) -> str:
    """Side-by-side final metrics with deltas (a minus b)."""
    if a.eval.domain_names != b.eval.domain_names:
        raise ValueError("cannot compare runs over different domain sets")
    da, db = build_metrics(a), build_metrics(b)
    name_a, name_b = a.run_dir.name, b.run_dir.name
    lines = []
    header = f"{'domain':<16}{name_a[:12]:>13}{name_b[:12]:>13}{'delta':>10}"
    lines.append(f"final test MAE per domain ({name_a} vs {name_b})")
    lines.append(header)
    lines.append("-" * len(header))
    for name in a.eval.domain_names:
        va = da["per_domain_final"][name]["mae"]
        vb = db["per_domain_final"][name]["mae"]
        lines.append(f"{name:<16}{va:>13.1f}{vb:>13.1f}{va - vb:>10.1f}")
    lines.append("-" * len(header))
    lines.append(
        f"{'mMAE':<16}{da['final_mmae']:>13.1f}{db['final_mmae']:>13.1f}"
        f"{da['final_mmae'] - db['final_mmae']:>10.1f}"
    )
    lines.append(
        f"{'mRMSE':<16}{da['final_mrmse']:>13.1f}{db['final_mrmse']:>13.1f}"
        f"{da['final_mrmse'] - db['final_mrmse']:>10.1f}"
    )
    if da["nbwt_per_step"] and db["nbwt_per_step"]:
        na, nb = da["nbwt_per_step"][-1], db["nbwt_per_step"][-1]
        lines.append(f"{'nBwT':<16}{na:>13.3f}{nb:>13.3f}{na - nb:>10.3f}")
    return "\n".join(lines) + "\n"


def write_forgetting_curves(report: RunReport, path) -> None:
    """Long-format e[., i] curves: step,domain,mae,rmse (defined cells only)."""
    E = report.eval
    with open(path, "w") as f:
        f.write("step,domain,mae,rmse\n")
        for t in range(1, E.n + 1):
            for i in range(1, t + 1):
                if E.defined(t, i):
                    f.write(
                        f"{t},{E.domain_names[i - 1]},{E.mae[t - 1, i - 1]!r},{E.rmse[t - 1, i - 1]!r}\n"
                    )


def write_plots(report: RunReport, plot_dir) -> list[Path]:
    """Static PNGs derived from the curves CSV; requires matplotlib."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover
        raise RuntimeError("plotting requires matplotlib (install extra 'plots')") from exc
    plot_dir = Path(plot_dir)
    plot_dir.mkdir(parents=True, exist_ok=True)
    E = report.eval
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, name in enumerate(E.domain_names, start=1):
        steps = [t for t in range(i, E.n + 1) if E.defined(t, i)]
        ax.plot(steps, [E.mae[t - 1, i - 1] for t in steps], marker="o", label=name)
    ax.set_xlabel("training step")
    ax.set_ylabel("test MAE")
    ax.set_title("per-domain error vs training step")
    ax.legend()
    out = plot_dir / "forgetting_mae.png"
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return [out]


def write_report(run_dir, compare_dir=None, plot: bool = False) -> str:
    """Emit metrics.json, report.txt, forgetting_curves.csv (and plots).

    Returns the rendered text (summary table, plus the comparison table when
    a second run is given).
    """
    report = load_run(run_dir)
    doc = build_metrics(report)
    with open(report.run_dir / "metrics.json", "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
    write_forgetting_curves(report, report.run_dir / "forgetting_curves.csv")
    text = render_table(report)
    if compare_dir is not None:
        other = load_run(compare_dir)
        text += "\n" + render_compare(report, other)
    if plot:
        write_plots(report, report.run_dir / "plots")
    with open(report.run_dir / "report.txt", "w") as f:
        f.write(text)
    return text
