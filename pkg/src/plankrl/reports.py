"""Plot-ready CSV series and rendered figures from a finished run directory.

`report` reads the per-step evaluation logs and summary written by
`experiment.run` and emits, under <run>/report/:

    step_response.csv / .png    ball position vs time per iteration & trial
    tau_trace.csv / .png        mean and std of the interaction force
    prediction_bands.csv / .png one-step predictions with 2-sigma bands
    calibration.csv             per-dimension 2-sigma coverage
    relevance.csv / .png        normalized ARD relevance heatmap
    metrics.csv                 per-iteration aggregates of the summary
"""

from __future__ import annotations

import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import csvio
from .errors import ContractViolationError
from .experiment import EVAL_SCHEMA, STATE_COLS, SUMMARY_SCHEMA

EXPECTED_FILES = ("summary.csv", "relevance.csv", "eval")

EVAL_NAME = re.compile(r"iter(\d+)_trial(\d+)\.csv$")


def _check_run_dir(run_dir: Path) -> None:
    missing = [name for name in EXPECTED_FILES if not (run_dir / name).exists()]
    eval_dir = run_dir / "eval"
    if eval_dir.exists() and not list(eval_dir.glob("iter*_trial*.csv")):
        missing.append("eval/iter*_trial*.csv")
    if missing:
        raise ContractViolationError(
            f"{run_dir} is not a finished run directory; missing: {', '.join(sorted(missing))}"
        )


def _load_eval_logs(run_dir: Path) -> dict[tuple[int, int], np.ndarray]:
    logs = {}
    for path in sorted((run_dir / "eval").glob("iter*_trial*.csv")):
        m = EVAL_NAME.search(path.name)
        header, rows = csvio.read_csv(path)
        if header != EVAL_SCHEMA:
            raise ContractViolationError(f"{path} does not match the evaluation schema")
        logs[(int(m.group(1)), int(m.group(2)))] = np.array([[float(v) for v in r] for r in rows])
    return logs


def _col(name: str) -> int:
    return EVAL_SCHEMA.index(name)


def report(run_dir: str | Path, out_dir: str | Path | None = None) -> dict:
    """Build all report files; returns the aggregate tables as dicts."""
    run_dir = Path(run_dir)
    _check_run_dir(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)

    logs = _load_eval_logs(run_dir)
    iterations = sorted({k[0] for k in logs})
    t_col, d_col, dd_col, tau_col = _col("t"), _col("d"), _col("delta_d"), _col("tau")

    # Step response: one series per evaluation rollout.
    step_rows = []
    for (it, trial), arr in sorted(logs.items()):
        for row in arr:
            step_rows.append([row[t_col], it, trial, row[d_col], row[dd_col]])
    csvio.write_csv(out / "step_response.csv", ["t", "iteration", "trial", "d", "delta_d"], step_rows)

    fig, ax = plt.subplots(figsize=(7, 4))
    cmap = plt.get_cmap("viridis")
    for (it, trial), arr in sorted(logs.items()):
        color = cmap(it / max(1, max(iterations)))
        label = f"iteration {it}" if trial == 0 else None
        ax.plot(arr[:, t_col], arr[:, d_col], color=color, alpha=0.8, label=label)
    goal = logs[min(logs)][0, d_col] - logs[min(logs)][0, dd_col]
    ax.axhline(goal, color="k", ls="--", lw=1, label="goal")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("ball position d")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "step_response.png", dpi=120)
    plt.close(fig)

    # Interaction-force trace: mean and std across trials per iteration.
    tau_rows = []
    fig, ax = plt.subplots(figsize=(7, 4))
    for it in iterations:
        arrs = [arr for (i, _), arr in sorted(logs.items()) if i == it]
        n = min(a.shape[0] for a in arrs)
        taus = np.stack([a[:n, tau_col] for a in arrs])
        times = arrs[0][:n, t_col]
        mean, std = taus.mean(axis=0), taus.std(axis=0)
        for k in range(n):
            tau_rows.append([times[k], it, mean[k], std[k]])
        ax.plot(times, mean, label=f"iteration {it}")
        ax.fill_between(times, mean - std, mean + std, alpha=0.2)
    csvio.write_csv(out / "tau_trace.csv", ["t", "iteration", "mean_tau", "std_tau"], tau_rows)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("interaction force tau")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "tau_trace.png", dpi=120)
    plt.close(fig)

    # One-step prediction bands from the last iteration's first trial.
    last_key = (iterations[-1], min(tr for (i, tr) in logs if i == iterations[-1]))
    arr = logs[last_key]
    band_rows = []
    coverage = {}
    fig, axes = plt.subplots(7, 1, figsize=(7, 12), sharex=True)
    for dim, name in enumerate(STATE_COLS):
        mean_col = _col(f"pred_mean_{name}")
        std_col = _col(f"pred_std_{name}")
        state_col = _col(name)
        # Prediction at row k targets the observation at row k+1.
        t_next = arr[1:, t_col]
        actual = arr[1:, state_col]
        mu = arr[:-1, mean_col]
        sd = arr[:-1, std_col]
        inside = np.abs(actual - mu) <= 2.0 * sd
        coverage[name] = float(np.mean(inside))
        for k in range(actual.size):
            band_rows.append([t_next[k], name, actual[k], mu[k], mu[k] - 2 * sd[k], mu[k] + 2 * sd[k]])
        ax = axes[dim]
        ax.plot(t_next, actual, "k-", lw=1, label="observed")
        ax.plot(t_next, mu, "C0--", lw=1, label="predicted")
        ax.fill_between(t_next, mu - 2 * sd, mu + 2 * sd, color="C0", alpha=0.2)
        ax.set_ylabel(name, fontsize=8)
    axes[0].legend(fontsize=7)
    axes[-1].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(out / "prediction_bands.png", dpi=120)
    plt.close(fig)
    csvio.write_csv(
        out / "prediction_bands.csv", ["t", "dim", "actual", "pred_mean", "pred_lo", "pred_hi"], band_rows
    )
    csvio.write_csv(
        out / "calibration.csv", ["dim", "coverage_2sigma"], [[k, v] for k, v in coverage.items()]
    )

    # Relevance heatmap (already normalized by the run).
    header, rows = csvio.read_csv(run_dir / "relevance.csv")
    table = np.array([[float(v) for v in r[1:]] for r in rows])
    csvio.write_csv(out / "relevance.csv", header, rows)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    im = ax.imshow(table, cmap="Greys", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(header) - 1), header[1:], rotation=45, fontsize=7)
    ax.set_yticks(range(len(rows)), [r[0] for r in rows], fontsize=7)
    fig.colorbar(im, ax=ax, label="relevance")
    fig.tight_layout()
    fig.savefig(out / "relevance.png", dpi=120)
    plt.close(fig)

    # Per-iteration aggregates of the run summary.
    sum_header, sum_rows = csvio.read_csv(run_dir / "summary.csv")
    if sum_header != SUMMARY_SCHEMA:
        raise ContractViolationError(f"{run_dir / 'summary.csv'} does not match the summary schema")
    data = np.array([[float(v) for v in r] for r in sum_rows])
    metric_rows = []
    for it in iterations:
        sel = data[data[:, 0] == it]
        metric_rows.append(
            [it, float(sel[:, 2].mean()), float(np.median(sel[:, 3])), float(sel[:, 4].mean()), float(sel[:, 5].mean())]
        )
    csvio.write_csv(
        out / "metrics.csv",
        ["iteration", "mean_overshoot", "median_settling_time", "mean_tau", "mean_cost"],
        metric_rows,
    )

    return {
        "calibration": coverage,
        "metrics": metric_rows,
        "relevance": table,
        "iterations": iterations,
    }
