"""Simulation-error cost and Levenberg-Marquardt minimization.

The LM step is solved in a data-driven coordinate frame: the Jacobian is
decomposed by SVD each epoch and directions whose singular value falls
below ``svd_rel_tol`` times the largest one are discarded before the
damped step is formed.  This removes the rank-deficient directions caused
by the non-uniqueness of the model parametrization (state-basis changes,
neuron permutations).
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .signals import Dataset
from .ssnn import SimulationDiverged, jacobian_bptt, pack, simulate, unpack

__all__ = [
    "LmOptions",
    "StepRecord",
    "TrainReport",
    "cost",
    "lm_minimize",
    "lm_train",
    "write_history_csv",
    "report_to_dict",
    "save_report",
]


@dataclass
class LmOptions:
    max_epochs: int = 300
    lambda_init: float = 1e-2
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    svd_rel_tol: float = 1e-8
    cost_tol: float = 1e-9
    cost_window: int = 10
    max_lambda: float = 1e10
    max_retries: int = 20
    max_jacobian_mb: float = 512.0

    def __post_init__(self):
        if not (self.lambda_up > 1.0 > self.lambda_down > 0.0):
            raise ValueError("need lambda_up > 1 > lambda_down > 0")
        if not 0.0 < self.svd_rel_tol < 1.0:
            raise ValueError("svd_rel_tol must lie in (0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.cost_window < 1 or self.max_retries < 1:
            raise ValueError("cost_window and max_retries must be >= 1")


@dataclass
class StepRecord:
    epoch: int
    lam: float
    cost: float
    accepted: bool


@dataclass
class TrainReport:
    cost_history: list = field(default_factory=list)  # accepted iterates only
    step_log: list = field(default_factory=list)
    final_theta: np.ndarray | None = None
    epochs_run: int = 0
    stop_reason: str = ""
    wall_time: float = 0.0
    epoch_costs: list = field(default_factory=list)  # carried forward per epoch
    final_model: object = None
    final_x0: np.ndarray | None = None


def _mean_square(r):
    if r is None:
        return np.inf
    with np.errstate(over="ignore", invalid="ignore"):
        c = float(np.mean(r * r))
    return c if np.isfinite(c) else np.inf


def cost(model, dataset: Dataset, x0=None) -> float:
    """Mean squared simulation error over all samples and output channels.

    A diverging simulation yields ``inf`` so the optimizer can reject the
    step.
    """
    try:
        y_hat, _ = simulate(model, dataset.u, x0)
    except SimulationDiverged:
        return np.inf
    return _mean_square(dataset.y - y_hat)


def lm_minimize(residual_fn, jacobian_fn, theta0, opts: LmOptions | None = None) -> TrainReport:
    """Minimize mean(r^2) by Levenberg-Marquardt with SVD step truncation.

    ``residual_fn(theta)`` returns the residual vector y - yhat (may raise
    :class:`SimulationDiverged`, treated as infinite cost);
    ``jacobian_fn(theta)`` returns d yhat / d theta.  Steps are accepted
    only when the cost strictly decreases, so the accepted cost history is
    strictly decreasing by construction.
    """
    if opts is None:
        opts = LmOptions()
    t_start = time.perf_counter()

    def try_residual(theta):
        try:
            return residual_fn(theta)
        except SimulationDiverged:
            return None

    theta = np.array(theta0, dtype=float).ravel()
    r = try_residual(theta)
    current = _mean_square(r)
    if not np.isfinite(current):
        raise ValueError("initial simulation diverged; cannot start training")

    report = TrainReport(cost_history=[current], epoch_costs=[current])
    lam = opts.lambda_init
    stop = None

    for epoch in range(1, opts.max_epochs + 1):
        if current == 0.0:
            stop = "tolerance"
            break
        jac = jacobian_fn(theta)
        u_svd, s, vt = np.linalg.svd(jac, full_matrices=False)
        if s[0] == 0.0:
            stop = "tolerance"  # exactly flat: no descent direction left
            break
        keep = s >= opts.svd_rel_tol * s[0]
        u_r = u_svd[:, keep]
        s_r = s[keep]
        vt_r = vt[keep]
        utr = u_r.T @ r

        report.epochs_run = epoch
        accepted = False
        for _ in range(opts.max_retries):
            step = vt_r.T @ (s_r / (s_r * s_r + lam) * utr)
            r_new = try_residual(theta + step)
            c_new = _mean_square(r_new)
            if c_new < current:
                report.step_log.append(StepRecord(epoch, lam, c_new, True))
                theta = theta + step
                r = r_new
                current = c_new
                lam *= opts.lambda_down
                accepted = True
                break
            report.step_log.append(StepRecord(epoch, lam, c_new, False))
            lam *= opts.lambda_up
            if lam > opts.max_lambda:
                stop = "lambda_overflow"
                break
        report.epoch_costs.append(current)
        if accepted:
            report.cost_history.append(current)
        elif stop is None:
            stop = "no_accepted_step"
        if stop is not None:
            break
        # relative improvement over a trailing window of accepted epochs
        hist = report.cost_history
        if len(hist) > opts.cost_window:
            ref = hist[-1 - opts.cost_window]
            if ref > 0 and (ref - hist[-1]) / ref < opts.cost_tol:
                stop = "tolerance"
                break

    report.final_theta = theta
    report.stop_reason = stop if stop is not None else "max_epochs"
    report.wall_time = time.perf_counter() - t_start
    return report


def lm_train(model, dataset: Dataset, opts: LmOptions | None = None,
             x0=None, train_x0: bool = True) -> TrainReport:
    """Train a state-space network on simulation error.

    The initial state is appended to the parameter vector when ``train_x0``
    is set (default), starting from zero unless ``x0`` is given.
    """
    if opts is None:
        opts = LmOptions()
    n_x = model.dims.n_x
    if x0 is None:
        x0 = np.zeros(n_x)
    pv = pack(model, x0 if train_x0 else None)
    layout = pv.layout

    jac_mb = dataset.n_samples * dataset.n_y * layout.size * 8 / 2**20
    if jac_mb > opts.max_jacobian_mb:
        raise ValueError(
            f"Jacobian would need {jac_mb:.0f} MiB "
            f"(limit {opts.max_jacobian_mb:.0f} MiB); reduce the record "
            f"length or raise max_jacobian_mb"
        )

    u, y = dataset.u, dataset.y

    if train_x0:
        def residual(theta):
            m, x0_ = unpack(theta, layout)
            y_hat, _ = simulate(m, u, x0_)
            return (y - y_hat).ravel()

        def jacobian(theta):
            m, x0_ = unpack(theta, layout)
            return jacobian_bptt(m, u, x0_, with_x0=True)
    else:
        def residual(theta):
            m, _ = unpack(theta, layout)
            y_hat, _ = simulate(m, u, x0)
            return (y - y_hat).ravel()

        def jacobian(theta):
            m, _ = unpack(theta, layout)
            return jacobian_bptt(m, u, x0, with_x0=False)

    report = lm_minimize(residual, jacobian, pv.theta, opts)
    final_model, final_x0 = unpack(report.final_theta, layout)
    report.final_model = final_model
    report.final_x0 = final_x0 if train_x0 else np.asarray(x0, dtype=float)
    return report


def write_history_csv(report: TrainReport, path):
    """One row per attempted step: epoch, cost, rmse, lambda, accepted."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "cost", "rmse", "lambda", "accepted"])
        for rec in report.step_log:
            if np.isfinite(rec.cost):
                cost_s = f"{rec.cost:.17g}"
                rmse_s = f"{np.sqrt(rec.cost):.17g}"
            else:
                cost_s = rmse_s = "inf"
            w.writerow([rec.epoch, cost_s, rmse_s,
                        f"{rec.lam:.17g}", int(rec.accepted)])


def report_to_dict(report: TrainReport) -> dict:
    return {
        "cost_history": [float(c) for c in report.cost_history],
        "epoch_costs": [float(c) for c in report.epoch_costs],
        "epochs_run": report.epochs_run,
        "stop_reason": report.stop_reason,
        "wall_time": report.wall_time,
        "final_theta": None if report.final_theta is None
        else [float(v) for v in report.final_theta],
        "step_log": [
            {"epoch": s.epoch, "lambda": s.lam,
             "cost": None if not np.isfinite(s.cost) else s.cost,
             "accepted": s.accepted}
            for s in report.step_log
        ],
    }


def save_report(report: TrainReport, path):
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh)
