"""Deterministic parameter optimization.

L-BFGS (two-loop recursion, strong-Wolfe line search with cubic
interpolation) is the primary optimizer; Adam is the fallback for
non-smooth tails such as polygonal minimizers. Both operate on plain numpy
vectors through a loss callable returning (value, gradient), so runs with a
fixed configuration and seed are bit-reproducible.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidBodyError

LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class LbfgsConfig:
    history: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    grad_tol: float = 1e-7
    max_iter: int = 500
    max_line_search: int = 25

    def __post_init__(self):
        if not (0.0 < self.c1 < self.c2 < 1.0):
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    grad_norm: float
    metrics: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0  # kept in memory only; never serialized


@dataclass
class RunLog:
    records: list[IterationRecord] = field(default_factory=list)
    status: str = ""
    message: str = ""
    n_evals: int = 0

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else math.nan

    def extend(self, other: "RunLog"):
        offset = self.records[-1].iteration + 1 if self.records else 0
        for r in other.records:
            self.records.append(IterationRecord(
                r.iteration + offset, r.loss, r.grad_norm, r.metrics, r.wall_time))
        self.n_evals += other.n_evals
        self.status = other.status
        self.message = other.message


class RunLogWriter:
    """Streams accepted iterations as CSV rows (no timing columns, so the
    file is reproducible)."""

    def __init__(self, path, metric_names: list[str] = ()):  # noqa: B006
        self.metric_names = list(metric_names)
        self._fh = open(path, "w")
        self._fh.write(",".join(["iteration", "loss", "grad_norm"] + self.metric_names) + "\n")

    def write(self, rec: IterationRecord):
        cols = ["%d" % rec.iteration, "%.17g" % rec.loss, "%.17g" % rec.grad_norm]
        cols += ["%.17g" % rec.metrics.get(k, math.nan) for k in self.metric_names]
        self._fh.write(",".join(cols) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def _record(log: RunLog, writer, k, f, gnorm, metrics, t0):
    rec = IterationRecord(k, float(f), float(gnorm), metrics or {}, time.perf_counter() - t0)
    log.records.append(rec)
    if writer is not None:
        writer.write(rec)


class _LineSearchFailure(Exception):
    pass


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic Hermite interpolant on [a, b]; nan if degenerate."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0.0:
        return math.nan
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0.0:
        return math.nan
    return b - (b - a) * (gb + d2 - d1) / denom


def _strong_wolfe(loss: LossFn, x, f0, g0, d, cfg: LbfgsConfig, alpha0: float):
    """Bracket + zoom line search; returns (alpha, f, g, evals)."""
    dg0 = float(g0 @ d)
    if dg0 >= 0.0:
        raise _LineSearchFailure("not a descent direction")

    def phi(a):
        f, g = loss(x + a * d)
        return float(f), g, float(g @ d)

    evals = 0
    a_prev, f_prev, dg_prev = 0.0, f0, dg0
    a = alpha0
    a_max = 1e10
    bracket = None
    for _ in range(cfg.max_line_search):
        f, g, dg = phi(a)
        evals += 1
        if not math.isfinite(f):
            # treat a blow-up like a failed sufficient-decrease test
            bracket = (a_prev, f_prev, dg_prev, a, math.inf, 0.0)
            break
        if f > f0 + cfg.c1 * a * dg0 or (evals > 1 and f >= f_prev):
            bracket = (a_prev, f_prev, dg_prev, a, f, dg)
            break
        if abs(dg) <= -cfg.c2 * dg0:
            return a, f, g, evals
        if dg >= 0.0:
            bracket = (a, f, dg, a_prev, f_prev, dg_prev)
            break
        a_prev, f_prev, dg_prev = a, f, dg
        a = min(2.0 * a, a_max)
    if bracket is None:
        raise _LineSearchFailure("bracketing exhausted the evaluation budget")

    a_lo, f_lo, dg_lo, a_hi, f_hi, dg_hi = bracket
    for _ in range(cfg.max_line_search - evals):
        a = _cubic_min(a_lo, f_lo, dg_lo, a_hi, f_hi, dg_hi)
        lo, hi = (a_lo, a_hi) if a_lo < a_hi else (a_hi, a_lo)
        margin = 0.1 * (hi - lo)
        if not math.isfinite(a) or a < lo + margin or a > hi - margin:
            a = 0.5 * (lo + hi)
        f, g, dg = phi(a)
        evals += 1
        if not math.isfinite(f) or f > f0 + cfg.c1 * a * dg0 or f >= f_lo:
            a_hi, f_hi, dg_hi = a, f, dg
        else:
            if abs(dg) <= -cfg.c2 * dg0:
                return a, f, g, evals
            if dg * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi, dg_hi = a_lo, f_lo, dg_lo
            a_lo, f_lo, dg_lo = a, f, dg
        if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
            break
    raise _LineSearchFailure("zoom exhausted the evaluation budget")


def lbfgs_minimize(loss: LossFn, theta0: np.ndarray, cfg: LbfgsConfig | None = None,
                   callback: Callable | None = None,
                   metrics_fn: Callable | None = None,
                   writer: RunLogWriter | None = None) -> tuple[np.ndarray, RunLog]:
    """Minimize a deterministic loss; returns the best-seen parameters.

    callback(k, theta, f, g) runs after every accepted step; it may raise
    InvalidBodyError to abort the run (positivity validation) or return
    False to stop cleanly (status "callback_stop", e.g. for solver
    re-adaptation followed by a restart).
    """
    cfg = cfg or LbfgsConfig()
    t0 = time.perf_counter()
    log = RunLog()
    x = np.array(theta0, dtype=float)
    f, g = loss(x)
    f, g = float(f), np.asarray(g, dtype=float)
    log.n_evals = 1
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        log.status, log.message = "non_finite", f"non-finite loss/gradient at start (loss={f})"
        _record(log, writer, 0, f, np.nan, _metrics(metrics_fn, x), t0)
        return x, log
    best_x, best_f = x.copy(), f
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []

    _record(log, writer, 0, f, np.linalg.norm(g), _metrics(metrics_fn, x), t0)
    for k in range(cfg.max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.grad_tol:
            log.status = "converged"
            return best_x, log

        d = -_two_loop(g, s_hist, y_hist, rho_hist)
        alpha0 = 1.0
        if not s_hist:
            d = -g
            alpha0 = min(1.0, 1.0 / max(1e-12, gnorm))
        try:
            alpha, f_new, g_new, evals = _strong_wolfe(loss, x, f, g, d, cfg, alpha0)
        except _LineSearchFailure as exc:
            log.n_evals += cfg.max_line_search
            log.status, log.message = "line_search_failed", str(exc)
            return best_x, log
        log.n_evals += evals

        s = alpha * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > cfg.history:
                s_hist.pop(0), y_hist.pop(0), rho_hist.pop(0)
        x = x + s
        f, g = float(f_new), np.asarray(g_new, dtype=float)
        if not (math.isfinite(f) and np.all(np.isfinite(g))):
            log.status, log.message = "non_finite", f"non-finite loss/gradient at iteration {k + 1}"
            return best_x, log
        if f < best_f:
            best_f, best_x = f, x.copy()
        _record(log, writer, k + 1, f, np.linalg.norm(g), _metrics(metrics_fn, x), t0)
        if callback is not None:
            try:
                keep_going = callback(k + 1, x, f, g)
            except InvalidBodyError as exc:
                log.status, log.message = "aborted", str(exc)
                return best_x, log
            if keep_going is False:
                log.status = "callback_stop"
                return x, log
    log.status = "max_iter"
    return best_x, log


def _metrics(metrics_fn, x):
    return metrics_fn(x) if metrics_fn is not None else {}


def _two_loop(g, s_hist, y_hist, rho_hist):
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        gamma = float(s_hist[-1] @ y_hist[-1]) / float(y_hist[-1] @ y_hist[-1])
        q *= gamma
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def adam_minimize(loss: LossFn, theta0: np.ndarray, lr: float = 1e-3,
                  max_iter: int = 200, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8, callback: Callable | None = None,
                  metrics_fn: Callable | None = None,
                  writer: RunLogWriter | None = None) -> tuple[np.ndarray, RunLog]:
    """Plain deterministic Adam loop returning the best-seen parameters."""
    t0 = time.perf_counter()
    log = RunLog()
    x = np.array(theta0, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_x, best_f = x.copy(), math.inf
    for k in range(max_iter):
        f, g = loss(x)
        f, g = float(f), np.asarray(g, dtype=float)
        log.n_evals += 1
        if not (math.isfinite(f) and np.all(np.isfinite(g))):
            log.status, log.message = "non_finite", f"non-finite loss/gradient at iteration {k}"
            return best_x, log
        if f < best_f:
            best_f, best_x = f, x.copy()
        _record(log, writer, k, f, np.linalg.norm(g), _metrics(metrics_fn, x), t0)
        if callback is not None:
            try:
                keep_going = callback(k, x, f, g)
            except InvalidBodyError as exc:
                log.status, log.message = "aborted", str(exc)
                return best_x, log
            if keep_going is False:
                log.status = "callback_stop"
                return x, log
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mh = m / (1.0 - beta1 ** (k + 1))
        vh = v / (1.0 - beta2 ** (k + 1))
        x = x - lr * mh / (np.sqrt(vh) + eps)
    log.status = "completed"
    return best_x, log


def minimize(loss: LossFn, theta0: np.ndarray, cfg: LbfgsConfig | None = None,
             callback: Callable | None = None, metrics_fn: Callable | None = None,
             writer: RunLogWriter | None = None, fallback: bool = True,
             adam_lr: float = 1e-3, adam_steps: int = 200) -> tuple[np.ndarray, RunLog]:
    """L-BFGS with an Adam rescue for non-smooth tails.

    On line-search failure the run switches to Adam for a fixed number of
    steps and then retries L-BFGS once.
    """
    x, log = lbfgs_minimize(loss, theta0, cfg, callback, metrics_fn, writer)
    if log.status == "line_search_failed" and fallback:
        x2, alog = adam_minimize(loss, x, adam_lr, adam_steps, callback=callback,
                                 metrics_fn=metrics_fn, writer=writer)
        log.extend(alog)
        if alog.status == "aborted":
            return x2, log
        x3, blog = lbfgs_minimize(loss, x2, cfg, callback, metrics_fn, writer)
        log.extend(blog)
        return x3, log
    return x, log
