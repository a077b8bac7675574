"""Shape objectives and evaluation metrics over convex bodies.

Every loss comes in two forms: an eager value for reporting, and a factory
producing a jitted ``theta -> (value, gradient)`` callable for the
optimizer. Both share the same jax expressions, so what is optimized is
exactly what is reported.
"""
from __future__ import annotations

import ast
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from . import bodies as _bodies
from .errors import DomainError, InvalidBodyError
from .geometry import (GAUGE, SUPPORT, ConvexBody, _gauss_curvature, _map,
                       _surface_area, _volume, body_from_function,
                       body_from_net, hausdorff_estimate, map_points,
                       polar_body, surface_area, volume)
from .net import from_polytope_gauge, from_polytope_support
from .optimize import LbfgsConfig, minimize
from .pde import (GalerkinPrecompute, MfsConfig, _galerkin_volume_integral,
                  mfs_direction_sets, mfs_normal_derivative_expr,
                  mfs_rigidity_expr, mfs_torsion_pieces, solve_torsion_mfs)
from .quadrature import (BallRule, SphereRule, ball_rule, ball_volume,
                         sphere_area, sphere_rule)

ValueAndGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


def make_value_and_grad(expr: Callable[[jnp.ndarray], jnp.ndarray]) -> ValueAndGrad:
    vg = jax.jit(jax.value_and_grad(expr))

    def wrapped(theta: np.ndarray) -> tuple[float, np.ndarray]:
        v, g = vg(jnp.asarray(theta, dtype=jnp.float64))
        return float(v), np.asarray(g)
    return wrapped


def make_value_and_grad_aux(expr: Callable) -> Callable:
    """As make_value_and_grad for an expr returning (value, aux)."""
    vg = jax.jit(jax.value_and_grad(expr, has_aux=True))

    def wrapped(theta: np.ndarray):
        (v, aux), g = vg(jnp.asarray(theta, dtype=jnp.float64))
        return float(v), np.asarray(g), float(aux)
    return wrapped


# ---------------------------------------------------------------------------
# Noisy-sample fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitDataset:
    samples: np.ndarray
    target_id: str
    sigma: float
    seed: int

    @property
    def n(self) -> int:
        return self.samples.shape[0]


def generate_noisy_samples(target: ConvexBody, n: int, sigma: float,
                           seed: int) -> FitDataset:
    """Boundary points of the target plus componentwise Gaussian noise."""
    if n < 1:
        raise ValueError("need at least one sample")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, target.d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = map_points(target, x)
    if sigma > 0:
        y = y + sigma * rng.standard_normal(y.shape)
    keep = np.linalg.norm(y, axis=1) >= 1e-12
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} samples at the origin")
        y = y[keep]
    return FitDataset(y, target_id=f"{target.kind}", sigma=sigma, seed=seed)


def fit_loss_expr(fn, samples):
    Y = jnp.asarray(samples)

    def expr(theta):
        vals = jax.vmap(lambda y: fn(theta, y))(Y)
        return jnp.sum((vals - 1.0) ** 2)
    return expr


def fit_loss(body: ConvexBody, data: FitDataset) -> float:
    if body.kind != GAUGE:
        raise DomainError("the boundary-fit loss is defined for gauge bodies")
    return float(fit_loss_expr(body.apply_fn, data.samples)(jnp.asarray(body.theta)))


def make_fit_loss(body: ConvexBody, data: FitDataset) -> ValueAndGrad:
    if body.kind != GAUGE:
        raise DomainError("the boundary-fit loss is defined for gauge bodies")
    return make_value_and_grad(fit_loss_expr(body.apply_fn, data.samples))


def accuracy_l2(body: ConvexBody, target: ConvexBody, n: int = 10000) -> float:
    """L2 distance of the body's function from 1 over the target boundary.

    Sampled through the target's boundary map and scaled by the target
    surface measure.
    """
    rule = sphere_rule(body.d, n)
    y = map_points(target, rule.nodes)
    th = jnp.asarray(body.theta)
    vals = np.asarray(jax.vmap(lambda p: body.apply_fn(th, p))(jnp.asarray(y)))
    area = surface_area(target, rule)
    return float(math.sqrt(np.mean((vals - 1.0) ** 2) * area))


# ---------------------------------------------------------------------------
# Integral-quantity losses
# ---------------------------------------------------------------------------

def make_volume_loss(body: ConvexBody, rule: BallRule) -> ValueAndGrad:
    fn, kind = body.apply_fn, body.kind
    nodes, w = jnp.asarray(rule.nodes), jnp.asarray(rule.weights)
    return make_value_and_grad(lambda th: _volume(fn, kind, th, nodes, w))


def mahler_volume(body: ConvexBody, rule: BallRule) -> float:
    return volume(body, rule) * volume(polar_body(body), rule)


def mahler_expr(fn, rule: BallRule):
    nodes, w = jnp.asarray(rule.nodes), jnp.asarray(rule.weights)

    def expr(theta):
        return (_volume(fn, GAUGE, theta, nodes, w)
                * _volume(fn, SUPPORT, theta, nodes, w))
    return expr


def make_mahler_loss(body: ConvexBody, rule: BallRule) -> ValueAndGrad:
    return make_value_and_grad(mahler_expr(body.apply_fn, rule))


def isoperimetric_deficit(body: ConvexBody, sphere: SphereRule,
                          ball: BallRule) -> float:
    """c_d Per / Vol^{(d-1)/d} - 1; zero exactly on balls."""
    d = body.d
    c_d = 1.0 / (d * ball_volume(d) ** (1.0 / d))
    per = surface_area(body, sphere)
    vol = volume(body, ball)
    return c_d * per / vol ** ((d - 1.0) / d) - 1.0


def _mfs_check_residual_expr(fn, kind, theta, coeffs, sources, check_dirs):
    from .pde import _mfs_harmonic

    def one(x):
        y = _map(fn, kind, theta, x)
        return jnp.abs(_mfs_harmonic(coeffs, sources, y) - 0.5 * y[0] ** 2)
    return jnp.max(jax.vmap(one)(check_dirs))


def saint_venant_expr(fn, kind, d, src_dirs, fit_dirs, fit_w, eps, lam_rel,
                      ball_nodes, ball_w, check_dirs):
    """Negated scale-invariant torsional rigidity T / Vol^{(d+2)/d}.

    Returns (loss, boundary residual) so the outer loop can watch solver
    quality for free.
    """
    def expr(theta):
        coeffs, sources = mfs_torsion_pieces(fn, kind, theta, src_dirs, fit_dirs,
                                             fit_w, eps, lam_rel)
        T = mfs_rigidity_expr(fn, kind, theta, coeffs, sources, ball_nodes, ball_w)
        vol = _volume(fn, kind, theta, ball_nodes, ball_w)
        res = _mfs_check_residual_expr(fn, kind, theta, coeffs, sources, check_dirs)
        return -T / vol ** ((d + 2.0) / d), res
    return expr


# ---------------------------------------------------------------------------
# Poisson objective (RBF-Galerkin)
# ---------------------------------------------------------------------------

def poisson_objective_expr(fn, kind, f_fn, pre: GalerkinPrecompute, alpha: float):
    Bval = jnp.asarray(pre.B_val)
    Bgrad = jnp.asarray(pre.B_grad)
    Mb = jnp.asarray(pre.boundary_mass)
    nodes = jnp.asarray(pre.ball.nodes)
    w = jnp.asarray(pre.ball.weights)

    def expr(theta):
        return _galerkin_volume_integral(fn, kind, f_fn, theta, Bval, Bgrad, Mb,
                                         nodes, w, alpha)
    return expr


def poisson_objective(body: ConvexBody, f_fn: Callable,
                      pre: GalerkinPrecompute, alpha: float) -> float:
    expr = poisson_objective_expr(body.apply_fn, body.kind, f_fn, pre, alpha)
    return float(expr(jnp.asarray(body.theta)))


def make_poisson_loss(body: ConvexBody, f_fn: Callable, pre: GalerkinPrecompute,
                      alpha: float) -> ValueAndGrad:
    return make_value_and_grad(
        poisson_objective_expr(body.apply_fn, body.kind, f_fn, pre, alpha))


# ---------------------------------------------------------------------------
# Torsion-gradient ratios
# ---------------------------------------------------------------------------

def torsion_gradient_expr(fn, kind, d, src_dirs, fit_dirs, fit_w, eps, lam_rel,
                          x_star, normalization, ball_nodes, ball_w,
                          sph_nodes, sph_w, check_dirs):
    """|d_n u(phi(x*))| over Vol^{1/d} or Per^{1/(d-1)}, negated for descent.

    Returns (loss, boundary residual).
    """
    xs = jnp.asarray(x_star)

    def expr(theta):
        coeffs, sources = mfs_torsion_pieces(fn, kind, theta, src_dirs, fit_dirs,
                                             fit_w, eps, lam_rel)
        dn = mfs_normal_derivative_expr(fn, kind, theta, coeffs, sources, xs)
        if normalization == "volume":
            denom = _volume(fn, kind, theta, ball_nodes, ball_w) ** (1.0 / d)
        else:
            denom = _surface_area(fn, kind, theta, sph_nodes, sph_w) ** (1.0 / (d - 1.0))
        res = _mfs_check_residual_expr(fn, kind, theta, coeffs, sources, check_dirs)
        return -jnp.abs(dn) / denom, res
    return expr


class _MfsBackedObjective:
    """Shared residual control for losses built on an MFS torsion solve.

    Gradients need a fixed source layout, but a layout tuned for one shape
    degrades as the shape moves (the optimizer would then happily exploit
    solver error). ``residual_at`` prices the current layout on a dense
    boundary sample; ``ensure_resolved`` re-adapts it.
    """

    def __init__(self, body: ConvexBody, mfs: MfsConfig):
        self.body = body
        self.mfs = mfs
        self.last_residual = math.inf
        model = solve_torsion_mfs(body, cfg=mfs)
        self._n, self._eps = model.n_sources, model.eps
        self._losses: dict[tuple[int, float], Callable] = {}

    def _build_expr(self, src_dirs, fit_dirs, fit_w, eps, check_dirs):
        raise NotImplementedError

    def _loss(self) -> Callable:
        key = (self._n, self._eps)
        if key not in self._losses:
            src, fit, check = mfs_direction_sets(self.body.d, self._n, self.mfs)
            expr = self._build_expr(jnp.asarray(src.nodes), jnp.asarray(fit.nodes),
                                    jnp.asarray(fit.weights), self._eps,
                                    jnp.asarray(check.nodes))
            self._losses[key] = make_value_and_grad_aux(expr)
        return self._losses[key]

    def control_ok(self, theta: np.ndarray) -> bool:
        """Solver-quality gate, evaluated per accepted step (free: the
        residual rides along with the last loss evaluation)."""
        return self.last_residual <= 10.0 * self.mfs.tol

    def refine(self, theta: np.ndarray) -> bool:
        """Re-adapt the source layout for the current shape; True if it changed."""
        body = self.body.with_theta(theta)
        model = solve_torsion_mfs(body, cfg=self.mfs)
        changed = (model.n_sources, model.eps) != (self._n, self._eps)
        self._n, self._eps = model.n_sources, model.eps
        self.last_residual = model.residual
        return changed

    # kept under its older name for callers thinking in MFS terms
    ensure_resolved = refine

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        v, g, res = self._loss()(theta)
        self.last_residual = res
        return v, g

    def value(self, theta: np.ndarray) -> float:
        """Positive objective value (the loss is its negation)."""
        return -self(theta)[0]


class TorsionGradientObjective(_MfsBackedObjective):
    """Negated J_Vol or J_Per: boundary stress at a fixed reference point
    normalized by volume or perimeter."""

    def __init__(self, body: ConvexBody, normalization: str, ball: BallRule,
                 sphere: SphereRule, x_star: np.ndarray | None = None,
                 mfs: MfsConfig | None = None):
        if normalization not in ("volume", "perimeter"):
            raise ValueError("normalization must be 'volume' or 'perimeter'")
        self.normalization = normalization
        self.ball = ball
        self.sphere = sphere
        self.x_star = np.eye(body.d)[0] if x_star is None else np.asarray(x_star, float)
        super().__init__(body, mfs or MfsConfig())

    def _build_expr(self, src_dirs, fit_dirs, fit_w, eps, check_dirs):
        return torsion_gradient_expr(
            self.body.apply_fn, self.body.kind, self.body.d, src_dirs, fit_dirs,
            fit_w, eps, self.mfs.lam_rel, self.x_star, self.normalization,
            jnp.asarray(self.ball.nodes), jnp.asarray(self.ball.weights),
            jnp.asarray(self.sphere.nodes), jnp.asarray(self.sphere.weights),
            check_dirs)


class SaintVenantObjective(_MfsBackedObjective):
    """Negated scale-invariant torsional rigidity T / Vol^{(d+2)/d}."""

    def __init__(self, body: ConvexBody, ball: BallRule,
                 mfs: MfsConfig | None = None):
        self.ball = ball
        super().__init__(body, mfs or MfsConfig())

    def _build_expr(self, src_dirs, fit_dirs, fit_w, eps, check_dirs):
        return saint_venant_expr(
            self.body.apply_fn, self.body.kind, self.body.d, src_dirs, fit_dirs,
            fit_w, eps, self.mfs.lam_rel,
            jnp.asarray(self.ball.nodes), jnp.asarray(self.ball.weights),
            check_dirs)


class MahlerObjective:
    """Volume product of a gauge body and its polar, with quadrature control.

    Near the polygonal minimizers the support-map Jacobian concentrates into
    spikes; once they fall between quadrature nodes the polar volume is
    under-counted and the apparent product collapses. The control compares
    against a twice-finer rule and refines when they disagree.
    """

    def __init__(self, body: ConvexBody, sphere_n: int = 1024, n_radial: int = 2,
                 consistency_tol: float = 5e-3, max_sphere_n: int = 16384):
        self.body = body
        self.sphere_n = sphere_n
        self.n_radial = n_radial
        self.consistency_tol = consistency_tol
        self.max_sphere_n = max_sphere_n
        self._exprs: dict[int, Callable] = {}

    def _rule(self, n: int) -> BallRule:
        return ball_rule_cached(self.body.d, self.n_radial, n)

    def _loss(self, n: int) -> Callable:
        if n not in self._exprs:
            self._exprs[n] = make_value_and_grad(mahler_expr(self.body.apply_fn,
                                                             self._rule(n)))
        return self._exprs[n]

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        return self._loss(self.sphere_n)(theta)

    def value_fine(self, theta: np.ndarray) -> float:
        return self._loss(2 * self.sphere_n)(theta)[0]

    def control_ok(self, theta: np.ndarray) -> bool:
        coarse = self._loss(self.sphere_n)(theta)[0]
        fine = self.value_fine(theta)
        return abs(fine - coarse) <= self.consistency_tol * abs(fine)

    def refine(self, theta: np.ndarray) -> bool:
        if 2 * self.sphere_n > self.max_sphere_n:
            return False
        self.sphere_n *= 2
        return True


_BALL_RULE_CACHE: dict = {}


def ball_rule_cached(d: int, n_radial: int, sphere_n: int) -> BallRule:
    key = (d, n_radial, sphere_n)
    if key not in _BALL_RULE_CACHE:
        _BALL_RULE_CACHE[key] = ball_rule(d, n_radial, sphere_rule(d, sphere_n))
    return _BALL_RULE_CACHE[key]


def optimize_with_solver_control(obj, theta0: np.ndarray, cfg: LbfgsConfig,
                                 validate: Callable | None = None,
                                 writer=None, metrics_fn=None,
                                 max_restarts: int = 40):
    """Outer loop for objectives with an a-posteriori solver-quality gate.

    The objective exposes ``control_ok(theta)`` (cheap per-step check) and
    ``refine(theta)`` (re-adapt the solver/quadrature, True if something
    changed). When the gate fails the inner run stops, the objective
    refines, and L-BFGS restarts with a fresh history.
    """
    from .optimize import RunLog

    theta = np.asarray(theta0, dtype=float)
    total = RunLog()
    budget = cfg.max_iter
    for _ in range(max_restarts):
        if budget <= 0:
            break

        def callback(k, th, f, g):
            if validate is not None:
                validate(th)
            if not obj.control_ok(th):
                return False
            return None

        inner_cfg = LbfgsConfig(history=cfg.history, c1=cfg.c1, c2=cfg.c2,
                                grad_tol=cfg.grad_tol, max_iter=budget,
                                max_line_search=cfg.max_line_search)
        theta, log = minimize(obj, theta, inner_cfg, callback=callback,
                              metrics_fn=metrics_fn, writer=writer)
        used = max(1, len(log.records) - 1)
        budget -= used
        total.extend(log)
        changed = obj.refine(theta)
        if log.status != "callback_stop" and not changed:
            break
    return theta, total


def torsion_gradient_objectives(body: ConvexBody, ball: BallRule,
                                sphere: SphereRule, x_star=None,
                                mfs: MfsConfig | None = None) -> tuple[float, float]:
    """(J_Vol, J_Per) of a body at a fixed reference boundary point."""
    mfs = mfs or MfsConfig()
    if x_star is None:
        x_star = np.eye(body.d)[0]
    model = solve_torsion_mfs(body, cfg=mfs)
    from .pde import torsion_normal_derivative
    dn = abs(torsion_normal_derivative(model, body, x_star))
    d = body.d
    j_vol = dn / volume(body, ball) ** (1.0 / d)
    j_per = dn / surface_area(body, sphere) ** (1.0 / (d - 1.0))
    return j_vol, j_per


# ---------------------------------------------------------------------------
# Minkowski problem
# ---------------------------------------------------------------------------

def minkowski_loss_expr(fn, g_vals: np.ndarray, rule: SphereRule):
    nodes = jnp.asarray(rule.nodes)
    w = jnp.asarray(rule.weights)
    g = jnp.asarray(g_vals)

    def expr(theta):
        k = jax.vmap(lambda u: _gauss_curvature(fn, SUPPORT, theta, u))(nodes)
        return jnp.sum(w * ((k - g) / g) ** 2)
    return expr


def _check_curvature_target(g_fn, rule: SphereRule) -> np.ndarray:
    g_vals = np.asarray([float(g_fn(jnp.asarray(u))) for u in rule.nodes])
    if g_vals.min() <= 0.0:
        raise DomainError("prescribed curvature must be positive at every node")
    return g_vals


def minkowski_loss(body: ConvexBody, g_fn: Callable, rule: SphereRule) -> float:
    if body.kind != SUPPORT:
        raise DomainError("the curvature loss needs a support-parametrized body")
    g_vals = _check_curvature_target(g_fn, rule)
    return float(minkowski_loss_expr(body.apply_fn, g_vals, rule)(jnp.asarray(body.theta)))


def make_minkowski_loss(body: ConvexBody, g_fn: Callable,
                        rule: SphereRule) -> ValueAndGrad:
    if body.kind != SUPPORT:
        raise DomainError("the curvature loss needs a support-parametrized body")
    g_vals = _check_curvature_target(g_fn, rule)
    return make_value_and_grad(minkowski_loss_expr(body.apply_fn, g_vals, rule))


def minkowski_relative_error(body: ConvexBody, g_fn: Callable,
                             rule: SphereRule) -> float:
    """Root-mean-square relative curvature error over the sphere."""
    return math.sqrt(minkowski_loss(body, g_fn, rule) / sphere_area(body.d))


# ---------------------------------------------------------------------------
# UAT harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UatRow:
    beta: float
    hausdorff: float
    gap_sup: float
    gap_bound: float       # beta log m, the analytic sup bound
    hausdorff_bound: float # radial-function bound, gauge case only (else nan)
    method: str


@dataclass(frozen=True)
class UatReport:
    polytope: str
    d: int
    parametrization: str
    rows: tuple[UatRow, ...]

    def check(self):
        hs = [r.hausdorff for r in self.rows]
        if not all(a > b for a, b in zip(hs, hs[1:])):
            raise InvalidBodyError(f"Hausdorff estimates not strictly decreasing: {hs}")
        for r in self.rows:
            if r.gap_sup > r.gap_bound * (1.0 + 1e-12):
                raise InvalidBodyError(
                    f"function gap {r.gap_sup:.3e} exceeds beta log m = {r.gap_bound:.3e}")
            if math.isfinite(r.hausdorff_bound) and r.hausdorff > r.hausdorff_bound:
                raise InvalidBodyError(
                    f"Hausdorff estimate {r.hausdorff:.3e} exceeds the radial bound "
                    f"{r.hausdorff_bound:.3e}")
        return self


def uat_harness(polytope: str, d: int, betas: Sequence[float], n_samples: int = 10000,
                parametrization: str = GAUGE) -> UatReport:
    """Polytope-approximation sweep: per beta, the Hausdorff estimate against
    the exact polytope and the sup gap between net and max-form."""
    normals, vertices = _bodies.polytope_data(polytope, d)
    rows_mat = normals if parametrization == GAUGE else vertices
    m = rows_mat.shape[0]
    exact_fn = _bodies.polytope_max(rows_mat)
    exact = body_from_function(exact_fn, d, parametrization)
    rule = sphere_rule(d, n_samples)
    exact_vals = np.asarray([float(exact_fn(None, u)) for u in rule.nodes])

    rows = []
    for beta in sorted(betas, reverse=True):
        net = (from_polytope_gauge(rows_mat, beta) if parametrization == GAUGE
               else from_polytope_support(rows_mat, beta))
        nb = body_from_net(net, parametrization)
        th = jnp.asarray(net.theta)
        net_vals = np.asarray(jax.vmap(lambda u: net.apply_fn(th, u))(jnp.asarray(rule.nodes)))
        gap = float(np.abs(net_vals - exact_vals).max())
        est = hausdorff_estimate(nb, exact, n=n_samples)
        if parametrization == GAUGE:
            bound = beta * math.log(m) / (net_vals.min() * exact_vals.min())
            method = "radial-bound"
        else:
            bound = math.nan
            method = "cloud-estimate"
        rows.append(UatRow(beta, est, gap, beta * math.log(m), bound, method))
    return UatReport(polytope, d, parametrization, tuple(rows))


# ---------------------------------------------------------------------------
# Metrics and run statistics
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Flat name -> value map; lengths in body units, areas/volumes in their
    natural powers, runtime in seconds."""

    values: dict[str, float] = field(default_factory=dict)

    def set(self, name: str, value: float):
        v = float(value)
        if not math.isfinite(v):
            raise ValueError(f"metric {name} is not finite: {value}")
        self.values[name] = v

    def format(self) -> str:
        return "".join(f"{k} = {v:.17g}\n" for k, v in sorted(self.values.items()))

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.format())

    @staticmethod
    def read(path) -> "MetricsReport":
        rep = MetricsReport()
        with open(path) as fh:
            for line in fh:
                if "=" in line:
                    k, v = line.split("=", 1)
                    rep.values[k.strip()] = float(v)
        return rep


@dataclass(frozen=True)
class FitRunSpec:
    """One fit configuration used for repeated statistics."""

    target: ConvexBody
    d: int
    n_samples: int = 1000
    m: int = 64
    max_iter: int = 300
    sphere_n: int = 256
    accuracy_n: int = 10000


@dataclass(frozen=True)
class StatsRow:
    sweep_value: float
    q25: float
    median: float
    q75: float
    n_failures: int


def run_fit_once(spec: FitRunSpec, sigma: float, n_samples: int, seed: int) -> float:
    """Fresh init and fresh samples; returns the final accuracy."""
    from .net import random_net
    rule = sphere_rule(spec.d, spec.sphere_n)
    data = generate_noisy_samples(spec.target, n_samples, sigma, seed=seed + 1)
    net = random_net(spec.d, spec.m, seed=seed, sphere=rule)
    body = body_from_net(net, GAUGE)
    loss = make_fit_loss(body, data)
    cfg = LbfgsConfig(max_iter=spec.max_iter, grad_tol=1e-10)
    theta, _ = minimize(loss, net.theta, cfg)
    return accuracy_l2(body.with_theta(theta), spec.target, n=spec.accuracy_n)


def run_statistics(spec: FitRunSpec, repeats: int, base_seed: int = 0,
                   sigmas: Sequence[float] | None = None,
                   sample_counts: Sequence[int] | None = None) -> list[StatsRow]:
    """Median and interquartile accuracy over repeated fits.

    Sweeps either the noise level or the sample count; failed runs are
    excluded from the quantiles and counted.
    """
    if repeats < 3:
        raise ValueError("need at least 3 repeats")
    if (sigmas is None) == (sample_counts is None):
        raise ValueError("provide exactly one of sigmas or sample_counts")
    if sigmas is not None:
        sweep = [(float(s), float(s), spec.n_samples) for s in sigmas]
    else:
        sweep = [(float(n), 0.01, int(n)) for n in sample_counts]
    rows = []
    for value, sigma, n_samples in sweep:
        accs, failures = [], 0
        for r in range(repeats):
            seed = base_seed + 7919 * r + int(1e6 * sigma) + n_samples
            try:
                accs.append(run_fit_once(spec, sigma, n_samples, seed))
            except Exception:
                failures += 1
        q25, med, q75 = np.percentile(accs, [25, 50, 75])
        rows.append(StatsRow(value, float(q25), float(med), float(q75), failures))
    return rows


def write_stats_csv(rows: list[StatsRow], path, sweep_name: str = "sigma"):
    with open(path, "w") as fh:
        fh.write(f"{sweep_name},q25,median,q75,failures\n")
        for r in rows:
            fh.write("%.17g,%.17g,%.17g,%.17g,%d\n"
                     % (r.sweep_value, r.q25, r.median, r.q75, r.n_failures))


# ---------------------------------------------------------------------------
# Targets and safe arithmetic expressions
# ---------------------------------------------------------------------------

def make_target_body(name: str, d: int, beta: float = 1e-3) -> ConvexBody:
    """Named gauge-parametrized target for fit and sampling experiments."""
    if name.startswith("ball"):
        radius = float(name.split(":")[1]) if ":" in name else 1.0
        return body_from_function(_bodies.ball_gauge(radius), d, GAUGE)
    if name.startswith("ellipsoid"):
        axes = [float(v) for v in name.split(":")[1].split(",")]
        if len(axes) != d:
            raise ValueError(f"ellipsoid needs {d} semi-axes")
        return body_from_function(_bodies.ellipsoid_gauge(axes), d, GAUGE)
    normals, _ = _bodies.polytope_data(name, d)
    net = from_polytope_gauge(normals, beta)
    return body_from_net(net, GAUGE)


_ALLOWED_CALLS = {
    "sin": jnp.sin, "cos": jnp.cos, "tan": jnp.tan, "exp": jnp.exp,
    "log": jnp.log, "sqrt": jnp.sqrt, "abs": jnp.abs, "tanh": jnp.tanh,
}
_ALLOWED_CONSTS = {"pi": math.pi, "e": math.e}
_COORD_NAMES = ("x", "y", "z", "w")


def compile_expression(src: str, d: int) -> Callable:
    """Compile a small arithmetic expression over coordinates to a jax function.

    Allowed: +-*/**, parentheses, sin/cos/tan/exp/log/sqrt/abs/tanh, pi, e,
    coordinates x,y,z,w (or x1..x4), and r for |x|.
    """
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"invalid expression {src!r}: {exc}") from exc

    names: dict[str, int] = {}
    for i in range(d):
        names[_COORD_NAMES[i]] = i
        names[f"x{i + 1}"] = i

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return lambda p: node.value
        if isinstance(node, ast.Name):
            if node.id in names:
                i = names[node.id]
                return lambda p: p[i]
            if node.id in _ALLOWED_CONSTS:
                c = _ALLOWED_CONSTS[node.id]
                return lambda p: c
            if node.id == "r":
                return lambda p: jnp.linalg.norm(p)
            raise ValueError(f"unknown name {node.id!r} in expression")
        if isinstance(node, ast.BinOp):
            lhs, rhs = build(node.left), build(node.right)
            ops = {ast.Add: lambda a, b: a + b, ast.Sub: lambda a, b: a - b,
                   ast.Mult: lambda a, b: a * b, ast.Div: lambda a, b: a / b,
                   ast.Pow: lambda a, b: a ** b}
            if type(node.op) not in ops:
                raise ValueError(f"operator {type(node.op).__name__} not allowed")
            op = ops[type(node.op)]
            return lambda p: op(lhs(p), rhs(p))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = build(node.operand)
            sign = -1.0 if isinstance(node.op, ast.USub) else 1.0
            return lambda p: sign * inner(p)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            if node.func.id not in _ALLOWED_CALLS or node.keywords or len(node.args) != 1:
                raise ValueError(f"call to {node.func.id!r} not allowed")
            fn = _ALLOWED_CALLS[node.func.id]
            arg = build(node.args[0])
            return lambda p: fn(arg(p))
        raise ValueError(f"construct {type(node).__name__} not allowed in expressions")

    return build(tree)
