"""Mesh-free solvers on the pulled-back reference ball.

Two routes to the Poisson problem with zero Dirichlet data:

* an RBF-Galerkin discretization with a boundary penalty, valid for any
  right-hand side, assembled entirely through the body's boundary map so
  the solution stays differentiable in the body parameters;
* the method of fundamental solutions for the torsion equation (rhs = 1),
  which is spectrally accurate and comes with an a-posteriori sup-norm
  residual through the maximum principle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .errors import ConvergenceError, DomainError, SolverError
from .geometry import (GAUGE, ConvexBody, _frame_pieces, _map, _map_jacobian,
                       boundary_frame)
from .quadrature import BallRule, SphereRule, ball_volume, sphere_rule

_SQRT_GUARD = 1e-300  # keeps |x| differentiable at coincident points


# ---------------------------------------------------------------------------
# Wendland C4 kernel (positive definite for d <= 3)
# ---------------------------------------------------------------------------

def wendland_c4(q):
    """psi(q) = (1-q)_+^6 (35 q^2 + 18 q + 3); support radius 1."""
    w = jnp.maximum(0.0, 1.0 - q)
    return w ** 6 * (35.0 * q ** 2 + 18.0 * q + 3.0)


@dataclass(frozen=True)
class RbfBasis:
    """Wendland centers in the closed unit ball plus a low-degree monomial tail."""

    centers: np.ndarray   # (n_c, d)
    rho: float            # kernel support radius
    poly_degree: int      # -1 none, 0 constant, 1 affine

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    @property
    def n_basis(self) -> int:
        extra = {-1: 0, 0: 1, 1: 1 + self.d}[self.poly_degree]
        return self.n_centers + extra


def halton_ball_points(d: int, n: int, radius: float = 0.95) -> np.ndarray:
    """First n unscrambled Halton points inside the ball of given radius."""
    sampler = qmc.Halton(d=d, scramble=False)
    pts = []
    while len(pts) < n:
        block = 2.0 * sampler.random(4 * n) - 1.0
        for p in block:
            if np.linalg.norm(p) <= radius:
                pts.append(p)
                if len(pts) == n:
                    break
    return np.array(pts)


DEFAULT_RBF_RHO = {2: 0.45, 3: 0.85}  # fraction of the reference-ball radius


def build_rbf_basis(d: int, n_centers: int, boundary_nodes: np.ndarray,
                    boundary_fraction: float = 0.2, rho: float | None = None,
                    poly_degree: int = 1) -> RbfBasis:
    """Interior Halton points plus a ring of boundary nodes.

    The support radius is a fixed fraction of the unit ball: shrinking it
    with the center spacing makes the error saturate against the fixed
    quadrature, while a fixed radius converges monotonically under center
    refinement at the cost of conditioning.
    """
    if rho is None:
        if d not in DEFAULT_RBF_RHO:
            raise ValueError(f"no default kernel radius for d={d}; pass rho explicitly")
        rho = DEFAULT_RBF_RHO[d]
    n_boundary = max(4, int(round(boundary_fraction * n_centers)))
    stride = max(1, boundary_nodes.shape[0] // n_boundary)
    ring = boundary_nodes[::stride][:n_boundary]
    interior = halton_ball_points(d, n_centers - ring.shape[0])
    centers = np.vstack([interior, ring])
    dists, _ = cKDTree(centers).query(centers, k=2)
    min_sep = float(dists[:, 1].min())
    if min_sep <= 1e-6:
        raise ValueError(f"degenerate center set: min separation {min_sep:.2e}")
    return RbfBasis(centers, rho, poly_degree)


def basis_values(basis: RbfBasis, pts: np.ndarray) -> np.ndarray:
    """(n_pts, n_basis) matrix of basis values."""
    diff = pts[:, None, :] - basis.centers[None, :, :]
    r = np.sqrt(np.sum(diff ** 2, axis=-1))
    vals = np.asarray(wendland_c4(jnp.asarray(r / basis.rho)))
    cols = [vals]
    if basis.poly_degree >= 0:
        cols.append(np.ones((pts.shape[0], 1)))
    if basis.poly_degree >= 1:
        cols.append(pts)
    return np.concatenate(cols, axis=1)


def basis_gradients(basis: RbfBasis, pts: np.ndarray) -> np.ndarray:
    """(n_pts, n_basis, d) array of basis gradients."""
    def one(x):
        def phi(p):
            r = jnp.sqrt(jnp.sum((p - jnp.asarray(basis.centers)) ** 2, axis=-1)
                         + _SQRT_GUARD)
            return wendland_c4(r / basis.rho)
        return jax.jacfwd(phi)(x)
    grads = np.asarray(jax.vmap(one)(jnp.asarray(pts)))
    parts = [grads]
    if basis.poly_degree >= 0:
        parts.append(np.zeros((pts.shape[0], 1, basis.d)))
    if basis.poly_degree >= 1:
        parts.append(np.broadcast_to(np.eye(basis.d), (pts.shape[0], basis.d, basis.d)))
    return np.concatenate(parts, axis=1)


@dataclass(frozen=True)
class GalerkinPrecompute:
    """Body-independent pieces of the Galerkin system."""

    basis: RbfBasis
    ball: BallRule
    sphere: SphereRule
    B_val: np.ndarray       # basis values at ball nodes
    B_grad: np.ndarray      # basis gradients at ball nodes
    boundary_mass: np.ndarray


def galerkin_precompute(basis: RbfBasis, ball: BallRule,
                        sphere: SphereRule) -> GalerkinPrecompute:
    B_val = basis_values(basis, ball.nodes)
    B_grad = basis_gradients(basis, ball.nodes)
    S_val = basis_values(basis, sphere.nodes)
    Mb = (S_val * sphere.weights[:, None]).T @ S_val
    return GalerkinPrecompute(basis, ball, sphere, B_val, B_grad, Mb)


def _galerkin_K_load(fn, kind, f_fn, theta, pre_Bval, pre_Bgrad, pre_Mb,
                     ball_nodes, ball_w, alpha):
    """Stiffness-plus-penalty matrix and load vector; differentiable in theta."""
    def node(x):
        J = _map_jacobian(fn, kind, theta, x)
        det = jnp.abs(jnp.linalg.det(J))
        Jinv = jnp.linalg.inv(J)
        A = det * (Jinv @ Jinv.T)
        L = jnp.linalg.cholesky(A)
        y = _map(fn, kind, theta, x)
        return L, det, f_fn(y)

    Ls, dets, fvals = jax.vmap(node)(ball_nodes)
    P = jnp.einsum("qid,qde->qie", pre_Bgrad, Ls) * jnp.sqrt(ball_w)[:, None, None]
    nb = pre_Bgrad.shape[1]
    P2 = jnp.transpose(P, (1, 0, 2)).reshape(nb, -1)
    K = P2 @ P2.T + alpha * pre_Mb
    K = 0.5 * (K + K.T)
    load = pre_Bval.T @ (ball_w * dets * fvals)
    return K, load


galerkin_K_load_kernel = partial(jax.jit, static_argnums=(0, 1, 2))(_galerkin_K_load)


def _galerkin_solve(fn, kind, f_fn, theta, pre_Bval, pre_Bgrad, pre_Mb,
                    ball_nodes, ball_w, alpha):
    K, load = _galerkin_K_load(fn, kind, f_fn, theta, pre_Bval, pre_Bgrad, pre_Mb,
                               ball_nodes, ball_w, alpha)
    return jnp.linalg.solve(K, load)


def _galerkin_volume_integral(fn, kind, f_fn, theta, pre_Bval, pre_Bgrad, pre_Mb,
                              ball_nodes, ball_w, alpha):
    """int_Omega u dx for the Galerkin solution; the Poisson objective."""
    u_bar = _galerkin_solve(fn, kind, f_fn, theta, pre_Bval, pre_Bgrad, pre_Mb,
                            ball_nodes, ball_w, alpha)
    dets = jax.vmap(lambda x: jnp.abs(jnp.linalg.det(
        _map_jacobian(fn, kind, theta, x))))(ball_nodes)
    return jnp.sum(ball_w * dets * (pre_Bval @ u_bar))


galerkin_objective_kernel = partial(jax.jit, static_argnums=(0, 1, 2))(_galerkin_volume_integral)


@dataclass(frozen=True)
class GalerkinSystem:
    K: np.ndarray
    load: np.ndarray
    alpha: float
    pre: GalerkinPrecompute
    body: ConvexBody


@dataclass(frozen=True)
class PdeSolution:
    """Coefficients over a basis, with evaluation and boundary derivatives."""

    kind: str                       # "galerkin" or "mfs"
    body: ConvexBody
    coeffs: np.ndarray
    pre: GalerkinPrecompute | None = None
    model: "MfsModel | None" = None

    def reference_eval(self, x) -> float:
        """Pulled-back solution on the reference ball (Galerkin only)."""
        if self.kind != "galerkin":
            raise DomainError("reference_eval is for Galerkin solutions")
        return float(basis_values(self.pre.basis, np.atleast_2d(x)) @ self.coeffs)

    def eval(self, y) -> float:
        if self.kind == "mfs":
            return torsion_eval(self.model, y)
        x = _pullback_point(self.body, y)
        return self.reference_eval(x)


def _pullback_point(body: ConvexBody, y) -> np.ndarray:
    from .geometry import inverse_gauge
    if body.kind != GAUGE:
        raise DomainError("evaluation at physical points needs a gauge body")
    y = np.asarray(y, dtype=float)
    if np.linalg.norm(y) == 0.0:
        return np.zeros(body.d)
    x = inverse_gauge(body, y)
    if np.linalg.norm(x) > 1.0 + 1e-9:
        raise DomainError(f"point {y} lies outside the body")
    return x


def assemble_galerkin(body: ConvexBody, f_fn: Callable, alpha: float,
                      pre: GalerkinPrecompute) -> GalerkinSystem:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    K, load = galerkin_K_load_kernel(body.apply_fn, body.kind, f_fn,
                                     jnp.asarray(body.theta),
                                     jnp.asarray(pre.B_val), jnp.asarray(pre.B_grad),
                                     jnp.asarray(pre.boundary_mass),
                                     jnp.asarray(pre.ball.nodes),
                                     jnp.asarray(pre.ball.weights), alpha)
    K = np.asarray(K)
    load = np.asarray(load)
    if not np.all(np.isfinite(K)):
        raise SolverError("Galerkin matrix has non-finite entries "
                          "(degenerate map at a quadrature node)")
    return GalerkinSystem(K, load, alpha, pre, body)


def solve_galerkin(system: GalerkinSystem) -> PdeSolution:
    try:
        coeffs = np.linalg.solve(system.K, system.load)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"Galerkin solve failed: {exc}",
                          condition_estimate=float(np.linalg.cond(system.K))) from exc
    if not np.all(np.isfinite(coeffs)):
        raise SolverError("Galerkin solution is non-finite",
                          condition_estimate=float(np.linalg.cond(system.K)))
    return PdeSolution("galerkin", system.body, coeffs, pre=system.pre)


def galerkin_boundary_trace_norm(sol: PdeSolution) -> float:
    """L2 norm of the pulled-back solution over the reference sphere."""
    pre = sol.pre
    vals = basis_values(pre.basis, pre.sphere.nodes) @ sol.coeffs
    return float(np.sqrt(np.sum(pre.sphere.weights * vals ** 2)))


# ---------------------------------------------------------------------------
# Method of fundamental solutions for the torsion problem
# ---------------------------------------------------------------------------

def make_fundamental_solution(d: int) -> Callable:
    """Free-space solution of -Laplace psi = delta_0 in R^d."""
    if d == 2:
        def psi(r):
            return -jnp.log(r) / (2.0 * math.pi)
    else:
        c = 1.0 / (d * (d - 2) * ball_volume(d))

        def psi(r):
            return c * r ** (2 - d)
    return psi


def _mfs_sources(fn, kind, theta, src_dirs, eps):
    if kind == GAUGE:
        # scaling the reference point scales the map: exactly gauge = 1+eps
        return jax.vmap(lambda x: _map(fn, kind, theta, (1.0 + eps) * x))(src_dirs)
    def one(x):
        y = _map(fn, kind, theta, x)
        _, _, _, n = _frame_pieces(fn, kind, theta, x)
        return y + eps * n
    return jax.vmap(one)(src_dirs)


def _mfs_fit(fn, kind, theta, src_dirs, fit_dirs, fit_w, eps, lam_rel):
    """Weighted ridge least squares for the harmonic part of the torsion function.

    Boundary data is x1^2/2; rows carry sqrt(quadrature x surface Jacobian)
    weights so the discrete problem approximates the boundary L2 fit.
    """
    d = src_dirs.shape[1]
    psi = make_fundamental_solution(d)
    sources = _mfs_sources(fn, kind, theta, src_dirs, eps)

    def fit_row(x):
        y = _map(fn, kind, theta, x)
        _, _, sj, _ = _frame_pieces(fn, kind, theta, x)
        return y, sj
    ys, sjs = jax.vmap(fit_row)(fit_dirs)

    r = jnp.sqrt(jnp.sum((ys[:, None, :] - sources[None, :, :]) ** 2, axis=-1))
    A = psi(r)
    g = 0.5 * ys[:, 0] ** 2
    w = jnp.sqrt(fit_w * sjs)
    Aw = A * w[:, None]
    gw = g * w

    n = A.shape[1]
    lam = lam_rel * jnp.sum(Aw ** 2) / n
    A_aug = jnp.vstack([Aw, jnp.sqrt(lam) * jnp.eye(n)])
    g_aug = jnp.concatenate([gw, jnp.zeros(n)])
    Q, R = jnp.linalg.qr(A_aug)
    coeffs = jax.scipy.linalg.solve_triangular(R, Q.T @ g_aug, lower=False)
    return coeffs, sources


mfs_fit_kernel = partial(jax.jit, static_argnums=(0, 1))(_mfs_fit)


def _mfs_harmonic(coeffs, sources, y):
    psi = make_fundamental_solution(sources.shape[1])
    r = jnp.sqrt(jnp.sum((y - sources) ** 2, axis=-1))
    return jnp.dot(coeffs, psi(r))


def _mfs_residual(fn, kind, theta, coeffs, sources, check_dirs):
    """Sup-norm boundary defect; bounds the interior error by the maximum principle."""
    def one(x):
        y = _map(fn, kind, theta, x)
        return jnp.abs(_mfs_harmonic(coeffs, sources, y) - 0.5 * y[0] ** 2)
    return jnp.max(jax.vmap(one)(check_dirs))


mfs_residual_kernel = partial(jax.jit, static_argnums=(0, 1))(_mfs_residual)


@dataclass(frozen=True)
class MfsModel:
    sources: np.ndarray
    coeffs: np.ndarray
    eps: float
    residual: float
    n_sources: int
    body: ConvexBody

    @property
    def d(self) -> int:
        return self.sources.shape[1]


@dataclass(frozen=True)
class MfsConfig:
    n0: int = 64
    eps0: float = 0.3
    tol: float = 1e-5
    max_rounds: int = 6
    fit_factor: int = 8     # boundary fit samples per source
    check_factor: int = 32  # residual samples per source
    lam_rel: float = 1e-14


def mfs_direction_sets(d: int, n: int, cfg: MfsConfig):
    src = sphere_rule(d, n)
    fit = sphere_rule(d, cfg.fit_factor * n)
    check = sphere_rule(d, cfg.check_factor * n)
    return src, fit, check


def solve_torsion_mfs(body: ConvexBody, n0: int = 64, eps0: float = 0.3,
                      tol: float = 1e-5, max_rounds: int = 6,
                      cfg: MfsConfig | None = None) -> MfsModel:
    """Adaptive MFS solve: double the sources and shrink eps until the
    a-posteriori boundary residual is below tol."""
    if cfg is None:
        cfg = MfsConfig(n0=n0, eps0=eps0, tol=tol, max_rounds=max_rounds)
    if cfg.tol <= 0:
        raise ValueError("tol must be positive")
    th = jnp.asarray(body.theta)
    best = None
    n, eps = cfg.n0, cfg.eps0
    for _ in range(cfg.max_rounds):
        src, fit, check = mfs_direction_sets(body.d, n, cfg)
        coeffs, sources = mfs_fit_kernel(body.apply_fn, body.kind, th,
                                         jnp.asarray(src.nodes), jnp.asarray(fit.nodes),
                                         jnp.asarray(fit.weights), eps, cfg.lam_rel)
        res = float(mfs_residual_kernel(body.apply_fn, body.kind, th, coeffs, sources,
                                        jnp.asarray(check.nodes)))
        model = MfsModel(np.asarray(sources), np.asarray(coeffs), eps, res, n, body)
        if best is None or res < best.residual:
            best = model
        if res <= cfg.tol:
            return model
        n *= 2
        eps *= 0.7
    raise ConvergenceError(
        f"MFS residual {best.residual:.3e} still above tol {cfg.tol:g} "
        f"after {cfg.max_rounds} rounds", best=best)


def torsion_eval(model: MfsModel, y) -> float:
    """u(y) = harmonic part minus y1^2/2."""
    y = np.asarray(y, dtype=float)
    if model.body.kind == GAUGE and model.body.fvalue(y) > 1.0 + 1e-9:
        raise DomainError(f"point {y} lies outside the body")
    val = float(_mfs_harmonic(jnp.asarray(model.coeffs), jnp.asarray(model.sources),
                              jnp.asarray(y)))
    return val - 0.5 * float(y[0]) ** 2


def torsion_normal_derivative(model: MfsModel, body: ConvexBody, x) -> float:
    """Outward normal derivative of the torsion function at y = phi(x)."""
    frame = boundary_frame(body, x)
    grad_h = jax.grad(lambda p: _mfs_harmonic(jnp.asarray(model.coeffs),
                                              jnp.asarray(model.sources), p))(
        jnp.asarray(frame.y))
    grad_u = np.array(grad_h)
    grad_u[0] -= frame.y[0]
    return float(grad_u @ frame.n)


def torsional_rigidity(body: ConvexBody, solution: MfsModel | PdeSolution,
                       rule: BallRule) -> float:
    """T = int_Omega u, pulled back to the reference ball."""
    th = jnp.asarray(body.theta)
    fn, kind = body.apply_fn, body.kind
    if isinstance(solution, MfsModel):
        coeffs = jnp.asarray(solution.coeffs)
        sources = jnp.asarray(solution.sources)

        def u_ref(x):
            y = _map(fn, kind, th, x)
            return _mfs_harmonic(coeffs, sources, y) - 0.5 * y[0] ** 2
    elif isinstance(solution, PdeSolution) and solution.kind == "galerkin":
        if rule is solution.pre.ball:
            vals = solution.pre.B_val @ solution.coeffs
        else:
            vals = basis_values(solution.pre.basis, rule.nodes) @ solution.coeffs
        dets = jax.vmap(lambda x: jnp.abs(jnp.linalg.det(
            _map_jacobian(fn, kind, th, x))))(jnp.asarray(rule.nodes))
        return float(jnp.sum(jnp.asarray(rule.weights) * dets * jnp.asarray(vals)))
    else:
        raise TypeError("solution must be an MfsModel or a Galerkin PdeSolution")

    def one(x):
        det = jnp.abs(jnp.linalg.det(_map_jacobian(fn, kind, th, x)))
        return det * u_ref(x)
    vals = jax.vmap(one)(jnp.asarray(rule.nodes))
    return float(jnp.sum(jnp.asarray(rule.weights) * vals))


# differentiable building blocks reused by the shape objectives ---------------

def mfs_torsion_pieces(fn, kind, theta, src_dirs, fit_dirs, fit_w, eps, lam_rel):
    """(coeffs, sources) of the MFS fit as traced values inside a loss."""
    return _mfs_fit(fn, kind, theta, src_dirs, fit_dirs, fit_w, eps, lam_rel)


def mfs_normal_derivative_expr(fn, kind, theta, coeffs, sources, x_star):
    y = _map(fn, kind, theta, x_star)
    _, _, _, n = _frame_pieces(fn, kind, theta, x_star)
    grad_h = jax.grad(lambda p: _mfs_harmonic(coeffs, sources, p))(y)
    grad_u = grad_h - jnp.zeros_like(y).at[0].set(y[0])
    return jnp.dot(grad_u, n)


def mfs_rigidity_expr(fn, kind, theta, coeffs, sources, ball_nodes, ball_w):
    def one(x):
        y = _map(fn, kind, theta, x)
        det = jnp.abs(jnp.linalg.det(_map_jacobian(fn, kind, theta, x)))
        return det * (_mfs_harmonic(coeffs, sources, y) - 0.5 * y[0] ** 2)
    return jnp.sum(ball_w * jax.vmap(one)(ball_nodes))
