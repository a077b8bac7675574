"""Convex-body semantics over any sublinear function.

A body is a positively homogeneous function tagged as a gauge or a support
function. Closed-form maps send the unit ball onto the body; Jacobians,
normals, the Weingarten map and pulled-back integrals are all computed by
exact differentiation, so every quantity stays differentiable in the
function's parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import partial
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np
from scipy.spatial import cKDTree

from .autodiff import require_off_origin
from .errors import DegenerateMapError, DomainError, InvalidBodyError
from .net import AnyNet
from .quadrature import BallRule, SphereRule, sphere_rule
from . import bodies as _bodies

GAUGE = "gauge"
SUPPORT = "support"

_DET_TOL = 1e-12


@dataclass(frozen=True)
class ConvexBody:
    """A sublinear function plus the parametrization it is read under."""

    apply_fn: Callable          # (theta, x) -> scalar, 1-homogeneous in x
    theta: np.ndarray
    kind: str                   # GAUGE or SUPPORT
    d: int

    def __post_init__(self):
        if self.kind not in (GAUGE, SUPPORT):
            raise ValueError(f"kind must be {GAUGE!r} or {SUPPORT!r}")

    def fvalue(self, x) -> float:
        return float(self.apply_fn(jnp.asarray(self.theta), jnp.asarray(x, dtype=float)))

    def with_theta(self, theta: np.ndarray) -> "ConvexBody":
        return replace(self, theta=np.asarray(theta, dtype=float))


def body_from_net(net: AnyNet, kind: str) -> ConvexBody:
    return ConvexBody(net.apply_fn, net.theta, kind, net.d)


def body_from_function(fn: Callable, d: int, kind: str,
                       theta: np.ndarray | None = None) -> ConvexBody:
    return ConvexBody(fn, np.zeros(0) if theta is None else theta, kind, d)


def polar_body(body: ConvexBody) -> ConvexBody:
    """Same function, dual reading: the gauge of K is the support of K's polar."""
    return replace(body, kind=SUPPORT if body.kind == GAUGE else GAUGE)


@dataclass(frozen=True)
class BoundaryFrame:
    """First-order data of the boundary map at a sphere point."""

    x: np.ndarray         # point on the reference sphere
    y: np.ndarray         # boundary point of the body
    J: np.ndarray         # Jacobian of the map at x
    jac: float            # |det J|
    surf_jac: float       # surface Jacobian |det J| * |J^{-T} x|
    n: np.ndarray         # outward unit normal at y


# ---------------------------------------------------------------------------
# jax kernels (fn and kind are static so jit caches per function object)
# ---------------------------------------------------------------------------

def _map(fn, kind, theta, x):
    r = jnp.linalg.norm(x)
    if kind == GAUGE:
        return (r / fn(theta, x)) * x
    return r * jax.grad(fn, argnums=1)(theta, x)


def _map_jacobian(fn, kind, theta, x):
    return jax.jacfwd(_map, argnums=3)(fn, kind, theta, x)


def _frame_pieces(fn, kind, theta, x):
    J = _map_jacobian(fn, kind, theta, x)
    det = jnp.linalg.det(J)
    jac = jnp.abs(det)
    cof = jnp.linalg.solve(J.T, x)       # (D phi)^{-T} n_B with n_B(x) = x
    nrm = jnp.linalg.norm(cof)
    return J, jac, jac * nrm, cof / nrm


def _normal_field(fn, kind, theta, x):
    """Unit outward normal extended to R^d minus the origin."""
    J = _map_jacobian(fn, kind, theta, x)
    cof = jnp.linalg.solve(J.T, x)
    return cof / jnp.linalg.norm(cof)


def _householder_tangent(n):
    """Rows 1..d-1 of the reflection sending n to +-e_d: an orthonormal
    basis of the tangent plane. Reflects to -e_d near the n = e_d pole."""
    d = n.shape[0]
    e = jnp.zeros(d).at[d - 1].set(1.0)
    sign = jnp.where(n[d - 1] > 1.0 - 1e-6, 1.0, -1.0)
    v = n + sign * e
    v = v / jnp.linalg.norm(v)
    H = jnp.eye(d) - 2.0 * jnp.outer(v, v)
    return H[: d - 1, :]


def _weingarten(fn, kind, theta, x):
    """Shape operator in the Householder tangent basis at y = phi(x)."""
    G = jax.jacfwd(_normal_field, argnums=3)(fn, kind, theta, x)
    J = _map_jacobian(fn, kind, theta, x)
    Dn = G @ jnp.linalg.inv(J)           # chain rule through phi^{-1}
    n = _normal_field(fn, kind, theta, x)
    Ht = _householder_tangent(n)
    return Ht @ Dn @ Ht.T


def _mean_curvature(fn, kind, theta, x):
    S = _weingarten(fn, kind, theta, x)
    return jnp.trace(S) / (x.shape[0] - 1)


def _gauss_curvature(fn, kind, theta, x):
    return jnp.linalg.det(_weingarten(fn, kind, theta, x))


def _volume(fn, kind, theta, nodes, weights):
    jacs = jax.vmap(lambda p: jnp.abs(jnp.linalg.det(_map_jacobian(fn, kind, theta, p))))(nodes)
    return jnp.sum(weights * jacs)


def _surface_area(fn, kind, theta, nodes, weights):
    sj = jax.vmap(lambda p: _frame_pieces(fn, kind, theta, p)[2])(nodes)
    return jnp.sum(weights * sj)


def _volume_integral(fn, kind, f, theta, nodes, weights):
    def one(p):
        y = _map(fn, kind, theta, p)
        return jnp.abs(jnp.linalg.det(_map_jacobian(fn, kind, theta, p))) * f(y)
    return jnp.sum(weights * jax.vmap(one)(nodes))


def _surface_integral(fn, kind, g, use_normal, theta, nodes, weights):
    def one(p):
        y = _map(fn, kind, theta, p)
        _, _, sj, n = _frame_pieces(fn, kind, theta, p)
        return sj * (g(y, n) if use_normal else g(y))
    return jnp.sum(weights * jax.vmap(one)(nodes))


_jit_map = partial(jax.jit, static_argnums=(0, 1))
map_kernel = _jit_map(_map)
frame_kernel = _jit_map(_frame_pieces)
weingarten_kernel = _jit_map(_weingarten)
mean_curvature_kernel = _jit_map(_mean_curvature)
gauss_curvature_kernel = _jit_map(_gauss_curvature)
volume_kernel = _jit_map(_volume)
surface_area_kernel = _jit_map(_surface_area)
volume_integral_kernel = partial(jax.jit, static_argnums=(0, 1, 2))(_volume_integral)
surface_integral_kernel = partial(jax.jit, static_argnums=(0, 1, 2, 3))(_surface_integral)


# ---------------------------------------------------------------------------
# Public, eager operations
# ---------------------------------------------------------------------------

def _check_body_at(body: ConvexBody, x) -> None:
    val = body.fvalue(x)
    if not math.isfinite(val) or val <= 0.0:
        raise InvalidBodyError(
            f"function is non-positive ({val:.3e}) at {np.asarray(x)}; not a valid body")


def map_point(body: ConvexBody, x) -> np.ndarray:
    """Image of a reference-ball point under the boundary map."""
    x = np.asarray(x, dtype=float)
    if np.linalg.norm(x) == 0.0:
        return np.zeros(body.d)
    require_off_origin(x)
    _check_body_at(body, x)
    return np.asarray(map_kernel(body.apply_fn, body.kind,
                                 jnp.asarray(body.theta), jnp.asarray(x)))


def map_points(body: ConvexBody, xs: np.ndarray) -> np.ndarray:
    th = jnp.asarray(body.theta)
    fn, kind = body.apply_fn, body.kind
    return np.asarray(jax.vmap(lambda p: _map(fn, kind, th, p))(jnp.asarray(xs)))


def inverse_gauge(body: ConvexBody, y) -> np.ndarray:
    """Closed-form inverse (p(y)/|y|) y of the gauge map."""
    if body.kind != GAUGE:
        raise DomainError("closed-form inverse exists only for gauge-parametrized bodies")
    y = np.asarray(y, dtype=float)
    require_off_origin(y)
    return float(body.fvalue(y)) / float(np.linalg.norm(y)) * y


def boundary_frame(body: ConvexBody, x) -> BoundaryFrame:
    x = np.asarray(x, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > 1e-10:
        raise DomainError("boundary_frame expects a unit vector on the reference sphere")
    _check_body_at(body, x)
    th = jnp.asarray(body.theta)
    J, jac, sj, n = frame_kernel(body.apply_fn, body.kind, th, jnp.asarray(x))
    jac = float(jac)
    if not math.isfinite(jac) or jac < _DET_TOL:
        raise DegenerateMapError(f"|det D phi| = {jac:.3e} at x={x}")
    y = np.asarray(map_kernel(body.apply_fn, body.kind, th, jnp.asarray(x)))
    return BoundaryFrame(x, y, np.asarray(J), jac, float(sj), np.asarray(n))


def weingarten(body: ConvexBody, x) -> np.ndarray:
    boundary_frame(body, x)  # runs the validity checks
    S = weingarten_kernel(body.apply_fn, body.kind, jnp.asarray(body.theta), jnp.asarray(x))
    return np.asarray(S)


def mean_curvature(body: ConvexBody, x) -> float:
    S = weingarten(body, x)
    return float(np.trace(S) / (body.d - 1))


def gaussian_curvature(body: ConvexBody, x) -> float:
    return float(np.linalg.det(weingarten(body, x)))


def volume(body: ConvexBody, rule: BallRule) -> float:
    return float(volume_kernel(body.apply_fn, body.kind, jnp.asarray(body.theta),
                               jnp.asarray(rule.nodes), jnp.asarray(rule.weights)))


def surface_area(body: ConvexBody, rule: SphereRule) -> float:
    return float(surface_area_kernel(body.apply_fn, body.kind, jnp.asarray(body.theta),
                                     jnp.asarray(rule.nodes), jnp.asarray(rule.weights)))


def volume_integral(body: ConvexBody, f: Callable, rule: BallRule) -> float:
    """Integral of f over the body, pulled back to the reference ball."""
    v = volume_integral_kernel(body.apply_fn, body.kind, f, jnp.asarray(body.theta),
                               jnp.asarray(rule.nodes), jnp.asarray(rule.weights))
    if not math.isfinite(float(v)):
        raise DomainError("volume integrand produced non-finite values")
    return float(v)


def surface_integral(body: ConvexBody, g: Callable, rule: SphereRule,
                     use_normal: bool = False) -> float:
    """Integral of g over the boundary; g(y) or g(y, n) when use_normal."""
    v = surface_integral_kernel(body.apply_fn, body.kind, g, use_normal,
                                jnp.asarray(body.theta),
                                jnp.asarray(rule.nodes), jnp.asarray(rule.weights))
    if not math.isfinite(float(v)):
        raise DomainError("surface integrand produced non-finite values")
    return float(v)


def hausdorff_estimate(body_a: ConvexBody, body_b: ConvexBody, n: int = 10000,
                       seed: int = 0) -> float:
    """Hausdorff distance estimate from n sphere samples.

    For two gauge bodies this is sup |1/p_a - 1/p_b|, an upper bound through
    the radial functions. Otherwise it is the symmetric discrete Hausdorff
    distance of the mapped boundary clouds, a lower-biased estimate.
    """
    if body_a.d != body_b.d:
        raise ValueError("bodies live in different dimensions")
    rule = sphere_rule(body_a.d, n, seed=seed)
    if body_a.kind == GAUGE and body_b.kind == GAUGE:
        pa = _sphere_values(body_a, rule.nodes)
        pb = _sphere_values(body_b, rule.nodes)
        if pa.min() <= 0 or pb.min() <= 0:
            raise InvalidBodyError("gauge function non-positive on the sphere")
        return float(np.abs(1.0 / pa - 1.0 / pb).max())
    ya = map_points(body_a, rule.nodes)
    yb = map_points(body_b, rule.nodes)
    da = cKDTree(yb).query(ya)[0].max()
    db = cKDTree(ya).query(yb)[0].max()
    return float(max(da, db))


def _sphere_values(body: ConvexBody, nodes: np.ndarray) -> np.ndarray:
    th = jnp.asarray(body.theta)
    fn = body.apply_fn
    return np.asarray(jax.vmap(lambda u: fn(th, u))(jnp.asarray(nodes)))


def radial_volume_gauge(body: ConvexBody, rule: SphereRule) -> float:
    """Volume of a gauge body by the radial formula (1/d) int rho^d dsigma.

    Independent of the Jacobian pullback; used as a cross-check.
    """
    if body.kind != GAUGE:
        raise DomainError("radial volume needs a gauge body")
    p = _sphere_values(body, rule.nodes)
    return float(np.sum(rule.weights * (1.0 / p) ** body.d) / body.d)


# ---------------------------------------------------------------------------
# Shape export
# ---------------------------------------------------------------------------

def boundary_polyline(body: ConvexBody, n: int = 256) -> np.ndarray:
    """Closed 2D boundary polyline at equispaced reference angles."""
    if body.d != 2:
        raise DomainError("polyline export is for 2D bodies")
    rule = sphere_rule(2, n)
    return map_points(body, rule.nodes)


def export_csv(body: ConvexBody, path, n: int = 256) -> None:
    pts = boundary_polyline(body, n)
    with open(path, "w") as fh:
        fh.write("x,y\n")
        for p in pts:
            fh.write("%.17g,%.17g\n" % (p[0], p[1]))


def export_svg(body: ConvexBody, path, n: int = 256, size: int = 512) -> None:
    pts = boundary_polyline(body, n)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    margin = 0.05 * span
    scale = size / (span + 2 * margin)

    def to_px(p):
        q = (p - lo + margin) * scale
        return q[0], size - q[1]  # flip y for svg coordinates

    cmds = ["M %.6f %.6f" % to_px(pts[0])]
    cmds += ["L %.6f %.6f" % to_px(p) for p in pts[1:]]
    cmds.append("Z")
    with open(path, "w") as fh:
        fh.write('<svg xmlns="http://www.w3.org/2000/svg" '
                 f'width="{size}" height="{size}" viewBox="0 0 {size} {size}">\n')
        fh.write('  <path d="%s" fill="none" stroke="black" stroke-width="1.5"/>\n'
                 % " ".join(cmds))
        fh.write("</svg>\n")


def uv_sphere_grid(rows: int, cols: int) -> np.ndarray:
    """(rows*cols, 3) unit vectors on a latitude-longitude grid, poles included."""
    th = np.linspace(0.0, math.pi, rows)
    ph = 2.0 * math.pi * np.arange(cols) / cols
    T, P = np.meshgrid(th, ph, indexing="ij")
    return np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)],
                    axis=-1).reshape(-1, 3)


def export_obj(body: ConvexBody, path, rows: int = 64, cols: int = 128) -> None:
    """Watertight UV-grid mesh with per-vertex normals."""
    if body.d != 3:
        raise DomainError("OBJ export is for 3D bodies")
    grid = uv_sphere_grid(rows, cols)
    verts = map_points(body, grid)
    th = jnp.asarray(body.theta)
    fn, kind = body.apply_fn, body.kind
    normals = np.asarray(jax.vmap(lambda p: _normal_field(fn, kind, th, p))(jnp.asarray(grid)))
    lines = ["# sublinet boundary mesh"]
    for v in verts:
        lines.append("v %.17g %.17g %.17g" % (v[0], v[1], v[2]))
    for nv in normals:
        lines.append("vn %.17g %.17g %.17g" % (nv[0], nv[1], nv[2]))
    idx = lambda i, j: i * cols + (j % cols) + 1
    for i in range(rows - 1):
        for j in range(cols):
            a, b = idx(i, j), idx(i + 1, j)
            c, e = idx(i + 1, j + 1), idx(i, j + 1)
            if i > 0:  # top row is the pole point repeated
                lines.append(f"f {a}//{a} {b}//{b} {e}//{e}")
            if i < rows - 2:
                lines.append(f"f {b}//{b} {c}//{c} {e}//{e}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
