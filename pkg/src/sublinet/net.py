"""Sublinear log-sum-exp networks.

``p(x) = beta * |x| * LSE(W^T x/|x|)`` is positively homogeneous and convex
by construction, so it serves simultaneously as a gauge and as a support
function of a convex body. beta is stored through its logarithm ``s`` so the
parameter vector is unconstrained.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from .autodiff import directional_third, require_off_origin
from .errors import DomainError, InitializationError
from .quadrature import SphereRule

DEFAULT_DIRECTIONS = {2: 64, 3: 128, 4: 128}

_FMT = "%.17g"  # exact decimal round-trip for doubles


def lse_apply(theta: jnp.ndarray, x: jnp.ndarray) -> jnp.ndarray:
    """Evaluate the network from its flat parameter vector.

    theta = (s, W row-major); shapes are inferred, so one traced function
    covers every (d, m).
    """
    d = x.shape[-1]
    m = (theta.shape[-1] - 1) // d
    s = theta[0]
    W = theta[1:].reshape(d, m)
    r = jnp.linalg.norm(x)
    u = x / r
    return jnp.exp(s) * r * jax.scipy.special.logsumexp(W.T @ u)


def make_symmetrized_apply(group: np.ndarray) -> Callable:
    """Orbit average of ``lse_apply`` over a finite matrix group."""
    G = jnp.asarray(group, dtype=jnp.float64)

    def apply(theta: jnp.ndarray, x: jnp.ndarray) -> jnp.ndarray:
        vals = jax.vmap(lambda g: lse_apply(theta, g @ x))(G)
        return jnp.mean(vals)

    return apply


def flatten_params(s: float, W: np.ndarray) -> np.ndarray:
    return np.concatenate([[float(s)], np.asarray(W, dtype=float).ravel()])


def unflatten_params(theta: np.ndarray, d: int) -> tuple[float, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    if (theta.size - 1) % d != 0:
        raise ValueError(f"parameter vector of length {theta.size} does not match d={d}")
    m = (theta.size - 1) // d
    return float(theta[0]), theta[1:].reshape(d, m)


class _EvalMixin:
    """Shared pointwise evaluation for plain and symmetrized nets."""

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError("non-finite input")
        if np.linalg.norm(x) == 0.0:
            return 0.0  # homogeneous extension; no derivatives here
        return float(self.apply_fn(jnp.asarray(self.theta), jnp.asarray(x)))

    def gradient(self, x) -> np.ndarray:
        require_off_origin(x)
        return np.asarray(jax.grad(self.apply_fn, argnums=1)(
            jnp.asarray(self.theta), jnp.asarray(x, dtype=float)))

    def hessian(self, x) -> np.ndarray:
        require_off_origin(x)
        return np.asarray(jax.hessian(self.apply_fn, argnums=1)(
            jnp.asarray(self.theta), jnp.asarray(x, dtype=float)))

    def third_directional(self, x, v1, v2) -> np.ndarray:
        require_off_origin(x)
        th = jnp.asarray(self.theta)
        return directional_third(lambda p: self.apply_fn(th, p), x, v1, v2)


@dataclass(frozen=True)
class SublinearNet(_EvalMixin):
    """Parameters of the log-sum-exp network: s = log(beta) and W (d x m)."""

    s: float
    W: np.ndarray

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.W.shape[1]

    @property
    def beta(self) -> float:
        return math.exp(self.s)

    @property
    def theta(self) -> np.ndarray:
        return flatten_params(self.s, self.W)

    @property
    def apply_fn(self) -> Callable:
        return lse_apply

    def with_theta(self, theta: np.ndarray) -> "SublinearNet":
        s, W = unflatten_params(theta, self.d)
        return SublinearNet(s, W)


@dataclass(frozen=True)
class SymmetryGroup:
    """Finite group of orthogonal matrices, validated on construction."""

    elements: np.ndarray  # (k, d, d)

    def __post_init__(self):
        G = np.asarray(self.elements, dtype=float)
        object.__setattr__(self, "elements", G)
        k, d, d2 = G.shape
        if d != d2:
            raise ValueError("group elements must be square matrices")
        eye = np.eye(d)
        if not any(np.allclose(g, eye, atol=1e-12) for g in G):
            raise ValueError("group must contain the identity")
        for g in G:
            if np.abs(g.T @ g - eye).max() > 1e-12:
                raise ValueError("group element is not orthogonal to 1e-12")
        for g in G:
            for h in G:
                prod = g @ h
                if min(np.abs(prod - e).max() for e in G) > 1e-12:
                    raise ValueError("group is not closed under multiplication")

    @property
    def order(self) -> int:
        return self.elements.shape[0]

    @property
    def d(self) -> int:
        return self.elements.shape[1]


def rotation_group(n: int, d: int = 2) -> SymmetryGroup:
    """Cyclic group of rotations by 2*pi/n (about the last axis when d=3)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    mats = []
    for k in range(n):
        a = 2.0 * math.pi * k / n
        R2 = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        if d == 2:
            mats.append(R2)
        elif d == 3:
            R = np.eye(3)
            R[:2, :2] = R2
            mats.append(R)
        else:
            raise ValueError("rotation_group supports d in {2, 3}")
    return SymmetryGroup(np.array(mats))


@dataclass(frozen=True)
class SymmetrizedNet(_EvalMixin):
    """Frame-averaged net: the orbit mean of the base net over a group."""

    base: SublinearNet
    group: SymmetryGroup

    def __post_init__(self):
        object.__setattr__(self, "_apply", make_symmetrized_apply(self.group.elements))

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def theta(self) -> np.ndarray:
        return self.base.theta

    @property
    def apply_fn(self) -> Callable:
        return self._apply

    def with_theta(self, theta: np.ndarray) -> "SymmetrizedNet":
        return SymmetrizedNet(self.base.with_theta(theta), self.group)


AnyNet = SublinearNet | SymmetrizedNet


def from_polytope_support(vertices: np.ndarray, beta: float) -> SublinearNet:
    """Net whose value approximates the support function max_i v_i . x.

    The columns of W are the vertices scaled by 1/beta; the sup error on the
    sphere is at most beta * log(m).
    """
    V = np.atleast_2d(np.asarray(vertices, dtype=float))
    if beta <= 0:
        raise ValueError("beta must be positive")
    return SublinearNet(math.log(beta), V.T / beta)


def from_polytope_gauge(normals: np.ndarray, beta: float) -> SublinearNet:
    """Net approximating the gauge max_i w_i . x of {x : w_i . x <= 1}."""
    return from_polytope_support(normals, beta)


def random_net(d: int, m: int | None = None, seed: int = 0,
               sphere: SphereRule | None = None) -> SublinearNet:
    """Random initialization: unit-sphere direction columns, beta = 1.

    When a sphere rule is given the scale is normalized so the starting body
    is close to the unit ball.
    """
    if m is None:
        m = DEFAULT_DIRECTIONS[d]
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((d, m))
    W /= np.linalg.norm(W, axis=0, keepdims=True)
    net = SublinearNet(0.0, W)
    if sphere is not None:
        net = normalize_scale(net, sphere)
    return net


def sphere_values(net: AnyNet, rule: SphereRule) -> np.ndarray:
    """Vectorized evaluation of the net at every rule node."""
    th = jnp.asarray(net.theta)
    fn = net.apply_fn
    return np.asarray(jax.vmap(lambda u: fn(th, u))(jnp.asarray(rule.nodes)))


def validate_positive(net: AnyNet, rule: SphereRule, eps: float) -> bool:
    """True iff the minimum of the net over the rule nodes is >= eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return bool(sphere_values(net, rule).min() >= eps)


def normalize_scale(net: AnyNet, rule: SphereRule) -> AnyNet:
    """Rescale beta so the quadrature mean over the sphere equals 1."""
    vals = sphere_values(net, rule)
    mean = float(np.sum(rule.weights * vals) / np.sum(rule.weights))
    if mean <= 0.0:
        raise InitializationError(f"sphere mean of the net is {mean:.3e}; cannot normalize")
    shift = math.log(mean)
    if isinstance(net, SymmetrizedNet):
        return SymmetrizedNet(SublinearNet(net.base.s - shift, net.base.W), net.group)
    return SublinearNet(net.s - shift, net.W)


# ---------------------------------------------------------------------------
# Serialization: plain text, exact decimal round-trip
# ---------------------------------------------------------------------------

def _write_matrix(out: io.StringIO, M: np.ndarray):
    for row in np.atleast_2d(M):
        out.write(" ".join(_FMT % v for v in row) + "\n")


def dumps_net(net: AnyNet) -> str:
    base = net.base if isinstance(net, SymmetrizedNet) else net
    out = io.StringIO()
    out.write("sublinet 1\n")
    out.write(f"d {base.d}\n")
    out.write(f"m {base.m}\n")
    out.write(("s " + _FMT + "\n") % base.s)
    out.write("W\n")
    _write_matrix(out, base.W)
    if isinstance(net, SymmetrizedNet):
        out.write(f"group {net.group.order}\n")
        for g in net.group.elements:
            _write_matrix(out, g)
    return out.getvalue()


def loads_net(text: str) -> AnyNet:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split() != ["sublinet", "1"]:
        raise ValueError("not a sublinet net file")
    d = int(lines[1].split()[1])
    m = int(lines[2].split()[1])
    s = float(lines[3].split()[1])
    if lines[4].strip() != "W":
        raise ValueError("malformed net file: expected W block")
    W = np.array([[float(v) for v in lines[5 + i].split()] for i in range(d)])
    if W.shape != (d, m):
        raise ValueError(f"W block has shape {W.shape}, expected {(d, m)}")
    net = SublinearNet(s, W)
    pos = 5 + d
    if pos < len(lines) and lines[pos].startswith("group"):
        k = int(lines[pos].split()[1])
        rows = lines[pos + 1: pos + 1 + k * d]
        G = np.array([[float(v) for v in r.split()] for r in rows]).reshape(k, d, d)
        return SymmetrizedNet(net, SymmetryGroup(G))
    return net


def save_net(net: AnyNet, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_net(net))


def load_net(path) -> AnyNet:
    with open(path) as fh:
        return loads_net(fh.read())
