"""Differentiation engine.

Exact spatial derivatives (orders 1-3) and parameter gradients for every
differentiable quantity in the library, plus finite-difference validation
utilities. The heavy lifting is delegated to jax on CPU in 64-bit mode;
``Dual`` provides a small self-contained forward-mode number whose
coefficients nest, used as an independent cross-check of the engine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import jax

jax.config.update("jax_enable_x64", True)
jax.config.update("jax_platform_name", "cpu")

import jax.numpy as jnp
import numpy as np

from .errors import DomainError

ORIGIN_TOL = 1e-12  # maps and derivatives are undefined below this radius


# ---------------------------------------------------------------------------
# Nestable forward-mode scalar
# ---------------------------------------------------------------------------

class Dual:
    """Scalar carrying a value and one directional-derivative coefficient.

    Both fields may themselves be ``Dual``, so nesting to depth k exposes
    k-th derivatives. Arithmetic implements the exact sum/product/chain
    rules on the stored coefficients.
    """

    __slots__ = ("val", "dot")

    def __init__(self, val, dot=0.0):
        self.val = val
        self.dot = dot

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Dual) else Dual(x, 0.0)

    def __add__(self, other):
        o = Dual._lift(other)
        return Dual(self.val + o.val, self.dot + o.dot)

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual._lift(other)
        return Dual(self.val - o.val, self.dot - o.dot)

    def __rsub__(self, other):
        o = Dual._lift(other)
        return Dual(o.val - self.val, o.dot - self.dot)

    def __mul__(self, other):
        o = Dual._lift(other)
        return Dual(self.val * o.val, self.dot * o.val + self.val * o.dot)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Dual._lift(other)
        inv = 1.0 / o.val
        return Dual(self.val * inv,
                    (self.dot * o.val - self.val * o.dot) * inv * inv)

    def __rtruediv__(self, other):
        return Dual._lift(other).__truediv__(self)

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __pow__(self, k):
        if not isinstance(k, (int, float)):
            raise TypeError("Dual exponents must be numeric constants")
        return Dual(self.val ** k, k * self.val ** (k - 1) * self.dot)

    def __repr__(self):
        return f"Dual({self.val!r}, {self.dot!r})"


def d_exp(x):
    if isinstance(x, Dual):
        e = d_exp(x.val)
        return Dual(e, x.dot * e)
    return math.exp(x)


def d_log(x):
    if isinstance(x, Dual):
        return Dual(d_log(x.val), x.dot / x.val)
    return math.log(x)


def d_sqrt(x):
    if isinstance(x, Dual):
        r = d_sqrt(x.val)
        return Dual(r, x.dot / (2.0 * r))
    return math.sqrt(x)


def dual_derivative(f: Callable, x: float, order: int = 1):
    """order-th derivative of a scalar function built from Dual arithmetic."""
    if order == 0:
        return f(x)
    return dual_derivative(lambda t: f(Dual(t, 1.0)).dot, x, order - 1)


def dual_gradient(f: Callable[[Sequence], object], x: Sequence[float]) -> np.ndarray:
    """Gradient of f (written over Dual scalars) at a point, one seed per axis."""
    x = [float(v) for v in x]
    out = []
    for i in range(len(x)):
        seeded = [Dual(v, 1.0 if j == i else 0.0) for j, v in enumerate(x)]
        r = f(seeded)
        out.append(r.dot if isinstance(r, Dual) else 0.0)
    return np.asarray(out)


# ---------------------------------------------------------------------------
# jax-backed operations
# ---------------------------------------------------------------------------

def _as_array(x) -> jnp.ndarray:
    a = jnp.asarray(x, dtype=jnp.float64)
    if not bool(jnp.all(jnp.isfinite(a))):
        raise DomainError("non-finite input point")
    return a


def gradient(f: Callable, x) -> np.ndarray:
    """Exact gradient of a scalar field at x.

    Raises DomainError if the result is non-finite, which is how evaluation
    at a singular point of f surfaces.
    """
    x = _as_array(x)
    g = jax.grad(f)(x)
    g = np.asarray(g)
    if not np.all(np.isfinite(g)):
        raise DomainError(f"gradient is singular at x={np.asarray(x)}")
    return g


def jacobian(F: Callable, x) -> np.ndarray:
    """Exact Jacobian of a map at x (rows = output components)."""
    x = _as_array(x)
    J = np.asarray(jax.jacfwd(F)(x))
    if not np.all(np.isfinite(J)):
        raise DomainError(f"jacobian is singular at x={np.asarray(x)}")
    return J


def hessian(f: Callable, x) -> np.ndarray:
    x = _as_array(x)
    H = np.asarray(jax.hessian(f)(x))
    if not np.all(np.isfinite(H)):
        raise DomainError(f"hessian is singular at x={np.asarray(x)}")
    return H


def directional_third(f: Callable, x, v1, v2) -> np.ndarray:
    """Third-derivative tensor of f contracted with two directions."""
    x = _as_array(x)
    v1 = jnp.asarray(v1, dtype=jnp.float64)
    v2 = jnp.asarray(v2, dtype=jnp.float64)
    gfun = jax.grad(f)
    hdir = lambda p: jax.jvp(gfun, (p,), (v1,))[1]
    return np.asarray(jax.jvp(hdir, (x,), (v2,))[1])


def central_difference(f: Callable, x, step: float = 1e-5) -> np.ndarray:
    """Componentwise central finite difference of a scalar function."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = step
        out.flat[i] = (float(f(x + e)) - float(f(x - e))) / (2.0 * step)
    return out


@dataclass(frozen=True)
class GradientCheck:
    """Comparison of an analytic gradient against central differences."""

    max_rel_error: float
    max_abs_error: float
    worst_index: int
    analytic: np.ndarray
    numeric: np.ndarray

    def __str__(self):
        return (f"gradient check: max rel err {self.max_rel_error:.3e} "
                f"(abs {self.max_abs_error:.3e} at component {self.worst_index})")


def check_gradient(f: Callable, x, step: float = 1e-5,
                   grad_fn: Callable | None = None) -> GradientCheck:
    """Compare the analytic gradient of f at x with central differences.

    f must accept both jax and numpy arrays; grad_fn overrides the analytic
    side (defaults to the engine's own gradient).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    g = np.asarray(grad_fn(x)) if grad_fn is not None else gradient(f, x)
    fd = central_difference(f, x, step)
    abs_err = np.abs(g - fd)
    scale = np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-12)
    rel = abs_err / scale
    worst = int(np.argmax(rel))
    return GradientCheck(float(rel[worst]), float(abs_err.max()), worst, g, fd)


def fd_directional(f: Callable, x, v, step: float = 1e-5) -> float:
    """Central finite difference of f along direction v."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    return (float(f(x + step * v)) - float(f(x - step * v))) / (2.0 * step)


def fd_third_directional(f: Callable, x, v, step: float = 1e-2) -> float:
    """Third derivative of t -> f(x + t v) at 0 by a 5-point stencil."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    ft = lambda t: float(f(x + t * v))
    return (-ft(-2 * step) + 2 * ft(-step) - 2 * ft(step) + ft(2 * step)) / (2 * step ** 3)


def require_off_origin(x, tol: float = ORIGIN_TOL):
    """Reject points too close to the origin for homogeneous-map derivatives."""
    n = float(np.linalg.norm(np.asarray(x, dtype=float)))
    if not math.isfinite(n):
        raise DomainError("non-finite input point")
    if n < tol:
        raise DomainError(f"point with norm {n:.3e} is inside the singular region (< {tol:g})")
