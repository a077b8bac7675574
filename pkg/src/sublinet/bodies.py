"""Reference polytopes and analytic sublinear functions.

Used as fit targets, UAT polytopes, and curvature-problem ground truths.
All functions follow the ``(theta, x) -> scalar`` convention with theta
ignored, so they plug into the same machinery as trained nets.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable

import jax.numpy as jnp
import numpy as np


def square_vertices() -> np.ndarray:
    return np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])


def cube_vertices(d: int = 3) -> np.ndarray:
    return np.array(list(itertools.product([-1.0, 1.0], repeat=d)))


def cube_gauge_normals(d: int = 3) -> np.ndarray:
    """Face normals of the unit cube [-1,1]^d as a gauge polytope."""
    return np.vstack([np.eye(d), -np.eye(d)])


def cross_polytope_vertices(d: int) -> np.ndarray:
    return np.vstack([np.eye(d), -np.eye(d)])


def octahedron_gauge_normals() -> np.ndarray:
    """The l1 ball { sum |x_i| <= 1 } as an intersection of 8 halfspaces."""
    return cube_vertices(3)


def simplex_vertices(d: int) -> np.ndarray:
    """Regular simplex with centroid at the origin, circumradius 1."""
    # embed the regular simplex of R^{d+1} and project onto the sum-zero plane
    E = np.eye(d + 1)
    E -= E.mean(axis=0, keepdims=True)
    q, _ = np.linalg.qr(E.T)
    V = E @ q[:, :d]
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def simplex_gauge_normals(d: int) -> np.ndarray:
    """Halfspace normals of the regular simplex, scaled so P = {w_i . x <= 1}."""
    V = simplex_vertices(d)
    # each facet is opposite one vertex; its outward normal is -v_i scaled to
    # touch the facet plane at distance 1
    normals = []
    for i in range(d + 1):
        others = np.delete(V, i, axis=0)
        c = others.mean(axis=0)
        n = -V[i] / np.linalg.norm(V[i])
        normals.append(n / (n @ others[0]))
        assert abs(n @ c - n @ others[0]) < 1e-12
    return np.array(normals)


def regular_polygon_vertices(n: int, circumradius: float = 1.0) -> np.ndarray:
    a = 2.0 * math.pi * np.arange(n) / n
    return circumradius * np.stack([np.cos(a), np.sin(a)], axis=1)


def polytope_data(name: str, d: int) -> tuple[np.ndarray, np.ndarray]:
    """(gauge halfspace normals, vertices) for a named polytope."""
    if name == "square" or (name == "cube" and d == 2):
        return cube_gauge_normals(2), square_vertices()
    if name == "cube" and d == 3:
        return cube_gauge_normals(3), cube_vertices(3)
    if name == "simplex":
        return simplex_gauge_normals(d), simplex_vertices(d)
    if name == "octahedron" and d == 3:
        return octahedron_gauge_normals(), cross_polytope_vertices(3)
    if name == "cross" or name == "cross-polytope":
        return cube_vertices(d), cross_polytope_vertices(d)
    if name.startswith("polygon") and d == 2:
        n = int(name.split(":")[1])
        V = regular_polygon_vertices(n)
        # gauge normals: faces at inradius cos(pi/n)
        mid = 0.5 * (V + np.roll(V, -1, axis=0))
        return mid / (np.linalg.norm(mid, axis=1, keepdims=True) ** 2), V
    raise ValueError(f"unknown polytope {name!r} in dimension {d}")


# ---------------------------------------------------------------------------
# Analytic sublinear functions (theta ignored)
# ---------------------------------------------------------------------------

def ball_gauge(radius: float = 1.0) -> Callable:
    def fn(theta, x):
        return jnp.linalg.norm(x) / radius
    return fn


def ball_support(radius: float = 1.0) -> Callable:
    def fn(theta, x):
        return radius * jnp.linalg.norm(x)
    return fn


def ellipsoid_support(semi_axes) -> Callable:
    """Support function sqrt(sum a_i^2 x_i^2) of an axis-aligned ellipsoid."""
    a = np.asarray(semi_axes, dtype=float)

    def fn(theta, x):
        return jnp.sqrt(jnp.sum((jnp.asarray(a) * x) ** 2))
    return fn


def ellipsoid_gauge(semi_axes) -> Callable:
    a = np.asarray(semi_axes, dtype=float)

    def fn(theta, x):
        return jnp.sqrt(jnp.sum((x / jnp.asarray(a)) ** 2))
    return fn


def polytope_max(rows: np.ndarray) -> Callable:
    """Exact max-of-linear-forms function (gauge or support of a polytope).

    Nonsmooth; meant for value-only uses such as Hausdorff references.
    """
    R = np.asarray(rows, dtype=float)

    def fn(theta, x):
        return jnp.max(jnp.asarray(R) @ x)
    return fn


def ellipsoid_gauss_curvature(semi_axes) -> Callable[[np.ndarray], float]:
    """kappa at the boundary point with outward normal u: h(u)^4 / (prod a)^2.

    Reduces to 1/r^2 for a sphere of radius r (and to the 2D a/b^2 vertex
    curvature when one axis is dropped).
    """
    a = np.asarray(semi_axes, dtype=float)
    prod2 = float(np.prod(a)) ** 2

    def g(u):
        h2 = jnp.sum((jnp.asarray(a) * u) ** 2)
        return h2 ** 2 / prod2
    return g
