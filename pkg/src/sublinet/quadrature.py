"""Deterministic quadrature rules on the unit sphere and unit ball, d = 2..4."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

SUPPORTED_DIMS = (2, 3, 4)

_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def sphere_area(d: int) -> float:
    """Surface area of S^{d-1}."""
    return {2: 2.0 * math.pi, 3: 4.0 * math.pi, 4: 2.0 * math.pi ** 2}[d]


def ball_volume(d: int) -> float:
    return {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0, 4: math.pi ** 2 / 2.0}[d]


@dataclass(frozen=True)
class SphereRule:
    d: int
    nodes: np.ndarray    # (n, d) unit vectors
    weights: np.ndarray  # (n,), sums to the sphere area

    @property
    def n(self) -> int:
        return self.nodes.shape[0]


@dataclass(frozen=True)
class BallRule:
    d: int
    nodes: np.ndarray
    weights: np.ndarray  # sums to the ball volume

    @property
    def n(self) -> int:
        return self.nodes.shape[0]


def _check_dim(d: int):
    if d not in SUPPORTED_DIMS:
        raise ValueError(f"unsupported dimension {d}; supported: {SUPPORTED_DIMS}")


def _kronecker_sequence(n: int, dim: int, seed: int) -> np.ndarray:
    """Deterministic low-discrepancy points in [0,1)^dim.

    Kronecker sequence with the generalized-golden-ratio direction; the seed
    only shifts the starting offset so rules stay reproducible.
    """
    # unique real root of x^(dim+1) = x + 1
    phi = 2.0
    for _ in range(64):
        phi = (1.0 + phi) ** (1.0 / (dim + 1))
    alpha = np.array([phi ** -(j + 1) for j in range(dim)])
    i = np.arange(1, n + 1, dtype=float)[:, None]
    return np.mod(0.5 + seed * alpha[None, :] * 0.61803398875 + i * alpha[None, :], 1.0)


def sphere_rule(d: int, n: int, seed: int = 0) -> SphereRule:
    """Equal-weight node set on S^{d-1}.

    d=2: equispaced angles. d=3: Fibonacci lattice. d=4: Kronecker sequence
    mapped area-preservingly to S^3 through Hopf-like coordinates.
    """
    _check_dim(d)
    if n < 8:
        raise ValueError("need at least 8 nodes")
    if d == 2:
        ang = 2.0 * math.pi * (np.arange(n) + 0.5 * (seed % 2)) / n
        nodes = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    elif d == 3:
        i = np.arange(n)
        z = 1.0 - (2.0 * i + 1.0) / n
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = 2.0 * math.pi * np.mod(i / _GOLDEN + seed * 0.61803398875, 1.0)
        nodes = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    else:
        t = _kronecker_sequence(n, 3, seed)
        eta = np.arcsin(np.sqrt(t[:, 2]))    # uniform in sin^2(eta)
        xi1 = 2.0 * math.pi * t[:, 0]
        xi2 = 2.0 * math.pi * t[:, 1]
        nodes = np.stack([
            np.cos(eta) * np.cos(xi1),
            np.cos(eta) * np.sin(xi1),
            np.sin(eta) * np.cos(xi2),
            np.sin(eta) * np.sin(xi2),
        ], axis=1)
    nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
    weights = np.full(n, sphere_area(d) / n)
    return SphereRule(d, nodes, weights)


def ball_rule(d: int, n_radial: int, sphere: SphereRule) -> BallRule:
    """Tensor rule on the ball: Gauss-Legendre in radius times a sphere rule.

    The r^{d-1} volume factor is absorbed into the weights, so constants and
    polynomial radial profiles integrate exactly.
    """
    _check_dim(d)
    if sphere.d != d:
        raise ValueError("sphere rule dimension mismatch")
    if n_radial < 2:
        raise ValueError("need at least 2 radial nodes")
    t, wt = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * (t + 1.0)
    wr = 0.5 * wt * r ** (d - 1)
    nodes = (r[:, None, None] * sphere.nodes[None, :, :]).reshape(-1, d)
    weights = (wr[:, None] * sphere.weights[None, :]).reshape(-1)
    return BallRule(d, nodes, weights)


def integrate(rule: SphereRule | BallRule, f: Callable[[np.ndarray], float]) -> float:
    """Sum w_i f(x_i) in fixed node order."""
    total = 0.0
    for i, x in enumerate(rule.nodes):
        v = float(f(x))
        if not math.isfinite(v):
            raise ValueError(f"integrand returned non-finite value at node {i}: {x}")
        total += rule.weights[i] * v
    return total


def rotate_rule(rule: SphereRule | BallRule, R: np.ndarray):
    """Same rule with every node rotated; used by symmetry checks."""
    cls = type(rule)
    return cls(rule.d, rule.nodes @ np.asarray(R).T, rule.weights)
