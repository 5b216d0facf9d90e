"""Tensor Gauss-Legendre rules on boxes, with dyadic refinement at a corner."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import itertools

import numpy as np

from .errors import DomainError, NotConverged


@lru_cache(maxsize=64)
def _gl(order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def box_rule(lo, hi, order: int):
    """Tensor Gauss-Legendre nodes and weights on the box [lo, hi].

    Parameters
    ----------
    lo, hi : array_like, shape (n,)
        Box corners.
    order : int
        Points per axis.

    Returns
    -------
    points : ndarray, shape (order**n, n)
    weights : ndarray, shape (order**n,)
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    t, w = _gl(order)
    half = 0.5 * (hi - lo)
    axes = [lo[k] + half[k] * (t + 1.0) for k in range(lo.size)]
    wax = [half[k] * w for k in range(lo.size)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)
    wts = wax[0]
    for wk in wax[1:]:
        wts = np.multiply.outer(wts, wk)
    return pts, wts.reshape(-1)


def integrate_box(f, lo, hi, order: int):
    """Integrate a vectorized `f(points) -> values` over a box.

    `f` may return shape (m,) or (m, k); the result has shape () or (k,).
    """
    pts, wts = box_rule(lo, hi, order)
    return np.tensordot(wts, f(pts), axes=(0, 0))


def corner_shell_boxes(scale, frac_lo: float, frac_hi: float):
    """Boxes tiling [0, frac_hi*scale] minus [0, frac_lo*scale] (2**n - 1 boxes)."""
    scale = np.asarray(scale, dtype=float)
    n = scale.size
    out = []
    for choice in itertools.product((0, 1), repeat=n):
        if not any(choice):
            continue
        lo = np.where(np.array(choice) == 1, frac_lo, 0.0) * scale
        hi = np.where(np.array(choice) == 1, frac_hi, frac_lo) * scale
        out.append((lo, hi))
    return out


@dataclass(frozen=True)
class QuadratureSpec:
    """Refinement settings for corner-singular integrals.

    x_order and d_order are Gauss-Legendre points per axis on the nominal
    and deflator boxes.  Each refinement level peels `depth_per_level`
    dyadic shells off the singular corner.
    """

    x_order: int = 16
    d_order: int = 16
    max_level: int = 12
    rel_tol: float = 1e-10
    depth_per_level: int = 4

    def __post_init__(self):
        if self.x_order < 2 or self.d_order < 2:
            raise DomainError("quadrature order must be >= 2")
        if not self.rel_tol > 0:
            raise DomainError("rel_tol must be positive")
        if self.max_level < 1 or self.depth_per_level < 1:
            raise DomainError("max_level and depth_per_level must be >= 1")

    def key(self):
        return (self.x_order, self.d_order, self.max_level, self.rel_tol, self.depth_per_level)


@dataclass(frozen=True)
class CornerResult:
    value: np.ndarray
    error: float
    levels: tuple  # estimate after each level
    converged: bool


def integrate_corner(f, scale, order: int, spec: QuadratureSpec) -> CornerResult:
    """Integrate `f` over the box [0, scale] when f is singular at the origin.

    Level L integrates the shells between depth 0 and depth L*d exactly by
    Gauss rules and closes the remaining corner box with one plain Gauss
    rule.  Successive levels differ only in how the corner box is treated,
    so their difference is the error estimate.
    """
    scale = np.asarray(scale, dtype=float)
    d = spec.depth_per_level
    shells = 0.0
    depth = 0
    history = []

    def corner(depth):
        return integrate_box(f, np.zeros_like(scale), scale * 0.5**depth, order)

    history.append(np.asarray(corner(0)))
    converged = False
    for _ in range(spec.max_level):
        for _ in range(d):
            for lo, hi in corner_shell_boxes(scale, 0.5 ** (depth + 1), 0.5**depth):
                shells = shells + integrate_box(f, lo, hi, order)
            depth += 1
        history.append(np.asarray(shells + corner(depth)))
        diff = np.max(np.abs(history[-1] - history[-2]))
        ref = np.max(np.abs(history[-1]))
        if diff <= spec.rel_tol * ref or diff == 0.0:
            converged = True
            break
    err = float(np.max(np.abs(history[-1] - history[-2])))
    return CornerResult(history[-1], err, tuple(history), converged)


def require_converged(res: CornerResult, what: str):
    if not res.converged:
        raise NotConverged(f"{what} did not converge", estimate=res.value, error=res.error)
    return res
