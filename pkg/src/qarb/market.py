"""Market geometry primitives.

Portfolios are nominal vectors x over N assets with deflators D and short
rates r.  The functions here are the pointwise building blocks used by the
spectral, evolution and path-integral modules.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
import warnings

import numpy as np

from .errors import (
    DomainError,
    EvaluationFailure,
    InsufficientPaths,
    NotSelfFinancing,
    ZeroDenominator,
    ZeroNominalVector,
    ZeroVelocity,
)


def _vec(a, n=None, name="vector"):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if n is not None and a.shape[-1] != n:
        raise DomainError(f"{name} has length {a.shape[-1]}, expected {n}")
    return a


@dataclass(frozen=True)
class MarketDomain:
    """Cuboid state space: x in prod [0, A_l], D in prod [0, B_l].

    r_box holds per-asset (lo, hi) short-rate bounds used only for sampling.
    """

    x_bounds: tuple
    d_bounds: tuple
    r_box: tuple = None

    def __post_init__(self):
        A = tuple(float(a) for a in np.atleast_1d(self.x_bounds))
        B = tuple(float(b) for b in np.atleast_1d(self.d_bounds))
        if len(A) < 1:
            raise DomainError("need at least one asset")
        if len(A) != len(B):
            raise DomainError("x_bounds and d_bounds differ in length")
        if not all(a > 0 and np.isfinite(a) for a in A + B):
            raise DomainError("bounds must be positive and finite")
        rb = self.r_box
        if rb is None:
            rb = ((0.0, 0.0),) * len(A)
        rb = tuple((float(lo), float(hi)) for lo, hi in rb)
        if len(rb) != len(A) or any(lo > hi for lo, hi in rb):
            raise DomainError("r_box must hold N ordered pairs")
        object.__setattr__(self, "x_bounds", A)
        object.__setattr__(self, "d_bounds", B)
        object.__setattr__(self, "r_box", rb)

    @property
    def n_assets(self) -> int:
        return len(self.x_bounds)

    @property
    def A(self) -> np.ndarray:
        return np.array(self.x_bounds)

    @property
    def B(self) -> np.ndarray:
        return np.array(self.d_bounds)

    def contains(self, x=None, d=None, atol=0.0) -> bool:
        ok = True
        if x is not None:
            x = _vec(x, self.n_assets, "x")
            ok &= bool(np.all(x >= -atol) and np.all(x <= self.A + atol))
        if d is not None:
            d = _vec(d, self.n_assets, "d")
            ok &= bool(np.all(d >= -atol) and np.all(d <= self.B + atol))
        return ok

    def digest(self) -> str:
        text = repr((self.x_bounds, self.d_bounds, self.r_box))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class MarketPoint:
    x: np.ndarray
    d: np.ndarray
    r: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        x = _vec(self.x, name="x")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "d", _vec(self.d, x.size, "d"))
        r = np.broadcast_to(np.asarray(self.r, dtype=float), x.shape).copy()
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True)
class Velocity:
    """Time derivative (x', D', r') of a market point."""

    x: np.ndarray
    d: np.ndarray
    r: np.ndarray = None

    def __post_init__(self):
        x = _vec(self.x, name="x'")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "d", _vec(self.d, x.size, "D'"))
        r = np.zeros_like(x) if self.r is None else _vec(self.r, x.size, "r'")
        object.__setattr__(self, "r", r)


@dataclass(frozen=True)
class Momentum:
    p_x: np.ndarray
    p_d: np.ndarray
    p_r: np.ndarray = field(default=None)

    def __post_init__(self):
        px = _vec(self.p_x, name="p_x")
        object.__setattr__(self, "p_x", px)
        object.__setattr__(self, "p_d", _vec(self.p_d, px.size, "p_d"))
        pr = np.zeros_like(px) if self.p_r is None else _vec(self.p_r, px.size, "p_r")
        object.__setattr__(self, "p_r", pr)

    def pair(self, v: Velocity) -> float:
        """Canonical pairing p . q'."""
        return float(self.p_x @ v.x + self.p_d @ v.d + self.p_r @ v.r)


def _xd(x, d):
    xd = float(np.dot(x, d))
    if xd == 0.0:
        raise ZeroDenominator("x.D vanishes")
    return xd


def portfolio_short_rate(x, d, r) -> float:
    """Deflator-weighted short rate of the portfolio x.

    Parameters
    ----------
    x, d, r : array_like, shape (N,)
        Nominals, deflators and asset short rates.

    Returns
    -------
    float
        sum_j x_j d_j r_j / sum_j x_j d_j.

    Raises
    ------
    ZeroDenominator
        If x.d = 0.
    """
    x, d, r = _vec(x), _vec(d), _vec(r)
    return float(np.sum(x * d * r)) / _xd(x, d)


def lagrangian(q: MarketPoint, v: Velocity) -> float:
    """Arbitrage Lagrangian |x'| x.(D' + rD) / (x.D)."""
    xd = _xd(q.x, q.d)
    return float(np.linalg.norm(v.x) * np.dot(q.x, v.d + q.r * q.d) / xd)


def self_financing_residual(q: MarketPoint, v: Velocity) -> float:
    """x'.D; zero for a self-financing rebalancing."""
    return float(np.dot(v.x, q.d))


def is_self_financing(q: MarketPoint, v: Velocity, rtol: float = 1e-8) -> bool:
    """Relative test |x'.D| <= rtol |x'| |D|."""
    scale = np.linalg.norm(v.x) * np.linalg.norm(q.d)
    return abs(self_financing_residual(q, v)) <= rtol * scale


def legendre_momenta(q: MarketPoint, v: Velocity) -> Momentum:
    """Canonical momenta of the arbitrage Lagrangian.

    Returns
    -------
    Momentum
        p_x = [x.(D'+rD)/(x.D)] x'/|x'|, p_D = |x'| x/(x.D), p_r = 0.

    Raises
    ------
    ZeroDenominator
        If x.D = 0.
    ZeroVelocity
        If x' = 0, where the Lagrangian is not differentiable.
    """
    xd = _xd(q.x, q.d)
    speed = float(np.linalg.norm(v.x))
    if speed == 0.0:
        raise ZeroVelocity("|x'| = 0")
    k = float(np.dot(q.x, v.d + q.r * q.d)) / xd
    return Momentum(k * v.x / speed, speed * q.x / xd, np.zeros_like(q.x))


def hamilton_function(p: Momentum, q: MarketPoint) -> float:
    """Hamilton function (x.p_D)/|x|^2 ((x.D)|p_x| - x.(rD)).

    Raises
    ------
    ZeroNominalVector
        If x = 0.
    """
    nx2 = float(np.dot(q.x, q.x))
    if nx2 == 0.0:
        raise ZeroNominalVector("|x| = 0")
    return float(
        np.dot(q.x, p.p_d) / nx2
        * (np.dot(q.x, q.d) * np.linalg.norm(p.p_x) - np.dot(q.x, q.r * q.d))
    )


def curvature_vector(dlogD_x, r_x, t, x, g=1.0, h_fd=None, domain=None):
    """Curvature coefficients g d/dx_j [Dlog D^x + r^x] by central differences.

    Parameters
    ----------
    dlogD_x, r_x : callable (t, x) -> float
        Estimates of the mean log-derivative of the portfolio deflator and
        the portfolio short rate.
    t : float
    x : array_like, shape (N,)
    g : float
        Fibre scalar.
    h_fd : float or array_like, optional
        Difference step per component.  Defaults to 1e-4 A_l when a domain
        is given, else 1e-4 max(1, |x_l|).

    Returns
    -------
    ndarray, shape (N,)
    """
    x = _vec(x)
    if h_fd is None:
        h = 1e-4 * (domain.A if domain is not None else np.maximum(1.0, np.abs(x)))
    else:
        h = np.broadcast_to(np.asarray(h_fd, dtype=float), x.shape)

    def bracket(y):
        try:
            val = float(dlogD_x(t, y)) + float(r_x(t, y))
        except Exception as exc:  # noqa: BLE001 - surfaced as a library error
            raise EvaluationFailure(f"bracket evaluation failed at x={y}") from exc
        if not np.isfinite(val):
            raise EvaluationFailure(f"non-finite bracket at x={y}")
        return val

    out = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        out[j] = (bracket(x + e) - bracket(x - e)) / (2.0 * h[j])
    return g * out


def ensemble_bracket(ensemble, t_index: int):
    """Estimators of Dlog D^x and r^x at a grid time from an ensemble.

    The mean derivative uses the symmetric quotient over one grid step on
    each side; the conditional expectation is replaced by the ensemble
    mean, which is exact for deterministic models.
    """
    k = int(t_index)
    if k < 1 or k >= ensemble.n_times - 1:
        raise InsufficientPaths("need one grid step on both sides of t")
    h = ensemble.grid.step
    d_prev, d_now, d_next = ensemble.d[:, k - 1], ensemble.d[:, k], ensemble.d[:, k + 1]
    r_now = ensemble.r[:, k]

    def dlog(_t, x):
        # a nonpositive portfolio gives nan here, which curvature_vector rejects
        with np.errstate(invalid="ignore", divide="ignore"):
            return float(np.mean((np.log(d_next @ x) - np.log(d_prev @ x)) / (2 * h)))

    def rate(_t, x):
        w = d_now @ x
        if np.any(w == 0):
            raise ZeroDenominator("x.D vanishes on a path")
        return float(np.mean((d_now * r_now) @ x / w))

    return dlog, rate


@dataclass(frozen=True)
class CurvatureVerdict:
    zero_curvature: bool
    max_residual: float
    worst: tuple  # (t, x, j)


def zero_curvature_test(ensemble, sample_xs, tol: float, t_indices=None, g=1.0, h_fd=None):
    """Check that all curvature coefficients vanish on sampled (t, x).

    Returns
    -------
    CurvatureVerdict
        `zero_curvature` is True iff every |component| <= tol.
    """
    if ensemble.n_paths < 1:
        raise InsufficientPaths("empty ensemble")
    if ensemble.n_times < 3:
        raise InsufficientPaths("need at least three grid times")
    if t_indices is None:
        t_indices = range(1, ensemble.n_times - 1)
    worst, worst_at = 0.0, None
    for k in t_indices:
        dlog, rate = ensemble_bracket(ensemble, k)
        t = ensemble.grid.times[k]
        for x in sample_xs:
            c = np.abs(curvature_vector(dlog, rate, t, x, g=g, h_fd=h_fd))
            j = int(np.argmax(c))
            if c[j] > worst or worst_at is None:
                worst, worst_at = float(c[j]), (float(t), tuple(np.asarray(x, float)), j)
    return CurvatureVerdict(worst <= tol, worst, worst_at)


def arbitrage_action(times, x, d, r, beta, sf_rtol: float = 1e-8) -> float:
    """Discretized arbitrage action of one path.

    Each grid interval contributes
    [xbar.(dD + h rbar Dbar) - dx.dD/2] / (xbar.Dbar), bars denoting
    interval midpoints, and log(beta_end/beta_start) is added once.  The
    dx.dD term is the realized covariation increment.

    Parameters
    ----------
    times : array_like, shape (n,)
    x, d, r : array_like, shape (n, N)
    beta : array_like, shape (n,)
        Positive numeraire path.
    """
    times = np.asarray(times, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = np.atleast_2d(np.asarray(d, dtype=float))
    r = np.broadcast_to(np.asarray(r, dtype=float), d.shape)
    beta = np.asarray(beta, dtype=float)
    if np.any(beta <= 0):
        raise DomainError("beta must be positive")
    h = np.diff(times)
    dx, dD = np.diff(x, axis=0), np.diff(d, axis=0)
    xm, dm, rm = 0.5 * (x[1:] + x[:-1]), 0.5 * (d[1:] + d[:-1]), 0.5 * (r[1:] + r[:-1])
    den = np.sum(xm * dm, axis=1)
    if np.any(den == 0):
        raise ZeroDenominator("x.D vanishes on the path")
    # self-financing: x'.D using the midpoint deflator
    resid = np.abs(np.sum(dx * dm, axis=1))
    scale = np.linalg.norm(dx, axis=1) * np.linalg.norm(dm, axis=1)
    if np.any(resid > sf_rtol * scale):
        warnings.warn("path is not self-financing within tolerance", NotSelfFinancing, stacklevel=2)
    num = np.sum(xm * (dD + h[:, None] * rm * dm), axis=1) - 0.5 * np.sum(dx * dD, axis=1)
    return float(np.sum(num / den) + np.log(beta[-1] / beta[0]))
