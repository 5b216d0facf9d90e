"""Eigenbases and eigenvalues of the market Hamilton operator on cuboids.

Nominals live in X = prod [0, A_l] with Dirichlet plane waves alpha_I and
deflators in prod [0, B_l] with Neumann plane waves beta_J.  The Hamilton
eigenvalue attached to (I, J) is a weighted integral of the Hamilton symbol
over the cuboid; it is singular only at the x = 0 corner.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import itertools
import threading

import numpy as np

from .errors import (
    DomainError,
    NotConverged,
    OutOfDomain,
    UnsupportedDimension,
    ZeroDenominator,
    ZeroNominalVector,
)
from .market import MarketDomain, MarketPoint
from .quadrature import QuadratureSpec, box_rule, integrate_corner


def _idx(I, n=None, name="index"):
    I = tuple(int(i) for i in np.atleast_1d(I))
    if n is not None and len(I) != n:
        raise DomainError(f"{name} has length {len(I)}, expected {n}")
    return I


def _check_I(I):
    if any(i < 1 for i in I):
        raise DomainError(f"Dirichlet index needs entries >= 1, got {I}")


@dataclass(frozen=True)
class SpectralIndex:
    I: tuple
    J: tuple
    k: int = 0

    def __post_init__(self):
        I, J = _idx(self.I), _idx(self.J)
        if len(I) != len(J):
            raise DomainError("I and J differ in length")
        _check_I(I)
        if self.k < 0:
            raise DomainError("r label must be nonnegative")
        object.__setattr__(self, "I", I)
        object.__setattr__(self, "J", J)


@dataclass(frozen=True)
class EigenData:
    lambda_alpha: float
    lambda_beta: float
    lambda_IJ: float
    quadrature_error: float = 0.0
    converged: bool = True
    levels: tuple = ()

    def final_relative_change(self) -> float:
        """Relative difference of the last two refinement levels (0 if exact)."""
        if len(self.levels) < 2 or self.levels[-1] == 0:
            return 0.0
        return abs(self.levels[-1] - self.levels[-2]) / abs(self.levels[-1])


def _inside(v, upper, name):
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or np.any(v > upper):
        raise OutOfDomain(f"{name} outside the cuboid")
    return v


def alpha_eigenvector(I, domain: MarketDomain, x) -> complex:
    """Dirichlet plane wave exp(-i pi sum I_l x_l / A_l) / sqrt(prod A_l)."""
    I = _idx(I, domain.n_assets, "I")
    _check_I(I)
    x = _inside(x, domain.A, "x")
    return complex(np.exp(-1j * np.pi * np.sum(np.array(I) * x / domain.A)) / np.sqrt(np.prod(domain.A)))


def alpha_eigenvalue(I, domain: MarketDomain) -> float:
    """sqrt(sum pi^2 I_l^2 / A_l^2)."""
    I = np.array(_idx(I, domain.n_assets, "I"), dtype=float)
    return float(np.pi * np.sqrt(np.sum((I / domain.A) ** 2)))


def beta_eigenvector(J, domain: MarketDomain, d) -> complex:
    """Neumann plane wave exp(-i pi sum J_l D_l / B_l) / sqrt(prod B_l)."""
    J = _idx(J, domain.n_assets, "J")
    d = _inside(d, domain.B, "d")
    return complex(np.exp(-1j * np.pi * np.sum(np.array(J) * d / domain.B)) / np.sqrt(np.prod(domain.B)))


def beta_eigenvalue(J, domain: MarketDomain) -> float:
    """(prod sgn J_l) sqrt(sum pi^2 J_l^2 / B_l^2), with sgn 0 = 0."""
    J = np.array(_idx(J, domain.n_assets, "J"), dtype=float)
    s = float(np.prod(np.sign(J)))
    if s == 0.0:
        return 0.0
    return s * float(np.pi * np.sqrt(np.sum((J / domain.B) ** 2)))


# cache of x-integrals keyed by (domain, quadrature, effective lambda_alpha)
_XINT_CACHE: dict = {}
_XINT_LOCK = threading.Lock()


def _deflator_moments(domain: MarketDomain, order: int) -> np.ndarray:
    """c_l = integral of D_l over the deflator box by tensor Gauss-Legendre."""
    pts, wts = box_rule(np.zeros(domain.n_assets), domain.B, order)
    return wts @ pts


def _x_integral(domain: MarketDomain, spec: QuadratureSpec, lam_a: float):
    key = (domain.digest(), spec.key(), float(lam_a))
    with _XINT_LOCK:
        hit = _XINT_CACHE.get(key)
    if hit is not None:
        return hit
    c = _deflator_moments(domain, spec.d_order)
    csum = float(c.sum())

    # integrand after the exact tensor contraction over the deflator box
    def f(x):
        n2 = np.einsum("ij,ij->i", x, x)
        return x.sum(axis=1) / n2 * (x @ c - lam_a * csum)

    res = integrate_corner(f, domain.A, spec.x_order, spec)
    with _XINT_LOCK:
        _XINT_CACHE[key] = res
    return res


def lambda_IJ_quadrature(I, J, domain: MarketDomain, spec: QuadratureSpec = QuadratureSpec(),
                         sign: int = 1, strict: bool = False) -> EigenData:
    """Hamilton eigenvalue for the product eigenvector (I, J) by quadrature.

    The value is

        lam_a lam_b / (2 prod A_l B_l) * int_X int_D (x.D - lam_a e.D) (x.e)/|x|^2 dD dx

    with lam_a replaced by sign * lam_a for the chosen branch of |d/dx|.
    The deflator integral uses a tensor Gauss-Legendre rule; the nominal
    integral is refined dyadically toward the singular corner x = 0.

    Parameters
    ----------
    I, J : sequence of int
    domain : MarketDomain
        Must have N >= 2.
    spec : QuadratureSpec
    sign : {+1, -1}
    strict : bool
        Raise NotConverged instead of returning a flagged estimate.

    Returns
    -------
    EigenData
        Exactly zero, with no quadrature, when any J_l = 0.
    """
    n = domain.n_assets
    I = _idx(I, n, "I")
    J = _idx(J, n, "J")
    _check_I(I)
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    if n == 1:
        raise UnsupportedDimension("N = 1 uses the reduced operator; see reduced_lambda_alpha")
    la = alpha_eigenvalue(I, domain)
    lb = beta_eigenvalue(J, domain)
    if lb == 0.0:
        return EigenData(la, 0.0, 0.0, 0.0, True, ())
    lae = sign * la
    res = _x_integral(domain, spec, lae)
    pref = lae * lb / (2.0 * np.prod(domain.A) * np.prod(domain.B))
    levels = tuple(float(pref * v) for v in res.levels)
    out = EigenData(la, lb, levels[-1], abs(pref) * res.error, res.converged, levels)
    if strict and not res.converged:
        raise NotConverged(f"lambda for I={I}, J={J}", estimate=out, error=out.quadrature_error)
    return out


def nominal_moments(domain: MarketDomain, spec: QuadratureSpec = QuadratureSpec()):
    """M_0 = int (x.e)/|x|^2 dx and M_l = int x_l (x.e)/|x|^2 dx over X.

    Returns
    -------
    m0 : float
    m : ndarray, shape (N,)
    error : float
    """
    key = (domain.digest(), spec.key(), "moments")
    with _XINT_LOCK:
        hit = _XINT_CACHE.get(key)
    if hit is not None:
        return hit

    def f(x):
        s = x.sum(axis=1) / np.einsum("ij,ij->i", x, x)
        return np.column_stack([s, x * s[:, None]])

    res = integrate_corner(f, domain.A, spec.x_order, spec)
    if not res.converged:
        raise NotConverged("nominal moments", estimate=res.value, error=res.error)
    out = (float(res.value[0]), np.array(res.value[1:]), res.error)
    with _XINT_LOCK:
        _XINT_CACHE[key] = out
    return out


def lambda_IJ_separable(I, J, domain: MarketDomain, spec: QuadratureSpec = QuadratureSpec(),
                        sign: int = 1) -> float:
    """Same eigenvalue via the linear dependence on D.

    lam = lam_a lam_b / (4 prod A) (sum_l B_l M_l - lam_a (sum B) M_0).
    Used for large tables; the per-index quadrature is the reference.
    """
    n = domain.n_assets
    if n == 1:
        return 0.0
    la = sign * alpha_eigenvalue(I, domain)
    lb = beta_eigenvalue(J, domain)
    if lb == 0.0:
        return 0.0
    m0, m, _ = nominal_moments(domain, spec)
    B = domain.B
    return float(la * lb / (4.0 * np.prod(domain.A)) * (B @ m - la * B.sum() * m0))


def lambda_IJ_closed_form_N2(I, J, A, B) -> float:
    """Closed-form two-asset eigenvalue, evaluated term by term.

    Depends on I only through |I_1|.

    Raises
    ------
    DomainError
        If any A_l or B_l is not positive.
    """
    I = _idx(I, 2, "I")
    J = _idx(J, 2, "J")
    A1, A2 = (float(a) for a in A)
    B1, B2 = (float(b) for b in B)
    if min(A1, A2, B1, B2) <= 0:
        raise DomainError("bounds must be positive")
    sg = np.sign(J[0]) * np.sign(J[1])
    if sg == 0:
        return 0.0
    i1 = abs(I[0])
    pi = np.pi
    s = np.hypot(A1, A2)
    pre = sg * B2 * pi**2 * np.sqrt(J[0] ** 2 / B1**2 + J[1] ** 2 / B2**2) * i1 / (48.0 * A1**2)
    Lg = np.log(1.0 + 2.0 * A2 * (A2 + s) / A1**2)
    t1 = 2 * A1 * (B1**2 + B2**2) * (-2 * A1**3 + 2 * A1**2 * s + A1 * A2 * s + 2 * A2**2 * (-A2 + s))
    t2 = -2 * A1 * A2**3 * (B1**2 * np.arctanh(A1 / s) + 2 * B2**2 * (np.log(A2) - np.log(A1 + s)))
    t3 = -3 * B1 * (B1 + B2) * pi * i1 * (
        2 * A1 * s + 2 * A2 * s - 2 * A2**2 * (1 + np.log(A2) - np.log(A1 + s))
        + A1**2 * (-2 + Lg) + A1**4 * (2 * B1**2 - B2**2) * Lg
    )
    return float(pre * (t1 + t2 + t3))


def reduced_lambda_alpha(I_reduced, domain: MarketDomain, d_ref) -> float:
    """Eigenvalue of the self-financing reduced operator at frozen D = d_ref.

    sqrt(sum_{l<N} pi^2 I_l^2 (1 + (d_l/d_N)^2) / A_l^2); zero for N = 1.
    """
    n = domain.n_assets
    d_ref = np.asarray(d_ref, dtype=float)
    if d_ref.size != n:
        raise DomainError("d_ref has the wrong length")
    if d_ref[-1] == 0:
        raise ZeroDenominator("d_N = 0")
    if n == 1:
        return 0.0
    I = np.array(_idx(I_reduced, n - 1, "I_reduced"), dtype=float)
    _check_I(tuple(I.astype(int)))
    stretch = 1.0 + (d_ref[:-1] / d_ref[-1]) ** 2
    return float(np.pi * np.sqrt(np.sum(I**2 * stretch / domain.A[:-1] ** 2)))


def hamilton_symbol(I, J, domain: MarketDomain, q: MarketPoint, sign: int = 1) -> float:
    """Lambda_IJ(q) = lam_b (x.e/|x|^2) [(-lam_a^2 e.D + lam_a x.D)/2 - x.(rD)]."""
    n2 = float(q.x @ q.x)
    if n2 == 0:
        raise ZeroNominalVector("|x| = 0")
    la = sign * alpha_eigenvalue(I, domain)
    lb = beta_eigenvalue(J, domain)
    if lb == 0.0:
        return 0.0
    return float(lb * q.x.sum() / n2 * (0.5 * (-la**2 * q.d.sum() + la * (q.x @ q.d)) - q.x @ (q.r * q.d)))


def hamilton_apply(I, J, k, domain: MarketDomain, q: MarketPoint, r_basis=None, sign: int = 1) -> complex:
    """Pointwise image Lambda_IJ(q) phi_IJk(q) of a basis function under H.

    `r_basis(k, r)` evaluates the r-factor; the constant 1 by default.
    """
    gam = 1.0 if r_basis is None else r_basis(k, q.r)
    phi = alpha_eigenvector(I, domain, q.x) * beta_eigenvector(J, domain, q.d) * gam
    return hamilton_symbol(I, J, domain, q, sign) * phi


def enumerate_indices(n: int, i_max: int, j_max: int, j_min: int = None):
    """(I, J) pairs with 1 <= I_l <= i_max and j_min <= J_l <= j_max.

    Ordered by total degree sum I + sum |J|, then lexicographically.
    """
    j_min = -j_max if j_min is None else j_min
    Is = itertools.product(range(1, i_max + 1), repeat=n)
    Js = list(itertools.product(range(j_min, j_max + 1), repeat=n))
    pairs = [(I, J) for I in Is for J in Js]
    pairs.sort(key=lambda p: (sum(p[0]) + sum(abs(j) for j in p[1]), p[0], p[1]))
    return pairs


@dataclass(frozen=True)
class EigenRow:
    I: tuple
    J: tuple
    data: EigenData
    closed_form: float = None

    @property
    def relative_deviation(self):
        if self.closed_form is None:
            return None
        if self.data.lambda_IJ == 0.0:
            return 0.0 if self.closed_form == 0.0 else float("inf")
        return abs(self.closed_form - self.data.lambda_IJ) / abs(self.data.lambda_IJ)


def eigen_table(domain: MarketDomain, pairs, spec: QuadratureSpec = QuadratureSpec(),
                sign: int = 1, threads: int = 1):
    """EigenRow per (I, J) in the given order.

    N = 1 rows are exact zeros (the reduced operator vanishes).  N = 2 rows
    also carry the closed-form value.
    """
    n = domain.n_assets

    def row(p):
        I, J = p
        if n == 1:
            _check_I(_idx(I, 1))
            d = EigenData(alpha_eigenvalue(I, domain), beta_eigenvalue(J, domain), 0.0, 0.0, True, ())
            return EigenRow(tuple(I), tuple(J), d)
        d = lambda_IJ_quadrature(I, J, domain, spec, sign)
        cf = lambda_IJ_closed_form_N2(I, J, domain.A, domain.B) if n == 2 else None
        return EigenRow(tuple(I), tuple(J), d, cf)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(row, pairs))
    return [row(p) for p in pairs]


@dataclass(frozen=True)
class NupbrVerdict:
    holds: bool
    violators: tuple  # (I, J, lambda_IJ)
    not_converged: tuple


def nupbr_check(domain: MarketDomain, index_cutoff, tol: float,
                spec: QuadratureSpec = QuadratureSpec(), sign: int = 1, threads: int = 1) -> NupbrVerdict:
    """NUPBR screen: all enumerated eigenvalues within tol of zero.

    Parameters
    ----------
    domain : MarketDomain
    index_cutoff : (int, int)
        (I_max, J_max); J ranges over [-J_max, J_max].
    tol : float
    """
    i_max, j_max = index_cutoff
    if i_max < 1 or j_max < 1:
        raise DomainError("cutoffs must be >= 1")
    rows = eigen_table(domain, enumerate_indices(domain.n_assets, i_max, j_max), spec, sign, threads)
    bad = tuple((r.I, r.J, r.data.lambda_IJ) for r in rows if not abs(r.data.lambda_IJ) <= tol)
    nc = tuple((r.I, r.J) for r in rows if not r.data.converged)
    return NupbrVerdict(len(bad) == 0, bad, nc)
