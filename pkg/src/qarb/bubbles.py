"""Fundamental values, asset and claim bubbles, and bubble statistics.

Prices S are the deflator block of an ensemble.  Starred expectations use
a user-supplied nonnegative Radon-Nikodym weight phi: E*[Z] = E[phi Z].
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DomainError, InconsistentSpec, InsufficientPaths, NegativeWeight, PayoffOverflow


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo value with its standard error (arrays of equal shape)."""

    value: np.ndarray
    stderr: np.ndarray

    def __iter__(self):
        return iter((self.value, self.stderr))


def _mean_se(z, axis=0):
    z = np.asarray(z, dtype=float)
    m = z.shape[axis]
    if m < 2:
        raise InsufficientPaths("need at least two samples")
    return z.mean(axis=axis), z.std(axis=axis, ddof=1) / np.sqrt(m)


@dataclass(frozen=True)
class RadonNikodymWeight:
    """Nonnegative weight phi standing in for dP*/dP.

    `func` maps terminal prices of shape (M, N) to weights (M,); with
    on='path' it receives the whole ensemble instead.
    """

    func: object
    scale: float = 1.0
    on: str = "terminal"

    def __call__(self, arg) -> np.ndarray:
        w = self.scale * np.asarray(self.func(arg), dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise NegativeWeight("weight must be finite and nonnegative")
        return w

    def of_ensemble(self, ensemble, k: int = -1) -> np.ndarray:
        return self(ensemble) if self.on == "path" else self(ensemble.d[:, k])

    def normalized(self, sample) -> "RadonNikodymWeight":
        """Rescale so the sample mean of phi is exactly 1."""
        m = float(np.mean(self(sample)))
        if m <= 0:
            raise NegativeWeight("weight has zero mean")
        return RadonNikodymWeight(self.func, self.scale / m, self.on)

    @classmethod
    def one(cls):
        return cls(lambda s: np.ones(np.shape(s)[0]))


def _rate_matrix(ensemble, r0) -> np.ndarray:
    if callable(r0):
        rates = np.array([r0(s) for s in ensemble.grid.times], dtype=float)
    else:
        rates = np.asarray(r0, dtype=float)
    return np.broadcast_to(rates, (ensemble.n_paths, ensemble.n_times))


def _cum_discount(ensemble, r0, k0, k1) -> np.ndarray:
    """exp(-int_t^u r0) at grid times u = k0..k1 (left Riemann sums)."""
    rates = _rate_matrix(ensemble, r0)
    c = np.cumsum(ensemble.grid.step * rates[:, k0:k1], axis=1)
    return np.exp(-np.concatenate([np.zeros((ensemble.n_paths, 1)), c], axis=1))


def discount_factors(ensemble, r0, t: float, tau: float) -> np.ndarray:
    """exp(-int_t^tau r0) per path.

    r0 may be a float, a callable of time, an array over the grid, or an
    array of shape (n_paths, n_times).
    """
    g = ensemble.grid
    return _cum_discount(ensemble, r0, g.index(t), g.index(tau))[:, -1]


def fundamental_value_assets(ensemble, phi: RadonNikodymWeight, r0, tau: float, t: float,
                             dividend_rate=None) -> MCEstimate:
    """Fundamental value E_t[phi (int_t^tau dC e^{-int r0} + S_tau e^{-int_t^tau r0})].

    Paths are taken to share their state at t.  Dividends accrue as
    dC_u = q_j S_u du (left Riemann sum) when `dividend_rate` q is given.

    Returns
    -------
    MCEstimate
        Per-asset values and standard errors.
    """
    if not t < tau:
        raise DomainError("need t < tau")
    g = ensemble.grid
    k0, k1 = g.index(t), g.index(tau)
    if ensemble.n_paths < 2:
        raise InsufficientPaths("need at least two paths")
    disc = _cum_discount(ensemble, r0, k0, k1)  # (M, k1-k0+1)
    s = ensemble.d
    y = s[:, k1] * disc[:, -1:]
    if dividend_rate is not None:
        q = np.broadcast_to(np.asarray(dividend_rate, dtype=float), (ensemble.n_assets,))
        flows = g.step * q * s[:, k0:k1] * disc[:, :-1, None]
        y = y + flows.sum(axis=1)
    w = phi.of_ensemble(ensemble, k1)
    return MCEstimate(*_mean_se(w[:, None] * y))


def asset_bubble(ensemble, S_t, phi, r0, tau, t, dividend_rate=None) -> MCEstimate:
    """Bubble S_t - S_t* per asset; the stderr is that of the fundamental value."""
    fv = fundamental_value_assets(ensemble, phi, r0, tau, t, dividend_rate)
    return MCEstimate(np.asarray(S_t, dtype=float) - fv.value, fv.stderr)


@dataclass(frozen=True)
class BubbleStats:
    mean: MCEstimate
    variance: MCEstimate
    empirical_variance: np.ndarray  # sample variance of Z - phi Z', for comparison


def _stats(z, zs, w) -> BubbleStats:
    """mean = E[z] - E[w zs]; variance = Var(z) + (E[w zs^2] - E[w zs]^2)."""
    z = np.asarray(z, dtype=float)
    zs = np.asarray(zs, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if zs.ndim == 1:
        zs = zs[:, None]
    w = np.asarray(w, dtype=float)[:, None]
    m = z.shape[0]
    if m < 2:
        raise InsufficientPaths("need at least two samples")
    wz, wz2 = w * zs, w * zs * zs
    m1, m2, w1, w2 = z.mean(0), (z * z).mean(0), wz.mean(0), wz2.mean(0)
    mean = MCEstimate(*_mean_se(z - wz))
    var = m2 - m1**2 + w2 - w1**2
    # delta-method influence of (m1, m2, w1, w2) on var
    infl = -2 * m1 * z + z * z - 2 * w1 * wz + wz2
    var_se = infl.std(axis=0, ddof=1) / np.sqrt(m)
    emp = (z - wz).var(axis=0, ddof=1)
    return BubbleStats(mean, MCEstimate(var, var_se), emp)


def bubble_discounted_stats(samples, phi) -> BubbleStats:
    """Mean and variance of discounted asset bubbles from terminal samples.

    Parameters
    ----------
    samples : array_like, shape (M, N)
        Discounted terminal prices under the statistical law.
    phi : RadonNikodymWeight or array_like, shape (M,)

    Returns
    -------
    BubbleStats
        mean_j = E[D_j] - E*[D_j] and variance_j = Var(D_j) + Var*(D_j),
        plus the sample variance of D_j - phi D_j for comparison.
    """
    s = np.atleast_2d(np.asarray(samples, dtype=float))
    if s.shape[0] == 1 and np.ndim(samples) == 1:
        s = s.T
    w = phi(s) if isinstance(phi, RadonNikodymWeight) else np.asarray(phi, dtype=float)
    if np.any(w < 0):
        raise NegativeWeight("weight must be nonnegative")
    return _stats(s, s, w)


# ----- claims


def _call(k):
    return lambda s: np.maximum(s - k, 0.0)


def _put(k):
    return lambda s: np.maximum(k - s, 0.0)


PAYOFFS = {
    "call": lambda strike=0.0: _call(strike),
    "put": lambda strike=0.0: _put(strike),
    "forward": lambda strike=0.0: (lambda s: s - strike),
    "identity": lambda strike=0.0: (lambda s: s),
    "constant": lambda strike=0.0: (lambda s: np.full_like(s, strike)),
}


@dataclass(frozen=True)
class ClaimSpec:
    """European claim on asset `asset`: payoff G(S_T^asset), maturity T."""

    payoff: object
    maturity: float
    asset: int = 0
    dividend_rate: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if not self.maturity > 0:
            raise DomainError("maturity must be positive")

    @classmethod
    def from_registry(cls, name, strike=0.0, maturity=1.0, asset=0, dividend_rate=0.0):
        if name not in PAYOFFS:
            raise DomainError(f"unknown payoff {name!r}")
        return cls(PAYOFFS[name](strike), maturity, asset, dividend_rate, name)

    def evaluate(self, s_T, t: float) -> np.ndarray:
        grown = np.asarray(s_T, dtype=float) * np.exp(self.dividend_rate * (self.maturity - t))
        with np.errstate(over="raise", invalid="raise"):
            try:
                v = np.asarray(self.payoff(grown), dtype=float)
            except FloatingPointError as exc:
                raise PayoffOverflow(str(exc)) from exc
        if not np.all(np.isfinite(v)):
            raise PayoffOverflow("payoff is not finite on the sample")
        return v


def claim_payoff_samples(ensemble, claim: ClaimSpec, phi, r0, t: float):
    """Per-path phi, discount and payoff used by the claim estimators."""
    g = ensemble.grid
    kT = g.index(claim.maturity)
    disc = discount_factors(ensemble, r0, t, claim.maturity)
    pay = claim.evaluate(ensemble.d[:, kT, claim.asset], t)
    return phi.of_ensemble(ensemble, kT), disc, pay


def claim_fundamental_value(ensemble, claim: ClaimSpec, phi, r0, t: float) -> MCEstimate:
    """E_t[phi e^{-int_t^T r0} G(S_T e^{q (T - t)})] by Monte Carlo."""
    if not t < claim.maturity:
        raise DomainError("need t < T")
    w, disc, pay = claim_payoff_samples(ensemble, claim, phi, r0, t)
    v, se = _mean_se(w * disc * pay)
    return MCEstimate(float(v), float(se))


def claim_bubble_stats(discounted_payoffs, phi, quoted_values) -> BubbleStats:
    """Mean E[V] - E*[G] and variance Var(V) + Var*(G) for a claim.

    Parameters
    ----------
    discounted_payoffs : array_like, shape (M,)
        Discounted payoff samples G-hat under the statistical law.
    phi : RadonNikodymWeight applied to nothing, or weights (M,)
    quoted_values : array_like, shape (M,)
        Discounted quoted claim values V-hat.
    """
    g = np.asarray(discounted_payoffs, dtype=float)
    v = np.asarray(quoted_values, dtype=float)
    w = np.asarray(phi, dtype=float)
    if np.any(w < 0):
        raise NegativeWeight("weight must be nonnegative")
    if not (g.shape == v.shape == w.shape):
        raise DomainError("payoff, quote and weight samples must align")
    st = _stats(v, g, w)
    return BubbleStats(MCEstimate(st.mean.value[0], st.mean.stderr[0]),
                       MCEstimate(st.variance.value[0], st.variance.stderr[0]),
                       st.empirical_variance[0])


def starred_mean_by_resampling(z, w, rng, m: int = None) -> MCEstimate:
    """E*[Z] by drawing indices with probability proportional to phi."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise NegativeWeight("weights must be nonnegative with positive sum")
    m = z.shape[0] if m is None else m
    pick = rng.choice(z.shape[0], size=m, p=w / w.sum())
    return MCEstimate(*_mean_se(z[pick]))


# ----- bubble types


class BubbleType(Enum):
    TYPE1 = 1
    TYPE2 = 2
    TYPE3 = 3


@dataclass(frozen=True)
class TauSpec:
    """Stopping-time descriptor: P[tau = inf] and whether tau is bounded."""

    p_infinite: float
    bounded: bool
    bound: float = None

    @classmethod
    def geometric(cls, p: float):
        if not 0 < p <= 1:
            raise DomainError("success probability must lie in (0, 1]")
        return cls(0.0, p == 1.0, 1.0 if p == 1.0 else None)

    @classmethod
    def fixed(cls, T: float):
        return cls(0.0, True, float(T))

    @classmethod
    def defective(cls, p_infinite: float):
        return cls(float(p_infinite), False)


def bubble_type_classify(tau: TauSpec) -> BubbleType:
    """Type 1 if P[tau = inf] > 0, type 3 if tau is bounded, else type 2."""
    p = tau.p_infinite
    if not 0 <= p <= 1:
        raise InconsistentSpec("P[tau = inf] must lie in [0, 1]")
    if tau.bounded and p > 0:
        raise InconsistentSpec("a bounded stopping time cannot be infinite")
    if tau.bound is not None and not tau.bounded:
        raise InconsistentSpec("bound given for an unbounded stopping time")
    if p > 0:
        return BubbleType.TYPE1
    return BubbleType.TYPE3 if tau.bounded else BubbleType.TYPE2
