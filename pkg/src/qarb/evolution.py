"""Truncated spectral states, Schroedinger propagation and moment calculus.

States are coefficient tensors over products of per-axis plane waves: one
axis per nominal x_l (Dirichlet index I_l) and one per deflator D_l
(Neumann index J_l).  The Hamilton operator is diagonal in this basis, so
propagation multiplies each coefficient by a phase.  The short-rate factor
is carried as an inert marginal density.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
import itertools
import warnings

import numpy as np

from .errors import (
    DimensionMismatch,
    DomainError,
    MissingEigenvalue,
    NonOrthogonalTruncation,
    OutOfDomainWarning,
    TruncationTooSmall,
)
from .market import MarketDomain, MarketPoint
from .quadrature import QuadratureSpec
from . import spectral

TWO_PI_LD = 2 * np.longdouble("3.141592653589793238462643383279502884")


# --------------------------------------------------------------------------
# truncations


@dataclass(frozen=True)
class Truncation:
    """Per-axis index lists; axes are x_1..x_N then D_1..D_N.

    Plane waves on one axis are orthogonal exactly when their indices share
    parity, so each list must be single-parity.
    """

    x_indices: tuple
    d_indices: tuple

    def __post_init__(self):
        xs = tuple(tuple(int(i) for i in ax) for ax in self.x_indices)
        ds = tuple(tuple(int(j) for j in ax) for ax in self.d_indices)
        if len(xs) != len(ds) or not xs:
            raise DomainError("need matching, nonempty x and d axis lists")
        for ax in xs + ds:
            if len(ax) == 0 or len(set(ax)) != len(ax):
                raise DomainError("axis index lists must be nonempty and distinct")
            if len({i % 2 for i in ax}) != 1:
                raise NonOrthogonalTruncation(f"mixed-parity index list {ax}")
        for ax in xs:
            if min(ax) < 1:
                raise DomainError("nominal indices must be >= 1")
        object.__setattr__(self, "x_indices", xs)
        object.__setattr__(self, "d_indices", ds)

    @classmethod
    def default(cls, domain: MarketDomain, i_max: int = 8, j_max: int = 8, max_states: int = 5000):
        """Odd I in [1, i_max] and even J in [-j_max, j_max] on every axis.

        j_max is lowered (in steps of 2) until the product fits max_states.
        """
        n = domain.n_assets
        xi = tuple(range(1, i_max + 1, 2))
        while True:
            dj = tuple(range(-(j_max - j_max % 2), j_max + 1, 2))
            if len(xi) ** n * len(dj) ** n <= max_states or j_max < 2:
                break
            j_max -= 2
        return cls((xi,) * n, (dj,) * n)

    @classmethod
    def around(cls, domain: MarketDomain, x_centers, half_width: int, d_half_width: int):
        """Odd I within half_width odd steps of each x center; even J near 0."""
        xs = []
        for c in np.atleast_1d(x_centers):
            c = int(c) | 1
            lo = max(1, c - 2 * half_width)
            xs.append(tuple(range(lo, c + 2 * half_width + 1, 2)))
        dj = tuple(range(-2 * d_half_width, 2 * d_half_width + 1, 2))
        return cls(tuple(xs), (dj,) * domain.n_assets)

    @property
    def n_assets(self) -> int:
        return len(self.x_indices)

    @property
    def axes(self) -> tuple:
        return self.x_indices + self.d_indices

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def labels(self):
        """(I, J) per flattened entry, in C order."""
        n = self.n_assets
        return [(c[:n], c[n:]) for c in itertools.product(*self.axes)]

    def position(self, I, J):
        try:
            return tuple(ax.index(v) for ax, v in zip(self.axes, tuple(I) + tuple(J)))
        except ValueError:
            raise DomainError(f"index {(I, J)} not in truncation") from None


def plane_wave_overlap(m: int) -> complex:
    """(1/L) int_0^L exp(i pi m y / L) dy for integer m."""
    if m == 0:
        return 1.0 + 0j
    if m % 2 == 0:
        return 0j
    return 2j / (np.pi * m)


# --------------------------------------------------------------------------
# short-rate marginal


@dataclass(frozen=True)
class RMarginal:
    """Independent per-asset short-rate laws: ('point', v), ('uniform', lo, hi), ('normal', m, s)."""

    laws: tuple

    def __post_init__(self):
        laws = tuple(tuple(l) for l in self.laws)
        for l in laws:
            if l[0] not in ("point", "uniform", "normal"):
                raise DomainError(f"unknown r law {l[0]!r}")
            if l[0] == "uniform" and not l[2] > l[1]:
                raise DomainError("uniform r law needs hi > lo")
            if l[0] == "normal" and not l[2] > 0:
                raise DomainError("normal r law needs sd > 0")
        object.__setattr__(self, "laws", laws)

    @classmethod
    def point(cls, values):
        return cls(tuple(("point", float(v)) for v in np.atleast_1d(values)))

    def mean(self) -> np.ndarray:
        out = []
        for l in self.laws:
            out.append(l[1] if l[0] in ("point", "normal") else 0.5 * (l[1] + l[2]))
        return np.array(out, dtype=float)

    def variance(self) -> np.ndarray:
        out = []
        for l in self.laws:
            out.append(0.0 if l[0] == "point" else l[2] ** 2 if l[0] == "normal" else (l[2] - l[1]) ** 2 / 12.0)
        return np.array(out, dtype=float)

    def cdf(self, r0) -> float:
        """P[r_j <= r0_j for all j]."""
        from math import erf, sqrt

        r0 = np.broadcast_to(np.asarray(r0, dtype=float), (len(self.laws),))
        p = 1.0
        for l, v in zip(self.laws, r0):
            if l[0] == "point":
                p *= 1.0 if v >= l[1] else 0.0
            elif l[0] == "uniform":
                p *= float(np.clip((v - l[1]) / (l[2] - l[1]), 0.0, 1.0))
            else:
                p *= 1.0 if v == np.inf else 0.5 * (1.0 + erf((v - l[1]) / (l[2] * sqrt(2.0))))
        return p

    def sample(self, rng, m: int) -> np.ndarray:
        cols = []
        for l in self.laws:
            if l[0] == "point":
                cols.append(np.full(m, l[1]))
            elif l[0] == "uniform":
                cols.append(l[1] + (l[2] - l[1]) * rng.random(m))
            else:
                cols.append(l[1] + l[2] * rng.standard_normal(m))
        return np.column_stack(cols)


# --------------------------------------------------------------------------
# eigenvalues and states


def eigenvalue_tensor(domain: MarketDomain, trunc: Truncation, spec: QuadratureSpec = QuadratureSpec(),
                      sign: int = 1) -> np.ndarray:
    """lambda_IJ on the truncation grid (separable form, zero for N = 1)."""
    n = domain.n_assets
    if trunc.n_assets != n:
        raise DimensionMismatch("truncation and domain disagree on N")
    if n == 1:
        return np.zeros(trunc.shape)
    A, B = domain.A, domain.B
    grids = np.meshgrid(*[np.asarray(a, dtype=float) for a in trunc.axes], indexing="ij")
    I = np.stack(grids[:n])
    J = np.stack(grids[n:])
    la = sign * np.pi * np.sqrt(sum((I[l] / A[l]) ** 2 for l in range(n)))
    lb = np.prod(np.sign(J), axis=0) * np.pi * np.sqrt(sum((J[l] / B[l]) ** 2 for l in range(n)))
    m0, m, _ = spectral.nominal_moments(domain, spec)
    lam = la * lb / (4.0 * np.prod(A)) * (B @ m - la * B.sum() * m0)
    return np.where(lb == 0, 0.0, lam)


@dataclass(frozen=True)
class SpectralState:
    """Coefficient tensor over a truncation, plus its eigenvalues and r-marginal."""

    domain: MarketDomain
    truncation: Truncation
    coeffs: np.ndarray
    eigenvalues: np.ndarray
    r_marginal: RMarginal = None
    t: float = 0.0
    captured_mass: float = None

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.truncation.shape:
            raise DimensionMismatch(f"coeffs shape {c.shape} != truncation {self.truncation.shape}")
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.shape != c.shape:
            raise MissingEigenvalue("eigenvalue tensor does not cover the truncation")
        if np.any(np.isnan(lam)):
            raise MissingEigenvalue("eigenvalue missing for an active index")
        rm = self.r_marginal or RMarginal.point(np.zeros(self.domain.n_assets))
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "r_marginal", rm)

    # construction -------------------------------------------------------
    @classmethod
    def from_coeffs(cls, domain, trunc, coeffs, r_marginal=None, eigenvalues=None,
                    spec: QuadratureSpec = QuadratureSpec(), sign: int = 1, normalize=True):
        """Build a state; `eigenvalues` may be a tensor or a dict {(I, J): lambda}."""
        if eigenvalues is None:
            lam = eigenvalue_tensor(domain, trunc, spec, sign)
        elif isinstance(eigenvalues, dict):
            lam = np.empty(trunc.shape)
            for pos, (I, J) in zip(np.ndindex(*trunc.shape), trunc.labels()):
                key = (tuple(I), tuple(J))
                if key not in eigenvalues:
                    raise MissingEigenvalue(f"no eigenvalue for {key}")
                lam[pos] = eigenvalues[key]
        else:
            lam = eigenvalues
        st = cls(domain, trunc, coeffs, lam, r_marginal)
        return st.normalize() if normalize else st

    @classmethod
    def basis(cls, domain, trunc, I, J, **kw):
        c = np.zeros(trunc.shape, dtype=complex)
        c[trunc.position(I, J)] = 1.0
        return cls.from_coeffs(domain, trunc, c, **kw)

    @classmethod
    def random(cls, domain, trunc, rng, **kw):
        c = rng.standard_normal(trunc.shape) + 1j * rng.standard_normal(trunc.shape)
        return cls.from_coeffs(domain, trunc, c, **kw)

    # basics -------------------------------------------------------------
    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.coeffs, self.coeffs).real))

    def normalize(self) -> "SpectralState":
        nrm = self.norm()
        if nrm == 0:
            raise DomainError("zero state")
        return replace(self, coeffs=self.coeffs / nrm)

    def with_coeffs(self, coeffs, t=None) -> "SpectralState":
        return replace(self, coeffs=coeffs, t=self.t if t is None else t)

    def rows(self):
        """(I, J, c) for every truncation entry."""
        return [(I, J, self.coeffs[pos]) for pos, (I, J) in zip(np.ndindex(*self.truncation.shape), self.truncation.labels())]

    def evaluate(self, x, d) -> np.ndarray:
        """psi at batched points x, d of shape (M, N), r-factor omitted."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = np.atleast_2d(np.asarray(d, dtype=float))
        n = self.domain.n_assets
        bounds = np.concatenate([self.domain.A, self.domain.B])
        ys = np.concatenate([x, d], axis=1)
        out = np.broadcast_to(self.coeffs, (ys.shape[0],) + self.coeffs.shape)
        for ax in range(2 * n):
            L = bounds[ax]
            idx = np.asarray(self.truncation.axes[ax], dtype=float)
            phi = np.exp(-1j * np.pi * np.outer(ys[:, ax], idx) / L) / np.sqrt(L)
            out = np.einsum("mk,mk...->m...", phi, out)
        return out


def phases(lam: np.ndarray, t: float) -> np.ndarray:
    """exp(i lam t), with lam*t reduced mod 2 pi in extended precision."""
    theta = np.mod(lam.astype(np.longdouble) * np.longdouble(t), TWO_PI_LD).astype(float)
    return np.cos(theta) + 1j * np.sin(theta)


def evolve(state: SpectralState, t: float) -> SpectralState:
    """Propagate by time t: c_IJ -> exp(i lambda_IJ t) c_IJ.

    The r-marginal is unchanged and the norm is preserved.
    """
    if t == 0:
        return state
    return state.with_coeffs(state.coeffs * phases(state.eigenvalues, t), t=state.t + t)


# --------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class ObservableMatrix:
    """Operator on truncated coefficient tensors.

    kind 'local' acts on one tensor axis with `entries` (n_axis x n_axis);
    'dense' acts on the flattened tensor; 'scalar' is a multiple of the
    identity (used for the identity and for short-rate observables, which
    only see the inert r-marginal).
    """

    kind: str
    entries: np.ndarray
    axis: int = None
    labels: tuple = ()
    hermitian: bool = False

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=complex)
        if self.kind not in ("local", "dense", "scalar"):
            raise DomainError(f"unknown observable kind {self.kind!r}")
        if self.kind == "local" and self.axis is None:
            raise DomainError("local observables need an axis")
        if self.kind != "scalar" and (e.ndim != 2 or e.shape[0] != e.shape[1]):
            raise DimensionMismatch("observable matrix must be square")
        if self.hermitian and self.kind != "scalar" and not np.allclose(e, e.conj().T, rtol=0, atol=1e-12):
            raise DomainError("matrix flagged hermitian is not")
        if self.hermitian and self.kind == "scalar" and abs(complex(e).imag) > 1e-12:
            raise DomainError("hermitian scalar must be real")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    def apply(self, c: np.ndarray) -> np.ndarray:
        if self.kind == "scalar":
            return complex(self.entries) * c
        if self.kind == "dense":
            if self.entries.shape[0] != c.size:
                raise DimensionMismatch("dense observable does not match the state size")
            return (self.entries @ c.reshape(-1)).reshape(c.shape)
        if self.axis >= c.ndim or c.shape[self.axis] != self.entries.shape[0]:
            raise DimensionMismatch("local observable does not match the state axis")
        return np.moveaxis(np.tensordot(self.entries, c, axes=(1, self.axis)), 0, self.axis)

    def adjoint(self) -> "ObservableMatrix":
        e = np.conj(self.entries) if self.kind == "scalar" else self.entries.conj().T
        return replace(self, entries=e)

    def scaled(self, s) -> "ObservableMatrix":
        return replace(self, entries=self.entries * s, hermitian=self.hermitian and np.isreal(s))

    def power(self, k: int) -> "ObservableMatrix":
        if self.kind == "scalar":
            return replace(self, entries=complex(self.entries) ** k)
        return replace(self, entries=np.linalg.matrix_power(self.entries, k))


def _axis(block: str, component: int, n: int) -> int:
    if block not in ("x", "d"):
        raise DomainError("block must be 'x' or 'd'")
    if not 0 <= component < n:
        raise DomainError(f"component {component} out of range")
    return component if block == "x" else n + component


def position_matrix_1d(indices, L: float) -> np.ndarray:
    """<phi_a| y |phi_b> = (1/L) int_0^L y exp(i pi (a - b) y / L) dy."""
    idx = np.asarray(indices)
    n = idx.size
    X = np.empty((n, n), dtype=complex)
    for a in range(n):
        X[a, a] = 0.5 * L
        for b in range(a + 1, n):
            m = int(idx[a] - idx[b])
            k = np.pi * m / L
            s = -1.0 if m % 2 else 1.0
            X[a, b] = s / (1j * k) + (s - 1.0) / (k * k * L)
            X[b, a] = np.conj(X[a, b])
    return X


def position_operator_matrix(block: str, component: int, domain: MarketDomain, trunc: Truncation) -> ObservableMatrix:
    """Multiplication by x_l (block 'x') or D_l (block 'd') in the truncated basis."""
    ax = _axis(block, component, domain.n_assets)
    L = domain.A[component] if block == "x" else domain.B[component]
    idx = trunc.axes[ax]
    return ObservableMatrix("local", position_matrix_1d(idx, L), ax, tuple(idx), True)


def momentum_operator_matrix(block: str, component: int, domain: MarketDomain, trunc: Truncation) -> ObservableMatrix:
    """Diagonal momentum pi I/A (x) or pi J/B (D) in the plane-wave basis."""
    ax = _axis(block, component, domain.n_assets)
    L = domain.A[component] if block == "x" else domain.B[component]
    idx = trunc.axes[ax]
    return ObservableMatrix("local", np.diag(np.pi * np.asarray(idx, dtype=float) / L), ax, tuple(idx), True)


def identity_observable() -> ObservableMatrix:
    return ObservableMatrix("scalar", np.array(1.0), hermitian=True)


def rate_observable(r_marginal: RMarginal, component: int) -> ObservableMatrix:
    """Short rate r_j as seen by the (x, D) coefficient calculus.

    The r-marginal is inert under evolution and commutes with H, so within
    the coefficient space r_j acts as the scalar E[r_j].  Its spread is a
    property of the marginal alone: use `RMarginal.variance`.
    """
    return ObservableMatrix("scalar", np.array(r_marginal.mean()[component]), hermitian=True)


def function_of(obs: ObservableMatrix, f) -> ObservableMatrix:
    """f(A) for a hermitian observable via its eigendecomposition."""
    if not obs.hermitian:
        raise DomainError("function_of needs a hermitian observable")
    if obs.kind == "scalar":
        return replace(obs, entries=np.array(f(complex(obs.entries).real)), hermitian=True)
    w, V = np.linalg.eigh(obs.entries)
    M = (V * f(w)) @ V.conj().T
    return replace(obs, entries=0.5 * (M + M.conj().T))


def _check(state: SpectralState, obs: ObservableMatrix):
    if obs.kind == "local" and (obs.axis >= state.coeffs.ndim or state.coeffs.shape[obs.axis] != obs.entries.shape[0]):
        raise DimensionMismatch("observable does not match the state truncation")
    if obs.kind == "dense" and obs.entries.shape[0] != state.coeffs.size:
        raise DimensionMismatch("observable does not match the state size")


def expectation(state: SpectralState, obs: ObservableMatrix):
    """(A psi, psi); real for hermitian observables."""
    _check(state, obs)
    val = np.vdot(state.coeffs, obs.apply(state.coeffs)) / np.vdot(state.coeffs, state.coeffs).real
    return float(val.real) if obs.hermitian else complex(val)


def variance(state: SpectralState, obs: ObservableMatrix) -> float:
    """(A^2 psi, psi) - (A psi, psi)^2 for hermitian A."""
    _check(state, obs)
    if obs.kind == "scalar":
        return 0.0
    c = state.coeffs
    nrm = np.vdot(c, c).real
    ac = obs.apply(c)
    m = np.vdot(c, ac).real / nrm
    return float(max(np.vdot(ac, ac).real / nrm - m * m, 0.0))


def diagonal_mean_dynamics(state: SpectralState):
    """Diagonal moment formula sum |c|^2 (q phi, phi) / sum |c|^2.

    The plane-wave diagonal elements are A_l/2 and B_l/2, so the result
    does not depend on the coefficients or on time.

    Returns
    -------
    ex, ed : ndarray, shape (N,)
    er : ndarray, shape (N,)
        Mean of the r-marginal.
    """
    n = state.domain.n_assets
    p = np.abs(state.coeffs) ** 2
    tot = p.sum()
    out = []
    for block in ("x", "d"):
        vals = []
        for l in range(n):
            X = position_operator_matrix(block, l, state.domain, state.truncation)
            diag = np.real(np.diag(X.entries))
            marg = np.sum(p, axis=tuple(a for a in range(2 * n) if a != X.axis))
            vals.append(float(diag @ marg / tot))
        out.append(np.array(vals))
    return out[0], out[1], state.r_marginal.mean()


def uniform_law_cdf(q0: MarketPoint, domain: MarketDomain, r_marginal: RMarginal) -> float:
    """(prod x0_l / A_l)(prod D0_l / B_l) P[r <= r0], clamping to the cuboid."""
    x = np.asarray(q0.x, dtype=float)
    d = np.asarray(q0.d, dtype=float)
    xc = np.clip(x, 0, domain.A)
    dc = np.clip(d, 0, domain.B)
    if np.any(xc != x) or np.any(dc != d):
        warnings.warn("q0 outside the cuboid; clamped", OutOfDomainWarning, stacklevel=2)
    return float(np.prod(xc / domain.A) * np.prod(dc / domain.B) * r_marginal.cdf(q0.r))


def serial_cross_moment(state: SpectralState, f_obs: ObservableMatrix, g_obs: ObservableMatrix,
                        t: float, t1: float, t2: float) -> complex:
    """(e^{iH(t1-t)} f^dag e^{iH(t2-t1)} g e^{-iH(t2-t)} psi_t, psi_t).

    psi_t is the state propagated to time t.  H is diagonal, so every
    exponential is a phase tensor.
    """
    if t1 < t or t2 < t:
        raise DomainError("need t <= t1 and t <= t2")
    _check(state, f_obs)
    _check(state, g_obs)
    lam = state.eigenvalues
    psi = evolve(state, t - state.t).coeffs if t != state.t else state.coeffs
    v = phases(lam, -(t2 - t)) * psi
    v = g_obs.apply(v)
    v = phases(lam, t2 - t1) * v
    v = f_obs.adjoint().apply(v)
    v = phases(lam, t1 - t) * v
    return complex(np.vdot(psi, v))


def commutator_apply(a: ObservableMatrix, b: ObservableMatrix, c: np.ndarray) -> np.ndarray:
    return a.apply(b.apply(c)) - b.apply(a.apply(c))


@dataclass(frozen=True)
class HeisenbergResult:
    lhs: float
    rhs: float
    satisfied: bool
    commutator_norm: float
    edge_case: bool
    var_q: float
    var_p: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else float("inf")


def heisenberg_check(state: SpectralState, block: str, component: int, rtol: float = 1e-6,
                     strict: bool = False) -> HeisenbergResult:
    """sigma^2(q) sigma^2(p) against (1/4) ||[q, p] psi||^2.

    `edge_case` marks momentum eigenstates (zero momentum variance), where
    the finite basis cannot represent the commutator faithfully.  With
    strict=True a commutator norm more than 10% away from 1 raises
    TruncationTooSmall.
    """
    q = position_operator_matrix(block, component, state.domain, state.truncation)
    p = momentum_operator_matrix(block, component, state.domain, state.truncation)
    c = state.coeffs / state.norm()
    vq, vp = variance(state, q), variance(state, p)
    cn = float(np.linalg.norm(commutator_apply(q, p, c)))
    lhs = vq * vp
    rhs = 0.25 * cn * cn
    scale = float(np.max(np.abs(np.diag(p.entries)))) ** 2
    edge = vp <= 1e-14 * max(scale, 1.0)
    if strict and abs(cn - 1.0) > 0.1:
        raise TruncationTooSmall(f"commutator norm {cn:.4f} deviates from 1 by more than 10%")
    return HeisenbergResult(lhs, rhs, lhs >= rhs * (1.0 - rtol), cn, edge, vq, vp)


def hamiltonian_observable(state: SpectralState) -> ObservableMatrix:
    return ObservableMatrix("dense", np.diag(state.eigenvalues.reshape(-1).astype(complex)), hermitian=True)


def ehrenfest_residual(state: SpectralState, obs: ObservableMatrix, t: float, h: float) -> float:
    """|centered d/dt <A>_t - i <[A, H]>_t| for the propagation used by evolve.

    With psi_t = exp(iHt) psi_0 the time derivative of <A> is i <[A, H]>.
    """
    if not h > 0:
        raise DomainError("h must be positive")
    lam = state.eigenvalues
    fp = expectation(evolve(state, t + h), obs)
    fm = expectation(evolve(state, t - h), obs)
    c = evolve(state, t).coeffs
    c = c / np.sqrt(np.vdot(c, c).real)
    comm = obs.apply(lam * c) - lam * obs.apply(c)
    rhs = 1j * np.vdot(c, comm)
    return float(abs((fp - fm) / (2 * h) - rhs))


# --------------------------------------------------------------------------
# wavepackets and sampling


def _composite_gl(L: float, panels: int = 64, order: int = 16):
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, L, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    y = (mid[:, None] + half[:, None] * t[None, :]).reshape(-1)
    wy = (half[:, None] * w[None, :]).reshape(-1)
    return y, wy


def packet_coefficients_1d(center: float, width: float, L: float, indices, carrier: float):
    """Coefficients of exp(-(y-c)^2/(4 w^2)) exp(-i pi carrier y / L) on one axis.

    Returns
    -------
    coeffs : ndarray
    captured : float
        Fraction of the packet's L2 mass on [0, L] held by the truncation.
    """
    y, wy = _composite_gl(L)
    g = np.exp(-((y - center) ** 2) / (4 * width**2)) * np.exp(-1j * np.pi * carrier * y / L)
    idx = np.asarray(indices, dtype=float)
    basis = np.exp(1j * np.pi * np.outer(idx, y) / L) / np.sqrt(L)
    c = basis @ (wy * g)
    mass = float(wy @ np.abs(g) ** 2)
    return c, float(np.sum(np.abs(c) ** 2) / mass)


def from_wavepacket(center: MarketPoint, widths, domain: MarketDomain, trunc: Truncation,
                    carrier=None, r_marginal=None, min_capture: float = 0.99, **kw) -> SpectralState:
    """Product Gaussian packet projected onto the truncation, normalized.

    Parameters
    ----------
    center : MarketPoint
        Interior point; x and d give the packet centers.
    widths : float or array_like, shape (2N,)
        Position standard deviations of |psi|^2 per axis.
    carrier : array_like, shape (2N,), optional
        Mean index per axis (momentum pi*carrier/L).  Defaults to the
        middle of each axis index list.

    Raises
    ------
    TruncationTooSmall
        If the truncation holds less than `min_capture` of the mass.
    """
    n = domain.n_assets
    if not (domain.contains(center.x) and domain.contains(d=center.d)):
        raise DomainError("packet center must be inside the cuboid")
    w = np.broadcast_to(np.asarray(widths, dtype=float), (2 * n,))
    if np.any(w <= 0):
        raise DomainError("widths must be positive")
    bounds = np.concatenate([domain.A, domain.B])
    pos = np.concatenate([center.x, center.d])
    if carrier is None:
        carrier = [ax[len(ax) // 2] for ax in trunc.axes]
    carrier = np.broadcast_to(np.asarray(carrier, dtype=float), (2 * n,))
    c = np.array(1.0 + 0j)
    captured = 1.0
    for ax in range(2 * n):
        ca, cap = packet_coefficients_1d(pos[ax], w[ax], bounds[ax], trunc.axes[ax], carrier[ax])
        c = np.multiply.outer(c, ca)
        captured *= cap
    if captured < min_capture:
        raise TruncationTooSmall(f"truncation captures {captured:.4f} of the packet mass")
    st = SpectralState.from_coeffs(domain, trunc, c, r_marginal=r_marginal, **kw)
    return replace(st, captured_mass=captured)


def sample_density(state: SpectralState, m: int, rng, batch: int = 8192):
    """Draw (x, d, r) from |psi|^2 times the r-marginal by rejection.

    The proposal is uniform on the cuboid; |psi|^2 is bounded by
    (sum |c|)^2 / volume.
    """
    dom = state.domain
    n = dom.n_assets
    vol = float(np.prod(dom.A) * np.prod(dom.B))
    c = state.coeffs / state.norm()
    bound = float(np.sum(np.abs(c))) ** 2 / vol
    xs, ds = [], []
    got = 0
    while got < m:
        x = rng.random((batch, n)) * dom.A
        d = rng.random((batch, n)) * dom.B
        dens = np.abs(state.with_coeffs(c).evaluate(x, d)) ** 2
        keep = rng.random(batch) * bound <= dens
        xs.append(x[keep])
        ds.append(d[keep])
        got += int(keep.sum())
    x = np.concatenate(xs)[:m]
    d = np.concatenate(ds)[:m]
    return x, d, state.r_marginal.sample(rng, m)


@dataclass(frozen=True)
class MomentRow:
    t: float
    e_x: np.ndarray
    e_d: np.ndarray
    var_x: np.ndarray
    var_d: np.ndarray
    diag_x: np.ndarray
    diag_d: np.ndarray


def moment_series(state: SpectralState, times) -> list:
    """Exact and diagonal-formula moments of x and D along a time list."""
    n = state.domain.n_assets
    xs = [position_operator_matrix("x", l, state.domain, state.truncation) for l in range(n)]
    dsm = [position_operator_matrix("d", l, state.domain, state.truncation) for l in range(n)]
    out = []
    for t in times:
        st = evolve(state, t)
        dx, dd, _ = diagonal_mean_dynamics(st)
        out.append(MomentRow(
            float(t),
            np.array([expectation(st, o) for o in xs]),
            np.array([expectation(st, o) for o in dsm]),
            np.array([variance(st, o) for o in xs]),
            np.array([variance(st, o) for o in dsm]),
            dx, dd,
        ))
    return out
