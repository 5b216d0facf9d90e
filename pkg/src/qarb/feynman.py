"""Constrained path-integral propagator and Guerra-Morato tools.

Paths move at unit speed in the diffusion metric q'^T (sigma sigma^T) q' = 1
and stay self-financing, x'.D = 0.  Each path carries the phase
exp(i int x.(D' + rD)/(x.D) ds); terminal fields are Monte Carlo averages
of start amplitudes times these phases.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import numpy as np

from .errors import DegenerateMetric, DomainError, InsufficientPaths, SingularDiffusion, ZeroDenominator
from .market import MarketPoint
from .rng import BLOCK_SIZE, block_generator, blocks

LANE_PATHS = 2


# --------------------------------------------------------------------------
# pointwise quantities


def gat_potentials(q: MarketPoint, sigma_D):
    """Scalar and vector potentials of the market diffusion.

    Returns
    -------
    Phi : float
        -x.(rD)/(x.D) - 1/2.
    A_D : ndarray, shape (N,)
        -(sigma_D sigma_D^T)^{-1} x / (x.D).  The x and r components vanish.
    """
    xd = float(q.x @ q.d)
    if xd == 0:
        raise ZeroDenominator("x.D vanishes")
    s = np.atleast_2d(np.asarray(sigma_D, dtype=float))
    G = s @ s.T
    if G.shape != (q.x.size, q.x.size):
        raise DomainError("sigma_D must be N x N")
    if not np.all(np.isfinite(G)) or np.linalg.cond(G) > 1e14:
        raise SingularDiffusion("sigma_D is singular")
    phi = -float(q.x @ (q.r * q.d)) / xd - 0.5
    return phi, -np.linalg.solve(G, q.x) / xd


def guerra_morato_lagrangian(b, div_b: float, Phi: float, A, div_A: float) -> float:
    """sum_j b_j^2/2 + div_b/2 - Phi + A.b + div_A/2."""
    b = np.asarray(b, dtype=float)
    A = np.broadcast_to(np.asarray(A, dtype=float), b.shape)
    return float(0.5 * b @ b + 0.5 * div_b - Phi + A @ b + 0.5 * div_A)


def wavefunction_from_RS(R, S, check: bool = True):
    """psi = exp(R + iS); optionally asserts |psi|^2 = exp(2R)."""
    R = np.asarray(R, dtype=float)
    S = np.asarray(S, dtype=float)
    psi = np.exp(R + 1j * S)
    if check:
        rho = np.exp(2 * R)
        if not np.allclose(np.abs(psi) ** 2, rho, rtol=1e-12, atol=0):
            raise AssertionError("|psi|^2 != exp(2R)")
    return psi


def madelung_residuals(R, S, spacing, dt, Phi=0.0, A=None):
    """Finite-difference residuals of the Hamilton-Jacobi and continuity equations.

    dS/dt + |grad S - A|^2/2 + Phi - |grad R|^2/2 - lap R/2 = 0
    dR/dt + grad R.(grad S - A) + lap S/2 - div A/2 = 0

    Parameters
    ----------
    R, S : ndarray, shape (n_t, n_1, ..., n_k)
        Fields on a regular time-space grid.
    spacing : sequence of float
        Spatial steps per axis.
    dt : float
    Phi : float or ndarray broadcastable to R
    A : sequence of ndarray, optional
        Vector potential components; zero by default.

    Returns
    -------
    hj, cont : ndarray
        Residuals on interior points (two cells trimmed on each side).
    """
    R = np.asarray(R, dtype=float)
    S = np.asarray(S, dtype=float)
    k = R.ndim - 1
    spacing = list(np.broadcast_to(np.asarray(spacing, dtype=float), (k,)))
    if A is None:
        A = [np.zeros_like(R)] * k
    A = [np.broadcast_to(np.asarray(a, dtype=float), R.shape) for a in A]
    gR = np.gradient(R, *spacing, axis=tuple(range(1, k + 1)))
    gS = np.gradient(S, *spacing, axis=tuple(range(1, k + 1)))
    if k == 1:
        gR, gS = [gR], [gS]
    lapR = sum(np.gradient(gR[i], spacing[i], axis=i + 1) for i in range(k))
    lapS = sum(np.gradient(gS[i], spacing[i], axis=i + 1) for i in range(k))
    divA = sum(np.gradient(A[i], spacing[i], axis=i + 1) for i in range(k))
    dS = np.gradient(S, dt, axis=0)
    dR = np.gradient(R, dt, axis=0)
    v = [gS[i] - A[i] for i in range(k)]
    hj = dS + 0.5 * sum(vi * vi for vi in v) + Phi - 0.5 * sum(g * g for g in gR) - 0.5 * lapR
    cont = dR + sum(gR[i] * v[i] for i in range(k)) + 0.5 * lapS - 0.5 * divA
    trim = (slice(2, -2),) * (k + 1)
    return hj[trim], cont[trim]


# --------------------------------------------------------------------------
# constrained sampling


@dataclass(frozen=True)
class PathModel:
    """Metric blocks for (x, D, r); None freezes a block.

    `rates` overrides the path's r block in the action when given: a
    callable (x, d, r) -> (M, N) on batched states.
    """

    sigma_x: object = None
    sigma_d: object = None
    sigma_r: object = None
    r0: tuple = None
    rates: object = None

    def blocks(self, n):
        out = []
        for name in ("sigma_x", "sigma_d", "sigma_r"):
            s = getattr(self, name)
            if s is None:
                out.append(None)
                continue
            s = np.atleast_2d(np.asarray(s, dtype=float))
            if s.shape[0] != n:
                raise DomainError(f"{name} must have N rows")
            out.append(s)
        return out


def _whitening(model: PathModel, n: int):
    """Cholesky factor of the active metric and the active block mask."""
    blks = model.blocks(n)
    active = [b is not None for b in blks]
    if not any(active):
        raise DegenerateMetric("all blocks are frozen")
    mats = [b @ b.T for b in blks if b is not None]
    dim = n * len(mats)
    G = np.zeros((dim, dim))
    for i, m in enumerate(mats):
        G[i * n:(i + 1) * n, i * n:(i + 1) * n] = m
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise DegenerateMetric("metric is not positive definite") from exc
    return L, active, G


def sample_directions(d, model: PathModel, rng):
    """Unit-speed self-financing velocities for a batch of deflator states.

    A standard normal vector in whitened coordinates w = L^T q' is projected
    off the constraint normal L^{-1} c, with c = (D, 0, 0), and normalized;
    then q' = L^{-T} w.  This is uniform on the constrained unit sphere.

    Returns
    -------
    vx, vd, vr : ndarray, shape (M, N)
    """
    d = np.atleast_2d(np.asarray(d, dtype=float))
    m, n = d.shape
    L, active, _ = _whitening(model, n)
    dim = L.shape[0]
    c = np.zeros((m, dim))
    if active[0]:
        c[:, :n] = d
        nv = np.linalg.solve(L, c.T).T
        nn = np.linalg.norm(nv, axis=1, keepdims=True)
        if np.any(nn == 0):
            raise DegenerateMetric("deflator vector vanishes")
        nv = nv / nn
    w = rng.standard_normal((m, dim))
    if active[0]:
        w = w - np.sum(w * nv, axis=1, keepdims=True) * nv
    wn = np.linalg.norm(w, axis=1, keepdims=True)
    if dim - (1 if active[0] else 0) < 1 or np.any(wn == 0):
        raise DegenerateMetric("constraint removes every direction")
    w = w / wn
    v = np.linalg.solve(L.T, w.T).T
    out, j = [], 0
    for a in active:
        if a:
            out.append(v[:, j * n:(j + 1) * n])
            j += 1
        else:
            out.append(np.zeros((m, n)))
    return tuple(out)


def sample_constrained_step(q: MarketPoint, model: PathModel, ds: float, rng):
    """One arc-length step (dx, dD, dr) = ds * q' from a single market point."""
    vx, vd, vr = sample_directions(q.d[None, :], model, rng)
    return ds * vx[0], ds * vd[0], ds * vr[0]


def constraint_residuals(x, d, r, ds: float, model: PathModel):
    """Per-step |speed^2 - 1| and |x'.D| along a path (arrays (n+1, N))."""
    n = x.shape[1]
    _, active, G = _whitening(model, n)
    vel = [np.diff(a, axis=0) / ds for a in (x, d, r)]
    v = np.concatenate([vv for vv, a in zip(vel, active) if a], axis=1)
    speed = np.einsum("ki,ij,kj->k", v, G, v)
    sf = np.abs(np.sum(vel[0] * d[:-1], axis=1))
    return np.abs(speed - 1.0), sf


@dataclass(frozen=True)
class ConstrainedPath:
    start: MarketPoint
    x: np.ndarray
    d: np.ndarray
    r: np.ndarray
    ds: float

    def residuals(self, model: PathModel):
        return constraint_residuals(self.x, self.d, self.r, self.ds, model)


def sample_path(start: MarketPoint, model: PathModel, ds: float, n_steps: int, rng) -> ConstrainedPath:
    n = start.x.size
    x, d, r = (np.empty((n_steps + 1, n)) for _ in range(3))
    x[0], d[0], r[0] = start.x, start.d, start.r
    for k in range(n_steps):
        vx, vd, vr = sample_directions(d[k][None, :], model, rng)
        x[k + 1], d[k + 1], r[k + 1] = x[k] + ds * vx[0], d[k] + ds * vd[0], r[k] + ds * vr[0]
    return ConstrainedPath(start, x, d, r, ds)


def path_action(x, d, r, ds: float) -> np.ndarray:
    """Left Riemann sum of x.(D' + rD)/(x.D) along arc length.

    Accepts one path (n+1, N) or a batch (M, n+1, N); D' is the forward
    difference.
    """
    x, d, r = (np.asarray(a, dtype=float) for a in (x, d, r))
    r = np.broadcast_to(r, d.shape)
    xk, dk, rk = x[..., :-1, :], d[..., :-1, :], r[..., :-1, :]
    den = np.sum(xk * dk, axis=-1)
    if np.any(den == 0):
        raise ZeroDenominator("x.D vanishes on the path")
    num = np.sum(xk * (np.diff(d, axis=-2) + ds * rk * dk), axis=-1)
    return np.sum(num / den, axis=-1)


# --------------------------------------------------------------------------
# fields and the estimator


@dataclass(frozen=True)
class GridField:
    """Piecewise-constant complex field over 2N axes (x_1..x_N, D_1..D_N).

    `edges[a]` holds cell edges; a length-1 array marks a point axis whose
    coordinate is fixed at that value.
    """

    edges: tuple
    values: np.ndarray

    def __post_init__(self):
        edges = tuple(np.asarray(e, dtype=float) for e in self.edges)
        shape = tuple(1 if e.size == 1 else e.size - 1 for e in edges)
        vals = np.asarray(self.values, dtype=complex).reshape(shape)
        for e in edges:
            if e.size > 1 and np.any(np.diff(e) <= 0):
                raise DomainError("edges must increase")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "values", vals)

    @property
    def point_axes(self):
        return tuple(e.size == 1 for e in self.edges)

    def cell_volumes(self) -> np.ndarray:
        widths = [np.ones(1) if e.size == 1 else np.diff(e) for e in self.edges]
        vol = widths[0]
        for w in widths[1:]:
            vol = np.multiply.outer(vol, w)
        return vol

    def l1_mass(self) -> float:
        return float(np.sum(np.abs(self.values) * self.cell_volumes()))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2 * self.cell_volumes())))

    def fourier(self, ks, axes) -> np.ndarray:
        """Exact int psi0(y) exp(-i k.y) dy over the extended axes listed in `axes`.

        Point axes in `axes` contribute exp(-i k y0); unlisted axes must be
        point axes and are ignored.
        """
        ks = np.atleast_2d(np.asarray(ks, dtype=float))
        out = np.empty(ks.shape[0], dtype=complex)
        for i, k in enumerate(ks):
            fac = []
            for a, e in enumerate(self.edges):
                if a in axes:
                    kk = k[list(axes).index(a)]
                    if e.size == 1:
                        fac.append(np.exp(-1j * kk * e))
                    elif kk == 0:
                        fac.append(np.diff(e).astype(complex))
                    else:
                        fac.append((np.exp(-1j * kk * e[:-1]) - np.exp(-1j * kk * e[1:])) / (1j * kk))
                else:
                    if e.size != 1:
                        raise DomainError("extended axes must all be transformed")
                    fac.append(np.ones(1, dtype=complex))
            t = fac[0]
            for f in fac[1:]:
                t = np.multiply.outer(t, f)
            out[i] = np.sum(self.values * t)
        return out


@dataclass(frozen=True)
class PathIntegralConfig:
    n_paths: int
    n_steps: int
    t: float
    seed: int = 0
    terminal_edges: tuple = None  # per 2N axis: edges, or None to integrate out
    threads: int = 1

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise DomainError("n_paths and n_steps must be >= 1")
        if not self.t > 0:
            raise DomainError("t must be positive")

    @property
    def ds(self) -> float:
        return self.t / self.n_steps


@dataclass(frozen=True)
class FourierEstimate:
    value: np.ndarray   # (K,) complex
    cov: np.ndarray     # (K, 2, 2) covariance of (Re, Im) of the estimate

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.cov[:, 0, 0] + self.cov[:, 1, 1])


@dataclass(frozen=True)
class TerminalField:
    """Binned terminal amplitude with per-bin errors and the raw samples."""

    edges: tuple         # edges of binned axes
    axes: tuple          # which of the 2N axes are binned
    psi: np.ndarray
    stderr: np.ndarray
    n_effective: np.ndarray
    counts: np.ndarray
    phase_mean: np.ndarray  # mean of exp(i S) per bin
    endpoints: np.ndarray   # (M, 2N)
    samples: np.ndarray     # (M,) complex path contributions
    action: np.ndarray      # (M,)

    def centers(self):
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]

    def fourier_modes(self, ks, axes) -> FourierEstimate:
        """Unbiased estimates of int psi_t(y) exp(-i k.y) dy with covariances."""
        ks = np.atleast_2d(np.asarray(ks, dtype=float))
        y = self.endpoints[:, list(axes)]
        m = self.samples.size
        z = self.samples[:, None] * np.exp(-1j * (y @ ks.T))
        val = z.mean(axis=0)
        re, im = z.real, z.imag
        cov = np.empty((ks.shape[0], 2, 2))
        cov[:, 0, 0] = re.var(axis=0, ddof=1) / m
        cov[:, 1, 1] = im.var(axis=0, ddof=1) / m
        cr = np.mean((re - re.mean(0)) * (im - im.mean(0)), axis=0) * m / (m - 1) / m
        cov[:, 0, 1] = cov[:, 1, 0] = cr
        return FourierEstimate(val, cov)


def _run_block(psi0, probs, flat_cells, model, cfg, r0, block_id, m):
    rng = block_generator(cfg.seed, block_id, LANE_PATHS)
    n2 = len(psi0.edges)
    n = n2 // 2
    cell = rng.choice(flat_cells.shape[0], size=m, p=probs)
    multi = flat_cells[cell]
    start = np.empty((m, n2))
    for a, e in enumerate(psi0.edges):
        if e.size == 1:
            start[:, a] = e[0]
        else:
            lo, hi = e[multi[:, a]], e[multi[:, a] + 1]
            start[:, a] = lo + (hi - lo) * rng.random(m)
    x, d = start[:, :n].copy(), start[:, n:].copy()
    r = np.broadcast_to(np.asarray(r0, dtype=float), (m, n)).copy()
    ds = cfg.ds
    action = np.zeros(m)
    for _ in range(cfg.n_steps):
        vx, vd, vr = sample_directions(d, model, rng)
        rates = r if model.rates is None else np.asarray(model.rates(x, d, r), dtype=float)
        den = np.sum(x * d, axis=1)
        if np.any(den == 0):
            raise ZeroDenominator("x.D vanishes on a sampled path")
        dD = ds * vd
        action += np.sum(x * (dD + ds * rates * d), axis=1) / den
        x, d, r = x + ds * vx, d + dD, r + ds * vr
    phase0 = psi0.values.reshape(-1)[cell]
    phase0 = phase0 / np.abs(phase0)
    return np.concatenate([x, d], axis=1), phase0, action


def evolve_via_path_integral(psi0: GridField, config: PathIntegralConfig, model: PathModel) -> TerminalField:
    """Monte Carlo estimate of psi_t(y) = int psi0(q) K_t(q, y) dq.

    Start points are drawn with density proportional to |psi0| (uniform
    inside each cell), then follow constrained unit-speed paths.  A path
    contributes Y = W phase(psi0(q)) exp(i S) with W = int |psi0|, so that
    E[Y g(y_T)] = int psi0(q) E_q[exp(i S) g(y_T)] dq.

    Returns
    -------
    TerminalField
        Binned field (Y summed per bin, divided by n_paths and bin volume),
        per-bin standard errors and effective sample sizes
        (sum |Y|)^2 / sum |Y|^2, plus the raw endpoint samples.
    """
    n2 = len(psi0.edges)
    if n2 % 2:
        raise DomainError("psi0 needs 2N axes")
    n = n2 // 2
    r0 = np.zeros(n) if model.r0 is None else np.broadcast_to(np.asarray(model.r0, dtype=float), (n,))
    mass = np.abs(psi0.values) * psi0.cell_volumes()
    W = float(mass.sum())
    if W == 0:
        raise DomainError("psi0 vanishes")
    probs = (mass / W).reshape(-1)
    flat_cells = np.array(list(np.ndindex(*psi0.values.shape)))
    jobs = list(blocks(config.n_paths, BLOCK_SIZE))

    def run(job):
        b, lo, hi = job
        return _run_block(psi0, probs, flat_cells, model, config, r0, b, hi - lo)

    if config.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    ends = np.concatenate([p[0] for p in parts])
    ph0 = np.concatenate([p[1] for p in parts])
    action = np.concatenate([p[2] for p in parts])
    ephase = np.exp(1j * action)
    Y = W * ph0 * ephase

    tedges = config.terminal_edges or tuple([None] * n2)
    axes = tuple(a for a, e in enumerate(tedges) if e is not None)
    edges = tuple(np.asarray(tedges[a], dtype=float) for a in axes)
    m = Y.size
    if not axes:
        shape = ()
        idx = np.zeros(m, dtype=int)
        inside = np.ones(m, dtype=bool)
        vol = np.ones(1)
        nb = 1
    else:
        shape = tuple(e.size - 1 for e in edges)
        parts_idx = []
        inside = np.ones(m, dtype=bool)
        for a, e in zip(axes, edges):
            k = np.searchsorted(e, ends[:, a], side="right") - 1
            inside &= (k >= 0) & (k < e.size - 1)
            parts_idx.append(np.clip(k, 0, e.size - 2))
        idx = np.ravel_multi_index(tuple(parts_idx), shape)
        vol = edges[0][1:] - edges[0][:-1]
        for e in edges[1:]:
            vol = np.multiply.outer(vol, np.diff(e))
        vol = vol.reshape(-1)
        nb = int(np.prod(shape))
    ii = idx[inside]
    cnt = np.bincount(ii, minlength=nb)
    sy = np.bincount(ii, weights=Y[inside].real, minlength=nb) + 1j * np.bincount(ii, weights=Y[inside].imag, minlength=nb)
    sa = np.bincount(ii, weights=np.abs(Y[inside]), minlength=nb)
    s2 = np.bincount(ii, weights=np.abs(Y[inside]) ** 2, minlength=nb)
    spr = np.bincount(ii, weights=ephase[inside].real, minlength=nb)
    spi = np.bincount(ii, weights=ephase[inside].imag, minlength=nb)
    psi = sy / (m * vol)
    # per-path contribution Z = Y 1_bin / vol has E|Z - EZ|^2 = s2/(m vol^2) - |psi|^2
    var = np.maximum(s2 / (m * vol**2) - np.abs(psi) ** 2, 0.0) / max(m - 1, 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        neff = np.where(s2 > 0, sa**2 / s2, 0.0)
        den = np.maximum(cnt, 1).astype(float)
        pm = np.where(cnt > 0, spr / den + 1j * (spi / den), np.nan)
    if m < 2:
        raise InsufficientPaths("need at least two paths")
    rs = shape if shape else (1,)
    return TerminalField(edges, axes, psi.reshape(rs), np.sqrt(var).reshape(rs), neff.reshape(rs),
                         cnt.reshape(rs), pm.reshape(rs), ends, Y, action)


def fourier_multiplier_reference(psi0: GridField, ks, t: float, n_steps: int, model: PathModel) -> np.ndarray:
    """Exact Fourier modes of the path-integral kernel with frozen D and r.

    With D fixed and equal short rates rho on all assets, each step moves x
    by +-ds v with v the unique constrained unit direction (N = 2), and the
    action is rho t for every path.  So

        F_t(k) = F_0(k) cos(ds k.v)^n exp(i rho t),

    with F_0 the exact transform of the piecewise-constant start field over
    the x axes.
    """
    n = len(psi0.edges) // 2
    if n != 2:
        raise DomainError("reference needs N = 2")
    if model.sigma_d is not None or model.sigma_r is not None or model.rates is not None:
        raise DomainError("reference needs frozen D and r")
    if not all(psi0.point_axes[n:]):
        raise DomainError("D axes of psi0 must be point axes")
    r0 = np.zeros(n) if model.r0 is None else np.broadcast_to(np.asarray(model.r0, dtype=float), (n,))
    if not np.all(r0 == r0[0]):
        raise DomainError("reference needs equal short rates")
    d = np.array([e[0] for e in psi0.edges[n:]])
    sx = np.atleast_2d(np.asarray(model.sigma_x, dtype=float))
    L = np.linalg.cholesky(sx @ sx.T)
    nv = np.linalg.solve(L, d)
    w = np.array([-nv[1], nv[0]]) / np.linalg.norm(nv)
    v = np.linalg.solve(L.T, w)
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    ds = t / n_steps
    axes = tuple(range(n)) + tuple(range(n, 2 * n))
    kfull = np.concatenate([ks, np.zeros_like(ks)], axis=1)
    F0 = psi0.fourier(kfull, axes)
    return F0 * np.cos(ds * ks @ v) ** n_steps * np.exp(1j * r0[0] * t)
