"""Euler-Maruyama ensembles of (x, D, r) paths and Nelson derivatives."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import hashlib
import json

import numpy as np

from .errors import DomainError, EmptyBin, InsufficientPaths
from .rng import BLOCK_SIZE, block_generator, blocks

BLOCKS = ("x", "d", "r")


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    step: float
    n_steps: int

    def __post_init__(self):
        if not self.step > 0:
            raise DomainError("grid step must be positive")
        if self.n_steps < 1:
            raise DomainError("grid needs at least one step")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.step * np.arange(self.n_steps + 1)

    def index(self, t: float) -> int:
        k = int(round((t - self.t0) / self.step))
        if k < 0 or k > self.n_steps or abs(self.t0 + k * self.step - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"t={t} is not a grid time")
        return k


def _const(value):
    value = np.asarray(value, dtype=float)
    return lambda t, x, d, r: value


@dataclass
class SdeModel:
    """Drift and diffusion maps for the x, D and r blocks.

    Drifts are callables (t, x, d, r) -> (M, N) on batched states; diffusions
    return (M, N, K) or a broadcastable (N, K).  A missing entry means zero.
    """

    n_assets: int
    n_noise: int
    drift: dict = field(default_factory=dict)
    diffusion: dict = field(default_factory=dict)
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def descriptor(self) -> str:
        return json.dumps({"name": self.name, "params": self.params}, sort_keys=True, default=list)

    def sigma(self, block, t, x, d, r):
        f = self.diffusion.get(block)
        return None if f is None else np.asarray(f(t, x, d, r), dtype=float)


def gbm_model(mu, sigma, rate=0.0, corr=None):
    """Deflators dD_j = mu_j D_j dt + sigma_j D_j dW_j; x and r frozen."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), mu.shape)
    n = mu.size
    chol = np.eye(n) if corr is None else np.linalg.cholesky(np.asarray(corr, dtype=float))
    return SdeModel(
        n, n,
        drift={"d": lambda t, x, d, r: mu * d},
        diffusion={"d": lambda t, x, d, r: (sig * d)[..., None] * chol},
        name="gbm",
        params={"mu": mu.tolist(), "sigma": sig.tolist(), "rate": rate},
    )


def ou_model(theta, sigma, level=0.0):
    """Deflators dD = -theta (D - level) dt + sigma dW, per asset."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    n = theta.size
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
    lev = np.broadcast_to(np.asarray(level, dtype=float), (n,))
    return SdeModel(
        n, n,
        drift={"d": lambda t, x, d, r: -theta * (d - lev)},
        diffusion={"d": _const(np.diag(sig))},
        name="ou",
        params={"theta": theta.tolist(), "sigma": sig.tolist(), "level": lev.tolist()},
    )


def deterministic_model(mu, rate=None):
    """dD_j = mu_j D_j dt with frozen x and constant r (given by the initial spec)."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    return SdeModel(
        mu.size, 1,
        drift={"d": lambda t, x, d, r: mu * d},
        name="deterministic",
        params={"mu": mu.tolist()},
    )


MODELS = {"gbm": gbm_model, "ou": ou_model, "deterministic": deterministic_model}


@dataclass(frozen=True)
class InitialSpec:
    """Initial law per block: ('point', v), ('uniform', lo, hi) or ('normal', mean, sd)."""

    x: tuple
    d: tuple
    r: tuple = ("point", 0.0)

    def sample(self, block, m, n, rng):
        spec = getattr(self, block)
        kind = spec[0]
        if kind == "point":
            return np.broadcast_to(np.asarray(spec[1], dtype=float), (m, n)).copy()
        if kind == "uniform":
            lo = np.broadcast_to(np.asarray(spec[1], dtype=float), (n,))
            hi = np.broadcast_to(np.asarray(spec[2], dtype=float), (n,))
            return lo + (hi - lo) * rng.random((m, n))
        if kind == "normal":
            mean = np.broadcast_to(np.asarray(spec[1], dtype=float), (n,))
            sd = np.broadcast_to(np.asarray(spec[2], dtype=float), (n,))
            return mean + sd * rng.standard_normal((m, n))
        raise DomainError(f"unknown initial law {kind!r} for block {block}")


@dataclass(frozen=True)
class PathEnsemble:
    """Immutable ensemble; arrays have shape (n_paths, n_times, N)."""

    grid: TimeGrid
    x: np.ndarray
    d: np.ndarray
    r: np.ndarray
    seed: int
    provenance: str

    def __post_init__(self):
        for a in (self.x, self.d, self.r):
            a.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def n_times(self) -> int:
        return self.x.shape[1]

    @property
    def n_assets(self) -> int:
        return self.x.shape[2]

    def block(self, name) -> np.ndarray:
        if name not in BLOCKS:
            raise DomainError(f"unknown block {name!r}")
        return getattr(self, name)

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.x, self.d, self.r):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _simulate_block(model, initial, grid, seed, block_id, m):
    rng = block_generator(seed, block_id)
    n = model.n_assets
    state = {b: initial.sample(b, m, n, rng) for b in BLOCKS}
    out = {b: np.empty((m, grid.n_steps + 1, n)) for b in BLOCKS}
    for b in BLOCKS:
        out[b][:, 0] = state[b]
    h = grid.step
    sq = np.sqrt(h)
    times = grid.times
    for k in range(grid.n_steps):
        t = times[k]
        dw = sq * rng.standard_normal((m, model.n_noise))
        x, d, r = state["x"], state["d"], state["r"]
        new = {}
        for b in BLOCKS:
            inc = 0.0
            f = model.drift.get(b)
            if f is not None:
                inc = inc + h * np.asarray(f(t, x, d, r), dtype=float)
            s = model.sigma(b, t, x, d, r)
            if s is not None:
                if s.ndim == 2:
                    inc = inc + dw @ s.T
                else:
                    inc = inc + np.einsum("mnk,mk->mn", s, dw)
            new[b] = state[b] + inc
        state = new
        for b in BLOCKS:
            out[b][:, k + 1] = state[b]
    return out


def simulate_sde(model: SdeModel, initial: InitialSpec, grid: TimeGrid, n_paths: int,
                 seed: int, threads: int = 1) -> PathEnsemble:
    """Euler-Maruyama ensemble with scheduling-independent output.

    Parameters
    ----------
    model : SdeModel
    initial : InitialSpec
    grid : TimeGrid
    n_paths : int
    seed : int
        64-bit seed; each block of paths uses its own counter-based stream.
    threads : int
        Worker threads.  Does not change the result.

    Returns
    -------
    PathEnsemble
    """
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    jobs = list(blocks(n_paths, BLOCK_SIZE))

    def run(job):
        b, lo, hi = job
        return _simulate_block(model, initial, grid, seed, b, hi - lo)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    with np.errstate(over="ignore", invalid="ignore"):
        arrays = {b: np.concatenate([p[b] for p in parts], axis=0) for b in BLOCKS}
    if not all(np.all(np.isfinite(a)) for a in arrays.values()):
        raise FloatingPointError("non-finite values in simulated paths")
    return PathEnsemble(grid, arrays["x"], arrays["d"], arrays["r"], int(seed), model.descriptor())


@dataclass(frozen=True)
class Binning:
    """Uniform bins on one component of the present state."""

    block: str
    component: int
    lo: float
    hi: float
    n_bins: int

    def __post_init__(self):
        if self.block not in BLOCKS:
            raise DomainError(f"unknown block {self.block!r}")
        if not self.hi > self.lo or self.n_bins < 1:
            raise DomainError("binning needs hi > lo and n_bins >= 1")

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])

    def assign(self, values) -> np.ndarray:
        """Bin index per value, -1 outside [lo, hi]."""
        idx = np.floor((values - self.lo) / (self.hi - self.lo) * self.n_bins).astype(int)
        idx[values == self.hi] = self.n_bins - 1
        idx[(idx < 0) | (idx >= self.n_bins)] = -1
        return idx


@dataclass(frozen=True)
class NelsonEstimate:
    centers: np.ndarray
    value: np.ndarray     # (n_bins, N), NaN in empty bins
    stderr: np.ndarray
    counts: np.ndarray
    cond_mean: np.ndarray  # mean of the conditioning variable per bin
    empty: np.ndarray

    def central(self) -> int:
        return self.counts.size // 2


def nelson_derivative(ensemble: PathEnsemble, t: float, kind: str, binning: Binning,
                      lag: int = 1, target: str = None) -> NelsonEstimate:
    """Binned Nelson derivative of a block at grid time t.

    Parameters
    ----------
    ensemble : PathEnsemble
    t : float
        Grid time.
    kind : {'forward', 'backward', 'mean'}
    binning : Binning
        Present-state conditioning.
    lag : int
        Difference step in grid steps, h = lag * grid.step.
    target : str, optional
        Block to differentiate; defaults to the binned block.

    Returns
    -------
    NelsonEstimate
        The mean derivative is the exact average of forward and backward.
    """
    if kind not in ("forward", "backward", "mean"):
        raise DomainError(f"unknown derivative kind {kind!r}")
    k = ensemble.grid.index(t)
    q = ensemble.block(target or binning.block)
    h = lag * ensemble.grid.step
    need_f = kind in ("forward", "mean")
    need_b = kind in ("backward", "mean")
    if need_f and k + lag >= ensemble.n_times:
        raise InsufficientPaths("forward quotient runs past the grid")
    if need_b and k - lag < 0:
        raise InsufficientPaths("backward quotient runs before the grid")
    parts = []
    if need_f:
        parts.append((q[:, k + lag] - q[:, k]) / h)
    if need_b:
        parts.append((q[:, k] - q[:, k - lag]) / h)
    quot = parts[0] if len(parts) == 1 else 0.5 * (parts[0] + parts[1])
    cond = ensemble.block(binning.block)[:, k, binning.component]
    idx = binning.assign(cond)
    nb, n = binning.n_bins, q.shape[2]
    counts = np.bincount(idx[idx >= 0], minlength=nb)
    if counts.sum() == 0:
        raise InsufficientPaths("no paths fall inside the binning range")
    value = np.full((nb, n), np.nan)
    stderr = np.full((nb, n), np.nan)
    cmean = np.full(nb, np.nan)
    for b in np.flatnonzero(counts):
        sel = idx == b
        v = quot[sel]
        value[b] = v.mean(axis=0)
        if counts[b] > 1:
            stderr[b] = v.std(axis=0, ddof=1) / np.sqrt(counts[b])
        cmean[b] = cond[sel].mean()
    return NelsonEstimate(binning.centers, value, stderr, counts, cmean, counts == 0)


def require_nonempty(est: NelsonEstimate, b: int):
    if est.empty[b]:
        raise EmptyBin(f"bin {b} has no paths")
    return est.value[b]
