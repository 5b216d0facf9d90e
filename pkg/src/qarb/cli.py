"""Command-line driver: ``qarb <command> --config run.ini``.

Exit codes: 0 success, 2 configuration error, 3 quadrature did not
converge, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time

import numpy as np

from . import __version__
from . import bubbles, evolution, feynman, io, market, sde, spectral
from .config import RunConfig
from .errors import ConfigError, NotConverged, QarbError

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_NUMERIC = 0, 2, 3, 4


def _broadcast(vals, n, key):
    if len(vals) == 1:
        return vals * n
    if len(vals) != n:
        raise ConfigError(key, f"needs 1 or {n} values")
    return vals


# ----------------------------------------------------------------- builders


def build_state(cfg: RunConfig, seed: int):
    dom = cfg.domain
    n = dom.n_assets
    trunc = evolution.Truncation.default(dom, cfg.i("state", "i_max"), cfg.i("state", "j_max"))
    rl = cfg.law("state", "r_law")
    rm = evolution.RMarginal(tuple(
        (rl[0],) + tuple(v[l] if isinstance(v, list) else v for v in rl[1:]) for l in range(n)))
    kw = dict(r_marginal=rm, spec=cfg.quadrature(), sign=cfg.sign())
    kind = cfg.get("state", "kind")
    if kind == "random":
        return evolution.SpectralState.random(dom, trunc, np.random.default_rng(seed), **kw)
    if kind == "basis":
        I = cfg.il("state", "I") or [trunc.x_indices[0][0]] * n
        J = cfg.il("state", "J") or [trunc.d_indices[0][0]] * n
        try:
            return evolution.SpectralState.basis(dom, trunc, I, J, **kw)
        except QarbError as exc:
            raise ConfigError("state.I", str(exc)) from None
    if kind == "wavepacket":
        cx = cfg.fl("state", "center_x") or list(dom.A / 2)
        cd = cfg.fl("state", "center_d") or list(dom.B / 2)
        w = _broadcast(cfg.fl("state", "widths"), 2 * n, "state.widths")
        car = cfg.fl("state", "carrier") or None
        q = market.MarketPoint(cx, cd, np.zeros(n))
        return evolution.from_wavepacket(q, w, dom, trunc, carrier=car, **kw)
    raise ConfigError("state.kind", f"unknown state kind {kind!r}")


def build_model(cfg: RunConfig):
    n = cfg.domain.n_assets
    name = cfg.get("sde", "model")
    mu = _broadcast(cfg.fl("sde", "mu"), n, "sde.mu")
    sig = _broadcast(cfg.fl("sde", "sigma"), n, "sde.sigma")
    if name == "gbm":
        return sde.gbm_model(mu, sig)
    if name == "ou":
        return sde.ou_model(_broadcast(cfg.fl("sde", "theta"), n, "sde.theta"), sig,
                            _broadcast(cfg.fl("sde", "level"), n, "sde.level"))
    if name == "deterministic":
        return sde.deterministic_model(mu)
    raise ConfigError("sde.model", f"unknown model {name!r}")


def build_ensemble(cfg: RunConfig, seed: int, threads: int):
    model = build_model(cfg)
    init = sde.InitialSpec(cfg.law("sde", "x0"), cfg.law("sde", "d0"), cfg.law("sde", "r0"))
    grid = sde.TimeGrid(cfg.f("sde", "t0"), cfg.positive("sde", "step"), cfg.positive("sde", "n_steps", True))
    return sde.simulate_sde(model, init, grid, cfg.positive("sde", "n_paths", True), seed, threads)


# ----------------------------------------------------------------- commands


def cmd_spectrum(cfg, seed, stage, threads):
    dom = cfg.domain
    n = dom.n_assets
    pairs = spectral.enumerate_indices(n, cfg.positive("spectrum", "i_max", True), cfg.positive("spectrum", "j_max", True))
    rows = spectral.eigen_table(dom, pairs, cfg.quadrature(), cfg.sign(), threads)
    bad = [r for r in rows if not r.data.converged]
    if bad:
        raise NotConverged(f"{len(bad)} eigenvalues did not converge, first I={bad[0].I} J={bad[0].J}")
    header = [f"I_{l+1}" for l in range(n)] + [f"J_{l+1}" for l in range(n)] + [
        "lambda_alpha", "lambda_beta", "lambda_IJ", "quad_error"]
    if n == 2:
        header += ["lambda_closed_form", "relative_deviation"]
    out = []
    for r in rows:
        row = list(r.I) + list(r.J) + [r.data.lambda_alpha, r.data.lambda_beta, r.data.lambda_IJ, r.data.quadrature_error]
        if n == 2:
            row += [r.closed_form, r.relative_deviation]
        out.append(row)
    io.write_csv(os.path.join(stage, "spectrum.csv"), header, out)
    return ["spectrum.csv"]


def cmd_nupbr(cfg, seed, stage, threads):
    dom = cfg.domain
    tol = cfg.tol(cfg.f("spectrum", "nupbr_tol"))
    cut = (cfg.positive("spectrum", "i_max", True), cfg.positive("spectrum", "j_max", True))
    v = spectral.nupbr_check(dom, cut, tol, cfg.quadrature(), cfg.sign(), threads)
    if v.not_converged:
        raise NotConverged(f"{len(v.not_converged)} eigenvalues did not converge")
    io.write_json(os.path.join(stage, "nupbr.json"), {
        "nupbr": v.holds,
        "tol": tol if math.isfinite(tol) else "inf",
        "n_assets": dom.n_assets,
        "cutoff": list(cut),
        "violators": [{"I": list(I), "J": list(J), "lambda_IJ": lam} for I, J, lam in v.violators],
    })
    return ["nupbr.json"]


def _state_rows(st, t):
    return [[t] + list(I) + list(J) + [c.real, c.imag] for I, J, c in st.rows()]


def cmd_evolve(cfg, seed, stage, threads):
    st = build_state(cfg, seed)
    n = st.domain.n_assets
    header = ["t"] + [f"I_{l+1}" for l in range(n)] + [f"J_{l+1}" for l in range(n)] + ["re_c", "im_c"]
    io.write_csv(os.path.join(stage, "state_initial.csv"), header, _state_rows(st, 0.0))
    rows = []
    for t in cfg.fl("state", "times"):
        rows += _state_rows(evolution.evolve(st, t), t)
    io.write_csv(os.path.join(stage, "evolve.csv"), header, rows)
    return ["state_initial.csv", "evolve.csv"]


def cmd_moments(cfg, seed, stage, threads):
    st = build_state(cfg, seed)
    n = st.domain.n_assets
    series = evolution.moment_series(st, cfg.fl("state", "times"))
    lab = lambda p: [f"{p}_{l+1}" for l in range(n)]
    header = (["t"] + lab("E_x") + lab("E_D") + lab("Var_x") + lab("Var_D")
              + lab("exact_E_x") + lab("exact_E_D"))
    rows = [[m.t, *m.diag_x, *m.diag_d, *m.var_x, *m.var_d, *m.e_x, *m.e_d] for m in series]
    io.write_csv(os.path.join(stage, "moments.csv"), header, rows)
    return ["moments.csv"]


def _phi(cfg, sample, asset):
    spec = cfg.get("bubble", "phi")
    if spec == "one":
        return bubbles.RadonNikodymWeight.one()
    if spec == "linear":
        w = bubbles.RadonNikodymWeight(lambda s: np.asarray(s)[:, asset])
    elif spec.startswith("tilt:"):
        try:
            k = float(spec.split(":")[1])
        except (IndexError, ValueError):
            raise ConfigError("bubble.phi", "tilt needs a number, e.g. tilt:0.5") from None
        w = bubbles.RadonNikodymWeight(lambda s: np.exp(k * np.asarray(s)[:, asset]))
    else:
        raise ConfigError("bubble.phi", f"unknown weight {spec!r}")
    return w.normalized(sample)


def cmd_bubble(cfg, seed, stage, threads):
    ens = build_ensemble(cfg, seed, threads)
    n = ens.n_assets
    g = ens.grid
    t = cfg.f("bubble", "valuation_t")
    tau_txt = cfg.get("bubble", "tau").strip()
    tau = float(tau_txt) if tau_txt else float(g.times[-1])
    asset = cfg.i("bubble", "asset")
    if not 0 <= asset < n:
        raise ConfigError("bubble.asset", "out of range")
    try:
        kT = g.index(tau)
        g.index(t)
    except QarbError as exc:
        raise ConfigError("bubble.tau", str(exc)) from None
    phi = _phi(cfg, ens.d[:, kT], asset)
    rate = cfg.f("bubble", "rate")
    quoted = cfg.fl("bubble", "quoted") or list(ens.d[:, g.index(t)].mean(axis=0))
    quoted = _broadcast(quoted, n, "bubble.quoted")
    fv = bubbles.fundamental_value_assets(ens, phi, rate, tau, t)
    rows = [[f"asset_{j+1}", fv.value[j], quoted[j] - fv.value[j], fv.stderr[j]] for j in range(n)]
    mat_txt = cfg.get("bubble", "maturity").strip()
    T = float(mat_txt) if mat_txt else tau
    for spec in [c for c in cfg.get("bubble", "claims").split(",") if c.strip()]:
        parts = spec.strip().split(":")
        try:
            claim = bubbles.ClaimSpec.from_registry(parts[0], float(parts[1]) if len(parts) > 1 else 0.0, T, asset)
        except (QarbError, ValueError) as exc:
            raise ConfigError("bubble.claims", str(exc)) from None
        cv = bubbles.claim_fundamental_value(ens, claim, phi, rate, t)
        rows.append([f"claim_{spec.strip()}", cv.value, "", cv.stderr])
    io.write_csv(os.path.join(stage, "bubble.csv"), ["id", "fundamental", "bubble", "stderr"], rows)
    disc = bubbles.discount_factors(ens, rate, t, tau)
    st = bubbles.bubble_discounted_stats(ens.d[:, kT] * disc[:, None], phi(ens.d[:, kT]))
    srows = [[j + 1, st.mean.value[j], st.mean.stderr[j], st.variance.value[j], st.variance.stderr[j],
              st.empirical_variance[j]] for j in range(n)]
    io.write_csv(os.path.join(stage, "bubble_stats.csv"),
                 ["asset", "mean", "mean_stderr", "variance", "variance_stderr", "empirical_variance"], srows)
    kind = cfg.get("bubble", "tau_kind")
    p = cfg.f("bubble", "tau_param")
    try:
        ts = {"fixed": bubbles.TauSpec.fixed, "geometric": bubbles.TauSpec.geometric,
              "defective": bubbles.TauSpec.defective}[kind](p)
        bt = bubbles.bubble_type_classify(ts)
    except KeyError:
        raise ConfigError("bubble.tau_kind", f"unknown stopping-time kind {kind!r}") from None
    except QarbError as exc:
        raise ConfigError("bubble.tau_param", str(exc)) from None
    io.write_json(os.path.join(stage, "bubble_type.json"), {"tau_kind": kind, "tau_param": p, "type": bt.value})
    return ["bubble.csv", "bubble_stats.csv", "bubble_type.json"]


def cmd_feynman(cfg, seed, stage, threads):
    dom = cfg.domain
    if dom.n_assets != 2:
        raise ConfigError("market.n_assets", "feynman command supports N = 2")
    cells = cfg.positive("feynman", "cells", True)
    ex = np.linspace(0, dom.A[0], cells + 1)
    ey = np.linspace(0, dom.A[1], cells + 1)
    cx, cy = 0.5 * (ex[1:] + ex[:-1]), 0.5 * (ey[1:] + ey[:-1])
    X, Y = np.meshgrid(cx, cy, indexing="ij")
    c = _broadcast(cfg.fl("feynman", "center"), 2, "feynman.center")
    w = cfg.positive("feynman", "width")
    car = _broadcast(cfg.fl("feynman", "carrier"), 2, "feynman.carrier")
    vals = np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2) / (4 * w * w)) * np.exp(1j * (car[0] * X + car[1] * Y))
    dp = _broadcast(cfg.fl("feynman", "d_point"), 2, "feynman.d_point")
    psi0 = feynman.GridField((ex, ey, [dp[0]], [dp[1]]), vals[:, :, None, None])
    psi0 = feynman.GridField(psi0.edges, psi0.values / psi0.l2_norm())
    rate = cfg.f("feynman", "rate")
    model = feynman.PathModel(sigma_x=cfg.positive("feynman", "sigma_x") * np.eye(2), r0=(rate, rate))
    t = cfg.positive("feynman", "t")
    nsteps = cfg.positive("feynman", "n_steps", True)
    pc = feynman.PathIntegralConfig(cfg.positive("feynman", "n_paths", True), nsteps, t, seed,
                                    (ex, ey, None, None), threads)
    tf = feynman.evolve_via_path_integral(psi0, pc, model)
    rows = []
    for i, xc in enumerate(cx):
        for j, yc in enumerate(cy):
            p = tf.psi[i, j]
            ph = tf.phase_mean[i, j]
            rows.append([xc, yc, p.real, p.imag, abs(p) ** 2, tf.stderr[i, j], tf.n_effective[i, j],
                         ph.real, ph.imag, tf.counts[i, j]])
    io.write_csv(os.path.join(stage, "feynman.csv"),
                 ["x_1", "x_2", "re_psi", "im_psi", "abs2", "stderr", "n_effective", "phase_re", "phase_im", "count"], rows)
    modes = cfg.il("feynman", "modes")
    ks = np.array([[np.pi * a / dom.A[0], np.pi * b / dom.A[1]] for a in modes for b in modes])
    fe = tf.fourier_modes(ks, (0, 1))
    ref = feynman.fourier_multiplier_reference(psi0, ks, t, nsteps, model)
    mrows = []
    for k, v, cov, r in zip(ks, fe.value, fe.cov, ref):
        dv = np.array([v.real - r.real, v.imag - r.imag])
        mrows.append([k[0], k[1], v.real, v.imag, math.sqrt(cov[0, 0] + cov[1, 1]), r.real, r.imag,
                      float(dv @ np.linalg.solve(cov, dv))])
    io.write_csv(os.path.join(stage, "feynman_modes.csv"),
                 ["k_1", "k_2", "re", "im", "stderr", "ref_re", "ref_im", "chi2"], mrows)
    return ["feynman.csv", "feynman_modes.csv"]


def cmd_curvature(cfg, seed, stage, threads):
    dom = cfg.domain
    n = dom.n_assets
    mu = _broadcast(cfg.fl("curvature", "mu"), n, "curvature.mu")
    d0 = _broadcast(cfg.fl("curvature", "d0"), n, "curvature.d0")
    rate = cfg.f("curvature", "rate")
    model = sde.deterministic_model(mu)
    init = sde.InitialSpec(("point", 1.0), ("point", d0), ("point", rate))
    grid = sde.TimeGrid(0.0, cfg.positive("curvature", "step"), cfg.positive("curvature", "n_steps", True))
    ens = sde.simulate_sde(model, init, grid, 1, seed)
    try:
        xs = [[float(v) for v in p.split(":")] for p in cfg.get("curvature", "x_samples").split(";")]
    except ValueError:
        raise ConfigError("curvature.x_samples", "expected ';'-separated points like 0.5:0.5") from None
    if any(len(x) != n for x in xs):
        raise ConfigError("curvature.x_samples", f"each point needs {n} coordinates")
    g = cfg.f("curvature", "g")
    rows = []
    for k in range(1, ens.n_times - 1):
        dlog, rx = market.ensemble_bracket(ens, k)
        for x in xs:
            cv = market.curvature_vector(dlog, rx, grid.times[k], x, g=g, domain=dom)
            rows.append([grid.times[k], *x, *cv])
    io.write_csv(os.path.join(stage, "curvature.csv"),
                 ["t"] + [f"x_{l+1}" for l in range(n)] + [f"R_{l+1}" for l in range(n)], rows)
    tol = cfg.tol(cfg.f("curvature", "tol"))
    v = market.zero_curvature_test(ens, xs, tol, g=g, h_fd=1e-4 * dom.A)
    io.write_json(os.path.join(stage, "curvature.json"),
                  {"zero_curvature": v.zero_curvature, "max_residual": v.max_residual, "tol": tol})
    return ["curvature.csv", "curvature.json"]


def cmd_simulate(cfg, seed, stage, threads):
    ens = build_ensemble(cfg, seed, threads)
    n = ens.n_assets
    header = ["path_id", "t"] + [f"x_{l+1}" for l in range(n)] + [f"d_{l+1}" for l in range(n)] + [f"r_{l+1}" for l in range(n)]
    path = os.path.join(stage, "ensemble.csv")
    times = ens.grid.times
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for p in range(ens.n_paths):
            block = np.column_stack([np.full(times.size, p), times, ens.x[p], ens.d[p], ens.r[p]])
            for row in block:
                fh.write(str(int(row[0])) + "," + ",".join("%.17g" % v for v in row[1:]) + "\n")
    return ["ensemble.csv"]


COMMANDS = {
    "spectrum": cmd_spectrum,
    "nupbr": cmd_nupbr,
    "evolve": cmd_evolve,
    "moments": cmd_moments,
    "bubble": cmd_bubble,
    "feynman": cmd_feynman,
    "curvature": cmd_curvature,
    "simulate": cmd_simulate,
}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qarb", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"qarb {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="INI run configuration")
        s.add_argument("--seed", type=int, help="overrides run.seed")
        s.add_argument("--out", help="output directory (overrides run.out)")
        s.add_argument("--tol", help="overrides run.tol")
        s.add_argument("--threads", type=int, help="worker threads; does not change outputs")
    return p


def run(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig.from_text("")
        if args.seed is not None:
            cfg.set("run", "seed", args.seed)
        if args.tol is not None:
            cfg.set("run", "tol", args.tol)
        if args.threads is not None:
            cfg.set("run", "threads", args.threads)
        seed = cfg.seed()
        threads = cfg.positive("run", "threads", True)
        out = args.out or cfg.get("run", "out")
        start = time.perf_counter()
        with io.staged_output(out) as stage:
            files = COMMANDS[args.command](cfg, seed, stage, threads)
            io.write_manifest(stage, out, command=args.command, config_text=_canonical(cfg), seed=seed,
                              version=__version__, wall_clock=time.perf_counter() - start, files=files)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotConverged as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (QarbError, FloatingPointError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(os.path.abspath(out))
    return EXIT_OK


def _canonical(cfg: RunConfig) -> str:
    lines = []
    for sec in sorted(cfg.parser.sections()):
        if sec == "run":
            continue
        for k in sorted(cfg.parser[sec]):
            lines.append(f"{sec}.{k}={cfg.parser[sec][k]}")
    return "\n".join(lines)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
