"""Run configuration from an INI file with flat key-value sections.

Sections: market, spectrum, state, sde, bubble, feynman, curvature, run.
Lists are comma separated; distribution specs use colons, e.g.
``uniform:0:1`` or ``point:1``.
"""
from __future__ import annotations

import configparser
import math


from .errors import ConfigError, DomainError
from .market import MarketDomain
from .quadrature import QuadratureSpec

DEFAULTS = {
    "market": {"n_assets": "2", "x_bounds": "1,1", "d_bounds": "1,1", "r_box": ""},
    "spectrum": {"i_max": "2", "j_max": "2", "x_order": "16", "d_order": "16", "max_level": "12",
                 "rel_tol": "1e-10", "sign": "1", "nupbr_tol": "1e-8", "threads": "1"},
    "state": {"kind": "random", "i_max": "8", "j_max": "8", "center_x": "", "center_d": "",
              "widths": "0.1", "carrier": "", "I": "", "J": "", "r_law": "point:0",
              "times": "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1"},
    "sde": {"model": "gbm", "mu": "0", "sigma": "0.2", "theta": "1", "level": "0",
            "x0": "point:1", "d0": "point:1", "r0": "point:0", "t0": "0", "step": "0.01",
            "n_steps": "100", "n_paths": "10000"},
    "bubble": {"phi": "one", "quoted": "", "valuation_t": "0", "tau": "", "rate": "0",
               "claims": "", "maturity": "", "asset": "0", "tau_kind": "fixed", "tau_param": "1"},
    "feynman": {"n_paths": "100000", "n_steps": "50", "t": "0.5", "cells": "16", "center": "0.5,0.5",
                "width": "0.16", "carrier": "3,0", "d_point": "1,2", "rate": "0", "sigma_x": "1",
                "modes": "1,3,5,7"},
    "curvature": {"mu": "0.05,0.05", "rate": "0.01", "d0": "1,1", "step": "0.01", "n_steps": "10",
                  "g": "1", "x_samples": "0.5:0.5;1:0.2;0.2:1", "tol": "1e-8"},
    "run": {"seed": "0", "out": "out", "threads": "1", "tol": ""},
}


def floats(text, key):
    try:
        return [float(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(key, f"expected a comma-separated list of numbers, got {text!r}") from None


def ints(text, key):
    try:
        return [int(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(key, f"expected a comma-separated list of integers, got {text!r}") from None


def law(text, key):
    """'point:v', 'uniform:lo:hi' or 'normal:mean:sd' (values may be lists joined by '|')."""
    parts = str(text).split(":")
    kind = parts[0].strip()
    arity = {"point": 1, "uniform": 2, "normal": 2}
    if kind not in arity or len(parts) != arity[kind] + 1:
        raise ConfigError(key, f"bad distribution spec {text!r}")
    try:
        vals = [[float(v) for v in p.split("|")] for p in parts[1:]]
    except ValueError:
        raise ConfigError(key, f"bad number in {text!r}") from None
    vals = [v[0] if len(v) == 1 else v for v in vals]
    return (kind, *vals)


class RunConfig:
    """Validated view of the INI file.  Accessors raise ConfigError naming the key."""

    def __init__(self, parser: configparser.ConfigParser, text: str):
        self.parser = parser
        self.text = text
        known = set(DEFAULTS)
        for sec in parser.sections():
            if sec not in known:
                raise ConfigError(sec, "unknown section")
            for k in parser[sec]:
                if k not in DEFAULTS[sec]:
                    raise ConfigError(f"{sec}.{k}", "unknown key")
        self.domain = self._domain()

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        p = configparser.ConfigParser()
        p.optionxform = str
        try:
            p.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("config", str(exc).splitlines()[0]) from None
        return cls(p, text)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        return cls.from_text(text)

    def get(self, section, key) -> str:
        if self.parser.has_option(section, key):
            return self.parser.get(section, key)
        return DEFAULTS[section][key]

    def set(self, section, key, value):
        if not self.parser.has_section(section):
            self.parser.add_section(section)
        self.parser.set(section, key, str(value))

    def f(self, section, key) -> float:
        try:
            return float(self.get(section, key))
        except ValueError:
            raise ConfigError(f"{section}.{key}", "expected a number") from None

    def i(self, section, key) -> int:
        try:
            return int(self.get(section, key))
        except ValueError:
            raise ConfigError(f"{section}.{key}", "expected an integer") from None

    def fl(self, section, key):
        return floats(self.get(section, key), f"{section}.{key}")

    def il(self, section, key):
        return ints(self.get(section, key), f"{section}.{key}")

    def law(self, section, key):
        return law(self.get(section, key), f"{section}.{key}")

    def positive(self, section, key, integer=False):
        v = self.i(section, key) if integer else self.f(section, key)
        if not v > 0:
            raise ConfigError(f"{section}.{key}", "must be positive")
        return v

    def _domain(self) -> MarketDomain:
        n = self.i("market", "n_assets")
        if n < 1:
            raise ConfigError("market.n_assets", "must be >= 1")
        A = self.fl("market", "x_bounds")
        B = self.fl("market", "d_bounds")
        if len(A) == 1:
            A = A * n
        if len(B) == 1:
            B = B * n
        if len(A) != n:
            raise ConfigError("market.x_bounds", f"needs {n} values")
        if len(B) != n:
            raise ConfigError("market.d_bounds", f"needs {n} values")
        rb_text = self.get("market", "r_box").strip()
        rb = None
        if rb_text:
            try:
                rb = [tuple(float(v) for v in p.split(":")) for p in rb_text.split(",")]
            except ValueError:
                raise ConfigError("market.r_box", "expected lo:hi pairs") from None
        try:
            return MarketDomain(tuple(A), tuple(B), None if rb is None else tuple(rb))
        except DomainError as exc:
            key = "market.x_bounds" if any(a <= 0 for a in A) else "market.d_bounds" if any(b <= 0 for b in B) else "market.r_box"
            raise ConfigError(key, str(exc)) from None

    def quadrature(self) -> QuadratureSpec:
        try:
            return QuadratureSpec(self.i("spectrum", "x_order"), self.i("spectrum", "d_order"),
                                  self.i("spectrum", "max_level"), self.f("spectrum", "rel_tol"))
        except DomainError as exc:
            raise ConfigError("spectrum", str(exc)) from None

    def sign(self) -> int:
        s = self.i("spectrum", "sign")
        if s not in (1, -1):
            raise ConfigError("spectrum.sign", "must be 1 or -1")
        return s

    def seed(self) -> int:
        s = self.i("run", "seed")
        if not 0 <= s < 2**64:
            raise ConfigError("run.seed", "must be an unsigned 64-bit integer")
        return s

    def tol(self, default):
        t = self.get("run", "tol").strip()
        if t == "":
            return default
        v = float(t) if t.lower() not in ("inf", "infinity") else math.inf
        if not v >= 0:
            raise ConfigError("run.tol", "must be nonnegative")
        return v
