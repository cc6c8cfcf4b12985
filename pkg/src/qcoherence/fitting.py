"""Single-exponential decay fits for RB and PB data.

RB:  <sigma_z>(m) = A_z + B (1 - 2 eps)^m
PB:  <P>(m)       = A' + B' u^(m - 1)

The decay parameter is fitted in logit coordinates so that eps stays in
(0, 1/2) and u in (0, 1); uncertainties come from the Jacobian in natural
coordinates at the optimum.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, special, stats

from .benchmarking import BenchmarkRecord

PARAM_NAMES = ("offset", "amplitude", "rate")


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecayFit:
    model: str
    offset: float
    amplitude: float
    rate: float
    sigma: dict
    ci95: dict
    residual_rms: float
    offset_fixed: bool
    flags: tuple = ()
    n_points: int = 0
    residual_autocorr: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def epsilon(self) -> float:
        if self.model != "rb":
            raise AttributeError("epsilon is defined for RB fits")
        return self.rate

    @property
    def u(self) -> float:
        if self.model != "pb":
            raise AttributeError("u is defined for PB fits")
        return self.rate

    @property
    def epsilon_in(self) -> float:
        """IEPG ``(1 - sqrt(u)) / 2`` from a PB fit."""
        if self.model != "pb":
            raise AttributeError("epsilon_in is defined for PB fits")
        return float((1.0 - np.sqrt(self.rate)) / 2.0)

    @property
    def epsilon_in_sigma(self) -> float:
        if self.model != "pb":
            raise AttributeError("epsilon_in is defined for PB fits")
        if self.rate <= 0:
            return float("nan")
        return float(self.sigma["rate"] / (4.0 * np.sqrt(self.rate)))

    def to_dict(self) -> dict:
        out = {
            "model": self.model,
            "parameters": {"offset": self.offset, "amplitude": self.amplitude, "rate": self.rate},
            "sigmas": dict(self.sigma),
            "ci95": {k: list(v) for k, v in self.ci95.items()},
            "residual_rms": self.residual_rms,
            "residual_autocorr": self.residual_autocorr,
            "offset_fixed": self.offset_fixed,
            "n_points": self.n_points,
            "flags": list(self.flags),
        }
        if self.model == "pb":
            out["parameters"]["epsilon_in"] = self.epsilon_in
            out["sigmas"]["epsilon_in"] = self.epsilon_in_sigma
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _base(rate, kind):
    return 1.0 - 2.0 * rate if kind == "rb" else rate


def _power(m, kind):
    return m if kind == "rb" else m - 1.0


def decay_model(m, offset, amplitude, rate, kind="rb"):
    m = np.asarray(m, dtype=float)
    return offset + amplitude * _base(rate, kind) ** _power(m, kind)


def _rate_from_logit(a, kind):
    s = special.expit(a)
    return 0.5 * s if kind == "rb" else s


def _logit_from_rate(rate, kind):
    s = 2.0 * rate if kind == "rb" else rate
    s = np.clip(s, 1e-12, 1 - 1e-12)
    return special.logit(s)


def _natural_jacobian(m, amplitude, rate, kind, include_offset):
    k = _power(m, kind)
    base = _base(rate, kind)
    d_amp = base**k
    if kind == "rb":
        d_rate = -2.0 * amplitude * k * base ** (k - 1)
    else:
        d_rate = amplitude * k * base ** (k - 1)
    cols = [np.ones_like(m)] if include_offset else []
    cols += [d_amp, d_rate]
    return np.column_stack(cols)


def _aggregate(records: Sequence[BenchmarkRecord]):
    ms = np.array([r.m for r in records], dtype=float)
    means = np.array([r.mean for r in records])
    sems = np.array([r.sem for r in records])
    counts = np.array([len(r.values) for r in records])
    order = np.argsort(ms, kind="stable")
    return ms[order], means[order], sems[order], counts[order]


def _initial_guess(m, y, kind, offset):
    if offset is None:
        c = float(y[m == m.max()].mean())
        # the largest-m bin sits on the curve itself; back off so log(y - c) exists
        c = c - 0.5 * abs(y.min() - c) - 1e-3 if c >= y.min() else c
    else:
        c = offset
    k = _power(m, kind)
    d = y - c
    ok = d > 1e-12
    base, amp = 0.99, float(y.max() - c)
    if ok.sum() >= 2 and np.ptp(k[ok]) > 0:
        slope, intercept = np.polyfit(k[ok], np.log(d[ok]), 1)
        if slope < 0:
            base, amp = float(np.exp(slope)), float(np.exp(intercept))
    base = float(np.clip(base, 1e-6, 1 - 1e-9))
    rate = (1.0 - base) / 2.0 if kind == "rb" else base
    return c, amp, rate


def _fit(records, kind, offset, max_nfev):
    m, y, sems, counts = _aggregate(records)
    if len(np.unique(m)) < 3:
        raise ValueError("at least 3 distinct sequence lengths are required")
    n = len(m)
    absolute = bool(np.all(sems > 1e-15) and np.all(counts >= 2))
    sigma_y = sems if absolute else np.ones(n)
    fixed = offset is not None

    if np.ptp(y) < 1e-12:
        a0 = 0.0 if offset is None else float(offset)
        rate = 0.0 if kind == "rb" else 1.0
        zero = {"offset": 0.0, "amplitude": 0.0, "rate": 0.0}
        return DecayFit(
            kind, a0, float(y[0] - a0), rate, zero,
            {k: (v, v) for k, v in zip(PARAM_NAMES, (a0, float(y[0] - a0), rate))},
            0.0, fixed, ("degenerate",), n,
        )

    def unpack(x):
        if fixed:
            return float(offset), x[0], _rate_from_logit(x[1], kind)
        return x[0], x[1], _rate_from_logit(x[2], kind)

    def resid(x):
        a, b, r = unpack(x)
        return (decay_model(m, a, b, r, kind) - y) / sigma_y

    starts = []
    c0, b0, r0 = _initial_guess(m, y, kind, offset)
    starts.append((c0, b0, r0))
    if not fixed:
        _, b1, r1 = _initial_guess(m, y, kind, 0.0)
        starts.append((0.0, b1, r1))
    best = None
    for c, b, r in starts:
        x0 = [b, _logit_from_rate(r, kind)] if fixed else [c, b, _logit_from_rate(r, kind)]
        sol = optimize.least_squares(
            resid, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev
        )
        if best is None or sol.cost < best.cost:
            best = sol
    if best.status <= 0:
        raise FitError(f"decay fit did not converge: {best.message}")

    a, b, r = unpack(best.x)
    jac = _natural_jacobian(m, b, r, kind, not fixed) / sigma_y[:, None]
    dof = max(n - jac.shape[1], 1)
    chi2 = float(np.sum(best.fun**2))
    cov = np.linalg.pinv(jac.T @ jac)
    if not absolute:
        cov = cov * chi2 / dof
    sig = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    names = PARAM_NAMES[1:] if fixed else PARAM_NAMES
    sigma = dict(zip(names, map(float, sig)))
    if fixed:
        sigma["offset"] = 0.0
    values = {"offset": a, "amplitude": b, "rate": r}
    tq = float(stats.t.ppf(0.975, dof))
    ci95 = {k: (float(values[k] - tq * sigma[k]), float(values[k] + tq * sigma[k])) for k in PARAM_NAMES}

    raw = decay_model(m, a, b, r, kind) - y
    w = best.fun
    flags = []
    ac = float("nan")
    if n >= 4 and np.std(w) > 0:
        wc = w - w.mean()
        ac = float(np.sum(wc[1:] * wc[:-1]) / np.sum(wc * wc))
        if ac > 2.0 / np.sqrt(n):
            flags.append("correlated_residuals")
    return DecayFit(
        kind, float(a), float(b), float(r), sigma, ci95,
        float(np.sqrt(np.mean(raw**2))), fixed, tuple(flags), n, ac,
    )


def fit_rb(records, offset: Optional[float] = None, max_nfev: int = 10000) -> DecayFit:
    """Fit ``A_z + B (1-2 eps)^m``; ``offset=None`` fits A_z, a number fixes it."""
    return _fit(records, "rb", offset, max_nfev)


def fit_pb(records, offset: Optional[float] = None, max_nfev: int = 10000) -> DecayFit:
    """Fit ``A' + B' u^(m-1)``; ``offset=None`` fits A', a number fixes it."""
    return _fit(records, "pb", offset, max_nfev)


def bootstrap_ci(records, n_resamples: int, seed: int, kind: str = "rb", offset: Optional[float] = None) -> dict:
    """Percentile bootstrap over sequences, resampled within each length.

    Returns ``{param: (lo, hi)}`` for offset, amplitude and rate (plus
    ``epsilon_in`` for PB).
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    fit = fit_rb if kind == "rb" else fit_pb
    draws = []
    for i in range(n_resamples):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        resampled = [
            type(r)(r.m, r.values[rng.integers(0, len(r.values), size=len(r.values))], r.observable)
            for r in records
        ]
        f = fit(resampled, offset=offset)
        row = [f.offset, f.amplitude, f.rate]
        if kind == "pb":
            row.append(f.epsilon_in)
        draws.append(row)
    draws = np.array(draws)
    names = list(PARAM_NAMES) + (["epsilon_in"] if kind == "pb" else [])
    lo, hi = np.percentile(draws, [2.5, 97.5], axis=0)
    return {k: (float(a), float(b)) for k, a, b in zip(names, lo, hi)}
