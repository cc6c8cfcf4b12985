"""Gate set tomography on the five primitive gates, and gate-dependent unitarity.

The data design is every triple ``Q_l Q_m Q_n`` (``Q_n`` applied first) of the
gates X90, Y90, X180, Y180, I on a fixed initial state, read out along x and
y.  States are Pauli vectors ``(1, r)`` and a measurement of axis ``k`` is the
covector ``e_k``, so every value is an expectation in [-1, 1].
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import optimize

from .channels import (
    PAULIS,
    PauliTransferMatrix,
    as_array,
    bepg,
    choi_matrix,
    is_cptp,
    unitarity,
)
from .clifford import clifford_ptms, ideal_ptm, lift_primitives

GATE_ORDER = ("X90", "Y90", "X180", "Y180", "I")
AXES = {"x": 1, "y": 2, "z": 3}
DEFAULT_AXES = ("x", "y")


# ---------------------------------------------------------------------------
# gate sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GateSet:
    gates: tuple  # 5 PauliTransferMatrix in GATE_ORDER

    def __post_init__(self):
        gates = tuple(g if isinstance(g, PauliTransferMatrix) else PauliTransferMatrix(g) for g in self.gates)
        if len(gates) != len(GATE_ORDER):
            raise ValueError(f"a gate set has {len(GATE_ORDER)} gates")
        object.__setattr__(self, "gates", gates)

    def __getitem__(self, name: str) -> PauliTransferMatrix:
        return self.gates[GATE_ORDER.index(name)]

    @property
    def array(self) -> np.ndarray:
        return np.stack([g.m for g in self.gates])

    def as_dict(self) -> dict:
        return dict(zip(GATE_ORDER, self.gates))

    def is_cptp(self, tol: float = 1e-6) -> bool:
        return all(is_cptp(g, tol) for g in self.gates)

    @classmethod
    def ideal(cls) -> "GateSet":
        return cls(tuple(ideal_ptm(n) for n in GATE_ORDER))

    @classmethod
    def from_mapping(cls, gates: Mapping) -> "GateSet":
        return cls(tuple(as_array(gates[n]) for n in GATE_ORDER))

    def to_list(self) -> list:
        return [{"name": n, "ptm": g.m.reshape(-1).tolist()} for n, g in zip(GATE_ORDER, self.gates)]

    def to_json(self) -> str:
        return json.dumps(self.to_list(), indent=1)

    @classmethod
    def from_list(cls, items: Sequence) -> "GateSet":
        """Accepts ``[{"name", "ptm"}, ...]`` (any order) or five bare 16-entry / 4x4 arrays."""
        if len(items) != len(GATE_ORDER):
            raise ValueError(f"expected {len(GATE_ORDER)} gates, got {len(items)}")
        if all(isinstance(it, Mapping) for it in items):
            by_name = {it["name"]: np.asarray(it["ptm"], dtype=float).reshape(4, 4) for it in items}
            missing = set(GATE_ORDER) - set(by_name)
            if missing:
                raise ValueError(f"missing gates: {sorted(missing)}")
            return cls.from_mapping(by_name)
        return cls(tuple(np.asarray(it, dtype=float).reshape(4, 4) for it in items))

    @classmethod
    def from_json(cls, text: str) -> "GateSet":
        return cls.from_list(json.loads(text))


def paper_conditions() -> list:
    with resources.files("qcoherence.data").joinpath("paper_gst_ptms.json").open() as fh:
        return list(json.load(fh)["conditions"])


def paper_gateset(condition: str = "T_meas_noSEL") -> GateSet:
    """Published reconstructed PTMs; conditions ``T_meas_SEL``, ``T_meas_noSEL``, ``T1_noSEL``."""
    with resources.files("qcoherence.data").joinpath("paper_gst_ptms.json").open() as fh:
        data = json.load(fh)
    if condition not in data["conditions"]:
        raise KeyError(f"unknown condition {condition!r}; choose from {sorted(data['conditions'])}")
    return GateSet.from_list(data["conditions"][condition]["gates"])


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def _triples():
    return list(itertools.product(range(5), repeat=3))


def _state_vector(rho_i) -> np.ndarray:
    r = np.asarray(rho_i, dtype=float).reshape(-1)
    if r.shape == (4,):
        return r
    if r.shape != (3,) or np.linalg.norm(r) > 1 + 1e-12:
        raise ValueError("rho_i must be a Bloch vector of length <= 1")
    return np.concatenate([[1.0], r])


def predict(gates: np.ndarray, rho_i=(0.0, 0.0, 1.0), axes: Sequence[str] = DEFAULT_AXES) -> np.ndarray:
    """Model table of shape (len(axes), 5, 5, 5): ``e_k . Q_l Q_m Q_n v``."""
    v = _state_vector(rho_i)
    after_n = np.einsum("nab,b->na", gates, v)
    after_mn = np.einsum("mab,nb->mna", gates, after_n)
    rows = gates[:, [AXES[a] for a in axes], :]  # (l, k, 4)
    return np.einsum("lka,mna->klmn", rows, after_mn)


@dataclass(frozen=True)
class GstDataset:
    values: np.ndarray  # (n_axes, 5, 5, 5)
    rho_i: tuple = (0.0, 0.0, 1.0)
    axes: tuple = DEFAULT_AXES

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.axes), 5, 5, 5):
            raise ValueError(f"values must have shape ({len(self.axes)}, 5, 5, 5)")
        if np.any(np.abs(v) > 1 + 1e-9):
            raise ValueError("expectation values must lie in [-1, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "rho_i", tuple(float(x) for x in self.rho_i))
        object.__setattr__(self, "axes", tuple(self.axes))

    def __len__(self):
        return self.values.size

    def value(self, k: str, l: str, m: str, n: str) -> float:
        idx = GATE_ORDER.index
        return float(self.values[self.axes.index(k), idx(l), idx(m), idx(n)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "l", "m", "n", "value"])
        for ki, k in enumerate(self.axes):
            for l, m, n in _triples():
                w.writerow([k, GATE_ORDER[l], GATE_ORDER[m], GATE_ORDER[n], repr(float(self.values[ki, l, m, n]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, rho_i=(0.0, 0.0, 1.0)) -> "GstDataset":
        rows = list(csv.DictReader(io.StringIO(text)))
        axes = tuple(sorted({r["k"] for r in rows}, key=lambda a: AXES[a]))
        vals = np.full((len(axes), 5, 5, 5), np.nan)
        for r in rows:
            vals[axes.index(r["k"]), GATE_ORDER.index(r["l"]), GATE_ORDER.index(r["m"]), GATE_ORDER.index(r["n"])] = float(
                r["value"]
            )
        if np.isnan(vals).any():
            raise ValueError("dataset is incomplete: every (k, l, m, n) entry is required")
        return cls(vals, tuple(rho_i), axes)


def gen_gst_data(
    gs: GateSet,
    rho_i=(0.0, 0.0, 1.0),
    meas: Sequence[str] = DEFAULT_AXES,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> GstDataset:
    """Exact triple expectations plus optional Gaussian readout noise (clipped to [-1, 1])."""
    vals = predict(gs.array, rho_i, meas)
    if noise_sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x657]))
        vals = np.clip(vals + noise_sigma * rng.standard_normal(vals.shape), -1.0, 1.0)
    return GstDataset(vals, tuple(np.asarray(rho_i, dtype=float).reshape(-1)[-3:]), tuple(meas))


# ---------------------------------------------------------------------------
# CPTP-constrained fit
# ---------------------------------------------------------------------------

_SIGT = PAULIS.transpose(0, 2, 1)


def _ptm_from_choi_batch(j: np.ndarray) -> np.ndarray:
    j4 = j.reshape(-1, 2, 2, 2, 2)
    return np.einsum("kba,jcd,gbdac->gjk", PAULIS, PAULIS, j4).real


def _choi_from_params(x: np.ndarray) -> np.ndarray:
    """Square-root parameterization: ``J = K (A A^dag) K`` with K fixing Tr_out J = I/2."""
    a = x.reshape(-1, 2, 4, 4)
    a = a[:, 0] + 1j * a[:, 1]
    w = a @ a.conj().transpose(0, 2, 1)
    partial = np.einsum("gacbc->gab", w.reshape(-1, 2, 2, 2, 2))
    vals, vecs = np.linalg.eigh(partial)
    vals = np.clip(vals, 1e-300, None)
    inv_sqrt = vecs @ (vals[:, :, None] ** -0.5 * vecs.conj().transpose(0, 2, 1))
    k = np.einsum("gab,cd->gacbd", inv_sqrt, np.eye(2)).reshape(-1, 4, 4) / np.sqrt(2.0)
    return k @ w @ k.conj().transpose(0, 2, 1)


def _params_from_gates(gates: np.ndarray, mix: float) -> np.ndarray:
    out = []
    dep = np.diag([1.0, 1 - mix, 1 - mix, 1 - mix])
    for g in gates:
        c = choi_matrix(dep @ g)
        vals, vecs = np.linalg.eigh(c)
        root = vecs @ np.diag(np.sqrt(np.clip(vals, 0, None))) @ vecs.conj().T
        out.append(np.stack([root.real, root.imag]))
    return np.concatenate([o.reshape(-1) for o in out])


def gates_from_params(x: np.ndarray) -> np.ndarray:
    return _ptm_from_choi_batch(_choi_from_params(x))


@dataclass(frozen=True)
class GstFit:
    gateset: GateSet
    residual: float  # sum of squared residuals
    converged: bool
    n_iter: int
    message: str
    flags: tuple = ()

    def __iter__(self):
        # allows ``gs, residual = fit_gst(...)``
        return iter((self.gateset, self.residual))


def _fit_tp(data: GstDataset, init: np.ndarray, max_iter: int, tol: float):
    """Least squares over the non-trace PTM rows only (TP but not CP)."""
    target = data.values.reshape(-1)

    def gates(x):
        g = init.copy()
        g[:, 1:, :] = x.reshape(5, 3, 4)
        return g

    def resid(x):
        return predict(gates(x), data.rho_i, data.axes).reshape(-1) - target

    sol = optimize.least_squares(resid, init[:, 1:, :].ravel(), method="trf", xtol=tol, ftol=tol, gtol=tol,
                                 max_nfev=max_iter)
    return gates(sol.x), sol


def fit_gst(
    data: GstDataset,
    init: Optional[GateSet] = None,
    max_iter: int = 2000,
    tol: float = 1e-15,
    init_mix: float = 1e-3,
    misfit_threshold: Optional[float] = None,
    cp_tol: float = 1e-9,
) -> GstFit:
    """CPTP least squares ``min sum (m - model)^2`` with the state and measurements fixed.

    A first pass fits the PTMs with trace preservation only.  If that
    optimum is completely positive to within ``cp_tol`` it is also the
    constrained optimum and is returned.  Otherwise each gate is
    parameterized as ``J = K (A A^dag) K`` (positivity from the square root
    ``A``, trace preservation from the congruence ``K``) and refit, starting
    from the first pass mixed with ``init_mix`` depolarizing noise so that
    ``A`` has full rank.  Non-convergence is reported in the result, not raised.
    """
    init = GateSet.ideal() if init is None else init
    target = data.values.reshape(-1)
    gates, sol = _fit_tp(data, init.array, max_iter, tol)
    n_iter = int(sol.nfev)
    cp = min(float(np.linalg.eigvalsh(choi_matrix(g)).min()) for g in gates) >= -cp_tol
    if not cp:
        start = gates if np.all(np.isfinite(gates)) else init.array
        x0 = _params_from_gates(start, init_mix)

        def resid(x):
            return predict(gates_from_params(x), data.rho_i, data.axes).reshape(-1) - target

        sol = optimize.least_squares(
            resid, x0, method="trf", xtol=tol, ftol=tol, gtol=tol, max_nfev=max_iter, x_scale="jac"
        )
        gates = gates_from_params(sol.x)
        n_iter += int(sol.nfev)
    gates[:, 0] = (1.0, 0.0, 0.0, 0.0)
    res = float(np.sum((predict(gates, data.rho_i, data.axes).reshape(-1) - target) ** 2))
    flags = []
    if misfit_threshold is None:
        misfit_threshold = 1e-6 * len(target)
    if res > misfit_threshold:
        flags.append("model_misfit")
    if sol.status <= 0:
        flags.append("not_converged")
    return GstFit(GateSet(tuple(gates)), res, sol.status > 0, n_iter, str(sol.message), tuple(flags))


def bootstrap_gst(
    gs: GateSet,
    noise_sigma: float,
    n_resamples: int,
    seed: int,
    rho_i=(0.0, 0.0, 1.0),
    meas: Sequence[str] = DEFAULT_AXES,
    max_iter: int = 500,
) -> dict:
    """Parametric bootstrap: refit synthetic data regenerated from ``gs`` with readout noise.

    Returns the per-entry standard deviation of each gate PTM and of the
    derived metrics.
    """
    if n_resamples < 2:
        raise ValueError("n_resamples must be >= 2")
    ptms, metrics = [], []
    for i in range(n_resamples):
        data = gen_gst_data(gs, rho_i, meas, noise_sigma, seed=int(np.random.SeedSequence([seed, i]).generate_state(1)[0]))
        fit = fit_gst(data, gs, max_iter=max_iter)
        ptms.append(fit.gateset.array)
        metrics.append(gateset_metrics(fit.gateset).as_vector())
    ptms = np.array(ptms)
    metrics = np.array(metrics)
    return {
        "ptm_std": {n: ptms[:, i].std(axis=0, ddof=1) for i, n in enumerate(GATE_ORDER)},
        "metric_std": dict(zip(GstMetrics.VECTOR_FIELDS, metrics.std(axis=0, ddof=1).tolist())),
    }


# ---------------------------------------------------------------------------
# unitarity of gate-dependent noise
# ---------------------------------------------------------------------------


def _noise_stack(gates) -> np.ndarray:
    if isinstance(gates, Mapping):
        if len(gates) != 24:
            raise ValueError("need noise channels for all 24 Cliffords")
        return np.stack([as_array(gates[k]) for k in sorted(gates)])
    arr = np.asarray(gates, dtype=float)
    if arr.shape != (24, 4, 4):
        raise ValueError("need noise channels for all 24 Cliffords")
    return arr


def avg_unitarity(gates) -> float:
    """Average of the unitarities ``(1/24) sum_G u[E(G)]``."""
    return float(np.mean([unitarity(e) for e in _noise_stack(gates)]))


def unitarity_of_avg(gates) -> float:
    """Unitarity of the average noise ``u[(1/24) sum_G E(G)]``."""
    return unitarity(_noise_stack(gates).mean(axis=0))


@dataclass(frozen=True)
class GstMetrics:
    fidelities: dict
    avg_unitarity: float
    unitarity_of_avg: float
    clifford_epsilon: float
    clifford_epsilon_in: float  # from the average of the unitarities
    clifford_epsilon_in_of_avg: float  # from the unitarity of the average noise

    VECTOR_FIELDS = (
        "avg_unitarity",
        "unitarity_of_avg",
        "clifford_epsilon",
        "clifford_epsilon_in",
        "clifford_epsilon_in_of_avg",
    )

    def as_vector(self) -> list:
        return [getattr(self, f) for f in self.VECTOR_FIELDS]

    def to_dict(self) -> dict:
        out = {f: getattr(self, f) for f in self.VECTOR_FIELDS}
        out["fidelities"] = dict(self.fidelities)
        return out


def clifford_noise(noisy: np.ndarray) -> np.ndarray:
    """``E(G) = ideal(G)^-1 noisy(G)``; ideal Clifford PTMs are orthogonal."""
    return np.einsum("gba,gbc->gac", clifford_ptms(), noisy)


def gateset_metrics(gs: GateSet, empty_slot: str = "identity-if-bare") -> "GstMetrics":
    return clifford_from_gateset(gs, empty_slot)[1]


def clifford_from_gateset(gs: GateSet, empty_slot: str = "identity-if-bare"):
    """Noisy PTMs of the 24 Cliffords (``G = S P Z``, virtual Z) and the derived metrics.

    Returns ``({index: PauliTransferMatrix}, GstMetrics)``.
    """
    noisy = lift_primitives(gs.as_dict(), empty_slot=empty_slot)
    noise = clifford_noise(noisy)
    fids = {n: 1.0 - bepg(ideal_ptm(n).T @ g.m) for n, g in zip(GATE_ORDER, gs.gates)}
    u_avg = avg_unitarity(noise)
    u_of_avg = unitarity_of_avg(noise)
    eps = float(np.mean([bepg(e) for e in noise]))
    metrics = GstMetrics(
        fids,
        u_avg,
        u_of_avg,
        eps,
        float((1 - np.sqrt(u_avg)) / 2),
        float((1 - np.sqrt(u_of_avg)) / 2),
    )
    return {i: PauliTransferMatrix(noisy[i]) for i in range(24)}, metrics
