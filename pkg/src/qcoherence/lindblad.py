"""Pulse-level simulation of a driven qubit with T1/T2 and ensemble averaging.

The master equation is integrated in the Pauli (Bloch) representation.  For
``H = -(Delta/2) sz + s (I sx + Q sy)/2`` the coherent part is the precession
``dr/dt = w x r`` with ``w = (s I, s Q, -Delta)``; amplitude damping towards
``+z`` at rate ``1/t1`` plus pure dephasing give transverse decay at ``1/t2``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .channels import PauliTransferMatrix, negative_choi_weight
from .waveform import Waveform

SIGMA = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)
AXES = {"x": 1, "y": 2, "z": 3}


class NumericalError(RuntimeError):
    """Simulation produced something unphysical (integrator or quadrature failure)."""


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbabilityDistribution:
    """A distribution together with the deterministic quadrature used to average over it."""

    kind: str
    params: dict
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if p.shape != w.shape or p.size == 0:
            raise ValueError("quadrature needs matching, nonempty points and weights")
        if np.any(w < 0) or not np.all(np.isfinite(p)):
            raise ValueError("weights must be nonnegative and points finite")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {w.sum():.15g})")
        if self.kind == "tabulated" and np.any(np.diff(p) <= 0):
            raise ValueError("tabulated points must be strictly increasing")
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @property
    def quadrature(self) -> list:
        return list(zip(self.points.tolist(), self.weights.tolist()))

    @property
    def mean(self) -> float:
        return float(self.weights @ self.points)

    def expectation(self, f) -> float:
        return float(self.weights @ f(self.points))

    def narrowed(self, factor: float) -> "ProbabilityDistribution":
        """Shrink the spread about the mean by ``factor`` (SEL doubles T2* with factor 2)."""
        c = self.mean
        params = dict(self.params, narrowed_by=self.params.get("narrowed_by", 1.0) * factor)
        kind = self.kind if self.kind != "tabulated" else "tabulated"
        return ProbabilityDistribution(kind, params, c + (self.points - c) / factor, self.weights)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "weight"])
        for p, q in zip(self.points, self.weights):
            w.writerow([repr(float(p)), repr(float(q))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ProbabilityDistribution":
        rows = list(csv.DictReader(io.StringIO(text)))
        p = np.array([float(r["point"]) for r in rows])
        w = np.array([float(r["weight"]) for r in rows])
        return tabulated(p, w)


def _normalized(w):
    w = np.asarray(w, dtype=float)
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have positive total")
    w = w / total
    return w / w.sum()


def delta(value: float = 0.0) -> ProbabilityDistribution:
    return ProbabilityDistribution("delta", {"value": float(value)}, [value], [1.0])


def lorentzian(center: float, hwhm: float, n: int = 101, cutoff: float = 100.0, core: float = 5.0) -> ProbabilityDistribution:
    """Lorentzian of half width ``hwhm`` truncated to ``|x - center| <= cutoff * hwhm``.

    Nodes follow ``x = core * hwhm * sinh(s a)`` on uniform ``s``, which puts
    most points within a few widths of the center while still reaching the far
    tails; weights are the density times the node spacing, renormalized.  An
    equal-probability (equal-angle) rule converges much more slowly for the
    free-induction decay because of its sparse, heavy tails.
    """
    if hwhm < 0:
        raise ValueError("hwhm must be nonnegative")
    if hwhm == 0 or n == 1:
        return delta(center)
    if n < 3:
        raise ValueError("use n >= 3 quadrature points")
    a = math.asinh(cutoff / core)
    s = np.linspace(-1.0, 1.0, n)
    y = core * np.sinh(a * s)
    w = _normalized(np.gradient(y) / (1.0 + y**2))
    params = {"center": center, "hwhm": hwhm, "n": n, "cutoff": cutoff, "core": core}
    return ProbabilityDistribution("lorentzian", params, center + hwhm * y, w)


def gaussian(center: float, sigma: float, n: int = 21) -> ProbabilityDistribution:
    """Gauss-Hermite rule (exact for polynomials up to degree 2n-1)."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0 or n == 1:
        return delta(center)
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return ProbabilityDistribution(
        "gaussian", {"center": center, "sigma": sigma, "n": n}, center + sigma * x, _normalized(w)
    )


def mixture(components: Sequence[ProbabilityDistribution], fractions: Sequence[float]) -> ProbabilityDistribution:
    f = _normalized(fractions)
    if len(f) != len(components):
        raise ValueError("one fraction per component")
    pts = np.concatenate([c.points for c in components])
    wts = np.concatenate([fi * c.weights for fi, c in zip(f, components)])
    return ProbabilityDistribution(
        "mixture", {"kinds": [c.kind for c in components], "fractions": f.tolist()}, pts, _normalized(wts)
    )


def tabulated(points, weights) -> ProbabilityDistribution:
    """Point masses (weights are normalized)."""
    return ProbabilityDistribution("tabulated", {}, np.asarray(points, dtype=float), _normalized(weights))


def tabulated_density(points, density) -> ProbabilityDistribution:
    """Trapezoid rule on a density sampled at strictly increasing points."""
    x = np.asarray(points, dtype=float)
    d = np.asarray(density, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points")
    h = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += h / 2
    w[1:] += h / 2
    return tabulated(x, w * d)


def larmor_lorentzian(t2_star: float, n: int = 101, **kw) -> ProbabilityDistribution:
    """Detuning distribution (rad/s) whose free-induction decay is ``exp(-t/t2_star)``."""
    return lorentzian(0.0, 1.0 / t2_star, n=n, **kw)


# ---------------------------------------------------------------------------
# parameters and states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LindbladParams:
    t1: float = math.inf
    t2: float = math.inf
    larmor_dist: ProbabilityDistribution = field(default_factory=delta)
    b1_dist: ProbabilityDistribution = field(default_factory=lambda: delta(1.0))
    dt: float = 1e-10

    def __post_init__(self):
        if not (self.t1 > 0 and self.t2 > 0):
            raise ValueError("t1 and t2 must be positive")
        if self.t2 > 2 * self.t1 * (1 + 1e-12):
            raise ValueError("t2 must not exceed 2*t1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def t_phi(self) -> float:
        rate = 1.0 / self.t2 - 1.0 / (2.0 * self.t1)
        return math.inf if rate <= 0 else 1.0 / rate

    def grid(self):
        """Tensor-product ensemble: detunings, B1 scales and weights, each of shape (N,)."""
        ld, bd = self.larmor_dist, self.b1_dist
        deltas = np.repeat(ld.points, len(bd.points))
        scales = np.tile(bd.points, len(ld.points))
        weights = np.outer(ld.weights, bd.weights).reshape(-1)
        return deltas, scales, weights

    def with_distributions(self, larmor_dist=None, b1_dist=None) -> "LindbladParams":
        return LindbladParams(
            self.t1, self.t2, larmor_dist or self.larmor_dist, b1_dist or self.b1_dist, self.dt
        )


@dataclass(frozen=True)
class DensityMatrix:
    rho: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rho, dtype=complex)
        if r.shape != (2, 2):
            raise ValueError("density matrix must be 2x2")
        if np.abs(r - r.conj().T).max() > 1e-12:
            raise ValueError("density matrix must be Hermitian")
        if abs(np.trace(r) - 1) > 1e-12:
            raise ValueError("density matrix must have unit trace")
        if np.linalg.eigvalsh(r).min() < -1e-10:
            raise ValueError("density matrix must be positive semidefinite")
        r = r.copy()
        r.setflags(write=False)
        object.__setattr__(self, "rho", r)

    @classmethod
    def from_bloch(cls, r) -> "DensityMatrix":
        x, y, z = r
        return cls(0.5 * (SIGMA[0] + x * SIGMA[1] + y * SIGMA[2] + z * SIGMA[3]))

    @classmethod
    def up(cls) -> "DensityMatrix":
        return cls.from_bloch((0, 0, 1))

    @classmethod
    def plus(cls) -> "DensityMatrix":
        return cls.from_bloch((1, 0, 0))

    @property
    def bloch(self) -> np.ndarray:
        return np.einsum("kab,ba->k", SIGMA[1:], self.rho).real

    @property
    def pauli_vector(self) -> np.ndarray:
        return np.concatenate([[1.0], self.bloch])


def _as_rho(rho0) -> DensityMatrix:
    if isinstance(rho0, DensityMatrix):
        return rho0
    arr = np.asarray(rho0)
    if arr.shape == (3,):
        return DensityMatrix.from_bloch(arr)
    return DensityMatrix(arr)


# ---------------------------------------------------------------------------
# integrator
# ---------------------------------------------------------------------------


def _dissipator(params: LindbladParams) -> np.ndarray:
    d = np.zeros((4, 4))
    g2 = 0.0 if math.isinf(params.t2) else 1.0 / params.t2
    g1 = 0.0 if math.isinf(params.t1) else 1.0 / params.t1
    d[1, 1] = d[2, 2] = -g2
    d[3, 3] = -g1
    d[3, 0] = g1
    return d


def _generators(envelope: complex, deltas, scales, diss) -> np.ndarray:
    """Pauli-basis generators for one waveform sample, shape (N, 4, 4)."""
    wx = scales * envelope.real
    wy = scales * envelope.imag
    wz = -deltas
    n = len(deltas)
    gen = np.broadcast_to(diss, (n, 4, 4)).copy()
    gen[:, 1, 2] -= wz
    gen[:, 1, 3] += wy
    gen[:, 2, 1] += wz
    gen[:, 2, 3] -= wx
    gen[:, 3, 1] -= wy
    gen[:, 3, 2] += wx
    return gen


def _rk4_step_matrices(gen: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step for ``dv/dt = L v`` with constant ``L``, as a matrix.

    For a constant generator the four RK4 stages collapse to the degree-4
    Taylor polynomial ``1 + hL + (hL)^2/2 + (hL)^3/6 + (hL)^4/24``.
    """
    a = h * gen
    eye = np.eye(4)
    out = eye + a / 4.0
    out = eye + np.matmul(a, out) / 3.0
    out = eye + np.matmul(a, out) / 2.0
    out = eye + np.matmul(a, out)
    return out


def _substeps(wf: Waveform, params: LindbladParams) -> int:
    if params.dt > wf.dt * (1 + 1e-9):
        raise ValueError("integrator step dt must not exceed the waveform sample period")
    return max(1, int(math.ceil(wf.dt / params.dt - 1e-9)))


def _propagate(state, wf: Waveform, params: LindbladParams, deltas, scales, record=None):
    """Apply the pulse to ``state`` (shape (N, 4) or (N, 4, 4)) for every ensemble member.

    ``record`` is an optional callback receiving the state after every substep.
    """
    n_sub = _substeps(wf, params)
    h = wf.dt / n_sub
    diss = _dissipator(params)
    vec = state.ndim == 2
    for e in wf.envelope:
        step = _rk4_step_matrices(_generators(complex(e), deltas, scales, diss), h)
        for _ in range(n_sub):
            state = np.einsum("nab,nb->na", step, state) if vec else np.matmul(step, state)
            if record is not None:
                record(state)
    return state


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    vectors: np.ndarray  # (n_times, 4) Pauli vectors (1, x, y, z)

    @property
    def bloch(self) -> np.ndarray:
        return self.vectors[:, 1:]

    def density_matrices(self) -> np.ndarray:
        return 0.5 * np.einsum("tk,kab->tab", self.vectors, SIGMA)

    def states(self) -> list:
        return [DensityMatrix(r) for r in self.density_matrices()]


def _time_axis(wf: Waveform, params: LindbladParams) -> np.ndarray:
    n_sub = _substeps(wf, params)
    return np.arange(len(wf) * n_sub + 1) * (wf.dt / n_sub)


def evolve(rho0, wf: Waveform, params: LindbladParams, delta: float = 0.0, b1_scale: float = 1.0) -> Trajectory:
    """Single-member trajectory, sampled at every integrator step (t = 0 included)."""
    v0 = _as_rho(rho0).pauli_vector[None]
    frames = [v0[0]]
    _propagate(v0, wf, params, np.array([float(delta)]), np.array([float(b1_scale)]), lambda s: frames.append(s[0]))
    return Trajectory(_time_axis(wf, params), np.array(frames))


def ensemble_average(rho0, wf: Waveform, params: LindbladParams, observables: Iterable[str] = ("x", "y", "z")) -> dict:
    """Quadrature-weighted observable trajectories; returns ``{"t": times, axis: values}``."""
    obs = list(observables)
    for ax in obs:
        if ax not in AXES:
            raise ValueError(f"unknown observable {ax!r}")
    deltas, scales, weights = params.grid()
    if len(weights) == 0:
        raise ValueError("empty quadrature")
    v0 = np.broadcast_to(_as_rho(rho0).pauli_vector, (len(weights), 4)).copy()
    frames = [weights @ v0]
    _propagate(v0, wf, params, deltas, scales, lambda s: frames.append(weights @ s))
    frames = np.array(frames)
    out = {"t": _time_axis(wf, params)}
    for ax in obs:
        out[ax] = frames[:, AXES[ax]]
    return out


def gate_ptm_ensemble(wf: Waveform, params: LindbladParams):
    """PTM of the pulse for every ensemble member: ``(ptms (N, 4, 4), weights (N,))``."""
    deltas, scales, weights = params.grid()
    eye = np.broadcast_to(np.eye(4), (len(weights), 4, 4)).copy()
    ptms = _propagate(eye, wf, params, deltas, scales)
    ptms[:, 0, :] = (1.0, 0.0, 0.0, 0.0)
    return ptms, weights


def gate_ptm_from_pulse(wf: Waveform, params: LindbladParams, cp_tol: float = 0.05) -> PauliTransferMatrix:
    """Ensemble-averaged PTM of the pulse, trace preservation enforced exactly."""
    ptms, weights = gate_ptm_ensemble(wf, params)
    m = np.einsum("n,nab->ab", weights, ptms)
    m[0] = (1.0, 0.0, 0.0, 0.0)
    if not np.all(np.isfinite(m)):
        raise NumericalError("non-finite PTM from pulse simulation")
    neg = negative_choi_weight(m)
    if neg > cp_tol:
        raise NumericalError(f"pulse PTM is far from CP (negative Choi weight {neg:.3g})")
    return PauliTransferMatrix(m)


def dissipation_ptm(duration: float, params: LindbladParams) -> PauliTransferMatrix:
    """Exact T1/T2 channel of a free evolution (no drive, zero detuning)."""
    m = np.eye(4)
    e2 = 0.0 if math.isinf(params.t2) else duration / params.t2
    e1 = 0.0 if math.isinf(params.t1) else duration / params.t1
    m[1, 1] = m[2, 2] = math.exp(-e2)
    m[3, 3] = math.exp(-e1)
    m[3, 0] = 1.0 - math.exp(-e1)
    return PauliTransferMatrix(m)


# ---------------------------------------------------------------------------
# closed-form Rabi trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RabiModel:
    """Constant drive of amplitude ``omega`` and phase ``psi`` at detuning ``delta`` from ``t0``."""

    delta: float
    omega: float
    psi: float = 0.0
    t0: float = 0.0

    @property
    def omega1(self) -> float:
        return math.hypot(self.delta, self.omega)

    @property
    def theta(self) -> float:
        return math.atan2(self.omega, -self.delta)


def rabi_trajectory(model: RabiModel, times):
    """Bloch components in the qubit (resonance) frame, starting from spin up at ``t0``.

    In the drive frame the spin precesses at ``w1`` about
    ``n = (sin th cos psi, sin th sin psi, cos th)``; the result is rotated by
    ``+Delta (t - t0)`` about z into the frame rotating at the qubit resonance,
    the frame in which an undriven spin is static.
    """
    tau = np.asarray(times, dtype=float) - model.t0
    w1 = model.omega1
    if w1 == 0:
        z = np.ones_like(tau)
        return np.zeros_like(tau), np.zeros_like(tau), z
    st, ct = model.omega / w1, -model.delta / w1
    cp, sp = math.cos(model.psi), math.sin(model.psi)
    c, s = np.cos(w1 * tau), np.sin(w1 * tau)
    # Rodrigues rotation of (0, 0, 1): r = n nz (1 - c) + (n x z) s + z c
    x = st * cp * ct * (1 - c) + st * sp * s
    y = st * sp * ct * (1 - c) - st * cp * s
    z = ct * ct * (1 - c) + c
    phi = model.delta * tau
    x0 = np.cos(phi) * x - np.sin(phi) * y
    y0 = np.sin(phi) * x + np.cos(phi) * y
    return x0, y0, z
