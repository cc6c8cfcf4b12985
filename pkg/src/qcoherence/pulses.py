"""Transfer-function distortion, Rabi-based transfer-function estimation and pulse design.

See :mod:`qcoherence.waveform` for the frequency-sign convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.spatial.transform import Rotation

from .channels import as_array
from .lindblad import LindbladParams, RabiModel, rabi_trajectory
from .waveform import TransferFunction, Waveform, flat, one_pole, square, two_pole, zero  # noqa: F401

PAD_FACTOR = 4

# ---------------------------------------------------------------------------
# distortion
# ---------------------------------------------------------------------------


def _offset_freqs(n: int, dt: float) -> np.ndarray:
    return np.fft.fftfreq(n, dt)


def _apply(w: Waveform, factor, keep_padding: bool) -> Waveform:
    n = len(w)
    padded = np.zeros(PAD_FACTOR * n, dtype=complex)
    padded[:n] = w.envelope
    spec = np.fft.fft(padded)
    out = np.fft.ifft(spec * factor(_offset_freqs(len(padded), w.dt)))
    return Waveform(out if keep_padding else out[:n], w.dt)


def distort(w: Waveform, t: TransferFunction, keep_padding: bool = False) -> Waveform:
    """``W' = IFFT(T . FFT(W))`` on the x4 zero-padded grid, padding removed afterwards."""
    return _apply(w, t, keep_padding)


def predistort(w: Waveform, t: TransferFunction, keep_padding: bool = False) -> Waveform:
    """Regularized inverse ``T* / (|T|^2 + eps^2)``."""
    eps = t.regularization

    def inv(f):
        v = t(f)
        return v.conj() / (np.abs(v) ** 2 + eps**2)

    return _apply(w, inv, keep_padding)


# ---------------------------------------------------------------------------
# transfer-function points from Rabi oscillations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransferPoint:
    delta: float
    value: complex
    omega: float
    psi: float
    nominal: complex
    residual_rms: float
    flags: tuple = ()

    @property
    def low_confidence(self) -> bool:
        return "low_confidence" in self.flags


def _wrap(phi):
    return (phi + np.pi) % (2 * np.pi) - np.pi


def _fit_omega_psi(model_xy, x, y, omega0, psi0_guesses, omega_guesses):
    data = np.concatenate([x, y])

    def resid(p):
        mx, my = model_xy(p[0], p[1])
        return np.concatenate([mx, my]) - data

    scored = []
    for om in omega_guesses:
        for ps in psi0_guesses:
            r = resid((om, ps))
            scored.append((float(r @ r), om, ps))
    scored.sort(key=lambda s: s[0])
    best = None
    for _, om, ps in scored[:4]:
        sol = optimize.least_squares(
            resid, [om, ps], bounds=([0.0, -np.inf], [np.inf, np.inf]),
            x_scale=[omega0, 1.0], xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000,
        )
        if best is None or sol.cost < best.cost:
            best = sol
    return best


def fit_transfer_point(
    times,
    x,
    y,
    delta: float,
    nominal: complex,
    t0: float = 0.0,
    low_confidence_ratio: float = 0.2,
) -> TransferPoint:
    """Fit ``(Omega, psi)`` of a constant drive at offset ``delta`` to ``<sx>(t), <sy>(t)``.

    Returns ``T(delta) = Omega e^{i psi} / nominal``.  Points with
    ``|Omega / delta|`` below ``low_confidence_ratio`` are flagged, as are
    trajectories shorter than two periods of ``w1``.
    """
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    omega0 = abs(nominal)
    if omega0 == 0:
        raise ValueError("nominal drive must be nonzero")

    def model_xy(om, ps):
        mx, my, _ = rabi_trajectory(RabiModel(delta, om, ps, t0), times)
        return mx, my

    omegas = omega0 * np.geomspace(0.1, 5.0, 60)
    psis = np.linspace(-np.pi, np.pi, 24, endpoint=False)
    sol = _fit_omega_psi(model_xy, x, y, omega0, psis, omegas)
    if sol.status <= 0:
        raise RuntimeError(f"transfer point fit did not converge: {sol.message}")
    om, ps = float(sol.x[0]), float(_wrap(sol.x[1]))
    flags = []
    if delta != 0 and om / abs(delta) < low_confidence_ratio:
        flags.append("low_confidence")
    if (times.max() - t0) * math.hypot(om, delta) < 4 * np.pi:
        flags.append("short_trajectory")
    value = om * np.exp(1j * ps) / nominal
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    return TransferPoint(float(delta), complex(value), om, ps, complex(nominal), rms, tuple(flags))


@dataclass(frozen=True)
class RabiMeasurement:
    """Measured <sx>, <sy> under a nominally square drive ``nominal e^{i delta (t - t0)}`` from ``t0``."""

    delta: float
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    nominal: complex
    t0: float = 0.0


def square_drive(delta: float, nominal: complex, t0: float, t_end: float, dt: float) -> Waveform:
    """Sampled envelope of a square pulse at offset ``delta``; zero before ``t0``."""
    n = int(math.ceil(t_end / dt - 1e-9))
    mid = (np.arange(n) + 0.5) * dt
    env = np.where(mid >= t0, nominal * np.exp(1j * delta * (mid - t0)), 0.0)
    return Waveform(env, dt)


def bloch_trajectory(wf: Waveform, delta: float = 0.0, r0=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Exact dissipation-free Bloch vectors at the sample boundaries, shape (len+1, 3)."""
    env = wf.envelope
    w = np.stack([env.real, env.imag, np.full(len(env), -delta)], axis=1)
    rots = Rotation.from_rotvec(w * wf.dt).as_matrix()
    out = np.empty((len(env) + 1, 3))
    out[0] = r0
    for k, r in enumerate(rots):
        out[k + 1] = r @ out[k]
    return out


def _edge_model(meas: RabiMeasurement, tf: TransferFunction, dt: float):
    t_end = float(np.max(meas.times)) + dt
    nominal_wf = square_drive(meas.delta, meas.nominal, meas.t0, t_end, dt)
    shaped = distort(nominal_wf, tf)
    plateau = meas.nominal * tf(np.array([meas.delta / (2 * np.pi)]))[0]
    grid = np.arange(len(shaped) + 1) * dt

    def model_xy(om, ps):
        scale = om * np.exp(1j * ps) / plateau
        traj = bloch_trajectory(shaped.scaled(scale))
        return np.interp(meas.times, grid, traj[:, 0]), np.interp(meas.times, grid, traj[:, 1])

    return model_xy


def _tabulate(points: Sequence[TransferPoint], dt: float, epsilon_reg=None) -> TransferFunction:
    pts = sorted(points, key=lambda p: p.delta)
    f = np.array([p.delta / (2 * np.pi) for p in pts])
    v = np.array([p.value for p in pts])
    nyq = 0.5 / dt
    return TransferFunction(f, v, epsilon_reg).extended(-nyq, nyq)


def refine_transfer_function(
    measurements: Sequence[RabiMeasurement],
    dt: float = 1e-9,
    iterations: int = 2,
    epsilon_reg: Optional[float] = None,
):
    """Transfer function from Rabi data, correcting for distorted pulse edges.

    The first pass assumes perfect square pulses.  Each further iteration
    re-simulates every measurement with the nominal pulse distorted by the
    current estimate (edges from the estimate, plateau from the fit) and
    refits.  Returns ``(TransferFunction, list of TransferPoint per pass)``.
    """
    if len(measurements) < 2:
        raise ValueError("need at least two offset frequencies")
    history = [[fit_transfer_point(m.times, m.x, m.y, m.delta, m.nominal, m.t0) for m in measurements]]
    tf = _tabulate(history[-1], dt, epsilon_reg)
    for _ in range(iterations):
        points = []
        for m, prev in zip(measurements, history[-1]):
            model_xy = _edge_model(m, tf, dt)
            sol = _fit_omega_psi(
                model_xy, np.asarray(m.x), np.asarray(m.y), abs(m.nominal),
                [prev.psi], [prev.omega],
            )
            om, ps = float(sol.x[0]), float(_wrap(sol.x[1]))
            points.append(
                TransferPoint(m.delta, complex(om * np.exp(1j * ps) / m.nominal), om, ps, m.nominal,
                              float(np.sqrt(np.mean(sol.fun**2))), prev.flags)
            )
        history.append(points)
        tf = _tabulate(points, dt, epsilon_reg)
    return tf, history


def adjust_phase_slope(tf: TransferFunction, slope: float) -> TransferFunction:
    """Multiply by ``exp(i slope 2 pi f)``: the offline counterpart of the timing-slope tweak."""
    return TransferFunction(tf.freqs, tf.response * np.exp(1j * slope * 2 * np.pi * tf.freqs), tf.epsilon_reg)


# ---------------------------------------------------------------------------
# pulse design
# ---------------------------------------------------------------------------

_PAULI = np.array(
    [[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex
)


def target_unitary(target) -> np.ndarray:
    """SU(2) matrix (up to sign) realizing a unitary PTM."""
    m = as_array(target)
    r = m[1:, 1:]
    if np.abs(r @ r.T - np.eye(3)).max() > 1e-6 or np.abs(m[1:, 0]).max() > 1e-6:
        raise ValueError("target PTM is not unitary")
    rotvec = Rotation.from_matrix(r).as_rotvec()
    return _su2(rotvec / 2)


def _su2(h):
    """``exp(-i h . sigma)`` for h of shape (..., 3)."""
    h = np.asarray(h, dtype=float)
    n = np.linalg.norm(h, axis=-1)
    c = np.cos(n)
    sinc = np.where(n > 1e-8, np.sin(n) / np.where(n > 0, n, 1.0), 1.0 - n**2 / 6)
    hs = np.einsum("...k,kab->...ab", h, _PAULI)
    return c[..., None, None] * np.eye(2) - 1j * sinc[..., None, None] * hs


def _su2_grad(h):
    """Derivatives of ``exp(-i h . sigma)`` w.r.t. h components, shape (..., 3, 2, 2)."""
    n = np.linalg.norm(h, axis=-1)
    safe = np.where(n > 1e-6, n, 1.0)
    sinc = np.where(n > 1e-6, np.sin(n) / safe, 1.0 - n**2 / 6)
    # d(sinc)/dh_m = h_m * (n cos n - sin n) / n^3  ->  -h_m / 3 for small n
    dsinc = np.where(n > 1e-6, (n * np.cos(n) - np.sin(n)) / safe**3, -1.0 / 3.0)
    hs = np.einsum("...k,kab->...ab", h, _PAULI)
    eye = np.eye(2)
    g = (
        -(sinc * 1.0)[..., None, None, None] * h[..., :, None, None] * eye
        - 1j * dsinc[..., None, None, None] * h[..., :, None, None] * hs[..., None, :, :]
        - 1j * sinc[..., None, None, None] * _PAULI
    )
    return g


@dataclass(frozen=True)
class DesignResult:
    waveform: Waveform
    fidelity: float
    iterations: int
    converged: bool
    history: tuple = field(repr=False, default=())
    flags: tuple = ()


def _ensemble(robustness, n_larmor=None):
    if robustness is None:
        return np.zeros(1), np.ones(1), np.ones(1)
    if isinstance(robustness, LindbladParams):
        return robustness.grid()
    raise TypeError("robustness must be LindbladParams or None")


def weighted_fidelity(wf: Waveform, target, robustness=None) -> float:
    """Distribution-weighted average gate fidelity of a dissipation-free pulse."""
    ut = target_unitary(target)
    deltas, scales, weights = _ensemble(robustness)
    f, _ = _fidelity_and_grad(_controls(wf), wf.dt, ut, deltas, scales, weights, need_grad=False)
    return f


def _controls(wf):
    env = wf.envelope
    return np.concatenate([env.real, env.imag])


def _fidelity_and_grad(ctrl, dt, ut, deltas, scales, weights, need_grad=True):
    n = len(ctrl) // 2
    a, b = ctrl[:n], ctrl[n:]
    # h[j, k] for member j and slice k: H dt / 2 in the Pauli basis
    h = np.empty((len(deltas), n, 3))
    h[..., 0] = scales[:, None] * a[None] * dt / 2
    h[..., 1] = scales[:, None] * b[None] * dt / 2
    h[..., 2] = -deltas[:, None] * dt / 2
    u = _su2(h)
    j = len(deltas)
    fwd = np.empty((j, n + 1, 2, 2), dtype=complex)
    fwd[:, 0] = np.eye(2)
    for k in range(n):
        fwd[:, k + 1] = u[:, k] @ fwd[:, k]
    total = fwd[:, n]
    g = np.einsum("ab,jab->j", ut.conj(), total)  # Tr(Ut^dag U)
    fid = (np.abs(g) ** 2 + 2) / 6
    f = float(weights @ fid)
    if not need_grad:
        return f, None
    # back[:, k] = Ut^dag U_n ... U_{k+2}, so dg/dh_k = Tr(back_k dU_k fwd_k)
    back = np.empty((j, n, 2, 2), dtype=complex)
    acc = np.broadcast_to(ut.conj().T, (j, 2, 2)).copy()
    for k in range(n - 1, -1, -1):
        back[:, k] = acc
        acc = acc @ u[:, k]
    du = _su2_grad(h)  # (j, n, 3, 2, 2)
    dg = np.einsum("jkab,jkmbc,jkca->jkm", back, du, fwd[:, :n])
    dfid = (2.0 / 6.0) * np.real(np.conj(g)[:, None, None] * dg)  # (j, n, 3)
    da = np.einsum("j,jk,j->k", weights, dfid[..., 0], scales) * dt / 2
    db = np.einsum("j,jk,j->k", weights, dfid[..., 1], scales) * dt / 2
    return f, np.concatenate([da, db])


def design_pulse(
    target,
    duration: float,
    n_samples: int,
    robustness: Optional[LindbladParams] = None,
    max_iter: int = 500,
    step: Optional[float] = None,
    method: str = "ascent",
    max_amplitude: Optional[float] = None,
    fidelity_floor: float = 0.99,
    tol: float = 1e-10,
    seed: int = 0,
    init: Optional[Waveform] = None,
) -> DesignResult:
    """Robust piecewise-constant pulse by gradient ascent on the weighted fidelity.

    ``method="ascent"`` is fixed-step gradient ascent (controls scaled by the
    resonant square-pulse amplitude); ``method="lbfgs"`` hands the same exact
    gradient to L-BFGS-B.  Dissipation is not part of the objective.
    Stagnation below ``fidelity_floor`` is reported in ``flags``.
    """
    if n_samples < 1 or duration <= 0:
        raise ValueError("need n_samples >= 1 and duration > 0")
    dt = duration / n_samples
    ut = target_unitary(target)
    deltas, scales, weights = _ensemble(robustness)
    angle = 2 * math.acos(min(1.0, abs(np.trace(ut)) / 2))
    unit = max(angle, np.pi / 2) / duration  # amplitude scale of a square pulse

    if init is not None:
        if len(init) != n_samples:
            raise ValueError("init waveform must have n_samples samples")
        x0 = _controls(init) / unit
    else:
        rng = np.random.default_rng(seed)
        axis = Rotation.from_matrix(as_array(target)[1:, 1:]).as_rotvec()
        base = np.zeros(2 * n_samples)
        if angle > 1e-12:
            base[:n_samples] = axis[0] / np.linalg.norm(axis) * angle / duration / unit
            base[n_samples:] = axis[1] / np.linalg.norm(axis) * angle / duration / unit
        x0 = base + 0.01 * rng.standard_normal(2 * n_samples)
        if robustness is None or len(weights) == 1 and deltas[0] == 0 and scales[0] == 1:
            x0 = base

    bound = None if max_amplitude is None else max_amplitude / unit

    def fg(x):
        f, g = _fidelity_and_grad(x * unit, dt, ut, deltas, scales, weights)
        return f, g * unit

    history = []
    if method == "lbfgs":
        def neg(x):
            f, g = fg(x)
            history.append(f)
            return -f, -g

        bounds = None if bound is None else [(-bound, bound)] * len(x0)
        sol = optimize.minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-12})
        x, f_best, iters = sol.x, -sol.fun, int(sol.nit)
        converged = bool(sol.success)
    elif method == "ascent":
        lr = 1.0 / n_samples if step is None else step
        x = x0.copy()
        f_prev, g = fg(x)
        history.append(f_prev)
        converged = False
        iters = 0
        for iters in range(1, max_iter + 1):
            x = x + lr * n_samples * g
            if bound is not None:
                x = np.clip(x, -bound, bound)
            f, g = fg(x)
            history.append(f)
            if abs(f - f_prev) < tol or 1 - f < tol:
                converged = True
                break
            f_prev = f
        f_best = history[-1]
    else:
        raise ValueError(f"unknown method {method!r}")

    flags = () if f_best >= fidelity_floor else ("below_fidelity_floor",)
    n = n_samples
    wf = Waveform((x[:n] + 1j * x[n:]) * unit, dt)
    return DesignResult(wf, float(f_best), iters, converged, tuple(history), flags)
