"""Control waveforms and transfer functions, plus their CSV formats.

Frequency convention: the complex envelope ``I + iQ`` lives in the frame
rotating at the qubit resonance.  A drive at carrier offset ``Delta = w - w0``
shows up in that frame as ``Omega exp(i (psi + Delta t))``, so the envelope
component ``exp(2 pi i f t)`` sits at offset frequency ``f``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Waveform:
    """Piecewise-constant envelope; ``samples`` in rad/s, ``dt`` in seconds."""

    samples: np.ndarray
    dt: float
    phase_offset: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex).reshape(-1)
        if s.size == 0:
            raise ValueError("waveform must have at least one sample")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) * self.dt

    @property
    def times(self) -> np.ndarray:
        """Start time of every sample."""
        return np.arange(len(self.samples)) * self.dt

    @property
    def envelope(self) -> np.ndarray:
        """Samples with the phase offset applied."""
        return self.samples * np.exp(1j * self.phase_offset)

    def with_phase(self, phase: float) -> "Waveform":
        return Waveform(self.samples, self.dt, self.phase_offset + phase)

    def scaled(self, factor: complex) -> "Waveform":
        return Waveform(self.samples * factor, self.dt, self.phase_offset)

    def __add__(self, other: "Waveform") -> "Waveform":
        if len(other) != len(self) or not np.isclose(other.dt, self.dt):
            raise ValueError("waveforms must share length and dt")
        return Waveform(self.envelope + other.envelope, self.dt)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_ns", "i_amp", "q_amp"])
        for t, v in zip(self.times, self.envelope):
            w.writerow([repr(float(t * 1e9)), repr(float(v.real)), repr(float(v.imag))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Waveform":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty waveform file")
        t = np.array([float(r["time_ns"]) for r in rows]) * 1e-9
        s = np.array([float(r["i_amp"]) + 1j * float(r["q_amp"]) for r in rows])
        if len(t) > 1:
            steps = np.diff(t)
            if not np.allclose(steps, steps[0], rtol=1e-6, atol=0.0) or steps[0] <= 0:
                raise ValueError("waveform samples must be uniformly spaced")
            dt = float(steps[0])
        else:
            raise ValueError("waveform files need at least two samples to define dt")
        return cls(s, dt)


def square(amplitude: float, duration: float, dt: float, phase: float = 0.0) -> Waveform:
    n = int(round(duration / dt))
    return Waveform(np.full(n, amplitude * np.exp(1j * phase)), dt)


def zero(duration: float, dt: float) -> Waveform:
    return Waveform(np.zeros(max(int(round(duration / dt)), 1)), dt)


@dataclass(frozen=True)
class TransferFunction:
    """Tabulated complex response ``T(f)``; ``f`` in Hz, strictly increasing."""

    freqs: np.ndarray
    response: np.ndarray
    epsilon_reg: Optional[float] = None

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float).reshape(-1)
        r = np.asarray(self.response, dtype=complex).reshape(-1)
        if f.shape != r.shape or len(f) < 2:
            raise ValueError("freqs and response must be equal-length arrays with >= 2 points")
        if np.any(np.diff(f) <= 0):
            raise ValueError("freqs must be strictly increasing")
        if not np.all(np.isfinite(r)):
            raise ValueError("response must be finite")
        f.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "response", r)

    @property
    def regularization(self) -> float:
        if self.epsilon_reg is not None:
            return float(self.epsilon_reg)
        return 0.05 * float(np.abs(self.response).max())

    def covers(self, f) -> bool:
        f = np.asarray(f)
        tol = 1e-9 * max(abs(self.freqs[0]), abs(self.freqs[-1]))
        return bool(f.min() >= self.freqs[0] - tol and f.max() <= self.freqs[-1] + tol)

    def __call__(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if not self.covers(f):
            raise ValueError(
                f"transfer function covers [{self.freqs[0]:.4g}, {self.freqs[-1]:.4g}] Hz, "
                f"requested [{f.min():.4g}, {f.max():.4g}] Hz"
            )
        re = np.interp(f, self.freqs, self.response.real)
        im = np.interp(f, self.freqs, self.response.imag)
        return re + 1j * im

    def extended(self, f_min: float, f_max: float) -> "TransferFunction":
        """Hold the edge values out to ``[f_min, f_max]``."""
        f = list(self.freqs)
        r = list(self.response)
        if f_min < f[0]:
            f.insert(0, f_min)
            r.insert(0, r[0])
        if f_max > f[-1]:
            f.append(f_max)
            r.append(r[-1])
        return TransferFunction(np.array(f), np.array(r), self.epsilon_reg)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["freq_mhz", "re", "im"])
        for f, v in zip(self.freqs, self.response):
            w.writerow([repr(float(f / 1e6)), repr(float(v.real)), repr(float(v.imag))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, epsilon_reg: Optional[float] = None) -> "TransferFunction":
        rows = list(csv.DictReader(io.StringIO(text)))
        f = np.array([float(r["freq_mhz"]) for r in rows]) * 1e6
        v = np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows])
        return cls(f, v, epsilon_reg)


def _grid(span: float, n: int) -> np.ndarray:
    return np.linspace(-span, span, n)


def flat(span: float = 2e9, value: complex = 1.0) -> TransferFunction:
    return TransferFunction(np.array([-span, span]), np.array([value, value]))


def one_pole(fc: float, span: float = 2e9, n: int = 4001, delay: float = 0.0) -> TransferFunction:
    """``1 / (1 + i f / fc)``, optionally times a pure delay ``exp(2 pi i f delay)``."""
    f = _grid(span, n)
    return TransferFunction(f, np.exp(2j * np.pi * f * delay) / (1 + 1j * f / fc))


def two_pole(fc: float, q: float = 0.7, span: float = 2e9, n: int = 4001) -> TransferFunction:
    """Second-order low-pass ``1 / (1 + i f/(q fc) - (f/fc)^2)``."""
    f = _grid(span, n)
    x = f / fc
    return TransferFunction(f, 1.0 / (1 + 1j * x / q - x**2))
