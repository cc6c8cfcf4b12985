"""Single-qubit channel algebra in the Pauli transfer matrix (PTM) representation.

A PTM is the real 4x4 matrix ``E[j, k] = Tr[s_j E(s_k)] / 2`` over the Pauli
basis ``(I, X, Y, Z)``.  Row 0 is ``(1, 0, 0, 0)`` for trace-preserving maps,
column 0 below the diagonal is the non-unital vector ``E_n`` and the lower-right
3x3 block is the unital part ``E_u``.

All error metrics here are for d = 2.  For general dimension the incoherent
error obeys ``eps >= eps_in >= (d-1)/d * (1 - sqrt(u))`` with the unitarity
``u = d/(d-1) * int dpsi Tr[E(psi - 1/d)]^2``; only the qubit case is coded.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np

PAULIS = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)

DEFAULT_CPTP_TOL = 1e-8


@dataclass(frozen=True)
class PauliTransferMatrix:
    """Immutable 4x4 PTM.  ``a @ b`` composes (``b`` acts first)."""

    m: np.ndarray

    def __post_init__(self):
        arr = np.array(self.m, dtype=float)
        if arr.shape != (4, 4):
            raise ValueError(f"PTM must be 4x4, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "m", arr)

    @property
    def unital(self) -> np.ndarray:
        return self.m[1:, 1:]

    @property
    def nonunital(self) -> np.ndarray:
        return self.m[1:, 0]

    def __matmul__(self, other):
        return compose(self, other)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.m, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, PauliTransferMatrix):
            return NotImplemented
        return bool(np.array_equal(self.m, other.m))

    def __hash__(self):
        return hash(self.m.tobytes())

    def to_dict(self) -> dict:
        return {"ptm": [float(x) for x in self.m.ravel()]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "PauliTransferMatrix":
        values = data["ptm"]
        if len(values) != 16:
            raise ValueError("'ptm' must hold 16 row-major entries")
        return cls(np.asarray(values, dtype=float).reshape(4, 4))

    @classmethod
    def from_json(cls, text: str) -> "PauliTransferMatrix":
        return cls.from_dict(json.loads(text))


PTMLike = Union[PauliTransferMatrix, np.ndarray]


def as_array(e: PTMLike) -> np.ndarray:
    """Return the raw 4x4 float array behind a PTM or array-like."""
    arr = np.asarray(e.m if isinstance(e, PauliTransferMatrix) else e, dtype=float)
    if arr.shape != (4, 4):
        raise ValueError(f"PTM must be 4x4, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ChannelMetrics:
    epsilon: float
    fidelity: float
    u: float
    epsilon_in: float
    epsilon_coh: float

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "fidelity": self.fidelity,
            "u": self.u,
            "epsilon_in": self.epsilon_in,
            "epsilon_coh": self.epsilon_coh,
        }


@dataclass(frozen=True)
class CanonicalForm:
    """Signed SVD ``E_u = u_corr @ diag(sigma) @ v_corr`` with both factors in SO(3).

    ``lambda_`` is the z-component of the non-unital vector of the corrected
    channel ``E' = u_corr^T . E . v_corr^T``, which carries ``E'_u = diag(sigma)``.
    ``delta`` and ``c`` parametrize ``sigma = 1 - eps' * delta`` and
    ``u = 1 - 4 eps' + (4 + c) eps'^2``; both are NaN when ``eps' == 0``.
    """

    u_corr: np.ndarray
    sigma: np.ndarray
    lambda_: float
    v_corr: np.ndarray
    delta: np.ndarray
    c: float
    corrected: PauliTransferMatrix = field(repr=False)

    @property
    def epsilon_exact(self) -> float:
        """BEPG of the corrected channel, i.e. the exact IEPG."""
        return float((3.0 - np.sum(self.sigma)) / 6.0)

    @property
    def coherent_part(self) -> np.ndarray:
        """Unital block of the composite coherent error ``W = V o U``."""
        return self.v_corr @ self.u_corr


@dataclass(frozen=True)
class DiamondInterval:
    lower: float
    upper: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper - self.lower)

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "midpoint": self.midpoint,
            "half_width": self.half_width,
        }


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def rotation_matrix(axis, theta: float) -> np.ndarray:
    """SO(3) matrix for a right-handed rotation by ``theta`` about ``axis``.

    Matches the Bloch-sphere action of ``exp(-i theta n.sigma / 2)``.
    """
    n = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("rotation axis must be nonzero")
    n = n / norm
    k = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    return np.eye(3) + np.sin(theta) * k + (1 - np.cos(theta)) * (k @ k)


def ptm_from_blocks(unital, nonunital=(0.0, 0.0, 0.0)) -> PauliTransferMatrix:
    m = np.eye(4)
    m[1:, 1:] = unital
    m[1:, 0] = nonunital
    return PauliTransferMatrix(m)


def ptm_from_unitary(u: np.ndarray) -> PauliTransferMatrix:
    """PTM of the conjugation channel ``rho -> U rho U^dagger``."""
    u = np.asarray(u, dtype=complex)
    m = np.einsum("jab,bc,kcd,ad->jk", PAULIS, u, PAULIS, u.conj()).real / 2
    return PauliTransferMatrix(m)


def ptm_from_kraus(kraus) -> PauliTransferMatrix:
    m = np.zeros((4, 4))
    for k_op in kraus:
        k_op = np.asarray(k_op, dtype=complex)
        m += np.einsum("jab,bc,kcd,ad->jk", PAULIS, k_op, PAULIS, k_op.conj()).real / 2
    return PauliTransferMatrix(m)


def make_channel(family: str, **params) -> PauliTransferMatrix:
    """Build a CPTP PTM from a named family.

    ``depolarizing(p)``: ``rho -> (1-p) rho + p I/2``.
    ``dephasing(p)``: ``rho -> (1-p) rho + p Z rho Z``.
    ``amplitude_damping(gamma)``: relaxation toward the +z pole.
    ``unitary_rotation(axis, theta)``: ``exp(-i theta n.sigma/2)``.
    """
    if family == "depolarizing":
        p = _unit_interval(params, "p")
        return ptm_from_blocks((1 - p) * np.eye(3))
    if family == "dephasing":
        p = _unit_interval(params, "p")
        return ptm_from_blocks(np.diag([1 - 2 * p, 1 - 2 * p, 1.0]))
    if family == "amplitude_damping":
        g = _unit_interval(params, "gamma")
        s = np.sqrt(1 - g)
        return ptm_from_blocks(np.diag([s, s, 1 - g]), (0.0, 0.0, g))
    if family == "unitary_rotation":
        axis = np.asarray(params.get("axis", (0.0, 0.0, 1.0)), dtype=float)
        if axis.shape != (3,) or not np.isclose(np.linalg.norm(axis), 1.0, atol=1e-9):
            raise ValueError("axis must be a unit 3-vector")
        theta = float(params.get("theta", 0.0))
        return ptm_from_blocks(rotation_matrix(axis, theta))
    raise ValueError(f"unknown channel family {family!r}")


def _unit_interval(params: dict, name: str) -> float:
    if name not in params:
        raise ValueError(f"missing parameter {name!r}")
    value = float(params[name])
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def identity() -> PauliTransferMatrix:
    return PauliTransferMatrix(np.eye(4))


def compose(a: PTMLike, b: PTMLike) -> PauliTransferMatrix:
    """Channel ``a o b``: ``b`` is applied first."""
    return PauliTransferMatrix(as_array(a) @ as_array(b))


# ---------------------------------------------------------------------------
# Choi representation
# ---------------------------------------------------------------------------


def choi_matrix(e: PTMLike) -> np.ndarray:
    """Unit-trace Choi matrix ``(1/4) sum_jk E[j,k] s_k^T (x) s_j`` (input first)."""
    m = as_array(e)
    return np.einsum("jk,kab,jcd->acbd", m, PAULIS.transpose(0, 2, 1), PAULIS).reshape(4, 4) / 4


def ptm_from_choi(choi: np.ndarray) -> PauliTransferMatrix:
    """Inverse of :func:`choi_matrix` for a unit-trace Choi matrix."""
    j4 = np.asarray(choi, dtype=complex).reshape(2, 2, 2, 2)
    # E[j,k] = Tr[(s_k^T (x) s_j) J]
    m = np.einsum("kba,jcd,bdac->jk", PAULIS, PAULIS, j4).real
    return PauliTransferMatrix(m)


def choi_eigenvalues(e: PTMLike) -> np.ndarray:
    return np.linalg.eigvalsh(choi_matrix(e))


def is_cptp(e: PTMLike, tol: float = DEFAULT_CPTP_TOL) -> bool:
    m = as_array(e)
    if not np.allclose(m[0], [1.0, 0.0, 0.0, 0.0], atol=tol, rtol=0):
        return False
    return bool(choi_eigenvalues(m).min() >= -tol)


def negative_choi_weight(e: PTMLike) -> float:
    """Trace norm of the negative part of the unit-trace Choi matrix."""
    ev = choi_eigenvalues(e)
    return float(-ev[ev < 0].sum())


def random_cptp(rng: np.random.Generator, rank: int = 4) -> PauliTransferMatrix:
    """Random channel from a Ginibre Choi matrix normalized to be trace preserving."""
    g = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    w = g @ g.conj().T
    partial = np.einsum("aibi->ab", w.reshape(2, 2, 2, 2))
    vals, vecs = np.linalg.eigh(partial)
    inv_sqrt = vecs @ np.diag(vals ** -0.5) @ vecs.conj().T
    k = np.kron(inv_sqrt, np.eye(2))
    choi = k @ w @ k.conj().T / 2
    return ptm_from_choi(choi)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _require_tp(m: np.ndarray, tol: float = 1e-6):
    if not np.allclose(m[0], [1.0, 0.0, 0.0, 0.0], atol=tol, rtol=0):
        raise ValueError("PTM is not trace preserving (first row != (1, 0, 0, 0))")


def bepg(e: PTMLike) -> float:
    """Benchmarking error per gate ``(1/6) Tr(1 - E_u)``, equal to ``1 - F``."""
    m = as_array(e)
    _require_tp(m)
    return float((3.0 - np.trace(m[1:, 1:])) / 6.0)


def fidelity(e: PTMLike) -> float:
    return 1.0 - bepg(e)


def unitarity(e: PTMLike) -> float:
    """``u = Tr(E_u^T E_u) / 3``."""
    eu = as_array(e)[1:, 1:]
    return float(np.sum(eu * eu) / 3.0)


def iepg_from_unitarity(u: float) -> float:
    if u < 0:
        raise ValueError(f"unitarity must be nonnegative, got {u}")
    return float((1.0 - np.sqrt(u)) / 2.0)


def iepg(e: PTMLike) -> float:
    """Incoherent error per gate from the closed form ``(1 - sqrt(u)) / 2``."""
    return iepg_from_unitarity(unitarity(e))


def canonicalize(e: PTMLike) -> CanonicalForm:
    m = as_array(e)
    eu = m[1:, 1:]
    if np.count_nonzero(eu - np.diag(np.diag(eu))) == 0:
        # diagonal E_u: take the signed permutation directly so degenerate
        # textbook channels get identity corrections
        d = np.diag(eu)
        order = np.argsort(-np.abs(d), kind="stable")
        sign = np.where(d[order] < 0, -1.0, 1.0)
        left = np.eye(3)[:, order] * sign
        s = np.abs(d[order])
        right = np.eye(3)[order, :]
    else:
        left, s, right = np.linalg.svd(eu)
        # fix the per-pair sign freedom: dominant component of each left vector positive
        flip = np.sign(left[np.argmax(np.abs(left), axis=0), np.arange(3)])
        flip[flip == 0] = 1.0
        left = left * flip
        right = right * flip[:, None]
    if np.linalg.det(left) * np.linalg.det(right) < 0:
        s = s.copy()
        s[-1] = -s[-1]
        left = left.copy()
        left[:, -1] = -left[:, -1]
    # both factors now share a determinant sign; move a -1 out of each if needed
    if np.linalg.det(left) < 0:
        left = -left
        right = -right
    corrected = np.eye(4)
    corrected[1:, 1:] = np.diag(s)
    corrected[1:, 0] = left.T @ m[1:, 0]
    corrected[0] = m[0]
    eps_c = (3.0 - s.sum()) / 6.0
    if eps_c > 1e-14:
        delta = (1.0 - s) / eps_c
        u = np.sum(s * s) / 3.0
        c = (u - 1.0 + 4.0 * eps_c) / eps_c**2 - 4.0
    else:
        delta = np.full(3, np.nan)
        c = float("nan")
    return CanonicalForm(
        u_corr=left,
        sigma=s,
        lambda_=float(corrected[3, 0]),
        v_corr=right,
        delta=delta,
        c=float(c),
        corrected=PauliTransferMatrix(corrected),
    )


def iepg_exact(e: PTMLike) -> float:
    """Exact IEPG: BEPG of the canonical corrected channel."""
    return canonicalize(e).epsilon_exact


def coherent_error(e: PTMLike) -> float:
    """BEPG of the composite coherent error removed by the optimal corrections."""
    w = canonicalize(e).coherent_part
    return float((3.0 - np.trace(w)) / 6.0)


def channel_metrics(e: PTMLike) -> ChannelMetrics:
    eps = bepg(e)
    u = unitarity(e)
    return ChannelMetrics(
        epsilon=eps,
        fidelity=1.0 - eps,
        u=u,
        epsilon_in=iepg_from_unitarity(u),
        epsilon_coh=coherent_error(e),
    )


LOWER_DIAMOND_FACTOR = 1.5
UPPER_DIAMOND_FACTOR = 1.5 + 3.0 * np.sqrt(2.0)


def diamond_bounds(epsilon_in: float, sigma: float = 0.0) -> DiamondInterval:
    """Interval for the optimal worst-case error given the IEPG.

    With ``sigma > 0`` the interval is widened to cover ``epsilon_in +/- sigma``
    (first-order linear propagation).
    """
    if epsilon_in < 0:
        raise ValueError("epsilon_in must be nonnegative")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    lo = LOWER_DIAMOND_FACTOR * max(epsilon_in - sigma, 0.0)
    hi = UPPER_DIAMOND_FACTOR * (epsilon_in + sigma)
    return DiamondInterval(float(lo), float(hi))


# ---------------------------------------------------------------------------
# Haar-integral oracles
# ---------------------------------------------------------------------------


def haar_states(n: int, rng: np.random.Generator) -> np.ndarray:
    """Bloch vectors of ``n`` Haar-random pure qubit states."""
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def haar_fidelity_mc(e: PTMLike, n: int, rng: np.random.Generator) -> float:
    """Monte-Carlo ``int dpsi <psi|E(psi)|psi>``."""
    m = as_array(e)
    r = haar_states(n, rng)
    out = r @ m[1:, 1:].T + m[1:, 0]
    return float(np.mean(0.5 * (1.0 + np.sum(out * r, axis=1))))


def unitarity_mc(e: PTMLike, n: int, rng: np.random.Generator) -> float:
    """Monte-Carlo ``2 int dpsi Tr[E(psi - 1/2)]^2``."""
    m = as_array(e)
    r = haar_states(n, rng)
    out = r @ m[1:, 1:].T
    # E(psi - I/2) = (E_u r).sigma / 2; squared trace = |E_u r|^2 / 2
    return float(2.0 * np.mean(0.5 * np.sum(out * out, axis=1)))
