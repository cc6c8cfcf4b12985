"""The 24-element single-qubit Clifford group built as G = S P Z.

``S`` in {I, X90, Y90}, ``P`` in {I, Y180}, ``Z`` in {I, Z90, Z180, Z270}.  In
time ``S`` acts first, then ``P``, then the (virtual) ``Z``; the PTM of an
element is therefore ``Z @ P @ S``.  Elements are indexed lexicographically in
``(s, p, z)`` with the orders listed above, so index 0 is the identity and::

    index = 8 * s + 4 * p + z
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channels import PauliTransferMatrix, as_array, ptm_from_blocks, rotation_matrix

S_LABELS = ("I", "X90", "Y90")
P_LABELS = ("I", "Y180")
Z_LABELS = ("I", "Z90", "Z180", "Z270")

_X = (1.0, 0.0, 0.0)
_Y = (0.0, 1.0, 0.0)
_Z = (0.0, 0.0, 1.0)

PRIMITIVE_ROTATIONS = {
    "I": (_Z, 0.0),
    "X90": (_X, np.pi / 2),
    "Y90": (_Y, np.pi / 2),
    "X180": (_X, np.pi),
    "Y180": (_Y, np.pi),
    "Z90": (_Z, np.pi / 2),
    "Z180": (_Z, np.pi),
    "Z270": (_Z, 3 * np.pi / 2),
}


def ideal_ptm(label: str) -> np.ndarray:
    axis, theta = PRIMITIVE_ROTATIONS[label]
    return ptm_from_blocks(rotation_matrix(axis, theta)).m


@dataclass(frozen=True)
class CliffordElement:
    index: int
    s: str
    p: str
    z: str
    ptm: PauliTransferMatrix

    @property
    def label(self) -> str:
        return f"{self.s}.{self.p}.{self.z}"


@lru_cache(maxsize=None)
def clifford_group() -> tuple:
    """All 24 elements in canonical order (element 0 is the identity)."""
    elements = []
    for idx, (s, p, z) in enumerate(itertools.product(S_LABELS, P_LABELS, Z_LABELS)):
        m = ideal_ptm(z) @ ideal_ptm(p) @ ideal_ptm(s)
        m = np.round(m, 12) + 0.0  # clean -0.0 and 1e-17 noise
        elements.append(CliffordElement(idx, s, p, z, PauliTransferMatrix(m)))
    return tuple(elements)


@lru_cache(maxsize=None)
def clifford_ptms() -> np.ndarray:
    """Read-only array of shape (24, 4, 4) with the ideal PTMs."""
    arr = np.stack([el.ptm.m for el in clifford_group()])
    arr.setflags(write=False)
    return arr


def find_element(ptm, atol: float = 1e-9) -> int:
    """Index of the Clifford whose ideal PTM equals ``ptm``."""
    m = as_array(ptm)
    diffs = np.abs(clifford_ptms() - m).max(axis=(1, 2))
    idx = int(np.argmin(diffs))
    if diffs[idx] > atol:
        raise LookupError("matrix is not a single-qubit Clifford PTM")
    return idx


def element_index(s: str = "I", p: str = "I", z: str = "I") -> int:
    return 8 * S_LABELS.index(s) + 4 * P_LABELS.index(p) + Z_LABELS.index(z)


@lru_cache(maxsize=None)
def cayley_table() -> np.ndarray:
    """``table[a, b]`` is the index of ``ptm(a) @ ptm(b)``."""
    ptms = clifford_ptms()
    table = np.empty((24, 24), dtype=np.int64)
    for a in range(24):
        for b in range(24):
            table[a, b] = find_element(ptms[a] @ ptms[b])
    table.setflags(write=False)
    return table


def cayley(a: int, b: int) -> int:
    return int(cayley_table()[a, b])


@lru_cache(maxsize=None)
def inverse_table() -> np.ndarray:
    inv = np.argmax(cayley_table() == 0, axis=1)
    inv.setflags(write=False)
    return inv


def inverse(k: int) -> int:
    return int(inverse_table()[k])


def compose_sequence(seq) -> int:
    """Index of the composite ``G_m ... G_1`` for ``seq = [G_1, ..., G_m]``."""
    table = cayley_table()
    acc = 0
    for g in seq:
        acc = table[g, acc]
    return int(acc)


def recovery_gate(seq) -> tuple:
    """Group inverse of the sequence composite and the sign it leaves on Z.

    Returns ``(index, sign)``; with the exact-inverse convention ``sign`` is +1.
    """
    r = inverse(compose_sequence(seq))
    total = clifford_ptms()[cayley(r, compose_sequence(seq))]
    sign = int(np.sign(total[3, 3]))
    return r, sign


def lift_primitives(primitives: dict, empty_slot: str = "identity-if-bare") -> np.ndarray:
    """Assemble noisy PTMs for all 24 Cliffords from primitive pulse PTMs.

    ``primitives`` maps labels among X90, Y90, Y180 (and I) to 4x4 PTMs, or to
    (K, 4, 4) stacks for an ensemble (the result is then (K, 24, 4, 4)); the
    Z factor is applied noiselessly.  ``empty_slot`` decides what realizes an
    ``I`` in the S or P slot:

    * ``"identity-if-bare"`` - nothing, except that an element whose S and P are
      both ``I`` is played as one identity pulse (every element takes at least
      one pulse slot);
    * ``"none"`` - empty slots are perfect identities;
    * ``"always"`` - every empty slot is played as the identity pulse.
    """
    if empty_slot not in ("identity-if-bare", "none", "always"):
        raise ValueError(f"unknown empty_slot policy {empty_slot!r}")
    arrays = {k: np.asarray(as_array(v) if np.ndim(v) < 3 else v, dtype=float) for k, v in primitives.items()}
    sizes = {a.shape[0] for a in arrays.values() if a.ndim == 3}
    if len(sizes) > 1:
        raise ValueError("batched primitives must share the ensemble size")
    if sizes:
        # one lift per ensemble member, result (K, 24, 4, 4)
        k = sizes.pop()
        return np.stack([
            lift_primitives({n: (a[i] if a.ndim == 3 else a) for n, a in arrays.items()}, empty_slot)
            for i in range(k)
        ])
    eye = np.eye(4)

    def prim(label):
        return arrays[label] if label in arrays else ideal_ptm(label)

    out = np.empty((24, 4, 4))
    for el in clifford_group():
        s_m = eye if el.s == "I" else prim(el.s)
        p_m = eye if el.p == "I" else prim(el.p)
        if empty_slot == "always":
            if el.s == "I":
                s_m = prim("I")
            if el.p == "I":
                p_m = prim("I")
        elif empty_slot == "identity-if-bare" and el.s == "I" and el.p == "I":
            s_m = prim("I")
        out[el.index] = ideal_ptm(el.z) @ p_m @ s_m
    return out
