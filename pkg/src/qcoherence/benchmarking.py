"""Randomized and purity benchmarking on PTM-level noise models."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .channels import PauliTransferMatrix, as_array
from .clifford import cayley_table, clifford_ptms, inverse_table

AXES = {"x": 1, "y": 2, "z": 3}


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------


def _rng(seed: int, *counters: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, counters)]))


@dataclass(frozen=True)
class SequenceSet:
    lengths: tuple
    sequences: Mapping[int, np.ndarray] = field(repr=False)
    rng_seed: int
    count: int

    def __iter__(self):
        return iter(self.lengths)

    def to_dict(self) -> dict:
        return {
            "seed": self.rng_seed,
            "count": self.count,
            "lengths": list(self.lengths),
            "sequences": {str(m): self.sequences[m].tolist() for m in self.lengths},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "SequenceSet":
        lengths = tuple(int(m) for m in data["lengths"])
        seqs = {m: np.asarray(data["sequences"][str(m)], dtype=np.int64).reshape(-1, m) for m in lengths}
        for m, arr in seqs.items():
            if arr.size and (arr.min() < 0 or arr.max() > 23):
                raise ValueError(f"invalid Clifford index in sequences of length {m}")
        return cls(lengths, seqs, int(data["seed"]), int(data["count"]))


def gen_sequences(lengths: Sequence[int], count: int, seed: int) -> SequenceSet:
    """Uniform random Clifford sequences; each (length, sequence) has its own stream."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if len(lengths) == 0:
        raise ValueError("lengths must be nonempty")
    lengths = tuple(int(m) for m in lengths)
    if min(lengths) < 0:
        raise ValueError("sequence lengths must be nonnegative")
    seqs = {}
    for m in lengths:
        arr = np.empty((count, m), dtype=np.int64)
        for j in range(count):
            arr[j] = _rng(seed, m, j).integers(0, 24, size=m)
        arr.setflags(write=False)
        seqs[m] = arr
    return SequenceSet(lengths, seqs, int(seed), int(count))


# ---------------------------------------------------------------------------
# noise models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoisyCliffords:
    """Noisy PTMs for the 24 Cliffords, optionally over a weighted ensemble.

    ``gates`` has shape (K, 24, 4, 4); member ``k`` of the ensemble carries
    probability ``weights[k]``.  Each ensemble member runs a whole sequence
    with its own gates and the outcomes are averaged at readout, so static
    inhomogeneity (e.g. a spread of Larmor frequencies) is kept correlated
    across the sequence.
    """

    gates: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gates, dtype=float)
        if g.ndim == 3:
            g = g[None]
        if g.shape[1:] != (24, 4, 4):
            raise ValueError(f"gates must have shape (K, 24, 4, 4), got {g.shape}")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape != (g.shape[0],):
            raise ValueError("one weight per ensemble member is required")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
            raise ValueError("ensemble weights must be nonnegative and sum to 1")
        g.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "gates", g)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_gates(cls, gates) -> "NoisyCliffords":
        g = np.asarray(gates, dtype=float)
        if g.ndim == 3:
            g = g[None]
        return cls(g, np.full(g.shape[0], 1.0 / g.shape[0]))

    @property
    def mean_gates(self) -> np.ndarray:
        return np.einsum("k,kgij->gij", self.weights, self.gates)

    def noise_after(self) -> np.ndarray:
        """Ensemble-averaged ``E(G) = noisy(G) @ ideal(G)^-1``, shape (24, 4, 4)."""
        return np.einsum("gij,gkj->gik", self.mean_gates, clifford_ptms())


def noisy_cliffords(noise) -> NoisyCliffords:
    """Normalize the accepted noise descriptions.

    * a single PTM: gate-independent noise applied after every ideal gate;
    * a mapping ``index -> PTM``: gate-dependent noise after each ideal gate
      (missing indices are noiseless);
    * an array of shape (24, 4, 4): per-gate noise after each ideal gate;
    * a :class:`NoisyCliffords`: used as is.
    """
    if isinstance(noise, NoisyCliffords):
        return noise
    ideal = clifford_ptms()
    if isinstance(noise, Mapping):
        per_gate = np.repeat(np.eye(4)[None], 24, axis=0)
        for k, e in noise.items():
            k = int(k)
            if not 0 <= k < 24:
                raise ValueError(f"invalid Clifford index {k}")
            per_gate[k] = as_array(e)
        return NoisyCliffords(np.einsum("gij,gjk->gik", per_gate, ideal), np.ones(1))
    arr = np.asarray(noise.m if isinstance(noise, PauliTransferMatrix) else noise, dtype=float)
    if arr.shape == (4, 4):
        return NoisyCliffords(np.einsum("ij,gjk->gik", arr, ideal), np.ones(1))
    if arr.shape == (24, 4, 4):
        return NoisyCliffords(np.einsum("gij,gjk->gik", arr, ideal), np.ones(1))
    raise ValueError(f"cannot interpret noise of shape {arr.shape}")


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkRecord:
    m: int
    values: np.ndarray
    observable: str

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def sem(self) -> float:
        n = len(self.values)
        if n < 2:
            return 0.0
        return float(np.std(self.values, ddof=1) / np.sqrt(n))


class RbRecord(BenchmarkRecord):
    pass


class PbRecord(BenchmarkRecord):
    pass


def records_to_csv(records: Sequence[BenchmarkRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["m", "seq_index", "value", "observable"])
    for rec in records:
        for j, v in enumerate(rec.values):
            writer.writerow([rec.m, j, repr(float(v)), rec.observable])
    return buf.getvalue()


def records_from_csv(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    grouped: dict = {}
    for row in rows:
        key = (int(row["m"]), row["observable"])
        grouped.setdefault(key, []).append((int(row["seq_index"]), float(row["value"])))
    out = []
    for (m, obs), items in sorted(grouped.items()):
        items.sort()
        cls = PbRecord if obs == "purity" else RbRecord
        out.append(cls(m, np.array([v for _, v in items]), obs))
    return out


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def _run(gates: np.ndarray, seqs: np.ndarray, state: np.ndarray) -> np.ndarray:
    """Propagate ``state`` through every sequence for each ensemble member.

    Returns final PTM vectors of shape (K, n_seq, 4).
    """
    k_members = gates.shape[0]
    n_seq, m = seqs.shape
    v = np.broadcast_to(state, (k_members, n_seq, 4)).copy()
    for j in range(m):
        v = np.einsum("kcab,kcb->kca", gates[:, seqs[:, j]], v)
    return v


def _composites(seqs: np.ndarray) -> np.ndarray:
    table = cayley_table()
    acc = np.zeros(seqs.shape[0], dtype=np.int64)
    for j in range(seqs.shape[1]):
        acc = table[seqs[:, j], acc]
    return acc


def _sample_expectation(values: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    p_up = np.clip((1.0 + values) / 2.0, 0.0, 1.0)
    return 2.0 * rng.binomial(shots, p_up) / shots - 1.0


def _check_indices(seqs: SequenceSet):
    for m in seqs.lengths:
        arr = seqs.sequences[m]
        if arr.size and (arr.min() < 0 or arr.max() > 23):
            raise ValueError(f"invalid Clifford index in sequences of length {m}")


def simulate_rb(
    noise,
    seqs: SequenceSet,
    spam: Optional[tuple] = None,
    shots: Optional[int] = None,
) -> list:
    """Exact RB signal per sequence: <sigma_z> after the sequence and its recovery gate.

    ``spam`` optionally overrides ``(state, measurement)``, both as 4-vectors in
    the Pauli basis: the state as ``(1, r_x, r_y, r_z)`` and the measurement as a
    covector whose dot product with the final state gives the recorded value.
    ``shots`` adds binomial readout noise with per-sequence counter seeds.
    """
    gates = noisy_cliffords(noise)
    _check_indices(seqs)
    state, meas = (np.array([1.0, 0, 0, 1.0]), np.array([0, 0, 0, 1.0])) if spam is None else map(np.asarray, spam)
    inv = inverse_table()
    records = []
    for m in seqs.lengths:
        arr = np.asarray(seqs.sequences[m])
        rec = inv[_composites(arr)]
        full = np.concatenate([arr, rec[:, None]], axis=1)
        final = _run(gates.gates, full, state)
        values = np.einsum("k,kca,a->c", gates.weights, final, meas)
        if shots:
            values = np.array([_sample_expectation(v, shots, _rng(seqs.rng_seed, m, j, 1)) for j, v in enumerate(values)])
        records.append(RbRecord(m, values, "z"))
    return records


def simulate_pb(noise, seqs: SequenceSet, shots: Optional[int] = None, state=(0.0, 0.0, 1.0)) -> list:
    """Exact PB signal per sequence: the purity ``|r|^2`` of the final Bloch vector."""
    gates = noisy_cliffords(noise)
    _check_indices(seqs)
    v0 = np.concatenate([[1.0], np.asarray(state, dtype=float)])
    records = []
    for m in seqs.lengths:
        arr = np.asarray(seqs.sequences[m])
        final = _run(gates.gates, arr, v0)
        bloch = np.einsum("k,kca->ca", gates.weights, final)[:, 1:]
        if shots:
            bloch = np.stack(
                [_sample_expectation(b, shots, _rng(seqs.rng_seed, m, j, 2)) for j, b in enumerate(bloch)]
            )
        records.append(PbRecord(m, np.sum(bloch**2, axis=1), "purity"))
    return records


@dataclass(frozen=True)
class SpamOffsets:
    a_x: float
    a_y: float
    a_z: float

    @property
    def a_prime(self) -> float:
        return self.a_x**2 + self.a_y**2 + self.a_z**2

    def to_dict(self) -> dict:
        return {"a_x": self.a_x, "a_y": self.a_y, "a_z": self.a_z, "a_prime": self.a_prime}


def spam_offsets(noise, state=(0.0, 0.0, 1.0), meas=("x", "y", "z")) -> SpamOffsets:
    """Offsets ``A_M = (1/24) sum_G Tr[M E_G(G rho G^dagger)]``, evaluated exactly.

    Axes absent from ``meas`` are reported as 0.
    """
    gates = noisy_cliffords(noise)
    v0 = np.concatenate([[1.0], np.asarray(state, dtype=float)])
    avg = np.einsum("k,kgab,b->a", gates.weights, gates.gates, v0) / 24.0
    comps = {ax: float(avg[AXES[ax]]) if ax in meas else 0.0 for ax in AXES}
    return SpamOffsets(comps["x"], comps["y"], comps["z"])
