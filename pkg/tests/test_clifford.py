import numpy as np
import pytest

from qcoherence import channels as ch
from qcoherence.clifford import (
    cayley,
    cayley_table,
    clifford_group,
    clifford_ptms,
    compose_sequence,
    element_index,
    find_element,
    ideal_ptm,
    inverse,
    lift_primitives,
    recovery_gate,
)


def test_group_basics():
    group = clifford_group()
    assert len(group) == 24
    assert np.array_equal(group[0].ptm.m, np.eye(4))
    flat = np.round(clifford_ptms().reshape(24, -1), 9)
    assert len({tuple(r) for r in flat}) == 24
    for el in group:
        assert ch.unitarity(el.ptm) == pytest.approx(1.0)
        assert el.index == element_index(el.s, el.p, el.z)


def test_canonical_order_is_lexicographic():
    labels = [(el.s, el.p, el.z) for el in clifford_group()]
    keys = [("I", "X90", "Y90").index(s) * 8 + ("I", "Y180").index(p) * 4 + ("I", "Z90", "Z180", "Z270").index(z)
            for s, p, z in labels]
    assert keys == list(range(24))


def test_spz_order_convention():
    for el in clifford_group():
        expect = ideal_ptm(el.z) @ ideal_ptm(el.p) @ ideal_ptm(el.s)
        assert np.allclose(el.ptm.m, expect)


def test_x90_maps_z_to_minus_y():
    x90 = clifford_group()[element_index("X90")].ptm.m
    assert np.allclose(x90 @ [1, 0, 0, 1], [1, 0, -1, 0])


def test_cayley_examples():
    x90 = element_index("X90")
    x180 = find_element(ideal_ptm("X180"))
    for k in range(24):
        assert cayley(0, k) == k
        assert cayley(k, inverse(k)) == 0
    assert cayley(x90, x90) == x180


def test_cayley_is_latin_square():
    t = cayley_table()
    for row in t:
        assert sorted(row) == list(range(24))
    for col in t.T:
        assert sorted(col) == list(range(24))


def test_associativity_spot_check():
    rng = np.random.default_rng(0)
    for a, b, c in rng.integers(0, 24, size=(1000, 3)):
        assert cayley(cayley(a, b), c) == cayley(a, cayley(b, c))


def test_unitary_one_and_two_design():
    ptms = clifford_ptms()
    assert np.allclose(ptms.mean(axis=0), np.diag([1, 0, 0, 0]), atol=1e-12)
    rng = np.random.default_rng(1)
    e = ch.random_cptp(rng).m
    tw = np.mean([g.T @ e @ g for g in ptms], axis=0)
    eu = tw[1:, 1:]
    assert np.allclose(eu, np.trace(eu) / 3 * np.eye(3), atol=1e-10)


def test_recovery_gate():
    assert recovery_gate([]) == (0, 1)
    x180 = find_element(ideal_ptm("X180"))
    assert recovery_gate([x180]) == (x180, 1)
    seq = [element_index("X90"), element_index("Y90")]
    r, sign = recovery_gate(seq)
    total = clifford_ptms()[r] @ clifford_ptms()[seq[1]] @ clifford_ptms()[seq[0]]
    assert np.allclose(total, np.eye(4)) and sign == 1


def test_recovery_random_sequences():
    rng = np.random.default_rng(2)
    for _ in range(100):
        seq = list(rng.integers(0, 24, size=int(rng.integers(1, 30))))
        r, sign = recovery_gate(seq)
        assert cayley(r, compose_sequence(seq)) == 0 and sign == 1


def test_lift_primitives_policies():
    dep = ch.make_channel("depolarizing", p=0.1).m
    prims = {name: dep @ ideal_ptm(name) for name in ("X90", "Y90", "Y180", "I")}
    ideal = clifford_ptms()
    none = lift_primitives(prims, "none")
    assert np.allclose(none[0], np.eye(4))
    bare = lift_primitives(prims, "identity-if-bare")
    assert np.allclose(bare[0], dep)
    # Z-only elements are bare too; virtual Z stays noiseless
    assert np.allclose(bare[element_index(z="Z90")], ideal[element_index(z="Z90")] @ dep)
    # S+P elements use two pulses under every policy
    k = element_index("X90", "Y180", "Z180")
    for lifted in (none, bare, lift_primitives(prims, "always")):
        assert np.allclose(lifted[k], ideal_ptm("Z180") @ prims["Y180"] @ prims["X90"])
    always = lift_primitives(prims, "always")
    # empty P slot is played as an identity pulse
    assert np.allclose(always[element_index("X90")], dep @ dep @ ideal_ptm("X90"))
    with pytest.raises(ValueError):
        lift_primitives(prims, "sometimes")


def test_lift_primitives_batched():
    rng = np.random.default_rng(3)
    stacks = {n: np.stack([ch.random_cptp(rng).m @ ideal_ptm(n) for _ in range(3)]) for n in ("X90", "Y90", "Y180")}
    out = lift_primitives(stacks)
    assert out.shape == (3, 24, 4, 4)
    for i in range(3):
        assert np.allclose(out[i], lift_primitives({n: s[i] for n, s in stacks.items()}))
