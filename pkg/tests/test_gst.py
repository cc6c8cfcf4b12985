import json

import numpy as np
import pytest

from qcoherence import channels as ch
from qcoherence import gst
from qcoherence.clifford import clifford_ptms, ideal_ptm

DEP = np.diag([1, 0.995, 0.995, 0.995])


def perturbed_gateset(deg=2.0, dep=DEP):
    gates = []
    for n in gst.GATE_ORDER:
        g = ideal_ptm(n)
        if n != "I":
            # over-rotation about the gate's own axis
            axis = (1, 0, 0) if n.startswith("X") else (0, 1, 0)
            g = ch.make_channel("unitary_rotation", axis=axis, theta=np.deg2rad(deg)).m @ g
        gates.append(dep @ g)
    return gst.GateSet(tuple(gates))


def test_ideal_dataset():
    d = gst.gen_gst_data(gst.GateSet.ideal())
    assert len(d) == 250
    assert d.value("x", "I", "I", "I") == 0
    # X90 maps +z to -y
    assert d.value("y", "I", "I", "X90") == pytest.approx(-1)
    assert d.value("x", "I", "Y90", "I") == pytest.approx(1)


def test_over_rotation_changes_only_x90_entries():
    ideal = gst.gen_gst_data(gst.GateSet.ideal()).values
    gates = dict(gst.GateSet.ideal().as_dict())
    gates["X90"] = ch.make_channel("unitary_rotation", axis=(1, 0, 0), theta=np.deg2rad(2)).m @ ideal_ptm("X90")
    other = gst.gen_gst_data(gst.GateSet.from_mapping(gates)).values
    changed = np.abs(other - ideal) > 1e-15
    i = gst.GATE_ORDER.index("X90")
    involves = np.zeros((5, 5, 5), bool)
    involves[i, :, :] = involves[:, i, :] = involves[:, :, i] = True
    assert changed.any()
    assert not (changed & ~involves[None]).any()


def test_noise_is_deterministic():
    a = gst.gen_gst_data(gst.GateSet.ideal(), noise_sigma=0.01, seed=3)
    b = gst.gen_gst_data(gst.GateSet.ideal(), noise_sigma=0.01, seed=3)
    c = gst.gen_gst_data(gst.GateSet.ideal(), noise_sigma=0.01, seed=4)
    assert np.array_equal(a.values, b.values) and not np.array_equal(a.values, c.values)
    assert np.abs(a.values).max() <= 1


def test_dataset_validation():
    with pytest.raises(ValueError):
        gst.GstDataset(np.zeros((2, 5, 5)))
    with pytest.raises(ValueError):
        gst.GstDataset(np.full((2, 5, 5, 5), 1.5))


def test_dataset_csv_round_trip():
    d = gst.gen_gst_data(perturbed_gateset(), meas=("x", "y", "z"), noise_sigma=0.01, seed=0)
    text = d.to_csv()
    assert text.splitlines()[0] == "k,l,m,n,value"
    back = gst.GstDataset.from_csv(text)
    assert back.axes == ("x", "y", "z") and np.array_equal(back.values, d.values)
    with pytest.raises(ValueError):
        gst.GstDataset.from_csv("\n".join(text.splitlines()[:-1]))


def test_gateset_json_round_trip():
    gs = perturbed_gateset()
    back = gst.GateSet.from_json(gs.to_json())
    assert np.array_equal(back.array, gs.array)
    bare = gst.GateSet.from_list([g.m.tolist() for g in gs.gates])
    assert np.array_equal(bare.array, gs.array)
    with pytest.raises(ValueError):
        gst.GateSet.from_list(gs.to_list()[:4])


def test_fit_ideal():
    fit = gst.fit_gst(gst.gen_gst_data(gst.GateSet.ideal()))
    assert fit.residual <= 1e-12
    m = gst.gateset_metrics(fit.gateset)
    assert all(f == pytest.approx(1, abs=1e-6) for f in m.fidelities.values())
    gs, res = fit
    assert res == fit.residual


def test_fit_round_trip_three_axes():
    truth = perturbed_gateset()
    fit = gst.fit_gst(gst.gen_gst_data(truth, meas=("x", "y", "z")))
    assert fit.residual <= 1e-10 and fit.converged and not fit.flags
    assert np.abs(fit.gateset.array - truth.array).max() <= 1e-4
    assert fit.gateset.is_cptp()


def _data_jacobian(gates, axes, h=1e-6):
    # derivative of the data table w.r.t. the non-trace rows of all five gates
    x0 = gates[:, 1:, :].ravel()

    def table(x):
        g = gates.copy()
        g[:, 1:, :] = x.reshape(5, 3, 4)
        return gst.predict(g, axes=axes).ravel()

    cols = []
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        cols.append((table(x0 + e) - table(x0 - e)) / (2 * h))
    return np.array(cols).T


def test_two_axis_design_is_not_identifiable():
    truth = perturbed_gateset().array
    s = np.linalg.svd(_data_jacobian(truth, ("x", "y")), compute_uv=False)
    # three SPAM-preserving gauge directions plus one more
    assert np.sum(s < 1e-8 * s[0]) == 4
    s = np.linalg.svd(_data_jacobian(truth, ("x", "y", "z")), compute_uv=False)
    assert np.sum(s < 1e-8 * s[0]) == 0


def test_two_axis_fit_differs_only_along_null_directions():
    truth = perturbed_gateset()
    data = gst.gen_gst_data(truth)
    fit = gst.fit_gst(data)
    assert fit.residual <= 1e-10
    null = np.linalg.svd(_data_jacobian(truth.array, ("x", "y")))[2][-4:]
    d = (fit.gateset.array - truth.array)[:, 1:, :].ravel()
    assert np.abs(d).max() > 1e-4  # a different, equally good gate set
    assert np.abs(d - null.T @ (null @ d)).max() <= 1e-5


def test_noisy_fit_is_cptp():
    # readout noise pushes the TP-only optimum outside the CP set
    data = gst.gen_gst_data(gst.GateSet.ideal(), meas=("x", "y", "z"), noise_sigma=0.01, seed=2)
    fit = gst.fit_gst(data, max_iter=60)
    assert fit.gateset.is_cptp()
    assert fit.residual < 375 * 0.01**2


def test_fit_flags_misfit():
    gs = perturbed_gateset()
    d = gst.gen_gst_data(gs, noise_sigma=0.05, seed=1)
    fit = gst.fit_gst(d, max_iter=50)
    assert "model_misfit" in fit.flags


def test_bootstrap_shapes():
    out = gst.bootstrap_gst(perturbed_gateset(), 0.002, 3, seed=0, max_iter=60)
    assert set(out["ptm_std"]) == set(gst.GATE_ORDER)
    assert out["ptm_std"]["X90"].shape == (4, 4)
    assert set(out["metric_std"]) == set(gst.GstMetrics.VECTOR_FIELDS)
    with pytest.raises(ValueError):
        gst.bootstrap_gst(perturbed_gateset(), 0.002, 1, seed=0)


def test_ideal_gateset_metrics():
    noisy, m = gst.clifford_from_gateset(gst.GateSet.ideal())
    assert len(noisy) == 24
    assert np.allclose(np.stack([noisy[i].m for i in range(24)]), clifford_ptms())
    assert m.clifford_epsilon == pytest.approx(0, abs=1e-15)
    assert m.avg_unitarity == pytest.approx(1) and m.unitarity_of_avg == pytest.approx(1)


def test_depolarizing_primitives():
    p = 0.004
    dep = np.diag([1, 1 - p, 1 - p, 1 - p])
    gs = gst.GateSet(tuple(dep @ ideal_ptm(n) for n in gst.GATE_ORDER))
    _, m = gst.clifford_from_gateset(gs)
    # each Clifford uses one or two primitives (the bare slot is the identity gate)
    noise = gst.clifford_noise(np.stack([v.m for v in gst.clifford_from_gateset(gs)[0].values()]))
    for e in noise:
        d = np.diag(e)[1]
        assert np.allclose(e, np.diag([1, d, d, d]), atol=1e-15)
    assert gst.gateset_metrics(gs, "none").clifford_epsilon < m.clifford_epsilon


def test_uniform_depolarizing_per_clifford():
    p = 0.01
    dep = ch.make_channel("depolarizing", p=p)
    noise = {k: dep for k in range(24)}
    assert np.mean([ch.bepg(e) for e in noise.values()]) == pytest.approx(p / 2)
    assert gst.avg_unitarity(noise) == pytest.approx(ch.unitarity(dep), abs=1e-12)
    assert gst.unitarity_of_avg(noise) == pytest.approx(ch.unitarity(dep), abs=1e-12)


def test_plus_minus_theta_discrimination():
    theta = 0.1
    plus = ch.make_channel("unitary_rotation", axis=(0, 0, 1), theta=theta).m
    minus = ch.make_channel("unitary_rotation", axis=(0, 0, 1), theta=-theta).m
    noise = np.stack([plus if k < 12 else minus for k in range(24)])
    assert gst.avg_unitarity(noise) == pytest.approx(1, abs=1e-12)
    assert gst.unitarity_of_avg(noise) == pytest.approx((2 * np.cos(theta) ** 2 + 1) / 3, abs=1e-12)
    assert gst.unitarity_of_avg(noise) < 1 - theta**2 / 2
    with pytest.raises(ValueError):
        gst.avg_unitarity(noise[:5])


def test_gate_independent_noise_aggregates_agree():
    rng = np.random.default_rng(0)
    e = ch.random_cptp(rng)
    noise = np.broadcast_to(e.m, (24, 4, 4))
    assert abs(gst.avg_unitarity(noise) - gst.unitarity_of_avg(noise)) <= 1e-12


def test_paper_gatesets_bundled():
    assert set(gst.paper_conditions()) == {"T_meas_SEL", "T_meas_noSEL", "T1_noSEL"}
    with pytest.raises(KeyError):
        gst.paper_gateset("T2")


def test_paper_fidelity_sel():
    m = gst.gateset_metrics(gst.paper_gateset("T_meas_SEL"))
    assert m.fidelities["X90"] == pytest.approx(0.9940, abs=5e-5)


def test_paper_unitarity_aggregates():
    m = gst.gateset_metrics(gst.paper_gateset("T_meas_noSEL"))
    assert m.clifford_epsilon_in == pytest.approx(0.0111, abs=1e-3)
    assert m.clifford_epsilon_in_of_avg == pytest.approx(0.0120, abs=1e-3)
    assert m.clifford_epsilon_in_of_avg > m.clifford_epsilon_in


def test_paper_t1_epsilon():
    m = gst.gateset_metrics(gst.paper_gateset("T1_noSEL"))
    assert m.clifford_epsilon == pytest.approx(0.0331, abs=3e-3)


def test_metrics_json():
    blob = json.loads(json.dumps(gst.gateset_metrics(perturbed_gateset()).to_dict()))
    assert set(blob["fidelities"]) == set(gst.GATE_ORDER)
    assert 0 <= blob["unitarity_of_avg"] <= 1
