"""Acceptance criteria 1-10.  Each test prints one PASS/FAIL line (run with -s to see them)."""
import math
import time

import numpy as np

from qcoherence import benchmarking as bm
from qcoherence import channels as ch
from qcoherence import gst
from qcoherence import lindblad as lb
from qcoherence import pulses as pu
from qcoherence.cli import pipeline_table1
from qcoherence.clifford import ideal_ptm, lift_primitives
from qcoherence.fitting import fit_pb, fit_rb
from qcoherence.waveform import TransferFunction, Waveform, one_pole, square, two_pole, zero

MHZ = 2 * np.pi * 1e6


def report(n, ok, detail, elapsed):
    print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}  ({elapsed:.2f} s)")
    return ok


def test_criterion_1_table1_consistency():
    start = time.time()
    scenarios = [
        {"name": "T=1, no SEL", "epsilon": 0.0234, "epsilon_sigma": 0.0011, "epsilon_in": 0.0105,
         "epsilon_in_sigma": 0.0010},
        {"name": "T=T_meas, no SEL", "epsilon": 0.0073, "epsilon_sigma": 0.0002, "epsilon_in": 0.0066,
         "epsilon_in_sigma": 0.0002},
        {"name": "T=T_meas, SEL", "epsilon": 0.0063, "epsilon_sigma": 0.0002, "epsilon_in": 0.0054,
         "epsilon_in_sigma": 0.0002},
    ]
    rows = pipeline_table1({"scenarios": scenarios})
    coh = [0.0129, 0.0007, 0.0009]
    mid = [0.040, 0.024, 0.020]
    half = [0.026, 0.015, 0.012]
    ok = True
    for r, c, m, h in zip(rows, coh, mid, half):
        ok &= abs(r.epsilon_coh - c) <= 1e-12
        ok &= abs(r.diamond.midpoint - m) <= 0.002
        ok &= abs(r.diamond.half_width - h) <= 0.003
    elapsed = time.time() - start
    ok &= elapsed < 1
    detail = "; ".join(f"{r.epsilon_coh:.4f} / {r.diamond.midpoint:.3f}({r.diamond.half_width:.3f})" for r in rows)
    assert report(1, ok, detail, elapsed)


def _ensemble(n=10_000, seed=2024):
    rng = np.random.default_rng(seed)
    return [ch.random_cptp(rng) for _ in range(n)]


def test_criterion_2_saturation():
    start = time.time()
    worst, violations = 0.0, 0
    for e in _ensemble():
        closed = ch.iepg(e)
        exact = ch.iepg_exact(e)
        gap = abs(closed - exact)
        worst = max(worst, gap / closed**2)
        violations += gap > closed**2 / 2 + 1e-9
    elapsed = time.time() - start
    ok = violations == 0 and elapsed < 30
    assert report(2, ok, f"{violations} of 10000 channels exceed eps_in^2/2; worst gap = {worst:.3f} eps_in^2",
                  elapsed)


def test_criterion_3_c_range():
    start = time.time()
    cs = []
    for e in _ensemble():
        form = ch.canonicalize(e)
        if form.epsilon_exact <= 1 / 3 and form.epsilon_exact > 0:
            cs.append(form.c)
    cs = np.array(cs)
    elapsed = time.time() - start
    ok = bool(np.all((cs >= -1e-6) & (cs <= 2 + 1e-6))) and elapsed < 30
    assert report(3, ok, f"{len(cs)} channels, c in [{cs.min():.4f}, {cs.max():.4f}]", elapsed)


LENGTHS = [1, 2, 3, 4, 5, 7, 9, 12, 15, 20, 25, 30, 40, 50, 60, 75, 90, 110, 130, 150]


def test_criterion_4_fit_recovery():
    start = time.time()
    channels = {
        "depolarizing": ch.make_channel("depolarizing", p=0.01),
        "amplitude_damping": ch.make_channel("amplitude_damping", gamma=0.02),
        "dephasing+rotation": ch.compose(
            ch.make_channel("unitary_rotation", axis=(1 / np.sqrt(2), 1 / np.sqrt(2), 0), theta=0.08),
            ch.make_channel("dephasing", p=0.004),
        ),
    }
    rb_seqs = bm.gen_sequences(LENGTHS, 150, 0)
    pb_seqs = bm.gen_sequences(LENGTHS, 150, 1000)
    ok = True
    parts = []
    for name, e in channels.items():
        rb = fit_rb(bm.simulate_rb(e, rb_seqs))
        pb = fit_pb(bm.simulate_pb(e, pb_seqs))
        eps, u = ch.bepg(e), ch.unitarity(e)
        # 2 fit standard errors; the small absolute floor covers exactly noiseless fits
        ok &= abs(rb.epsilon - eps) <= 2 * rb.sigma["rate"] + 1e-9 * max(1, eps)
        ok &= abs(pb.u - u) <= 2 * pb.sigma["rate"] + 1e-9
        parts.append(f"{name}: eps {rb.epsilon:.5f} vs {eps:.5f} (s {rb.sigma['rate']:.1e}), "
                     f"u {pb.u:.5f} vs {u:.5f} (s {pb.sigma['rate']:.1e})")
    elapsed = time.time() - start
    ok &= elapsed < 120
    assert report(4, ok, "; ".join(parts), elapsed)


RB_LENGTHS = [1, 2, 3, 4, 5, 6, 7, 9, 11, 16, 19, 23, 28, 30, 33, 36, 39, 40, 44, 45, 48, 49, 53, 55]
PB_LENGTHS = [1, 2, 3, 4, 5, 6, 7, 9, 14, 17, 20, 22, 25, 27, 31, 35, 37, 40, 41, 42, 45, 49, 54, 55]


def test_criterion_5_table_s2_replay():
    start = time.time()
    noisy = lift_primitives(gst.paper_gateset("T_meas_noSEL").as_dict())
    noise = bm.NoisyCliffords.from_gates(noisy)
    rb = fit_rb(bm.simulate_rb(noise, bm.gen_sequences(RB_LENGTHS, 150, 7)))
    pb = fit_pb(bm.simulate_pb(noise, bm.gen_sequences(PB_LENGTHS, 150, 8)))
    noise_t1 = bm.NoisyCliffords.from_gates(lift_primitives(gst.paper_gateset("T1_noSEL").as_dict()))
    rb_t1 = fit_rb(bm.simulate_rb(noise_t1, bm.gen_sequences(RB_LENGTHS, 150, 9)))
    elapsed = time.time() - start
    ok = (
        abs(rb.epsilon - 0.0124) <= 0.0010
        and abs(pb.epsilon_in - 0.0111) <= 0.0010
        and abs(rb_t1.epsilon - 0.0331) <= 0.0030
        and elapsed < 180
    )
    detail = f"T_meas: eps {rb.epsilon:.4f}, eps_in {pb.epsilon_in:.4f}; T=1: eps {rb_t1.epsilon:.4f}"
    assert report(5, ok, detail, elapsed)


def test_criterion_6_unitarity_aggregates():
    start = time.time()
    theta = 0.1
    plus = ch.make_channel("unitary_rotation", axis=(0, 0, 1), theta=theta).m
    minus = ch.make_channel("unitary_rotation", axis=(0, 0, 1), theta=-theta).m
    # +theta after half the Cliffords, -theta after the other half
    noise = np.stack([plus if k % 2 else minus for k in range(24)])
    avg_u = gst.avg_unitarity(noise)
    u_avg = gst.unitarity_of_avg(noise)
    ok = abs(avg_u - 1) <= 1e-12 and u_avg < 1 - theta**2 / 2
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(50):
        e = ch.random_cptp(rng, rank=int(rng.integers(1, 5)))
        same = np.broadcast_to(e.m, (24, 4, 4))
        worst = max(worst, abs(gst.avg_unitarity(same) - gst.unitarity_of_avg(same)))
    elapsed = time.time() - start
    ok &= worst <= 1e-12 and elapsed < 10
    assert report(6, ok, f"avg u = {avg_u:.12f}, u of avg = {u_avg:.6f}; gate-independent gap {worst:.1e}",
                  elapsed)


def _perturbed_gateset():
    dep = ch.make_channel("depolarizing", p=0.005).m
    gates = []
    for n in gst.GATE_ORDER:
        g = ideal_ptm(n)
        if n != "I":
            axis = (1, 0, 0) if n.startswith("X") else (0, 1, 0)
            g = ch.make_channel("unitary_rotation", axis=axis, theta=np.deg2rad(2.0)).m @ g
        gates.append(dep @ g)
    return gst.GateSet(tuple(gates))


def test_criterion_7_gst_round_trip():
    start = time.time()
    truth = _perturbed_gateset()
    # the dataset of the GST design: x and y readout of all 125 triples
    fit = gst.fit_gst(gst.gen_gst_data(truth))
    err = float(np.abs(fit.gateset.array - truth.array).max())
    elapsed = time.time() - start
    ok = err <= 1e-4 and fit.residual <= 1e-10 and elapsed < 120
    # same gate set with z readout added, for reference
    fit3 = gst.fit_gst(gst.gen_gst_data(truth, meas=("x", "y", "z")))
    err3 = float(np.abs(fit3.gateset.array - truth.array).max())
    detail = (f"x,y readout: max entry error {err:.2e}, residual {fit.residual:.1e}; "
              f"with z readout added: {err3:.1e}, residual {fit3.residual:.1e}")
    assert report(7, ok, detail, elapsed)


def test_criterion_8_lindblad_oracles():
    start = time.time()
    t2 = 30e-6
    fid = lb.evolve(lb.DensityMatrix.plus(), zero(t2, 1e-8), lb.LindbladParams(t1=160e-6, t2=t2, dt=1e-8))
    fid_err = abs(fid.bloch[-1, 0] / math.exp(-1) - 1)

    t2s = 80e-9
    params = lb.LindbladParams(larmor_dist=lb.larmor_lorentzian(t2s, n=201), dt=1e-9)
    avg = lb.ensemble_average(lb.DensityMatrix.plus(), zero(2 * t2s, 1e-9), params, ("x",))
    lor_err = abs(avg["x"][int(round(t2s / 1e-9))] / math.exp(-1) - 1)

    omega = 10 * MHZ
    traj = lb.evolve(lb.DensityMatrix.up(), square(omega, 200e-9, 1e-9), lb.LindbladParams(dt=1e-11))
    x, y, z = lb.rabi_trajectory(lb.RabiModel(0.0, omega), traj.times)
    rabi_err = float(np.max(np.abs(traj.bloch - np.column_stack([x, y, z]))))
    elapsed = time.time() - start
    ok = fid_err <= 1e-6 and lor_err <= 0.02 and rabi_err <= 1e-8 and elapsed < 60
    detail = f"FID rel err {fid_err:.1e}, Lorentzian rel err {lor_err:.1e}, Rabi max err {rabi_err:.1e}"
    assert report(8, ok, detail, elapsed)


def _band_limited(n, dt, f_max, seed):
    rng = np.random.default_rng(seed)
    f = np.fft.fftfreq(n, dt)
    spec = (rng.normal(size=n) + 1j * rng.normal(size=n)) * (np.abs(f) < f_max)
    return Waveform(np.fft.ifft(spec) * np.hanning(n) * 1e8, dt)


def test_criterion_9_transfer_function():
    start = time.time()
    # (a) distort(predistort(W)) on waveforms confined to the band where |T| >= 0.1
    worst_rt = 0.0
    for k, tf in enumerate([one_pole(100e6), two_pole(100e6), one_pole(30e6, delay=3e-9)]):
        w = _band_limited(200, 1e-9, 100e6, k)
        band = np.fft.fftfreq(800, 1e-9)
        assert np.abs(tf(band[np.abs(band) < 100e6])).min() >= 0.1
        reg = TransferFunction(tf.freqs, tf.response, 1e-3 * np.abs(tf.response).max())
        back = pu.distort(pu.predistort(w, reg), reg)
        worst_rt = max(worst_rt, np.linalg.norm(back.envelope - w.envelope) / np.linalg.norm(w.envelope))

    # (b) point fits over the sweep where |Omega / Delta| >= 0.2
    times = np.arange(0, 500e-9, 1e-9)
    worst_amp = worst_phase = 0.0
    for i, d in enumerate(range(-50, 51, 10)):
        for om in (5, 10, 15, 20):
            if d and om / abs(d) < 0.2:
                continue
            psi = 0.4 - 0.1 * i
            x, y, _ = lb.rabi_trajectory(lb.RabiModel(d * MHZ, om * MHZ, psi), times)
            p = pu.fit_transfer_point(times, x, y, d * MHZ, 10 * MHZ)
            worst_amp = max(worst_amp, abs(p.omega / (om * MHZ) - 1))
            worst_phase = max(worst_phase, abs(np.angle(np.exp(1j * (p.psi - psi)))))

    # (c) a timing offset shows up as a linear phase slope; data from the Lindblad integrator
    shift = 4e-9
    deltas = np.array([-30, -15, 0, 15, 30]) * MHZ
    psis = []
    for d in deltas:
        wf = pu.square_drive(d, 10 * MHZ * np.exp(1j * d * shift), 0.0, 400e-9, 0.05e-9)
        traj = lb.evolve(lb.DensityMatrix.up(), wf, lb.LindbladParams(dt=0.05e-9))
        keep = slice(0, None, 20)
        psis.append(pu.fit_transfer_point(traj.times[keep], traj.bloch[keep, 0], traj.bloch[keep, 1], d,
                                          10 * MHZ).psi)
    slope = np.polyfit(deltas, np.unwrap(psis), 1)[0]
    slope_err = abs(slope / shift - 1)
    elapsed = time.time() - start
    ok = worst_rt <= 1e-3 and worst_amp <= 0.005 and worst_phase <= 0.01 and slope_err <= 0.01 and elapsed < 60
    detail = (f"round trip {worst_rt:.1e}; point fits amp {worst_amp:.1e}, phase {worst_phase:.1e} rad; "
              f"slope error {slope_err:.1e}")
    assert report(9, ok, detail, elapsed)


def test_criterion_10_substitutions_documented():
    # the hardware values are not reproducible; criteria 1 and 5 replay published numbers instead
    start = time.time()
    conditions = set(gst.paper_conditions())
    ok = conditions == {"T_meas_SEL", "T_meas_noSEL", "T1_noSEL"}
    rows = pipeline_table1({"scenarios": [{"epsilon": 0.0234, "epsilon_in": 0.0105}]})
    ok &= len(rows) == 1
    assert report(10, ok, "replay data bundled; property checks stand in for hardware values",
                  time.time() - start)
