"""Configuration-driven experiment runner.

``qcoherence --config run.json [--seed N] [--out DIR] [--threads N] [--quiet]``

Every run writes ``results.csv``, ``fit.json``, ``manifest.json`` and
``summary.txt`` into the output directory.  Exit codes: 0 success, 2 invalid
configuration, 3 numerical failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
import time
from importlib import metadata
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
import scipy

from . import __version__
from . import benchmarking as bm
from . import channels as ch
from . import fitting as ft
from . import gst
from . import lindblad as lb
from . import pulses as pu
from .clifford import ideal_ptm, lift_primitives
from .waveform import TransferFunction, Waveform

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
SCHEMA_VERSION = 1
MODES = (
    "channel-metrics",
    "rb",
    "pb",
    "rb-lindblad",
    "pb-lindblad",
    "gst-gen",
    "gst-fit",
    "transfer-fit",
    "distort",
    "design-pulse",
    "table1",
)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT_POS = {"type": "integer", "minimum": 1}
_LENGTHS = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3}

_CHANNEL = {
    "type": "object",
    "properties": {
        "family": {"enum": ["depolarizing", "dephasing", "amplitude_damping", "unitary_rotation", "identity"]},
        "p": _NUM,
        "gamma": _NUM,
        "axis": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
        "theta": _NUM,
        "ptm": {"type": "array", "items": _NUM, "minItems": 16, "maxItems": 16},
        "compose": {"type": "array", "items": {"$ref": "#/$defs/channel"}, "minItems": 1},
        "name": {"type": "string"},
    },
    "additionalProperties": False,
}

_GATESET = {
    "type": "object",
    "properties": {
        "paper": {"enum": ["T_meas_SEL", "T_meas_noSEL", "T1_noSEL"]},
        "file": {"type": "string"},
        "ideal": {"type": "boolean"},
        "perturb": {
            "type": "object",
            "properties": {"over_rotation_deg": _NUM, "depolarizing": _NUM},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

_NOISE = {
    "type": "object",
    "properties": {
        "channel": {"$ref": "#/$defs/channel"},
        "gateset": {"$ref": "#/$defs/gateset"},
        "empty_slot": {"enum": ["identity-if-bare", "none", "always"]},
    },
    "additionalProperties": False,
}

_TRANSFER = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["flat", "one_pole", "two_pole", "file"]},
        "fc_mhz": _POS,
        "q": _POS,
        "delay_ns": _NUM,
        "file": {"type": "string"},
        "epsilon_reg": {"type": "number", "minimum": 0},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_LINDBLAD = {
    "type": "object",
    "properties": {
        "t1_us": _POS,
        "t2_us": _POS,
        "t2_star_ns": _POS,
        "larmor_points": _INT_POS,
        "larmor_cutoff": _POS,
        "larmor_file": {"type": "string"},
        "b1_sigma": {"type": "number", "minimum": 0},
        "b1_points": _INT_POS,
        "sel": {"type": "boolean"},
        "dt_ns": _POS,
    },
    "additionalProperties": False,
}

_BENCH = {
    "lengths": _LENGTHS,
    "count": _INT_POS,
    "shots": {"type": ["integer", "null"], "minimum": 1},
    "offset_mode": {"enum": ["free", "fixed"]},
    "bootstrap": {"type": "integer", "anyOf": [{"const": 0}, {"minimum": 100}]},
}

_PULSE = {
    "type": "object",
    "properties": {
        "duration_ns": _POS,
        "dt_ns": _POS,
        "waveforms": {"type": "object", "additionalProperties": {"type": "string"}},
    },
    "additionalProperties": False,
}

_BLOCKS = {
    "channel-metrics": {
        "type": "object",
        "properties": {
            "channels": {"type": "array", "items": {"$ref": "#/$defs/channel"}, "minItems": 1},
            "epsilon_in_sigma": {"type": "number", "minimum": 0},
        },
        "required": ["channels"],
        "additionalProperties": False,
    },
    "rb": {
        "type": "object",
        "properties": dict(_BENCH, noise={"$ref": "#/$defs/noise"}),
        "required": ["noise", "lengths", "count"],
        "additionalProperties": False,
    },
    "rb-lindblad": {
        "type": "object",
        "properties": dict(
            _BENCH,
            lindblad={"$ref": "#/$defs/lindblad"},
            pulses={"$ref": "#/$defs/pulse"},
            transfer={"$ref": "#/$defs/transfer"},
            predistort={"$ref": "#/$defs/transfer"},
            empty_slot={"enum": ["identity-if-bare", "none", "always"]},
        ),
        "required": ["lindblad", "lengths", "count"],
        "additionalProperties": False,
    },
    "gst-gen": {
        "type": "object",
        "properties": {
            "gateset": {"$ref": "#/$defs/gateset"},
            "noise_sigma": {"type": "number", "minimum": 0},
            "rho_i": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
            "meas": {"type": "array", "items": {"enum": ["x", "y", "z"]}, "minItems": 1, "uniqueItems": True},
        },
        "required": ["gateset"],
        "additionalProperties": False,
    },
    "gst-fit": {
        "type": "object",
        "properties": {
            "data": {"type": "string"},
            "replay": {"$ref": "#/$defs/gateset"},
            "noise_sigma": {"type": "number", "minimum": 0},
            "rho_i": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
            "meas": {"type": "array", "items": {"enum": ["x", "y", "z"]}, "minItems": 1, "uniqueItems": True},
            "max_iter": _INT_POS,
            "bootstrap": {"type": "integer", "anyOf": [{"const": 0}, {"minimum": 2}]},
        },
        "additionalProperties": False,
    },
    "transfer-fit": {
        "type": "object",
        "properties": {
            "measurements": {"type": "string"},
            "synthetic": {
                "type": "object",
                "properties": {
                    "transfer": {"$ref": "#/$defs/transfer"},
                    "deltas_mhz": {"type": "array", "items": _NUM, "minItems": 2},
                    "omega_mhz": _POS,
                    "duration_ns": _POS,
                    "t0_ns": {"type": "number", "minimum": 0},
                    "noise_sigma": {"type": "number", "minimum": 0},
                },
                "required": ["transfer", "deltas_mhz", "omega_mhz", "duration_ns"],
                "additionalProperties": False,
            },
            "iterations": {"type": "integer", "minimum": 0},
            "dt_ns": _POS,
        },
        "additionalProperties": False,
    },
    "distort": {
        "type": "object",
        "properties": {
            "input": {"type": "string"},
            "transfer": {"$ref": "#/$defs/transfer"},
            "inverse": {"type": "boolean"},
        },
        "required": ["input", "transfer"],
        "additionalProperties": False,
    },
    "design-pulse": {
        "type": "object",
        "properties": {
            "target": {"enum": ["X90", "Y90", "X180", "Y180", "I"]},
            "duration_ns": _POS,
            "n_samples": _INT_POS,
            "t2_star_ns": _POS,
            "larmor_points": _INT_POS,
            "larmor_cutoff": _POS,
            "method": {"enum": ["ascent", "lbfgs"]},
            "max_iter": _INT_POS,
            "step": _POS,
            "max_amplitude_mhz": _POS,
        },
        "required": ["target", "duration_ns", "n_samples"],
        "additionalProperties": False,
    },
    "table1": {
        "type": "object",
        "properties": {
            "scenarios": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "properties": {
                        "name": {"type": "string"},
                        "epsilon": _NUM,
                        "epsilon_sigma": {"type": "number", "minimum": 0},
                        "epsilon_in": _NUM,
                        "epsilon_in_sigma": {"type": "number", "minimum": 0},
                        "noise": {"$ref": "#/$defs/noise"},
                        "lengths": _LENGTHS,
                        "count": _INT_POS,
                    },
                    "additionalProperties": False,
                },
            }
        },
        "required": ["scenarios"],
        "additionalProperties": False,
    },
}
_BLOCKS["pb"] = _BLOCKS["rb"]
_BLOCKS["pb-lindblad"] = _BLOCKS["rb-lindblad"]

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "mode": {"enum": list(MODES)},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
        **{m: _BLOCKS[m] for m in MODES},
    },
    "required": ["schema_version", "mode"],
    "additionalProperties": False,
    "$defs": {
        "channel": _CHANNEL,
        "gateset": _GATESET,
        "noise": _NOISE,
        "transfer": _TRANSFER,
        "lindblad": _LINDBLAD,
        "pulse": _PULSE,
    },
}


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    if cfg["mode"] not in cfg:
        raise ConfigError(f"missing parameter block {cfg['mode']!r} for mode {cfg['mode']!r}")
    extra = [m for m in MODES if m in cfg and m != cfg["mode"]]
    if extra:
        raise ConfigError(f"parameter blocks for other modes are not allowed: {extra}")
    if "seed" not in cfg:
        raise ConfigError("a seed is required (config 'seed' or --seed)")


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


@dataclass
class Context:
    base: Path
    seed: int

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base / q

    def read(self, p: str) -> str:
        return self.path(p).read_text()


def build_channel(spec: dict) -> ch.PauliTransferMatrix:
    if "compose" in spec:
        out = ch.identity()
        for part in spec["compose"]:  # listed in time order
            out = build_channel(part) @ out
        return out
    if "ptm" in spec:
        return ch.PauliTransferMatrix.from_dict({"ptm": spec["ptm"]})
    family = spec.get("family")
    if family is None:
        raise ConfigError("channel needs 'family', 'ptm' or 'compose'")
    if family == "identity":
        return ch.identity()
    params = {k: v for k, v in spec.items() if k not in ("family", "name")}
    if family == "unitary_rotation" and "axis" in params:
        axis = np.asarray(params["axis"], dtype=float)
        params["axis"] = axis / np.linalg.norm(axis)
    try:
        return ch.make_channel(family, **params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _rotation(name):
    axis, theta = {"X90": ((1, 0, 0), np.pi / 2), "Y90": ((0, 1, 0), np.pi / 2), "X180": ((1, 0, 0), np.pi),
                   "Y180": ((0, 1, 0), np.pi), "I": ((0, 0, 1), 0.0)}[name]
    return axis, theta


def build_gateset(spec: dict, ctx: Context) -> gst.GateSet:
    if "paper" in spec:
        return gst.paper_gateset(spec["paper"])
    if "file" in spec:
        return gst.GateSet.from_json(ctx.read(spec["file"]))
    pert = spec.get("perturb", {})
    over = np.deg2rad(pert.get("over_rotation_deg", 0.0))
    dep = ch.make_channel("depolarizing", p=pert.get("depolarizing", 0.0)).m
    gates = []
    for name in gst.GATE_ORDER:
        axis, theta = _rotation(name)
        extra = over if theta > 0 else 0.0
        gates.append(dep @ ch.ptm_from_blocks(ch.rotation_matrix(axis, theta + extra)).m)
    return gst.GateSet(tuple(gates))


def build_noise(spec: dict, ctx: Context):
    if ("channel" in spec) == ("gateset" in spec):
        raise ConfigError("noise needs exactly one of 'channel' or 'gateset'")
    if "channel" in spec:
        return build_channel(spec["channel"])
    gs = build_gateset(spec["gateset"], ctx)
    return bm.NoisyCliffords.from_gates(lift_primitives(gs.as_dict(), spec.get("empty_slot", "identity-if-bare")))


def build_transfer(spec: Optional[dict], ctx: Context) -> TransferFunction:
    if spec is None or spec["kind"] == "flat":
        tf = pu.flat()
    elif spec["kind"] == "one_pole":
        tf = pu.one_pole(spec.get("fc_mhz", 100.0) * 1e6, delay=spec.get("delay_ns", 0.0) * 1e-9)
    elif spec["kind"] == "two_pole":
        tf = pu.two_pole(spec.get("fc_mhz", 100.0) * 1e6, q=spec.get("q", 0.7))
    else:
        if "file" not in spec:
            raise ConfigError("transfer kind 'file' needs 'file'")
        tf = TransferFunction.from_csv(ctx.read(spec["file"]))
    if spec is not None and "epsilon_reg" in spec:
        tf = TransferFunction(tf.freqs, tf.response, spec["epsilon_reg"])
    return tf


def build_lindblad(spec: dict, ctx: Context) -> lb.LindbladParams:
    if "larmor_file" in spec:
        larmor = lb.ProbabilityDistribution.from_csv(ctx.read(spec["larmor_file"]))
    elif "t2_star_ns" in spec:
        kw = {"cutoff": spec["larmor_cutoff"]} if "larmor_cutoff" in spec else {}
        larmor = lb.larmor_lorentzian(spec["t2_star_ns"] * 1e-9, n=spec.get("larmor_points", 101), **kw)
    else:
        larmor = lb.delta(0.0)
    if spec.get("sel"):
        larmor = larmor.narrowed(2.0)
    b1 = lb.gaussian(1.0, spec.get("b1_sigma", 0.0), n=spec.get("b1_points", 21))
    try:
        return lb.LindbladParams(
            t1=spec.get("t1_us", math.inf) * 1e-6,
            t2=spec.get("t2_us", math.inf) * 1e-6,
            larmor_dist=larmor,
            b1_dist=b1,
            dt=spec.get("dt_ns", 0.1) * 1e-9,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def primitive_waveforms(spec: dict, ctx: Context) -> dict:
    """Square pulses (or user files) for X90, Y90, Y180 and an idle of equal length."""
    files = spec.get("waveforms", {})
    duration = spec.get("duration_ns", 150.0) * 1e-9
    dt = spec.get("dt_ns", 1.0) * 1e-9
    out = {}
    for name in ("X90", "Y90", "Y180", "I"):
        if name in files:
            out[name] = Waveform.from_csv(ctx.read(files[name]))
            continue
        axis, theta = _rotation(name)
        phase = 0.0 if axis[0] else np.pi / 2
        out[name] = pu.square(theta / duration, duration, dt, phase)
    return out


def lindblad_cliffords(block: dict, ctx: Context):
    params = build_lindblad(block["lindblad"], ctx)
    hw = build_transfer(block.get("transfer"), ctx)
    pre = block.get("predistort")
    waves = primitive_waveforms(block.get("pulses", {}), ctx)
    prims = {}
    weights = None
    for name, wf in waves.items():
        if pre is not None:
            wf = pu.predistort(wf, build_transfer(pre, ctx))
        wf = pu.distort(wf, hw)
        ptms, weights = lb.gate_ptm_ensemble(wf, params)
        prims[name] = ptms
    gates = lift_primitives(prims, block.get("empty_slot", "identity-if-bare"))  # (K, 24, 4, 4)
    return bm.NoisyCliffords(gates, weights), prims, weights


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


@dataclass
class RunOutput:
    csv_text: str
    fit: dict
    summary: str


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _metrics_row(name, e, eps_in_sigma=0.0):
    m = ch.channel_metrics(e)
    d = ch.diamond_bounds(m.epsilon_in, eps_in_sigma)
    return {
        "name": name,
        "epsilon": m.epsilon,
        "u": m.u,
        "epsilon_in": m.epsilon_in,
        "epsilon_in_exact": ch.iepg_exact(e),
        "epsilon_coh": m.epsilon_coh,
        "diamond": d.to_dict(),
    }


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------


def run_channel_metrics(block, ctx):
    rows = []
    for i, spec in enumerate(block["channels"]):
        rows.append(_metrics_row(spec.get("name", f"channel{i}"), build_channel(spec), block.get("epsilon_in_sigma", 0.0)))
    header = ["name", "epsilon", "u", "epsilon_in", "epsilon_in_exact", "epsilon_coh", "diamond_lower", "diamond_upper"]
    text = _csv(header, [[r["name"], r["epsilon"], r["u"], r["epsilon_in"], r["epsilon_in_exact"], r["epsilon_coh"],
                          r["diamond"]["lower"], r["diamond"]["upper"]] for r in rows])
    summary = "\n".join(
        f"{r['name']}: eps={r['epsilon']:.6g} u={r['u']:.6g} eps_in={r['epsilon_in']:.6g} "
        f"eps_coh={r['epsilon_coh']:.6g} diamond=[{r['diamond']['lower']:.4g}, {r['diamond']['upper']:.4g}]"
        for r in rows
    )
    return RunOutput(text, {"channels": rows}, summary)


def _benchmark(kind, noise, block, seed):
    seqs = bm.gen_sequences(block["lengths"], block["count"], seed)
    shots = block.get("shots")
    if kind == "rb":
        records = bm.simulate_rb(noise, seqs, shots=shots)
    else:
        records = bm.simulate_pb(noise, seqs, shots=shots)
    offset = None
    spam = bm.spam_offsets(noise)
    if block.get("offset_mode", "free") == "fixed":
        offset = spam.a_z if kind == "rb" else spam.a_prime
    fit = (ft.fit_rb if kind == "rb" else ft.fit_pb)(records, offset=offset)
    out = fit.to_dict()
    out["spam_offsets"] = spam.to_dict()
    if block.get("bootstrap"):
        ci = ft.bootstrap_ci(records, block["bootstrap"], seed, kind=kind, offset=offset)
        out["bootstrap_ci95"] = {k: list(v) for k, v in ci.items()}
    return records, fit, out


def _bench_summary(kind, fit):
    if kind == "rb":
        return f"RB: eps = {fit.epsilon:.6g} +/- {fit.sigma['rate']:.2g}  (A_z = {fit.offset:.4g}, B = {fit.amplitude:.4g})"
    return (f"PB: u = {fit.u:.6g} +/- {fit.sigma['rate']:.2g}, eps_in = {fit.epsilon_in:.6g} "
            f"+/- {fit.epsilon_in_sigma:.2g}  (A' = {fit.offset:.4g}, B' = {fit.amplitude:.4g})")


def run_benchmark(kind, block, ctx):
    noise = build_noise(block["noise"], ctx)
    records, fit, out = _benchmark(kind, noise, block, ctx.seed)
    return RunOutput(bm.records_to_csv(records), out, _bench_summary(kind, fit))


def run_benchmark_lindblad(kind, block, ctx):
    noise, prims, weights = lindblad_cliffords(block, ctx)
    records, fit, out = _benchmark(kind, noise, block, ctx.seed)
    out["primitive_ptms"] = {
        n: np.einsum("k,kab->ab", weights, p).reshape(-1).tolist() for n, p in prims.items()
    }
    out["ensemble_size"] = int(len(weights))
    return RunOutput(bm.records_to_csv(records), out, _bench_summary(kind, fit))


def _gateset_csv(gs: gst.GateSet) -> str:
    header = ["gate"] + [f"e{j}{k}" for j in range(4) for k in range(4)]
    return _csv(header, [[n] + [float(x) for x in g.m.reshape(-1)] for n, g in zip(gst.GATE_ORDER, gs.gates)])


def run_gst_gen(block, ctx):
    gs = build_gateset(block["gateset"], ctx)
    data = gst.gen_gst_data(gs, block.get("rho_i", (0, 0, 1)), tuple(block.get("meas", gst.DEFAULT_AXES)),
                            block.get("noise_sigma", 0.0), ctx.seed)
    _, metrics = gst.clifford_from_gateset(gs)
    fit = {"gateset": gs.to_list(), "metrics": metrics.to_dict(), "entries": len(data)}
    summary = f"generated {len(data)} GST expectation values; Clifford eps = {metrics.clifford_epsilon:.6g}"
    return RunOutput(data.to_csv(), fit, summary)


def run_gst_fit(block, ctx):
    meas = tuple(block.get("meas", gst.DEFAULT_AXES))
    rho_i = block.get("rho_i", (0, 0, 1))
    if ("data" in block) == ("replay" in block):
        raise ConfigError("gst-fit needs exactly one of 'data' or 'replay'")
    if "data" in block:
        data = gst.GstDataset.from_csv(ctx.read(block["data"]), rho_i)
    else:
        data = gst.gen_gst_data(build_gateset(block["replay"], ctx), rho_i, meas, block.get("noise_sigma", 0.0), ctx.seed)
    fit = gst.fit_gst(data, max_iter=block.get("max_iter", 2000))
    _, metrics = gst.clifford_from_gateset(fit.gateset)
    out = {
        "gateset": fit.gateset.to_list(),
        "residual": fit.residual,
        "converged": fit.converged,
        "flags": list(fit.flags),
        "metrics": metrics.to_dict(),
    }
    if block.get("bootstrap"):
        sigma = block.get("noise_sigma", 0.0)
        boot = gst.bootstrap_gst(fit.gateset, sigma, block["bootstrap"], ctx.seed, rho_i, data.axes)
        out["bootstrap"] = {
            "ptm_std": {k: v.reshape(-1).tolist() for k, v in boot["ptm_std"].items()},
            "metric_std": boot["metric_std"],
        }
    m = metrics
    summary = (
        f"GST residual = {fit.residual:.3g}{' (' + ','.join(fit.flags) + ')' if fit.flags else ''}\n"
        f"fidelities: " + ", ".join(f"{k}={v:.4f}" for k, v in m.fidelities.items()) + "\n"
        f"Clifford eps = {m.clifford_epsilon:.5f}, eps_in (avg of u) = {m.clifford_epsilon_in:.5f}, "
        f"eps_in (u of avg) = {m.clifford_epsilon_in_of_avg:.5f}"
    )
    return RunOutput(_gateset_csv(fit.gateset), out, summary)


def _synthetic_measurements(spec, ctx, rng):
    tf = build_transfer(spec["transfer"], ctx)
    dt = 1e-9
    t0 = spec.get("t0_ns", 20.0) * 1e-9
    t_end = t0 + spec["duration_ns"] * 1e-9
    nominal = 2 * np.pi * spec["omega_mhz"] * 1e6
    sigma = spec.get("noise_sigma", 0.0)
    out = []
    for d_mhz in spec["deltas_mhz"]:
        delta = 2 * np.pi * d_mhz * 1e6
        wf = pu.distort(pu.square_drive(delta, nominal, t0, t_end, dt), tf)
        traj = pu.bloch_trajectory(wf)
        times = np.arange(len(wf) + 1) * dt
        keep = times >= t0
        x, y = traj[keep, 0], traj[keep, 1]
        if sigma > 0:
            x = x + sigma * rng.standard_normal(x.shape)
            y = y + sigma * rng.standard_normal(y.shape)
        out.append(pu.RabiMeasurement(delta, times[keep], x, y, complex(nominal), t0))
    return out


def _read_measurements(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    groups = {}
    for r in rows:
        key = float(r["delta_mhz"])
        groups.setdefault(key, []).append(r)
    out = []
    for d, rs in sorted(groups.items()):
        rs.sort(key=lambda r: float(r["time_ns"]))
        nominal = complex(float(rs[0]["nominal_re"]), float(rs[0]["nominal_im"]))
        out.append(
            pu.RabiMeasurement(
                2 * np.pi * d * 1e6,
                np.array([float(r["time_ns"]) for r in rs]) * 1e-9,
                np.array([float(r["x"]) for r in rs]),
                np.array([float(r["y"]) for r in rs]),
                nominal,
                float(rs[0].get("t0_ns", 0.0) or 0.0) * 1e-9,
            )
        )
    return out


def run_transfer_fit(block, ctx):
    rng = np.random.default_rng(np.random.SeedSequence([ctx.seed, 0x7F]))
    if ("measurements" in block) == ("synthetic" in block):
        raise ConfigError("transfer-fit needs exactly one of 'measurements' or 'synthetic'")
    if "measurements" in block:
        meas = _read_measurements(ctx.read(block["measurements"]))
    else:
        meas = _synthetic_measurements(block["synthetic"], ctx, rng)
    dt = block.get("dt_ns", 1.0) * 1e-9
    tf, history = pu.refine_transfer_function(meas, dt=dt, iterations=block.get("iterations", 2))
    final = history[-1]
    rows = [(p.delta / (2 * np.pi * 1e6), p.value.real, p.value.imag) for p in final]
    text = _csv(["freq_mhz", "re", "im"], rows)
    fit = {
        "passes": [
            [{"delta_mhz": p.delta / (2e6 * np.pi), "re": p.value.real, "im": p.value.imag, "omega": p.omega,
              "psi": p.psi, "residual_rms": p.residual_rms, "flags": list(p.flags)} for p in pts]
            for pts in history
        ]
    }
    if "synthetic" in block:
        truth = build_transfer(block["synthetic"]["transfer"], ctx)
        err = [abs(p.value - truth(np.array([p.delta / (2 * np.pi)]))[0]) for p in final]
        err0 = [abs(p.value - truth(np.array([p.delta / (2 * np.pi)]))[0]) for p in history[0]]
        fit["max_abs_error_first_pass"] = float(max(err0))
        fit["max_abs_error_final"] = float(max(err))
    summary = f"transfer function at {len(final)} offsets after {len(history) - 1} refinement pass(es)"
    if "synthetic" in block:
        summary += f"; max |T - T_true|: first pass {fit['max_abs_error_first_pass']:.3g}, final {fit['max_abs_error_final']:.3g}"
    return RunOutput(text, fit, summary)


def run_distort(block, ctx):
    wf = Waveform.from_csv(ctx.read(block["input"]))
    tf = build_transfer(block["transfer"], ctx)
    out = pu.predistort(wf, tf) if block.get("inverse") else pu.distort(wf, tf)
    energy_in = float(np.sum(np.abs(wf.envelope) ** 2) * wf.dt)
    energy_out = float(np.sum(np.abs(out.envelope) ** 2) * out.dt)
    what = "predistorted" if block.get("inverse") else "distorted"
    return RunOutput(out.to_csv(), {"operation": what, "samples": len(out), "energy_in": energy_in,
                                    "energy_out": energy_out}, f"{what} {len(out)} samples")


def run_design_pulse(block, ctx):
    rob = None
    if "t2_star_ns" in block:
        kw = {"cutoff": block["larmor_cutoff"]} if "larmor_cutoff" in block else {}
        rob = lb.LindbladParams(larmor_dist=lb.larmor_lorentzian(block["t2_star_ns"] * 1e-9,
                                                                 n=block.get("larmor_points", 41), **kw))
    amp = block.get("max_amplitude_mhz")
    res = pu.design_pulse(
        ideal_ptm(block["target"]),
        block["duration_ns"] * 1e-9,
        block["n_samples"],
        rob,
        max_iter=block.get("max_iter", 500),
        step=block.get("step"),
        method=block.get("method", "ascent"),
        max_amplitude=None if amp is None else 2 * np.pi * amp * 1e6,
        seed=ctx.seed,
    )
    fit = {"fidelity": res.fidelity, "iterations": res.iterations, "converged": res.converged, "flags": list(res.flags)}
    return RunOutput(res.waveform.to_csv(), fit, f"designed {block['target']} pulse: weighted fidelity {res.fidelity:.6f}")


# ---------------------------------------------------------------------------
# Table I
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Table1Row:
    name: str
    epsilon: float
    epsilon_sigma: float
    epsilon_in: float
    epsilon_in_sigma: float
    epsilon_coh: float
    epsilon_coh_sigma: float
    diamond: ch.DiamondInterval

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "epsilon": self.epsilon,
            "epsilon_sigma": self.epsilon_sigma,
            "epsilon_in": self.epsilon_in,
            "epsilon_in_sigma": self.epsilon_in_sigma,
            "epsilon_coh": self.epsilon_coh,
            "epsilon_coh_sigma": self.epsilon_coh_sigma,
            "diamond_opt": self.diamond.to_dict(),
        }


def table1_row(name, epsilon, epsilon_in, epsilon_sigma=0.0, epsilon_in_sigma=0.0) -> Table1Row:
    """``eps_coh = eps - eps_in`` (uncertainties added linearly) and the diamond interval from ``eps_in``."""
    return Table1Row(
        name,
        float(epsilon),
        float(epsilon_sigma),
        float(epsilon_in),
        float(epsilon_in_sigma),
        float(epsilon - epsilon_in),
        float(epsilon_sigma + epsilon_in_sigma),
        ch.diamond_bounds(epsilon_in, epsilon_in_sigma),
    )


def pipeline_table1(config: dict, seed: int = 0) -> list:
    """Table-I-shaped rows for each scenario.

    A scenario either quotes ``epsilon``/``epsilon_in`` directly or gives a
    ``noise`` model, in which case RB and PB are simulated and fitted.
    """
    ctx = Context(Path("."), seed)
    rows = []
    for i, sc in enumerate(config["scenarios"]):
        name = sc.get("name", f"scenario{i}")
        if "noise" in sc:
            noise = build_noise(sc["noise"], ctx)
            block = {"lengths": sc.get("lengths", [1, 2, 4, 8, 16, 32, 64, 100]), "count": sc.get("count", 50)}
            _, rb_fit, _ = _benchmark("rb", noise, block, seed)
            _, pb_fit, _ = _benchmark("pb", noise, block, seed + 1)
            rows.append(table1_row(name, rb_fit.epsilon, pb_fit.epsilon_in, rb_fit.sigma["rate"], pb_fit.epsilon_in_sigma))
        else:
            if "epsilon" not in sc or "epsilon_in" not in sc:
                raise ConfigError(f"scenario {name!r} needs epsilon and epsilon_in, or a noise model")
            rows.append(table1_row(name, sc["epsilon"], sc["epsilon_in"], sc.get("epsilon_sigma", 0.0),
                                   sc.get("epsilon_in_sigma", 0.0)))
    return rows


def run_table1(block, ctx):
    rows = pipeline_table1(block, ctx.seed)
    header = ["name", "epsilon", "epsilon_in", "epsilon_coh", "diamond_midpoint", "diamond_half_width"]
    text = _csv(header, [[r.name, r.epsilon, r.epsilon_in, r.epsilon_coh, r.diamond.midpoint, r.diamond.half_width]
                         for r in rows])
    summary = "\n".join(
        f"{r.name}: eps={r.epsilon:.4f} eps_in={r.epsilon_in:.4f} eps_coh={r.epsilon_coh:.4f} "
        f"eps_diamond,opt={r.diamond.midpoint:.3f}({round(r.diamond.half_width * 1000):d})"
        for r in rows
    )
    return RunOutput(text, {"rows": [r.to_dict() for r in rows]}, summary)


_RUNNERS = {
    "channel-metrics": run_channel_metrics,
    "rb": lambda b, c: run_benchmark("rb", b, c),
    "pb": lambda b, c: run_benchmark("pb", b, c),
    "rb-lindblad": lambda b, c: run_benchmark_lindblad("rb", b, c),
    "pb-lindblad": lambda b, c: run_benchmark_lindblad("pb", b, c),
    "gst-gen": run_gst_gen,
    "gst-fit": run_gst_fit,
    "transfer-fit": run_transfer_fit,
    "distort": run_distort,
    "design-pulse": run_design_pulse,
    "table1": run_table1,
}


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def run(cfg: dict, out_dir: Path, base: Path = Path("."), quiet: bool = True, threads: int = 1) -> int:
    """Validate and execute ``cfg``; write outputs into ``out_dir``.  Returns the exit status."""
    try:
        validate_config(cfg)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    ctx = Context(base, int(cfg["seed"]))
    t_start = time.time()
    try:
        result = _RUNNERS[cfg["mode"]](cfg[cfg["mode"]], ctx)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except (OSError, UnicodeDecodeError) as exc:
        _err(f"I/O failure: {exc}")
        return EXIT_IO
    except (KeyError, csv.Error) as exc:
        _err(f"malformed input: {exc}")
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    manifest = {
        "mode": cfg["mode"],
        "seed": ctx.seed,
        "config_sha256": config_hash(cfg),
        "schema_version": SCHEMA_VERSION,
        "versions": {
            "qcoherence": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "jsonschema": metadata.version("jsonschema"),
        },
        "threads": threads,
        "outputs": ["results.csv", "fit.json", "summary.txt"],
        "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t_start)),
        "elapsed_s": round(time.time() - t_start, 3),
    }
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "results.csv").write_text(result.csv_text)
        (out_dir / "fit.json").write_text(json.dumps(_jsonable(result.fit), indent=2, sort_keys=True) + "\n")
        (out_dir / "summary.txt").write_text(result.summary + "\n")
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        _err(f"I/O failure: {exc}")
        return EXIT_IO
    if not quiet:
        print(result.summary)
        print(f"outputs written to {out_dir}")
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _err(msg: str):
    print(f"error: {msg}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qcoherence", description=__doc__.splitlines()[0])
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (default: config 'out' or ./out)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (recorded; runs are single-threaded)")
    p.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    path = Path(args.config)
    try:
        cfg = json.loads(path.read_text())
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_IO
    except json.JSONDecodeError as exc:
        _err(f"config is not valid JSON: {exc}")
        return EXIT_CONFIG
    if not isinstance(cfg, dict):
        _err("config must be a JSON object")
        return EXIT_CONFIG
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads < 1:
        _err("--threads must be >= 1")
        return EXIT_CONFIG
    out = Path(args.out) if args.out else path.parent / cfg.get("out", "out")
    return run(cfg, out, base=path.parent, quiet=args.quiet, threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
