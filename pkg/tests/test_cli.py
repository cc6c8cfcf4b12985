import csv
import io
import json
import time
from pathlib import Path

import numpy as np
import pytest

from qcoherence import cli
from qcoherence.waveform import Waveform, square

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def run_cli(tmp_path, cfg, *extra):
    path = write_config(tmp_path, cfg)
    out = tmp_path / "out"
    code = cli.main(["--config", str(path), "--out", str(out), "--quiet", *extra])
    return code, out


def rows(out):
    return list(csv.DictReader(io.StringIO((out / "results.csv").read_text())))


def base(mode, block, seed=0):
    return {"schema_version": 1, "mode": mode, "seed": seed, mode: block}


DEPOL = {"channel": {"family": "depolarizing", "p": 0.02}}
LENGTHS = [1, 2, 4, 8, 16, 32]


def test_channel_metrics(tmp_path):
    code, out = run_cli(tmp_path, base("channel-metrics", {"channels": [
        {"name": "dep", "family": "depolarizing", "p": 0.01},
        {"name": "flip", "ptm": [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, -1, 0, 0, 0, 0, -1]},
    ]}))
    assert code == 0
    r = {row["name"]: row for row in rows(out)}
    assert float(r["dep"]["epsilon"]) == pytest.approx(0.005)
    assert float(r["flip"]["u"]) == pytest.approx(1)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["mode"] == "channel-metrics" and len(manifest["config_sha256"]) == 64
    assert set(manifest["outputs"]) >= {"results.csv", "fit.json"}


@pytest.mark.parametrize("mode", ["rb", "pb"])
def test_benchmark_modes(tmp_path, mode):
    code, out = run_cli(tmp_path, base(mode, {"noise": DEPOL, "lengths": LENGTHS, "count": 5}))
    assert code == 0
    data = rows(out)
    assert len(data) == 30 and set(data[0]) == {"m", "seq_index", "value", "observable"}
    fit = json.loads((out / "fit.json").read_text())
    if mode == "rb":
        assert fit["parameters"]["rate"] == pytest.approx(0.01, rel=1e-6)
    else:
        assert fit["parameters"]["rate"] == pytest.approx(0.98**2, rel=1e-6)


def test_benchmark_from_gateset(tmp_path):
    block = {"noise": {"gateset": {"perturb": {"over_rotation_deg": 1.0, "depolarizing": 0.01}}},
             "lengths": LENGTHS, "count": 5, "offset_mode": "fixed"}
    code, out = run_cli(tmp_path, base("rb", block))
    assert code == 0
    assert json.loads((out / "fit.json").read_text())["offset_fixed"]


def test_benchmark_reproducible(tmp_path):
    cfg = base("rb", {"noise": DEPOL, "lengths": LENGTHS, "count": 4, "shots": 100}, seed=9)
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    assert run_cli(a, cfg)[0] == 0 and run_cli(b, cfg)[0] == 0
    assert (a / "out" / "results.csv").read_bytes() == (b / "out" / "results.csv").read_bytes()
    assert (a / "out" / "fit.json").read_bytes() == (b / "out" / "fit.json").read_bytes()
    c = tmp_path / "c"
    c.mkdir()
    assert run_cli(c, cfg, "--seed", "10")[0] == 0
    assert (c / "out" / "results.csv").read_bytes() != (a / "out" / "results.csv").read_bytes()
    assert json.loads((c / "out" / "manifest.json").read_text())["seed"] == 10


@pytest.mark.parametrize("mode", ["rb-lindblad", "pb-lindblad"])
def test_lindblad_modes(tmp_path, mode):
    block = {
        "lindblad": {"t1_us": 50, "t2_us": 30, "t2_star_ns": 200, "larmor_points": 5, "dt_ns": 1},
        "pulses": {"duration_ns": 20, "dt_ns": 1},
        "lengths": [1, 2, 4, 8],
        "count": 3,
    }
    code, out = run_cli(tmp_path, base(mode, block))
    assert code == 0
    fit = json.loads((out / "fit.json").read_text())
    assert fit["ensemble_size"] == 5
    assert set(fit["primitive_ptms"]) == {"X90", "Y90", "Y180", "I"}


def test_gst_gen_then_fit(tmp_path):
    code, out = run_cli(tmp_path, base("gst-gen", {"gateset": {"perturb": {"over_rotation_deg": 2.0}},
                                                   "meas": ["x", "y", "z"]}))
    assert code == 0
    data = rows(out)
    assert len(data) == 375 and set(data[0]) == {"k", "l", "m", "n", "value"}
    (tmp_path / "data.csv").write_text((out / "results.csv").read_text())
    code, out2 = run_cli(tmp_path, base("gst-fit", {"data": "data.csv"}))
    assert code == 0
    fit = json.loads((out2 / "fit.json").read_text())
    assert fit["residual"] < 1e-10
    gates = {g["name"]: np.reshape(g["ptm"], (4, 4)) for g in fit["gateset"]}
    assert gates["I"] == pytest.approx(np.eye(4), abs=1e-6)


def test_gst_fit_paper_replay(tmp_path):
    code, out = run_cli(tmp_path, base("gst-fit", {"replay": {"paper": "T_meas_SEL"}, "meas": ["x", "y", "z"]}))
    assert code == 0
    fit = json.loads((out / "fit.json").read_text())
    assert fit["metrics"]["fidelities"]["X90"] == pytest.approx(0.9940, abs=2e-4)


def test_transfer_fit(tmp_path):
    block = {"synthetic": {"transfer": {"kind": "one_pole", "fc_mhz": 80}, "deltas_mhz": [-20, 0, 20],
                           "omega_mhz": 10, "duration_ns": 300}, "iterations": 1}
    code, out = run_cli(tmp_path, base("transfer-fit", block))
    assert code == 0
    header = (out / "results.csv").read_text().splitlines()[0]
    assert header == "freq_mhz,re,im"


def test_distort_and_inverse(tmp_path):
    t = np.arange(100) * 1e-9
    wf = Waveform(1e7 * np.exp(-(((t - 50e-9) / 10e-9) ** 2)), 1e-9)
    (tmp_path / "w.csv").write_text(wf.to_csv())
    tf = {"kind": "one_pole", "fc_mhz": 100, "epsilon_reg": 1e-3}
    code, out = run_cli(tmp_path, base("distort", {"input": "w.csv", "transfer": tf, "inverse": True}))
    assert code == 0
    pre = (out / "results.csv").read_text()
    (tmp_path / "pre.csv").write_text(pre)
    code, out = run_cli(tmp_path, base("distort", {"input": "pre.csv", "transfer": tf}))
    assert code == 0
    back = Waveform.from_csv((out / "results.csv").read_text())
    assert np.linalg.norm(back.envelope - wf.envelope) / np.linalg.norm(wf.envelope) < 1e-3


def test_design_pulse(tmp_path):
    code, out = run_cli(tmp_path, base("design-pulse", {"target": "X90", "duration_ns": 40, "n_samples": 20,
                                                        "max_iter": 100}))
    assert code == 0
    assert json.loads((out / "fit.json").read_text())["fidelity"] >= 0.9999
    assert len(Waveform.from_csv((out / "results.csv").read_text())) == 20


def test_table1(tmp_path):
    code, out = run_cli(tmp_path, json.loads((CONFIGS / "table1.json").read_text()))
    assert code == 0
    got = [round(float(r["epsilon_coh"]), 4) for r in rows(out)]
    assert got == [0.0129, 0.0007, 0.0009]


@pytest.mark.parametrize("cfg,needle", [
    ({"schema_version": 2, "mode": "rb", "seed": 0}, "schema_version"),
    ({"schema_version": 1, "mode": "nope", "seed": 0}, "mode"),
    (base("rb", {"noise": DEPOL, "lengths": [1, 2], "count": 5}), "lengths"),
    (base("rb", {"noise": DEPOL, "lengths": LENGTHS, "count": 5, "colour": 1}), "colour"),
    (base("rb", {"noise": DEPOL, "lengths": LENGTHS, "count": 5, "bootstrap": 10}), "bootstrap"),
    ({"schema_version": 1, "mode": "rb", "rb": {"noise": DEPOL, "lengths": LENGTHS, "count": 5}}, "seed"),
    ({"schema_version": 1, "mode": "rb", "seed": 0}, "rb"),
])
def test_config_errors_exit_2(tmp_path, capsys, cfg, needle):
    code, _ = run_cli(tmp_path, cfg)
    assert code == cli.EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_invalid_json_exit_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli.main(["--config", str(path), "--quiet"]) == cli.EXIT_CONFIG


def test_missing_files_exit_4(tmp_path):
    assert cli.main(["--config", str(tmp_path / "absent.json")]) == cli.EXIT_IO
    code, _ = run_cli(tmp_path, base("distort", {"input": "absent.csv", "transfer": {"kind": "flat"}}))
    assert code == cli.EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("x")
    path = write_config(tmp_path, base("channel-metrics", {"channels": [{"family": "identity"}]}))
    assert cli.main(["--config", str(path), "--out", str(blocker / "sub"), "--quiet"]) == cli.EXIT_IO


def test_numerical_failure_exit_3(tmp_path):
    # a transfer table that does not cover the waveform band
    (tmp_path / "w.csv").write_text(square(1e7, 50e-9, 1e-9).to_csv())
    (tmp_path / "t.csv").write_text("freq_mhz,re,im\n-1,1,0\n1,1,0\n")
    code, _ = run_cli(tmp_path, base("distort", {"input": "w.csv", "transfer": {"kind": "file", "file": "t.csv"}}))
    assert code == cli.EXIT_NUMERIC


def test_not_cptp_channel_rejected(tmp_path):
    code, _ = run_cli(tmp_path, base("channel-metrics", {"channels": [{"ptm": [1, 0, 0, 0, 0, 2, 0, 0, 0, 0, 1, 0,
                                                                               0, 0, 0, 1]}]}))
    assert code in (cli.EXIT_CONFIG, cli.EXIT_NUMERIC)


def test_schema_is_valid_draft_2020_12():
    import jsonschema

    jsonschema.Draft202012Validator.check_schema(cli.CONFIG_SCHEMA)


@pytest.mark.slow
def test_bundled_configs_run(tmp_path):
    start = time.time()
    for path in sorted(CONFIGS.glob("*.json")):
        out = tmp_path / path.stem
        assert cli.main(["--config", str(path), "--out", str(out), "--quiet"]) == 0, path.name
        assert (out / "manifest.json").exists()
    assert time.time() - start < 300
