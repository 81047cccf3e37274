import json
import math
import os

import jsonschema
import numpy as np
import pytest

from cascadekit import __version__
from cascadekit.cli import OUTPUT_SCHEMA, main
from cascadekit.models import robot_at_bound


def run(args, tmp_path, name="out.json"):
    out = tmp_path / name
    code = main(list(args) + ["--out", str(out)])
    text = out.read_text() if out.exists() else None
    return code, text


def run_json(args, tmp_path):
    code, text = run(args, tmp_path)
    assert code == 0
    rec = json.loads(text)
    jsonschema.validate(rec, OUTPUT_SCHEMA)
    return rec


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


# ------------------------------------------------------------ analyze


def test_analyze_robot(tmp_path):
    rec = run_json(["analyze", "--preset", "robot"], tmp_path)
    res = rec["results"]
    assert res["n_phi"] == 2
    assert res["assumptions"]["a5_status"] == "proved_contractive"
    assert res["phi0"] == pytest.approx([1.0, 0.0])
    assert res["dphi0"] == pytest.approx([-1.0, 0.0])
    assert rec["version"] == __version__ and rec["command"] == "analyze"


def test_analyze_platoon(tmp_path):
    res = run_json(["analyze", "--preset", "platoon", "--zeta", "1"], tmp_path)["results"]
    assert res["n_phi"] == 2
    assert res["assumptions"]["a5_status"] == "proved_bounded_repeated_pole"
    num, den = res["phi"]["num"], res["phi"]["den"]
    assert [c[0] for c in den] == pytest.approx([1, 3, 3, 1])
    assert num[0][0] == pytest.approx(1.0)


def test_analyze_zero_coupling_exit_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"system": {"m": 1, "A0": [[-1]], "A1": [[0]]}})
    code, _ = run(["analyze", "--config", cfg], tmp_path)
    assert code == 2
    assert "(A1)" in capsys.readouterr().err


def test_explicit_matrices_with_complex_entries(tmp_path):
    cfg = write_config(tmp_path, {"system": {"m": 1, "A0": [[[-1, 0]]], "A1": [[[0, 1]]]}})
    res = run_json(["analyze", "--config", cfg], tmp_path)["results"]
    # phi = i/(lam+1): |phi(0)| = 1 but phi'(0) rotates, so the order test still runs
    assert res["phi0"] == pytest.approx([0.0, 1.0])


# ------------------------------------------------------------ trace-spectrum


@pytest.mark.parametrize("preset,zeta", [("robot", 1.0), ("platoon", 2.0)])
def test_trace_spectrum_circle(tmp_path, preset, zeta):
    args = ["trace-spectrum", "--preset", preset]
    if preset == "platoon":
        args += ["--zeta", str(zeta)]
    res = run_json(args, tmp_path)["results"]
    pts = np.array([complex(x, y) for line in res["level_set"]["polylines"] for x, y in line])
    assert np.max(np.abs(np.abs(pts + zeta) - zeta)) < 1e-6
    assert len(res["sigma0"]) == (1 if preset == "robot" else 3)


def test_trace_spectrum_csv(tmp_path):
    cfg = write_config(tmp_path, {"system": {"preset": "robot"}, "box": [-3, 1, -2, 2], "resolution": 0.05})
    code, text = run(["trace-spectrum", "--config", cfg, "--format", "csv"], tmp_path, "ls.csv")
    assert code == 0
    lines = text.splitlines()
    assert lines[0] == "record,re,im,polyline_id"
    assert lines[-1].startswith("sigma0,-1,0,-1")
    re_, im_ = map(float, lines[1].split(",")[1:3])
    assert abs(abs(complex(re_, im_) + 1) - 1) < 1e-6


# ------------------------------------------------------------ simulate


def test_simulate_robot_matches_closed_form(tmp_path):
    code, text = run(["simulate", "--preset", "robot", "--tmin", "0", "--tmax", "100", "--format", "csv"], tmp_path, "t.csv")
    assert code == 0
    rows = [line.split(",") for line in text.splitlines()]
    assert rows[0] == ["t", "state_norm", "derivative_norm", "tail_bound"]
    for t, sn, dn, tb in rows[1:]:
        t = float(t)
        assert float(sn) == pytest.approx(1.0, abs=1e-11)
        want = 2.0 if t == 0 else robot_at_bound(t)
        assert float(dn) == pytest.approx(want, rel=1e-9)
        assert float(tb) <= 1e-12


def test_simulate_stationary_kernel_state(tmp_path):
    res = run_json(["simulate", "--preset", "platoon", "--p", "inf", "--state", "kernel",
                    "--tmin", "1", "--tmax", "100", "--tpoints", "6"], tmp_path)["results"]
    assert max(res["trajectory"]["derivative_norm"]) <= 1e-9


def test_simulate_negative_time_exit_1(tmp_path):
    cfg = write_config(tmp_path, {"system": {"preset": "robot"}, "times": [1.0, -2.0]})
    assert run(["simulate", "--config", cfg], tmp_path)[0] == 1


def test_simulate_loose_epsilon_exit_3(tmp_path):
    code, text = run(["simulate", "--preset", "robot", "--epsilon", "1e-3", "--tmin", "1", "--tmax", "10", "--tpoints", "3"], tmp_path)
    assert code == 3
    assert max(json.loads(text)["results"]["trajectory"]["tail_bound"]) > 1e-6


def test_simulate_with_limit(tmp_path):
    cfg = write_config(tmp_path, {"system": {"preset": "platoon", "zeta": 1, "p": "inf"},
                                  "state": {"kind": "constant", "vector": [1, 0.3, -0.2]},
                                  "limit": "auto", "times": [10.0, 100.0, 1000.0]})
    res = run_json(["simulate", "--config", cfg], tmp_path)["results"]
    d = res["trajectory"]["distance"]
    assert d[-1] < 1e-6 and d[0] > d[-1]


# ------------------------------------------------------------ classify


def test_classify_dipole(tmp_path):
    res = run_json(["classify", "--preset", "robot", "--state", "dipole"], tmp_path)["results"]
    assert res["cesaro"]["verdict"] == "convergent"
    assert res["cesaro"]["sup_n_times_residual"] == pytest.approx(2.0)
    assert res["decay_prediction"] == -0.5


def test_classify_delta(tmp_path):
    res = run_json(["classify", "--preset", "robot", "--nmax", "500"], tmp_path)["results"]
    assert res["cesaro"]["verdict"] == "divergent"
    assert res["decay_prediction"] is None


def test_classify_constant(tmp_path):
    res = run_json(["classify", "--preset", "robot", "--p", "inf", "--state", "constant"], tmp_path)["results"]
    lim = res["cesaro"]["limit_state"]
    assert lim["left_tail"] == lim["right_tail"] == {"rule": "constant", "value": [[1.0, 0.0]]}


# ------------------------------------------------------------ rate-fit


def test_rate_fit_robot(tmp_path):
    fit = run_json(["rate-fit", "--preset", "robot", "--tpoints", "30"], tmp_path)["results"]["fit"]
    assert fit["plain_exponent"] == pytest.approx(-0.5, abs=0.05)


def test_rate_fit_platoon_reports_both_models(tmp_path):
    fit = run_json(["rate-fit", "--preset", "platoon", "--tpoints", "30"], tmp_path)["results"]["fit"]
    assert fit["plain_exponent"] == pytest.approx(-0.5, abs=0.1)
    assert math.isfinite(fit["log_exponent"]) and math.isfinite(fit["log_r_squared"])


def test_rate_fit_stationary_exact_zero(tmp_path):
    fit = run_json(["rate-fit", "--preset", "platoon", "--p", "inf", "--state", "kernel", "--tpoints", "20"],
                   tmp_path)["results"]["fit"]
    assert fit["exact_zero"] is True


def test_rate_fit_noisy_exit_4(tmp_path, capsys):
    code, _ = run(["rate-fit", "--preset", "robot", "--quantity", "state_norm", "--tpoints", "30"], tmp_path)
    assert code == 4
    assert "widen" in capsys.readouterr().err


# ------------------------------------------------------------ bounds, robot-kernel


def test_bounds_robot(tmp_path):
    res = run_json(["bounds", "--preset", "robot"], tmp_path)["results"]
    assert res["blowup_slope"] == pytest.approx(-2.0, abs=0.05)
    assert res["contractivity"]["passes"]


def test_bounds_chain(tmp_path):
    cfg = write_config(tmp_path, {"system": {"preset": "robot-chain", "alphas": [-1, -2]},
                                  "psi": {"psi": "power", "alpha": 3}, "times": [1e4, 1e6]})
    res = run_json(["bounds", "--config", cfg], tmp_path)["results"]
    assert res["m_slope"] == pytest.approx(-3.0, abs=0.1)
    assert all(c["identity_residual"] <= 1e-10 for c in res["resolvent_checks"])
    assert all(i["round_trip"] <= 1e-9 for i in res["mlog_inverse"])


def test_robot_kernel_table(tmp_path):
    code, text = run(["robot-kernel", "--tmin", "2", "--tmax", "1000", "--tpoints", "5", "--format", "csv"], tmp_path, "k.csv")
    assert code == 0
    rows = [line.split(",") for line in text.splitlines()[1:]]
    assert float(rows[0][3]) == pytest.approx(4.705, abs=5e-4)
    for r in rows:
        assert float(r[2]) <= 4.705


def test_chain_preset_rejected_elsewhere(tmp_path):
    assert run(["simulate", "--preset", "robot-chain"], tmp_path)[0] == 1


# ------------------------------------------------------------ plumbing


@pytest.mark.parametrize(
    "args,code",
    [
        (["analyze", "--preset", "robot"], 0),
        (["analyze", "--preset", "nope"], 1),
        (["analyze", "--p", "0.5"], 1),
        (["frobnicate"], 1),
        (["simulate", "--preset", "robot", "--epsilon", "-1"], 1),
        (["simulate", "--preset", "robot", "--tmin", "5", "--tmax", "1"], 1),
        (["simulate", "--preset", "robot", "--epsilon", "1e-3", "--tmin", "1", "--tmax", "5", "--tpoints", "2"], 3),
        (["rate-fit", "--preset", "robot", "--quantity", "state_norm", "--tpoints", "25"], 4),
    ],
)
def test_exit_code_table(tmp_path, args, code):
    assert run(args, tmp_path)[0] == code


def test_zero_coupling_is_exit_2(tmp_path):
    cfg = write_config(tmp_path, {"system": {"m": 2, "A0": [[-1, 0], [0, -2]], "A1": [[0, 0], [0, 0]]}})
    assert run(["analyze", "--config", cfg], tmp_path)[0] == 2


def test_unknown_keys_rejected(tmp_path, capsys):
    for cfg in ({"system": {"preset": "robot"}, "colour": "red"},
                {"system": {"preset": "robot", "speed": 3}},
                {"system": {"m": 1, "A0": [[-1]], "A1": [[1]], "extra": 0}}):
        assert run(["analyze", "--config", write_config(tmp_path, cfg)], tmp_path)[0] == 1
    assert "invalid config" in capsys.readouterr().err


def test_reruns_are_byte_identical(tmp_path):
    args = ["analyze", "--preset", "platoon", "--zeta", "2"]
    a = run(args, tmp_path, "a.json")[1]
    b = run(args, tmp_path, "b.json")[1]
    assert a == b
    assert list(json.loads(a)) == sorted(json.loads(a))


def test_inputs_echo_and_tolerances(tmp_path):
    rec = run_json(["classify", "--preset", "robot", "--state", "dipole", "--nmax", "100"], tmp_path)
    assert rec["inputs"] == {"system": {"preset": "robot"}, "state": "dipole", "n_max": 100}
    assert rec["tolerances"]


def test_csv_has_full_precision(tmp_path):
    _, text = run(["robot-kernel", "--tmin", "3", "--tmax", "3", "--tpoints", "1", "--format", "csv"], tmp_path, "k.csv")
    val = float(text.splitlines()[1].split(",")[1])
    assert val == robot_at_bound(3.0)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    run(["analyze", "--preset", "robot"], tmp_path)
    assert sorted(os.listdir(tmp_path)) == ["out.json"]


def test_stdout_when_no_out(capsys):
    assert main(["robot-kernel", "--tmin", "2", "--tmax", "2", "--tpoints", "1"]) == 0
    rec = json.loads(capsys.readouterr().out)
    jsonschema.validate(rec, OUTPUT_SCHEMA)
