import json
import subprocess
import sys

import numpy as np
import pytest

from netgame.cli import main
from netgame.config import ConfigError, ExperimentConfig, parse_text, shipped_config

CI = str(shipped_config("ci_small"))


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return str(path)


def run(tmp_path, *argv, out="out"):
    d = tmp_path / out
    code = main([*argv, "--out", str(d)])
    return code, d


# -- config documents ---------------------------------------------------------


def test_default_document_is_the_reference_setup():
    cfg = ExperimentConfig.from_document()
    doc = cfg.doc
    assert doc["model"]["A"] == [[1.25, 0.1], [0.0, 1.0]]
    assert doc["channel"] == {"lambda": 0.9, "lambda_a": 0.6}
    assert doc["costs"] == {"c_s": 300, "c_a": 200}
    assert doc["weights"]["eta"] == 0.999
    assert len(cfg.cost_grid()) == 441


def test_shipped_configs_validate():
    for name in ("default", "full_sweep", "ci_small"):
        ExperimentConfig.load(str(shipped_config(name)))


def test_hash_depends_on_content_and_seed():
    a = ExperimentConfig.from_document()
    assert a.hash == ExperimentConfig.from_document().hash
    assert a.hash != ExperimentConfig.from_document(seed=1).hash
    assert a.hash != ExperimentConfig.from_document({"costs": {"c_s": 301}}).hash
    assert ExperimentConfig.from_document(seed=5).seed == 5


def test_schema_errors_name_the_field():
    with pytest.raises(ConfigError, match="channel/lambda_a"):
        ExperimentConfig.from_document({"channel": {"lambda_a": "high"}})
    with pytest.raises(ConfigError, match="weights/eta"):
        ExperimentConfig.from_document({"weights": {"eta": 1.5}})
    with pytest.raises(ConfigError, match="bogus"):
        ExperimentConfig.from_document({"bogus": {}})


def test_consistency_errors():
    with pytest.raises(ConfigError, match="channel"):
        ExperimentConfig.from_document({"channel": {"lambda": 0.5, "lambda_a": 0.6}})
    with pytest.raises(ConfigError, match="x0_cov"):
        ExperimentConfig.from_document({"sim": {"x0_cov": [[1.0]]}})


def test_parse_errors_report_position():
    with pytest.raises(ConfigError, match="line 2, column"):
        parse_text('{"costs":\n  {"c_s": }}')
    with pytest.raises(ConfigError, match="object"):
        parse_text("[1, 2]")


def test_empty_grid_rejected():
    cfg = ExperimentConfig.from_document({"sweep": {"cs_range": [500, 0]}})
    with pytest.raises(ConfigError, match="empty"):
        cfg.cost_grid()


def test_grid_includes_end_points():
    cfg = ExperimentConfig.from_document({"sweep": {"cs_range": [0, 2000], "ca_range": [0, 2000], "step": 500}})
    grid = cfg.cost_grid()
    assert len(grid) == 25
    assert grid[0] == (0, 0) and grid[-1] == (2000, 2000)
    assert grid[1] == (0, 500)  # c_a varies fastest


# -- commands -----------------------------------------------------------------


def test_solve_reference(tmp_path):
    code, d = run(tmp_path, "solve")
    assert code == 0
    res = json.loads((d / "solve.json").read_text())
    np.testing.assert_allclose(res["L"], [[-1.09, -0.10]], atol=0.005)
    assert res["stability_threshold"] == pytest.approx(0.36064, abs=1e-5)
    assert res["stability_satisfied"] is True
    assert res["config_hash"] == ExperimentConfig.from_document().hash
    assert res["seed"] == 0


def test_solve_zero_state_weight(tmp_path):
    cfg = write(tmp_path, "w0.json", {"weights": {"W": [[0, 0], [0, 0]]}})
    code, d = run(tmp_path, "solve", "--config", cfg)
    assert code == 0
    res = json.loads((d / "solve.json").read_text())
    assert np.abs(res["S_inf"]).max() == 0.0
    assert np.abs(res["L"]).max() == 0.0


def test_malformed_config_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "bad.json", {"costs": {"c_s": "free"}})
    code, _ = run(tmp_path, "solve", "--config", cfg)
    assert code == 2
    assert "costs/c_s" in capsys.readouterr().err
    broken = write(tmp_path, "broken.json", "{\n")
    assert run(tmp_path, "solve", "--config", broken)[0] == 2
    assert run(tmp_path, "solve", "--config", str(tmp_path / "missing.json"))[0] == 2


def test_nonconvergence_exit_code(tmp_path):
    cfg = write(tmp_path, "tight.json", {"game": {"max_iter": 3}, "verify": {"lemma1_samples": 2000}})
    assert run(tmp_path, "verify", "--config", cfg)[0] == 3


def test_learn_outputs(tmp_path):
    code, d = run(tmp_path, "learn", "--config", CI)
    assert code == 0
    lines = (d / "value_vs_N.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=") and lines[1] == "N,value"
    assert len(lines) == 2 + 13
    values = [float(l.split(",")[1]) for l in lines[2:]]
    diffs = np.abs(np.diff(values))
    assert np.all(diffs[3:] <= diffs[2:-1] * (1 + 1e-9))
    learn = json.loads((d / "learn.json").read_text())
    assert learn["updates"] == 500 * 200
    pol = json.loads((d / "policies.json").read_text())
    assert len(pol["policies"]["pi_c"]) == 10


def test_learn_zero_costs(tmp_path):
    doc = {
        "weights": {"W": [[0, 0], [0, 0]]},
        "costs": {"c_s": 0, "c_a": 0},
        "learning": {"episodes": 50},
        "game": {"horizons": [3, 4]},
    }
    code, d = run(tmp_path, "learn", "--config", write(tmp_path, "zero.json", doc))
    assert code == 0
    learn = json.loads((d / "learn.json").read_text())
    assert np.abs(learn["learned_values"]).max() == 0.0
    assert np.abs(learn["oracle"]["values"]).max() == 0.0
    assert [r["value"] for r in learn["value_vs_N"]] == [0.0, 0.0]


def test_verify_oracle_and_uniform(tmp_path):
    code, d = run(tmp_path, "verify", "--config", CI)
    assert code == 0
    res = json.loads((d / "verify.json").read_text())
    assert res["equilibrium"]["epsilon"] < 1e-6
    assert res["gate_passed"] is True
    assert set(res["lemma1"]["clauses"]) == {"a", "b", "c"}
    uniform = write(tmp_path, "uniform.json", {"pi_c": [0.5] * 10, "pi_a": [0.5] * 10})
    code, d = run(tmp_path, "verify", "--config", CI, "--policy", uniform, out="u")
    assert code == 4
    res = json.loads((d / "verify.json").read_text())
    assert res["equilibrium"]["epsilon"] > 0 and res["gate_passed"] is False


def test_verify_bad_policy_file(tmp_path):
    bad = write(tmp_path, "bad_policy.json", {"pi_c": [0.5]})
    assert run(tmp_path, "verify", "--config", CI, "--policy", bad)[0] == 2


def test_simulate_with_trace(tmp_path):
    code, d = run(tmp_path, "simulate", "--config", CI, "--trace")
    assert code == 0
    res = json.loads((d / "simulate.json").read_text())
    assert res["iter"] == 1000
    assert set(res["metrics"]) == {"empirical_control_perf", "tx_freq", "attack_freq", "discounted_cost"}
    lines = (d / "trace.csv").read_text().splitlines()
    assert len(lines) == 2 + 1000
    assert lines[1].split(",")[-5:] == ["nu", "a", "gamma", "tau", "stage_cost"]


def test_sweep_smoke(tmp_path):
    code, d = run(tmp_path, "sweep", "--config", CI, "--threads", "2")
    assert code == 0
    lines = (d / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert len(lines) == 2 + 4
    res = json.loads((d / "sweep.json").read_text())
    assert len(res["points"]) == 4 and all(p["error"] is None for p in res["points"])


def test_sweep_empty_grid(tmp_path):
    cfg = write(tmp_path, "empty.json", {"sweep": {"cs_range": [1000, 0]}})
    assert run(tmp_path, "sweep", "--config", cfg)[0] == 2


@pytest.mark.parametrize("command", ["solve", "learn", "simulate", "sweep"])
def test_reruns_are_byte_identical(tmp_path, command):
    extra = ["--trace"] if command == "simulate" else []
    _, d1 = run(tmp_path, command, "--config", CI, "--seed", "3", *extra, out="a")
    _, d2 = run(tmp_path, command, "--config", CI, "--seed", "3", *extra, out="b")
    names = sorted(p.name for p in d1.iterdir())
    assert names == sorted(p.name for p in d2.iterdir()) and names
    for n in names:
        assert (d1 / n).read_bytes() == (d2 / n).read_bytes(), n


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "netgame", "solve", "--out", str(tmp_path)], capture_output=True, text=True
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "solve.json").exists()
