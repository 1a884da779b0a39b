import json

import pytest

from phi4lab.cli import main
from phi4lab.config import parse_config
from phi4lab.errors import ConfigurationError
from phi4lab.experiments import CRITERIA, SCENARIOS, run_scenario


def test_every_criterion_has_one_scenario():
    assert set(sc for sc, _ in CRITERIA.values()) == set(SCENARIOS)


def test_girsanov_is_byte_deterministic(tmp_path):
    cfg = parse_config()
    a = run_scenario("girsanov", cfg, tmp_path / "a")
    b = run_scenario("girsanov", cfg, tmp_path / "b")
    for pa, pb in zip(a.csv_paths, b.csv_paths):
        assert pa.read_bytes() == pb.read_bytes()
    assert a.verdict_path.read_bytes() == b.verdict_path.read_bytes()
    other = run_scenario("girsanov", parse_config(overrides={"root_seed": 1}), tmp_path / "c")
    assert other.csv_paths[0].read_bytes() != a.csv_paths[0].read_bytes()


def test_max_principle_entries(tmp_path):
    cfg = parse_config()
    res = run_scenario("max-principle", cfg, tmp_path)
    data = json.loads(res.verdict_path.read_text())
    (crit,) = data["criteria"]
    entries = crit["detail"]["entries"]
    random_cfgs = {e["config"] for e in entries if e["kind"] == "random"}
    assert len(random_cfgs) == cfg.max_principle.configs
    assert all({"bound", "observed", "margin"} <= set(e) for e in entries)
    assert len(entries) == (cfg.max_principle.configs + cfg.max_principle.adversarial) * 3


def test_come_down_reports_merge(tmp_path):
    cfg = parse_config(text="[come_down]\ninitial_sizes = [1.0, 10.0, 100.0, 1000.0]\n")
    res = run_scenario("come-down", cfg, tmp_path)
    v = res.verdict("merge_by_t1")
    assert v.threshold == 1e-2
    data = json.loads(res.verdict_path.read_text())
    assert {c["criterion"] for c in data["criteria"]} == {"merge_by_t1", "coming_down_constant"}
    header = (tmp_path / "come-down" / "coming_down.csv").read_text().splitlines()[0]
    assert header == "s,run_id,lhs,rhs,ratio,fitted_C"


def test_csv_layout(tmp_path):
    res = run_scenario("paraproduct-bench", parse_config(), tmp_path)
    raw = (tmp_path / "paraproduct-bench" / "paraproduct.csv").read_bytes()
    assert b"\r" not in raw
    assert raw.splitlines()[0] == b"seed,a1,a2,gamma,N,lhs,rhs,ratio,grid"
    assert "wall" not in res.verdict_path.read_text()


def test_unknown_scenario():
    with pytest.raises(ConfigurationError):
        run_scenario("nope", parse_config())


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["strong-norm", "--out-dir", out]) == 0
    assert (tmp_path / "strong-norm" / "strong-norm_verdict.json").exists()
    # the N-choice criterion does not hold at these exponents
    assert main(["--out-dir", out, "paraproduct-bench"]) == 1
    assert "n_choice_bound" in capsys.readouterr().err
    with pytest.raises(SystemExit) as err:
        main(["no-such-scenario"])
    assert err.value.code == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("epsilon = 0.5\n")
    assert main(["--config", str(bad), "strong-norm"]) == 2
    assert main(["strong-norm", "--config", str(tmp_path / "missing.toml")]) == 2


def test_cli_seed_flag(tmp_path):
    assert main(["girsanov", "--seed", "3", "--out-dir", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "girsanov" / "girsanov_verdict.json").read_text())
    assert data["passed"]
