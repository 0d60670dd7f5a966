import csv
import json

import pytest

from decobp import cli
from decobp.config import (
    SHIPPED,
    ConfigError,
    ExperimentConfig,
    RunManifest,
    from_dict,
    load,
    loads,
    shipped_config,
)


def v1_dict():
    return shipped_config("V1").to_dict()


def small_v1(tmp_path, **changes):
    d = v1_dict()
    d.update({"horizons": [5, 10], "replicates": 100, "outputs": {"dir": str(tmp_path)}}, **changes)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d, indent=2))
    return path


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_configs_round_trip(name):
    cfg = shipped_config(name)
    again = loads(cfg.dumps())
    assert again == cfg
    assert again.content_hash() == cfg.content_hash()
    assert cfg.name == name


def test_content_hash_ignores_workers_and_outputs():
    cfg = shipped_config("V3")
    assert cfg.replace(workers=8, outputs={"dir": "elsewhere"}).content_hash() == cfg.content_hash()
    assert cfg.replace(master_seed=cfg.master_seed + 1).content_hash() != cfg.content_hash()
    assert len({shipped_config(n).content_hash() for n in SHIPPED}) == len(SHIPPED)


def test_unknown_key_is_reported_with_field_and_line():
    d = v1_dict()
    d["replicatez"] = 5
    text = json.dumps(d, indent=2, sort_keys=True)
    with pytest.raises(ConfigError) as err:
        loads(text)
    line = next(i for i, t in enumerate(text.splitlines(), 1) if '"replicatez"' in t)
    assert err.value.line == line
    assert "replicatez" in str(err.value)


def test_bad_values_are_reported_with_field():
    for key, value in (("replicates", 0), ("master_seed", -1), ("horizons", []), ("estimator", "magic")):
        d = v1_dict()
        d[key] = value
        with pytest.raises(ConfigError) as err:
            loads(json.dumps(d, indent=2))
        assert key in err.value.field
        assert err.value.line is not None


def test_nested_law_errors_point_inside_the_spec():
    d = v1_dict()
    d["spec"]["law"]["xi1"] = {"family": "geometric", "mean": -1.0}
    with pytest.raises(ConfigError) as err:
        from_dict(d)
    assert err.value.field.startswith("spec")


def test_horizons_must_increase():
    with pytest.raises(ConfigError):
        from_dict({**v1_dict(), "horizons": [10, 5]})


def test_malformed_json_reports_line():
    with pytest.raises(ConfigError) as err:
        loads('{\n  "name": "x",\n  oops\n}')
    assert err.value.line == 3


def test_load_from_file(tmp_path):
    path = small_v1(tmp_path)
    cfg = load(path)
    assert isinstance(cfg, ExperimentConfig)
    assert list(cfg.horizons) == [5, 10] and cfg.replicates == 100


def test_manifest_round_trip():
    man = RunManifest("abc", "0.1.0", 7, "tail", [{"x": 1.0}], {"censored": 0}, wall_time=1.5)
    again = RunManifest.loads(man.dumps())
    assert again == man
    assert "wall_time" not in again.reproducible_part()


# ---------------------------------------------------------------------------
# command line


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["exact", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": 1}')
    assert cli.main(["exact", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert cli.main(["exact"]) == cli.EXIT_CONFIG
    assert cli.main(["exact", "--config", str(small_v1(tmp_path))]) == cli.EXIT_OK
    # a critical environment has no kappa
    assert cli.main(["kappa", "--config", "V5", "--out", str(tmp_path)]) == cli.EXIT_CHECK_FAILED
    assert cli.main(["kappa", "--config", "V6", "--out", str(tmp_path)]) == cli.EXIT_OK
    with pytest.raises(SystemExit) as err:
        cli.main(["exact", "--config", "V1", "--seed", "-3"])
    assert err.value.code == 2


def test_survival_curve_writes_csv_and_manifest(tmp_path):
    path = small_v1(tmp_path)
    assert cli.main(["survival-curve", "--config", str(path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "survival_curve.csv")))
    assert [int(r["n"]) for r in rows] == [5, 10]
    man = RunManifest.loads((tmp_path / "manifest.json").read_text())
    assert man.config_hash == load(path).content_hash()
    assert man.command == "survival-curve"


def test_seed_and_workers_overrides(tmp_path):
    d = v1_dict()
    d.update(
        {
            "spec": shipped_config("V3").spec.to_dict(),
            "type2": shipped_config("V3").to_dict()["type2"],
            "horizons": [8, 16],
            "replicates": 5000,
        }
    )
    (tmp_path / "c.json").write_text(json.dumps(d))
    outs = []
    for extra in ([], ["--workers", "3"], ["--seed", "99"]):
        out = tmp_path / f"o{len(outs)}"
        assert cli.main(["survival-curve", "--config", str(tmp_path / "c.json"), "--out", str(out), *extra]) == 0
        outs.append((out / "survival_curve.csv").read_bytes())
    assert outs[0] == outs[1]
    assert outs[0] != outs[2]


def test_tail_and_fit_commands(tmp_path):
    d = v1_dict()
    d["tail"] = {"statistics": ["S_T", "W_T"], "replicates": 2000, "t_cap": 100000, "stop_at": 10000}
    (tmp_path / "c.json").write_text(json.dumps(d))
    assert cli.main(["tail", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 0
    assert cli.main(["survival-curve", "--config", "V1", "--out", str(tmp_path)]) == 0
    assert cli.main(["fit", "--config", "V1", "--out", str(tmp_path), "--curve", str(tmp_path / "survival_curve.csv")]) == 0
    assert cli.main(["tail", "--config", "V1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG  # no tail section


def test_embed_and_predict(tmp_path):
    d = shipped_config("V6").to_dict()
    d.update({"horizons": [32, 64], "replicates": 2000})
    d["embedded"] = {"cycle_counts": [8, 16], "replicates": 2000, "cycles": 20000}
    (tmp_path / "c.json").write_text(json.dumps(d))
    assert cli.main(["embed", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 0
    assert cli.main(["predict", "--config", "V1", "--out", str(tmp_path)]) == 0


def test_simulate_command(tmp_path):
    assert cli.main(["simulate", "--config", "V2", "--trajectories", "3", "--horizon", "7", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "trajectories.csv")))
    assert len(rows) == 1 + 3 * 8


def test_plot_is_deterministic_and_rejects_bad_input(tmp_path):
    assert cli.main(["survival-curve", "--config", str(small_v1(tmp_path)), "--out", str(tmp_path)]) == 0
    curve = tmp_path / "survival_curve.csv"
    for name in ("a.svg", "b.svg"):
        assert cli.main(["plot", "--curve", str(curve), "--overlay", "sqrt", "--column", "p_z", "--out", str(tmp_path), "--svg", name]) == 0
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert cli.main(["plot", "--curve", str(empty), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    junk = tmp_path / "junk.csv"
    junk.write_text("n,p_z\n5,abc\n")
    assert cli.main(["plot", "--curve", str(junk), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["plot", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_verify_list_and_constant_suite(capsys):
    assert cli.main(["verify", "--list"]) == 0
    listing = capsys.readouterr().out
    for name in ("extinction_law", "kappa_solver", "determinism", "embedded_consistency"):
        assert name in listing
    assert cli.main(["verify", "--check", "kappa_solver", "--check", "progeny_laplace"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
