import json

import pytest

from configs.gen_run_cfs import RUN_NAMES, ConfigGenerator, config_from_manifest
from main import build_parser, main


@pytest.fixture
def make_config(tmp_path):
    generator = ConfigGenerator(str(tmp_path / "defaults"))

    def make(name, model=None, scheme=None, params=None, replicas=None, noise=None):
        document = generator.default_config(name)
        for section, values in (("model", model), ("scheme", scheme), ("noise", noise)):
            if values:
                document[section].update(values)
        if params is not None:
            document["experiment"]["params"] = params
        if replicas is not None:
            document["experiment"]["replicas"] = replicas
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(document))
        return str(path)

    return make


def _run(command, config, out, *extra):
    return main([*command, "--config", config, "--out", str(out), "--quiet", *extra])


def test_parser_knows_every_run():
    parser = build_parser()
    for name in RUN_NAMES[:4]:
        assert parser.parse_args([name]).command == name
    args = parser.parse_args(["experiment", "mixing", "--seed", "3", "--threads", "2"])
    assert (args.name, args.seed, args.threads) == ("mixing", 3, 2)
    with pytest.raises(SystemExit):
        parser.parse_args(["experiment", "no-such-experiment"])


def test_validate_exits_zero(make_config, tmp_path):
    out = tmp_path / "out"
    assert _run(["validate"], make_config("validate", model={"N": 3}), out) == 0
    validation = json.loads((out / "validation.json").read_text())
    assert validation["passed"] is True
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_status"] == 0
    assert manifest["derived"]["c"] == 1.5


def test_validate_reports_failures_with_exit_one(make_config, tmp_path):
    out = tmp_path / "out"
    model = {"kernel": {"kind": "custom-table", "beta": 0.5, "normalize": False, "range": 1,
                        "support_radius": 30, "entries": [[[0], [1], 0.9]]}}
    assert _run(["validate"], make_config("validate", model=model), out) == 1
    validation = json.loads((out / "validation.json").read_text())
    failed = [c for c in validation["conditions"] if not c["passed"]]
    assert [c["name"] for c in failed] == ["kernel_decay"]
    assert failed[0]["witness"] == [[0], [1]]


def test_kernel_bound_run_is_reproducible(make_config, tmp_path):
    config = make_config("verify-kernel-bound", params={"N": 3, "n_max": 2, "c_values": [0.0, 1.0]})
    first, second = tmp_path / "first", tmp_path / "second"
    assert _run(["verify-kernel-bound"], config, first) == 0
    assert _run(["verify-kernel-bound"], config, second, "--threads", "3") == 0
    assert (first / "kernel_bound.csv").read_bytes() == (second / "kernel_bound.csv").read_bytes()
    manifest = json.loads((first / "manifest.json").read_text())
    assert manifest["passed"] is True
    assert manifest["report"]["max_ratio"] <= 1.0
    assert "kernel_bound.csv" in manifest["outputs"]


def test_contraction_without_positive_delta_exits_two(make_config, tmp_path, capsys):
    model = {"drift": {"kind": "linear", "eps": 0.5, "c0": 0.0, "n": 0, "rate": 1.0},
             "kernel": {"kind": "exp-decay-scaled", "beta": 1.0, "normalize": False, "range": 1,
                        "support_radius": 30, "entries": []}}
    config = make_config("contraction", model=model, scheme={"dt": 0.01}, replicas=2)
    assert _run(["experiment", "contraction"], config, tmp_path / "out") == 2
    assert "delta" in capsys.readouterr().err


def test_alpha_outside_range_exits_two(make_config, tmp_path, capsys):
    config = make_config("sample", noise={"alpha": 0.9})
    assert _run(["sample"], config, tmp_path / "out") == 2
    assert "alpha" in capsys.readouterr().err


def test_missing_config_exits_two(tmp_path):
    assert _run(["validate"], str(tmp_path / "nowhere.json"), tmp_path / "out") == 2


def test_sample_writes_its_tables(make_config, tmp_path):
    out = tmp_path / "out"
    config = make_config("sample", params={"count": 5000, "path_sites": 2, "path_steps": 20})
    assert _run(["sample"], config, out) in (0, 1)
    for name in ("samples.csv", "char_fn.csv", "noise_path.csv", "manifest.json"):
        assert (out / name).exists()
    assert (out / "char_fn.csv").read_text().splitlines()[0] == "xi,t,empirical,exact,abs_error,tolerance"
    assert len((out / "samples.csv").read_text().splitlines()) == 5001


def test_seed_override_is_recorded(make_config, tmp_path):
    out = tmp_path / "out"
    assert _run(["validate"], make_config("validate", model={"N": 2}), out, "--seed", "99") == 0
    manifest_text = (out / "manifest.json").read_text()
    manifest = json.loads(manifest_text)
    assert manifest["seed"] == 99
    restored = config_from_manifest(manifest_text)
    assert restored.noise.seed == 99
    assert restored.model.N == 2


def test_config_for_another_run_is_retargeted(make_config, tmp_path):
    out = tmp_path / "out"
    config = make_config("contraction", model={"N": 2}, params={"T": 2.0})
    assert _run(["validate"], config, out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["experiment"]["name"] == "validate"
    assert manifest["config"]["experiment"]["params"] == {}


def test_ledger_verification(make_config, tmp_path, capsys):
    out = tmp_path / "out"
    config = make_config("validate", model={"N": 2})
    assert _run(["validate"], config, out) == 0
    assert _run(["validate"], config, out) == 0
    assert main(["verify-ledger", "--out", str(out)]) == 0
    assert "3 blocks" in capsys.readouterr().out

    path = out / "ledger.json"
    data = json.loads(path.read_text())
    data["1"]["transaction"]["seed"] = 1
    path.write_text(json.dumps(data))
    assert main(["verify-ledger", "--out", str(out)]) == 1
    assert main(["verify-ledger", "--out", str(tmp_path / "empty")]) == 2


def test_simulate_with_picard(make_config, tmp_path):
    out = tmp_path / "out"
    config = make_config("simulate", model={"N": 2}, scheme={"dt": 0.01, "T": 0.1}, params={"picard": True})
    assert _run(["simulate"], config, out) == 0
    rows = (out / "trajectory.csv").read_text().splitlines()
    assert rows[0].split(",")[0] == "time"
    assert len(rows) == 12
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["passed"] is None
    assert manifest["report"]["picard"]["converged"] is True


def test_blow_up_exits_two_with_last_state(make_config, tmp_path):
    out = tmp_path / "out"
    model = {"N": 0, "drift": {"kind": "poly", "eps": 0.0, "c0": 1.0, "n": 1, "rate": 0.5}}
    config = make_config("simulate", model=model, scheme={"kind": "euler", "dt": 0.1, "T": 0.1},
                         params={"initial": [1e200]})
    assert _run(["simulate"], config, out) == 2
    blowup = json.loads((out / "blowup.json").read_text())
    assert blowup["site"] == [0]
    assert blowup["last_state"] == [1e200]
    ledger = json.loads((out / "ledger.json").read_text())
    assert ledger["1"]["transaction"]["exit_status"] == 2


def test_generate_configs(tmp_path):
    target = tmp_path / "configs"
    assert main(["generate-configs", "--dir", str(target)]) == 0
    assert sorted(p.stem for p in target.glob("*.json")) == sorted(RUN_NAMES)


def test_small_contraction_experiment(make_config, tmp_path):
    out = tmp_path / "out"
    config = make_config("contraction", model={"N": 3}, scheme={"dt": 0.01}, replicas=5, params={"T": 1.0})
    assert _run(["experiment", "contraction"], config, out) == 0
    header = (out / "contraction.csv").read_text().splitlines()[0]
    assert header.startswith("time,distance_mean")
    ledger = json.loads((out / "ledger.json").read_text())
    assert ledger["1"]["transaction"]["experiment"] == "contraction"
    assert ledger["1"]["transaction"]["passed"] is True
