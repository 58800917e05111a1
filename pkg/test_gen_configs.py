import json
import math
from pathlib import Path

import pytest

from configs.gen_run_cfs import (OUTPUT_ENV_VAR, RUN_NAMES, ConfigError, ConfigGenerator, ObservableConfig,
                                 build_observable, build_scheme, config_from_manifest, parse_config,
                                 resolve_output_dir)

CONFIG_DIR = Path(__file__).parent / "configs" / "database"


def _document(**sections):
    document = {"noise": {"alpha": 1.5, "seed": 7}, "experiment": {"name": "validate"}}
    document.update(sections)
    return document


def test_minimal_document_takes_defaults():
    config = parse_config(json.dumps(_document()))
    assert config.model.d == 1
    assert config.model.N == 10
    assert config.scheme.kind == "exponential"
    assert config.experiment.replicas == 1000
    derived = config.derived()
    assert derived["c"] == 1.5
    assert derived["eta"] == pytest.approx(1.0 / (math.e - 1.0), rel=1e-12)
    assert derived["delta"] == pytest.approx(1.5 - 1.0 / (math.e - 1.0), rel=1e-12)


def test_alpha_outside_range_is_a_config_error():
    with pytest.raises(ConfigError, match="alpha"):
        parse_config(json.dumps(_document(noise={"alpha": 0.9, "seed": 1})))


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError):
        parse_config(json.dumps(_document(extra=1)))
    with pytest.raises(ConfigError):
        parse_config(json.dumps(_document(scheme={"kind": "exponential", "step": 0.1})))


def test_malformed_json():
    with pytest.raises(ConfigError, match="malformed JSON"):
        parse_config("{\"noise\": ")


def test_missing_seed():
    with pytest.raises(ConfigError):
        parse_config(json.dumps(_document(noise={"alpha": 1.5})))


def test_assumption_failure_carries_the_report():
    model = {"kernel": {"kind": "custom-table", "entries": [[[0], [1], 0.9]]}}
    text = json.dumps(_document(model=model))
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text)
    report = excinfo.value.report
    assert report is not None
    assert report.get("kernel_decay").witness == [[0], [1]]
    assert not parse_config(text, validate=False).spec.kernel.translation_invariant


def test_invalid_model_is_a_config_error():
    model = {"d": 2, "kernel": {"kind": "custom-table", "entries": [[[0], [1], 0.1]]}}
    with pytest.raises(ConfigError, match="invalid model"):
        parse_config(json.dumps(_document(model=model)))


@pytest.mark.parametrize("experiment", [
    {"name": "validate", "params": {"bogus": 1}},
    {"name": "contraction", "params": {"T": -1.0}},
    {"name": "propagation", "params": {"envelope_A": 0.5}},
    {"name": "no-such-run"},
])
def test_bad_experiment_sections(experiment):
    with pytest.raises(ConfigError):
        parse_config(json.dumps(_document(experiment=experiment)))


def test_params_are_typed_per_run():
    config = parse_config(json.dumps(_document(experiment={"name": "galerkin", "params": {"N_list": [2, 4]}})))
    settings = config.experiment.settings()
    assert settings.N_list == [2, 4]
    assert settings.threshold == 0.05


def test_scheme_and_observable_builders():
    config = parse_config(json.dumps(_document(scheme={"kind": "euler", "dt": 0.25, "T": 1.0})))
    cfg = build_scheme(config.scheme)
    assert cfg.scheme == "euler"
    assert cfg.steps == 4
    f = build_observable(ObservableConfig(), 2)
    assert f.kind == "coordinate-tanh"
    assert f.support[0].coords == (0, 0)
    window = build_observable(ObservableConfig(kind="product-window", support=[[0], [1]], width=2.0), 1)
    assert len(window.support) == 2


def test_output_directory_precedence(monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV_VAR, raising=False)
    with_dir = parse_config(json.dumps(_document(output={"directory": "from_config"})))
    without_dir = parse_config(json.dumps(_document()))
    assert resolve_output_dir("from_cli", with_dir) == Path("from_cli")
    assert resolve_output_dir(None, with_dir) == Path("from_config")
    assert resolve_output_dir(None, without_dir) == Path("results")
    monkeypatch.setenv(OUTPUT_ENV_VAR, "from_env")
    assert resolve_output_dir(None, without_dir) == Path("from_env")
    assert resolve_output_dir(None, with_dir) == Path("from_config")


def test_config_from_manifest():
    config = parse_config(json.dumps(_document()))
    manifest = json.dumps({"config": config.model_dump(mode="json"), "seed": 7})
    assert config_from_manifest(manifest).model_dump() == config.model_dump()
    with pytest.raises(ConfigError):
        config_from_manifest(json.dumps({"seed": 7}))
    with pytest.raises(ConfigError):
        config_from_manifest("not json")


def test_generator_writes_loadable_defaults(tmp_path):
    generator = ConfigGenerator(str(tmp_path / "configs"))
    paths = generator.generate_default_configs()
    assert [p.stem for p in paths] == list(RUN_NAMES)
    for name in RUN_NAMES:
        config = generator.load_run_config(name)
        assert config.experiment.name == name
        assert config.noise.seed == ConfigGenerator.DEFAULT_SEED


def test_generator_overrides_and_errors(tmp_path):
    generator = ConfigGenerator(str(tmp_path))
    config = generator.generate_config("contraction", seed=3, filename="short",
                                       overrides={"scheme": {"dt": 0.01}, "experiment": {"replicas": 5}})
    assert config.noise.seed == 3
    assert config.scheme.dt == 0.01
    assert generator.load_run_config("short").experiment.replicas == 5
    with pytest.raises(ValueError):
        generator.default_config("no-such-run")
    with pytest.raises(FileNotFoundError):
        generator.load_run_config("missing")


@pytest.mark.parametrize("name", RUN_NAMES)
def test_shipped_configs_match_the_defaults(name, tmp_path):
    shipped = json.loads((CONFIG_DIR / f"{name}.json").read_text())
    assert shipped == ConfigGenerator(str(tmp_path)).default_config(name)
    parse_config(json.dumps(shipped))
