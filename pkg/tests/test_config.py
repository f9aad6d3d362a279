import pytest

from mechnum.config import (
    PRESETS,
    ExperimentConfig,
    MechanismConfig,
    apply_env_overrides,
    config_hash,
    default_config,
    load_config,
)
from mechnum.consts import ENV_OUTPUT_DIR, ENV_WORKERS, Experiments
from mechnum.errors import ConfigError


def test_every_experiment_has_a_preset():
    assert set(PRESETS) == set(Experiments.ALL)
    for name in Experiments.ALL:
        cfg = default_config(name)
        assert cfg.experiment == name


def test_presets_are_applied():
    cfg = default_config(Experiments.EXAMPLE2)
    assert cfg.scenario.n_links == 2
    assert cfg.scenario.n_ee_links == 1
    assert cfg.mechanism.center_a == 0.2
    assert cfg.n_samples == 100
    cfg = default_config(Experiments.EXAMPLE3)
    assert cfg.scenario.n_links == 20
    assert cfg.mechanism.esem.delta0 == 1e-2


def test_overrides_merge_into_sections():
    cfg = default_config(Experiments.EXAMPLE3, {"mechanism": {"esem": {"seed": 4}}, "n_samples": 2})
    assert cfg.mechanism.esem.seed == 4
    assert cfg.mechanism.esem.delta0 == 1e-2
    assert cfg.mechanism.center_a == 2.0
    assert cfg.n_samples == 2


def test_default_alpha_grid():
    grid = MechanismConfig().alpha_grid
    assert len(grid) == 20
    assert grid[0] == 0.025 and grid[-1] == 0.5


def test_eps_grid():
    grid = MechanismConfig(eps_sweep=[0.1, 0.5, 5]).eps_grid
    assert grid == pytest.approx([0.1, 0.2, 0.3, 0.4, 0.5])


@pytest.mark.parametrize(
    "overrides",
    [
        {"n_samples": 0},
        {"workers": 0},
        {"colour": "red"},
        {"scenario": {"n_link": 3}},
        {"scenario": {"n_links": 2, "n_ee_links": 3}},
        {"solver": {"step_rule": "newton"}},
        {"mechanism": {"alpha_grid": [0.25, 0.75]}},
        {"mechanism": {"alpha_grid": []}},
        {"mechanism": {"esem": {"delta0": -1.0}}},
        {"mechanism": {"esem": {"speed": 2}}},
    ],
)
def test_invalid_settings_raise_config_error(overrides):
    with pytest.raises(ConfigError):
        default_config(Experiments.EXAMPLE1, overrides)


def test_unknown_experiment():
    with pytest.raises(ConfigError):
        default_config("example4")
    with pytest.raises(ConfigError):
        ExperimentConfig(experiment="example4")


def test_load_toml(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        'experiment = "example3"\n'
        "seed = 7\n"
        "[scenario]\n"
        "n_links = 6\n"
        "n_ee_links = 2\n"
        "[mechanism.esem]\n"
        "delta0 = 0.05\n",
        encoding="utf-8",
    )
    cfg = load_config(path)
    assert cfg.experiment == Experiments.EXAMPLE3
    assert cfg.seed == 7
    assert cfg.scenario.n_links == 6
    assert cfg.mechanism.esem.delta0 == 0.05
    assert cfg.mechanism.center_sigma == 0.01


def test_load_toml_experiment_argument_wins(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('experiment = "example3"\nseed = 1\n', encoding="utf-8")
    cfg = load_config(path, Experiments.EXAMPLE1)
    assert cfg.experiment == Experiments.EXAMPLE1
    assert cfg.scenario.n_links == 8


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(bad)


def test_load_without_file_uses_preset():
    assert load_config(None, Experiments.ORACLE_CHECK).scenario.n_links == 4
    assert load_config().experiment == Experiments.EXAMPLE1


def test_env_overrides():
    cfg = default_config(Experiments.EXAMPLE1)
    apply_env_overrides(cfg, {ENV_OUTPUT_DIR: "/tmp/mechnum-out", ENV_WORKERS: "3"})
    assert cfg.output_dir == "/tmp/mechnum-out"
    assert cfg.workers == 3
    apply_env_overrides(cfg, {})
    assert cfg.workers == 3
    with pytest.raises(ConfigError):
        apply_env_overrides(cfg, {ENV_WORKERS: "many"})


def test_config_hash_ignores_output_location():
    a = default_config(Experiments.EXAMPLE2)
    b = default_config(Experiments.EXAMPLE2, {"output_dir": "elsewhere", "workers": 4})
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 12
    c = default_config(Experiments.EXAMPLE2, {"seed": 1})
    assert config_hash(a) != config_hash(c)
