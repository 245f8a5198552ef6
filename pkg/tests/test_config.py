"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

import logging
from pathlib import Path

import pytest

from digflow.config import DEFAULTS, OUT_ROOT_ENV, ConfigSchema, flatten, load_file, parse_config, parse_override
from digflow.enums import AblationAxis, Command, DiscrepancyTag, GateStrategy
from digflow.errors import ConfigError, ConfigTypeMismatch, MissingConfigField, UnknownConfigKey
from digflow.validation import transform


@pytest.fixture
def config_file(tmp_path):
    def write(text: str) -> Path:
        path = tmp_path / "run.yaml"
        path.write_text(text, encoding="utf-8")

        return path

    return write


def test_defaults():
    cfg = parse_config(command="train")
    dig = cfg.train.dig

    assert cfg.command is Command.train
    assert (dig.gate.tau, dig.lam, dig.projections, dig.bound, dig.gate.g_min) == (1.0, 0.4, 32, 2.0, 0.05)
    assert dig.discrepancy.tag is DiscrepancyTag.sliced_w2
    assert cfg.refine.n_refine == 0
    assert cfg.train.gate_strategy is GateStrategy.transport


def test_defaults_validate():
    assert transform(ConfigSchema, {"command": "verify", **DEFAULTS}) is not None


def test_assumed_default_logged_loudly(caplog):
    with caplog.at_level(logging.INFO, logger="digflow.config"):
        parse_config(command="train")

    warnings = [r.getMessage() for r in caplog.records if r.levelno == logging.WARNING]

    assert any("train.g_min" in message for message in warnings)


def test_file_layer(config_file):
    path = config_file(
        """
command: ablate
seed: 3
train:
  lambda: 0.8
  steps: 12
sweep:
  axis: lambda_tau
  lambdas: [0.1, 0.2]
"""
    )
    cfg = parse_config(path)

    assert cfg.command is Command.ablate
    assert cfg.seed == 3
    assert cfg.train.dig.lam == 0.8
    assert cfg.train.steps == 12
    assert cfg.sweep.axis is AblationAxis.lambda_tau
    assert cfg.sweep.lambdas == (0.1, 0.2)


def test_flag_beats_override_beats_file(config_file):
    path = config_file("command: train\ntrain:\n  lambda: 0.8\n  tau: 2.0\n")

    cfg = parse_config(path, overrides=["train.lambda=0.1", "train.tau=0.5"], flags={"lambda": 0.2, "tau": None})

    assert cfg.train.dig.lam == 0.2
    assert cfg.train.dig.gate.tau == 0.5
    assert cfg.values["train.lambda"] == 0.2


def test_command_argument_beats_file(config_file):
    cfg = parse_config(config_file("command: ablate\n"), command="verify")

    assert cfg.command is Command.verify


def test_layers_without_command(config_file):
    path = config_file("train:\n  lambda: 0.8\nverify:\n  contraction_trials: 3\n")

    cfg = parse_config(path, command="verify", overrides=["verify.checks=[bracketing, contraction]"])

    assert cfg.command is Command.verify
    assert cfg.train.dig.lam == 0.8
    assert cfg.verify.checks == ("bracketing", "contraction")
    assert cfg.values["verify.contraction_trials"] == 3


def test_command_only_in_file(config_file):
    cfg = parse_config(config_file("command: train\n"), overrides=["train.steps=3"], flags={"seed": 4})

    assert cfg.command is Command.train
    assert (cfg.train.steps, cfg.seed) == (3, 4)


def test_missing_command_with_other_layers(config_file):
    with pytest.raises(MissingConfigField) as info:
        parse_config(config_file("train:\n  steps: 3\n"), overrides=["train.tau=2.0"])

    assert info.value.key == "command"


def test_path_values(config_file):
    cfg = parse_config(command="eval", overrides=["eval.checkpoint=~/state.digf"])

    assert cfg.eval.checkpoint == str(Path("~/state.digf").expanduser())

    with pytest.raises(ConfigTypeMismatch) as info:
        parse_config(config_file("command: train\nout: 12\n"))

    assert info.value.key == "out"


def test_malformed_numeric_names_key(config_file):
    with pytest.raises(ConfigTypeMismatch) as info:
        parse_config(config_file("command: train\ntrain:\n  tau: warm\n"))

    assert info.value.key == "train.tau"


@pytest.mark.parametrize(
    "override, key",
    [("train.tau=0", "train.tau"), ("train.g_min=1.5", "train.g_min"), ("sweep.seeds=[]", "sweep.seeds")],
)
def test_out_of_range_names_key(override, key):
    with pytest.raises(ConfigTypeMismatch) as info:
        parse_config(command="train", overrides=[override])

    assert info.value.key == key


def test_unknown_key():
    with pytest.raises(UnknownConfigKey) as info:
        parse_config(command="train", overrides=["train.lamda=0.2"])

    assert info.value.key == "train.lamda"


def test_missing_command():
    with pytest.raises(MissingConfigField):
        parse_config()


def test_gate_floor_of_one_is_config_error():
    with pytest.raises(ConfigError):
        parse_config(command="train", overrides=["train.g_min=1.0"])


def test_out_root_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(OUT_ROOT_ENV, str(tmp_path))

    assert parse_config(command="verify").out == tmp_path / "verify"
    assert parse_config(command="verify", flags={"out": "elsewhere"}).out == Path("elsewhere")


def test_out_root_default(monkeypatch):
    monkeypatch.delenv(OUT_ROOT_ENV, raising=False)

    assert parse_config(command="train").out == Path("runs") / "train"


def test_discrepancy_kind_helper():
    cfg = parse_config(command="ablate", overrides=["train.epsilon=0.3"])
    kind = cfg.discrepancy_kind(DiscrepancyTag.sinkhorn, projections=8)

    assert kind.epsilon == 0.3
    assert kind.projections == 8


def test_flatten():
    assert flatten({"a": {"b": 1, "c": {"d": [1, 2]}}, "e": None}) == {"a.b": 1, "a.c.d": [1, 2], "e": None}


def test_load_file_errors(config_file, tmp_path):
    with pytest.raises(ConfigError):
        load_file(tmp_path / "missing.yaml")

    with pytest.raises(ConfigError):
        load_file(config_file("- just\n- a list\n"))

    with pytest.raises(ConfigError):
        load_file(config_file("command: [unclosed\n"))

    assert load_file(config_file("")) == {}


def test_parse_override():
    assert parse_override("train.lambda=0.2") == ("train.lambda", 0.2)
    assert parse_override("sweep.seeds=[0, 1]") == ("sweep.seeds", [0, 1])
    assert parse_override("eval.checkpoint=") == ("eval.checkpoint", None)

    with pytest.raises(ConfigError):
        parse_override("train.lambda")
