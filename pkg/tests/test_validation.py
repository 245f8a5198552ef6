"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

import pytest

from digflow.enums import GateStrategy
from digflow.errors import (
    ConfigTypeMismatch,
    MissingConfigField,
    UnknownConfigKey,
    ValidatorException,
    ValidatorFailed,
)
from digflow.validation import As, Fn, ListOf, Maybe, OneOf, Schema, Type, transform


def test_unchanged():
    assert transform(Schema({}), {}) == {}


sweep_schema = Schema(
    {
        "sweep.lambdas": ListOf(As(Type((int, float)), float)),
        "sweep.gates": ListOf(OneOf(GateStrategy)),
        "eval.checkpoint": Maybe(str),
        "train.steps": int,
    },
    required=("train.steps",),
)


def sweep_data(**extra):
    data = {"sweep.lambdas": [1, 0.5], "sweep.gates": "fixed", "eval.checkpoint": None, "train.steps": 10, **extra}

    return transform(sweep_schema, data)


def test_sweep():
    result = sweep_data()

    assert result == {
        "sweep.lambdas": (1.0, 0.5),
        "sweep.gates": ("fixed",),
        "eval.checkpoint": None,
        "train.steps": 10,
    }
    assert type(result["sweep.lambdas"][0]) is float


def test_unknown_key():
    with pytest.raises(UnknownConfigKey) as info:
        sweep_data(**{"train.lamda": 0.2})

    assert info.value.key == "train.lamda"


def test_missing_key():
    with pytest.raises(MissingConfigField) as info:
        transform(sweep_schema, {"sweep.lambdas": [0.1]})

    assert info.value.key == "train.steps"


def test_partial_layer_skips_required():
    assert transform(sweep_schema, {"sweep.lambdas": [0.1]}, partial=True) == {"sweep.lambdas": (0.1,)}

    with pytest.raises(UnknownConfigKey):
        transform(sweep_schema, {"train.lamda": 0.1}, partial=True)

    with pytest.raises(MissingConfigField):
        sweep_schema.check_required({"sweep.lambdas": (0.1,)})

    sweep_schema.check_required({"train.steps": 1})


@pytest.mark.parametrize(
    "key, value",
    [("train.steps", "ten"), ("train.steps", True), ("sweep.gates", ["sometimes"]), ("sweep.lambdas", [])],
)
def test_bad_value_names_key(key, value):
    with pytest.raises(ConfigTypeMismatch) as info:
        sweep_data(**{key: value})

    assert info.value.key == key


def test_not_a_mapping():
    with pytest.raises(ValidatorFailed):
        transform(sweep_schema, [("train.steps", 1)])


def test_plain_validators():
    assert transform(Maybe(int), None) is None
    assert transform(As(str, float), "2.5") == 2.5
    assert Type(bool).validate(True)
    assert not Type(int).validate(True)
    assert not Type(int, strict=True).validate(1.0)


def test_callables_become_fn():
    schema = Schema({"out": str.upper})

    assert transform(schema, {"out": "runs"}) == {"out": "RUNS"}
    assert transform(Fn(abs), -2) == 2
    assert not Fn(int).validate("two")


def test_unknown_validator_type():
    with pytest.raises(ValidatorException):
        Schema(3).resolve()


@pytest.mark.xfail(strict=True)
def test_should_fail_simple():
    transform(Schema({"train.steps": int}), {"train.steps": 1.5})
