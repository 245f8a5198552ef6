"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = (
    "transform",
    "Validator",
    "Fn",
    "Type",
    "Maybe",
    "As",
    "OneOf",
    "ListOf",
    "Schema",
)

import logging
from typing import TYPE_CHECKING

from .errors import (
    ConfigTypeMismatch,
    MissingConfigField,
    UnknownConfigKey,
    ValidatorException,
    ValidatorFailed,
    ValidatorTransformError,
)

if TYPE_CHECKING:
    from typing import Any, Callable, Iterable, Mapping, Optional


_log = logging.getLogger(__name__)


def transform(schema: Validator, data: Any, *, partial: bool = False) -> Any:
    """
    Validate ``data`` against ``schema`` and return the transformed result.

    ``partial`` skips the required-key check of a :class:`Schema`, for mappings that are only
    one layer of the final data.

    Raises
    ------
    :exc:`ValidatorFailed`
        ``data`` does not satisfy ``schema``. Key-level failures raise the more specific
        :exc:`UnknownConfigKey`, :exc:`MissingConfigField` or :exc:`ConfigTypeMismatch` instead.
    """

    if isinstance(schema, Schema):
        return schema.transform(data, partial=partial)

    is_ok = schema.validate(data)

    if not is_ok:
        raise ValidatorFailed(f"Had schema: {schema!r}\nHad data: {data!r}")

    return schema.transform(data)


class Validator:
    validator: Any

    def __init__(self, validator: Any, *args: Any, **kwargs: Any):
        self.validator = validator
        self.args = args
        self.kwargs = kwargs

    def validate(self, data: Any) -> bool:
        try:
            self.transform(data)

        except ValidatorException:
            return False

        return True

    def transform(self, data: Any) -> Any:
        return NotImplemented

    def __repr__(self):
        return f"{self.__class__.__name__}[{self.validator!r}]"


# lower-level Validator helpers


class Fn(Validator):
    """
    Calls ``validator`` on the data and keeps its return value. Any exception it raises is a failure.
    """

    def transform(self, data: Any) -> Any:
        name = getattr(self.validator, "__name__", repr(self.validator))

        try:
            val = self.validator(data)

        except ValidatorException as e:
            raise ValidatorTransformError(f"{name} failed: Validator error: {e.message}") from e

        except Exception as e:
            raise ValidatorTransformError(f"{name} failed: {e}") from e

        else:
            return val


# higher-level Validator helpers


class Type(Validator):
    """
    Accepts instances of one type or a tuple of types.

    ``bool`` is never accepted where a number is expected, since YAML ``yes`` would otherwise pass as ``1``.
    """

    def __init__(self, validator: Any, *args: Any, **kwargs: Any):
        self.is_strict = kwargs.pop("strict", False)
        super().__init__(validator, *args, **kwargs)

    @property
    def _name(self) -> str:
        if isinstance(self.validator, tuple):
            return " | ".join(t.__name__ for t in self.validator)

        return self.validator.__name__

    def transform(self, data: Any) -> Any:
        if self.is_strict:
            valid = type(data) == self.validator
        else:
            valid = isinstance(data, self.validator)

        wants_bool = self.validator is bool or (isinstance(self.validator, tuple) and bool in self.validator)
        if isinstance(data, bool) and not wants_bool:
            valid = False

        if valid:
            return data

        raise ValidatorTransformError(f"value {data!r} should be of type {self._name}, got {type(data).__name__}")

    def __repr__(self):
        return f"{self.__class__.__name__}[{'*' if self.is_strict else ''}{self._name}]"


class Maybe(Validator):
    def __init__(self, validator: Any, *args: Any, **kwargs: Any):
        super().__init__(Schema(validator).resolve(), *args, **kwargs)

    def validate(self, data: Any) -> bool:
        if data is None:
            return True

        return self.validator.validate(data)

    def transform(self, data: Any) -> Any:
        if data is None:
            return None

        return self.validator.transform(data)


class As(Validator):
    """
    Validate with an inner validator, then convert the result with ``transformer``.
    """

    def __init__(self, validator: Any, transformer: Callable[[Any], Any], *args, **kwargs):
        self.transformer = transformer
        self._transformer_name = transformer.__name__ if hasattr(transformer, "__name__") else repr(transformer)

        super().__init__(Schema(validator).resolve(), *args, **kwargs)

    def transform(self, data: Any) -> Any:
        new_data = self.validator.transform(data)

        try:
            return self.transformer(new_data)

        except ValidatorException:
            raise

        except Exception as e:
            raise ValidatorTransformError(
                f"failed to convert {type(data).__name__} with {self._transformer_name}: {e}"
            ) from e

    def __repr__(self):
        return f"{self.__class__.__name__}[{self.validator!r} -> {self._transformer_name}]"


class OneOf(Validator):
    """
    Accepts one of a fixed set of values. Enum classes contribute their member values.
    """

    def __init__(self, validator: Iterable[Any], *args: Any, **kwargs: Any):
        if isinstance(validator, type):
            choices = tuple(member.value for member in validator)  # type: ignore
        else:
            choices = tuple(validator)

        super().__init__(choices, *args, **kwargs)

    def transform(self, data: Any) -> Any:
        if data in self.validator:
            return data

        raise ValidatorTransformError(f"expected one of {', '.join(map(repr, self.validator))}, got {data!r}")


class ListOf(Validator):
    """
    A non-empty homogeneous list. Scalars are promoted to one-element lists.
    """

    def __init__(self, validator: Any, *args: Any, **kwargs: Any):
        self.allow_empty = kwargs.pop("allow_empty", False)
        super().__init__(Schema(validator).resolve(), *args, **kwargs)

    def transform(self, data: Any) -> Any:
        if not isinstance(data, (list, tuple)):
            data = [data]

        if not data and not self.allow_empty:
            raise ValidatorTransformError("expected a non-empty list")

        return tuple(self.validator.transform(item) for item in data)


# Priority code is adapted from schema package
UNKNOWN, CALLABLE, VALIDATOR, TYPE, DICT, ITER = range(6)


def _priority(item: Any) -> int:
    if type(item) in (list, tuple, set, frozenset):
        return ITER

    if type(item) is dict:
        return DICT

    if issubclass(type(item), type):
        return TYPE

    if issubclass(type(item), Validator):
        return VALIDATOR

    if callable(item):
        return CALLABLE

    return UNKNOWN


# Main validator entry


class Schema(Validator):
    """
    Declarative validator for flat mappings keyed by dotted names.

    Keys absent from the data are skipped unless listed in ``required``. Keys absent from the
    schema raise :exc:`UnknownConfigKey` unless ``ignore_extra_keys`` is set. Every key-level
    error names the key.
    """

    def __init__(self, validator: Any, *args: Any, **kwargs: Any):
        self.validator = validator

        self.args = args
        self.kwargs = kwargs

        self.required: frozenset[str] = frozenset(kwargs.pop("required", ()))
        self.ignore_extra_keys: bool = kwargs.pop("ignore_extra_keys", False)

        self.resolved = False
        self._target: Optional[Validator] = None

    def resolve(self) -> Validator:
        self.resolved = True
        validator = self.validator

        type_ = _priority(validator)

        if type_ == CALLABLE:
            return Fn(validator)

        if type_ == VALIDATOR:
            return validator

        if type_ == TYPE:
            return Type(validator)

        if type_ == DICT:
            self.validator = {key: Schema(validator[key]).resolve() for key in sorted(validator)}

            return self

        if type_ == ITER:
            return ListOf(validator[0]) if len(validator) == 1 else Schema(validator[0]).resolve()

        raise ValidatorException(f"Encountered unknown validator type: {validator!r} ({type(validator).__name__})")

    def validate(self, data: Any) -> bool:
        try:
            self.transform(data)

        except ValidatorException:
            return False

        return True

    def check_required(self, data: Mapping[str, Any]):
        """
        Raise :exc:`MissingConfigField` naming the first ``required`` key absent from ``data``.
        """

        missing = sorted(key for key in self.required if key not in data)
        if missing:
            _log.error("missing required config keys: %s", ", ".join(missing))
            raise MissingConfigField(f"missing required key {missing[0]!r}", key=missing[0])

    def transform(self, data: Any, *, partial: bool = False, where: Optional[str] = None) -> Any:
        if self._target is None:
            self._target = self.resolve()

        if self._target is not self:
            return self._target.transform(data)

        validator = self.validator

        if not isinstance(data, dict):
            raise ValidatorFailed(f"expected a mapping{f' for {where}' if where else ''}, got {type(data).__name__}")

        if not partial:
            self.check_required(data)

        new = {}

        for key in sorted(data):
            if key not in validator:
                if self.ignore_extra_keys:
                    new[key] = data[key]
                    continue

                _log.error("unknown config key %r", key)
                raise UnknownConfigKey(f"unknown configuration key {key!r}", key=key)

            try:
                new[key] = validator[key].transform(data[key])

            except ValidatorException as e:
                _log.error("invalid value for %r: %s", key, e.message)
                raise ConfigTypeMismatch(f"invalid value for {key!r}: {e.message}", key=key, original=e) from e

        return new

    def __repr__(self):
        if type(self.validator) is dict:
            return f"{self.__class__.__name__}[{', '.join(self.validator)}]"

        return super().__repr__()
