"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = ()

import logging
import math
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from typing import Any, Callable, Mapping, TypeVar

    R = TypeVar("R")


try:
    import ujson as json

    _USING_FAST_JSON = True
except ImportError:
    _USING_FAST_JSON = False
    import json


_log = logging.getLogger(__name__)


if not _USING_FAST_JSON:
    _log.warning("ujson not installed, defaulting to json")


# Random stream identifiers. Each consumer draws from its own stream so that
# switching one feature on or off never shifts the draws of another.
STREAM_BATCH = 0
STREAM_TIME = 1
STREAM_NOISE = 2
STREAM_DIRECTIONS = 3
STREAM_GATE = 4
STREAM_INIT = 5
STREAM_EVAL = 6
STREAM_CHECK = 7


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Build an independent generator from a base seed and a path of integer keys.
    """

    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


def derive_seed(seed: int, *keys: int) -> int:
    """
    Collapse a base seed and key path into a single 63-bit integer seed.
    """

    state = np.random.SeedSequence([int(seed), *(int(k) for k in keys)]).generate_state(2, dtype=np.uint32)

    return int((int(state[0]) << 31) ^ int(state[1]))


def dumps(data: Mapping[str, Any]) -> str:
    """
    Serialize a record to a compact, key-sorted JSON string.
    """

    kwargs: dict[str, Any] = dict(sort_keys=True, ensure_ascii=False)

    if _USING_FAST_JSON:
        kwargs["escape_forward_slashes"] = False
    else:
        kwargs["separators"] = (",", ":")

    return json.dumps(data, **kwargs)  # type: ignore


def loads(text: str) -> Any:
    return json.loads(text)


def partial(fn: Callable[..., R], *args: Any, **kwargs: Any) -> Callable[..., R]:
    def inner(*a: Any, **k: Any) -> R:
        return fn(*args, *a, **kwargs, **k)

    inner.__name__ = getattr(fn, "__name__", "partial")

    return inner


def format_float(value: float) -> str:
    """
    Stable textual form for CSV cells.
    """

    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""

    return f"{value:.10g}"
