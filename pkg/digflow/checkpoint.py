"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

from __future__ import annotations

__all__ = ("MAGIC", "FORMAT_VERSION", "CHECKSUM_SIZE", "encode_state", "decode_state", "save", "load")

import logging
import struct
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import torch
from nacl.encoding import RawEncoder
from nacl.hash import blake2b

from .errors import (
    CheckpointChecksumMismatch,
    CheckpointFormatError,
    CheckpointVersionMismatch,
)
from .trainer import build_state

if TYPE_CHECKING:
    from typing import List, Tuple, Union

    from .synthetic import TaskSpec
    from .trainer import DigState, TrainConfig


_log = logging.getLogger(__name__)

MAGIC = b"DIGF"
FORMAT_VERSION = 1
CHECKSUM_SIZE = 8

# magic, version, (d_a, K, d, width, T), step, parameter count
_HEADER = struct.Struct("<4sI5IQI")


def _checksum(data: bytes) -> bytes:
    return blake2b(data, digest_size=CHECKSUM_SIZE, encoder=RawEncoder)


def _dimensions(state: DigState) -> Tuple[int, int, int, int, int]:
    return (
        state.model.action_dim,
        state.model.horizon,
        state.model.feature_dim,
        state.model.width,
        state.task.tokens,
    )


def _block(tensor: torch.Tensor) -> bytes:
    data = tensor.detach().cpu().to(torch.float64).numpy().astype("<f8", copy=False)

    return struct.pack("<Q", data.size) + data.tobytes()


def encode_state(state: DigState) -> bytes:
    """
    Serialize parameters and optimizer moments to the checkpoint layout.

    Layout, little-endian: header (magic, version, dimensions, step, parameter count), one
    ``u64 count + f64 data`` block per parameter in declared order, then per parameter a
    ``u8`` flag followed, when set, by the moment step and both moment blocks, then an
    8-byte BLAKE2b checksum of everything before it.
    """

    params = [param for _, param in state.parameters()]
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, *_dimensions(state), state.step, len(params))]

    for param in params:
        parts.append(_block(param))

    for param in params:
        moments = state.optimizer.state.get(param)

        if not moments:
            parts.append(b"\x00")
            continue

        parts.append(b"\x01" + struct.pack("<d", float(moments["step"])))
        parts.append(_block(moments["exp_avg"]))
        parts.append(_block(moments["exp_avg_sq"]))

    body = b"".join(parts)

    return body + _checksum(body)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointFormatError("checkpoint ends inside a block")

        chunk = self.data[self.offset : self.offset + size]
        self.offset += size

        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def block(self, shape: torch.Size) -> torch.Tensor:
        (count,) = self.unpack("<Q")

        if count != shape.numel():
            raise CheckpointFormatError(f"block holds {count} values, parameter expects {shape.numel()}")

        values = np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

        return torch.from_numpy(values.copy()).reshape(shape)


def decode_state(data: bytes, cfg: TrainConfig, task: TaskSpec) -> DigState:
    """
    Rebuild a state from checkpoint bytes.

    The checksum is verified before anything else is parsed.

    Raises
    ------
    :exc:`CheckpointChecksumMismatch`
        The data is truncated or corrupted.

    :exc:`CheckpointFormatError`
        Wrong magic, or a layout that does not match ``cfg`` and ``task``.

    :exc:`CheckpointVersionMismatch`
        The data was written by another format version.
    """

    if len(data) < _HEADER.size + CHECKSUM_SIZE:
        _log.error("checkpoint shorter than its header")
        raise CheckpointChecksumMismatch(f"checkpoint is truncated ({len(data)} bytes)")

    magic, version = struct.unpack_from("<4sI", data)

    if magic != MAGIC:
        _log.error("checkpoint has bad magic %r", magic)
        raise CheckpointFormatError(f"not a digflow checkpoint (magic {magic!r})")

    if version != FORMAT_VERSION:
        _log.error("checkpoint version %d, expected %d", version, FORMAT_VERSION)
        raise CheckpointVersionMismatch(
            f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )

    body, stored = data[:-CHECKSUM_SIZE], data[-CHECKSUM_SIZE:]

    if _checksum(body) != stored:
        _log.error("checkpoint checksum mismatch")
        raise CheckpointChecksumMismatch("checkpoint checksum does not match its contents")

    state = build_state(cfg, task)
    reader = _Reader(body)

    _, _, *dims, step, count = reader.unpack(_HEADER.format)

    if tuple(dims) != _dimensions(state):
        _log.error("checkpoint dimensions %s do not match the configuration", dims)
        raise CheckpointFormatError(f"checkpoint dimensions {tuple(dims)} do not match {_dimensions(state)}")

    params: List[torch.nn.Parameter] = [param for _, param in state.parameters()]

    if count != len(params):
        raise CheckpointFormatError(f"checkpoint holds {count} parameters, expected {len(params)}")

    with torch.no_grad():
        for param in params:
            param.copy_(reader.block(param.shape))

    for param in params:
        (flag,) = reader.unpack("<B")

        if flag == 0:
            continue

        if flag != 1:
            raise CheckpointFormatError(f"invalid optimizer state flag {flag}")

        (moment_step,) = reader.unpack("<d")
        state.optimizer.state[param] = {
            "step": torch.tensor(moment_step, dtype=torch.float32),
            "exp_avg": reader.block(param.shape),
            "exp_avg_sq": reader.block(param.shape),
        }

    if reader.offset != len(body):
        raise CheckpointFormatError(f"{len(body) - reader.offset} trailing bytes after the optimizer state")

    state.step = step

    return state


def save(state: DigState, path: Union[str, Path]):
    """
    Write a checkpoint to ``path``.

    Raises
    ------
    :exc:`CheckpointFormatError`
        The file could not be written.
    """

    try:
        Path(path).write_bytes(encode_state(state))

    except OSError as e:
        _log.error("could not write checkpoint %s", path)
        raise CheckpointFormatError(f"could not write checkpoint {path}: {e}", original=e) from e

    _log.info("saved checkpoint at step %d to %s", state.step, path)


def load(path: Union[str, Path], cfg: TrainConfig, task: TaskSpec) -> DigState:
    """
    Read a checkpoint written by :func:`save`. See :func:`decode_state` for the errors raised.
    """

    try:
        data = Path(path).read_bytes()

    except OSError as e:
        _log.error("could not read checkpoint %s", path)
        raise CheckpointFormatError(f"could not read checkpoint {path}: {e}", original=e) from e

    state = decode_state(data, cfg, task)
    _log.info("loaded checkpoint at step %d from %s", state.step, path)

    return state
