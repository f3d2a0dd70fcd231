"""Binary checkpoint format: magic "ABM1", version byte, a JSON config block,
then named parameters as (name length, name, dtype code, rank, dims,
little-endian IEEE-754 values)."""

from __future__ import annotations

import json
import struct

import numpy as np

from .autograd import Parameter
from .model import AbmConfig, init_parameters

MAGIC = b"ABM1"
VERSION = 1
_DTYPE_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: dict, config: AbmConfig, path: str) -> None:
    config_bytes = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(config_bytes)))
        fh.write(config_bytes)
        names = sorted(params)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            data = params[name].data
            code = data.dtype.itemsize
            if code not in _DTYPE_CODES:
                raise CheckpointError(f"unsupported dtype {data.dtype} for {name!r}")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", code))
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype=_DTYPE_CODES[code]).tobytes())


def _read(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path: str) -> tuple[dict, AbmConfig]:
    """Load and validate a checkpoint; shapes are checked against the config's
    expected parameter manifest."""
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise CheckpointError("bad magic: not an ABM1 checkpoint")
        (version,) = struct.unpack("<B", _read(fh, 1, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", _read(fh, 4, "config length"))
        try:
            config = AbmConfig.from_dict(json.loads(_read(fh, clen, "config")))
        except (json.JSONDecodeError, TypeError) as exc:
            raise CheckpointError(f"bad config block: {exc}") from exc
        (n_params,) = struct.unpack("<I", _read(fh, 4, "parameter count"))
        params: dict[str, Parameter] = {}
        for _ in range(n_params):
            (nlen,) = struct.unpack("<H", _read(fh, 2, "name length"))
            name = _read(fh, nlen, "name").decode("utf-8")
            (code,) = struct.unpack("<B", _read(fh, 1, f"dtype of {name}"))
            if code not in _DTYPE_CODES:
                raise CheckpointError(f"unknown dtype code {code} for {name!r}")
            (rank,) = struct.unpack("<B", _read(fh, 1, f"rank of {name}"))
            shape = struct.unpack(f"<{rank}I", _read(fh, 4 * rank, f"dims of {name}"))
            count = int(np.prod(shape)) if rank else 1
            raw = _read(fh, count * code, f"values of {name}")
            data = np.frombuffer(raw, dtype=_DTYPE_CODES[code]).reshape(shape).copy()
            params[name] = Parameter(name, data)
        if fh.read(1):
            raise CheckpointError("trailing bytes after last parameter")

    expected = init_parameters(config, seed=0, dtype=np.float32)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointError(f"parameter manifest mismatch: missing={missing} extra={extra}")
    for name, p in expected.items():
        if params[name].data.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: "
                f"{params[name].data.shape} vs expected {p.data.shape}"
            )
    return params, config


def model_card(params: dict, config: AbmConfig) -> str:
    """Human-readable record of the architecture config and parameter names."""
    lines = ["[config]"]
    for key, value in sorted(config.to_dict().items()):
        lines.append(f"{key} = {value}")
    lines.append("")
    lines.append("[parameters]")
    for name in sorted(params):
        shape = "x".join(map(str, params[name].data.shape))
        lines.append(f"{name} {shape}")
    return "\n".join(lines) + "\n"
