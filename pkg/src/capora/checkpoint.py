"""Checkpoint container: a text header followed by raw little-endian float64 data.

Layout::

    capora-container 1
    config {"kind": ..., ...}
    tensors N
    <name> <ndim> <dim_1> ... <dim_ndim>      (N lines)
    end
    <float64 payload, tensors concatenated in header order, C order>
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .lm import ModelConfig, ModelParams, params_from_arrays

MAGIC = "capora-container"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def save_container(path: str | Path, config: Mapping, tensors: Mapping[str, np.ndarray]) -> None:
    lines = [f"{MAGIC} {FORMAT_VERSION}",
             "config " + json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=True),
             f"tensors {len(tensors)}"]
    for name, arr in tensors.items():
        if any(ch.isspace() for ch in name):
            raise ContainerError(f"tensor name {name!r} contains whitespace")
        lines.append(" ".join([name, str(arr.ndim), *map(str, arr.shape)]))
    lines.append("end")
    with Path(path).open("wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with Path(path).open("rb") as fh:
        def line() -> str:
            raw = fh.readline()
            if not raw:
                raise ContainerError(f"{path}: truncated header")
            return raw.decode("ascii").rstrip("\n")

        magic = line().split()
        if len(magic) != 2 or magic[0] != MAGIC:
            raise ContainerError(f"{path}: not a capora container")
        if int(magic[1]) != FORMAT_VERSION:
            raise ContainerError(f"{path}: unsupported format version {magic[1]}")
        key, _, payload = line().partition(" ")
        if key != "config":
            raise ContainerError(f"{path}: expected config line")
        config = json.loads(payload)
        key, _, count = line().partition(" ")
        if key != "tensors":
            raise ContainerError(f"{path}: expected tensors line")
        table = []
        for _ in range(int(count)):
            name, ndim, *dims = line().split()
            if len(dims) != int(ndim):
                raise ContainerError(f"{path}: bad shape for tensor {name}")
            table.append((name, tuple(int(d) for d in dims)))
        if line() != "end":
            raise ContainerError(f"{path}: header not terminated")
        tensors = {}
        for name, shape in table:
            n = int(np.prod(shape, dtype=np.int64))
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ContainerError(f"{path}: truncated data for tensor {name}")
            tensors[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
        if fh.read(1):
            raise ContainerError(f"{path}: trailing bytes after tensor data")
    return config, tensors


def save_checkpoint(path: str | Path, params: ModelParams, extra: Mapping | None = None) -> None:
    """Write model parameters; ``extra`` (vocabulary, atom list, ...) rides in the header."""
    config = {"kind": "oracle-lm", "model": params.config.to_json(), **(extra or {})}
    save_container(path, config, {name: params[name] for name in params.names()})


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    config, tensors = load_container(path)
    if config.get("kind") != "oracle-lm":
        raise ContainerError(f"{path}: not a language-model checkpoint (kind={config.get('kind')!r})")
    model_config = ModelConfig.from_json(config["model"])
    return params_from_arrays(model_config, tensors.items()), config
