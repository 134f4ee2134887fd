"""Named parameter collections and the checkpoint file format.

Checkpoints are plain UTF-8 text. Values are written with ``float.hex`` so a
save/load round trip is bit-exact. Layout (LF line endings)::

    loadcast-checkpoint 1
    meta <key> <value>
    ...
    param <path> <dim0>[x<dim1>...]
    <hex floats, 8 per line>
    ...
"""

from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np

from ..autodiff import Tensor
from ..errors import CheckpointError

__all__ = ["ModelParams", "uniform_init", "save_checkpoint", "load_checkpoint"]


class ModelParams:
    """Map from parameter path (e.g. ``encoder.0.attn.w_q``) to Tensor.

    Insertion order is the iteration order, which fixes the RNG draw order at
    init time and the layout of checkpoints and optimizer state. The set of
    paths is frozen once the owning model finishes construction.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._frozen = False

    def add(self, path: str, tensor: Tensor) -> Tensor:
        if self._frozen:
            raise ValueError(f"parameter set is frozen; cannot add {path!r}")
        if path in self._tensors:
            raise ValueError(f"duplicate parameter path {path!r}")
        self._tensors[path] = tensor
        return tensor

    def freeze(self) -> "ModelParams":
        self._frozen = True
        return self

    def __getitem__(self, path: str) -> Tensor:
        return self._tensors[path]

    def __contains__(self, path: str) -> bool:
        return path in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def paths(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self):
        return self._tensors.values()

    def subset(self, prefix: str) -> dict[str, Tensor]:
        """Tensors under ``prefix``, keyed by the path remainder."""
        out = {p[len(prefix):]: t for p, t in self._tensors.items() if p.startswith(prefix)}
        if not out:
            raise KeyError(f"no parameters under prefix {prefix!r}")
        return out

    def total_count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {p: t.data.copy() for p, t in self._tensors.items()}

    def load_values(self, values: Mapping[str, np.ndarray]) -> None:
        for path, t in self._tensors.items():
            arr = np.asarray(values[path], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {path!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    """Weight init: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / float(np.sqrt(fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape))


def save_checkpoint(path, params: ModelParams, meta: Mapping[str, str]) -> None:
    lines = ["loadcast-checkpoint 1"]
    for key in meta:
        value = str(meta[key])
        if any(c in key for c in " \n") or "\n" in value:
            raise ValueError(f"meta entry {key!r} contains whitespace/newlines")
        lines.append(f"meta {key} {value}")
    for ppath, tensor in params.items():
        dims = "x".join(str(d) for d in tensor.data.shape) or "scalar"
        lines.append(f"param {ppath} {dims}")
        flat = tensor.data.reshape(-1)
        for start in range(0, flat.size, 8):
            lines.append(" ".join(v.hex() for v in flat[start:start + 8].tolist()))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Read a checkpoint back as (arrays by path, meta). Bit-exact."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "loadcast-checkpoint 1":
        raise CheckpointError(f"{path}: not a loadcast checkpoint (bad header)")

    meta: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if line.startswith("meta "):
            try:
                _, key, value = line.split(" ", 2)
            except ValueError as exc:
                raise CheckpointError(f"{path}:{i + 1}: malformed meta line") from exc
            meta[key] = value
            i += 1
        elif line.startswith("param "):
            try:
                _, ppath, dims = line.split(" ", 2)
            except ValueError as exc:
                raise CheckpointError(f"{path}:{i + 1}: malformed param line") from exc
            shape = () if dims == "scalar" else tuple(int(d) for d in dims.split("x"))
            size = int(np.prod(shape)) if shape else 1
            values: list[float] = []
            i += 1
            while len(values) < size:
                if i >= len(lines):
                    raise CheckpointError(f"{path}: truncated values for {ppath!r}")
                try:
                    values.extend(float.fromhex(tok) for tok in lines[i].split())
                except ValueError as exc:
                    raise CheckpointError(f"{path}:{i + 1}: bad float literal") from exc
                i += 1
            if len(values) != size:
                raise CheckpointError(f"{path}: too many values for {ppath!r}")
            arrays[ppath] = np.array(values, dtype=np.float64).reshape(shape)
        elif not line.strip():
            i += 1
        else:
            raise CheckpointError(f"{path}:{i + 1}: unrecognized line {line[:40]!r}")
    return arrays, meta
