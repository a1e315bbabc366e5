"""Checkpoint files: an ASCII section header per array followed by raw
little-endian float64 bytes.

Layout::

    HYPERRNA-CKPT v1
    meta <json>
    param <name> <ndim> <dims...>
    <bytes>
    ...
    adam <json with t, lr, beta1, beta2, eps>
    adam_m <name> <ndim> <dims...>
    <bytes>
    adam_v <name> ...
    end
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optim import AdamState
from .tensor import Tensor

MAGIC = "HYPERRNA-CKPT v1"


@dataclass
class ModelCheckpoint:
    params: dict[str, Tensor]
    adam: AdamState
    meta: dict = field(default_factory=dict)


def _write_array(buf, tag: str, name: str, arr: np.ndarray) -> None:
    dims = " ".join(str(d) for d in arr.shape)
    buf.write(f"{tag} {name} {arr.ndim} {dims}".rstrip().encode() + b"\n")
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    buf.write(b"\n")


def dumps(ckpt: ModelCheckpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC.encode() + b"\n")
    buf.write(b"meta " + json.dumps(ckpt.meta, sort_keys=True).encode() + b"\n")
    for name in sorted(ckpt.params):
        _write_array(buf, "param", name, ckpt.params[name].values)
    a = ckpt.adam
    hyper = {"t": a.t, "lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps}
    buf.write(b"adam " + json.dumps(hyper, sort_keys=True).encode() + b"\n")
    for name in sorted(a.m):
        _write_array(buf, "adam_m", name, a.m[name])
        _write_array(buf, "adam_v", name, a.v[name])
    buf.write(b"end\n")
    return buf.getvalue()


def loads(data: bytes) -> ModelCheckpoint:
    buf = io.BytesIO(data)
    if buf.readline().decode().strip() != MAGIC:
        raise ValueError(f"not a checkpoint (expected header {MAGIC!r})")
    params: dict[str, Tensor] = {}
    adam = AdamState()
    meta: dict = {}
    while True:
        line = buf.readline()
        if not line:
            raise ValueError("truncated checkpoint (missing 'end')")
        head = line.decode().rstrip("\n")
        if head == "end":
            break
        tag, _, rest = head.partition(" ")
        if tag == "meta":
            meta = json.loads(rest)
            continue
        if tag == "adam":
            h = json.loads(rest)
            adam.t, adam.lr, adam.beta1, adam.beta2, adam.eps = h["t"], h["lr"], h["beta1"], h["beta2"], h["eps"]
            continue
        parts = rest.split()
        name, ndim = parts[0], int(parts[1])
        shape = tuple(int(d) for d in parts[2 : 2 + ndim])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf.read(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        buf.read(1)
        if tag == "param":
            params[name] = Tensor(arr.copy(), requires_grad=True, name=name)
        elif tag == "adam_m":
            adam.m[name] = arr.copy()
        elif tag == "adam_v":
            adam.v[name] = arr.copy()
        else:
            raise ValueError(f"unknown checkpoint section {tag!r}")
    return ModelCheckpoint(params, adam, meta)


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, ckpt: ModelCheckpoint) -> None:
    atomic_write(path, dumps(ckpt))


def load(path) -> ModelCheckpoint:
    return loads(Path(path).read_bytes())
