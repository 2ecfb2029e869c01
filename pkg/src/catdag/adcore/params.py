"""Flat parameter storage, AdamW, and the binary checkpoint format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import ShapeError
from .tensor import Parameter


class ParamStore:
    """Ordered named parameters backed by one contiguous float64 buffer.

    Each :class:`Parameter` is a view into ``flat`` (and its grad into
    ``flat_grad``), so optimisers can update everything in one vector op.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        total = sum(a.size for a in arrays.values())
        self.flat = np.zeros(total)
        self.flat_grad = np.zeros(total)
        self.params: dict[str, Parameter] = {}
        start = 0
        for name, a in arrays.items():
            stop = start + a.size
            self.flat[start:stop] = a.ravel()
            view = self.flat[start:stop].reshape(a.shape)
            gview = self.flat_grad[start:stop].reshape(a.shape)
            self.params[name] = Parameter(view, gview, name=name)
            start = stop

    def __getitem__(self, name) -> Parameter:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        self.flat_grad[...] = 0.0

    @property
    def size(self) -> int:
        return self.flat.size

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load(self, arrays: Mapping[str, np.ndarray]):
        for name, p in self.params.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != p.data.shape:
                raise ShapeError(f"{name}: checkpoint shape {a.shape} vs model {p.data.shape}")
            p.data[...] = a


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamWState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adamw_step(params: np.ndarray, grads: np.ndarray, state: AdamWState, lr: float,
               betas=(0.9, 0.999), weight_decay: float = 0.01, eps: float = 1e-8) -> np.ndarray:
    """One decoupled-weight-decay Adam update, in place on ``params``."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError(f"adamw_step: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    b1, b2 = betas
    state.step += 1
    t = state.step
    if weight_decay:
        params *= 1.0 - lr * weight_decay
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * (grads * grads)
    mhat = state.m / (1.0 - b1 ** t)
    vhat = state.v / (1.0 - b2 ** t)
    params -= lr * mhat / (np.sqrt(vhat) + eps)
    return params


@dataclass
class AdamW:
    store: ParamStore
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    eps: float = 1e-8
    state: AdamWState = field(init=False)

    def __post_init__(self):
        self.state = AdamWState.zeros(self.store.size)

    def step(self, lr: float):
        adamw_step(self.store.flat, self.store.flat_grad, self.state, lr,
                   self.betas, self.weight_decay, self.eps)


# -- checkpoint format ----------------------------------------------------
# magic, uint32 count, then per tensor:
#   uint16 name length, utf-8 name, uint8 ndim, uint64[ndim] shape, float64 LE data

MAGIC = b"CATDAG01"


def save_tensors(path, tensors: Mapping[str, np.ndarray]):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    pos = 8
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    return out
