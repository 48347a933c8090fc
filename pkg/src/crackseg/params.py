"""Parameter-tree walking and weight initialization.

State lives in nested dataclasses whose leaves are either Tensor (trainable)
or plain ndarray (buffer, e.g. batch-norm running statistics). The walkers
below give every leaf a stable dotted path in declaration order, which the
optimizer, checkpoint format and profiler all share.
"""

import dataclasses
from typing import Iterator

import numpy as np

from .autodiff import Tensor


def iter_state(obj, prefix: str = "") -> Iterator[tuple[str, object, bool]]:
    """Yield (path, leaf, trainable) for every Tensor / ndarray in the tree."""
    if isinstance(obj, Tensor):
        yield prefix, obj, bool(obj.requires_grad)
    elif isinstance(obj, np.ndarray):
        yield prefix, obj, False
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            sub = f"{prefix}.{f.name}" if prefix else f.name
            yield from iter_state(getattr(obj, f.name), sub)
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            sub = f"{prefix}.{i}" if prefix else str(i)
            yield from iter_state(v, sub)
    elif isinstance(obj, dict):
        for k, v in obj.items():
            sub = f"{prefix}.{k}" if prefix else str(k)
            yield from iter_state(v, sub)
    # ints, floats, strings, None: no state


def iter_params(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    for path, leaf, trainable in iter_state(obj, prefix):
        if trainable:
            yield path, leaf


def count_scalars(obj, trainable_only: bool = True) -> int:
    total = 0
    for _, leaf, trainable in iter_state(obj):
        if trainable or not trainable_only:
            data = leaf.data if isinstance(leaf, Tensor) else leaf
            total += data.size
    return total


def zero_grads(obj) -> None:
    for _, p in iter_params(obj):
        p.grad = None


# --------------------------------------------------------------------- init

def conv_weight(rng: np.random.Generator, e: int, c: int, kh: int, kw=None) -> Tensor:
    """Fan-in scaled normal init for a conv kernel [e, c, kh, kw]."""
    kw = kh if kw is None else kw
    std = np.sqrt(2.0 / (c * kh * kw))
    return Tensor(rng.standard_normal((e, c, kh, kw)) * std, requires_grad=True)


def depthwise_weight(rng: np.random.Generator, c: int, kh: int, kw=None) -> Tensor:
    kw = kh if kw is None else kw
    std = np.sqrt(2.0 / (kh * kw))
    return Tensor(rng.standard_normal((c, 1, kh, kw)) * std, requires_grad=True)


def linear_weight(rng: np.random.Generator, d_out: int, d_in: int) -> Tensor:
    std = np.sqrt(2.0 / d_in)
    return Tensor(rng.standard_normal((d_out, d_in)) * std, requires_grad=True)


def zeros_param(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(*shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def const_param(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
