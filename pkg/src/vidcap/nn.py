"""Small parameter-holding layers shared by the encoder and decoder.

Each layer exposes named_parameters(prefix) so the full model can be
flattened into a sorted name -> Tensor map for optimization and
checkpointing.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

INIT_STD = 0.02  # normal init range shared by all projections and embeddings


def normal_param(rng: np.random.Generator, shape, std: float = INIT_STD) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


class Linear:
    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int, bias: bool = True):
        self.weight = normal_param(rng, (in_dim, out_dim))
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        if self.bias is not None:
            b = ad.reshape(self.bias, (1,) * (y.ndim - 1) + (y.shape[-1],))
            y = ad.add(y, ad.broadcast_to(b, y.shape))
        return y

    def named_parameters(self, prefix: str):
        yield prefix + ".weight", self.weight
        if self.bias is not None:
            yield prefix + ".bias", self.bias


class LayerNorm:
    def __init__(self, dim: int, eps: float = 1e-12):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)

    def named_parameters(self, prefix: str):
        yield prefix + ".gamma", self.gamma
        yield prefix + ".beta", self.beta


class Embedding:
    def __init__(self, rng: np.random.Generator, count: int, dim: int):
        self.table = normal_param(rng, (count, dim))

    def __call__(self, ids) -> Tensor:
        return ad.embedding(self.table, ids)

    def named_parameters(self, prefix: str):
        yield prefix + ".table", self.table


def collect_parameters(module, prefix: str) -> dict[str, Tensor]:
    return dict(module.named_parameters(prefix))
