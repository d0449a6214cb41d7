"""Parameter containers and the small layer set the model is assembled from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, batch_norm, linear, relu, take


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Attribute-walking parameter registry, in the usual define-by-attribute style.

    Tensors with ``requires_grad`` are parameters; other tensors are buffers
    (e.g. running statistics).  Child modules and lists of modules are
    traversed in attribute insertion order, so names are deterministic.
    """

    training: bool = True

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_tensors(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_tensors(f"{name}.{i}.")

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {k: v for k, v in self.named_tensors(prefix) if v.requires_grad}

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def modules(self) -> Iterator["Module"]:
        yield self
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_tensors())
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch; missing={missing} unexpected={unexpected}")
        for k, t in own.items():
            if k not in state:
                continue
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {t.shape}")
            t.data[...] = arr


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.bias = uniform_init(rng, (d_out,), d_in) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Feature-wise normalisation over all leading axes.

    Training uses batch statistics and updates running averages with
    ``momentum``; evaluation uses the running averages.
    """

    def __init__(self, d: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)
        self.running_mean = Tensor(np.zeros(d))
        self.running_var = Tensor(np.ones(d))
        self._momentum = momentum
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            out, mu, var = batch_norm(x, self.gamma, self.beta, self._eps)
            n = x.data.size // x.shape[-1]
            unbiased = var * n / (n - 1) if n > 1 else var
            m = self._momentum
            self.running_mean.data[...] = (1 - m) * self.running_mean.data + m * mu
            self.running_var.data[...] = (1 - m) * self.running_var.data + m * unbiased
            return out
        scale = self.gamma.data / np.sqrt(self.running_var.data + self._eps)
        shift = self.beta.data - self.running_mean.data * scale
        return x * scale + shift


class Identity(Module):
    def __call__(self, x: Tensor) -> Tensor:
        return x


class MLP(Module):
    """Linear-[BatchNorm]-ReLU blocks followed by an optional final linear layer."""

    def __init__(self, dims: list[int], rng: np.random.Generator, use_norm: bool = True,
                 final_linear: bool = False):
        n_blocks = len(dims) - 1 - (1 if final_linear else 0)
        self.linears = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]
        self.norms = [BatchNorm(dims[i + 1]) if use_norm else Identity() for i in range(n_blocks)]
        self._n_blocks = n_blocks

    def __call__(self, x: Tensor) -> Tensor:
        for i, lin in enumerate(self.linears):
            x = lin(x)
            if i < self._n_blocks:
                x = relu(self.norms[i](x))
        return x


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator):
        # one active input per lookup, so fan_in is 1
        self.weight = uniform_init(rng, (n, d), 1)

    @property
    def num_embeddings(self) -> int:
        return self.weight.shape[0]

    def __call__(self, ids) -> Tensor:
        return take(self.weight, ids)
