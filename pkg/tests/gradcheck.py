"""Central finite-difference oracle, independent of the tape machinery."""

from __future__ import annotations

import numpy as np

H = 1e-5


def numeric_grad(f, arr: np.ndarray, h: float = H) -> np.ndarray:
    """d f() / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


ZERO_FLOOR = 1e-7


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 0.0) -> float:
    """Norm-wise relative error.

    Returns zero when both norms are at most ``floor``: a structurally zero
    gradient (a bias feeding batch norm) leaves only rounding noise on both sides.
    """
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom <= floor:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def sampled_numeric_grad(f, arr: np.ndarray, coords: np.ndarray, h: float = H) -> np.ndarray:
    """Central differences at the flat positions ``coords`` only."""
    flat = arr.reshape(-1)
    out = np.zeros(len(coords))
    for k, i in enumerate(coords):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        out[k] = (up - down) / (2 * h)
    return out


class KinkMonitor:
    """Records the inputs of every ReLU/LeakyReLU evaluated while active.

    Central differences are only valid when no perturbation moves an input
    across zero; ``signs`` lets a check compare activation patterns.
    """

    def __init__(self):
        self.inputs: list[np.ndarray] = []

    def __enter__(self):
        import stigpn.numkernel.tensor as tensor_mod
        self._mod = tensor_mod
        self._orig = tensor_mod.activation

        def wrapped(x, kind, *args, **kwargs):
            if kind in ("relu", "leaky_relu"):
                self.inputs.append(np.array(tensor_mod.as_tensor(x).data, copy=True))
            return self._orig(x, kind, *args, **kwargs)

        tensor_mod.activation = wrapped
        return self

    def __exit__(self, *exc):
        self._mod.activation = self._orig

    def margin(self) -> float:
        return min(float(np.abs(a).min()) for a in self.inputs) if self.inputs else float("inf")

    def signs(self) -> list[np.ndarray]:
        return [a > 0 for a in self.inputs]
