"""Trainable layers on top of the autodiff engine, plus checkpoint IO.

Weights initialize uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)) from a
caller-supplied seeded generator; biases start at zero. Checkpoints are a
versioned npz map of parameter name -> flat float64 values, so a
save/load round trip is bit-exact.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, matmul, relu, reshape, softmax, transpose
from .errors import FormatError, ShapeError

CHECKPOINT_VERSION = 1


class Linear:
    """Affine map on the last axis: x @ W + b."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Tensor(rng.uniform(-bound, bound, (in_dim, out_dim)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class MLP:
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        if len(dims) < 2:
            raise ShapeError("MLP needs at least input and output dims")
        self.layers = [Linear(dims[i], dims[i + 1], rng)
                       for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = relu(layer(x))
        return self.layers[-1](x)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.parameters(f"{prefix}.{i}"))
        return out


class MultiHeadAttention:
    """Scaled dot-product attention with per-head projections.

    Inputs are (batch, tokens, dim); the model dim must divide evenly by
    the head count. Zero query/key inputs give uniform attention because
    biases start at zero.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ShapeError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def _split(self, x: Tensor, n: int) -> Tensor:
        b = x.shape[0]
        return transpose(reshape(x, (b, n, self.heads, self.head_dim)),
                         (0, 2, 1, 3))

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
            raise ShapeError("attention inputs must be (batch, tokens, dim)")
        if q.shape[-1] != self.dim or k.shape[-1] != self.dim or v.shape[-1] != self.dim:
            raise ShapeError("attention input dim does not match model dim")
        if k.shape[:2] != v.shape[:2] or q.shape[0] != k.shape[0]:
            raise ShapeError("key/value token counts must agree")
        b, n = q.shape[0], q.shape[1]
        m = k.shape[1]
        qh = self._split(self.wq(q), n)
        kh = self._split(self.wk(k), m)
        vh = self._split(self.wv(v), m)
        scores = matmul(qh, transpose(kh, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim))
        attn = softmax(scores)
        mixed = matmul(attn, vh)
        merged = reshape(transpose(mixed, (0, 2, 1, 3)), (b, n, self.dim))
        return self.wo(merged)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, layer in (("wq", self.wq), ("wk", self.wk),
                            ("wv", self.wv), ("wo", self.wo)):
            out.update(layer.parameters(f"{prefix}.{name}"))
        return out


def save_checkpoint(path, params: dict[str, Tensor],
                    meta: dict[str, str] | None = None) -> None:
    arrays = {f"param/{name}": t.data for name, t in params.items()}
    arrays["__version__"] = np.array(CHECKPOINT_VERSION)
    for key, value in (meta or {}).items():
        arrays[f"meta/{key}"] = np.array(str(value))
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with np.load(path, allow_pickle=False) as bundle:
        if "__version__" not in bundle:
            raise FormatError("checkpoint has no version field")
        version = int(bundle["__version__"])
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        params = {k[len("param/"):]: bundle[k] for k in bundle.files
                  if k.startswith("param/")}
        meta = {k[len("meta/"):]: str(bundle[k]) for k in bundle.files
                if k.startswith("meta/")}
    return params, meta


def assign_parameters(params: dict[str, Tensor],
                      values: dict[str, np.ndarray]) -> None:
    """Load checkpoint arrays into live parameter tensors, shape-checked."""
    missing = sorted(set(params) - set(values))
    extra = sorted(set(values) - set(params))
    if missing or extra:
        raise FormatError(
            f"checkpoint mismatch; missing {missing[:3]}, unexpected {extra[:3]}")
    for name, tensor in params.items():
        arr = np.asarray(values[name], dtype=np.float64)
        if arr.shape != tensor.data.shape:
            raise FormatError(
                f"parameter {name}: checkpoint shape {arr.shape} "
                f"!= model shape {tensor.data.shape}")
        tensor.data = arr.copy()
        tensor.grad = None
