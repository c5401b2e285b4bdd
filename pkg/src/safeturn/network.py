"""Fully connected Q-network in numpy, RMSProp, and versioned checkpoints."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "safeturn-qnet"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint unreadable or incompatible with the requested network."""


class NonFiniteError(FloatingPointError):
    pass


class QNetwork:
    """Leaky-ReLU MLP; ``params`` alternates weight matrices and bias vectors."""

    def __init__(self, sizes, slope: float = 0.01, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        sizes = tuple(int(n) for n in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("need at least input and output sizes, all positive")
        self.sizes = sizes
        self.slope = float(slope)
        shapes = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            shapes += [(n_in, n_out), (n_out,)]
        self.shapes = shapes
        self.dtype = np.dtype(dtype)
        # one flat vector; ``params`` are views into it
        self.theta = np.zeros(sum(int(np.prod(s)) for s in shapes), dtype=self.dtype)
        self.params = self._views(self.theta)
        if rng is not None:
            for W, n_in in zip(self.params[::2], sizes[:-1]):
                W[...] = rng.normal(0.0, np.sqrt(2.0 / n_in), size=W.shape)

    def _views(self, flat: np.ndarray) -> list[np.ndarray]:
        out, i = [], 0
        for s in self.shapes:
            n = int(np.prod(s))
            out.append(flat[i:i + n].reshape(s))
            i += n
        return out

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def copy(self) -> "QNetwork":
        twin = QNetwork(self.sizes, self.slope, dtype=self.dtype)
        twin.theta[...] = self.theta
        return twin

    def load_params_from(self, other: "QNetwork") -> None:
        self.theta[...] = other.theta

    def check_finite(self) -> None:
        if not np.isfinite(self.theta.sum()):
            bad = [i for i, p in enumerate(self.params) if not np.all(np.isfinite(p))]
            raise NonFiniteError(f"parameter tensors {bad} contain non-finite values")

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cache(x)[0]

    def q_values(self, state: np.ndarray) -> np.ndarray:
        """Q-values for one flat state vector (checks parameters first)."""
        self.check_finite()
        return self.forward(np.asarray(state, dtype=self.dtype)[None, :])[0]

    def forward_cache(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        cache = [x]
        h = x
        last = self.n_layers - 1
        for i in range(self.n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < last:
                h = np.maximum(z, self.slope * z) if self.slope <= 1.0 else np.where(z > 0, z, self.slope * z)
                cache.append(z)
                cache.append(h)
            else:
                h = z
        return h, cache

    def backward(self, cache, grad_out: np.ndarray, flat: np.ndarray | None = None) -> list[np.ndarray]:
        """Parameter gradients given dLoss/dQ of shape (batch, n_out).

        Written into ``flat`` (shape of ``theta``) when given; the returned
        list holds views into it.
        """
        flat = np.empty_like(self.theta) if flat is None else flat
        grads = self._views(flat)
        g = grad_out
        for i in range(self.n_layers - 1, -1, -1):
            h_in = cache[0] if i == 0 else cache[2 * i]
            np.matmul(h_in.T, g, out=grads[2 * i])
            g.sum(axis=0, out=grads[2 * i + 1])
            if i > 0:
                g = g @ self.params[2 * i].T
                z = cache[2 * i - 1]
                g = g * np.where(z > 0, 1.0, self.slope).astype(self.dtype)
        return grads

    # -------------------------------------------------------------- checkpoints

    def header(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "sizes": list(self.sizes),
            "activation": "leaky_relu",
            "slope": self.slope,
            "dtype": self.dtype.name,
        }

    def save(self, path: str | Path) -> None:
        arrays = {f"p{i}": p for i, p in enumerate(self.params)}
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(self.header())), **arrays)

    @classmethod
    def load(cls, path: str | Path, expected_sizes=None) -> "QNetwork":
        try:
            with np.load(path, allow_pickle=False) as data:
                header = json.loads(str(data["header"]))
                arrays = [data[f"p{i}"] for i in range(2 * (len(header["sizes"]) - 1))]
        except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path} is not a Q-network checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
        if header.get("activation") != "leaky_relu":
            raise CheckpointError(f"unknown activation {header.get('activation')!r}")
        sizes = tuple(header["sizes"])
        if expected_sizes is not None and sizes != tuple(expected_sizes):
            raise CheckpointError(f"checkpoint layer sizes {sizes} do not match {tuple(expected_sizes)}")
        net = cls(sizes, header["slope"], dtype=header.get("dtype", "float32"))
        for dst, src in zip(net.params, arrays):
            if dst.shape != src.shape:
                raise CheckpointError(f"parameter shape {src.shape} does not match {dst.shape}")
            dst[...] = src
        return net


class RMSProp:
    """avg <- decay*avg + (1-decay)*g^2 ; p <- p - lr*g/sqrt(avg + eps).

    Works on flat vectors (``QNetwork.theta``) or on lists of arrays.
    """

    def __init__(self, params, lr: float = 1e-3, decay: float = 0.95, eps: float = 1e-6):
        self.lr, self.decay, self.eps = lr, decay, eps
        self.flat = isinstance(params, np.ndarray)
        self.avg = np.zeros_like(params) if self.flat else [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        if self.flat:
            self._update(params, grads, self.avg)
        else:
            for p, g, a in zip(params, grads, self.avg):
                self._update(p, g, a)
        self.t += 1

    def _update(self, p, g, a) -> None:
        a *= self.decay
        g2 = g * g
        g2 *= 1.0 - self.decay
        a += g2
        np.add(a, self.eps, out=g2)
        np.sqrt(g2, out=g2)
        np.divide(g, g2, out=g2)
        g2 *= self.lr
        p -= g2
