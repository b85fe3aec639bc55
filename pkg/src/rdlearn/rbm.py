"""Restricted Boltzmann machine with binary visible and hidden layers.

Energy ``E(x, h) = -b.x - c.h - x.W.h`` and visible free energy
``F(x) = -b.x - sum_m softplus(c_m + sum_i x_i W_im)``.

Functions accept a single configuration (shape ``(Nx,)``) or a batch
(shape ``(B, Nx)``) and return a scalar or a length-``B`` array to match.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np
from scipy.special import logsumexp

SOFTPLUS_CUTOFF = 30.0
MAX_ENUM_VISIBLE = 20

PARAMS_MAGIC = b"RBMPARAM"
PARAMS_VERSION = 1
# magic, version, Nx, Nh; all little-endian
_PARAMS_HEADER = struct.Struct("<8sIII")


class DimensionError(ValueError):
    """Array shapes disagree with the RBM layer sizes."""


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RbmParams:
    """Learnable parameters ``(W, b, c)``; arrays are read-only copies."""

    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        b = _frozen(self.visible_bias)
        c = _frozen(self.hidden_bias)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise DimensionError(f"weights must be a non-empty matrix, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise DimensionError(f"visible_bias shape {b.shape} does not match Nx={w.shape[0]}")
        if c.shape != (w.shape[1],):
            raise DimensionError(f"hidden_bias shape {c.shape} does not match Nh={w.shape[1]}")
        for name, arr in (("weights", w), ("visible_bias", b), ("hidden_bias", c)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "visible_bias", b)
        object.__setattr__(self, "hidden_bias", c)

    @property
    def n_visible(self) -> int:
        return self.weights.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int) -> "RbmParams":
        return cls(np.zeros((n_visible, n_hidden)), np.zeros(n_visible), np.zeros(n_hidden))

    @classmethod
    def random(cls, n_visible: int, n_hidden: int, rng: np.random.Generator, scale: float = 0.01) -> "RbmParams":
        """Small Gaussian weights and zero biases."""
        return cls(rng.normal(0.0, scale, size=(n_visible, n_hidden)), np.zeros(n_visible), np.zeros(n_hidden))

    def as_tuple(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.weights, self.visible_bias, self.hidden_bias

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.visible_bias, self.hidden_bias])

    @classmethod
    def from_flat(cls, vec: np.ndarray, n_visible: int, n_hidden: int) -> "RbmParams":
        nw = n_visible * n_hidden
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (nw + n_visible + n_hidden,):
            raise DimensionError(f"flat vector has length {vec.size}, expected {nw + n_visible + n_hidden}")
        return cls(vec[:nw].reshape(n_visible, n_hidden), vec[nw:nw + n_visible], vec[nw + n_visible:])

    def __eq__(self, other):
        if not isinstance(other, RbmParams):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.as_tuple(), other.as_tuple()))

    __hash__ = None


@dataclass(frozen=True)
class FreeEnergyGrad:
    """Gradient of a scalar with respect to ``(W, b, c)``."""

    d_weights: np.ndarray
    d_visible_bias: np.ndarray
    d_hidden_bias: np.ndarray

    @classmethod
    def zeros_like(cls, params: RbmParams) -> "FreeEnergyGrad":
        return cls(np.zeros_like(params.weights), np.zeros_like(params.visible_bias),
                   np.zeros_like(params.hidden_bias))

    def as_tuple(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.d_weights, self.d_visible_bias, self.d_hidden_bias

    def flat(self) -> np.ndarray:
        return np.concatenate([self.d_weights.ravel(), self.d_visible_bias, self.d_hidden_bias])

    def __add__(self, other: "FreeEnergyGrad") -> "FreeEnergyGrad":
        return FreeEnergyGrad(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def __sub__(self, other: "FreeEnergyGrad") -> "FreeEnergyGrad":
        return FreeEnergyGrad(*(a - b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def __mul__(self, k: float) -> "FreeEnergyGrad":
        return FreeEnergyGrad(*(a * k for a in self.as_tuple()))

    __rmul__ = __mul__

    def __neg__(self) -> "FreeEnergyGrad":
        return self * -1.0

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(a)) for a in self.as_tuple()))


def softplus(a: np.ndarray) -> np.ndarray:
    """``ln(1 + e^a)``, switching to ``a`` above +30 and ``e^a`` below -30."""
    a = np.asarray(a, dtype=np.float64)
    mid = np.clip(a, -SOFTPLUS_CUTOFF, SOFTPLUS_CUTOFF)
    return np.where(a > SOFTPLUS_CUTOFF, a, np.where(a < -SOFTPLUS_CUTOFF, np.exp(mid), np.log1p(np.exp(mid))))


def sigmoid(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _as_batch(x, n: int, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x)
    single = arr.ndim == 1
    arr2 = arr[None, :] if single else arr
    if arr2.ndim != 2 or arr2.shape[1] != n:
        raise DimensionError(f"{what} has shape {arr.shape}, expected (..., {n})")
    return arr2.astype(np.float64, copy=False), single


def _unbatch(v: np.ndarray, single: bool):
    return float(v[0]) if single else v


def hidden_field(params: RbmParams, x) -> np.ndarray:
    """Pre-activations ``c + x.W`` of the hidden units, shape ``(B, Nh)``."""
    xb, _ = _as_batch(x, params.n_visible, "visible configuration")
    return xb @ params.weights + params.hidden_bias


def joint_energy(params: RbmParams, x, h):
    xb, single = _as_batch(x, params.n_visible, "visible configuration")
    hb, single_h = _as_batch(h, params.n_hidden, "hidden configuration")
    if xb.shape[0] != hb.shape[0]:
        raise DimensionError(f"batch sizes differ: {xb.shape[0]} visible vs {hb.shape[0]} hidden")
    e = -(xb @ params.visible_bias) - (hb @ params.hidden_bias) - np.einsum("bi,im,bm->b", xb, params.weights, hb)
    return _unbatch(e, single and single_h)


def free_energy(params: RbmParams, x):
    xb, single = _as_batch(x, params.n_visible, "visible configuration")
    f = -(xb @ params.visible_bias) - softplus(xb @ params.weights + params.hidden_bias).sum(axis=1)
    return _unbatch(f, single)


def hidden_conditional(params: RbmParams, x) -> np.ndarray:
    """``p(h_m = 1 | x)`` for every hidden unit."""
    single = np.ndim(x) == 1
    p = sigmoid(hidden_field(params, x))
    return p[0] if single else p


def visible_conditional(params: RbmParams, h) -> np.ndarray:
    """``p(x_i = 1 | h)`` for every visible unit."""
    hb, single = _as_batch(h, params.n_hidden, "hidden configuration")
    p = sigmoid(hb @ params.weights.T + params.visible_bias)
    return p[0] if single else p


def weighted_free_energy_grad(params: RbmParams, x, weights) -> FreeEnergyGrad:
    """``sum_k weights[k] * dF(x_k)/dtheta`` without materialising per-sample grads."""
    xb, _ = _as_batch(x, params.n_visible, "visible configuration")
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != xb.shape[0]:
        raise DimensionError(f"{w.shape[0]} weights for {xb.shape[0]} configurations")
    s = sigmoid(xb @ params.weights + params.hidden_bias) * w[:, None]
    return FreeEnergyGrad(-(xb.T @ s), -(xb.T @ w), -s.sum(axis=0))


def free_energy_grad(params: RbmParams, x) -> FreeEnergyGrad:
    """Exact ``dF/dtheta`` at one configuration (a batch is summed)."""
    xb, _ = _as_batch(x, params.n_visible, "visible configuration")
    return weighted_free_energy_grad(params, xb, np.ones(xb.shape[0]))


def mean_free_energy_grad(params: RbmParams, x) -> FreeEnergyGrad:
    xb, _ = _as_batch(x, params.n_visible, "visible configuration")
    return weighted_free_energy_grad(params, xb, np.full(xb.shape[0], 1.0 / xb.shape[0]))


def block_gibbs_step(params: RbmParams, x, rng: np.random.Generator) -> np.ndarray:
    """One block Gibbs update ``x -> h -> x'`` for each row of ``x``.

    Both layers are sampled in parallel, hidden first. Uses exactly
    ``B * (Nh + Nx)`` uniforms from ``rng``.
    """
    xb, single = _as_batch(x, params.n_visible, "visible configuration")
    ph = sigmoid(xb @ params.weights + params.hidden_bias)
    h = (rng.random(ph.shape) < ph).astype(np.float64)
    px = sigmoid(h @ params.weights.T + params.visible_bias)
    out = (rng.random(px.shape) < px).astype(np.uint8)
    return out[0] if single else out


def block_gibbs(params: RbmParams, x, steps: int, rng: np.random.Generator) -> np.ndarray:
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    out = np.array(x, dtype=np.uint8, copy=True)
    for _ in range(steps):
        out = block_gibbs_step(params, out, rng)
    return out


def all_configs(n: int) -> np.ndarray:
    """Every ``{0,1}^n`` configuration as rows, index bits big-endian."""
    idx = np.arange(2**n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts) & 1).astype(np.uint8)


def _enumerated_free_energies(params: RbmParams, chunk: int = 1 << 16) -> np.ndarray:
    nx = params.n_visible
    states = all_configs(nx)
    return np.concatenate([free_energy(params, states[i:i + chunk]) for i in range(0, len(states), chunk)])


def exact_log_partition(params: RbmParams) -> float:
    """``ln Z`` by enumerating the visible layer; only for ``Nx <= 20``."""
    nx = params.n_visible
    if nx > MAX_ENUM_VISIBLE:
        raise ValueError(
            f"exact partition function needs 2^{nx} free-energy evaluations; "
            f"enumeration is limited to Nx <= {MAX_ENUM_VISIBLE}"
        )
    return float(logsumexp(-_enumerated_free_energies(params)))


def exact_visible_distribution(params: RbmParams) -> np.ndarray:
    """``P(x; theta)`` over :func:`all_configs` ordering."""
    nx = params.n_visible
    if nx > MAX_ENUM_VISIBLE:
        raise ValueError(f"enumeration is limited to Nx <= {MAX_ENUM_VISIBLE}, got {nx}")
    logp = -_enumerated_free_energies(params)
    return np.exp(logp - logsumexp(logp))


# -- serialization ---------------------------------------------------------

def write_params(params: RbmParams, fh: BinaryIO) -> None:
    fh.write(_PARAMS_HEADER.pack(PARAMS_MAGIC, PARAMS_VERSION, params.n_visible, params.n_hidden))
    for arr in params.as_tuple():
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))


def read_params(fh: BinaryIO) -> RbmParams:
    head = fh.read(_PARAMS_HEADER.size)
    if len(head) != _PARAMS_HEADER.size:
        raise ValueError("truncated RBM parameter header")
    magic, version, nx, nh = _PARAMS_HEADER.unpack(head)
    if magic != PARAMS_MAGIC:
        raise ValueError(f"not an RBM parameter file (magic {magic!r})")
    if version != PARAMS_VERSION:
        raise ValueError(f"unsupported RBM parameter format version {version}")
    n = nx * nh + nx + nh
    body = fh.read(8 * n)
    if len(body) != 8 * n:
        raise ValueError(f"truncated RBM parameter body: {len(body)} of {8 * n} bytes")
    if fh.read(1):
        raise ValueError("trailing bytes after RBM parameter body")
    return RbmParams.from_flat(np.frombuffer(body, dtype="<f8"), nx, nh)


def params_to_bytes(params: RbmParams) -> bytes:
    buf = io.BytesIO()
    write_params(params, buf)
    return buf.getvalue()


def save_params(params: RbmParams, path) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path) -> RbmParams:
    with open(path, "rb") as fh:
        return read_params(fh)
