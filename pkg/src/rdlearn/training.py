"""Learning objectives, Adam, and the minibatch training loop.

All estimators differentiate only the explicit free-energy terms; sampled
self-sample states and centring constants are treated as constants.
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .evaluation import r_theta
from .rbm import (
    FreeEnergyGrad,
    RbmParams,
    block_gibbs,
    free_energy,
    mean_free_energy_grad,
    weighted_free_energy_grad,
)
from .rng import stream
from .targets import TargetModel, effective_energy

log = logging.getLogger(__name__)


class ObjectiveKind(str, enum.Enum):
    FORWARD_KLD = "fwdkld"
    REVERSE_KLD = "revkld"
    SUMMATION_KLD = "sumkld"
    RATIO_DIVERGENCE = "rd"

    @classmethod
    def parse(cls, s: str) -> "ObjectiveKind":
        aliases = {"forward": "fwdkld", "reverse": "revkld", "summation": "sumkld", "ratio": "rd"}
        key = aliases.get(s.lower(), s.lower())
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown objective {s!r}; choose from {[k.value for k in cls]}") from None


@dataclass(frozen=True)
class Objective:
    kind: ObjectiveKind
    k_gibbs: int = 1

    def __post_init__(self):
        if self.k_gibbs < 1:
            raise ValueError(f"k_gibbs must be >= 1, got {self.k_gibbs}")


def _check_batches(data_batch, chains_batch):
    if len(data_batch) == 0 or len(chains_batch) == 0:
        raise ValueError("empty batch")
    if len(data_batch) != len(chains_batch):
        raise ValueError(f"batch size mismatch: {len(data_batch)} data vs {len(chains_batch)} chains")


# -- gradient estimators ----------------------------------------------------

def grad_forward_kld(params: RbmParams, data_batch, chains_batch) -> FreeEnergyGrad:
    """PCD estimate of ``dKL(data || model)/dtheta``: mean dF over data minus mean dF over chains."""
    _check_batches(data_batch, chains_batch)
    return mean_free_energy_grad(params, data_batch) - mean_free_energy_grad(params, chains_batch)


def forward_kld_surrogate(params: RbmParams, data_batch, chains_batch) -> float:
    """Contrastive free-energy gap whose gradient is :func:`grad_forward_kld`."""
    return float(np.mean(free_energy(params, data_batch)) - np.mean(free_energy(params, chains_batch)))


def loss_and_grad_reverse_kld(params: RbmParams, model: TargetModel, chains_batch) -> tuple[float, FreeEnergyGrad]:
    """Centred squared residual ``1/2 E[(E_target - F - C)^2]`` over self-samples.

    ``C`` is the batch mean of ``E_target - F`` and is held constant in the
    gradient ``-mean[(E_target - F - C) dF]``.
    """
    if len(chains_batch) == 0:
        raise ValueError("empty batch")
    resid = effective_energy(model, chains_batch) - free_energy(params, chains_batch)
    resid = np.atleast_1d(resid)
    centred = resid - resid.mean()
    B = centred.size
    loss = 0.5 * float(np.mean(centred**2))
    return loss, weighted_free_energy_grad(params, chains_batch, -centred / B)


def rd_residuals(params: RbmParams, model: TargetModel, batch) -> np.ndarray:
    """``F(y) - E_target(y)`` per configuration."""
    return np.atleast_1d(free_energy(params, batch) - effective_energy(model, batch))


def grad_ratio_divergence(params: RbmParams, model: TargetModel, data_batch, chains_batch) -> tuple[float, FreeEnergyGrad]:
    """Ratio-divergence batch loss over all ``B^2`` (data, chain) pairs, in O(B).

    With ``r = F - E_target``, the pair term is ``(r(x') - r(x))^2`` and its
    mean is ``mean_D r^2 + mean_S r^2 - 2 mean_D r mean_S r``.
    """
    _check_batches(data_batch, chains_batch)
    rd = rd_residuals(params, model, data_batch)
    rs = rd_residuals(params, model, chains_batch)
    md, ms = rd.mean(), rs.mean()
    loss = float(np.mean(rd**2) + np.mean(rs**2) - 2.0 * md * ms)
    g = (weighted_free_energy_grad(params, data_batch, 2.0 * (rd - ms) / rd.size)
         + weighted_free_energy_grad(params, chains_batch, 2.0 * (rs - md) / rs.size))
    return loss, g


def grad_summation_kld(params: RbmParams, model: TargetModel, data_batch, chains_batch) -> FreeEnergyGrad:
    return grad_forward_kld(params, data_batch, chains_batch) + loss_and_grad_reverse_kld(params, model, chains_batch)[1]


def objective_loss_and_grad(kind: ObjectiveKind, params: RbmParams, model: TargetModel,
                            data_batch, chains_batch) -> tuple[float, FreeEnergyGrad]:
    if kind is ObjectiveKind.FORWARD_KLD:
        return forward_kld_surrogate(params, data_batch, chains_batch), grad_forward_kld(params, data_batch, chains_batch)
    if kind is ObjectiveKind.REVERSE_KLD:
        return loss_and_grad_reverse_kld(params, model, chains_batch)
    if kind is ObjectiveKind.SUMMATION_KLD:
        _check_batches(data_batch, chains_batch)
        rev_loss, rev_g = loss_and_grad_reverse_kld(params, model, chains_batch)
        fwd = forward_kld_surrogate(params, data_batch, chains_batch)
        return fwd + rev_loss, grad_forward_kld(params, data_batch, chains_batch) + rev_g
    if kind is ObjectiveKind.RATIO_DIVERGENCE:
        return grad_ratio_divergence(params, model, data_batch, chains_batch)
    raise ValueError(f"unhandled objective {kind}")


# -- Adam -------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    first_moment: tuple
    second_moment: tuple
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: RbmParams, **hyper) -> "AdamState":
        zeros = tuple(np.zeros_like(a) for a in params.as_tuple())
        return cls(zeros, tuple(np.zeros_like(a) for a in params.as_tuple()), 0, **hyper)


def adam_step(params: RbmParams, grad: FreeEnergyGrad, state: AdamState) -> tuple[RbmParams, AdamState]:
    """Bias-corrected Adam update; returns new parameters and state."""
    t = state.step_count + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.as_tuple(), grad.as_tuple(), state.first_moment, state.second_moment):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return RbmParams(*new_p), replace(state, first_moment=tuple(new_m), second_moment=tuple(new_v), step_count=t)


# -- training loop ------------------------------------------------------------

@dataclass
class PersistentChains:
    """Self-sample set advanced by block Gibbs and kept across updates."""

    states: np.ndarray

    @classmethod
    def random(cls, count: int, n_visible: int, rng: np.random.Generator) -> "PersistentChains":
        return cls(rng.integers(0, 2, size=(count, n_visible), dtype=np.uint8))

    def advance(self, params: RbmParams, sl: slice, steps: int, rng: np.random.Generator) -> np.ndarray:
        self.states[sl] = block_gibbs(params, self.states[sl], steps, rng)
        return self.states[sl]


@dataclass(frozen=True)
class TrainConfig:
    objective: Objective = Objective(ObjectiveKind.RATIO_DIVERGENCE)
    epochs: int = 1000
    minibatch: int = 128
    seed: int = 0
    eval_interval: int = 10
    n_hidden: int | None = None
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_scale: float = 0.01
    reset_chains: bool = False
    checkpoint_interval: int = 0


@dataclass
class MetricsRecord:
    epoch: int
    objective_value: float
    r_theta: float
    wall_clock: float


@dataclass
class TrainResult:
    params: RbmParams
    initial_params: RbmParams
    metrics: list[MetricsRecord] = field(default_factory=list)
    initial_r_theta: float = float("nan")
    checkpoints: dict[int, RbmParams] = field(default_factory=dict)


def train(dataset: Dataset, model: TargetModel, cfg: TrainConfig, val: Dataset | None = None,
          callback=None) -> TrainResult:
    """Minibatch training of an RBM on ``dataset`` toward ``model``.

    Each epoch shuffles the data into ``len(dataset) // minibatch`` batches.
    Batch ``k`` pairs with the fixed chain slice ``k`` of a self-sample set as
    large as the dataset; that slice is advanced ``k_gibbs`` block Gibbs
    steps under the current parameters before the gradient is taken.
    Metrics (mean batch objective over the epoch, R on ``val``) are emitted
    every ``eval_interval`` epochs; ``callback(record)`` is called for each.
    """
    data = dataset.samples
    M, nx = data.shape
    if M == 0:
        raise ValueError("empty training set")
    if nx != model.n:
        raise ValueError(f"dataset has Nx={nx} but the target model has {model.n}")
    if not 1 <= cfg.minibatch <= M:
        raise ValueError(f"minibatch {cfg.minibatch} must be in [1, {M}]")
    if cfg.epochs < 0 or cfg.eval_interval < 1:
        raise ValueError("epochs must be >= 0 and eval_interval >= 1")
    nh = cfg.n_hidden or nx
    val_samples = (val if val is not None else dataset).samples

    params = RbmParams.random(nx, nh, stream(cfg.seed, "train", "init"), cfg.init_scale)
    initial = params
    chain_rng = stream(cfg.seed, "train", "chains")
    shuffle_rng = stream(cfg.seed, "train", "shuffle")
    gibbs_rng = stream(cfg.seed, "train", "gibbs")
    chains = PersistentChains.random(M, nx, chain_rng)
    adam = AdamState.init(params, lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    kind, k = cfg.objective.kind, cfg.objective.k_gibbs
    B = cfg.minibatch
    n_batches = M // B

    result = TrainResult(params, initial, initial_r_theta=r_theta(params, model, val_samples))
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        if cfg.reset_chains:
            chains = PersistentChains.random(M, nx, chain_rng)
        order = shuffle_rng.permutation(M)
        losses = np.empty(n_batches)
        for b in range(n_batches):
            sl = slice(b * B, (b + 1) * B)
            batch = data[order[sl]]
            selfs = chains.advance(params, sl, k, gibbs_rng)
            losses[b], g = objective_loss_and_grad(kind, params, model, batch, selfs)
            params, adam = adam_step(params, g, adam)
        if cfg.checkpoint_interval and epoch % cfg.checkpoint_interval == 0:
            result.checkpoints[epoch] = params
        if epoch % cfg.eval_interval == 0:
            rec = MetricsRecord(epoch, float(losses.mean()), r_theta(params, model, val_samples),
                                time.perf_counter() - t0)
            result.metrics.append(rec)
            log.debug("epoch %d objective %.6g R %.6g", rec.epoch, rec.objective_value, rec.r_theta)
            if callback is not None:
                callback(rec)
    result.params = params
    return result


def generate_samples(params: RbmParams, init: Dataset, steps: int, rng: np.random.Generator,
                     count: int | None = None) -> Dataset:
    """Advance each initial state ``steps`` block Gibbs steps.

    ``count`` (default: all) takes the first ``count`` initial states, cycling
    through ``init`` if more are requested than it holds.
    """
    if len(init) == 0:
        raise ValueError("empty initial dataset")
    if init.n_visible != params.n_visible:
        raise ValueError(f"initial states have Nx={init.n_visible}, model has {params.n_visible}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    count = len(init) if count is None else count
    x0 = init.samples[np.arange(count) % len(init)]
    out = block_gibbs(params, x0, steps, rng)
    meta = dict(init.meta, source="block_gibbs", steps=steps, split="generated")
    return Dataset(out, meta)
