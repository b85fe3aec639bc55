"""Replica-exchange Monte Carlo for building training and validation sets.

One Monte Carlo step (MCS) is a sequential sweep of ``Nx`` single-bit
Metropolis proposals on every replica.  Every ``swap_interval_mcs`` steps,
adjacent replica pairs attempt to exchange configurations, alternating
between even pairs ``(0,1), (2,3), ...`` and odd pairs ``(1,2), (3,4), ...``.
Every ``record_interval_mcs`` steps the configuration at the largest beta
is recorded.

Random streams: replica ``r`` draws its sweep uniforms from its own
generator and swaps use a separate one, all derived from ``PtConfig.seed``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .data import Dataset
from .rng import seed_sequence, spawn
from .targets import TargetModel, raw_energy

log = logging.getLogger(__name__)

# uniforms buffered per kernel call (replicas * Nx * MCS)
_CHUNK_FLOATS = 1 << 21


@dataclass(frozen=True)
class TemperatureLadder:
    betas: np.ndarray

    def __post_init__(self):
        b = np.array(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("a ladder needs at least two inverse temperatures")
        if np.any(b <= 0) or np.any(np.diff(b) <= 0):
            raise ValueError("inverse temperatures must be positive and strictly increasing")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)

    def __len__(self) -> int:
        return self.betas.size


def build_ladder(n: int, beta_min: float, beta_max: float) -> TemperatureLadder:
    """Geometric ladder with exact endpoints and constant ratio between neighbours."""
    if n < 2:
        raise ValueError(f"ladder needs n >= 2 replicas, got {n}")
    if not (0 < beta_min < beta_max) or not np.isfinite(beta_max):
        raise ValueError(f"need 0 < beta_min < beta_max, got {beta_min}, {beta_max}")
    i = np.arange(n)
    betas = beta_min * np.exp(i / (n - 1) * np.log(beta_max / beta_min))
    betas[0], betas[-1] = beta_min, beta_max
    return TemperatureLadder(betas)


@dataclass(frozen=True)
class PtConfig:
    n_replicas: int
    beta_min: float
    beta_max: float
    total_mcs: int = 1_000_000
    swap_interval_mcs: int = 1
    record_interval_mcs: int = 10
    burn_in_records: int = 10_000
    train_size: int = 16_384
    val_size: int = 1_024
    seed: int = 0

    @property
    def n_records(self) -> int:
        return self.total_mcs // self.record_interval_mcs

    def validate(self) -> None:
        if self.n_replicas < 2:
            raise ValueError(f"n_replicas must be >= 2, got {self.n_replicas}")
        for name in ("total_mcs", "swap_interval_mcs", "record_interval_mcs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.burn_in_records < 0 or self.train_size < 1 or self.val_size < 1:
            raise ValueError("burn_in_records must be >= 0 and train/val sizes >= 1")
        avail = self.n_records - self.burn_in_records
        if self.train_size + self.val_size > avail:
            raise ValueError(
                f"infeasible sizes: {self.train_size} train + {self.val_size} val exceed the "
                f"{avail} records left after burn-in ({self.n_records} recorded, "
                f"{self.burn_in_records} discarded)"
            )

    def ladder(self) -> TemperatureLadder:
        return build_ladder(self.n_replicas, self.beta_min, self.beta_max)

    def to_dict(self) -> dict:
        return asdict(self)


def metropolis_sweep(model: TargetModel, x, rng: np.random.Generator, beta: float | None = None,
                     return_acceptance: bool = False):
    """One MCS of sequential single-flip Metropolis at ``beta`` (default ``model.beta``).

    Acceptance is ``min(1, exp(-beta * delta_raw))``.  One uniform is drawn
    per site whether or not it is needed.
    """
    beta = model.beta if beta is None else float(beta)
    out = np.array(x, dtype=np.uint8, copy=True)
    if out.shape != (model.n,):
        raise ValueError(f"configuration has shape {out.shape}, expected ({model.n},)")
    q = model.compiled
    u = rng.random(model.n)
    _, acc = _kernels.sweep(out, beta, 0.0, u, q.linear, q.indptr, q.indices, q.data)
    if return_acceptance:
        return out, acc / model.n
    return out


def swap_attempt(states: np.ndarray, energies: np.ndarray, betas, i: int, j: int,
                 rng: np.random.Generator) -> bool:
    """Try exchanging the configurations of adjacent replicas ``i`` and ``j`` in place.

    ``energies`` are raw (unscaled) energies; acceptance is
    ``min(1, exp((beta_i - beta_j) * (E_i - E_j)))``.
    """
    if abs(i - j) != 1:
        raise ValueError(f"replicas {i} and {j} are not adjacent")
    arg = (betas[i] - betas[j]) * (energies[i] - energies[j])
    u = rng.random()
    if arg >= 0 or u < np.exp(arg):
        states[[i, j]] = states[[j, i]]
        energies[[i, j]] = energies[[j, i]]
        return True
    return False


@dataclass
class TemperingRun:
    """Raw output of :func:`run_tempering`."""

    records: np.ndarray
    ladder: TemperatureLadder
    swap_tries: np.ndarray
    swap_accepts: np.ndarray
    final_states: np.ndarray

    @property
    def swap_rates(self) -> np.ndarray:
        return self.swap_accepts / np.maximum(self.swap_tries, 1)


def run_tempering(model: TargetModel, cfg: PtConfig) -> TemperingRun:
    """Run the exchange simulation and return every recorded target-replica state.

    ``model.beta`` is ignored here; the ladder comes from ``cfg``.
    """
    ladder = cfg.ladder()
    n_rep, n = len(ladder), model.n
    seq = seed_sequence(cfg.seed, "tempering")
    init_rng, swap_rng = spawn(seq, 2)
    replica_rngs = spawn(seed_sequence(cfg.seed, "tempering", "replicas"), n_rep)

    states = init_rng.integers(0, 2, size=(n_rep, n), dtype=np.uint8)
    energies = np.asarray(raw_energy(model, states), dtype=np.float64)
    q = model.compiled
    records = np.zeros((cfg.n_records, n), dtype=np.uint8)
    tries = np.zeros(n_rep - 1, dtype=np.int64)
    accepts = np.zeros(n_rep - 1, dtype=np.int64)
    chunk = max(1, _CHUNK_FLOATS // (n_rep * n))
    done, swap_counter, n_rec = 0, 0, 0
    while done < cfg.total_mcs:
        m = min(chunk, cfg.total_mcs - done)
        sweep_u = np.stack([g.random((m, n)) for g in replica_rngs], axis=1)
        swap_u = swap_rng.random((m, max(n_rep - 1, 1)))
        swap_counter, n_rec = _kernels.run_tempering(
            states, energies, ladder.betas, sweep_u, swap_u, swap_counter, done,
            cfg.swap_interval_mcs, cfg.record_interval_mcs, records, n_rec,
            q.linear, q.indptr, q.indices, q.data, tries, accepts)
        done += m
    log.debug("tempering done: %d records, swap rates %s", n_rec, accepts / np.maximum(tries, 1))
    return TemperingRun(records, ladder, tries, accepts, states.copy())


def generate_dataset(model: TargetModel, cfg: PtConfig) -> tuple[Dataset, Dataset]:
    """Training records ``[burn_in, burn_in + train_size)`` and the last ``val_size`` records."""
    cfg.validate()
    if not np.isclose(cfg.beta_max, model.beta):
        log.warning("ladder beta_max=%g differs from model beta=%g", cfg.beta_max, model.beta)
    run = run_tempering(model, cfg)
    meta = {
        "source": "parallel_tempering",
        "model_hash": model.content_hash(),
        "model_kind": model.kind,
        "pt_config": cfg.to_dict(),
        "ladder": [float(b) for b in run.ladder.betas],
        "swap_rates": [round(float(r), 6) for r in run.swap_rates],
    }
    b = cfg.burn_in_records
    train = Dataset(run.records[b:b + cfg.train_size], dict(meta, split="train"))
    val = Dataset(run.records[cfg.n_records - cfg.val_size:], dict(meta, split="val"))
    return train, val
