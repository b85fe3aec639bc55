"""Numba kernels for single-flip Metropolis dynamics and replica exchange.

Random numbers are drawn outside and passed in, so results depend only on
the caller's generators and not on numba's internal RNG.
"""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _local_field(linear, indptr, indices, data, x, k):
    f = linear[k]
    for p in range(indptr[k], indptr[k + 1]):
        f += data[p] * x[indices[p]]
    return f


@numba.njit(cache=True)
def sweep(x, beta, energy, uniforms, linear, indptr, indices, data):
    """Sequential-site Metropolis sweep in place; returns (energy, accepted)."""
    n = x.shape[0]
    accepted = 0
    for k in range(n):
        delta = (1.0 - 2.0 * x[k]) * _local_field(linear, indptr, indices, data, x, k)
        if delta <= 0.0 or uniforms[k] < np.exp(-beta * delta):
            x[k] = 1 - x[k]
            energy += delta
            accepted += 1
    return energy, accepted


@numba.njit(cache=True)
def run_tempering(states, energies, betas, sweep_u, swap_u, swap_counter, mcs_offset,
                  swap_interval, record_interval, records, n_recorded,
                  linear, indptr, indices, data, swap_tries, swap_accepts):
    """Advance every replica ``sweep_u.shape[0]`` MCS.

    ``states[r]`` is the configuration currently at ``betas[r]``; swaps move
    configurations between temperatures, so ``states[-1]`` is always at the
    largest beta.  Returns the updated swap counter and record count.
    """
    n_mcs, n_rep, _ = sweep_u.shape
    for t in range(n_mcs):
        for r in range(n_rep):
            e, _ = sweep(states[r], betas[r], energies[r], sweep_u[t, r], linear, indptr, indices, data)
            energies[r] = e
        step = mcs_offset + t + 1
        if step % swap_interval == 0:
            start = swap_counter % 2
            for a in range(start, n_rep - 1, 2):
                b = a + 1
                arg = (betas[a] - betas[b]) * (energies[a] - energies[b])
                swap_tries[a] += 1
                if arg >= 0.0 or swap_u[t, a] < np.exp(arg):
                    for k in range(states.shape[1]):
                        tmp = states[a, k]
                        states[a, k] = states[b, k]
                        states[b, k] = tmp
                    tmp_e = energies[a]
                    energies[a] = energies[b]
                    energies[b] = tmp_e
                    swap_accepts[a] += 1
            swap_counter += 1
        if step % record_interval == 0:
            if n_recorded < records.shape[0]:
                records[n_recorded, :] = states[n_rep - 1, :]
            n_recorded += 1
    return swap_counter, n_recorded
