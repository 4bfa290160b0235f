"""Monte Carlo log-posterior and its analytic gradient.

The likelihood of an observation y_i is a mixture over simulated samples,
(1/S) sum_s N(y_i | x_i^(s), Omega), evaluated in log space with
log-sum-exp.  Its gradient w.r.t. the inducing values is the
likelihood-weighted (softmax) average of the per-sample chain rules
through the path sensitivities.  The noise variances are optimised on a
log scale; their gradient is the standard Gaussian derivative.  Adding
the Gaussian log-prior of the inducing values gives the MAP objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InputError
from .field import (
    FieldCache,
    InducingModel,
    _checked,
    build_cache,
    log_prior,
    log_prior_grad,
)
from .sensitivity import PathSensitivities, simulate_bundle_with_sensitivities
from .sim import PathBundle, SimConfig, TimeGrid, build_grid, child_seed, sample_increments


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One observed time series: strictly increasing times, (N, D) values."""

    times: np.ndarray
    obs: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        y = np.asarray(self.obs, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] != t.size:
            raise InputError(f"obs must be (len(times), D), got {y.shape}")
        if t.size < 1:
            raise InputError("trajectory needs at least one observation")
        if np.any(np.diff(t) <= 0):
            raise InputError("times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise InputError("times and observations must be finite")
        t.setflags(write=False)
        y = np.ascontiguousarray(y)
        y.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "obs", y)

    @property
    def n_obs(self) -> int:
        return self.times.size

    @property
    def dim(self) -> int:
        return self.obs.shape[1]


@dataclass(frozen=True, eq=False)
class ObjectiveValue:
    """Log-posterior with gradients w.r.t. u_f, u_sigma and log noise vars."""

    log_posterior: float
    grad_u_f: np.ndarray
    grad_u_s: np.ndarray
    grad_log_noise: np.ndarray
    per_obs_loglik: np.ndarray

    def packed_grad(self) -> np.ndarray:
        return np.concatenate([self.grad_u_f, self.grad_u_s, self.grad_log_noise])


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _check_alignment(trajs, m, bundles):
    if len(trajs) != len(bundles):
        raise InputError("need one path bundle per trajectory")
    for tr, b in zip(trajs, bundles):
        if tr.dim != m.D:
            raise InputError("trajectory dimension does not match the model")
        if b.grid.n_obs != tr.n_obs:
            raise InputError("bundle grid does not cover the trajectory's observations")
        if b.paths.shape[2] != m.D:
            raise InputError("bundle dimension does not match the model")


def _obs_logliks(y: np.ndarray, states: np.ndarray, noise_vars: np.ndarray):
    """Per-sample and mixture log-likelihoods of one trajectory.

    y (N, D); states (S, N, D).  Returns (per_obs (N,), logp (S, N),
    weights (S, N)) with weights the softmax over samples.
    """
    res = y[None, :, :] - states
    logp = -0.5 * np.sum(
        np.log(2.0 * np.pi * noise_vars) + res**2 / noise_vars, axis=-1
    )
    lse = logsumexp(logp, axis=0)
    per_obs = lse - np.log(states.shape[0])
    w = np.exp(logp - lse)
    return per_obs, logp, w


def mc_loglik(trajs, m: InducingModel, bundles) -> float:
    """Monte Carlo log-likelihood summed over observations and trajectories."""
    trajs = _as_list(trajs)
    bundles = _as_list(bundles)
    _check_alignment(trajs, m, bundles)
    total = 0.0
    for tr, b in zip(trajs, bundles):
        states = b.paths[:, b.grid.obs_indices, :]
        per_obs, _, _ = _obs_logliks(tr.obs, states, m.noise_vars)
        total += float(per_obs.sum())
    return total


def mc_loglik_grad(trajs, m: InducingModel, bundles, sens,
                   cache: FieldCache | None = None) -> ObjectiveValue:
    """Log-posterior (likelihood + prior) and its analytic gradients.

    ``sens`` holds one :class:`PathSensitivities` per trajectory, with
    sample-major arrays as produced by the bundle simulator.
    """
    trajs = _as_list(trajs)
    bundles = _as_list(bundles)
    sens = _as_list(sens)
    _check_alignment(trajs, m, bundles)
    if len(sens) != len(trajs):
        raise InputError("need one sensitivity record per trajectory")
    if cache is None:
        cache = build_cache(m)
    _checked(m, cache)

    nv = m.noise_vars
    gf = np.zeros(m.M * m.D)
    gs = np.zeros(m.M)
    gth = np.zeros(m.D)
    per_obs_all = []
    total = 0.0
    for tr, b, sn in zip(trajs, bundles, sens):
        states = b.paths[:, b.grid.obs_indices, :]
        per_obs, _, w = _obs_logliks(tr.obs, states, nv)
        total += float(per_obs.sum())
        per_obs_all.append(per_obs)
        res = tr.obs[None, :, :] - states          # (S, N, D)
        resw = res / nv
        gf += np.einsum("sn,snd,sndq->q", w, resw, sn.dxdu_f, optimize=True)
        gs += np.einsum("sn,snd,sndq->q", w, resw, sn.dxdu_s, optimize=True)
        gth += 0.5 * np.einsum("sn,snd->d", w, res * resw - 1.0)

    pg_f, pg_s = log_prior_grad(m, cache)
    return ObjectiveValue(
        log_posterior=total + log_prior(m, cache),
        grad_u_f=gf + pg_f,
        grad_u_s=gs + pg_s,
        grad_log_noise=gth,
        per_obs_loglik=np.concatenate(per_obs_all),
    )


def make_grids(trajs, resolution_factor: int) -> list[TimeGrid]:
    return [build_grid(tr.times, resolution_factor) for tr in _as_list(trajs)]


def draw_increments(trajs, grids, m: InducingModel, n_samples: int, seed) -> list[np.ndarray]:
    """Per-trajectory Brownian increments from trajectory-keyed substreams."""
    return [
        sample_increments(g, n_samples, m.D, child_seed(seed, j))
        for j, g in enumerate(grids)
    ]


def _grid_groups(grids):
    """Indices of trajectories sharing an identical simulation grid, so their
    samples can propagate through the field in one batch."""
    groups = {}
    for j, g in enumerate(grids):
        sig = (g.t0, g.dt, g.n_steps, tuple(g.obs_indices.tolist()))
        groups.setdefault(sig, []).append(j)
    return list(groups.values())


def evaluate_with_increments(trajs, m: InducingModel, cache: FieldCache, grids,
                             increments) -> ObjectiveValue:
    """Frozen-noise objective: simulate with the given increments and score.

    This deterministic map of the model parameters is what the optimizer
    sees within one epoch, and what finite-difference checks differentiate.
    """
    trajs = _as_list(trajs)
    bundles = [None] * len(trajs)
    sens = [None] * len(trajs)
    for group in _grid_groups(grids):
        g = grids[group[0]]
        S = increments[group[0]].shape[0]
        x0 = np.repeat(np.stack([trajs[j].obs[0] for j in group]), S, axis=0)
        inc = np.concatenate([increments[j] for j in group], axis=0)
        paths, sn = simulate_bundle_with_sensitivities(m, cache, x0, g, inc)
        for pos, j in enumerate(group):
            rows = slice(pos * S, (pos + 1) * S)
            bundles[j] = PathBundle(paths=paths[rows], increments=increments[j],
                                    seed=None, grid=g)
            sens[j] = PathSensitivities(obs_indices=sn.obs_indices,
                                        dxdu_f=sn.dxdu_f[rows],
                                        dxdu_s=sn.dxdu_s[rows])
    return mc_loglik_grad(trajs, m, bundles, sens, cache=cache)


def log_posterior(trajs, m: InducingModel, sim: SimConfig) -> ObjectiveValue:
    """Simulate from each trajectory's first observation and evaluate the
    stochastic MAP objective; deterministic given sim.seed."""
    trajs = _as_list(trajs)
    cache = build_cache(m)
    grids = make_grids(trajs, sim.resolution_factor)
    incs = draw_increments(trajs, grids, m, sim.n_samples, sim.seed)
    return evaluate_with_increments(trajs, m, cache, grids, incs)
