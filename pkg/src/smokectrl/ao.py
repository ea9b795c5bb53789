"""Advection Optimization: guiding velocities from keyframe mismatch.

Given per-step guiding velocities v_i (with any multiplier shift already
folded in by the caller), the subproblem finds solenoidal fields v*_i whose
pure passive advection of rho_0 matches the keyframes while staying close to
v_i.  It is solved by a forward/backward fixed-point sweep over the
first-order optimality system: a forward pass rebuilds the density
trajectory, a backward pass updates the advection multipliers and the
velocities, projecting each velocity onto the divergence-free space.

The keyframe mismatch is measured through a pyramid of Gaussian filters with
doubling standard deviation; the stacked filter operator C = sum_j w_j G_j^T G_j
is symmetric positive semidefinite and spreads sparse mismatch gradients
across the domain.
"""

from dataclasses import dataclass, field

import numpy as np

from .advection import (DEFAULT_TERM_CAP, DEFAULT_TRUNCATION_TOL,
                        advect_scalar, advect_scalar_rho_T, advect_scalar_v_T)
from .errors import SmokeCtrlError
from .fields import ScalarField, project_arrays


class KeyframeSet:
    """Target densities rho*_i with indicator flags c_i, i in [1, N]."""

    def __init__(self, n_steps, targets):
        if not targets:
            raise ValueError("at least one keyframe is required")
        self.n_steps = int(n_steps)
        self.targets = {}
        for i, t in targets.items():
            i = int(i)
            if not 1 <= i <= self.n_steps:
                raise ValueError(f"keyframe timestep {i} outside [1, {n_steps}]")
            vals = t.values if isinstance(t, ScalarField) else np.asarray(t, float)
            if np.min(vals) < 0:
                raise ValueError(f"keyframe {i} has negative densities")
            self.targets[i] = vals
        self.flags = np.zeros(self.n_steps + 1, dtype=bool)
        for i in self.targets:
            self.flags[i] = True


def _gaussian_kernel(sigma):
    r = max(1, int(np.ceil(3.0 * sigma)))
    o = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (o / sigma) ** 2)
    return g / g.sum()


def _fold_index(i, n, periodic):
    if periodic:
        return i % n
    m = i % (2 * n)
    m = np.where(m < 0, m + 2 * n, m)
    return np.where(m >= n, 2 * n - 1 - m, m)


def _axis_matrix(n, sigma, periodic):
    g = _gaussian_kernel(sigma)
    r = (len(g) - 1) // 2
    m = np.zeros((n, n))
    rows = np.arange(n)
    for o in range(-r, r + 1):
        cols = _fold_index(rows + o, n, periodic)
        np.add.at(m, (rows, cols), g[o + r])
    return m


class GaussianMetric:
    """Pyramid metric C = sum_j w_j G_j^T G_j with sigma_j = sigma0 * 2^j.

    Filters are separable; per-axis dense matrices encode the wrap (periodic)
    or mirror (Neumann) padding exactly, so the operator transpose is exact
    and C is symmetric positive semidefinite by construction.
    """

    def __init__(self, spec, levels=None, sigma0=1.0, weights=None):
        if levels is None:
            levels = max(1, int(np.log2(min(spec.res))) - 1)
        if levels < 1:
            raise ValueError("levels must be >= 1")
        self.spec = spec
        self.levels = levels
        self.sigma0 = sigma0
        self.weights = tuple(weights) if weights is not None else (1.0,) * levels
        if len(self.weights) != levels:
            raise ValueError("one weight per level required")
        self._mats = []
        for j in range(levels):
            sigma = sigma0 * (2.0 ** j)
            self._mats.append(tuple(
                _axis_matrix(spec.res[k], sigma, spec.periodic)
                for k in range(spec.dim)))

    def _filter(self, mats, x, transpose):
        for k, m in enumerate(mats):
            mm = m.T if transpose else m
            x = np.moveaxis(np.tensordot(mm, x, axes=(1, k)), 0, k)
        return x

    def apply(self, x):
        """C x; returns a new array."""
        out = np.zeros_like(x)
        for w, mats in zip(self.weights, self._mats):
            y = self._filter(mats, x, transpose=False)
            out += w * self._filter(mats, y, transpose=True)
        return out

    def quad(self, x):
        """<x, C x> (nonnegative)."""
        val = 0.0
        for w, mats in zip(self.weights, self._mats):
            y = self._filter(mats, x, transpose=False)
            val += w * float(np.vdot(y, y))
        return val


def apply_metric(metric, flag, x):
    """c_i * C x, the keyframe mismatch weighting at one timestep."""
    if not flag:
        return np.zeros_like(x)
    return metric.apply(x)


@dataclass
class AoState:
    """Guiding velocities, advection multipliers and the density trajectory.

    vstar components are stacked (N, *face_shape); mu is (N, *res) storing
    mu_0..mu_{N-1}; rho is (N+1, *res); ks holds the Taylor order of each
    forward advection step.
    """
    vstar: tuple
    mu: np.ndarray
    rho: np.ndarray
    ks: list = field(default_factory=list)


@dataclass
class AoConfig:
    K: float
    dt: float
    iters: int = 2
    safeguard: bool = False
    projection_tol: float = 1e-9
    truncation_tol: float = DEFAULT_TRUNCATION_TOL
    truncation_cap: int = DEFAULT_TERM_CAP


def _vslice(vstacked, i):
    return tuple(c[i] for c in vstacked)


def rollout(spec, vstar, rho0, cfg):
    """Forward advection of rho0 through all guiding velocities."""
    n = vstar[0].shape[0]
    rho = np.empty((n + 1,) + spec.res)
    rho[0] = rho0
    ks = []
    for i in range(n):
        out, rep = advect_scalar(spec, _vslice(vstar, i), rho[i], cfg.dt,
                                 cfg.truncation_tol, cfg.truncation_cap)
        rho[i + 1] = out
        ks.append(rep.k_used)
    return rho, ks


def ao_objective(spec, vstar, v_guiding, keyframes, metric, cfg, rho0,
                 rho=None):
    """0.5 sum_i |rho_i - rho*_i|_C^2 + (K/2) sum_i |v_i - v*_i|^2."""
    if rho is None:
        rho, _ = rollout(spec, vstar, rho0, cfg)
    mismatch = 0.0
    for i, target in keyframes.targets.items():
        mismatch += metric.quad(rho[i] - target)
    vterm = sum(float(np.vdot(g - s, g - s))
                for g, s in zip(v_guiding, vstar))
    return 0.5 * mismatch + 0.5 * cfg.K * vterm


def ao_sweep(spec, state, v_guiding, keyframes, metric, cfg):
    """One forward/backward fixed-point application; returns a new AoState."""
    n = keyframes.n_steps
    rho, ks = rollout(spec, state.vstar, rho0=state.rho[0], cfg=cfg)
    vstar = tuple(c.copy() for c in state.vstar)
    mu = np.zeros((n,) + spec.res)
    mu_next = np.zeros(spec.res)  # mu_N = 0
    for i in range(n, 0, -1):
        if i < n:
            adj, _ = advect_scalar_rho_T(spec, _vslice(vstar, i), mu_next,
                                         cfg.dt, cfg.truncation_tol,
                                         cfg.truncation_cap, k_fixed=ks[i])
        else:
            adj = np.zeros(spec.res)
        if keyframes.flags[i]:
            adj = adj - metric.apply(rho[i] - keyframes.targets[i])
        mu[i - 1] = adj
        mu_next = adj

        force, _ = advect_scalar_v_T(spec, _vslice(vstar, i - 1), rho[i - 1],
                                     mu[i - 1], cfg.dt, cfg.truncation_tol,
                                     cfg.truncation_cap, k_fixed=ks[i - 1])
        raw = tuple(g[i - 1] + f / cfg.K
                    for g, f in zip(v_guiding, force))
        proj = project_arrays(spec, raw, cfg.projection_tol)
        for k in range(spec.dim):
            vstar[k][i - 1] = proj[k]
    return AoState(vstar=vstar, mu=mu, rho=rho, ks=ks)


def solve_ao(spec, v_guiding, rho0, keyframes, metric, cfg):
    """Run the fixed number of sweeps (optionally with the blending safeguard).

    With the safeguard on, each sweep's velocities are blended with the
    previous ones, halving the blend factor until the objective does not
    increase; blending two solenoidal fields needs no re-projection.
    """
    n = keyframes.n_steps
    if any(c.shape[0] != n for c in v_guiding):
        raise SmokeCtrlError("guiding velocities must have one entry per step")
    state = AoState(vstar=tuple(c.copy() for c in v_guiding),
                    mu=np.zeros((n,) + spec.res),
                    rho=np.concatenate([rho0[None]] * (n + 1), axis=0))
    objective = None
    if cfg.safeguard:
        objective = ao_objective(spec, state.vstar, v_guiding, keyframes,
                                 metric, cfg, rho0)
    for _ in range(cfg.iters):
        new = ao_sweep(spec, state, v_guiding, keyframes, metric, cfg)
        if not cfg.safeguard:
            state = new
            continue
        alpha = 1.0
        accepted = None
        while alpha > 1.0 / 64.0:
            blend = tuple((1 - alpha) * old + alpha * upd
                          for old, upd in zip(state.vstar, new.vstar))
            obj = ao_objective(spec, blend, v_guiding, keyframes, metric,
                               cfg, rho0)
            if obj <= objective * (1 + 1e-12) + 1e-300:
                accepted = (blend, obj)
                break
            alpha *= 0.5
        if accepted is None:
            break  # no improving blend; keep the previous state
        vstar, objective = accepted
        rho, ks = rollout(spec, vstar, rho0, cfg)
        state = AoState(vstar=vstar, mu=new.mu, rho=rho, ks=ks)
    return state
