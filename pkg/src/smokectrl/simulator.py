"""Forward time integration of the controlled smoke dynamics.

One step advances (v, p, rho) given a control force u:

    (v' - v)/dt + Adv(v') = u - grad(p'),   div(v') = 0,
    rho' = A(rho, v)  (advected by the pre-step velocity).

The implicit velocity equation is solved by Picard iteration: freeze the
advecting velocity, evaluate the transport explicitly and project the result
onto the solenoidal space each sweep.  The divergence-free post-condition is
enforced by the final projection regardless of how far the Picard sweep got.

Steps are pure functions; `simulate` is sequential over timesteps.
"""

from dataclasses import dataclass, field

import numpy as np

from .advection import (DEFAULT_TERM_CAP, DEFAULT_TRUNCATION_TOL,
                        advect_scalar, self_advection)
from .errors import NonConvergence
from .fields import (ScalarField, StaggeredVectorField, divergence_arrays,
                     inf_norm, project_arrays, solve_poisson,
                     zero_boundary_faces)


@dataclass
class SimConfig:
    dt: float
    picard_iters: int = 3
    sim_tol: float = 1e-6
    truncation_tol: float = DEFAULT_TRUNCATION_TOL
    truncation_cap: int = DEFAULT_TERM_CAP

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.picard_iters < 1:
            raise ValueError("picard_iters must be >= 1")


@dataclass
class SimState:
    """One snapshot (v_i, p_i, rho_i); div(v) stays below sim_tol after steps."""
    v: StaggeredVectorField
    p: ScalarField
    rho: ScalarField

    @classmethod
    def rest(cls, spec, rho0):
        return cls(StaggeredVectorField.zeros(spec), ScalarField.zeros(spec),
                   rho0)


def _picard_velocity(spec, vcomps, ucomps, cfg):
    """Solve the implicit velocity update; returns (w, picard_residual)."""
    dt = cfg.dt
    w = vcomps
    resid = np.inf
    for _ in range(cfg.picard_iters):
        adv = self_advection(spec, w)
        target = tuple(v + dt * (u - a)
                       for v, u, a in zip(vcomps, ucomps, adv))
        w_new = project_arrays(spec, target, cfg.sim_tol)
        resid = max(inf_norm(a - b) for a, b in zip(w_new, w))
        w = w_new
        if resid <= cfg.sim_tol:
            break
    return w, resid


def step(state, u, cfg, accept_stall=False):
    """Advance one timestep under control force u.

    Raises NonConvergence when the Picard update is still moving by more than
    sim_tol after the configured sweeps; the exception carries the completed
    state and the residual, so the caller may accept the step anyway (or pass
    ``accept_stall=True`` to do so implicitly).  The divergence-free
    post-condition holds either way: the last projection enforces it.
    """
    spec = state.v.spec
    vcomps = zero_boundary_faces(spec, state.v.comps)
    ucomps = zero_boundary_faces(spec, u.comps)

    rho_new, _ = advect_scalar(spec, vcomps, state.rho.values, cfg.dt,
                               cfg.truncation_tol, cfg.truncation_cap)

    w, resid = _picard_velocity(spec, vcomps, ucomps, cfg)
    # recover the pressure-like multiplier from the final momentum balance
    adv = self_advection(spec, w)
    p_src = tuple((v - wk) / cfg.dt + uk - ak
                  for v, wk, uk, ak in zip(vcomps, w, ucomps, adv))
    div_src = divergence_arrays(spec, p_src)
    div_src = div_src - div_src.mean()
    if inf_norm(div_src) > cfg.sim_tol:
        p_vals = solve_poisson(spec, div_src, cfg.sim_tol)
    else:
        p_vals = np.zeros(spec.res)

    new_state = SimState(StaggeredVectorField(spec, w),
                         ScalarField(spec, p_vals),
                         ScalarField(spec, rho_new))
    if resid > cfg.sim_tol and not accept_stall:
        err = NonConvergence(
            f"Picard update stalled at {resid:.3e} > sim_tol {cfg.sim_tol:.3e}",
            residual=resid)
        err.state = new_state
        raise err
    return new_state


def simulate(state0, forces, cfg, accept_stall=False):
    """Roll the dynamics forward under a force sequence; returns N+1 states."""
    states = [state0]
    for i, u in enumerate(forces):
        try:
            states.append(step(states[-1], u, cfg, accept_stall=accept_stall))
        except NonConvergence as e:
            e.context = f"timestep {i}"
            raise
    return states
