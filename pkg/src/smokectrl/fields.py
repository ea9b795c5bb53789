"""Staggered (MAC) grid containers and discrete differential operators.

Velocity-like quantities live on cell faces, all scalar quantities (density,
pressures, multipliers) at cell centers.  Two boundary regimes are supported:

* ``"neumann"``: closed box.  Face arrays carry ``res[k] + 1`` entries along
  their own axis; the domain-boundary faces are pinned to zero normal
  velocity, and pressure obeys a homogeneous Neumann condition.
* ``"periodic"``: all indices wrap; face arrays carry ``res[k]`` entries along
  their own axis (face ``i`` sits between cells ``i-1`` and ``i``).

All inner products used by the solvers are plain sums over array entries (no
cell-volume weighting), matching the discrete-norm convention used throughout
the optimization stack.  Under periodic boundaries the identity
``<grad p, v> = -<p, div v>`` holds exactly.

Raw kernels accept arrays with an arbitrary batch prefix: the trailing ``dim``
axes are the spatial ones.  This lets the spacetime solvers evaluate an
operator on all timesteps with one call.

Operations are pure: inputs are never mutated and identical inputs give
bitwise-identical outputs.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import memtrack
from .errors import NonConvergence

NEUMANN = "neumann"
PERIODIC = "periodic"


@dataclass(frozen=True)
class GridSpec:
    """Uniform Cartesian grid description.

    ``res`` counts cells per axis (each >= 4), ``h`` is the uniform cell
    size.  Semi-coarsening halves every axis while all components stay even
    and >= 8; grids whose resolution is not a power of two times the coarsest
    size simply stop coarsening earlier.
    """

    dim: int
    res: tuple
    h: float
    boundary: str = NEUMANN

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        res = tuple(int(r) for r in self.res)
        object.__setattr__(self, "res", res)
        if len(res) != self.dim:
            raise ValueError("res length must equal dim")
        if any(r < 4 for r in res):
            raise ValueError(f"every res component must be >= 4, got {res}")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.boundary not in (NEUMANN, PERIODIC):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def periodic(self):
        return self.boundary == PERIODIC

    @property
    def n_cells(self):
        return int(np.prod(self.res))

    def face_shape(self, axis):
        """Shape of the face-normal component array for one axis."""
        s = list(self.res)
        if not self.periodic:
            s[axis] += 1
        return tuple(s)

    def n_face_values(self):
        return sum(int(np.prod(self.face_shape(k))) for k in range(self.dim))

    def coarsen(self):
        """Spec with every axis halved, or None when no coarser level exists."""
        if any(r % 2 or r // 2 < 4 for r in self.res):
            return None
        return GridSpec(self.dim, tuple(r // 2 for r in self.res),
                        2.0 * self.h, self.boundary)


class ScalarField:
    """Cell-centered scalar values on a grid."""

    def __init__(self, spec, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != spec.res:
            raise ValueError(f"scalar payload {values.shape} != res {spec.res}")
        self.spec = spec
        self.values = values
        memtrack.register(values)

    @classmethod
    def zeros(cls, spec):
        return cls(spec, np.zeros(spec.res))

    def copy(self):
        return ScalarField(self.spec, self.values.copy())


class StaggeredVectorField:
    """Face-centered vector field; component ``k`` lives on ``k``-normal faces."""

    def __init__(self, spec, comps):
        comps = tuple(np.asarray(c, dtype=np.float64) for c in comps)
        if len(comps) != spec.dim:
            raise ValueError("component count must equal dim")
        for k, c in enumerate(comps):
            if c.shape != spec.face_shape(k):
                raise ValueError(
                    f"component {k} shape {c.shape} != {spec.face_shape(k)}")
        self.spec = spec
        self.comps = comps
        for c in comps:
            memtrack.register(c)

    @classmethod
    def zeros(cls, spec):
        return cls(spec, tuple(np.zeros(spec.face_shape(k))
                               for k in range(spec.dim)))

    def copy(self):
        return StaggeredVectorField(self.spec, tuple(c.copy() for c in self.comps))


# ---------------------------------------------------------------------------
# raw kernels (batch axes allowed in front of the spatial ones)
# ---------------------------------------------------------------------------

def _ax(arr, spec, k):
    """Array axis corresponding to grid axis k."""
    return arr.ndim - spec.dim + k


def zero_boundary_faces(spec, comps):
    """Return copies with domain-boundary normal faces set to zero (Neumann)."""
    if spec.periodic:
        return tuple(np.array(c, dtype=np.float64, copy=True) for c in comps)
    out = []
    for k, c in enumerate(comps):
        c = np.array(c, dtype=np.float64, copy=True)
        ax = _ax(c, spec, k)
        idx_lo = [slice(None)] * c.ndim
        idx_lo[ax] = 0
        idx_hi = [slice(None)] * c.ndim
        idx_hi[ax] = c.shape[ax] - 1
        c[tuple(idx_lo)] = 0.0
        c[tuple(idx_hi)] = 0.0
        out.append(c)
    return tuple(out)


def divergence_arrays(spec, comps):
    """Cell-centered divergence of face components."""
    h = spec.h
    out = None
    for k, c in enumerate(comps):
        ax = _ax(c, spec, k)
        if spec.periodic:
            d = (np.roll(c, -1, axis=ax) - c) / h
        else:
            lo = [slice(None)] * c.ndim
            hi = [slice(None)] * c.ndim
            lo[ax] = slice(0, c.shape[ax] - 1)
            hi[ax] = slice(1, c.shape[ax])
            d = (c[tuple(hi)] - c[tuple(lo)]) / h
        out = d if out is None else out + d
    return out


def gradient_arrays(spec, p):
    """Face-centered gradient of a cell scalar; Neumann boundary faces are 0."""
    h = spec.h
    comps = []
    for k in range(spec.dim):
        ax = _ax(p, spec, k)
        if spec.periodic:
            g = (p - np.roll(p, 1, axis=ax)) / h
        else:
            shape = list(p.shape)
            shape[ax] += 1
            g = np.zeros(shape, dtype=np.float64)
            lo = [slice(None)] * p.ndim
            hi = [slice(None)] * p.ndim
            lo[ax] = slice(0, p.shape[ax] - 1)
            hi[ax] = slice(1, p.shape[ax])
            mid = [slice(None)] * p.ndim
            mid[ax] = slice(1, p.shape[ax])
            g[tuple(mid)] = (p[tuple(hi)] - p[tuple(lo)]) / h
        comps.append(g)
    return tuple(comps)


def dot_fields(a, b):
    """Plain inner product of two tuples of arrays."""
    return float(sum(np.vdot(x, y) for x, y in zip(a, b)))


def inf_norm(arrs):
    if isinstance(arrs, np.ndarray):
        arrs = (arrs,)
    m = 0.0
    for a in arrs:
        if a.size:
            m = max(m, float(np.max(np.abs(a))))
    return m


# ---------------------------------------------------------------------------
# Poisson multigrid (used by the solenoidal projection)
# ---------------------------------------------------------------------------

def _laplacian(spec, p):
    """div(grad(p)) with the boundary closure implied by the operators above."""
    return divergence_arrays(spec, gradient_arrays(spec, p))


def _lap_diagonal(spec):
    """Diagonal of the (negative-definite) discrete Laplacian."""
    h2 = spec.h * spec.h
    diag = np.full(spec.res, -2.0 * spec.dim / h2)
    if not spec.periodic:
        for k in range(spec.dim):
            lo = [slice(None)] * spec.dim
            hi = [slice(None)] * spec.dim
            lo[k] = 0
            hi[k] = spec.res[k] - 1
            diag[tuple(lo)] += 1.0 / h2
            diag[tuple(hi)] += 1.0 / h2
    return diag


def restrict_cell(spec_fine, x):
    """Average 2^d fine cells into each coarse cell."""
    d = spec_fine.dim
    for k in range(d):
        ax = _ax(x, spec_fine, k)
        sl0 = [slice(None)] * x.ndim
        sl1 = [slice(None)] * x.ndim
        sl0[ax] = slice(0, x.shape[ax], 2)
        sl1[ax] = slice(1, x.shape[ax], 2)
        x = 0.5 * (x[tuple(sl0)] + x[tuple(sl1)])
    return x


def prolong_cell(spec_coarse, spec_fine, x):
    """Multilinear interpolation from coarse to fine cell centers.

    Per axis each fine center takes weights (3/4, 1/4) from the two nearest
    coarse centers; periodic wraps, Neumann clamps at the wall.
    """
    for k in range(spec_coarse.dim):
        ax = _ax(x, spec_coarse, k)
        n = x.shape[ax]
        if spec_coarse.periodic:
            lo = np.roll(x, 1, axis=ax)
            hi = np.roll(x, -1, axis=ax)
        else:
            idx = np.arange(n)
            lo = np.take(x, np.maximum(idx - 1, 0), axis=ax)
            hi = np.take(x, np.minimum(idx + 1, n - 1), axis=ax)
        even = 0.75 * x + 0.25 * lo
        odd = 0.75 * x + 0.25 * hi
        shape = list(x.shape)
        shape[ax] = 2 * n
        out = np.empty(shape, dtype=np.float64)
        se = [slice(None)] * len(shape)
        so = [slice(None)] * len(shape)
        se[ax] = slice(0, 2 * n, 2)
        so[ax] = slice(1, 2 * n, 2)
        out[tuple(se)] = even
        out[tuple(so)] = odd
        x = out
    return x


class _PoissonLevels:
    """Grid hierarchy with a dense pseudo-inverse on the coarsest level."""

    def __init__(self, spec):
        self.specs = [spec]
        while self.specs[-1].coarsen() is not None:
            self.specs.append(self.specs[-1].coarsen())
        coarsest = self.specs[-1]
        n = coarsest.n_cells
        a = np.zeros((n, n))
        e = np.zeros(coarsest.res)
        flat = e.reshape(-1)
        for j in range(n):
            flat[j] = 1.0
            a[:, j] = _laplacian(coarsest, e).reshape(-1)
            flat[j] = 0.0
        self.coarse_pinv = np.linalg.pinv(a, rcond=1e-12)
        self.diags = [_lap_diagonal(s) for s in self.specs]


@lru_cache(maxsize=32)
def _poisson_levels(spec):
    return _PoissonLevels(spec)


def _poisson_vcycle(levels, li, p, rhs, nu=2, omega=0.8):
    spec = levels.specs[li]
    if li == len(levels.specs) - 1:
        sol = levels.coarse_pinv @ rhs.reshape(-1)
        return sol.reshape(spec.res)
    diag = levels.diags[li]
    for _ in range(nu):
        p = p + omega * (rhs - _laplacian(spec, p)) / diag
    res = rhs - _laplacian(spec, p)
    res_c = restrict_cell(spec, res)
    pc = _poisson_vcycle(levels, li + 1, np.zeros(levels.specs[li + 1].res), res_c,
                         nu=nu, omega=omega)
    p = p + prolong_cell(levels.specs[li + 1], spec, pc)
    for _ in range(nu):
        p = p + omega * (rhs - _laplacian(spec, p)) / diag
    return p


def solve_poisson(spec, rhs, tol, max_cycles=200):
    """Solve div(grad(p)) = rhs to residual inf-norm <= tol.

    The compatible nullspace (constants) is handled by removing the rhs mean;
    the returned solution has arbitrary mean.
    """
    rhs = rhs - rhs.mean()
    if inf_norm(rhs) <= tol:
        return np.zeros(spec.res)
    levels = _poisson_levels(spec)
    p = np.zeros(spec.res)
    for _ in range(max_cycles):
        p = _poisson_vcycle(levels, 0, p, rhs)
        r = inf_norm(rhs - _laplacian(spec, p))
        if r <= tol:
            return p
    raise NonConvergence("Poisson V-cycle budget exhausted", residual=r,
                         context=f"{spec.res} {spec.boundary}")


def project_arrays(spec, comps, tol):
    """Raw solenoidal projection: returns components with divergence <= tol."""
    comps = zero_boundary_faces(spec, comps)
    div = divergence_arrays(spec, comps)
    if inf_norm(div) <= tol:
        return comps
    phi = solve_poisson(spec, div, tol)
    grad = gradient_arrays(spec, phi)
    return tuple(c - g for c, g in zip(comps, grad))


# ---------------------------------------------------------------------------
# field-level API
# ---------------------------------------------------------------------------

def divergence(v):
    """Central finite-difference divergence per cell; linear in v."""
    return ScalarField(v.spec, divergence_arrays(v.spec, v.comps))


def gradient(p):
    """Face-centered difference of adjacent cell values divided by h."""
    return StaggeredVectorField(p.spec, gradient_arrays(p.spec, p.values))


def project_solenoidal(v, tol=1e-9):
    """Remove the curl-free part of ``v`` via a multigrid Poisson solve.

    Returns ``v - grad(phi)`` with ``div(grad(phi)) = div(v)`` solved to
    residual inf-norm <= tol; the output divergence satisfies the same bound.
    A field that already meets the bound is returned unchanged.  Under Neumann
    boundaries the domain-boundary normal faces are zeroed first (they are not
    degrees of freedom of the projected space).

    Raises NonConvergence if the Poisson V-cycle budget is exhausted.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if inf_norm(divergence_arrays(v.spec, v.comps)) <= tol:
        if v.spec.periodic:
            return v
        comps = zero_boundary_faces(v.spec, v.comps)
        if inf_norm(divergence_arrays(v.spec, comps)) <= tol:
            return StaggeredVectorField(v.spec, comps)
    return StaggeredVectorField(v.spec, project_arrays(v.spec, v.comps, tol))
