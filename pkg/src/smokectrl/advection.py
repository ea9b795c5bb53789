"""Passive and self advection on the staggered grid.

The scalar transport stencil is the two-point central form

    (T(v) rho)_c = -(1/2h) sum_k [ v_k(c+e_k/2) rho(c+e_k)
                                   - v_k(c-e_k/2) rho(c-e_k) ],

chosen so that the matrix T(v) is exactly skew-symmetric for *any* advecting
velocity (the antisymmetric face pairing has an empty diagonal).  For
divergence-free v it coincides with the conservative central flux form, so
total mass is conserved up to the divergence residual of v.  The advection
operator itself is the truncated Taylor expansion of exp(T(v) dt); because
T is skew-symmetric the untruncated exponential is orthogonal and the scheme
is unconditionally stable.

Velocity self-advection reuses the same two-point form per velocity
component, with the advecting velocity sampled onto that component's face
lattice by two-point averages.  The resulting bilinear form S(a, w) is skew
in w, so transported kinetic energy is exactly neutral, and its derivatives
in both arguments are available in closed form (needed by the KKT solvers).

Under Neumann boundaries the closure is zero flux: wall-normal faces carry no
transport and out-of-domain values are treated as zero.  Raw kernels expect
velocity inputs whose wall faces have already been zeroed (all public entry
points enforce this); arrays may carry arbitrary batch axes in front of the
spatial ones.

All operations are pure functions of their inputs and bitwise deterministic.
"""

from dataclasses import dataclass

import numpy as np

from .errors import TruncationOverflow
from .fields import (GridSpec, ScalarField, StaggeredVectorField, _ax,
                     inf_norm, zero_boundary_faces)

DEFAULT_TRUNCATION_TOL = 1e-5
DEFAULT_TERM_CAP = 128


def _shift(spec, arr, k, s):
    """Shift by s cells along grid axis k (wrap or zero-fill per boundary)."""
    ax = _ax(arr, spec, k)
    if spec.periodic:
        return np.roll(arr, s, axis=ax)
    out = np.zeros_like(arr)
    n = arr.shape[ax]
    dst = [slice(None)] * arr.ndim
    src = [slice(None)] * arr.ndim
    if s > 0:
        dst[ax] = slice(s, n)
        src[ax] = slice(0, n - s)
    else:
        dst[ax] = slice(0, n + s)
        src[ax] = slice(-s, n)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _mask_wall(spec, arr, j):
    """Zero the wall entries of a j-face array in place (Neumann only)."""
    if spec.periodic:
        return arr
    ax = _ax(arr, spec, j)
    lo = [slice(None)] * arr.ndim
    hi = [slice(None)] * arr.ndim
    lo[ax] = 0
    hi[ax] = arr.shape[ax] - 1
    arr[tuple(lo)] = 0.0
    arr[tuple(hi)] = 0.0
    return arr


def _face_pair(spec, vk, k):
    """(v at c+e_k/2, v at c-e_k/2) seen from cell centers."""
    ax = _ax(vk, spec, k)
    if spec.periodic:
        return np.roll(vk, -1, axis=ax), vk
    hi = [slice(None)] * vk.ndim
    lo = [slice(None)] * vk.ndim
    hi[ax] = slice(1, vk.shape[ax])
    lo[ax] = slice(0, vk.shape[ax] - 1)
    return vk[tuple(hi)], vk[tuple(lo)]


def transport_scalar(spec, vcomps, rho):
    """Apply the skew-symmetric stencil T(v) to a cell scalar."""
    c = 0.5 / spec.h
    out = np.zeros(rho.shape, dtype=np.float64)
    for k in range(spec.dim):
        vplus, vminus = _face_pair(spec, vcomps[k], k)
        rplus = _shift(spec, rho, k, -1)
        rminus = _shift(spec, rho, k, 1)
        out -= c * (vplus * rplus - vminus * rminus)
    return out


def transport_scalar_T(spec, vcomps, rho):
    """Transpose of transport_scalar in rho (equals its negation)."""
    return -transport_scalar(spec, vcomps, rho)


def scalar_stencil_v_adjoint(spec, x, y):
    """Face field g with <T(dv) x, y> = <dv, g> for every face perturbation dv.

    Per face between cells L and R along axis k:
        g = -(1/2h) (y_L x_R - y_R x_L).
    """
    c = 0.5 / spec.h
    comps = []
    for k in range(spec.dim):
        ax = _ax(x, spec, k)
        if spec.periodic:
            g = -c * (np.roll(y, 1, axis=ax) * x - y * np.roll(x, 1, axis=ax))
        else:
            shape = list(x.shape)
            shape[ax] += 1
            g = np.zeros(shape, dtype=np.float64)
            lo = [slice(None)] * x.ndim
            hi = [slice(None)] * x.ndim
            lo[ax] = slice(0, x.shape[ax] - 1)
            hi[ax] = slice(1, x.shape[ax])
            mid = [slice(None)] * len(shape)
            mid[ax] = slice(1, x.shape[ax])
            g[tuple(mid)] = -c * (y[tuple(lo)] * x[tuple(hi)]
                                  - y[tuple(hi)] * x[tuple(lo)])
        comps.append(g)
    return tuple(comps)


# ---------------------------------------------------------------------------
# truncated exponential
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationReport:
    """Adaptive Taylor truncation outcome: terms used and final term norm."""
    k_used: int
    last_term_norm: float


def _taylor_apply(spec, vcomps, rho, dt, tol, cap, k_fixed, transpose):
    stencil = transport_scalar_T if transpose else transport_scalar
    out = rho.astype(np.float64, copy=True)
    term = rho
    k = 0
    while True:
        k += 1
        if k > cap:
            raise TruncationOverflow(
                f"Taylor term cap {cap} exceeded (dt*|v|/h too large)",
                k_cap=cap, last_term_norm=inf_norm(term))
        term = (dt / k) * stencil(spec, vcomps, term)
        out += term
        nrm = inf_norm(term)
        if k_fixed is not None:
            if k == k_fixed:
                return out, TruncationReport(k, nrm)
        elif nrm < tol:
            return out, TruncationReport(k, nrm)


def advect_scalar(spec, vcomps, rho, dt, tol=DEFAULT_TRUNCATION_TOL,
                  cap=DEFAULT_TERM_CAP, k_fixed=None):
    """exp(T(v) dt) rho truncated at the first term below tol (inf-norm)."""
    return _taylor_apply(spec, vcomps, rho, dt, tol, cap, k_fixed, False)


def advect_scalar_rho_T(spec, vcomps, mu, dt, tol=DEFAULT_TRUNCATION_TOL,
                        cap=DEFAULT_TERM_CAP, k_fixed=None):
    """Transposed truncated exponential with the same truncation policy."""
    return _taylor_apply(spec, vcomps, mu, dt, tol, cap, k_fixed, True)


def advect_scalar_v_T(spec, vcomps, rho, mu, dt, tol=DEFAULT_TRUNCATION_TOL,
                      cap=DEFAULT_TERM_CAP, k_fixed=None):
    """Velocity-transpose Jacobian of the truncated exponential applied to mu.

    Differentiates the truncated series term by term at the same truncation
    order as the forward pass, so forward and adjoint are exact transposes:

        d/dv [sum_j (dt^j/j!) T(v)^j rho] . dv
            = sum_j (dt^j/j!) sum_{m<j} T^m T(dv) T^{j-1-m} rho.

    Returns (face_field, TruncationReport of the order actually used).
    """
    k = k_fixed
    if k is None:
        _, rep = advect_scalar(spec, vcomps, rho, dt, tol, cap)
        k = rep.k_used
    xs = [rho.astype(np.float64, copy=True)]
    for _ in range(k - 1):
        xs.append(transport_scalar(spec, vcomps, xs[-1]))
    ys = [mu.astype(np.float64, copy=True)]
    for _ in range(k - 1):
        ys.append(transport_scalar_T(spec, vcomps, ys[-1]))

    out = None
    coeff = 1.0
    for t in range(k):
        coeff = coeff * dt / (t + 1)  # dt^(t+1) / (t+1)!
        acc = None
        for s in range(t + 1):
            g = scalar_stencil_v_adjoint(spec, xs[s], ys[t - s])
            acc = g if acc is None else tuple(a + b for a, b in zip(acc, g))
        term = tuple(coeff * a for a in acc)
        out = term if out is None else tuple(a + b for a, b in zip(out, term))
    return out, TruncationReport(k, float("nan"))


class AdvectionOperator:
    """Frozen-velocity passive advection A(., v) = exp(T(v) dt) via Taylor.

    The velocity is masked to zero wall flux at construction (Neumann).
    Instances are immutable and safe to share between workers.
    """

    def __init__(self, v, truncation_tol=DEFAULT_TRUNCATION_TOL,
                 cap=DEFAULT_TERM_CAP):
        self.spec = v.spec
        self.vcomps = zero_boundary_faces(v.spec, v.comps)
        self.truncation_tol = truncation_tol
        self.cap = cap

    def apply_stencil(self, rho):
        """T(v) rho: linear in rho, bilinear in (v, rho)."""
        return ScalarField(self.spec,
                           transport_scalar(self.spec, self.vcomps, rho.values))

    def advect(self, rho, dt):
        if dt <= 0:
            raise ValueError("dt must be positive")
        out, rep = advect_scalar(self.spec, self.vcomps, rho.values, dt,
                                 self.truncation_tol, self.cap)
        return ScalarField(self.spec, out), rep

    def jacobian_rho_T(self, mu, dt, k_fixed=None):
        out, rep = advect_scalar_rho_T(self.spec, self.vcomps, mu.values, dt,
                                       self.truncation_tol, self.cap, k_fixed)
        return ScalarField(self.spec, out), rep

    def jacobian_v_T(self, rho, mu, dt, k_fixed=None):
        out, _ = advect_scalar_v_T(self.spec, self.vcomps, rho.values,
                                   mu.values, dt, self.truncation_tol,
                                   self.cap, k_fixed)
        return StaggeredVectorField(self.spec, out)


# ---------------------------------------------------------------------------
# semi-Lagrangian reference operator
# ---------------------------------------------------------------------------

def _centered_velocity(spec, vcomps):
    """Velocity components averaged to cell centers."""
    out = []
    for k in range(spec.dim):
        vplus, vminus = _face_pair(spec, vcomps[k], k)
        out.append(0.5 * (vplus + vminus))
    return out


def semi_lagrangian(rho, v, dt):
    """Single-step backtrace with multilinear sampling (wrap or clamp)."""
    spec = rho.spec
    vc = zero_boundary_faces(spec, v.comps)
    vel = _centered_velocity(spec, vc)
    coords = np.meshgrid(*[np.arange(n) + 0.5 for n in spec.res], indexing="ij")
    samples = [c - dt * u / spec.h for c, u in zip(coords, vel)]
    out = _multilinear_sample(spec, rho.values, samples)
    return ScalarField(spec, out)


def _multilinear_sample(spec, arr, samples):
    """Sample cell-centered data at fractional cell-center coordinates."""
    idx0 = []
    frac = []
    for k, s in enumerate(samples):
        g = s - 0.5
        i0 = np.floor(g).astype(np.int64)
        frac.append(g - i0)
        idx0.append(i0)
    out = np.zeros_like(arr)
    for corner in range(1 << spec.dim):
        w = np.ones_like(arr)
        idx = []
        for k in range(spec.dim):
            bit = (corner >> k) & 1
            ik = idx0[k] + bit
            n = spec.res[k]
            if spec.periodic:
                ik = np.mod(ik, n)
            else:
                ik = np.clip(ik, 0, n - 1)
            idx.append(ik)
            w = w * (frac[k] if bit else 1.0 - frac[k])
        out += w * arr[tuple(idx)]
    return out


# ---------------------------------------------------------------------------
# velocity self-advection
# ---------------------------------------------------------------------------

def _adv_samples(spec, acomps, j, k):
    """Advecting component k sampled at j-face lattice +/- e_k/2.

    Returns (sample_plus, sample_minus) matching the shape of component j.
    """
    if k == j:
        aj = acomps[j]
        ax = _ax(aj, spec, j)
        if spec.periodic:
            cc = 0.5 * (aj + np.roll(aj, -1, axis=ax))
            return cc, np.roll(cc, 1, axis=ax)
        lo = [slice(None)] * aj.ndim
        hi = [slice(None)] * aj.ndim
        lo[ax] = slice(0, aj.shape[ax] - 1)
        hi[ax] = slice(1, aj.shape[ax])
        cc = 0.5 * (aj[tuple(lo)] + aj[tuple(hi)])
        pad = [(0, 0)] * aj.ndim
        pad[ax] = (1, 1)
        ccp = np.pad(cc, pad)
        n = aj.shape[ax]
        plus = [slice(None)] * aj.ndim
        minus = [slice(None)] * aj.ndim
        plus[ax] = slice(1, n + 1)
        minus[ax] = slice(0, n)
        return ccp[tuple(plus)], ccp[tuple(minus)]
    ak = acomps[k]
    axj = _ax(ak, spec, j)
    axk = _ax(ak, spec, k)
    if spec.periodic:
        corner = 0.5 * (ak + np.roll(ak, 1, axis=axj))
        return np.roll(corner, -1, axis=axk), corner
    pad = [(0, 0)] * ak.ndim
    pad[axj] = (1, 1)
    akp = np.pad(ak, pad)
    lo = [slice(None)] * ak.ndim
    hi = [slice(None)] * ak.ndim
    lo[axj] = slice(0, akp.shape[axj] - 1)
    hi[axj] = slice(1, akp.shape[axj])
    corner = 0.5 * (akp[tuple(lo)] + akp[tuple(hi)])  # extent n_j+1 along j
    nk = ak.shape[axk]  # n_k + 1 faces; j-face arrays span n_k cells along k
    sm = [slice(None)] * ak.ndim
    sp = [slice(None)] * ak.ndim
    sm[axk] = slice(0, nk - 1)
    sp[axk] = slice(1, nk)
    return corner[tuple(sp)], corner[tuple(sm)]


def transport_face(spec, acomps, wcomps):
    """S(a, w): advect each component of w by sampled a; skew in w."""
    c = 0.5 / spec.h
    out = []
    for j in range(spec.dim):
        acc = np.zeros_like(wcomps[j])
        for k in range(spec.dim):
            sp, sm = _adv_samples(spec, acomps, j, k)
            wp = _shift(spec, wcomps[j], k, -1)
            wm = _shift(spec, wcomps[j], k, 1)
            acc += c * (sp * wp - sm * wm)
        out.append(_mask_wall(spec, acc, j))
    return tuple(out)


def self_advection(spec, vcomps):
    """Adv(v) = S(v, v), the discrete (v . grad) v."""
    return transport_face(spec, vcomps, vcomps)


def self_adv_jacobian_apply(spec, vcomps, dcomps):
    """Exact derivative of Adv at v applied to a perturbation d."""
    a = transport_face(spec, vcomps, dcomps)
    b = transport_face(spec, dcomps, vcomps)
    return tuple(x + y for x, y in zip(a, b))


def _adv_samples_adjoint(spec, vcomps, ucomps):
    """T(v, u): adjoint of d -> S(d, v) against u, as a face field."""
    c = 0.5 / spec.h
    out = [np.zeros_like(vk) for vk in vcomps]
    for j in range(spec.dim):
        vj = vcomps[j]
        uj = ucomps[j]
        for k in range(spec.dim):
            axk = _ax(vj, spec, k)
            if k == j:
                if spec.periodic:
                    gam = c * (uj * np.roll(vj, -1, axis=axk)
                               - np.roll(uj, -1, axis=axk) * vj)
                    out[j] += 0.5 * (gam + np.roll(gam, 1, axis=axk))
                else:
                    lo = [slice(None)] * vj.ndim
                    hi = [slice(None)] * vj.ndim
                    lo[axk] = slice(0, vj.shape[axk] - 1)
                    hi[axk] = slice(1, vj.shape[axk])
                    gam = c * (uj[tuple(lo)] * vj[tuple(hi)]
                               - uj[tuple(hi)] * vj[tuple(lo)])
                    pad = [(0, 0)] * vj.ndim
                    pad[axk] = (1, 1)
                    gp = np.pad(gam, pad)
                    n = vj.shape[axk]
                    a = [slice(None)] * vj.ndim
                    b = [slice(None)] * vj.ndim
                    a[axk] = slice(1, n + 1)
                    b[axk] = slice(0, n)
                    out[j] += 0.5 * (gp[tuple(a)] + gp[tuple(b)])
            else:
                axj = _ax(vj, spec, j)
                if spec.periodic:
                    gam = c * (np.roll(uj, 1, axis=axk) * vj
                               - uj * np.roll(vj, 1, axis=axk))
                    out[k] += 0.5 * (gam + np.roll(gam, -1, axis=axj))
                else:
                    # corner lattice: extent n_k+1 along k, n_j+1 along j
                    shape = list(vj.shape)
                    shape[axk] += 1
                    gam = np.zeros(shape, dtype=np.float64)
                    lo = [slice(None)] * vj.ndim
                    hi = [slice(None)] * vj.ndim
                    lo[axk] = slice(0, vj.shape[axk] - 1)
                    hi[axk] = slice(1, vj.shape[axk])
                    mid = [slice(None)] * vj.ndim
                    mid[axk] = slice(1, vj.shape[axk])
                    gam[tuple(mid)] = c * (uj[tuple(lo)] * vj[tuple(hi)]
                                           - uj[tuple(hi)] * vj[tuple(lo)])
                    a = [slice(None)] * vj.ndim
                    b = [slice(None)] * vj.ndim
                    a[axj] = slice(0, vj.shape[axj] - 1)
                    b[axj] = slice(1, vj.shape[axj])
                    out[k] += 0.5 * (gam[tuple(a)] + gam[tuple(b)])
    return tuple(_mask_wall(spec, o, k) for k, o in enumerate(out))


def self_adv_jacobian_T_apply(spec, vcomps, ucomps):
    """Transpose of the self-advection Jacobian applied to a face field u."""
    a = transport_face(spec, vcomps, ucomps)
    b = _adv_samples_adjoint(spec, vcomps, ucomps)
    return tuple(y - x for x, y in zip(a, b))
