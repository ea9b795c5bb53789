"""Shared brute-force oracles: matrix probing and dense solves on tiny grids."""

import numpy as np

from smokectrl.fields import GridSpec, zero_boundary_faces


def probe_matrix(apply_fn, n_in, n_out):
    """Assemble the dense matrix of a linear map by unit-vector probing."""
    a = np.zeros((n_out, n_in))
    e = np.zeros(n_in)
    for j in range(n_in):
        e[j] = 1.0
        a[:, j] = apply_fn(e)
        e[j] = 0.0
    return a


def pack_comps(comps):
    return np.concatenate([c.reshape(-1) for c in comps])


def unpack_comps(spec, x):
    comps = []
    ofs = 0
    for k in range(spec.dim):
        shape = spec.face_shape(k)
        n = int(np.prod(shape))
        comps.append(x[ofs:ofs + n].reshape(shape))
        ofs += n
    return tuple(comps)


def random_scalar(spec, rng, scale=1.0):
    return scale * rng.standard_normal(spec.res)


def random_vector(spec, rng, scale=1.0, zero_walls=True):
    comps = tuple(scale * rng.standard_normal(spec.face_shape(k))
                  for k in range(spec.dim))
    if zero_walls and not spec.periodic:
        comps = zero_boundary_faces(spec, comps)
    return comps


def smooth_vector(spec, rng, scale=0.1, modes=2, zero_walls=True):
    """Band-limited random face field (sum of low Fourier modes)."""
    comps = []
    for k in range(spec.dim):
        shape = spec.face_shape(k)
        grids = np.meshgrid(*[np.arange(s) / spec.res[i]
                              for i, s in enumerate(shape)], indexing="ij")
        c = np.zeros(shape)
        for _ in range(modes):
            kv = rng.integers(1, 4, size=spec.dim)
            ph = rng.uniform(0, 2 * np.pi, size=spec.dim)
            wave = np.ones(shape)
            for i in range(spec.dim):
                wave = wave * np.sin(2 * np.pi * kv[i] * grids[i] + ph[i])
            c += rng.standard_normal() * wave
        comps.append(c)
    m = max(np.max(np.abs(c)) for c in comps)
    comps = tuple(scale * c / max(m, 1e-30) for c in comps)
    if zero_walls and not spec.periodic:
        comps = zero_boundary_faces(spec, comps)
    return comps
