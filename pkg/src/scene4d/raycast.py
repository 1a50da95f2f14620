"""Ray-triangle intersection (Moller-Trumbore), scalar and batched.

Both triangle orientations are accepted; hits require t > 1e-9 so a ray
never re-hits the surface it starts on. Barycentric weights are returned
as (b0, b1, b2) for vertices (v0, v1, v2), so the hit point is
b0*v0 + b1*v1 + b2*v2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_DET_EPS = 1e-12
_BARY_EPS = 1e-9
_T_MIN = 1e-9


@dataclass
class RayHit:
    t: float
    bary: np.ndarray  # (3,) weights summing to 1


def raycast(origin, direction, triangle) -> RayHit | None:
    """Intersect one ray with one triangle; None means a miss.

    `triangle` is (v0, v1, v2) as a (3, 3) array-like. The returned t is
    in units of `direction` (which need not be normalized).
    """
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    direction = np.asarray(direction, dtype=np.float64).reshape(3)
    tri = np.asarray(triangle, dtype=np.float64).reshape(3, 3)
    if not np.any(direction):
        raise ValueError("ray direction must be nonzero")

    e1 = tri[1] - tri[0]
    e2 = tri[2] - tri[0]
    pvec = np.cross(direction, e2)
    det = float(e1 @ pvec)
    if abs(det) < _DET_EPS:
        return None
    inv_det = 1.0 / det
    tvec = origin - tri[0]
    b1 = float(tvec @ pvec) * inv_det
    if b1 < -_BARY_EPS or b1 > 1.0 + _BARY_EPS:
        return None
    qvec = np.cross(tvec, e1)
    b2 = float(direction @ qvec) * inv_det
    if b2 < -_BARY_EPS or b1 + b2 > 1.0 + _BARY_EPS:
        return None
    t = float(e2 @ qvec) * inv_det
    if t <= _T_MIN:
        return None
    return RayHit(t=t, bary=np.array([1.0 - b1 - b2, b1, b2]))


def raycast_batch(origin, directions, triangles):
    """All rays from one origin against all triangles; nearest hit per ray.

    directions: (n, 3), triangles: (m, 3, 3). Returns
    (t, tri_index, bary) with t = inf and tri_index = -1 for misses.
    Ties on t resolve to the lowest triangle index.
    """
    dirs = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    tris = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    n, m = dirs.shape[0], tris.shape[0]
    if m == 0:
        return (np.full(n, np.inf), np.full(n, -1, dtype=np.int64),
                np.zeros((n, 3)))

    e1 = tris[:, 1] - tris[:, 0]            # (m, 3)
    e2 = tris[:, 2] - tris[:, 0]
    pvec = np.cross(dirs[:, None, :], e2[None, :, :])       # (n, m, 3)
    det = np.einsum("mk,nmk->nm", e1, pvec)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_det = np.where(np.abs(det) >= _DET_EPS, 1.0 / det, 0.0)
    tvec = origin[None, :] - tris[:, 0]                      # (m, 3)
    b1 = np.einsum("mk,nmk->nm", tvec, pvec) * inv_det
    qvec = np.cross(tvec, e1)                                # (m, 3)
    b2 = np.einsum("nk,mk->nm", dirs, qvec) * inv_det
    t = np.einsum("mk,mk->m", e2, qvec)[None, :] * inv_det

    ok = (np.abs(det) >= _DET_EPS) \
        & (b1 >= -_BARY_EPS) & (b2 >= -_BARY_EPS) \
        & (b1 + b2 <= 1.0 + _BARY_EPS) & (t > _T_MIN)
    t = np.where(ok, t, np.inf)
    idx = np.argmin(t, axis=1)
    rows = np.arange(n)
    best_t = t[rows, idx]
    hit = np.isfinite(best_t)
    tri_index = np.where(hit, idx, -1).astype(np.int64)
    bb1 = np.where(hit, b1[rows, idx], 0.0)
    bb2 = np.where(hit, b2[rows, idx], 0.0)
    bary = np.stack([1.0 - bb1 - bb2, bb1, bb2], axis=1)
    bary[~hit] = 0.0
    return best_t, tri_index, bary
