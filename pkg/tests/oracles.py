"""Independent brute-force oracles used by the test-suite.

These deliberately avoid the library's own numerical paths: distances and
feasibility come from dense direction grids, minimum norms from dense
spatial grids.
"""

import math

import numpy as np


def unit_circle_grid(n=4096):
    ang = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def ellipsoid_support_grid(center, radius, shape_inv, directions):
    """Support values of {theta: ||theta-c||_V <= r} for each direction row."""
    lin = directions @ np.asarray(center)
    quad = np.einsum("nd,de,ne->n", directions, np.asarray(shape_inv), directions)
    return lin + radius * np.sqrt(np.maximum(quad, 0.0))


def hull_support_grid(ellipsoids, directions):
    """Support of Conv(union of ellipsoids): pointwise max of supports."""
    vals = [ellipsoid_support_grid(c, r, si, directions) for (c, r, si) in ellipsoids]
    return np.max(np.stack(vals, axis=0), axis=0)


def _directions_window(center_angle, half_width, n):
    ang = np.linspace(center_angle - half_width, center_angle + half_width, n)
    return np.stack([np.cos(ang), np.sin(ang)], axis=1), ang


def hull_distance_oracle(point, ellipsoids, n_dirs=8192):
    """Distance from point to the hull via support duality on a direction grid.

    dist = max(0, max_u [<u, p> - h_hull(u)]) over unit directions u, with a
    local second-stage refinement around the best coarse direction (the
    objective has first-order kinks, so a single-stage grid is too coarse).
    2-d only.
    """
    p = np.asarray(point)
    u = unit_circle_grid(n_dirs)
    q = u @ p - hull_support_grid(ellipsoids, u)
    i = int(np.argmax(q))
    best = float(q[i])
    width = 2.0 * np.pi / n_dirs
    ang = math.atan2(u[i, 1], u[i, 0])
    for _ in range(6):
        dirs, angs = _directions_window(ang, width, 4001)
        qs = dirs @ p - hull_support_grid(ellipsoids, dirs)
        j = int(np.argmax(qs))
        best = max(best, float(qs[j]))
        ang = float(angs[j])
        width /= 1000.0
    return max(0.0, best)


def feasibility_oracle(target, others, n_dirs=8192, band=0.0):
    """Direction-grid test: does some unit direction give the target
    ellipsoid a strictly larger support than every other ellipsoid?

    Returns (verdict, margin) where margin is the best support gap found
    (locally refined around the best coarse direction); verdicts within
    the +-band margin are considered borderline.  2-d only.
    """
    u = unit_circle_grid(n_dirs)
    t = ellipsoid_support_grid(*target, u)
    h = hull_support_grid(others, u)
    gaps = t - h
    i = int(np.argmax(gaps))
    margin = float(gaps[i])
    width = 2.0 * np.pi / n_dirs
    ang = math.atan2(u[i, 1], u[i, 0])
    for _ in range(6):
        dirs, angs = _directions_window(ang, width, 4001)
        gs = (ellipsoid_support_grid(*target, dirs)
              - hull_support_grid(others, dirs))
        j = int(np.argmax(gs))
        margin = max(margin, float(gs[j]))
        ang = float(angs[j])
        width /= 1000.0
    return margin > band, margin


def _soc_values_on_grid(constraints, zs):
    total = np.full(zs.shape[0], -np.inf)
    for (c, off, kappa, shape) in constraints:
        v = zs @ np.asarray(c) + off
        if kappa > 0:
            quad = np.einsum("nd,de,ne->n", zs, np.asarray(shape), zs)
            v = v + kappa * np.sqrt(np.maximum(quad, 0.0))
        total = np.maximum(total, v)
    return total


def min_norm_grid_oracle(constraints, base, margin=0.0, box=5.0, fine=1e-3):
    """Min-norm feasible y on a two-stage 2-d grid, final resolution `fine`.

    constraints: list of (linear, offset, cone_weight, shape) tuples defining
    <c, base+y> + kappa*||base+y||_shape + offset + margin <= 0.
    Returns (norm, y) or (None, None) when no feasible grid point exists.
    """
    base = np.asarray(base, dtype=float)
    cons = [(np.asarray(c), off + margin, kappa, shape)
            for (c, off, kappa, shape) in constraints]

    def best_on(ys):
        zs = base[None, :] + ys
        vals = _soc_values_on_grid(cons, zs)
        feas = vals <= 0.0
        if not np.any(feas):
            return None, None
        norms = np.linalg.norm(ys, axis=1)
        norms[~feas] = np.inf
        i = int(np.argmin(norms))
        return float(norms[i]), ys[i]

    coarse = 0.05
    g = np.arange(-box, box + coarse / 2, coarse)
    ys = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    n0, y0 = best_on(ys)
    if n0 is None:
        return None, None
    w = 3 * coarse
    g1 = np.arange(y0[0] - w, y0[0] + w + fine / 2, fine)
    g2 = np.arange(y0[1] - w, y0[1] + w + fine / 2, fine)
    ys = np.stack(np.meshgrid(g1, g2, indexing="ij"), axis=-1).reshape(-1, 2)
    n1, y1 = best_on(ys)
    if n1 is None or n0 < n1:
        return n0, y0
    return n1, y1


def _full_constraint_values(zs, deltas, kappas, shapes, kappa_t, shape_t,
                            margin):
    total = np.full(zs.shape[0], -np.inf)
    quad_t = np.einsum("nd,de,ne->n", zs, np.asarray(shape_t), zs)
    opt_t = kappa_t * np.sqrt(np.maximum(quad_t, 0.0))
    for c, kappa, shape in zip(deltas, kappas, shapes):
        quad = np.einsum("nd,de,ne->n", zs, np.asarray(shape), zs)
        v = zs @ np.asarray(c) + kappa * np.sqrt(np.maximum(quad, 0.0)) \
            - opt_t + margin
        total = np.maximum(total, v)
    return total


def min_norm_grid_oracle_full(deltas, kappas, shapes, kappa_t, shape_t, base,
                              margin, box=5.0, fine=1e-3):
    """Min-norm y for the exact optimistic-attack constraints on a 2-d
    grid.  The feasible set is nonconvex, so the fine stage refines around
    several coarse minima."""
    base = np.asarray(base, dtype=float)

    def best_on(ys, top=1):
        zs = base[None, :] + ys
        vals = _full_constraint_values(zs, deltas, kappas, shapes, kappa_t,
                                       shape_t, margin)
        feas = vals <= 0.0
        if not np.any(feas):
            return []
        norms = np.linalg.norm(ys, axis=1)
        norms[~feas] = np.inf
        order = np.argsort(norms)[:top]
        return [(float(norms[i]), ys[i]) for i in order if np.isfinite(norms[i])]

    coarse = 0.05
    g = np.arange(-box, box + coarse / 2, coarse)
    ys = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    seeds = best_on(ys, top=60)
    if not seeds:
        return None, None
    # keep spatially distinct coarse minima
    picked = []
    for norm_val, y in seeds:
        if all(np.linalg.norm(y - q) > 4 * coarse for _, q in picked):
            picked.append((norm_val, y))
        if len(picked) >= 5:
            break
    best = picked[0]
    for _, y0 in picked:
        w = 3 * coarse
        g1 = np.arange(y0[0] - w, y0[0] + w + fine / 2, fine)
        g2 = np.arange(y0[1] - w, y0[1] + w + fine / 2, fine)
        ys = np.stack(np.meshgrid(g1, g2, indexing="ij"), axis=-1).reshape(-1, 2)
        fine_best = best_on(ys)
        if fine_best and fine_best[0][0] < best[0]:
            best = fine_best[0]
    return best


def random_spd(rng, d, eig_low=0.4, eig_high=3.0):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    eigs = rng.uniform(eig_low, eig_high, size=d)
    return (q * eigs) @ q.T
