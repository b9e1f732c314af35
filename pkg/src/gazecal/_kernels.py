"""Compiled inner loops: BVH ray casting, batched cluster costs, window scan.

Everything here works on plain arrays so numba can compile it; the public
modules wrap these with validated, documented entry points.
"""

import math

import numba as nb
import numpy as np

jit = nb.njit(cache=True, nogil=True, error_model="numpy")

HIT_EPS = 1e-9  # metres along the ray
STACK_SIZE = 64


@jit
def ray_setup(dx, dy, dz):
    """Axis permutation and shear for the watertight triangle test."""
    ad0, ad1, ad2 = abs(dx), abs(dy), abs(dz)
    if ad0 >= ad1 and ad0 >= ad2:
        kz = 0
        dk = dx
    elif ad1 >= ad2:
        kz = 1
        dk = dy
    else:
        kz = 2
        dk = dz
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if dk < 0.0:
        kx, ky = ky, kx
    sz = 1.0 / dk
    return kx, ky, kz, _pick(dx, dy, dz, kx) * sz, _pick(dx, dy, dz, ky) * sz, sz


@jit
def _pick(a, b, c, i):
    if i == 0:
        return a
    if i == 1:
        return b
    return c


@jit
def tri_hit(o, kx, ky, kz, sx, sy, sz, tri, tmin, tmax):
    """Watertight ray/triangle test (Woop, Benthin & Wald 2013).

    Returns the ray parameter of the hit or ``inf``. Both faces count.
    """
    az = tri[0, kz] - o[kz]
    bz = tri[1, kz] - o[kz]
    cz = tri[2, kz] - o[kz]
    axs = tri[0, kx] - o[kx] - sx * az
    ays = tri[0, ky] - o[ky] - sy * az
    bxs = tri[1, kx] - o[kx] - sx * bz
    bys = tri[1, ky] - o[ky] - sy * bz
    cxs = tri[2, kx] - o[kx] - sx * cz
    cys = tri[2, ky] - o[ky] - sy * cz

    u = cxs * bys - cys * bxs
    v = axs * cys - ays * cxs
    w = bxs * ays - bys * axs
    if (u < 0.0 or v < 0.0 or w < 0.0) and (u > 0.0 or v > 0.0 or w > 0.0):
        return np.inf
    det = u + v + w
    if det == 0.0:
        return np.inf
    t = (u * az + v * bz + w * cz) * sz / det
    if t <= tmin or t >= tmax:
        return np.inf
    return t


@jit
def box_entry(ox, oy, oz, ix, iy, iz, bmin, bmax, tmax):
    t0 = 0.0
    t1 = tmax
    lo = (bmin[0] - ox) * ix
    hi = (bmax[0] - ox) * ix
    if lo > hi:
        lo, hi = hi, lo
    # NaN from 0 * inf means the origin lies on the slab plane: treat as inside
    if lo == lo and lo > t0:
        t0 = lo
    if hi == hi and hi < t1:
        t1 = hi
    lo = (bmin[1] - oy) * iy
    hi = (bmax[1] - oy) * iy
    if lo > hi:
        lo, hi = hi, lo
    if lo == lo and lo > t0:
        t0 = lo
    if hi == hi and hi < t1:
        t1 = hi
    lo = (bmin[2] - oz) * iz
    hi = (bmax[2] - oz) * iz
    if lo > hi:
        lo, hi = hi, lo
    if lo == lo and lo > t0:
        t0 = lo
    if hi == hi and hi < t1:
        t1 = hi
    # pad by a relative ulp-scale margin so grazing hits are not culled
    if t0 > t1 * (1.0 + 1e-12) + 1e-15:
        return np.inf
    return t0


@jit
def closest_hit(ox, oy, oz, dx, dy, dz, tris, nmin, nmax, nleft, nstart, ncount, stack, o):
    """Nearest hit along ``o + t d``. Returns ``(t, triangle)`` or ``(inf, -1)``.

    ``stack`` (int64, ``STACK_SIZE``) and ``o`` (float, 3) are scratch buffers.
    """
    o[0] = ox
    o[1] = oy
    o[2] = oz
    kx, ky, kz, sx, sy, sz = ray_setup(dx, dy, dz)
    norm = math.sqrt(dx * dx + dy * dy + dz * dz)
    tmin = HIT_EPS / norm
    ix = 1.0 / dx
    iy = 1.0 / dy
    iz = 1.0 / dz
    best_t = np.inf
    best_k = -1
    sp = 0
    if box_entry(ox, oy, oz, ix, iy, iz, nmin[0], nmax[0], best_t) < np.inf:
        stack[0] = 0
        sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        left = nleft[node]
        if left < 0:
            s = nstart[node]
            for k in range(s, s + ncount[node]):
                t = tri_hit(o, kx, ky, kz, sx, sy, sz, tris[k], tmin, best_t)
                if t < best_t:
                    best_t = t
                    best_k = k
            continue
        right = left + 1
        tl = box_entry(ox, oy, oz, ix, iy, iz, nmin[left], nmax[left], best_t)
        tr = box_entry(ox, oy, oz, ix, iy, iz, nmin[right], nmax[right], best_t)
        # push the farther child first so the nearer one is popped next
        if tl <= tr:
            if tr < np.inf:
                stack[sp] = right
                sp += 1
            if tl < np.inf:
                stack[sp] = left
                sp += 1
        else:
            if tl < np.inf:
                stack[sp] = left
                sp += 1
            if tr < np.inf:
                stack[sp] = right
                sp += 1
    return best_t, best_k


@jit
def cast_rays(origins, dirs, tris, nmin, nmax, nleft, nstart, ncount):
    n = origins.shape[0]
    ts = np.empty(n)
    ks = np.empty(n, dtype=np.int64)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    o = np.empty(3)
    for i in range(n):
        t, k = closest_hit(origins[i, 0], origins[i, 1], origins[i, 2],
                           dirs[i, 0], dirs[i, 1], dirs[i, 2],
                           tris, nmin, nmax, nleft, nstart, ncount, stack, o)
        ts[i] = t
        ks[i] = k
    return ts, ks


@jit
def offset_matrix(alpha_deg, beta_deg, inverse):
    a = math.radians(alpha_deg)
    b = math.radians(beta_deg)
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(b), math.sin(b)
    m = np.empty((3, 3))
    # Rx(b) @ Ry(a)
    m[0, 0] = ca
    m[0, 1] = 0.0
    m[0, 2] = sa
    m[1, 0] = -sb * sa
    m[1, 1] = cb
    m[1, 2] = sb * ca
    m[2, 0] = -cb * sa
    m[2, 1] = -sb
    m[2, 2] = cb * ca
    if inverse:
        return m.T.copy()
    return m


@jit
def cluster_costs(thetas, inverse, g, rot, pos, offsets, centers,
                  tris, nmin, nmax, nleft, nstart, ncount):
    """Per-cluster mean squared reprojection error for a batch of parameters.

    ``g``/``rot``/``pos`` hold the cluster frames back to back; cluster ``j``
    owns rows ``offsets[j]:offsets[j+1]`` and is projected onto the camera of
    row ``centers[j]``. Returns ``(costs, valid)`` of shape ``(B, N)``; a
    cluster with any missed or behind-camera frame gets ``cost = nan``.
    """
    nb_ = thetas.shape[0]
    nclu = offsets.shape[0] - 1
    costs = np.empty((nb_, nclu))
    valid = np.zeros((nb_, nclu), dtype=np.int64)
    xs = np.empty((g.shape[0], 2))
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    o = np.empty(3)
    for b in range(nb_):
        m = offset_matrix(thetas[b, 0], thetas[b, 1], inverse)
        for j in range(nclu):
            c = centers[j]
            ok = 0
            nfr = offsets[j + 1] - offsets[j]
            for k in range(offsets[j], offsets[j + 1]):
                hx = m[0, 0] * g[k, 0] + m[0, 1] * g[k, 1] + m[0, 2] * g[k, 2]
                hy = m[1, 0] * g[k, 0] + m[1, 1] * g[k, 1] + m[1, 2] * g[k, 2]
                hz = m[2, 0] * g[k, 0] + m[2, 1] * g[k, 1] + m[2, 2] * g[k, 2]
                if hz <= 1e-12:
                    continue
                r = rot[k]
                dx = r[0, 0] * hx + r[0, 1] * hy + r[0, 2] * hz
                dy = r[1, 0] * hx + r[1, 1] * hy + r[1, 2] * hz
                dz = r[2, 0] * hx + r[2, 1] * hy + r[2, 2] * hz
                t, tri = closest_hit(pos[k, 0], pos[k, 1], pos[k, 2], dx, dy, dz,
                                     tris, nmin, nmax, nleft, nstart, ncount, stack, o)
                if tri < 0:
                    continue
                px = pos[k, 0] + t * dx - pos[c, 0]
                py = pos[k, 1] + t * dy - pos[c, 1]
                pz = pos[k, 2] + t * dz - pos[c, 2]
                rc = rot[c]
                qx = rc[0, 0] * px + rc[1, 0] * py + rc[2, 0] * pz
                qy = rc[0, 1] * px + rc[1, 1] * py + rc[2, 1] * pz
                qz = rc[0, 2] * px + rc[1, 2] * py + rc[2, 2] * pz
                if qz <= 0.0:
                    continue
                xs[ok, 0] = qx / qz
                xs[ok, 1] = qy / qz
                ok += 1
            valid[b, j] = ok
            if ok < nfr:
                costs[b, j] = np.nan
                continue
            # shift by the first point so identical points cost exactly zero
            x0 = xs[0, 0]
            y0 = xs[0, 1]
            mx = 0.0
            my = 0.0
            for i in range(ok):
                mx += xs[i, 0] - x0
                my += xs[i, 1] - y0
            mx /= ok
            my /= ok
            acc = 0.0
            for i in range(ok):
                ex = xs[i, 0] - x0 - mx
                ey = xs[i, 1] - y0 - my
                acc += ex * ex + ey * ey
            costs[b, j] = acc / ok
    return costs, valid


@jit
def center_index(s, e, wdir):
    """Row in ``[s, e)`` whose unit world gaze is nearest the window mean."""
    mx = 0.0
    my = 0.0
    mz = 0.0
    for k in range(s, e):
        mx += wdir[k, 0]
        my += wdir[k, 1]
        mz += wdir[k, 2]
    n = e - s
    mx /= n
    my /= n
    mz /= n
    best = s
    best_d = np.inf
    for k in range(s, e):
        ex = wdir[k, 0] - mx
        ey = wdir[k, 1] - my
        ez = wdir[k, 2] - mz
        dd = ex * ex + ey * ey + ez * ez
        if dd < best_d:
            best_d = dd
            best = k
    return best


@jit
def max_dispersion(s, e, c, hits, rot, pos):
    """Largest squared distance of a reprojected PoR from the window mean.

    Returns ``inf`` when a PoR lands behind the center camera.
    """
    n = e - s
    xs = np.empty((n, 2))
    for i in range(n):
        k = s + i
        px = hits[k, 0] - pos[c, 0]
        py = hits[k, 1] - pos[c, 1]
        pz = hits[k, 2] - pos[c, 2]
        rc = rot[c]
        qx = rc[0, 0] * px + rc[1, 0] * py + rc[2, 0] * pz
        qy = rc[0, 1] * px + rc[1, 1] * py + rc[2, 1] * pz
        qz = rc[0, 2] * px + rc[1, 2] * py + rc[2, 2] * pz
        if qz <= 0.0:
            return np.inf
        xs[i, 0] = qx / qz
        xs[i, 1] = qy / qz
    mx = 0.0
    my = 0.0
    for i in range(n):
        mx += xs[i, 0]
        my += xs[i, 1]
    mx /= n
    my /= n
    worst = 0.0
    for i in range(n):
        ex = xs[i, 0] - mx
        ey = xs[i, 1] - my
        dd = ex * ex + ey * ey
        if dd > worst:
            worst = dd
    return worst


@jit
def window_ok(s, e, times, max_gap, cos_pair, cos_th, use_ivt,
              hit_ok, wdir, hits, rot, pos, d_th, use_idt):
    for k in range(s + 1, e):
        if times[k] - times[k - 1] > max_gap:
            return False
    if use_ivt:
        for k in range(s + 1, e):
            if not cos_pair[k] > cos_th:
                return False
    if use_idt:
        for k in range(s, e):
            if not hit_ok[k]:
                return False
        c = center_index(s, e, wdir)
        if not max_dispersion(s, e, c, hits, rot, pos) < d_th:
            return False
    return True


@jit
def scan_windows(m, times, max_gap, cos_pair, cos_th, use_ivt,
                 hit_ok, wdir, hits, rot, pos, d_th, use_idt):
    """Moving-window fixation protocol over ``n`` (blink-filtered) frames.

    Returns ``(starts, stops, centers, count)``; only the first ``count``
    entries are meaningful. Stops are exclusive.
    """
    n = times.shape[0]
    starts = np.empty(n, dtype=np.int64)
    stops = np.empty(n, dtype=np.int64)
    centers = np.empty(n, dtype=np.int64)
    count = 0
    s = 0
    while s + m <= n:
        e = s + m
        if not window_ok(s, e, times, max_gap, cos_pair, cos_th, use_ivt,
                         hit_ok, wdir, hits, rot, pos, d_th, use_idt):
            s += 1
            continue
        while e < n and window_ok(s, e + 1, times, max_gap, cos_pair, cos_th, use_ivt,
                                  hit_ok, wdir, hits, rot, pos, d_th, use_idt):
            e += 1
        starts[count] = s
        stops[count] = e
        centers[count] = center_index(s, e, wdir)
        count += 1
        s = e
    return starts, stops, centers, count
