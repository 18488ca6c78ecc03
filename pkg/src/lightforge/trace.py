"""Numba path-tracing kernels.

Internal module: everything here works on flat arrays prepared by
``render``. The estimator is NEE + BRDF sampling combined with the balance
heuristic for area and environment lights; point lights are delta lights
and always go through NEE. A constant ambient term is added whenever a ray
escapes, at full throughput, so it is invisible to estimator-mode switches.

Determinism: every sample owns a counter-based RNG stream keyed on
(seed, pixel, sample, retry), so images are bit-identical for a fixed seed
regardless of tile size or thread count. Samples that come back non-finite
are retried on a fresh substream a bounded number of times and counted.

The first-vertex light/BRDF draws are stratified over the sample index
(jittered strata, no permutation needed since strata are summed); direct
lighting converges well below the generic 1/N rate as a result.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from .brdf import brdf_eval_core, brdf_pdf_core, brdf_sample_core

U64 = np.uint64
_GAMMA = U64(0x9E3779B97F4A7C15)
_MUL1 = U64(0xBF58476D1CE4E5B9)
_MUL2 = U64(0x94D049BB133111EB)
_MUL3 = U64(0xD6E8FEB86659FD93)
_INV_2_53 = 1.1102230246251565e-16     # 2^-53

MAX_NAN_RETRIES = 8
_RAY_EPS = 1e-7
_STACK_DEPTH = 96

MODE_MIS = 0
MODE_NEE_ONLY = 1
MODE_BRDF_ONLY = 2


# ---------------------------------------------------------------------------
# counter RNG (splitmix64)
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always", fastmath={'contract', 'reassoc', 'arcp'})
def _mix64(z):
    z = (z ^ (z >> U64(30))) * _MUL1
    z = (z ^ (z >> U64(27))) * _MUL2
    return z ^ (z >> U64(31))


@njit(cache=True, inline="always", fastmath={'contract', 'reassoc', 'arcp'})
def _rng_init(seed, pixel, sample, retry):
    z = _mix64(seed + _GAMMA)
    z = _mix64(z ^ (pixel * _MUL1 + _GAMMA))
    z = _mix64(z ^ (sample * _MUL2 + _GAMMA))
    z = _mix64(z ^ (retry * _MUL3 + _GAMMA))
    return z


@njit(cache=True, inline="always", fastmath={'contract', 'reassoc', 'arcp'})
def _rng_next(state):
    state = state + _GAMMA
    z = _mix64(state)
    return state, np.float64(z >> U64(11)) * _INV_2_53


# ---------------------------------------------------------------------------
# BVH traversal
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always", fastmath={'contract', 'reassoc', 'arcp'})
def _aabb_entry(node_min, node_max, node, ox, oy, oz, ix, iy, iz, t_max):
    """Entry distance of the ray into node's box, or inf on a miss."""
    t1 = (node_min[node, 0] - ox) * ix
    t2 = (node_max[node, 0] - ox) * ix
    tn = min(t1, t2)
    tf = max(t1, t2)
    t1 = (node_min[node, 1] - oy) * iy
    t2 = (node_max[node, 1] - oy) * iy
    tn = max(tn, min(t1, t2))
    tf = min(tf, max(t1, t2))
    t1 = (node_min[node, 2] - oz) * iz
    t2 = (node_max[node, 2] - oz) * iz
    tn = max(tn, min(t1, t2))
    tf = min(tf, max(t1, t2))
    if tn > tf or tf < 0.0 or tn > t_max:
        return math.inf
    return tn


@njit(cache=True, inline="always", fastmath={'contract', 'reassoc', 'arcp'})
def _tri_hit(tri_v0, tri_e1, tri_e2, k, ox, oy, oz, dx, dy, dz, t_min, t_max):
    """Moller-Trumbore; returns (t, u, v) with t = inf on a miss."""
    e1x = tri_e1[k, 0]
    e1y = tri_e1[k, 1]
    e1z = tri_e1[k, 2]
    e2x = tri_e2[k, 0]
    e2y = tri_e2[k, 1]
    e2z = tri_e2[k, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-14:
        return math.inf, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - tri_v0[k, 0]
    sy = oy - tri_v0[k, 1]
    sz = oz - tri_v0[k, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return math.inf, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return math.inf, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t < t_min or t > t_max:
        return math.inf, 0.0, 0.0
    return t, u, v


@njit(cache=True, fastmath={'contract', 'reassoc', 'arcp'})
def bvh_closest(node_min, node_max, node_right, node_start, node_count,
                tri_v0, tri_e1, tri_e2,
                ox, oy, oz, dx, dy, dz, t_min, t_max, stack, tstack):
    """Closest hit: (t, leaf_tri_index, u, v); tri index -1 on a miss."""
    # finite fallback keeps 0 * inv from going NaN for on-plane origins
    ix = 1.0 / dx if abs(dx) > 1e-300 else (1e300 if dx >= 0.0 else -1e300)
    iy = 1.0 / dy if abs(dy) > 1e-300 else (1e300 if dy >= 0.0 else -1e300)
    iz = 1.0 / dz if abs(dz) > 1e-300 else (1e300 if dz >= 0.0 else -1e300)
    best_t = t_max
    best_k = -1
    best_u = 0.0
    best_v = 0.0
    if _aabb_entry(node_min, node_max, 0, ox, oy, oz, ix, iy, iz, best_t) == math.inf:
        return math.inf, -1, 0.0, 0.0
    node = 0
    sp = 0
    while True:
        count = node_count[node]
        if count > 0:
            start = node_start[node]
            for k in range(start, start + count):
                t, u, v = _tri_hit(tri_v0, tri_e1, tri_e2, k,
                                   ox, oy, oz, dx, dy, dz, t_min, best_t)
                if t < best_t:
                    best_t = t
                    best_k = k
                    best_u = u
                    best_v = v
            # pop
            node = -1
            while sp > 0:
                sp -= 1
                if tstack[sp] <= best_t:
                    node = stack[sp]
                    break
            if node < 0:
                break
        else:
            left = node + 1
            right = node_right[node]
            tl = _aabb_entry(node_min, node_max, left, ox, oy, oz, ix, iy, iz, best_t)
            tr = _aabb_entry(node_min, node_max, right, ox, oy, oz, ix, iy, iz, best_t)
            if tl > tr:
                left, right = right, left
                tl, tr = tr, tl
            if tl == math.inf:
                node = -1
                while sp > 0:
                    sp -= 1
                    if tstack[sp] <= best_t:
                        node = stack[sp]
                        break
                if node < 0:
                    break
            else:
                node = left
                if tr != math.inf:
                    stack[sp] = right
                    tstack[sp] = tr
                    sp += 1
    if best_k >= 0 and best_t < t_max:
        return best_t, best_k, best_u, best_v
    return math.inf, -1, 0.0, 0.0


@njit(cache=True, fastmath={'contract', 'reassoc', 'arcp'})
def bvh_occluded(node_min, node_max, node_right, node_start, node_count,
                 tri_v0, tri_e1, tri_e2,
                 ox, oy, oz, dx, dy, dz, t_min, t_max, stack):
    """Any-hit within (t_min, t_max)."""
    # finite fallback keeps 0 * inv from going NaN for on-plane origins
    ix = 1.0 / dx if abs(dx) > 1e-300 else (1e300 if dx >= 0.0 else -1e300)
    iy = 1.0 / dy if abs(dy) > 1e-300 else (1e300 if dy >= 0.0 else -1e300)
    iz = 1.0 / dz if abs(dz) > 1e-300 else (1e300 if dz >= 0.0 else -1e300)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _aabb_entry(node_min, node_max, node, ox, oy, oz, ix, iy, iz, t_max) == math.inf:
            continue
        count = node_count[node]
        if count > 0:
            start = node_start[node]
            for k in range(start, start + count):
                t, u, v = _tri_hit(tri_v0, tri_e1, tri_e2, k,
                                   ox, oy, oz, dx, dy, dz, t_min, t_max)
                if t != math.inf:
                    return True
        else:
            stack[sp] = node + 1
            sp += 1
            stack[sp] = node_right[node]
            sp += 1
    return False


# ---------------------------------------------------------------------------
# environment lookups (scalar ports of the lighting-module versions)
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always", fastmath={'contract', 'reassoc', 'arcp'})
def env_eval_dir(tex, rotation, dx, dy, dz):
    h = tex.shape[0]
    w = tex.shape[1]
    theta = math.acos(min(1.0, max(-1.0, dy)))
    phi = math.atan2(dz, dx) % (2.0 * math.pi)
    u = ((phi - rotation) / (2.0 * math.pi)) % 1.0
    v = theta / math.pi
    x = u * w - 0.5
    y = v * h - 0.5
    j0 = int(math.floor(x))
    i0 = int(math.floor(y))
    fx = x - j0
    fy = y - i0
    j0w = j0 % w
    j1w = (j0 + 1) % w
    i0c = min(max(i0, 0), h - 1)
    i1c = min(max(i0 + 1, 0), h - 1)
    gx = 1.0 - fx
    gy = 1.0 - fy
    r = (tex[i0c, j0w, 0] * gx + tex[i0c, j1w, 0] * fx) * gy + \
        (tex[i1c, j0w, 0] * gx + tex[i1c, j1w, 0] * fx) * fy
    g = (tex[i0c, j0w, 1] * gx + tex[i0c, j1w, 1] * fx) * gy + \
        (tex[i1c, j0w, 1] * gx + tex[i1c, j1w, 1] * fx) * fy
    b = (tex[i0c, j0w, 2] * gx + tex[i0c, j1w, 2] * fx) * gy + \
        (tex[i1c, j0w, 2] * gx + tex[i1c, j1w, 2] * fx) * fy
    return r, g, b


@njit(cache=True, inline="always", fastmath={'contract', 'reassoc', 'arcp'})
def env_pdf_dir(pdf_map, rotation, dx, dy, dz):
    h = pdf_map.shape[0]
    w = pdf_map.shape[1]
    theta = math.acos(min(1.0, max(-1.0, dy)))
    phi = math.atan2(dz, dx) % (2.0 * math.pi)
    u = ((phi - rotation) / (2.0 * math.pi)) % 1.0
    v = theta / math.pi
    i = min(int(v * h), h - 1)
    j = min(int(u * w), w - 1)
    return pdf_map[i, j]


@njit(cache=True, inline="always", fastmath={'contract', 'reassoc', 'arcp'})
def env_sample_dir(row_cdf, cond_cdf, cos_edges, pdf_map, rotation,
                   u1, u2, u3, u4):
    h = row_cdf.shape[0]
    w = cond_cdf.shape[1]
    row = np.searchsorted(row_cdf, u1, side="left")
    if row > h - 1:
        row = h - 1
    col = np.searchsorted(cond_cdf[row], u2, side="left")
    if col > w - 1:
        col = w - 1
    ctop = cos_edges[row]
    cbot = cos_edges[row + 1]
    cos_t = ctop + u3 * (cbot - ctop)
    cos_t = min(1.0, max(-1.0, cos_t))
    sin_t = math.sqrt(1.0 - cos_t * cos_t)
    phi = ((col + u4) * (2.0 * math.pi / w) + rotation) % (2.0 * math.pi)
    dx = sin_t * math.cos(phi)
    dy = cos_t
    dz = sin_t * math.sin(phi)
    return dx, dy, dz, pdf_map[row, col]


# ---------------------------------------------------------------------------
# area-light quad
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always", fastmath={'contract', 'reassoc', 'arcp'})
def _quad_hit(c0, eu, ev, n, ilu2, ilv2, ox, oy, oz, dx, dy, dz, t_min, t_max):
    """Front-face hit distance, or inf. Back-face hits pass through."""
    denom = dx * n[0] + dy * n[1] + dz * n[2]
    if denom >= -1e-12:
        return math.inf
    t = ((c0[0] - ox) * n[0] + (c0[1] - oy) * n[1] + (c0[2] - oz) * n[2]) / denom
    if t < t_min or t > t_max:
        return math.inf
    qx = ox + t * dx - c0[0]
    qy = oy + t * dy - c0[1]
    qz = oz + t * dz - c0[2]
    su = (qx * eu[0] + qy * eu[1] + qz * eu[2]) * ilu2
    if su < 0.0 or su > 1.0:
        return math.inf
    sv = (qx * ev[0] + qy * ev[1] + qz * ev[2]) * ilv2
    if sv < 0.0 or sv > 1.0:
        return math.inf
    return t


# ---------------------------------------------------------------------------
# the render kernel
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True, fastmath={'contract', 'reassoc', 'arcp'})
def render_kernel(out_rgb, out_alpha, tile_nan, tile_clamp,
                  width, height, tile, n_tiles_x, n_tiles,
                  eye, cright, cup, cfwd, focal,
                  spp, max_bounces, seed, clamp_ind, mode,
                  node_min, node_max, node_right, node_start, node_count,
                  tri_v0, tri_e1, tri_e2, tri_n0, tri_n1, tri_n2, tri_gn,
                  mat,
                  point_pos, point_int,
                  has_area, a_c0, a_eu, a_ev, a_n, a_rad, a_area, a_ilu2, a_ilv2,
                  ambient,
                  has_env, env_tex, env_row_cdf, env_cond_cdf, env_cos_edges,
                  env_pdf_map, env_rot):
    m_br = mat[0]
    m_bg = mat[1]
    m_bb = mat[2]
    m_ro = mat[3]
    m_me = mat[4]
    m_st = mat[5]
    m_sp = mat[6]
    n_points = point_pos.shape[0]
    n_strat = int(math.sqrt(spp) + 0.5)
    two_d = n_strat * n_strat == spp
    inv_spp = 1.0 / spp
    seed_u = U64(seed)

    for ti in prange(n_tiles):
        stack = np.empty(_STACK_DEPTH, np.int32)
        tstack = np.empty(_STACK_DEPTH, np.float64)
        ty = ti // n_tiles_x
        tx = ti - ty * n_tiles_x
        x0 = tx * tile
        y0 = ty * tile
        x1 = min(x0 + tile, width)
        y1 = min(y0 + tile, height)
        nan_ct = 0
        clamp_ct = 0
        for py in range(y0, y1):
            for px in range(x0, x1):
                pix_u = U64(py * width + px)
                acc_r = 0.0
                acc_g = 0.0
                acc_b = 0.0
                acc_hit = 0.0
                for s in range(spp):
                    samp_u = U64(s)
                    # stratum coordinates for the first-vertex draws
                    if two_d:
                        s_a = float(s % n_strat)
                        s_b = float(s // n_strat)
                        strat_n = float(n_strat)
                    else:
                        s_a = float(s)
                        s_b = 0.0
                        strat_n = float(spp)
                    sam_r = 0.0
                    sam_g = 0.0
                    sam_b = 0.0
                    sam_hit = 0.0
                    sam_clamped = 0
                    ok = False
                    for retry in range(MAX_NAN_RETRIES):
                        st = _rng_init(seed_u, pix_u, samp_u, U64(retry))
                        sam_r = 0.0
                        sam_g = 0.0
                        sam_b = 0.0
                        sam_hit = 0.0
                        sam_clamped = 0

                        # camera ray through the pixel
                        if spp == 1:
                            jx = 0.5
                            jy = 0.5
                        else:
                            st, jx = _rng_next(st)
                            st, jy = _rng_next(st)
                        xc = (px + jx - width * 0.5) / focal
                        yc = (height * 0.5 - (py + jy)) / focal
                        dx = cright[0] * xc + cup[0] * yc + cfwd[0]
                        dy = cright[1] * xc + cup[1] * yc + cfwd[1]
                        dz = cright[2] * xc + cup[2] * yc + cfwd[2]
                        dl = math.sqrt(dx * dx + dy * dy + dz * dz)
                        dx /= dl
                        dy /= dl
                        dz /= dl
                        ox = eye[0]
                        oy = eye[1]
                        oz = eye[2]

                        tp_r = 1.0
                        tp_g = 1.0
                        tp_b = 1.0
                        depth = 0          # rays cast so far from surfaces
                        prev_pdf = 0.0     # BRDF pdf that generated this ray
                        alive = True
                        while alive:
                            t_hit, k_hit, bu, bv = bvh_closest(
                                node_min, node_max, node_right, node_start,
                                node_count, tri_v0, tri_e1, tri_e2,
                                ox, oy, oz, dx, dy, dz, _RAY_EPS, math.inf,
                                stack, tstack)
                            t_quad = math.inf
                            if has_area == 1:
                                t_quad = _quad_hit(a_c0, a_eu, a_ev, a_n,
                                                   a_ilu2, a_ilv2,
                                                   ox, oy, oz, dx, dy, dz,
                                                   _RAY_EPS, t_hit)

                            if t_quad < t_hit:
                                # visible emitter
                                if depth == 0 or mode == MODE_BRDF_ONLY:
                                    w = 1.0
                                elif mode == MODE_NEE_ONLY:
                                    w = 0.0
                                else:
                                    cos_l = -(dx * a_n[0] + dy * a_n[1] + dz * a_n[2])
                                    pdf_nee = (t_quad * t_quad) / (a_area * cos_l)
                                    w = prev_pdf / (prev_pdf + pdf_nee)
                                if w > 0.0:
                                    c_r = tp_r * a_rad * w
                                    c_g = tp_g * a_rad * w
                                    c_b = tp_b * a_rad * w
                                    if depth >= 2:
                                        if c_r > clamp_ind or c_g > clamp_ind or c_b > clamp_ind:
                                            c_r = min(c_r, clamp_ind)
                                            c_g = min(c_g, clamp_ind)
                                            c_b = min(c_b, clamp_ind)
                                            sam_clamped = 1
                                    sam_r += c_r
                                    sam_g += c_g
                                    sam_b += c_b
                                break

                            if k_hit < 0:
                                # escaped the scene
                                e_r = ambient[0]
                                e_g = ambient[1]
                                e_b = ambient[2]
                                if has_env == 1:
                                    if depth == 0 or mode == MODE_BRDF_ONLY:
                                        w = 1.0
                                    elif mode == MODE_NEE_ONLY:
                                        w = 0.0
                                    else:
                                        pdf_nee = env_pdf_dir(env_pdf_map, env_rot,
                                                              dx, dy, dz)
                                        w = prev_pdf / (prev_pdf + pdf_nee)
                                    if w > 0.0:
                                        l_r, l_g, l_b = env_eval_dir(env_tex, env_rot,
                                                                     dx, dy, dz)
                                        e_r += l_r * w
                                        e_g += l_g * w
                                        e_b += l_b * w
                                c_r = tp_r * e_r
                                c_g = tp_g * e_g
                                c_b = tp_b * e_b
                                if depth >= 2:
                                    if c_r > clamp_ind or c_g > clamp_ind or c_b > clamp_ind:
                                        c_r = min(c_r, clamp_ind)
                                        c_g = min(c_g, clamp_ind)
                                        c_b = min(c_b, clamp_ind)
                                        sam_clamped = 1
                                sam_r += c_r
                                sam_g += c_g
                                sam_b += c_b
                                break

                            # surface interaction
                            if depth == 0:
                                sam_hit = 1.0
                            hx = ox + t_hit * dx
                            hy = oy + t_hit * dy
                            hz = oz + t_hit * dz
                            gnx = tri_gn[k_hit, 0]
                            gny = tri_gn[k_hit, 1]
                            gnz = tri_gn[k_hit, 2]
                            w0 = 1.0 - bu - bv
                            snx = w0 * tri_n0[k_hit, 0] + bu * tri_n1[k_hit, 0] + bv * tri_n2[k_hit, 0]
                            sny = w0 * tri_n0[k_hit, 1] + bu * tri_n1[k_hit, 1] + bv * tri_n2[k_hit, 1]
                            snz = w0 * tri_n0[k_hit, 2] + bu * tri_n1[k_hit, 2] + bv * tri_n2[k_hit, 2]
                            snl = math.sqrt(snx * snx + sny * sny + snz * snz)
                            if snl > 1e-12:
                                snx /= snl
                                sny /= snl
                                snz /= snl
                            else:
                                snx = gnx
                                sny = gny
                                snz = gnz
                            # shade the side the ray arrived on
                            if gnx * dx + gny * dy + gnz * dz > 0.0:
                                gnx = -gnx
                                gny = -gny
                                gnz = -gnz
                                snx = -snx
                                sny = -sny
                                snz = -snz
                            if snx * gnx + sny * gny + snz * gnz <= 0.0:
                                snx = gnx
                                sny = gny
                                snz = gnz
                            wox = -dx
                            woy = -dy
                            woz = -dz
                            vertex = depth

                            # --- NEE: point lights (delta, every mode) ---
                            for li in range(n_points):
                                lx = point_pos[li, 0] - hx
                                ly = point_pos[li, 1] - hy
                                lz = point_pos[li, 2] - hz
                                r2 = lx * lx + ly * ly + lz * lz
                                r1 = math.sqrt(r2)
                                lx /= r1
                                ly /= r1
                                lz /= r1
                                f_r, f_g, f_b = brdf_eval_core(
                                    m_br, m_bg, m_bb, m_ro, m_me, m_st, m_sp,
                                    lx, ly, lz, wox, woy, woz, snx, sny, snz)
                                if f_r == 0.0 and f_g == 0.0 and f_b == 0.0:
                                    continue
                                ci = lx * snx + ly * sny + lz * snz
                                scale = ci * point_int[li] / r2
                                side = 1.0 if (lx * gnx + ly * gny + lz * gnz) > 0.0 else -1.0
                                if bvh_occluded(node_min, node_max, node_right,
                                                node_start, node_count,
                                                tri_v0, tri_e1, tri_e2,
                                                hx + side * _RAY_EPS * gnx,
                                                hy + side * _RAY_EPS * gny,
                                                hz + side * _RAY_EPS * gnz,
                                                lx, ly, lz, _RAY_EPS,
                                                r1 * (1.0 - 1e-6), stack):
                                    continue
                                c_r = tp_r * f_r * scale
                                c_g = tp_g * f_g * scale
                                c_b = tp_b * f_b * scale
                                if vertex >= 1:
                                    if c_r > clamp_ind or c_g > clamp_ind or c_b > clamp_ind:
                                        c_r = min(c_r, clamp_ind)
                                        c_g = min(c_g, clamp_ind)
                                        c_b = min(c_b, clamp_ind)
                                        sam_clamped = 1
                                sam_r += c_r
                                sam_g += c_g
                                sam_b += c_b

                            # --- NEE: area light ---
                            if has_area == 1 and mode != MODE_BRDF_ONLY:
                                st, ua = _rng_next(st)
                                st, ub = _rng_next(st)
                                if vertex == 0:
                                    ua = (s_a + ua) / strat_n
                                    if two_d:
                                        ub = (s_b + ub) / strat_n
                                sx = a_c0[0] + ua * a_eu[0] + ub * a_ev[0]
                                sy = a_c0[1] + ua * a_eu[1] + ub * a_ev[1]
                                sz = a_c0[2] + ua * a_eu[2] + ub * a_ev[2]
                                lx = sx - hx
                                ly = sy - hy
                                lz = sz - hz
                                r2 = lx * lx + ly * ly + lz * lz
                                r1 = math.sqrt(r2)
                                lx /= r1
                                ly /= r1
                                lz /= r1
                                cos_l = -(lx * a_n[0] + ly * a_n[1] + lz * a_n[2])
                                if cos_l > 1e-9:
                                    f_r, f_g, f_b = brdf_eval_core(
                                        m_br, m_bg, m_bb, m_ro, m_me, m_st, m_sp,
                                        lx, ly, lz, wox, woy, woz, snx, sny, snz)
                                    if not (f_r == 0.0 and f_g == 0.0 and f_b == 0.0):
                                        pdf_nee = r2 / (a_area * cos_l)
                                        if mode == MODE_MIS:
                                            pdf_b = brdf_pdf_core(
                                                m_br, m_bg, m_bb, m_ro, m_me, m_st, m_sp,
                                                lx, ly, lz, wox, woy, woz, snx, sny, snz)
                                            w = pdf_nee / (pdf_nee + pdf_b)
                                        else:
                                            w = 1.0
                                        ci = lx * snx + ly * sny + lz * snz
                                        scale = w * ci * a_rad / pdf_nee
                                        side = 1.0 if (lx * gnx + ly * gny + lz * gnz) > 0.0 else -1.0
                                        if not bvh_occluded(node_min, node_max, node_right,
                                                            node_start, node_count,
                                                            tri_v0, tri_e1, tri_e2,
                                                            hx + side * _RAY_EPS * gnx,
                                                            hy + side * _RAY_EPS * gny,
                                                            hz + side * _RAY_EPS * gnz,
                                                            lx, ly, lz, _RAY_EPS,
                                                            r1 * (1.0 - 1e-6), stack):
                                            c_r = tp_r * f_r * scale
                                            c_g = tp_g * f_g * scale
                                            c_b = tp_b * f_b * scale
                                            if vertex >= 1:
                                                if c_r > clamp_ind or c_g > clamp_ind or c_b > clamp_ind:
                                                    c_r = min(c_r, clamp_ind)
                                                    c_g = min(c_g, clamp_ind)
                                                    c_b = min(c_b, clamp_ind)
                                                    sam_clamped = 1
                                            sam_r += c_r
                                            sam_g += c_g
                                            sam_b += c_b

                            # --- NEE: environment ---
                            if has_env == 1 and mode != MODE_BRDF_ONLY:
                                st, u1 = _rng_next(st)
                                st, u2 = _rng_next(st)
                                st, u3 = _rng_next(st)
                                st, u4 = _rng_next(st)
                                if vertex == 0:
                                    u1 = (s_a + u1) / strat_n
                                    if two_d:
                                        u2 = (s_b + u2) / strat_n
                                lx, ly, lz, pdf_nee = env_sample_dir(
                                    env_row_cdf, env_cond_cdf, env_cos_edges,
                                    env_pdf_map, env_rot, u1, u2, u3, u4)
                                f_r, f_g, f_b = brdf_eval_core(
                                    m_br, m_bg, m_bb, m_ro, m_me, m_st, m_sp,
                                    lx, ly, lz, wox, woy, woz, snx, sny, snz)
                                if not (f_r == 0.0 and f_g == 0.0 and f_b == 0.0):
                                    if mode == MODE_MIS:
                                        pdf_b = brdf_pdf_core(
                                            m_br, m_bg, m_bb, m_ro, m_me, m_st, m_sp,
                                            lx, ly, lz, wox, woy, woz, snx, sny, snz)
                                        w = pdf_nee / (pdf_nee + pdf_b)
                                    else:
                                        w = 1.0
                                    side = 1.0 if (lx * gnx + ly * gny + lz * gnz) > 0.0 else -1.0
                                    if not bvh_occluded(node_min, node_max, node_right,
                                                        node_start, node_count,
                                                        tri_v0, tri_e1, tri_e2,
                                                        hx + side * _RAY_EPS * gnx,
                                                        hy + side * _RAY_EPS * gny,
                                                        hz + side * _RAY_EPS * gnz,
                                                        lx, ly, lz, _RAY_EPS,
                                                        math.inf, stack):
                                        l_r, l_g, l_b = env_eval_dir(env_tex, env_rot,
                                                                     lx, ly, lz)
                                        ci = lx * snx + ly * sny + lz * snz
                                        scale = w * ci / pdf_nee
                                        c_r = tp_r * f_r * l_r * scale
                                        c_g = tp_g * f_g * l_g * scale
                                        c_b = tp_b * f_b * l_b * scale
                                        if vertex >= 1:
                                            if c_r > clamp_ind or c_g > clamp_ind or c_b > clamp_ind:
                                                c_r = min(c_r, clamp_ind)
                                                c_g = min(c_g, clamp_ind)
                                                c_b = min(c_b, clamp_ind)
                                                sam_clamped = 1
                                        sam_r += c_r
                                        sam_g += c_g
                                        sam_b += c_b

                            # --- continue the path ---
                            if depth >= max_bounces - 1:
                                break
                            if vertex >= 3:
                                st, ur = _rng_next(st)
                                q = max(tp_r, max(tp_g, tp_b))
                                q = min(1.0, max(0.05, q))
                                if ur >= q:
                                    break
                                tp_r /= q
                                tp_g /= q
                                tp_b /= q
                            st, b1 = _rng_next(st)
                            st, b2 = _rng_next(st)
                            st, b3 = _rng_next(st)
                            if vertex == 0:
                                b2 = (s_a + b2) / strat_n
                            wix, wiy, wiz, pdf_b = brdf_sample_core(
                                m_br, m_bg, m_bb, m_ro, m_me, m_st, m_sp,
                                wox, woy, woz, snx, sny, snz, b1, b2, b3)
                            if pdf_b <= 0.0:
                                break
                            f_r, f_g, f_b = brdf_eval_core(
                                m_br, m_bg, m_bb, m_ro, m_me, m_st, m_sp,
                                wix, wiy, wiz, wox, woy, woz, snx, sny, snz)
                            ci = wix * snx + wiy * sny + wiz * snz
                            k = ci / pdf_b
                            tp_r *= f_r * k
                            tp_g *= f_g * k
                            tp_b *= f_b * k
                            if tp_r <= 0.0 and tp_g <= 0.0 and tp_b <= 0.0:
                                break
                            side = 1.0 if (wix * gnx + wiy * gny + wiz * gnz) > 0.0 else -1.0
                            ox = hx + side * _RAY_EPS * gnx
                            oy = hy + side * _RAY_EPS * gny
                            oz = hz + side * _RAY_EPS * gnz
                            dx = wix
                            dy = wiy
                            dz = wiz
                            prev_pdf = pdf_b
                            depth += 1

                        if math.isfinite(sam_r) and math.isfinite(sam_g) and math.isfinite(sam_b):
                            ok = True
                            break
                        nan_ct += 1
                    if not ok:
                        sam_r = 0.0
                        sam_g = 0.0
                        sam_b = 0.0
                    acc_r += sam_r
                    acc_g += sam_g
                    acc_b += sam_b
                    acc_hit += sam_hit
                    clamp_ct += sam_clamped
                out_rgb[py, px, 0] = acc_r * inv_spp
                out_rgb[py, px, 1] = acc_g * inv_spp
                out_rgb[py, px, 2] = acc_b * inv_spp
                out_alpha[py, px] = acc_hit * inv_spp
        tile_nan[ti] = nan_ct
        tile_clamp[ti] = clamp_ct


@njit(cache=True, parallel=True, fastmath={'contract', 'reassoc', 'arcp'})
def depth_kernel(out_depth, width, height,
                 eye, cright, cup, cfwd, focal,
                 node_min, node_max, node_right, node_start, node_count,
                 tri_v0, tri_e1, tri_e2):
    """Pixel-center z-depth of the closest mesh hit; 0 where the ray misses."""
    for py in prange(height):
        stack = np.empty(_STACK_DEPTH, np.int32)
        tstack = np.empty(_STACK_DEPTH, np.float64)
        for px in range(width):
            xc = (px + 0.5 - width * 0.5) / focal
            yc = (height * 0.5 - (py + 0.5)) / focal
            dx = cright[0] * xc + cup[0] * yc + cfwd[0]
            dy = cright[1] * xc + cup[1] * yc + cfwd[1]
            dz = cright[2] * xc + cup[2] * yc + cfwd[2]
            dl = math.sqrt(dx * dx + dy * dy + dz * dz)
            dx /= dl
            dy /= dl
            dz /= dl
            t_hit, k_hit, bu, bv = bvh_closest(
                node_min, node_max, node_right, node_start, node_count,
                tri_v0, tri_e1, tri_e2,
                eye[0], eye[1], eye[2], dx, dy, dz, 0.0, math.inf,
                stack, tstack)
            if k_hit < 0:
                out_depth[py, px] = 0.0
            else:
                # z-depth: distance along the camera forward axis
                fz = (dx * cfwd[0] + dy * cfwd[1] + dz * cfwd[2]) * t_hit
                out_depth[py, px] = fz
