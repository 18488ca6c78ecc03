"""Procedural objects with paired mesh and implicit-surface descriptions.

Each generator returns a watertight triangle mesh normalized to a minimal
bounding sphere of radius 0.5 at the origin, together with a signed
distance field expressed in the same normalized frame. The field is what
makes exact depth/mask renders possible for any camera, independent of the
tessellation, so meshing error is measurable rather than assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import (CameraSpec, DepthMap, ForegroundMask, ProxyMesh,
                       compute_vertex_normals, minimal_bounding_sphere)

OBJECT_KINDS = ("sphere", "rounded_box", "torus", "bumpy_sphere")

_TRACE_TOL = 1e-9
_TRACE_MAX_STEPS = 512
# bumpy-sphere fields are Lipschitz-bounded but not unit-slope; a relaxed
# step keeps sphere tracing convergent for every kind
_TRACE_RELAX = 0.7


# ---------------------------------------------------------------------------
# base meshes
# ---------------------------------------------------------------------------

def icosphere(subdivisions: int):
    """Unit icosphere: (vertices (N,3) float64, triangles (M,3) int32)."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivisions):
        vlist = list(verts)
        cache = {}
        out = []

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = vlist[a] + vlist[b]
                vlist.append(m / np.linalg.norm(m))
                cache[key] = len(vlist) - 1
            return cache[key]

        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            out += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.asarray(vlist)
        faces = np.asarray(out)
    return verts, faces.astype(np.int32)


def _cube_surface_grid(n: int):
    """Watertight cube surface covering [-1,1]^3, n x n quads per face."""
    lin = np.linspace(-1.0, 1.0, n + 1)
    vid = {}
    verts = []
    tris = []

    def vertex(p):
        key = (round(p[0], 9), round(p[1], 9), round(p[2], 9))
        if key not in vid:
            vid[key] = len(verts)
            verts.append(p)
        return vid[key]

    # each face: axis held at +-1, remaining two axes swept
    for axis in range(3):
        for sign in (-1.0, 1.0):
            a1 = (axis + 1) % 3
            a2 = (axis + 2) % 3
            ids = np.empty((n + 1, n + 1), dtype=np.int64)
            for i, s in enumerate(lin):
                for j, r in enumerate(lin):
                    p = np.zeros(3)
                    p[axis] = sign
                    p[a1] = s
                    p[a2] = r
                    ids[i, j] = vertex(p)
            for i in range(n):
                for j in range(n):
                    q = [ids[i, j], ids[i + 1, j], ids[i + 1, j + 1], ids[i, j + 1]]
                    if sign > 0:
                        tris += [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
                    else:
                        tris += [[q[0], q[2], q[1]], [q[0], q[3], q[2]]]
    return np.asarray(verts), np.asarray(tris, dtype=np.int32)


def _torus_grid(nu: int, nv: int, major: float, minor: float):
    """Watertight torus around the y axis."""
    u = np.arange(nu) * (2.0 * math.pi / nu)
    v = np.arange(nv) * (2.0 * math.pi / nv)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major + minor * np.cos(vv)
    verts = np.stack([ring * np.cos(uu), minor * np.sin(vv), ring * np.sin(uu)],
                     axis=-1).reshape(-1, 3)
    tris = []
    for i in range(nu):
        i2 = (i + 1) % nu
        for j in range(nv):
            j2 = (j + 1) % nv
            a = i * nv + j
            b = i2 * nv + j
            c = i2 * nv + j2
            d = i * nv + j2
            tris += [[a, b, c], [a, c, d]]
    return verts, np.asarray(tris, dtype=np.int32)


# ---------------------------------------------------------------------------
# distance fields (primitive frames, before normalization)
# ---------------------------------------------------------------------------

def _sdf_sphere(radius):
    def f(p):
        return np.linalg.norm(p, axis=-1) - radius
    return f


def _sdf_rounded_box(half, r):
    half = np.asarray(half, dtype=np.float64)

    def f(p):
        q = np.abs(p) - half
        outer = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inner = np.minimum(q.max(axis=-1), 0.0)
        return outer + inner - r
    return f


def _sdf_torus(major, minor):
    def f(p):
        ring = np.hypot(p[..., 0], p[..., 2]) - major
        return np.hypot(ring, p[..., 1]) - minor
    return f


def _bump_field(base, amps, freqs, axes, phases):
    """Radius as a function of direction: smooth sum of oriented waves."""
    def radius(d):
        r = np.ones(d.shape[:-1])
        for a, f, u, ph in zip(amps, freqs, axes, phases):
            r = r + a * np.sin(f * (d @ u) + ph)
        return base * r
    return radius


def _sdf_bumpy(radius_fn):
    # not a true distance (bounded slope > 1); paired with a relaxed
    # sphere-tracing step
    def f(p):
        n = np.linalg.norm(p, axis=-1)
        safe = np.maximum(n, 1e-12)
        d = p / safe[..., None]
        return n - radius_fn(d)
    return f


def _numeric_gradient(sdf, points, h=1e-6):
    g = np.empty_like(points)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[..., k] = (sdf(points + e) - sdf(points - e)) / (2.0 * h)
    return g


def _project_to_surface(sdf, points, steps=8):
    p = points.copy()
    for _ in range(steps):
        d = sdf(p)
        if np.abs(d).max() < 1e-12:
            break
        g = _numeric_gradient(sdf, p)
        g /= np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
        p -= d[..., None] * g
    return p


# ---------------------------------------------------------------------------
# the generator
# ---------------------------------------------------------------------------

@dataclass
class ProceduralObject:
    """Normalized mesh plus the matching implicit surface."""

    kind: str
    mesh: ProxyMesh
    sdf: Callable[[np.ndarray], np.ndarray]   # normalized frame, vectorized
    params: dict = field(default_factory=dict)
    bound_radius: float = 0.55                # loose sphere bound for ray clipping

    def depth_map(self, camera: CameraSpec):
        """Exact z-depth and hit mask of the implicit surface."""
        depth, hit = _trace_depth(self.sdf, camera, self.bound_radius)
        return (DepthMap(depth.astype(np.float32), valid=hit),
                ForegroundMask(hit.astype(np.float32)))


def _normalized(kind, verts, tris, sdf_prim, params, shading_from_sdf=True):
    center, r = minimal_bounding_sphere(verts)
    k = 0.5 / r
    v = (verts - center) * k

    def sdf(p):
        p = np.asarray(p, dtype=np.float64)
        return sdf_prim(p / k + center) * k

    geo = compute_vertex_normals(v, tris)
    if shading_from_sdf:
        g = _numeric_gradient(sdf, v)
        shading = g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
    else:
        shading = geo
    mesh = ProxyMesh(vertices=v, triangles=tris, geometric_normals=geo,
                     shading_normals=shading, source="synthetic_object")
    mesh.validate()
    return ProceduralObject(kind=kind, mesh=mesh, sdf=sdf, params=params)


def gen_procedural_object(kind: str, rng: np.random.Generator) -> ProceduralObject:
    """Draw one normalized object of the requested kind."""
    if kind == "sphere":
        verts, tris = icosphere(4)
        verts = verts * 0.5
        return _normalized(kind, verts, tris, _sdf_sphere(0.5),
                           {"radius": 0.5})
    if kind == "rounded_box":
        half = rng.uniform(0.18, 0.32, size=3)
        r = float(rng.uniform(0.05, 0.12))
        sdf = _sdf_rounded_box(half, r)
        verts, tris = _cube_surface_grid(40)
        verts = verts * (half + r)        # circumscribing start shape
        verts = _project_to_surface(sdf, verts)
        return _normalized(kind, verts, tris, sdf,
                           {"half_extents": half.tolist(), "corner_radius": r})
    if kind == "torus":
        major = float(rng.uniform(0.30, 0.38))
        minor = float(rng.uniform(0.10, 0.16))
        verts, tris = _torus_grid(128, 64, major, minor)
        return _normalized(kind, verts, tris, _sdf_torus(major, minor),
                           {"major_radius": major, "minor_radius": minor})
    if kind == "bumpy_sphere":
        lobes = 4
        amps = rng.uniform(0.015, 0.035, size=lobes)
        freqs = rng.uniform(3.0, 6.0, size=lobes)
        axes = rng.normal(size=(lobes, 3))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        phases = rng.uniform(0.0, 2.0 * math.pi, size=lobes)
        radius_fn = _bump_field(0.42, amps, freqs, axes, phases)
        verts, tris = icosphere(5)
        verts = verts * radius_fn(verts)[..., None]
        return _normalized(kind, verts, tris, _sdf_bumpy(radius_fn),
                           {"amps": amps.tolist(), "freqs": freqs.tolist(),
                            "axes": axes.tolist(), "phases": phases.tolist(),
                            "base_radius": 0.42})
    raise ValueError(f"kind must be one of {OBJECT_KINDS}, got {kind!r}")


def sphere_mesh(subdivisions: int = 3, radius: float = 0.5) -> ProxyMesh:
    """Icosphere ProxyMesh with exact radial shading normals."""
    verts, tris = icosphere(subdivisions)
    verts = verts * radius
    normals = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    mesh = ProxyMesh(vertices=verts, triangles=tris,
                     geometric_normals=compute_vertex_normals(verts, tris),
                     shading_normals=normals, source="synthetic_object")
    return mesh


# ---------------------------------------------------------------------------
# implicit-surface depth rendering
# ---------------------------------------------------------------------------

def _trace_depth(sdf, camera: CameraSpec, bound_radius: float):
    right, up, forward = camera.basis()
    f = camera.focal_px
    w, h = camera.width, camera.height
    xs = (np.arange(w) + 0.5 - w / 2.0) / f
    ys = (h / 2.0 - (np.arange(h) + 0.5)) / f
    d = (xs[None, :, None] * right[None, None, :]
         + ys[:, None, None] * up[None, None, :]
         + forward[None, None, :])
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    d = d.reshape(-1, 3)
    o = np.asarray(camera.eye, dtype=np.float64)

    # clip rays to the bounding sphere so marching starts near the surface
    b = d @ o
    c = o @ o - bound_radius**2
    disc = b * b - c
    may_hit = disc > 0.0
    sq = np.sqrt(np.maximum(disc, 0.0))
    t_enter = np.maximum(-b - sq, 0.0)
    t_exit = -b + sq

    t = t_enter.copy()
    hit = np.zeros(d.shape[0], dtype=bool)
    active = may_hit & (t_exit > 0.0)
    idx = np.nonzero(active)[0]
    for _ in range(_TRACE_MAX_STEPS):
        if idx.size == 0:
            break
        p = o[None, :] + t[idx, None] * d[idx]
        dist = sdf(p)
        converged = dist < _TRACE_TOL * np.maximum(1.0, t[idx])
        hit[idx[converged]] = True
        t[idx] += _TRACE_RELAX * np.maximum(dist, 0.0)
        keep = ~converged & (t[idx] <= t_exit[idx])
        idx = idx[keep]

    cos_f = d @ forward
    depth = np.where(hit, t * cos_f, 0.0).reshape(h, w)
    return depth, hit.reshape(h, w)
