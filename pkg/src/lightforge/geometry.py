"""Depth-map-to-proxy-mesh reconstruction.

Coordinate conventions
----------------------
The camera model is a pinhole with square pixels. Camera space has x right,
y up, z forward (the view direction); depth values are z-depth, i.e. the
distance along the camera forward axis, matching common monocular depth
estimator output. Pixel (col i, row j) indexes the image with row 0 at the
top; its ray passes through the pixel center (i + 0.5, j + 0.5).

Projection of a camera-space point (x, y, z>0):

    u = cx + fx * x / z        v = cy - fy * y / z

with fy = H / (2 tan(vfov/2)), fx = fy (square pixels), cx = W/2, cy = H/2.
The v flip keeps image rows growing downward while camera y points up.

Meshing walks every 2x2 quad of foreground pixels and splits it along the
(u, v) -> (u+1, v+1) diagonal. Triangles bridging depth discontinuities are
culled when their longest edge exceeds ``discontinuity_ratio`` times the
median candidate edge length. Triangle winding is chosen so geometric
normals face the camera (negative z component in camera space).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

MASK_THRESHOLD = 0.5          # coverage at or above this counts as foreground
NORMAL_UNIT_TOL = 1e-4
_DEGENERATE_AREA_EPS = 1e-14  # squared-length scale, relative to bbox diagonal


@dataclass(frozen=True)
class CameraSpec:
    """Pinhole camera: position, aim point, orientation, and image geometry."""

    eye: np.ndarray                 # (3,) meters
    look_at: np.ndarray             # (3,) meters
    up: np.ndarray                  # (3,) unit-ish hint, not parallel to view
    vertical_fov: float             # degrees, in (0, 90)
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "eye", np.asarray(self.eye, dtype=np.float64))
        object.__setattr__(self, "look_at", np.asarray(self.look_at, dtype=np.float64))
        object.__setattr__(self, "up", np.asarray(self.up, dtype=np.float64))
        if not (0.0 < self.vertical_fov < 90.0):
            raise ValueError(f"vertical_fov must be in (0, 90) degrees, got {self.vertical_fov}")
        if self.width < 2 or self.height < 2:
            raise ValueError("image must be at least 2x2 pixels")
        fwd = self.look_at - self.eye
        n = np.linalg.norm(fwd)
        if n == 0.0:
            raise ValueError("eye and look_at coincide")
        cross = np.cross(fwd / n, self.up)
        if np.linalg.norm(cross) < 1e-8:
            raise ValueError("up vector parallel to view direction")

    def basis(self):
        """Orthonormal (right, up, forward) in world coordinates."""
        forward = self.look_at - self.eye
        forward = forward / np.linalg.norm(forward)
        right = np.cross(self.up, forward)
        right = right / np.linalg.norm(right)
        up = np.cross(forward, right)
        return right, up, forward

    @property
    def focal_px(self) -> float:
        return self.height / (2.0 * math.tan(math.radians(self.vertical_fov) / 2.0))

    def unproject(self, cols: np.ndarray, rows: np.ndarray, depth: np.ndarray) -> np.ndarray:
        """Pixel centers + z-depth -> camera-space points (x right, y up, z forward)."""
        f = self.focal_px
        x = (np.asarray(cols) + 0.5 - self.width / 2.0) / f * depth
        y = (self.height / 2.0 - (np.asarray(rows) + 0.5)) / f * depth
        return np.stack([x, y, np.broadcast_to(depth, x.shape)], axis=-1)

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Camera-space points -> continuous pixel coordinates (u, v)."""
        p = np.asarray(points_cam, dtype=np.float64)
        z = p[..., 2]
        f = self.focal_px
        u = self.width / 2.0 + f * p[..., 0] / z
        v = self.height / 2.0 - f * p[..., 1] / z
        return np.stack([u, v], axis=-1)

    def camera_to_world(self, points_cam: np.ndarray) -> np.ndarray:
        right, up, forward = self.basis()
        p = np.asarray(points_cam, dtype=np.float64)
        return self.eye + p[..., :1] * right + p[..., 1:2] * up + p[..., 2:] * forward

    def world_to_camera(self, points_world: np.ndarray) -> np.ndarray:
        right, up, forward = self.basis()
        d = np.asarray(points_world, dtype=np.float64) - self.eye
        return np.stack([d @ right, d @ up, d @ forward], axis=-1)


@dataclass
class DepthMap:
    """Per-pixel z-depth in meters with a per-pixel validity flag.

    Serialized as single-channel PFM where values <= 0 mark invalid pixels.
    """

    values: np.ndarray              # (H, W) float32, meters
    valid: Optional[np.ndarray] = None  # (H, W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("depth map must be 2-D")
        if self.valid is None:
            self.valid = np.isfinite(self.values) & (self.values > 0.0)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.values.shape:
                raise ValueError("validity mask dimensions must match depth")
        bad = self.valid & ~(np.isfinite(self.values) & (self.values > 0.0))
        if bad.any():
            raise ValueError("valid depth pixels must be finite and > 0")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_pfm(cls, path) -> "DepthMap":
        from .imageio import read_pfm

        arr = read_pfm(path)
        if arr.ndim == 3:
            arr = arr[:, :, 0]
        return cls(values=arr, valid=np.isfinite(arr) & (arr > 0.0))

    def to_pfm(self, path) -> None:
        from .imageio import write_pfm

        out = np.where(self.valid, self.values, np.float32(0.0))
        write_pfm(path, out)


@dataclass
class ForegroundMask:
    """Per-pixel foreground coverage in [0, 1]."""

    values: np.ndarray              # (H, W) float32

    def __post_init__(self):
        self.values = np.clip(np.asarray(self.values, dtype=np.float32), 0.0, 1.0)
        if self.values.ndim != 2:
            raise ValueError("mask must be 2-D")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def binary(self, threshold: float = MASK_THRESHOLD) -> np.ndarray:
        return self.values >= threshold

    @classmethod
    def from_png(cls, path) -> "ForegroundMask":
        from .imageio import read_mask_png

        return cls(values=read_mask_png(path))

    def to_png(self, path) -> None:
        from .imageio import write_mask_png

        write_mask_png(path, self.values)


@dataclass
class PointGrid:
    """Back-projected per-pixel 3-D positions; background pixels are absent."""

    points: np.ndarray              # (H, W, 3) float64, undefined outside foreground
    foreground: np.ndarray          # (H, W) bool

    @property
    def count(self) -> int:
        return int(self.foreground.sum())


@dataclass
class ProxyMesh:
    """Triangulated depth surface (or synthetic object) with dual normal sets.

    ``geometric_normals`` come from area-weighted face-normal averaging.
    ``alt_normals``, when present, hold the smoothed-depth shading variant.
    ``shading_normals`` is whatever the renderer should use; it defaults to
    the geometric set.
    """

    vertices: np.ndarray            # (N, 3) float64, meters
    triangles: np.ndarray           # (M, 3) int32
    geometric_normals: np.ndarray   # (N, 3) float64, unit
    alt_normals: Optional[np.ndarray] = None
    shading_normals: Optional[np.ndarray] = None
    source: str = "depth_derived"   # {depth_derived, synthetic_object}

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int32)
        self.geometric_normals = np.asarray(self.geometric_normals, dtype=np.float64)
        if self.shading_normals is None:
            self.shading_normals = self.geometric_normals
        if self.alt_normals is not None:
            self.alt_normals = np.asarray(self.alt_normals, dtype=np.float64)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def validate(self) -> None:
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= self.n_vertices):
            raise ValueError("triangle index out of range")
        for name, normals in (("geometric", self.geometric_normals), ("alt", self.alt_normals)):
            if normals is None:
                continue
            lens = np.linalg.norm(normals, axis=1)
            if np.abs(lens - 1.0).max(initial=0.0) > NORMAL_UNIT_TOL:
                raise ValueError(f"{name} normals are not unit length")
        areas = _triangle_areas(self.vertices, self.triangles)
        scale = _bbox_diag(self.vertices)
        if areas.size and areas.min() <= _DEGENERATE_AREA_EPS * scale * scale:
            raise ValueError("degenerate (zero-area) triangle present")


def _bbox_diag(vertices: np.ndarray) -> float:
    if vertices.size == 0:
        return 0.0
    return float(np.linalg.norm(vertices.max(axis=0) - vertices.min(axis=0)))


def _triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    if triangles.size == 0:
        return np.zeros(0)
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def compute_vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted average of face normals, normalized per vertex."""
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    face = np.cross(b - a, c - a)  # length = 2 * area, so weighting is implicit
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, triangles[:, k], face)
    lens = np.linalg.norm(acc, axis=1, keepdims=True)
    lens[lens == 0.0] = 1.0
    return acc / lens


def backproject(depth: DepthMap, mask: ForegroundMask, camera: CameraSpec) -> PointGrid:
    """Lift foreground depth pixels onto their pinhole rays (camera coordinates)."""
    if (depth.height, depth.width) != (mask.height, mask.width):
        raise ValueError(
            f"depth {depth.values.shape} and mask {mask.values.shape} dimensions differ"
        )
    if (camera.height, camera.width) != (depth.height, depth.width):
        raise ValueError("camera image size does not match depth map")
    fg = mask.binary()
    if (fg & ~depth.valid).any():
        raise ValueError("foreground pixel with invalid (non-positive) depth")
    h, w = depth.values.shape
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    pts = camera.unproject(cols, rows, depth.values.astype(np.float64))
    return PointGrid(points=pts, foreground=fg)


def triangulate(grid: PointGrid, mask: ForegroundMask, discontinuity_ratio: float = 4.0) -> ProxyMesh:
    """Mesh every fully-foreground 2x2 pixel quad; cull discontinuity bridges."""
    fg = grid.foreground & mask.binary()
    h, w = fg.shape
    quad = fg[:-1, :-1] & fg[:-1, 1:] & fg[1:, :-1] & fg[1:, 1:]
    if not quad.any():
        raise ValueError("not enough foreground pixels for a single quad")

    vid = np.full(fg.shape, -1, dtype=np.int64)
    vid[fg] = np.arange(int(fg.sum()))
    qr, qc = np.nonzero(quad)
    v00 = vid[qr, qc]
    v10 = vid[qr, qc + 1]          # +u
    v01 = vid[qr + 1, qc]          # +v
    v11 = vid[qr + 1, qc + 1]
    # split along the (u,v)->(u+1,v+1) diagonal; winding faces the camera
    tris = np.concatenate(
        [np.stack([v00, v10, v11], axis=1), np.stack([v00, v11, v01], axis=1)]
    ).astype(np.int64)

    verts_all = grid.points[fg]
    e = verts_all[tris]
    edge_len = np.stack(
        [
            np.linalg.norm(e[:, 0] - e[:, 1], axis=1),
            np.linalg.norm(e[:, 1] - e[:, 2], axis=1),
            np.linalg.norm(e[:, 2] - e[:, 0], axis=1),
        ],
        axis=1,
    )
    median_edge = float(np.median(edge_len))
    keep = edge_len.max(axis=1) <= discontinuity_ratio * median_edge
    areas = _triangle_areas(verts_all, tris.astype(np.int32))
    scale = _bbox_diag(verts_all)
    keep &= areas > _DEGENERATE_AREA_EPS * scale * scale
    tris = tris[keep]
    if tris.size == 0:
        raise ValueError("all candidate triangles culled")

    used = np.zeros(verts_all.shape[0], dtype=bool)
    used[tris.ravel()] = True
    remap = np.cumsum(used) - 1
    verts = verts_all[used]
    tris = remap[tris].astype(np.int32)

    normals = compute_vertex_normals(verts, tris)
    return ProxyMesh(vertices=verts, triangles=tris, geometric_normals=normals)


def _vertex_adjacency(n_vertices: int, triangles: np.ndarray) -> sp.csr_matrix:
    i = np.concatenate([triangles[:, 0], triangles[:, 1], triangles[:, 2]])
    j = np.concatenate([triangles[:, 1], triangles[:, 2], triangles[:, 0]])
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    adj = sp.coo_matrix((np.ones(rows.shape[0]), (rows, cols)),
                        shape=(n_vertices, n_vertices)).tocsr()
    adj.data[:] = 1.0  # collapse duplicate edges
    return adj


def boundary_vertices(n_vertices: int, triangles: np.ndarray) -> np.ndarray:
    """Bool flag per vertex: touches an edge used by exactly one triangle."""
    pairs = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    pairs = np.sort(pairs, axis=1)
    _, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    open_edges = pairs[counts[inverse] == 1]
    flag = np.zeros(n_vertices, dtype=bool)
    flag[open_edges.ravel()] = True
    return flag


def laplace_smooth(mesh: ProxyMesh, lam: float = 0.5, iterations: int = 20) -> ProxyMesh:
    """Uniform-umbrella smoothing: v <- v + lam * (centroid(neighbors) - v).

    Open-boundary vertices are anchored so the silhouette rim of a
    depth-derived sheet stays put; closed meshes have none and smooth freely.
    """
    if not (0.0 < lam <= 1.0):
        raise ValueError(f"lambda must be in (0, 1], got {lam}")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return replace(mesh)
    adj = _vertex_adjacency(mesh.n_vertices, mesh.triangles)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    deg[deg == 0.0] = 1.0
    free = ~boundary_vertices(mesh.n_vertices, mesh.triangles)
    v = mesh.vertices.copy()
    for _ in range(iterations):
        centroid = adj.dot(v) / deg[:, None]
        v[free] += lam * (centroid[free] - v[free])
    normals = compute_vertex_normals(v, mesh.triangles)
    out = replace(mesh, vertices=v, geometric_normals=normals, shading_normals=normals)
    out.alt_normals = None
    return out


def with_smoothed_depth_normals(mesh: ProxyMesh, lam: float = 0.5, iterations: int = 20) -> ProxyMesh:
    """Attach alt_normals derived from a Laplace-smoothed copy of the mesh."""
    smoothed = laplace_smooth(mesh, lam, iterations)
    return replace(mesh, alt_normals=smoothed.geometric_normals.copy())


def set_shading_normals(mesh: ProxyMesh, mode: str) -> ProxyMesh:
    """Select the renderer-visible normal set: 'geometric' or 'smoothed_depth'."""
    if mode == "geometric":
        return replace(mesh, shading_normals=mesh.geometric_normals)
    if mode == "smoothed_depth":
        if mesh.alt_normals is None:
            raise ValueError("smoothed_depth normals requested but alt_normals absent")
        return replace(mesh, shading_normals=mesh.alt_normals)
    raise ValueError(f"unknown shading normal mode {mode!r}")


# ---------------------------------------------------------------------------
# minimal bounding sphere (Welzl, move-to-front) and object normalization
# ---------------------------------------------------------------------------

def _sphere_from(points: np.ndarray):
    """Exact smallest sphere with all given points (1..4) on its boundary."""
    n = len(points)
    if n == 0:
        return np.zeros(3), 0.0
    if n == 1:
        return points[0].copy(), 0.0
    if n == 2:
        c = 0.5 * (points[0] + points[1])
        return c, float(np.linalg.norm(points[0] - c))
    a = points[0]
    rel = points[1:] - a
    sq = np.einsum("ij,ij->i", rel, rel)
    if n == 3:
        # circumcenter in the plane of the triangle
        m = np.array([rel[0], rel[1], np.cross(rel[0], rel[1])])
        rhs = np.array([0.5 * sq[0], 0.5 * sq[1], 0.0])
        try:
            x = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError:
            return _sphere_from(points[:2])
        c = a + x
        return c, float(np.linalg.norm(c - a))
    try:
        x = np.linalg.solve(rel, 0.5 * sq)
    except np.linalg.LinAlgError:
        return _sphere_from(points[:3])
    c = a + x
    return c, float(np.linalg.norm(c - a))


def _welzl(points: np.ndarray):
    rng = np.random.default_rng(0x5EED)
    pts = points[rng.permutation(len(points))]
    eps = 1e-10 * max(1.0, _bbox_diag(points))

    def inside(c, r, p):
        return np.linalg.norm(p - c) <= r + eps

    def ball_with_boundary(pts_in, boundary):
        c, r = _sphere_from(np.array(boundary)) if boundary else (pts_in[0].copy(), 0.0)
        if len(boundary) == 4:
            return c, r
        for k, p in enumerate(pts_in):
            if not inside(c, r, p):
                c, r = ball_with_boundary(pts_in[:k], boundary + [p])
        return c, r

    return ball_with_boundary(pts, [])


def minimal_bounding_sphere(vertices: np.ndarray):
    """Center and radius of the minimal enclosing sphere of a point set."""
    pts = np.asarray(vertices, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("empty point set")
    if len(pts) > 64:
        # hull reduction keeps Welzl's recursion shallow on big meshes
        from scipy.spatial import ConvexHull, QhullError

        try:
            hull = ConvexHull(pts)
            pts = pts[hull.vertices]
        except QhullError:
            pts = np.unique(pts, axis=0)
    return _welzl(pts)


def normalize_object(mesh: ProxyMesh, radius: float = 0.5) -> ProxyMesh:
    """Center the minimal bounding sphere at the origin and scale it to ``radius``."""
    if mesh.n_vertices == 0:
        raise ValueError("empty mesh")
    center, r = minimal_bounding_sphere(mesh.vertices)
    if r < 1e-12:
        raise ValueError("degenerate mesh: all vertices coincident")
    v = (mesh.vertices - center) * (radius / r)
    return replace(mesh, vertices=v)


def export_obj(mesh: ProxyMesh, path) -> None:
    """ASCII OBJ dump with ``vn`` records for the active shading normals."""
    with open(path, "w") as f:
        f.write(f"# {mesh.n_vertices} vertices, {mesh.n_triangles} triangles\n")
        for v in mesh.vertices:
            f.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for n in mesh.shading_normals:
            f.write(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")
        for t in mesh.triangles + 1:
            f.write(f"f {t[0]}//{t[0]} {t[1]}//{t[1]} {t[2]}//{t[2]}\n")
