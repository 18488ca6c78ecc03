"""Path-traced rendering of proxy scenes and environment backplates."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import trace
from .brdf import ProxyMaterial, hint_materials
from .bvh import Bvh, build_bvh
from .geometry import CameraSpec, ProxyMesh
from .imageio import HdrImage
from .lighting import (AreaLight, EnvironmentLight, EnvMap, LightingSpec,
                       PointLights, UniformAmbient, eval_env)

_ESTIMATORS = {
    "mis": trace.MODE_MIS,
    "nee_only": trace.MODE_NEE_ONLY,
    "brdf_only": trace.MODE_BRDF_ONLY,
}


@dataclass(frozen=True)
class RenderSettings:
    """Sampler configuration.

    ``estimator`` exists for integrator diagnostics; production renders
    leave it on "mis".
    """

    samples_per_pixel: int = 4096
    max_bounces: int = 6
    seed: int = 0
    clamp_indirect: float = 10.0
    tile_size: int = 32
    estimator: str = "mis"

    def __post_init__(self):
        if self.samples_per_pixel < 1:
            raise ValueError("samples_per_pixel must be >= 1")
        if self.max_bounces < 1:
            raise ValueError("max_bounces must be >= 1")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 bits")
        if self.clamp_indirect <= 0.0:
            raise ValueError("clamp_indirect must be positive")
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if self.estimator not in _ESTIMATORS:
            raise ValueError(f"estimator must be one of {sorted(_ESTIMATORS)}")


def _quad_frame(light: AreaLight):
    n = np.asarray(light.orientation, dtype=np.float64)
    helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.99 else np.array([1.0, 0.0, 0.0])
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    e = light.edge_length
    eu = t1 * e
    ev = t2 * e
    c0 = np.asarray(light.center, dtype=np.float64) - 0.5 * eu - 0.5 * ev
    return c0, eu, ev, n


class _FlatLighting:
    """Kernel-ready arrays for one lighting specification."""

    def __init__(self, lighting: LightingSpec):
        points = []
        intensities = []
        area = None
        ambient = np.zeros(3)
        env = None
        for comp in lighting.components:
            if isinstance(comp, PointLights):
                for pl in comp.lights:
                    points.append(pl.position)
                    intensities.append(pl.intensity)
            elif isinstance(comp, AreaLight):
                if area is not None:
                    raise ValueError("scenes support a single area light")
                area = comp
            elif isinstance(comp, UniformAmbient):
                ambient = ambient + comp.radiance_rgb
            elif isinstance(comp, EnvironmentLight):
                if env is not None:
                    raise ValueError("scenes support a single environment light")
                env = comp
            else:
                raise TypeError(f"unknown lighting component {type(comp).__name__}")

        self.point_pos = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.point_int = np.asarray(intensities, dtype=np.float64)
        self.ambient = np.ascontiguousarray(ambient)

        if area is None:
            self.has_area = 0
            z3 = np.zeros(3)
            self.a_c0 = z3
            self.a_eu = z3
            self.a_ev = z3
            self.a_n = z3
            self.a_rad = 0.0
            self.a_area = 1.0
            self.a_ilu2 = 0.0
            self.a_ilv2 = 0.0
        else:
            c0, eu, ev, n = _quad_frame(area)
            self.has_area = 1
            self.a_c0 = c0
            self.a_eu = eu
            self.a_ev = ev
            self.a_n = n
            self.a_rad = float(area.radiance)
            self.a_area = float(area.edge_length**2)
            self.a_ilu2 = 1.0 / float(eu @ eu)
            self.a_ilv2 = 1.0 / float(ev @ ev)

        if env is None:
            self.has_env = 0
            self.env_tex = np.zeros((1, 2, 3), dtype=np.float32)
            self.env_row_cdf = np.ones(1)
            self.env_cond_cdf = np.ones((1, 2))
            self.env_cos_edges = np.array([1.0, -1.0])
            self.env_pdf_map = np.full((1, 2), 1.0 / (4.0 * math.pi))
            self.env_rot = 0.0
        else:
            em = env.env
            self.has_env = 1
            self.env_tex = np.ascontiguousarray(em.texels, dtype=np.float32)
            self.env_row_cdf = np.ascontiguousarray(em.row_cdf)
            self.env_cond_cdf = np.ascontiguousarray(em.cond_cdf)
            self.env_cos_edges = np.ascontiguousarray(em._cos_edges)
            self.env_pdf_map = np.ascontiguousarray(em.pdf_map)
            self.env_rot = float(env.rotation)


def _camera_arrays(camera: CameraSpec):
    right, up, forward = camera.basis()
    return (np.ascontiguousarray(camera.eye, dtype=np.float64),
            np.ascontiguousarray(right), np.ascontiguousarray(up),
            np.ascontiguousarray(forward), float(camera.focal_px))


def _render_flat(bvh: Bvh, material, flat: _FlatLighting,
                 camera: CameraSpec, settings: RenderSettings) -> HdrImage:
    w, h = camera.width, camera.height
    tile = settings.tile_size
    n_tiles_x = (w + tile - 1) // tile
    n_tiles_y = (h + tile - 1) // tile
    n_tiles = n_tiles_x * n_tiles_y
    eye, cr, cu, cf, focal = _camera_arrays(camera)

    out_rgb = np.zeros((h, w, 3), dtype=np.float64)
    out_alpha = np.zeros((h, w), dtype=np.float64)
    tile_nan = np.zeros(n_tiles, dtype=np.int64)
    tile_clamp = np.zeros(n_tiles, dtype=np.int64)
    params = material.params if isinstance(material, ProxyMaterial) else material
    mat = np.array(params.scalars, dtype=np.float64)

    t0 = time.perf_counter()
    trace.render_kernel(out_rgb, out_alpha, tile_nan, tile_clamp,
                        w, h, tile, n_tiles_x, n_tiles,
                        eye, cr, cu, cf, focal,
                        settings.samples_per_pixel, settings.max_bounces,
                        np.uint64(settings.seed), settings.clamp_indirect,
                        _ESTIMATORS[settings.estimator],
                        bvh.node_min, bvh.node_max, bvh.node_right,
                        bvh.node_start, bvh.node_count,
                        bvh.tri_v0, bvh.tri_e1, bvh.tri_e2,
                        bvh.tri_n0, bvh.tri_n1, bvh.tri_n2, bvh.tri_gn,
                        mat,
                        flat.point_pos, flat.point_int,
                        flat.has_area, flat.a_c0, flat.a_eu, flat.a_ev,
                        flat.a_n, flat.a_rad, flat.a_area,
                        flat.a_ilu2, flat.a_ilv2,
                        flat.ambient,
                        flat.has_env, flat.env_tex, flat.env_row_cdf,
                        flat.env_cond_cdf, flat.env_cos_edges,
                        flat.env_pdf_map, flat.env_rot)
    seconds = time.perf_counter() - t0

    diag = {
        "spp": settings.samples_per_pixel,
        "rejected_nan_samples": int(tile_nan.sum()),
        "clamped_samples": int(tile_clamp.sum()),
        "render_seconds": seconds,
    }
    return HdrImage(out_rgb.astype(np.float32),
                    alpha=out_alpha.astype(np.float32),
                    diagnostics=diag)


def render(mesh: ProxyMesh, material, lighting: LightingSpec,
           camera: CameraSpec, settings: RenderSettings) -> HdrImage:
    """Path-trace one scene; ``material`` is a ProxyMaterial or DisneyParams.

    Identical (mesh, material, lighting, camera, settings) inputs produce
    bit-identical images; non-finite samples are rejected, resampled, and
    counted in ``image.diagnostics``.
    """
    if mesh.n_triangles == 0:
        raise ValueError("mesh has no triangles")
    bvh = build_bvh(mesh.vertices, mesh.triangles, mesh.shading_normals)
    return _render_flat(bvh, material, _FlatLighting(lighting), camera, settings)


def render_radiance_hints(mesh: ProxyMesh, lighting: LightingSpec,
                          camera: CameraSpec, settings: RenderSettings,
                          hint_count: int = 4):
    """Render the proxy under each hint material.

    All hints share camera, lighting, and the seed, so the coverage alpha
    is bit-identical across the set.
    """
    from .packing import RadianceHintSet

    if mesh.n_triangles == 0:
        raise ValueError("mesh has no triangles")
    bvh = build_bvh(mesh.vertices, mesh.triangles, mesh.shading_normals)
    flat = _FlatLighting(lighting)
    materials = hint_materials(hint_count)
    images = tuple(_render_flat(bvh, m, flat, camera, settings) for m in materials)
    return RadianceHintSet(hints=images)


def render_background(env: EnvMap, camera: CameraSpec,
                      rotation: float = 0.0) -> HdrImage:
    """Environment backplate: eval_env along every pixel-center ray."""
    right, up, forward = camera.basis()
    f = camera.focal_px
    w, h = camera.width, camera.height
    xs = (np.arange(w) + 0.5 - w / 2.0) / f
    ys = (h / 2.0 - (np.arange(h) + 0.5)) / f
    d = (xs[None, :, None] * right[None, None, :]
         + ys[:, None, None] * up[None, None, :]
         + forward[None, None, :])
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    rgb = eval_env(env, d, rotation)
    return HdrImage(rgb.astype(np.float32))


def write_diagnostics(image: HdrImage, path) -> None:
    """JSON sidecar for a rendered image."""
    if image.diagnostics is None:
        raise ValueError("image carries no diagnostics")
    with open(path, "w") as fh:
        json.dump(image.diagnostics, fh, indent=2, sort_keys=True)
        fh.write("\n")
