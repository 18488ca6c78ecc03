"""Relighting-corpus synthesis: viewpoint sampling, per-object lighting
slates, pairing rules, and manifest persistence.

The corpus is a pure function of (seed, config). Every work item derives
its own rng from the global seed plus a domain tag and item indices, so
items can be regenerated (or parallelized) independently without changing
a single byte of output.

Real captured objects and photographed environment maps are out of scope;
procedural stand-ins (shapes module, synthesized env pool) fill both roles.
"""

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .brdf import sample_augmented_material
from .geometry import (CameraSpec, DepthMap, ForegroundMask, ProxyMesh,
                       backproject, laplace_smooth, set_shading_normals,
                       triangulate)
from .imageio import HdrImage, read_pfm, write_hdr, write_pfm
from .lighting import EnvMap, LightingSpec, lighting_to_json, sample_lighting
from .packing import COLOR_PERMUTATIONS, permute_color_channels
from .render import RenderSettings, render, render_radiance_hints
from .shapes import OBJECT_KINDS, gen_procedural_object

SCHEMA_VERSION = 1

VIEWS_PER_OBJECT = 4
ELEVATION_RANGE = (10.0, 90.0)       # degrees above the horizon
DISTANCE_RANGE = (0.8, 1.1)          # meters
FOV_RANGE = (25.0, 30.0)             # degrees

# per-object lighting slate: 3 point, 1 multi-point, 3 environment,
# 2 monochrome environment, 3 area
SLATE_CATEGORIES = (1, 1, 1, 2, 3, 3, 3, 4, 4, 5, 5, 5)
COLORED_ENV_CATEGORY = 3

SMOOTHED_VARIANT_PROB = 0.1
HINT_VARIANTS = ("geometric", "smoothed_depth")

DEPTH_BLUR_SIGMA = 2.0               # px
DEPTH_WARP_AMPLITUDE = 0.02          # fraction of the valid depth range

# rng domain tags; new domains append, existing ones never renumber
_SEED_ENV = 0
_SEED_OBJECT = 1
_SEED_MATERIAL = 2
_SEED_VIEWS = 3
_SEED_SLATE = 4
_SEED_RENDER = 5
_SEED_DEGRADE = 6
_SEED_PAIR = 7


def _rng(seed: int, domain: int, *indices) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, domain) + indices))


def _render_seed(seed: int, *indices) -> int:
    ss = np.random.SeedSequence((seed, _SEED_RENDER) + indices)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# viewpoints
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ViewSpec:
    """One orbit pose: spherical camera position plus intrinsics."""

    elevation: float                 # degrees
    azimuth: float                   # degrees
    distance: float                  # meters
    vertical_fov: float              # degrees

    def __post_init__(self):
        lo, hi = ELEVATION_RANGE
        if not (lo <= self.elevation <= hi):
            raise ValueError(f"elevation must be in [{lo}, {hi}] deg, got {self.elevation}")
        if not (0.0 <= self.azimuth < 360.0):
            raise ValueError(f"azimuth must be in [0, 360) deg, got {self.azimuth}")
        lo, hi = DISTANCE_RANGE
        if not (lo <= self.distance <= hi):
            raise ValueError(f"distance must be in [{lo}, {hi}] m, got {self.distance}")
        lo, hi = FOV_RANGE
        if not (lo <= self.vertical_fov <= hi):
            raise ValueError(f"fov must be in [{lo}, {hi}] deg, got {self.vertical_fov}")

    def camera(self, width: int, height: int) -> CameraSpec:
        el = math.radians(self.elevation)
        az = math.radians(self.azimuth)
        eye = self.distance * np.array([
            math.cos(el) * math.cos(az), math.sin(el), math.cos(el) * math.sin(az)])
        # near the zenith +Y degenerates as an up hint
        up = np.array([0.0, 1.0, 0.0]) if self.elevation < 89.0 else \
            np.array([1.0, 0.0, 0.0])
        return CameraSpec(eye=eye, look_at=np.zeros(3), up=up,
                          vertical_fov=self.vertical_fov,
                          width=width, height=height)

    def to_json(self) -> dict:
        return {"elevation": self.elevation, "azimuth": self.azimuth,
                "distance": self.distance, "vertical_fov": self.vertical_fov}


def sample_viewpoints(rng: np.random.Generator):
    """Four poses: cap-uniform elevation, uniform azimuth/distance/fov."""
    views = []
    sin_lo = math.sin(math.radians(ELEVATION_RANGE[0]))
    for _ in range(VIEWS_PER_OBJECT):
        elevation = math.degrees(math.asin(rng.uniform(sin_lo, 1.0)))
        azimuth = rng.uniform(0.0, 360.0)
        distance = rng.uniform(*DISTANCE_RANGE)
        fov = rng.uniform(*FOV_RANGE)
        views.append(ViewSpec(elevation=min(elevation, 90.0), azimuth=azimuth,
                              distance=distance, vertical_fov=fov))
    return tuple(views)


# ---------------------------------------------------------------------------
# lighting slates
# ---------------------------------------------------------------------------

def assign_lighting_slate(rng: np.random.Generator, env_pool):
    """Twelve lighting draws in the fixed category block order."""
    if not env_pool:
        raise ValueError("environment map pool is empty")
    return tuple(sample_lighting(c, rng, env_pool) for c in SLATE_CATEGORIES)


def slate_ratio_config() -> dict:
    counts = {}
    for c in SLATE_CATEGORIES:
        counts[str(c)] = counts.get(str(c), 0) + 1
    return counts


# ---------------------------------------------------------------------------
# pairing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LightingRender:
    """The on-disk outputs of one (object, view, lighting) work item."""

    object_id: str
    view_id: str
    lighting_id: str
    category: int
    render_path: str
    hint_paths: tuple                # geometric-normal hint files
    smoothed_hint_paths: tuple       # degraded-depth-normal hint files
    mask_path: str


@dataclass(frozen=True)
class SampleRecord:
    """One training pair: which render conditions which, and how."""

    object_id: str
    view_id: str
    input_lighting: str
    output_lighting: str
    hint_variant: str                # {geometric, smoothed_depth}
    permutation: int                 # index into COLOR_PERMUTATIONS
    input_render: str
    output_render: str
    hint_paths: tuple
    mask_path: str

    def __post_init__(self):
        if self.hint_variant not in HINT_VARIANTS:
            raise ValueError(f"unknown hint variant {self.hint_variant!r}")
        if not (0 <= self.permutation < len(COLOR_PERMUTATIONS)):
            raise ValueError(f"permutation id out of range: {self.permutation}")
        object.__setattr__(self, "hint_paths", tuple(self.hint_paths))

    def to_json(self) -> dict:
        return {
            "object_id": self.object_id,
            "view_id": self.view_id,
            "input_lighting": self.input_lighting,
            "output_lighting": self.output_lighting,
            "hint_variant": self.hint_variant,
            "permutation": self.permutation,
            "input_render": self.input_render,
            "output_render": self.output_render,
            "hint_paths": list(self.hint_paths),
            "mask_path": self.mask_path,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SampleRecord":
        try:
            return cls(object_id=obj["object_id"], view_id=obj["view_id"],
                       input_lighting=obj["input_lighting"],
                       output_lighting=obj["output_lighting"],
                       hint_variant=obj["hint_variant"],
                       permutation=int(obj["permutation"]),
                       input_render=obj["input_render"],
                       output_render=obj["output_render"],
                       hint_paths=tuple(obj["hint_paths"]),
                       mask_path=obj["mask_path"])
        except KeyError as exc:
            raise ValueError(f"sample record is missing field {exc}") from exc


def compose_training_pair(renders, rng: np.random.Generator) -> SampleRecord:
    """Draw one (input, output) pair from a fully rendered slate.

    Draw order is part of the format: input index, output index, variant
    uniform, permutation. The input never comes from a colored-environment
    condition and is never color-permuted; the permutation id applies to
    the output render and its hints jointly, at load time.
    """
    renders = list(renders)
    if len(renders) != len(SLATE_CATEGORIES):
        raise ValueError(f"expected {len(SLATE_CATEGORIES)} slate renders, got {len(renders)}")
    for r in renders:
        if not r.render_path:
            raise ValueError(f"{r.lighting_id}: missing render")
        if not r.hint_paths or not r.smoothed_hint_paths:
            raise ValueError(f"{r.lighting_id}: missing hint variant files")
    candidates = [r for r in renders if r.category != COLORED_ENV_CATEGORY]
    if not candidates:
        raise ValueError("no legal input conditions in slate")

    inp = candidates[int(rng.integers(len(candidates)))]
    out = renders[int(rng.integers(len(renders)))]
    variant = "smoothed_depth" if rng.random() < SMOOTHED_VARIANT_PROB \
        else "geometric"
    perm = int(rng.integers(len(COLOR_PERMUTATIONS)))
    hints = out.smoothed_hint_paths if variant == "smoothed_depth" \
        else out.hint_paths
    return SampleRecord(object_id=out.object_id, view_id=out.view_id,
                        input_lighting=inp.lighting_id,
                        output_lighting=out.lighting_id,
                        hint_variant=variant, permutation=perm,
                        input_render=inp.render_path,
                        output_render=out.render_path,
                        hint_paths=hints, mask_path=out.mask_path)


def materialize_pair(record: SampleRecord, root):
    """Load a record's images, applying its color permutation.

    Returns (input image, output image, hint images, mask). The permutation
    touches the output render and hints only; replaying the same record is
    bit-exact because the stored files are unpermuted originals.
    """
    root = Path(root)
    perm = COLOR_PERMUTATIONS[record.permutation]
    inp = HdrImage(read_pfm(root / record.input_render))
    out = HdrImage(read_pfm(root / record.output_render))
    hints = [HdrImage(read_pfm(root / p)) for p in record.hint_paths]
    out, *hints = permute_color_channels([out] + hints, perm)
    mask = ForegroundMask.from_png(root / record.mask_path)
    return inp, out, hints, mask


# ---------------------------------------------------------------------------
# manifest persistence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetManifest:
    seed: int
    records: tuple
    ratio_config: dict = field(default_factory=slate_ratio_config)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))


def _header_path(path: Path) -> Path:
    return path.with_name(path.name + ".header.json")


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_manifest(manifest: DatasetManifest, path) -> None:
    """JSON-Lines records plus a sidecar header; output is byte-stable."""
    path = Path(path)
    header = {
        "schema_version": manifest.schema_version,
        "seed": manifest.seed,
        "ratio_config": manifest.ratio_config,
        "record_count": len(manifest.records),
    }
    _header_path(path).write_text(_canonical(header) + "\n")
    with open(path, "w") as fh:
        for rec in manifest.records:
            fh.write(_canonical(rec.to_json()) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    hp = _header_path(path)
    if not hp.exists():
        raise ValueError(f"manifest header not found: {hp}")
    try:
        header = json.loads(hp.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt manifest header: {exc}") from exc
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported manifest schema version {version!r}, expected {SCHEMA_VERSION}")
    records = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(SampleRecord.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{ln}: corrupt record: {exc}") from exc
    if len(records) != header.get("record_count"):
        raise ValueError(
            f"{path}: header promises {header.get('record_count')} records, "
            f"found {len(records)}")
    return DatasetManifest(seed=int(header["seed"]), records=tuple(records),
                           ratio_config=dict(header["ratio_config"]),
                           schema_version=int(version))


# ---------------------------------------------------------------------------
# depth degradation
# ---------------------------------------------------------------------------

def degrade_depth(depth: DepthMap, rng: np.random.Generator) -> DepthMap:
    """Emulate estimator error: 2 px Gaussian blur plus a low-frequency
    sinusoidal bias of 2% of the valid depth range."""
    vals = depth.values.astype(np.float64)
    valid = depth.valid if depth.valid is not None else vals > 0.0
    m = valid.astype(np.float64)
    num = ndimage.gaussian_filter(vals * m, DEPTH_BLUR_SIGMA)
    den = ndimage.gaussian_filter(m, DEPTH_BLUR_SIGMA)
    blurred = np.where(valid, num / np.maximum(den, 1e-12), vals)

    inside = vals[valid]
    amp = DEPTH_WARP_AMPLITUDE * float(inside.max() - inside.min()) \
        if inside.size else 0.0
    h, w = vals.shape
    fy, fx = rng.uniform(0.5, 1.5, 2)
    py, px = rng.uniform(0.0, 1.0, 2)
    yy = np.linspace(0.0, 1.0, h, endpoint=False)[:, None]
    xx = np.linspace(0.0, 1.0, w, endpoint=False)[None, :]
    warp = amp * np.sin(2.0 * math.pi * (fx * xx + px)) \
        * np.sin(2.0 * math.pi * (fy * yy + py))
    out = np.where(valid, np.maximum(blurred + warp, 1e-4), 0.0)
    return DepthMap(values=out.astype(np.float32), valid=valid)


# ---------------------------------------------------------------------------
# proxy construction
# ---------------------------------------------------------------------------

def _vertex_pixels(verts_cam: np.ndarray, camera: CameraSpec):
    """Grid pixel of each backprojected vertex (exact for unmoved vertices)."""
    f = camera.focal_px
    z = verts_cam[:, 2]
    cols = np.rint(f * verts_cam[:, 0] / z + camera.width / 2.0 - 0.5)
    rows = np.rint(camera.height / 2.0 - f * verts_cam[:, 1] / z - 0.5)
    return rows.astype(np.int64), cols.astype(np.int64)


def _to_world(mesh: ProxyMesh, camera: CameraSpec) -> ProxyMesh:
    right, up, fwd = camera.basis()
    basis = np.stack([right, up, fwd])          # rows
    out = replace(mesh,
                  vertices=camera.camera_to_world(mesh.vertices),
                  geometric_normals=mesh.geometric_normals @ basis,
                  shading_normals=mesh.shading_normals @ basis)
    if mesh.alt_normals is not None:
        out.alt_normals = mesh.alt_normals @ basis
    return out


def build_hint_proxy(depth: DepthMap, mask: ForegroundMask, camera: CameraSpec,
                     rng: np.random.Generator) -> ProxyMesh:
    """Depth-derived world-space proxy with both shading-normal variants.

    Geometry and geometric normals come from the clean depth (smoothed
    Laplace pass as usual). alt_normals come from re-running the pipeline
    on a degraded copy of the depth, transferred back per source pixel, so
    the smoothed_depth variant perturbs shading only, never silhouettes.
    """
    raw = triangulate(backproject(depth, mask, camera), mask)
    rows, cols = _vertex_pixels(raw.vertices, camera)
    base = laplace_smooth(raw)

    deg_raw = triangulate(backproject(degrade_depth(depth, rng), mask, camera), mask)
    drows, dcols = _vertex_pixels(deg_raw.vertices, camera)
    deg = laplace_smooth(deg_raw)
    normal_map = np.full((camera.height, camera.width, 3), np.nan)
    normal_map[drows, dcols] = deg.geometric_normals

    alt = normal_map[rows, cols]
    missing = ~np.isfinite(alt[:, 0])
    alt[missing] = base.geometric_normals[missing]
    base = replace(base, alt_normals=alt)
    return _to_world(base, camera)


# ---------------------------------------------------------------------------
# environment pool
# ---------------------------------------------------------------------------

ENV_POOL_HEIGHT = 16


def _procedural_env_texels(rng: np.random.Generator, height: int) -> np.ndarray:
    """Colored sky gradient plus a few bright wrapped blobs."""
    h, w = height, 2 * height
    top = rng.uniform(0.2, 1.0, 3)
    bottom = rng.uniform(0.05, 0.4, 3)
    t = np.linspace(0.0, 1.0, h)[:, None, None]
    tex = top * (1.0 - t) + bottom * t
    tex = np.broadcast_to(tex, (h, w, 3)).copy()
    for _ in range(int(rng.integers(2, 5))):
        ci = rng.uniform(0.0, h)
        cj = rng.uniform(0.0, w)
        sigma = rng.uniform(0.8, 2.5)
        color = rng.uniform(0.5, 6.0, 3)
        ii = np.arange(h)[:, None] + 0.5
        jj = np.arange(w)[None, :] + 0.5
        dj = np.minimum(np.abs(jj - cj), w - np.abs(jj - cj))   # azimuth wrap
        r2 = (ii - ci) ** 2 + dj ** 2
        tex += color * np.exp(-r2 / (2.0 * sigma * sigma))[..., None]
    return tex.astype(np.float32)


def make_env_pool(rng: np.random.Generator, out_dir, count: int,
                  height: int = ENV_POOL_HEIGHT):
    """Synthesize ``count`` env maps, persisting each for provenance.

    The returned EnvMaps carry the exact texels; the written files are for
    reference (the Radiance HDR encoding quantizes).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pool = []
    for i in range(count):
        tex = _procedural_env_texels(rng, height)
        name = f"env_{i:02d}.hdr"
        write_hdr(out_dir / name, tex)
        pool.append(EnvMap(tex, source_path=f"{out_dir.name}/{name}"))
    return tuple(pool)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    objects: int = 16
    width: int = 256
    height: int = 256
    samples_per_pixel: int = 256
    hint_samples_per_pixel: int = 0     # 0: same as samples_per_pixel
    hint_count: int = 4
    max_bounces: int = 6
    env_pool_size: int = 6
    pairs_per_view: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.objects < 1:
            raise ValueError("objects must be >= 1")
        if self.width < 8 or self.height < 8:
            raise ValueError("resolution must be at least 8x8")
        if self.samples_per_pixel < 1:
            raise ValueError("samples_per_pixel must be >= 1")
        if self.hint_samples_per_pixel < 0:
            raise ValueError("hint_samples_per_pixel must be >= 0")
        if self.hint_count not in (3, 4, 5):
            raise ValueError("hint_count must be 3, 4 or 5")
        if self.max_bounces < 1:
            raise ValueError("max_bounces must be >= 1")
        if self.env_pool_size < 1:
            raise ValueError("env_pool_size must be >= 1")
        if self.pairs_per_view < 1:
            raise ValueError("pairs_per_view must be >= 1")

    @property
    def hint_spp(self) -> int:
        return self.hint_samples_per_pixel or self.samples_per_pixel

    def to_json(self) -> dict:
        return {
            "objects": self.objects, "width": self.width, "height": self.height,
            "samples_per_pixel": self.samples_per_pixel,
            "hint_samples_per_pixel": self.hint_samples_per_pixel,
            "hint_count": self.hint_count, "max_bounces": self.max_bounces,
            "env_pool_size": self.env_pool_size,
            "pairs_per_view": self.pairs_per_view, "seed": self.seed,
        }


def _material_json(m) -> dict:
    return {"base_color": list(m.base_color), "roughness": m.roughness,
            "metallic": m.metallic, "specular_tint": m.specular_tint,
            "specular": m.specular}


def _generate_item(out_dir: Path, rel_dir: str, obj, material, proxy,
                   mask, lighting, camera, view, ids, config, seed):
    """Render and persist one (object, view, lighting) directory."""
    out_dir.mkdir(parents=True, exist_ok=True)
    obj_id, view_id, lighting_id = ids
    o, v, l = (int(x) for x in (obj_id.split("_")[1], view_id.split("_")[1],
                                lighting_id.split("_")[1]))
    render_seed = _render_seed(seed, o, v, l)

    settings = RenderSettings(samples_per_pixel=config.samples_per_pixel,
                              max_bounces=config.max_bounces, seed=render_seed)
    image = render(obj.mesh, material, lighting, camera, settings)
    write_pfm(out_dir / "render.pfm", image.data)
    mask.to_png(out_dir / "mask.png")

    hint_settings = RenderSettings(samples_per_pixel=config.hint_spp,
                                   max_bounces=config.max_bounces,
                                   seed=render_seed)
    hint_files = {}
    for variant, suffix in (("geometric", ""), ("smoothed_depth", "_smoothed")):
        hints = render_radiance_hints(set_shading_normals(proxy, variant),
                                      lighting, camera, hint_settings,
                                      hint_count=config.hint_count)
        names = []
        for i, im in enumerate(hints.hints):
            name = f"hint{i}{suffix}.pfm"
            write_pfm(out_dir / name, im.data)
            names.append(f"{rel_dir}/{name}")
        hint_files[variant] = tuple(names)

    meta = {
        "object_id": obj_id, "view_id": view_id, "lighting_id": lighting_id,
        "object_kind": obj.kind, "object_params": obj.params,
        "material": _material_json(material),
        "lighting": lighting_to_json(lighting),
        "category": lighting.category,
        "view": view.to_json(),
        "width": config.width, "height": config.height,
        "samples_per_pixel": config.samples_per_pixel,
        "hint_samples_per_pixel": config.hint_spp,
        "max_bounces": config.max_bounces,
        "render_seed": render_seed,
        "schema_version": SCHEMA_VERSION,
    }
    (out_dir / "meta.json").write_text(_canonical(meta) + "\n")

    return LightingRender(object_id=obj_id, view_id=view_id,
                          lighting_id=lighting_id,
                          category=lighting.category,
                          render_path=f"{rel_dir}/render.pfm",
                          hint_paths=hint_files["geometric"],
                          smoothed_hint_paths=hint_files["smoothed_depth"],
                          mask_path=f"{rel_dir}/mask.png")


def generate_dataset(config: DatasetConfig, root) -> DatasetManifest:
    """Materialize the corpus under ``root`` and return its manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    seed = config.seed
    env_pool = make_env_pool(_rng(seed, _SEED_ENV), root / "envs",
                             config.env_pool_size)

    records = []
    for o in range(config.objects):
        obj_id = f"obj_{o:04d}"
        kind = OBJECT_KINDS[o % len(OBJECT_KINDS)]
        obj = gen_procedural_object(kind, _rng(seed, _SEED_OBJECT, o))
        material = sample_augmented_material(_rng(seed, _SEED_MATERIAL, o))
        views = sample_viewpoints(_rng(seed, _SEED_VIEWS, o))
        slate = assign_lighting_slate(_rng(seed, _SEED_SLATE, o), env_pool)

        for v, view in enumerate(views):
            view_id = f"view_{v}"
            camera = view.camera(config.width, config.height)
            depth, mask = obj.depth_map(camera)
            proxy = build_hint_proxy(depth, mask, camera,
                                     _rng(seed, _SEED_DEGRADE, o, v))

            slate_renders = []
            for l, lighting in enumerate(slate):
                lighting_id = f"light_{l:02d}"
                rel = f"objects/{obj_id}/views/{view_id}/lighting/{lighting_id}"
                slate_renders.append(_generate_item(
                    root / rel, rel, obj, material, proxy, mask, lighting,
                    camera, view, (obj_id, view_id, lighting_id), config, seed))

            for p in range(config.pairs_per_view):
                records.append(compose_training_pair(
                    slate_renders, _rng(seed, _SEED_PAIR, o, v, p)))

    manifest = DatasetManifest(seed=seed, records=tuple(records),
                               ratio_config=slate_ratio_config())
    write_manifest(manifest, root / "manifest.jsonl")
    config_blob = {"config": config.to_json(), "schema_version": SCHEMA_VERSION}
    (root / "config.json").write_text(_canonical(config_blob) + "\n")
    return manifest
