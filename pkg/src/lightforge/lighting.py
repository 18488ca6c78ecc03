"""Training lighting categories, environment maps, and their samplers.

Scene frame: the object sits at the origin with +Y up. Light elevation is
measured from the horizon, so position = r (cos e cos a, sin e, cos e sin a)
for elevation e and azimuth a.

Equirectangular mapping (2:1): u = azimuth / 2pi with wrap-around,
v = polar / pi with v = 0 at +Y. Rotating an environment by ``rotation``
radians shifts its features toward larger azimuth, i.e. lookups subtract
the rotation.

Radiometric conventions (the wattage semantics of the source material's
renderer are not recoverable, so these are fixed here and documented):

* point light: isotropic intensity I = power / 4pi [W/sr]
* uniform ambient: radiance = power * AMBIENT_RADIANCE_PER_WATT, with
  AMBIENT_RADIANCE_PER_WATT = 1 / 4pi^2, the point-light convention spread
  over the sphere of directions
* square area light: one-sided Lambertian emitter,
  radiance L = power / (pi * edge_length^2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

AMBIENT_RADIANCE_PER_WATT = 1.0 / (4.0 * math.pi**2)

# Rec.709 / sRGB primaries
LUMA_R = 0.2126
LUMA_G = 0.7152
LUMA_B = 0.0722

POINT_ELEVATION_MAX = math.radians(60.0)
POINT_RADIUS_RANGE = (4.0, 5.0)
POINT_POWER_RANGE = (500.0, 1500.0)
AREA_EDGE_RANGE = (5.0, 10.0)
COMPANION_AMBIENT_POWER = 1.0

# texels darker than this fraction of the mean luminance still get sampling
# mass, so the pdf never vanishes where radiance is nonzero
_LUM_FLOOR_FRACTION = 1e-4

CATEGORIES = (1, 2, 3, 4, 5)


def luminance(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    return LUMA_R * rgb[..., 0] + LUMA_G * rgb[..., 1] + LUMA_B * rgb[..., 2]


# ---------------------------------------------------------------------------
# light components
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointLight:
    position: tuple                # meters
    power: float                   # watts

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))
        if not (0.0 < self.power < math.inf):
            raise ValueError(f"power must be positive and finite, got {self.power}")

    @property
    def intensity(self) -> float:
        """Isotropic intensity in W/sr."""
        return self.power / (4.0 * math.pi)


@dataclass(frozen=True)
class PointLights:
    lights: tuple

    def __post_init__(self):
        object.__setattr__(self, "lights", tuple(self.lights))
        if not self.lights:
            raise ValueError("empty point light group")


@dataclass(frozen=True)
class AreaLight:
    center: tuple                  # meters
    orientation: tuple             # unit normal of the emitting face
    edge_length: float             # meters, square panel
    power: float                   # watts

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        o = np.asarray(self.orientation, dtype=np.float64)
        n = np.linalg.norm(o)
        if n == 0.0:
            raise ValueError("zero orientation")
        object.__setattr__(self, "orientation", tuple(o / n))
        if not (0.0 < self.power < math.inf):
            raise ValueError(f"power must be positive and finite, got {self.power}")
        if self.edge_length <= 0.0:
            raise ValueError("edge_length must be positive")

    @property
    def radiance(self) -> float:
        """One-sided Lambertian emission radiance in W/(sr m^2)."""
        return self.power / (math.pi * self.edge_length**2)


@dataclass(frozen=True)
class UniformAmbient:
    """Constant isotropic background radiance.

    ``color`` is a per-channel multiplier on the white radiance level; the
    training categories always use white, but a colored ambient is what
    makes the channel-permutation augmentation physically checkable.
    """

    power: float                   # watt-equivalent, see module docstring
    color: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not (0.0 < self.power < math.inf):
            raise ValueError(f"power must be positive and finite, got {self.power}")
        col = tuple(float(c) for c in self.color)
        object.__setattr__(self, "color", col)
        if len(col) != 3 or any(not (0.0 <= c < math.inf) for c in col):
            raise ValueError(f"color must be a finite non-negative RGB triple, got {col}")

    @property
    def radiance(self) -> float:
        return self.power * AMBIENT_RADIANCE_PER_WATT

    @property
    def radiance_rgb(self) -> np.ndarray:
        return self.radiance * np.asarray(self.color, dtype=np.float64)


@dataclass(frozen=True)
class EnvironmentLight:
    env: "EnvMap"
    rotation: float                # radians
    monochrome: bool = False
    source_path: Optional[str] = None


@dataclass(frozen=True)
class LightingSpec:
    components: tuple
    category: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))


# ---------------------------------------------------------------------------
# environment maps
# ---------------------------------------------------------------------------

class EnvMap:
    """Equirectangular radiance map with luminance-CDF importance tables.

    Immutable after construction; sampling state lives in caller rngs.
    """

    def __init__(self, texels: np.ndarray, source_path: Optional[str] = None):
        texels = np.asarray(texels, dtype=np.float32)
        if texels.ndim != 3 or texels.shape[2] != 3:
            raise ValueError("env map must be (H, W, 3)")
        h, w = texels.shape[:2]
        if w != 2 * h:
            raise ValueError(f"env map must be 2:1 equirectangular, got {w}x{h}")
        if not np.isfinite(texels).all():
            raise ValueError("env map contains non-finite texels")
        if texels.min() < 0.0:
            raise ValueError("env map contains negative texels")
        self.texels = texels
        self.texels.setflags(write=False)
        self.source_path = source_path
        self._build_cdfs()

    @property
    def height(self) -> int:
        return self.texels.shape[0]

    @property
    def width(self) -> int:
        return self.texels.shape[1]

    def _build_cdfs(self):
        h, w = self.height, self.width
        theta_edges = np.linspace(0.0, math.pi, h + 1)
        band = np.cos(theta_edges[:-1]) - np.cos(theta_edges[1:])   # (H,)
        self.texel_solid_angle = band * (2.0 * math.pi / w)          # per texel of row
        lum = luminance(self.texels)
        mean = float(lum.mean())
        floor = _LUM_FLOOR_FRACTION * mean if mean > 0.0 else 1.0
        weight = np.maximum(lum, floor) * self.texel_solid_angle[:, None]
        total = float(weight.sum())
        self.pdf_map = np.maximum(lum, floor) / total                # per steradian
        row_w = weight.sum(axis=1)
        self.row_cdf = np.cumsum(row_w) / total
        self.row_cdf[-1] = 1.0
        cond = np.cumsum(weight, axis=1) / row_w[:, None]
        cond[:, -1] = 1.0
        self.cond_cdf = cond
        self._cos_edges = np.cos(theta_edges)


def load_env_map(path) -> EnvMap:
    from .imageio import read_radiance_image

    arr = read_radiance_image(path)
    return EnvMap(arr, source_path=str(path))


def to_monochrome(env: EnvMap) -> EnvMap:
    """Rec.709 luminance-only copy; exact no-op on already gray texels."""
    t = env.texels
    gray = (t[..., 0] == t[..., 1]) & (t[..., 1] == t[..., 2])
    y = luminance(t).astype(np.float32)
    mono = np.where(gray[..., None], t, y[..., None])
    return EnvMap(mono, source_path=env.source_path)


def _dir_to_spherical(direction: np.ndarray):
    d = np.asarray(direction, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 1], -1.0, 1.0))
    phi = np.arctan2(d[..., 2], d[..., 0]) % (2.0 * math.pi)
    return theta, phi


def _spherical_to_dir(theta, phi):
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), np.cos(theta), st * np.sin(phi)], axis=-1)


def eval_env(env: EnvMap, direction, rotation: float = 0.0) -> np.ndarray:
    """Bilinear radiance lookup; ``direction`` is one or many unit vectors."""
    theta, phi = _dir_to_spherical(direction)
    u = ((phi - rotation) / (2.0 * math.pi)) % 1.0
    v = theta / math.pi
    h, w = env.height, env.width
    x = u * w - 0.5
    y = v * h - 0.5
    j0 = np.floor(x).astype(np.int64)
    i0 = np.floor(y).astype(np.int64)
    fx = x - j0
    fy = y - i0
    j0w = j0 % w
    j1w = (j0 + 1) % w
    i0c = np.clip(i0, 0, h - 1)
    i1c = np.clip(i0 + 1, 0, h - 1)
    t = env.texels
    fx = fx[..., None]
    fy = fy[..., None]
    top = t[i0c, j0w] * (1.0 - fx) + t[i0c, j1w] * fx
    bot = t[i1c, j0w] * (1.0 - fx) + t[i1c, j1w] * fx
    return top * (1.0 - fy) + bot * fy


def sample_env(env: EnvMap, rng: np.random.Generator, count: int = 1,
               rotation: float = 0.0):
    """Luminance-importance draws: (directions (N,3), pdf per steradian (N,)).

    Within the chosen texel the position is solid-angle uniform (uniform in
    cos-theta and azimuth), so a constant map yields pdf = 1/4pi exactly.
    """
    u = rng.random((count, 4))
    rows = np.searchsorted(env.row_cdf, u[:, 0], side="left")
    rows = np.minimum(rows, env.height - 1)
    cols = np.empty(count, dtype=np.int64)
    for k in range(count):
        cols[k] = np.searchsorted(env.cond_cdf[rows[k]], u[k, 1], side="left")
    cols = np.minimum(cols, env.width - 1)

    ctop = env._cos_edges[rows]
    cbot = env._cos_edges[rows + 1]
    cos_t = ctop + u[:, 2] * (cbot - ctop)
    theta = np.arccos(np.clip(cos_t, -1.0, 1.0))
    phi_env = (cols + u[:, 3]) * (2.0 * math.pi / env.width)
    dirs = _spherical_to_dir(theta, (phi_env + rotation) % (2.0 * math.pi))
    pdf = env.pdf_map[rows, cols]
    return dirs, pdf


def pdf_env(env: EnvMap, direction, rotation: float = 0.0):
    """Density that sample_env would report for these directions."""
    theta, phi = _dir_to_spherical(direction)
    u = ((phi - rotation) / (2.0 * math.pi)) % 1.0
    v = theta / math.pi
    i = np.minimum((v * env.height).astype(np.int64), env.height - 1)
    j = np.minimum((u * env.width).astype(np.int64), env.width - 1)
    return env.pdf_map[i, j]


# ---------------------------------------------------------------------------
# category samplers
# ---------------------------------------------------------------------------

def _sample_cap_position(rng: np.random.Generator) -> np.ndarray:
    """Area-uniform elevation in [0, 60 deg], uniform azimuth and radius."""
    sin_e = rng.uniform(0.0, math.sin(POINT_ELEVATION_MAX))
    e = math.asin(sin_e)
    a = rng.uniform(0.0, 2.0 * math.pi)
    r = rng.uniform(*POINT_RADIUS_RANGE)
    return r * np.array([math.cos(e) * math.cos(a), sin_e, math.cos(e) * math.sin(a)])


def _sample_point_light(rng: np.random.Generator) -> PointLight:
    pos = _sample_cap_position(rng)
    power = rng.uniform(*POINT_POWER_RANGE)
    return PointLight(position=tuple(pos), power=float(power))


def sample_lighting(category: int, rng: np.random.Generator,
                    env_pool: Optional[Sequence[EnvMap]] = None) -> LightingSpec:
    """Draw one lighting configuration for the given training category.

    1: single point light + 1 W ambient. 2: three point lights + ambient.
    3: environment map, random rotation. 4: luminance-only environment map.
    5: square area light aimed at the origin.
    """
    if category not in CATEGORIES:
        raise ValueError(f"category must be in {CATEGORIES}, got {category}")
    if category in (3, 4):
        if not env_pool:
            raise ValueError(f"category {category} requires a non-empty env map pool")
        env = env_pool[int(rng.integers(len(env_pool)))]
        rotation = float(rng.uniform(0.0, 2.0 * math.pi))
        if category == 4:
            env = to_monochrome(env)
        comp = EnvironmentLight(env=env, rotation=rotation,
                                monochrome=(category == 4),
                                source_path=env.source_path)
        return LightingSpec(components=(comp,), category=category)
    if category in (1, 2):
        n = 1 if category == 1 else 3
        group = PointLights(lights=tuple(_sample_point_light(rng) for _ in range(n)))
        ambient = UniformAmbient(power=COMPANION_AMBIENT_POWER)
        return LightingSpec(components=(group, ambient), category=category)
    # category 5
    center = _sample_cap_position(rng)
    orientation = -center / np.linalg.norm(center)
    comp = AreaLight(center=tuple(center), orientation=tuple(orientation),
                     edge_length=float(rng.uniform(*AREA_EDGE_RANGE)),
                     power=float(rng.uniform(*POINT_POWER_RANGE)))
    return LightingSpec(components=(comp,), category=category)


# ---------------------------------------------------------------------------
# JSON schema
# ---------------------------------------------------------------------------

def lighting_to_json(spec: LightingSpec) -> dict:
    """Stable serialization; environments are stored by source path."""
    comps = []
    for c in spec.components:
        if isinstance(c, PointLights):
            comps.append({
                "type": "point_lights",
                "lights": [{"position": list(l.position), "power": l.power}
                           for l in c.lights],
            })
        elif isinstance(c, AreaLight):
            comps.append({
                "type": "area_light",
                "center": list(c.center),
                "orientation": list(c.orientation),
                "edge_length": c.edge_length,
                "power": c.power,
            })
        elif isinstance(c, UniformAmbient):
            comps.append({"type": "uniform_ambient", "power": c.power,
                          "color": list(c.color)})
        elif isinstance(c, EnvironmentLight):
            if c.source_path is None:
                raise ValueError("cannot serialize an environment with no source path")
            comps.append({
                "type": "environment",
                "path": c.source_path,
                "rotation": c.rotation,
                "monochrome": c.monochrome,
            })
        else:
            raise TypeError(f"unknown lighting component {type(c).__name__}")
    out = {"components": comps}
    if spec.category is not None:
        out["category"] = spec.category
    return out


def lighting_from_json(obj: dict,
                       load_env: Callable[[str], EnvMap] = load_env_map) -> LightingSpec:
    comps = []
    for c in obj["components"]:
        t = c["type"]
        if t == "point_lights":
            comps.append(PointLights(lights=tuple(
                PointLight(position=tuple(l["position"]), power=l["power"])
                for l in c["lights"])))
        elif t == "area_light":
            comps.append(AreaLight(center=tuple(c["center"]),
                                   orientation=tuple(c["orientation"]),
                                   edge_length=c["edge_length"], power=c["power"]))
        elif t == "uniform_ambient":
            comps.append(UniformAmbient(power=c["power"],
                                        color=tuple(c.get("color", (1.0, 1.0, 1.0)))))
        elif t == "environment":
            env = load_env(c["path"])
            if c.get("monochrome", False):
                env = to_monochrome(env)
            comps.append(EnvironmentLight(env=env, rotation=c["rotation"],
                                          monochrome=c.get("monochrome", False),
                                          source_path=c["path"]))
        else:
            raise ValueError(f"unknown component type {t!r}")
    return LightingSpec(components=tuple(comps), category=obj.get("category"))
