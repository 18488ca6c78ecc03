"""Disney-subset BRDF: Lambertian diffuse plus GGX specular reflection.

The material model keeps exactly the lobes the proxy renders and the
augmentation protocol exercise: a constant Lambertian diffuse term scaled by
(1 - metallic), and a single GGX specular lobe with Smith height-correlated
masking-shadowing and Schlick Fresnel. Sheen, clearcoat and subsurface are
deliberately absent.

Direction convention: ``incoming`` (toward the light) and ``outgoing``
(toward the viewer) both point away from the surface point. Evaluations
below the horizon of the shading normal return zero rather than raising.

The scalar ``*_core`` functions are numba-compiled and shared with the
render kernels; the dataclass API wraps them for interactive use and for
batch evaluation in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

# Disney's tint luminance approximation (not the Rec.709 analysis weights)
_TINT_LUMA_R = 0.3
_TINT_LUMA_G = 0.6
_TINT_LUMA_B = 0.1

MIN_ROUGHNESS = 0.02
_EPS = 1e-9

# lobe-selection probability is clamped so neither lobe starves when both
# carry energy
_P_SPEC_FLOOR = 0.1


@njit(cache=True)
def _ggx_d(alpha: float, cos_h: float) -> float:
    if cos_h <= 0.0:
        return 0.0
    a2 = alpha * alpha
    t = cos_h * cos_h * (a2 - 1.0) + 1.0
    return a2 / (math.pi * t * t)


@njit(cache=True)
def _smith_lambda(alpha: float, mu: float) -> float:
    # mu = cosine between direction and normal, > 0
    a2 = alpha * alpha
    return (math.sqrt(a2 + (1.0 - a2) * mu * mu) / mu - 1.0) * 0.5


@njit(cache=True)
def _schlick(f0: float, c: float) -> float:
    m = 1.0 - c
    if m < 0.0:
        m = 0.0
    m2 = m * m
    return f0 + (1.0 - f0) * m2 * m2 * m


@njit(cache=True)
def _f0_rgb(br, bg, bb, metallic, spec_tint, specular):
    lum = _TINT_LUMA_R * br + _TINT_LUMA_G * bg + _TINT_LUMA_B * bb
    if lum > 0.0:
        tr, tg, tb = br / lum, bg / lum, bb / lum
    else:
        tr, tg, tb = 1.0, 1.0, 1.0
    dr = 0.08 * specular * (1.0 - spec_tint + spec_tint * tr)
    dg = 0.08 * specular * (1.0 - spec_tint + spec_tint * tg)
    db = 0.08 * specular * (1.0 - spec_tint + spec_tint * tb)
    f0r = dr + metallic * (br - dr)
    f0g = dg + metallic * (bg - dg)
    f0b = db + metallic * (bb - db)
    return f0r, f0g, f0b


@njit(cache=True)
def _p_specular(br, bg, bb, metallic, spec_tint, specular) -> float:
    f0r, f0g, f0b = _f0_rgb(br, bg, bb, metallic, spec_tint, specular)
    lum_spec = _TINT_LUMA_R * f0r + _TINT_LUMA_G * f0g + _TINT_LUMA_B * f0b
    lum_diff = (1.0 - metallic) * (
        _TINT_LUMA_R * br + _TINT_LUMA_G * bg + _TINT_LUMA_B * bb
    )
    total = lum_spec + lum_diff
    if total <= 0.0:
        return 0.0
    p = lum_spec / total
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    if p < _P_SPEC_FLOOR:
        return _P_SPEC_FLOOR
    if p > 1.0 - _P_SPEC_FLOOR:
        return 1.0 - _P_SPEC_FLOOR
    return p


@njit(cache=True)
def brdf_eval_core(br, bg, bb, rough, metallic, spec_tint, specular,
                   wix, wiy, wiz, wox, woy, woz, nx, ny, nz):
    ci = wix * nx + wiy * ny + wiz * nz
    co = wox * nx + woy * ny + woz * nz
    if ci <= 0.0 or co <= 0.0:
        return 0.0, 0.0, 0.0
    kd = (1.0 - metallic) / math.pi
    out_r = kd * br
    out_g = kd * bg
    out_b = kd * bb

    f0r, f0g, f0b = _f0_rgb(br, bg, bb, metallic, spec_tint, specular)
    if f0r <= 0.0 and f0g <= 0.0 and f0b <= 0.0:
        # disabled specular lobe (Schlick would still peak at grazing)
        return out_r, out_g, out_b

    hx = wix + wox
    hy = wiy + woy
    hz = wiz + woz
    hl = math.sqrt(hx * hx + hy * hy + hz * hz)
    if hl < _EPS:
        return out_r, out_g, out_b
    hx /= hl
    hy /= hl
    hz /= hl
    cos_h = hx * nx + hy * ny + hz * nz
    doth = wix * hx + wiy * hy + wiz * hz
    if cos_h <= 0.0 or doth <= 0.0:
        return out_r, out_g, out_b

    alpha = rough * rough
    d = _ggx_d(alpha, cos_h)
    g2 = 1.0 / (1.0 + _smith_lambda(alpha, ci) + _smith_lambda(alpha, co))
    spec_k = d * g2 / (4.0 * ci * co)
    out_r += _schlick(f0r, doth) * spec_k
    out_g += _schlick(f0g, doth) * spec_k
    out_b += _schlick(f0b, doth) * spec_k
    return out_r, out_g, out_b


@njit(cache=True)
def _half_vector_pdf(alpha, wix, wiy, wiz, wox, woy, woz, nx, ny, nz):
    """Density of GGX half-vector sampling mapped through reflection."""
    hx = wix + wox
    hy = wiy + woy
    hz = wiz + woz
    hl = math.sqrt(hx * hx + hy * hy + hz * hz)
    if hl < _EPS:
        return 0.0
    hx /= hl
    hy /= hl
    hz /= hl
    cos_h = hx * nx + hy * ny + hz * nz
    doth = wox * hx + woy * hy + woz * hz
    if cos_h <= 0.0 or doth <= _EPS:
        return 0.0
    return _ggx_d(alpha, cos_h) * cos_h / (4.0 * doth)


@njit(cache=True)
def brdf_pdf_core(br, bg, bb, rough, metallic, spec_tint, specular,
                  wix, wiy, wiz, wox, woy, woz, nx, ny, nz):
    ci = wix * nx + wiy * ny + wiz * nz
    co = wox * nx + woy * ny + woz * nz
    if ci <= 0.0 or co <= 0.0:
        return 0.0
    p_spec = _p_specular(br, bg, bb, metallic, spec_tint, specular)
    pdf_cos = ci / math.pi
    if p_spec == 0.0:
        return pdf_cos

    alpha = rough * rough
    # two generating branches: wi directly, and the below-horizon draw that
    # was folded up across the tangent plane onto wi
    pdf_spec = _half_vector_pdf(alpha, wix, wiy, wiz, wox, woy, woz, nx, ny, nz)
    fx = wix - 2.0 * ci * nx
    fy = wiy - 2.0 * ci * ny
    fz = wiz - 2.0 * ci * nz
    pdf_spec += _half_vector_pdf(alpha, fx, fy, fz, wox, woy, woz, nx, ny, nz)
    return p_spec * pdf_spec + (1.0 - p_spec) * pdf_cos


@njit(cache=True)
def _onb(nx, ny, nz):
    # branchless orthonormal basis (Duff et al.)
    s = math.copysign(1.0, nz)
    a = -1.0 / (s + nz)
    b = nx * ny * a
    t1x = 1.0 + s * nx * nx * a
    t1y = s * b
    t1z = -s * nx
    t2x = b
    t2y = s + ny * ny * a
    t2z = -ny
    return t1x, t1y, t1z, t2x, t2y, t2z


@njit(cache=True)
def brdf_sample_core(br, bg, bb, rough, metallic, spec_tint, specular,
                     wox, woy, woz, nx, ny, nz, u1, u2, u3):
    """Draw an incoming direction; returns (wix, wiy, wiz, pdf).

    pdf = 0 marks a failed draw (below-horizon reflection); callers treat
    it as a zero-contribution sample.
    """
    co = wox * nx + woy * ny + woz * nz
    if co <= 0.0:
        return 0.0, 0.0, 0.0, 0.0
    p_spec = _p_specular(br, bg, bb, metallic, spec_tint, specular)
    t1x, t1y, t1z, t2x, t2y, t2z = _onb(nx, ny, nz)

    if u1 < p_spec:
        # sample the GGX half-vector distribution D(h) cos_h, then reflect
        alpha = rough * rough
        c2 = (1.0 - u2) / (1.0 + (alpha * alpha - 1.0) * u2)
        cos_h = math.sqrt(c2)
        sin_h = math.sqrt(max(0.0, 1.0 - c2))
        phi = 2.0 * math.pi * u3
        lx = sin_h * math.cos(phi)
        ly = sin_h * math.sin(phi)
        hx = lx * t1x + ly * t2x + cos_h * nx
        hy = lx * t1y + ly * t2y + cos_h * ny
        hz = lx * t1z + ly * t2z + cos_h * nz
        doth = wox * hx + woy * hy + woz * hz
        if doth <= _EPS:
            return 0.0, 0.0, 0.0, 0.0
        wix = 2.0 * doth * hx - wox
        wiy = 2.0 * doth * hy - woy
        wiz = 2.0 * doth * hz - woz
        ci = wix * nx + wiy * ny + wiz * nz
        if ci < 0.0:
            # fold a below-horizon reflection up across the tangent plane;
            # brdf_pdf_core accounts for both generating branches
            wix -= 2.0 * ci * nx
            wiy -= 2.0 * ci * ny
            wiz -= 2.0 * ci * nz
    else:
        # cosine-weighted hemisphere
        r = math.sqrt(u2)
        phi = 2.0 * math.pi * u3
        lx = r * math.cos(phi)
        ly = r * math.sin(phi)
        lz = math.sqrt(max(0.0, 1.0 - u2))
        wix = lx * t1x + ly * t2x + lz * nx
        wiy = lx * t1y + ly * t2y + lz * ny
        wiz = lx * t1z + ly * t2z + lz * nz

    if wix * nx + wiy * ny + wiz * nz <= _EPS:
        return wix, wiy, wiz, 0.0
    pdf = brdf_pdf_core(br, bg, bb, rough, metallic, spec_tint, specular,
                        wix, wiy, wiz, wox, woy, woz, nx, ny, nz)
    if pdf <= 0.0:
        return wix, wiy, wiz, 0.0
    return wix, wiy, wiz, pdf


@njit(cache=True)
def brdf_eval_batch(br, bg, bb, rough, metallic, spec_tint, specular,
                    wi, wo, n, out):
    for k in range(wi.shape[0]):
        r, g, b = brdf_eval_core(
            br, bg, bb, rough, metallic, spec_tint, specular,
            wi[k, 0], wi[k, 1], wi[k, 2], wo[0], wo[1], wo[2],
            n[0], n[1], n[2],
        )
        out[k, 0] = r
        out[k, 1] = g
        out[k, 2] = b


@njit(cache=True)
def brdf_pdf_batch(br, bg, bb, rough, metallic, spec_tint, specular,
                   wi, wo, n, out):
    for k in range(wi.shape[0]):
        out[k] = brdf_pdf_core(
            br, bg, bb, rough, metallic, spec_tint, specular,
            wi[k, 0], wi[k, 1], wi[k, 2], wo[0], wo[1], wo[2],
            n[0], n[1], n[2],
        )


@njit(cache=True)
def brdf_sample_batch(br, bg, bb, rough, metallic, spec_tint, specular,
                      wo, n, u, out_wi, out_pdf):
    for k in range(u.shape[0]):
        x, y, z, pdf = brdf_sample_core(
            br, bg, bb, rough, metallic, spec_tint, specular,
            wo[0], wo[1], wo[2], n[0], n[1], n[2],
            u[k, 0], u[k, 1], u[k, 2],
        )
        out_wi[k, 0] = x
        out_wi[k, 1] = y
        out_wi[k, 2] = z
        out_pdf[k] = pdf


# ---------------------------------------------------------------------------
# dataclass API
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DisneyParams:
    """Material parameters; ``specular`` scales dielectric reflectance.

    specular = 0.5 gives the conventional 4% dielectric F0; 0 disables the
    specular lobe entirely, which is how the pure-diffuse proxy is built.
    """

    base_color: tuple
    roughness: float
    metallic: float
    specular_tint: float = 0.0
    specular: float = 0.5

    def __post_init__(self):
        bc = tuple(float(c) for c in self.base_color)
        object.__setattr__(self, "base_color", bc)
        if len(bc) != 3 or any(not (0.0 <= c <= 1.0) for c in bc):
            raise ValueError(f"base_color must be RGB in [0,1]^3, got {bc}")
        if not (MIN_ROUGHNESS <= self.roughness <= 1.0):
            raise ValueError(f"roughness must be in [{MIN_ROUGHNESS}, 1], got {self.roughness}")
        if self.metallic not in (0.0, 1.0):
            raise ValueError(f"metallic must be 0 or 1, got {self.metallic}")
        if not (0.0 <= self.specular_tint <= 1.0):
            raise ValueError(f"specular_tint must be in [0,1], got {self.specular_tint}")
        if not (0.0 <= self.specular <= 1.0):
            raise ValueError(f"specular must be in [0,1], got {self.specular}")

    @property
    def scalars(self):
        """Argument tuple for the *_core kernels."""
        r, g, b = self.base_color
        return (r, g, b, float(self.roughness), float(self.metallic),
                float(self.specular_tint), float(self.specular))


@dataclass(frozen=True)
class ProxyMaterial:
    kind: str                      # {diffuse_hint, specular_hint}
    params: DisneyParams
    hint_index: int

    def __post_init__(self):
        if self.kind not in ("diffuse_hint", "specular_hint"):
            raise ValueError(f"unknown hint kind {self.kind!r}")


SPECULAR_HINT_ROUGHNESS = {
    3: (0.34, 0.13),
    4: (0.34, 0.13, 0.05),
    5: (0.34, 0.13, 0.05, 0.02),
}
DIFFUSE_HINT_ALBEDO = 0.8


def hint_materials(count: int = 4):
    """Proxy materials in slot order: diffuse first, then sharpening speculars."""
    if count not in SPECULAR_HINT_ROUGHNESS:
        raise ValueError(f"hint count must be one of {sorted(SPECULAR_HINT_ROUGHNESS)}, got {count}")
    a = DIFFUSE_HINT_ALBEDO
    mats = [ProxyMaterial(
        kind="diffuse_hint",
        params=DisneyParams(base_color=(a, a, a), roughness=1.0, metallic=0.0,
                            specular_tint=0.0, specular=0.0),
        hint_index=0,
    )]
    for i, rough in enumerate(SPECULAR_HINT_ROUGHNESS[count], start=1):
        mats.append(ProxyMaterial(
            kind="specular_hint",
            params=DisneyParams(base_color=(1.0, 1.0, 1.0), roughness=rough,
                                metallic=1.0, specular_tint=1.0),
            hint_index=i,
        ))
    return mats


AUGMENT_ROUGHNESS_RANGE = (0.02, 0.5)


def sample_augmented_material(rng: np.random.Generator) -> DisneyParams:
    """Random homogeneous training material: log-uniform roughness, tinted spec."""
    lo, hi = AUGMENT_ROUGHNESS_RANGE
    rough = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    base = tuple(float(c) for c in rng.uniform(0.0, 1.0, 3))
    return DisneyParams(base_color=base, roughness=rough, metallic=0.0,
                        specular_tint=1.0, specular=0.5)


def _as_unit(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    return a / np.linalg.norm(a)


def eval_brdf(m: DisneyParams, incoming, outgoing, normal) -> np.ndarray:
    """Reflectance (per steradian) for one or many incoming directions."""
    wo = _as_unit(outgoing)
    n = _as_unit(normal)
    wi = np.asarray(incoming, dtype=np.float64)
    if wi.ndim == 1:
        r, g, b = brdf_eval_core(*m.scalars, wi[0], wi[1], wi[2],
                                 wo[0], wo[1], wo[2], n[0], n[1], n[2])
        return np.array([r, g, b])
    out = np.empty((wi.shape[0], 3))
    brdf_eval_batch(*m.scalars, np.ascontiguousarray(wi), wo, n, out)
    return out


def pdf_brdf(m: DisneyParams, incoming, outgoing, normal):
    """Sampling density of sample_brdf for the given incoming direction(s)."""
    wo = _as_unit(outgoing)
    n = _as_unit(normal)
    wi = np.asarray(incoming, dtype=np.float64)
    if wi.ndim == 1:
        return float(brdf_pdf_core(*m.scalars, wi[0], wi[1], wi[2],
                                   wo[0], wo[1], wo[2], n[0], n[1], n[2]))
    out = np.empty(wi.shape[0])
    brdf_pdf_batch(*m.scalars, np.ascontiguousarray(wi), wo, n, out)
    return out


def sample_brdf(m: DisneyParams, outgoing, normal, rng: np.random.Generator):
    """One draw: (incoming, pdf, throughput weight = eval * cos / pdf)."""
    wo = _as_unit(outgoing)
    n = _as_unit(normal)
    u = rng.random(3)
    x, y, z, pdf = brdf_sample_core(*m.scalars, wo[0], wo[1], wo[2],
                                    n[0], n[1], n[2], u[0], u[1], u[2])
    wi = np.array([x, y, z])
    if pdf <= 0.0:
        return wi, 0.0, np.zeros(3)
    cos_i = float(wi @ n)
    weight = eval_brdf(m, wi, wo, n) * cos_i / pdf
    return wi, pdf, weight


def sample_brdf_batch(m: DisneyParams, outgoing, normal, rng: np.random.Generator,
                      count: int):
    """Vectorized draws: (incoming (N,3), pdf (N,), weight (N,3))."""
    wo = _as_unit(outgoing)
    n = _as_unit(normal)
    u = rng.random((count, 3))
    wi = np.empty((count, 3))
    pdf = np.empty(count)
    brdf_sample_batch(*m.scalars, wo, n, u, wi, pdf)
    ok = pdf > 0.0
    weight = np.zeros((count, 3))
    if ok.any():
        ev = eval_brdf(m, wi[ok], wo, n)
        cos_i = wi[ok] @ n
        weight[ok] = ev * (cos_i / pdf[ok])[:, None]
    return wi, pdf, weight
