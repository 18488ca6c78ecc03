"""Control-packet assembly, color permutation, compositing, and the
binary container format."""

import struct

import numpy as np
import pytest

from lightforge.geometry import CameraSpec, ForegroundMask
from lightforge.imageio import HdrImage
from lightforge.lighting import (LightingSpec, PointLight, PointLights,
                                 UniformAmbient)
from lightforge.packing import (COLOR_PERMUTATIONS, ControlPacket,
                                RadianceHintSet, composite, pack_direct,
                                pack_multiplied, permute_color_channels,
                                read_control_packet, write_control_packet)
from lightforge.render import RenderSettings, render_radiance_hints
from lightforge.shapes import sphere_mesh


def rand_image(rng, w=6, h=5, alpha=False):
    a = rng.random((h, w)).astype(np.float32) if alpha else None
    return HdrImage(rng.random((h, w, 3)).astype(np.float32) * 3.0, alpha=a)


def rand_hints(rng, count=4, w=6, h=5):
    return RadianceHintSet(hints=tuple(rand_image(rng, w, h, alpha=True)
                                       for _ in range(count)))


def rand_mask(rng, w=6, h=5):
    return ForegroundMask(values=rng.random((h, w)).astype(np.float32))


# ---------------------------------------------------------------------------
# color permutation
# ---------------------------------------------------------------------------

def test_permutation_table():
    assert len(COLOR_PERMUTATIONS) == 6
    assert len(set(COLOR_PERMUTATIONS)) == 6
    assert COLOR_PERMUTATIONS[0] == (0, 1, 2)
    for p in COLOR_PERMUTATIONS:
        assert sorted(p) == [0, 1, 2]


def test_permutation_identity_and_inverse():
    rng = np.random.default_rng(0)
    imgs = [rand_image(rng, alpha=True) for _ in range(3)]
    same = permute_color_channels(imgs, (0, 1, 2))
    for a, b in zip(imgs, same):
        assert np.array_equal(a.data, b.data)
    fwd = (2, 0, 1)                       # BRG: out[i] = in[fwd[i]]
    inv = tuple(np.argsort(fwd))
    back = permute_color_channels(permute_color_channels(imgs, fwd), inv)
    for a, b in zip(imgs, back):
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(a.alpha, b.alpha)


def test_permutation_texel_example():
    im = HdrImage(np.array([[[0.1, 0.5, 0.9]]], dtype=np.float32))
    out = permute_color_channels([im], (1, 2, 0))[0]   # RGB -> GBR
    assert np.allclose(out.data[0, 0], [0.5, 0.9, 0.1])


def test_permutation_rejects_non_bijection():
    im = HdrImage(np.zeros((1, 1, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        permute_color_channels([im], (0, 1, 1))


# ---------------------------------------------------------------------------
# packing layouts
# ---------------------------------------------------------------------------

def test_pack_direct_layout_and_roundtrip():
    rng = np.random.default_rng(1)
    hints = rand_hints(rng)
    prov = rand_image(rng)
    mask = rand_mask(rng)
    packet = pack_direct(prov, hints, mask)
    assert packet.layout == "direct"
    assert packet.channels.shape == (16, 5, 6)
    # channels 3..5 are hint 0
    for c in range(3):
        assert np.array_equal(packet.channels[3 + c],
                              hints.hints[0].data[..., c])
        assert np.array_equal(packet.channels[c], prov.data[..., c])
    assert np.array_equal(packet.channels[15], mask.values)


def test_pack_direct_zero_inputs():
    z = HdrImage(np.zeros((5, 6, 3), dtype=np.float32))
    hints = RadianceHintSet(hints=tuple(
        HdrImage(np.zeros((5, 6, 3), dtype=np.float32)) for _ in range(4)))
    mask = ForegroundMask(values=np.ones((5, 6), dtype=np.float32))
    packet = pack_direct(z, hints, mask)
    assert np.all(packet.channels[:15] == 0.0)
    assert np.all(packet.channels[15] == 1.0)


def test_pack_direct_dimension_mismatch():
    rng = np.random.default_rng(2)
    hints = rand_hints(rng)
    with pytest.raises(ValueError):
        pack_direct(rand_image(rng, w=7), hints, rand_mask(rng))
    with pytest.raises(ValueError):
        pack_direct(rand_image(rng), hints, rand_mask(rng, h=9))


def test_pack_multiplied_identity_and_annihilator():
    rng = np.random.default_rng(3)
    hints = rand_hints(rng)
    mask = rand_mask(rng)
    ones = np.ones((5, 6, 12), dtype=np.float32)
    packet = pack_multiplied(ones, hints, mask)
    assert packet.layout == "multiplied"
    assert packet.channels.shape == (13, 5, 6)
    for i, im in enumerate(hints.hints):
        for c in range(3):
            assert np.array_equal(packet.channels[3 * i + c], im.data[..., c])
    zero_hints = RadianceHintSet(hints=tuple(
        HdrImage(np.zeros((5, 6, 3), dtype=np.float32)) for _ in range(4)))
    feats = rng.random((5, 6, 12)).astype(np.float32)
    packet = pack_multiplied(feats, zero_hints, mask)
    assert np.all(packet.channels[:12] == 0.0)


def test_pack_multiplied_elementwise_oracle():
    rng = np.random.default_rng(4)
    hints = rand_hints(rng)
    mask = rand_mask(rng)
    feats = rng.random((5, 6, 12)).astype(np.float32)
    packet = pack_multiplied(feats, hints, mask)
    for c in range(12):
        hint_img = hints.hints[c // 3].data[..., c % 3]
        for y in range(5):
            for x in range(6):
                assert packet.channels[c, y, x] == np.float32(
                    feats[y, x, c] * hint_img[y, x])


def test_pack_multiplied_channel_mismatch():
    rng = np.random.default_rng(5)
    hints = rand_hints(rng)
    with pytest.raises(ValueError):
        pack_multiplied(np.ones((5, 6, 9), np.float32), hints, rand_mask(rng))


def test_channel_count_law():
    rng = np.random.default_rng(6)
    mask = rand_mask(rng)
    for count in (3, 4, 5):
        hints = rand_hints(rng, count=count)
        d = pack_direct(rand_image(rng), hints, mask)
        m = pack_multiplied(np.ones((5, 6, 3 * count), np.float32), hints, mask)
        assert d.channels.shape[0] == 3 * count + 4
        assert m.channels.shape[0] == 3 * count + 1


def test_control_packet_validation():
    ch = np.zeros((13, 4, 4), dtype=np.float32)
    ControlPacket(layout="multiplied", channels=ch)
    ControlPacket(layout="direct", channels=ch)           # 3-hint ablation
    with pytest.raises(ValueError):
        ControlPacket(layout="direct", channels=ch[:10])  # 10 is not 3k+4
    with pytest.raises(ValueError):
        ControlPacket(layout="multiplied", channels=np.zeros((19, 4, 4), np.float32))
    with pytest.raises(ValueError):
        ControlPacket(layout="sideways", channels=ch)
    bad_mask = ch.copy()
    bad_mask[-1, 0, 0] = 1.5
    with pytest.raises(ValueError):
        ControlPacket(layout="multiplied", channels=bad_mask)
    with pytest.raises(ValueError):
        RadianceHintSet(hints=tuple(
            HdrImage(np.zeros((4, 4, 3), np.float32)) for _ in range(6)))


# ---------------------------------------------------------------------------
# compositing
# ---------------------------------------------------------------------------

def test_composite_saturated_masks():
    rng = np.random.default_rng(7)
    fg = rand_image(rng, alpha=True)
    bg = rand_image(rng)
    ones = ForegroundMask(values=np.ones((5, 6), dtype=np.float32))
    zeros = ForegroundMask(values=np.zeros((5, 6), dtype=np.float32))
    assert np.array_equal(composite(fg, bg, ones).data, fg.data)
    assert np.array_equal(composite(fg, bg, zeros).data, bg.data)


def test_composite_single_pixel_mask():
    # isolated mask pixel spreads 1/9 weight onto its 3x3 neighborhood
    fg = HdrImage(np.full((7, 7, 3), 0.9, dtype=np.float32))
    bg = HdrImage(np.zeros((7, 7, 3), dtype=np.float32))
    m = np.zeros((7, 7), dtype=np.float32)
    m[3, 3] = 1.0
    out = composite(fg, bg, ForegroundMask(values=m))
    want = np.float32(1.0) / np.float32(9.0) * np.float32(0.9)
    for y in range(7):
        for x in range(7):
            expect = want if (abs(y - 3) <= 1 and abs(x - 3) <= 1) else 0.0
            assert out.data[y, x, 0] == pytest.approx(expect, abs=1e-7)


def test_composite_is_convex_combination():
    rng = np.random.default_rng(8)
    fg = rand_image(rng, w=12, h=9)
    bg = rand_image(rng, w=12, h=9)
    mask = rand_mask(rng, w=12, h=9)
    out = composite(fg, bg, mask)
    lo = np.minimum(fg.data, bg.data)
    hi = np.maximum(fg.data, bg.data)
    assert np.all(out.data >= lo - 1e-6)
    assert np.all(out.data <= hi + 1e-6)


def test_composite_dimension_mismatch():
    rng = np.random.default_rng(9)
    with pytest.raises(ValueError):
        composite(rand_image(rng), rand_image(rng, w=7), rand_mask(rng))


# ---------------------------------------------------------------------------
# container format
# ---------------------------------------------------------------------------

def test_container_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    hints = rand_hints(rng)
    packet = pack_direct(rand_image(rng), hints, rand_mask(rng))
    packet = ControlPacket(layout=packet.layout, channels=packet.channels,
                           provenance={"object": "obj_0003", "view": "v2",
                                       "lighting": "l07"})
    path = tmp_path / "packet.dlcp"
    write_control_packet(packet, path)
    back = read_control_packet(path)
    assert back.layout == "direct"
    assert np.array_equal(back.channels, packet.channels)
    assert back.channels.dtype == np.float32
    assert back.provenance == packet.provenance


def test_container_header_bytes(tmp_path):
    ch = np.zeros((13, 5, 7), dtype=np.float32)
    packet = ControlPacket(layout="multiplied", channels=ch)
    path = tmp_path / "p.dlcp"
    write_control_packet(packet, path)
    raw = path.read_bytes()
    want = b"DLCP" + struct.pack("<I", 1) + b"\x00" + struct.pack("<III", 7, 5, 13)
    assert raw[:len(want)] == want
    assert len(raw) == len(want) + 13 * 5 * 7 * 4


def test_container_rejects_corruption(tmp_path):
    ch = np.zeros((13, 4, 4), dtype=np.float32)
    packet = ControlPacket(layout="multiplied", channels=ch)
    good = tmp_path / "good.dlcp"
    write_control_packet(packet, good)
    raw = bytearray(good.read_bytes())

    bad = tmp_path / "bad.dlcp"
    bad.write_bytes(b"XLCP" + bytes(raw[4:]))
    with pytest.raises(ValueError, match="magic"):
        read_control_packet(bad)

    v = bytearray(raw)
    v[4:8] = struct.pack("<I", 99)
    bad.write_bytes(bytes(v))
    with pytest.raises(ValueError, match="version"):
        read_control_packet(bad)

    l = bytearray(raw)
    l[8] = 7
    bad.write_bytes(bytes(l))
    with pytest.raises(ValueError, match="layout"):
        read_control_packet(bad)

    bad.write_bytes(bytes(raw[:-8]))
    with pytest.raises(ValueError, match="payload"):
        read_control_packet(bad)

    bad.write_bytes(bytes(raw[:10]))
    with pytest.raises(ValueError):
        read_control_packet(bad)


def test_container_sidecar(tmp_path):
    ch = np.zeros((16, 3, 3), dtype=np.float32)
    packet = ControlPacket(layout="direct", channels=ch,
                           provenance={"lighting": "l01"})
    path = tmp_path / "x.dlcp"
    write_control_packet(packet, path)
    assert (tmp_path / "x.dlcp.json").exists()
    assert read_control_packet(path).provenance == {"lighting": "l01"}


# ---------------------------------------------------------------------------
# physical equivariance of the color augmentation
# ---------------------------------------------------------------------------

def test_permutation_equivariance_under_colored_ambient():
    # shuffling the lighting colors before rendering must equal shuffling
    # the rendered hints afterwards
    mesh = sphere_mesh(2)
    cam = CameraSpec(eye=np.array([0.0, 0.0, -2.0]), look_at=np.zeros(3),
                     up=np.array([0.0, 1.0, 0.0]), vertical_fov=30.0,
                     width=32, height=32)
    point = PointLights(lights=(PointLight(position=(2.0, 3.0, -4.0),
                                           power=800.0),))
    color = (0.9, 0.45, 0.15)
    settings = RenderSettings(samples_per_pixel=64, seed=21)
    base = render_radiance_hints(
        mesh,
        LightingSpec(components=(point, UniformAmbient(power=60.0, color=color)),
                     category=2),
        cam, settings)
    for perm in ((1, 2, 0), (2, 1, 0)):
        shuffled = tuple(color[p] for p in perm)
        relit = render_radiance_hints(
            mesh,
            LightingSpec(components=(point,
                                     UniformAmbient(power=60.0, color=shuffled)),
                         category=2),
            cam, settings)
        permuted = permute_color_channels(base.hints, perm)
        for a, b in zip(relit.hints, permuted):
            assert np.abs(a.data - b.data).max() < 1e-5
            assert np.array_equal(a.alpha, b.alpha)
