"""Command-line surface for the pipeline.

Five subcommands: ``hints`` turns a depth+mask pair into radiance hints,
``render`` produces a single object render, ``dataset`` synthesizes a
training corpus, ``pack`` assembles control packets, and ``backplate``
renders an environment backdrop.  Data goes to files, logs go to standard
error; exit codes are 0 (ok), 2 (usage), 1 (runtime failure, with a JSON
error object on standard error).
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .brdf import sample_augmented_material
from .dataset import (DatasetConfig, ViewSpec, build_hint_proxy,
                      generate_dataset, _material_json)
from .geometry import CameraSpec, DepthMap, ForegroundMask, set_shading_normals
from .imageio import HdrImage, read_mask_png, read_pfm, write_mask_png, write_pfm
from .lighting import (CATEGORIES, lighting_from_json, lighting_to_json,
                       load_env_map, sample_lighting)
from .packing import (RadianceHintSet, pack_direct, pack_multiplied,
                      write_control_packet)
from .render import (RenderSettings, render, render_background,
                     render_radiance_hints)
from .shapes import OBJECT_KINDS, gen_procedural_object

THREADS_ENV = "LIGHTFORGE_THREADS"

# sub-stream tags so one --seed covers lighting, proxy noise, and the sampler
_SEED_LIGHTING = 201
_SEED_PROXY = 202
_SEED_OBJECT = 203
_SEED_MATERIAL = 204


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _resolve_threads(requested):
    """Flag wins; otherwise the environment variable; otherwise all cores."""
    if requested is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        if env:
            try:
                requested = int(env)
            except ValueError:
                raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}")
        else:
            requested = os.cpu_count() or 1
    if requested < 1:
        raise ValueError(f"thread count must be >= 1, got {requested}")
    import numba

    n = min(requested, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _canonical(blob) -> str:
    return json.dumps(blob, sort_keys=True, separators=(",", ":"))


def _write_meta(out: Path, args, extra: dict) -> None:
    """Echo the flag set so the artifact can be regenerated verbatim.

    The output path itself is omitted: the same flags into two directories
    must produce byte-identical trees.
    """
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
    blob = {"command": args.subcommand, "flags": flags}
    blob.update(extra)
    with open(out / "meta.json", "w") as fh:
        fh.write(_canonical(blob) + "\n")


def _camera_to_json(cam: CameraSpec) -> dict:
    return {
        "eye": [float(v) for v in cam.eye],
        "look_at": [float(v) for v in cam.look_at],
        "up": [float(v) for v in cam.up],
        "vertical_fov": float(cam.vertical_fov),
        "width": int(cam.width),
        "height": int(cam.height),
    }


def _camera_from_json(blob: dict) -> CameraSpec:
    try:
        return CameraSpec(eye=blob["eye"], look_at=blob["look_at"],
                          up=blob.get("up", (0.0, 1.0, 0.0)),
                          vertical_fov=float(blob["vertical_fov"]),
                          width=int(blob["width"]), height=int(blob["height"]))
    except KeyError as exc:
        raise ValueError(f"camera json is missing field {exc}")


def _resolve_lighting(args, seed: int):
    """Either a spec file (env paths relative to it) or a sampled category."""
    if args.lighting is not None:
        path = Path(args.lighting)
        if not path.is_file():
            raise ValueError(f"lighting file not found: {path}")
        blob = json.loads(path.read_text())
        return lighting_from_json(
            blob, load_env=lambda p: load_env_map(path.parent / p))
    pool = tuple(load_env_map(p) for p in args.env or ())
    rng = np.random.default_rng([seed, _SEED_LIGHTING])
    return sample_lighting(args.sample_category, rng, pool)


def _settings(args) -> RenderSettings:
    return RenderSettings(samples_per_pixel=args.spp, max_bounces=args.bounces,
                          seed=args.seed)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_hints(args) -> None:
    depth = DepthMap.from_pfm(args.depth)
    mask = ForegroundMask(read_mask_png(args.mask))
    camera = _camera_from_json(json.loads(Path(args.camera).read_text()))
    if (camera.width, camera.height) != (depth.width, depth.height):
        raise ValueError(
            f"camera is {camera.width}x{camera.height} but the depth map is "
            f"{depth.width}x{depth.height}")
    if (mask.width, mask.height) != (depth.width, depth.height):
        raise ValueError("mask dimensions must match the depth map")
    lighting = _resolve_lighting(args, args.seed)

    proxy = build_hint_proxy(depth, mask, camera,
                             np.random.default_rng([args.seed, _SEED_PROXY]))
    proxy = set_shading_normals(proxy, args.variant)
    hints = render_radiance_hints(proxy, lighting, camera, _settings(args),
                                  hint_count=args.count)

    out = _out_dir(args)
    for i, image in enumerate(hints.hints):
        write_pfm(out / f"hint{i}.pfm", image.data)
    _write_meta(out, args, {
        "lighting": lighting_to_json(lighting),
        "camera": _camera_to_json(camera),
    })
    _log(f"wrote {args.count} hints to {out}")


def _cmd_render(args) -> None:
    obj = gen_procedural_object(
        args.kind, np.random.default_rng([args.object_seed, _SEED_OBJECT]))
    material = sample_augmented_material(
        np.random.default_rng([args.object_seed, _SEED_MATERIAL]))
    view = ViewSpec(elevation=args.elevation, azimuth=args.azimuth,
                    distance=args.distance, vertical_fov=args.fov)
    camera = view.camera(args.width, args.height)
    lighting = _resolve_lighting(args, args.seed)

    image = render(obj.mesh, material, lighting, camera, _settings(args))
    _, mask = obj.depth_map(camera)

    out = _out_dir(args)
    write_pfm(out / "render.pfm", image.data)
    write_mask_png(out / "mask.png", mask.values)
    _write_meta(out, args, {
        "lighting": lighting_to_json(lighting),
        "material": _material_json(material),
        "camera": _camera_to_json(camera),
    })
    _log(f"wrote render.pfm to {out}")


def _cmd_dataset(args) -> None:
    config = DatasetConfig(
        objects=args.objects, width=args.width, height=args.height,
        samples_per_pixel=args.spp, hint_samples_per_pixel=args.hint_spp,
        hint_count=args.hint_count, max_bounces=args.bounces,
        env_pool_size=args.env_pool, pairs_per_view=args.pairs_per_view,
        seed=args.seed)
    out = _out_dir(args)
    manifest = generate_dataset(config, out)
    _write_meta(out, args, {"record_count": len(manifest.records)})
    _log(f"wrote {len(manifest.records)} records to {out}")


def _cmd_pack(args) -> None:
    hints = RadianceHintSet(
        hints=tuple(HdrImage(read_pfm(p)) for p in args.hint))
    mask = ForegroundMask(read_mask_png(args.mask))
    if args.layout == "direct":
        if args.provisional is None:
            raise ValueError("direct layout needs --provisional")
        packet = pack_direct(HdrImage(read_pfm(args.provisional)), hints, mask)
    else:
        if args.features is not None:
            features = np.load(args.features)
        else:
            # identity features: the packet carries the hints unchanged
            features = np.ones(
                (hints.height, hints.width, 3 * hints.hint_count), np.float32)
        packet = pack_multiplied(features, hints, mask)
    packet.provenance.update({
        "hints": [str(p) for p in args.hint],
        "mask": str(args.mask),
    })

    out = _out_dir(args)
    write_control_packet(packet, out / args.name)
    _write_meta(out, args, {"channels": packet.channel_count})
    _log(f"wrote {packet.channel_count}-channel packet to {out / args.name}")


def _cmd_backplate(args) -> None:
    env = load_env_map(args.env)
    view = ViewSpec(elevation=args.elevation, azimuth=args.azimuth,
                    distance=args.distance, vertical_fov=args.fov)
    camera = view.camera(args.width, args.height)
    image = render_background(env, camera, rotation=args.rotation)

    out = _out_dir(args)
    write_pfm(out / "backplate.pfm", image.data)
    _write_meta(out, args, {"camera": _camera_to_json(camera)})
    _log(f"wrote backplate.pfm to {out}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_lighting_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--lighting", metavar="JSON",
                       help="lighting spec file; env paths resolve relative to it")
    group.add_argument("--sample-category", type=int, choices=CATEGORIES,
                       metavar="N", help="draw a random lighting of this "
                       "category (1-5) from --seed")
    p.add_argument("--env", action="append", metavar="HDR",
                   help="equirectangular HDR for the sampling pool "
                   "(repeatable; needed by env-backed categories)")


def _add_sampler_flags(p: argparse.ArgumentParser, spp: int) -> None:
    p.add_argument("--spp", type=int, default=spp, metavar="N",
                   help="samples per pixel (default %(default)s)")
    p.add_argument("--bounces", type=int, default=6, metavar="N",
                   help="path length cap in segments (default %(default)s)")


def _add_view_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--elevation", type=float, default=30.0, metavar="DEG",
                   help="camera elevation in degrees, 10 to 90 "
                   "(default %(default)s)")
    p.add_argument("--azimuth", type=float, default=0.0, metavar="DEG",
                   help="camera azimuth in degrees, 0 to 360 "
                   "(default %(default)s)")
    p.add_argument("--distance", type=float, default=1.0, metavar="M",
                   help="camera distance in meters, 0.8 to 1.1 "
                   "(default %(default)s)")
    p.add_argument("--fov", type=float, default=27.5, metavar="DEG",
                   help="vertical field of view in degrees, 25 to 30 "
                   "(default %(default)s)")
    p.add_argument("--width", type=int, default=256, metavar="PX",
                   help="image width in pixels (default %(default)s)")
    p.add_argument("--height", type=int, default=256, metavar="PX",
                   help="image height in pixels (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, metavar="DIR",
                        help="output directory (created if missing)")
    common.add_argument("--seed", type=int, default=0, metavar="N",
                        help="64-bit reproducibility seed (default %(default)s)")
    common.add_argument("--threads", type=int, default=None, metavar="N",
                        help=f"worker threads; default ${THREADS_ENV} "
                        "or all cores")

    parser = argparse.ArgumentParser(
        prog="lightforge",
        description="Radiance-hint rendering and relighting-dataset tools.")
    sub = parser.add_subparsers(dest="subcommand", required=True,
                                metavar="SUBCOMMAND")

    p = sub.add_parser("hints", parents=[common],
                       help="render radiance hints from a depth map + mask",
                       description="Triangulate a depth map and render the "
                       "proxy under each hint material.")
    p.add_argument("--depth", required=True, metavar="PFM",
                   help="single-channel depth map in meters; <= 0 is background")
    p.add_argument("--mask", required=True, metavar="PNG",
                   help="8-bit foreground coverage mask")
    p.add_argument("--camera", required=True, metavar="JSON",
                   help="camera used for the depth map: eye/look_at/up in "
                   "meters, vertical_fov in degrees, width/height in pixels")
    _add_lighting_flags(p)
    p.add_argument("--count", type=int, default=4, metavar="N",
                   help="number of hints, 3 to 5 (default %(default)s)")
    p.add_argument("--variant", choices=("geometric", "smoothed_depth"),
                   default="geometric",
                   help="shading-normal source (default %(default)s)")
    _add_sampler_flags(p, spp=256)
    p.set_defaults(func=_cmd_hints)

    p = sub.add_parser("render", parents=[common],
                       help="render one procedural object",
                       description="Render a procedural object with a "
                       "randomly drawn homogeneous material.")
    p.add_argument("--kind", choices=OBJECT_KINDS, default="sphere",
                   help="object family (default %(default)s)")
    p.add_argument("--object-seed", type=int, default=0, metavar="N",
                   help="seed for shape + material draws (default %(default)s)")
    _add_lighting_flags(p)
    _add_view_flags(p)
    _add_sampler_flags(p, spp=256)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("dataset", parents=[common],
                       help="generate a relighting training corpus",
                       description="Objects x views x a 12-lighting slate, "
                       "with hints, masks, and a JSONL manifest.")
    p.add_argument("--objects", type=int, default=16, metavar="N",
                   help="number of objects (default %(default)s)")
    p.add_argument("--width", type=int, default=256, metavar="PX",
                   help="image width in pixels (default %(default)s)")
    p.add_argument("--height", type=int, default=256, metavar="PX",
                   help="image height in pixels (default %(default)s)")
    p.add_argument("--spp", type=int, default=256, metavar="N",
                   help="samples per pixel for renders (default %(default)s)")
    p.add_argument("--hint-spp", type=int, default=0, metavar="N",
                   help="samples per pixel for hints; 0 means match --spp "
                   "(default %(default)s)")
    p.add_argument("--hint-count", type=int, default=4, metavar="N",
                   help="hints per lighting, 3 to 5 (default %(default)s)")
    p.add_argument("--bounces", type=int, default=6, metavar="N",
                   help="path length cap in segments (default %(default)s)")
    p.add_argument("--env-pool", type=int, default=6, metavar="N",
                   help="environment maps in the pool (default %(default)s)")
    p.add_argument("--pairs-per-view", type=int, default=1, metavar="N",
                   help="training pairs drawn per view (default %(default)s)")
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("pack", parents=[common],
                       help="assemble a control packet container",
                       description="Pack hint renders, a mask, and optionally "
                       "a provisional image or feature map into a DLCP file.")
    p.add_argument("--layout", choices=("multiplied", "direct"), required=True,
                   help="packet layout")
    p.add_argument("--hint", action="append", required=True, metavar="PFM",
                   help="hint render, repeated once per hint in slot order")
    p.add_argument("--mask", required=True, metavar="PNG",
                   help="8-bit foreground coverage mask")
    p.add_argument("--provisional", metavar="PFM",
                   help="provisional RGB image (direct layout only)")
    p.add_argument("--features", metavar="NPY",
                   help="(H, W, 3*hints) feature map for the multiplied "
                   "layout; defaults to all ones")
    p.add_argument("--name", default="packet.dlcp", metavar="FILE",
                   help="output file name (default %(default)s)")
    p.set_defaults(func=_cmd_pack)

    p = sub.add_parser("backplate", parents=[common],
                       help="render an environment backdrop",
                       description="Evaluate an environment map along every "
                       "pixel ray of the given viewpoint.")
    p.add_argument("--env", required=True, metavar="HDR",
                   help="equirectangular HDR environment map")
    p.add_argument("--rotation", type=float, default=0.0, metavar="RAD",
                   help="azimuthal map rotation in radians (default %(default)s)")
    _add_view_flags(p)
    p.set_defaults(func=_cmd_backplate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _resolve_threads(args.threads)
        args.func(args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
