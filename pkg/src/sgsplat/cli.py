"""Command-line pipeline: ingest, fit, train-toy, prune, compact, render,
stats, bench.

Every successful command writes a manifest JSON next to its primary output
recording the fully resolved configuration, the seed and the tool version,
so a run can be replayed exactly.  Exit codes: 0 success, 2 usage or
configuration error, 3 input-format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .fit import convert_scene
from .io import (load_camera_json, load_image, load_scene, save_camera_json,
                 save_png, save_raw_rgb32f, save_scene, write_compact)
from .postprocess import (DEFAULT_OPACITY_EPS, DEFAULT_SHARPNESS_EPS,
                          finetune, remove_lobes, remove_primitives,
                          stats_report)
from .prune import PrunerConfig, run, write_trace_csv
from .render import Camera, render
from .scene import (ColorModelError, ConfigError, NumericalFailure,
                    SceneError, SceneFormatError)
from .toy import make_toy_setup

SEED_ENV_VAR = "MEGS2_SEED"


def _default_seed() -> int:
    return int(os.environ.get(SEED_ENV_VAR, "0"))


def read_config_file(path) -> dict:
    """Parse a `key = value` config file; '#' starts a comment."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"bad config line {raw!r} (expected key = value)")
        key, value = (part.strip() for part in line.split("=", 1))
        for cast in (int, float):
            try:
                value = cast(value)
                break
            except ValueError:
                continue
        out[key.replace("-", "_")] = value
    return out


def write_manifest(out_path, command: str, config: dict, inputs: list,
                   outputs: list, seed: int, started: float) -> None:
    manifest = {
        "command": command,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "config": config,
        "seed": seed,
        "tool_version": __version__,
        "duration_sec": round(time.time() - started, 3),
    }
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, default=str))


def load_views(views_dir) -> list[tuple[Camera, np.ndarray]]:
    views_dir = Path(views_dir)
    cams = sorted(p for p in views_dir.glob("view_*.json")
                  if not p.name.endswith(".manifest.json"))
    if not cams:
        raise SceneFormatError(f"no view_*.json files in {views_dir}")
    views = []
    for cam_path in cams:
        stem = cam_path.stem
        img_path = views_dir / f"{stem}.npy"
        if not img_path.exists():
            img_path = views_dir / f"{stem}.png"
        if not img_path.exists():
            raise SceneFormatError(f"no target image for {cam_path.name}")
        views.append((load_camera_json(cam_path), load_image(img_path)))
    return views


def save_views(views_dir, views) -> None:
    views_dir = Path(views_dir)
    views_dir.mkdir(parents=True, exist_ok=True)
    for i, (cam, img) in enumerate(views):
        save_camera_json(views_dir / f"view_{i:03d}.json", cam)
        np.save(views_dir / f"view_{i:03d}.npy", img.astype(np.float32))
        save_png(views_dir / f"view_{i:03d}.png", img)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    started = time.time()
    scene = load_scene(args.ply)
    save_scene(args.out, scene)
    print(f"ingested {len(scene)} primitives "
          f"(SH degree {scene.color_model.degree}) -> {args.out}")
    write_manifest(args.out, "ingest", {"ply": args.ply, "out": args.out},
                   [args.ply], [args.out], 0, started)
    return 0


def cmd_fit(args) -> int:
    started = time.time()
    scene = load_scene(args.scene)
    sg_scene = convert_scene(scene, n_lobes=args.lobes,
                             n_samples=args.samples,
                             max_lobes=max(args.lobes, args.max_lobes),
                             max_iters=args.iters)
    save_scene(args.out, sg_scene)
    rms = sg_scene.provenance.get("fit_rms_mean", float("nan"))
    print(f"fitted {len(sg_scene)} primitives with {args.lobes} lobes, "
          f"mean RMS {rms:.3e} -> {args.out}")
    cfg = {"scene": args.scene, "out": args.out, "lobes": args.lobes,
           "samples": args.samples, "max_lobes": args.max_lobes,
           "iters": args.iters}
    write_manifest(args.out, "fit", cfg, [args.scene], [args.out], 0, started)
    return 0


_TOY_DEFAULTS = {
    "gt_primitives": 30, "model_primitives": 120, "views": 8,
    "image_size": 64, "max_lobes": 3, "iters": 300, "eta": 1.0,
}


def cmd_train_toy(args) -> int:
    started = time.time()
    config = dict(_TOY_DEFAULTS)
    if args.config:
        config.update(read_config_file(args.config))
    for key in _TOY_DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            config[key] = flag
    seed = args.seed if args.seed is not None else config.get("seed", _default_seed())
    config["seed"] = seed

    setup = make_toy_setup(
        gt_primitives=int(config["gt_primitives"]),
        model_primitives=int(config["model_primitives"]),
        n_views=int(config["views"]), image_size=int(config["image_size"]),
        max_lobes=int(config["max_lobes"]), seed=int(seed))
    trained = finetune(setup.model, setup.views, steps=int(config["iters"]),
                       eta=float(config["eta"]), seed=int(seed))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_path = out_dir / "scene.npz"
    save_scene(scene_path, trained)
    save_scene(out_dir / "ground_truth.npz", setup.ground_truth)
    save_views(out_dir / "views", setup.views)
    print(f"toy scene trained for {config['iters']} iters -> {scene_path}")
    write_manifest(scene_path, "train-toy", config, [],
                   [scene_path, out_dir / "views"], int(seed), started)
    return 0


def cmd_prune(args) -> int:
    started = time.time()
    scene = load_scene(args.scene)
    scene.require_sg("prune")
    views = load_views(args.views)
    seed = args.seed if args.seed is not None else _default_seed()
    n = len(scene)
    slots = scene.lobe_count

    common = dict(delta=args.delta, eta=args.eta, iters=args.iters,
                  prox_every=args.prox_every,
                  opacity_operator=args.opacity_op,
                  sharpness_operator=args.sharpness_op, seed=seed)
    if args.kappa is not None:
        cfg = PrunerConfig.from_budget(n, slots, args.kappa,
                                       args.keep_ratio, **common)
    else:
        cfg = PrunerConfig.from_keep_ratios(n, slots, args.keep_ratio,
                                            args.lobe_keep_ratio, **common)

    pruned, trace = run(scene, views, cfg)
    pruned = remove_primitives(pruned, args.opacity_eps)
    pruned = remove_lobes(pruned, args.sharpness_eps, args.lobe_criterion)
    if args.finetune > 0:
        pruned = finetune(pruned, views, steps=args.finetune,
                          eta=args.eta, seed=seed)
    save_scene(args.out, pruned)
    if args.trace:
        write_trace_csv(args.trace, trace)
    rep = stats_report(pruned)
    print(f"pruned {n} -> {rep['primitive_count']} primitives, "
          f"{rep['lobe_count']} lobes, budget_units {rep['budget_units']} "
          f"(kappa {cfg.kappa}) -> {args.out}")
    config = {**common, "kappa": cfg.kappa, "kappa_o": cfg.kappa_o,
              "kappa_s": cfg.kappa_s, "keep_ratio": args.keep_ratio,
              "lobe_keep_ratio": args.lobe_keep_ratio,
              "opacity_eps": args.opacity_eps,
              "sharpness_eps": args.sharpness_eps,
              "lobe_criterion": args.lobe_criterion,
              "finetune": args.finetune, "workers": args.workers}
    write_manifest(args.out, "prune", config, [args.scene, args.views],
                   [args.out] + ([args.trace] if args.trace else []),
                   seed, started)
    return 0


def cmd_compact(args) -> int:
    started = time.time()
    scene = load_scene(args.scene)
    scene.require_sg("compact export")
    data = write_compact(scene)
    Path(args.out).write_bytes(data)
    print(f"wrote {len(data)} bytes ({len(scene)} primitives, "
          f"{scene.lobe_count} lobes) -> {args.out}")
    write_manifest(args.out, "compact", {"scene": args.scene, "out": args.out},
                   [args.scene], [args.out], 0, started)
    return 0


def _parse_background(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise ConfigError(f"background must be one or three floats, got {text!r}")
    return tuple(parts)


def cmd_render(args) -> int:
    started = time.time()
    scene = load_scene(args.scene)
    scene.require_sg("render")
    cam = load_camera_json(args.camera)
    bg = _parse_background(args.background)
    img = render(scene, cam, background=bg)
    save_png(args.out, img)
    outputs = [args.out]
    if args.raw:
        save_raw_rgb32f(args.raw, img)
        outputs.append(args.raw)
    print(f"rendered {cam.width}x{cam.height} -> {args.out}")
    write_manifest(args.out, "render",
                   {"scene": args.scene, "camera": args.camera,
                    "background": args.background, "raw": args.raw},
                   [args.scene, args.camera], outputs, 0, started)
    return 0


def cmd_stats(args) -> int:
    scene = load_scene(args.scene)
    scene.require_sg("stats")
    cam = load_camera_json(args.camera) if args.camera else None
    rep = stats_report(scene, cam, tile_px=args.tile_px)
    if args.json:
        print(json.dumps(rep, indent=2))
    else:
        width = max(len(k) for k in rep)
        for key, value in rep.items():
            if key == "vram":
                for sub, v in value.items():
                    print(f"{'vram.' + sub:<{width + 5}}  {v}")
            else:
                print(f"{key:<{width + 5}}  {value}")
    return 0


def cmd_bench(args) -> int:
    started = time.time()
    scene = load_scene(args.scene)
    scene.require_sg("bench")
    if args.camera:
        cam = load_camera_json(args.camera)
    else:
        from .toy import ring_cameras
        cam = ring_cameras(1, image_size=args.size)[0]
    render(scene, cam)  # warm up
    times = []
    for _ in range(args.runs):
        t0 = time.perf_counter()
        render(scene, cam)
        times.append(time.perf_counter() - t0)
    times = np.array(times)
    print(f"{len(scene)} primitives at {cam.width}x{cam.height}: "
          f"mean {times.mean() * 1e3:.2f} ms, sigma {times.std() * 1e3:.2f} ms "
          f"over {args.runs} renders")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgsplat",
        description="Splat compression: spherical-Gaussian color, "
                    "budget-constrained pruning, compact export.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a splat PLY to a scene archive")
    p.add_argument("ply")
    p.add_argument("out", help="output .npz scene")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit SG lobes to an SH scene")
    p.add_argument("scene", help="SH scene (.npz from ingest)")
    p.add_argument("out", help="output SG scene (.npz or .megs2)")
    p.add_argument("--lobes", type=int, default=3)
    p.add_argument("--max-lobes", type=int, default=3)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--iters", type=int, default=200)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train-toy", help="generate and train a toy scene")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    for key in _TOY_DEFAULTS:
        p.add_argument(f"--{key.replace('_', '-')}",
                       type=float if key == "eta" else int, default=None)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("prune", help="budget-constrained sparsification")
    p.add_argument("scene", help="SG scene (.npz or .megs2)")
    p.add_argument("views", help="directory of view_*.json / view_*.npy")
    p.add_argument("out", help="output scene (.npz or .megs2)")
    p.add_argument("--keep-ratio", type=float, default=0.5,
                   help="target fraction of primitives to keep")
    p.add_argument("--lobe-keep-ratio", type=float, default=0.5,
                   help="target fraction of lobe slots to keep")
    p.add_argument("--kappa", type=int, default=None,
                   help="explicit total budget; lobes absorb the remainder")
    p.add_argument("--opacity-op", choices=("magnitude", "importance"),
                   default="magnitude")
    p.add_argument("--sharpness-op", choices=("sharpness", "range"),
                   default="sharpness")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--prox-every", type=int, default=50)
    p.add_argument("--delta", type=float, default=5e-3)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--opacity-eps", type=float, default=DEFAULT_OPACITY_EPS)
    p.add_argument("--sharpness-eps", type=float, default=DEFAULT_SHARPNESS_EPS)
    p.add_argument("--lobe-criterion", choices=("sharpness", "range"),
                   default="sharpness")
    p.add_argument("--finetune", type=int, default=200)
    p.add_argument("--trace", help="write the optimization trace CSV here")
    p.add_argument("--workers", type=int, default=os.cpu_count(),
                   help="reserved; computation is deterministic regardless")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("compact", help="export the compact binary format")
    p.add_argument("scene")
    p.add_argument("out", help="output .megs2 file")
    p.set_defaults(func=cmd_compact)

    p = sub.add_parser("render", help="render a PNG from a camera JSON")
    p.add_argument("scene")
    p.add_argument("camera", help="camera JSON file")
    p.add_argument("out", help="output PNG")
    p.add_argument("--raw", help="also dump raw float32 planar image here")
    p.add_argument("--background", default="0", help="r,g,b or single gray")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("stats", help="budget and memory report")
    p.add_argument("scene")
    p.add_argument("--camera", help="camera JSON for the dynamic-memory model")
    p.add_argument("--tile-px", type=int, default=16)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", help="render timing report")
    p.add_argument("scene")
    p.add_argument("--camera")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--runs", type=int, default=20)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SceneFormatError, ColorModelError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except SceneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
