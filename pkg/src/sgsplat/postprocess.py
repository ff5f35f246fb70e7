"""Hard removal after soft pruning, plus the memory-footprint model.

Near-dead primitives are dropped by an opacity threshold; lobes below a
sharpness (or dynamic-range) threshold are deleted with their sphere
average folded into the parent's diffuse color, which preserves the mean
color over all view directions exactly.  A short plain fine-tune then
recovers residual quality with the structure frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prune import PrunerConfig, run
from .render import Camera, LossConfig, SceneParams, _prepare
from .scene import GaussianPrimitive, Scene, budget_report
from .sg import dynamic_range, lobe_compensation

DEFAULT_OPACITY_EPS = 0.005
DEFAULT_SHARPNESS_EPS = 0.01

# Declared analytic model of per-splat render-time intermediates:
# mean2d(2) + upper-triangular cov2d(3) + depth(1) + color(3) + opacity(1)
# floats, plus one 12-byte key-value entry (8-byte sort key + 4-byte id)
# per overlapped tile.
SPLAT2D_RECORD_BYTES = 10 * 4
TILE_ENTRY_BYTES = 12


def remove_primitives(scene: Scene, eps_o: float = DEFAULT_OPACITY_EPS) -> Scene:
    """Drop primitives whose activated opacity is below eps_o."""
    scene.require_sg("remove_primitives")
    kept = [p for p in scene.primitives if p.opacity >= eps_o]
    return Scene(primitives=kept, color_model=scene.color_model,
                 provenance=dict(scene.provenance))


def remove_lobes(scene: Scene, eps_s: float = DEFAULT_SHARPNESS_EPS,
                 criterion: str = "sharpness") -> Scene:
    """Delete weak lobes, folding each one's sphere average into diffuse.

    ``criterion`` selects what is thresholded: activated sharpness, or the
    lobe's dynamic range ||a||*(1-exp(-2s)).
    """
    scene.require_sg("remove_lobes")
    if criterion not in ("sharpness", "range"):
        raise ValueError(f"unknown lobe-removal criterion {criterion!r}")
    out = []
    for prim in scene.primitives:
        diffuse = prim.diffuse.astype(np.float64)
        kept = []
        for lobe in prim.lobes:
            metric = (lobe.sharpness if criterion == "sharpness"
                      else dynamic_range(lobe))
            if metric < eps_s:
                diffuse = diffuse + lobe_compensation(lobe)
            else:
                kept.append(lobe)
        out.append(GaussianPrimitive(
            position=prim.position, rotation=prim.rotation, scale=prim.scale,
            opacity=prim.opacity, diffuse=diffuse.astype(np.float32),
            lobes=kept))
    return Scene(primitives=out, color_model=scene.color_model,
                 provenance=dict(scene.provenance))


def finetune(scene: Scene, views: list[tuple[Camera, np.ndarray]],
             steps: int, eta: float = 1.0, seed: int = 0,
             loss_cfg: LossConfig = LossConfig(),
             background=(0.0, 0.0, 0.0)) -> Scene:
    """Plain gradient descent with primitive/lobe structure frozen."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return scene
    cfg = PrunerConfig(kappa=0, kappa_o=0, kappa_s=0, delta=0.0,
                       prox_every=None, iters=steps, eta=eta, seed=seed,
                       loss_cfg=loss_cfg, background=background)
    tuned, _ = run(scene, views, cfg)
    return tuned


@dataclass(frozen=True)
class VramEstimate:
    """Analytic peak-memory model: loaded floats + per-view intermediates.

    This is a declared model of the standard tile renderer's working set,
    not a measurement of any particular allocator.
    """

    static_bytes: int
    dynamic_bytes: int

    @property
    def peak_bytes(self) -> int:
        return self.static_bytes + self.dynamic_bytes


def estimate_vram(scene: Scene, cam: Camera, tile_px: int = 16) -> VramEstimate:
    """Static bytes plus projected-splat records and tile key-value entries.

    A splat is visible when its center clears the near plane and its
    3-sigma box touches the image; each visible splat contributes one
    projected record plus one key-value entry per overlapped tile.
    """
    scene.require_sg("estimate_vram")
    if tile_px < 1:
        raise ValueError("tile_px must be >= 1")
    static = budget_report(scene).static_bytes
    if len(scene) == 0:
        return VramEstimate(static_bytes=static, dynamic_bytes=0)
    proj = _prepare(SceneParams.from_scene(scene), cam)
    if proj is None:
        return VramEstimate(static_bytes=static, dynamic_bytes=0)

    rx = 3.0 * np.sqrt(proj.cov2d[:, 0, 0])
    ry = 3.0 * np.sqrt(proj.cov2d[:, 1, 1])
    x0 = proj.mean2d[:, 0] - rx
    x1 = proj.mean2d[:, 0] + rx
    y0 = proj.mean2d[:, 1] - ry
    y1 = proj.mean2d[:, 1] + ry
    on_image = (x1 > 0) & (x0 < cam.width) & (y1 > 0) & (y0 < cam.height)

    tiles_x = (cam.width + tile_px - 1) // tile_px
    tiles_y = (cam.height + tile_px - 1) // tile_px
    tx0 = np.clip(np.floor(x0 / tile_px), 0, tiles_x - 1).astype(int)
    tx1 = np.clip(np.floor(x1 / tile_px), 0, tiles_x - 1).astype(int)
    ty0 = np.clip(np.floor(y0 / tile_px), 0, tiles_y - 1).astype(int)
    ty1 = np.clip(np.floor(y1 / tile_px), 0, tiles_y - 1).astype(int)
    overlaps = (tx1 - tx0 + 1) * (ty1 - ty0 + 1)

    visible = int(np.count_nonzero(on_image))
    entries = int(overlaps[on_image].sum())
    dynamic = visible * SPLAT2D_RECORD_BYTES + entries * TILE_ENTRY_BYTES
    return VramEstimate(static_bytes=static, dynamic_bytes=dynamic)


def stats_report(scene: Scene, cam: Camera | None = None,
                 tile_px: int = 16) -> dict:
    """Counts, budget units and the memory model as a JSON-friendly dict."""
    rep = budget_report(scene)
    out = {
        "primitive_count": rep.primitive_count,
        "lobe_count": rep.lobe_count,
        "budget_units": rep.budget_units,
        "static_floats": rep.static_floats,
        "static_bytes": rep.static_bytes,
        "avg_color_floats_per_primitive": float(rep.avg_color_floats_per_primitive),
        "avg_color_floats_exact": str(rep.avg_color_floats_per_primitive),
    }
    if cam is not None:
        vram = estimate_vram(scene, cam, tile_px)
        out["vram"] = {
            "static_bytes": vram.static_bytes,
            "dynamic_bytes": vram.dynamic_bytes,
            "peak_bytes": vram.peak_bytes,
            "tile_px": tile_px,
        }
    return out
