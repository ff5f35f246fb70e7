"""Procedural desk-scale training setups.

Seeds a small ground-truth scene, renders a ring of cameras for targets,
and builds an overparameterized model (several jittered copies of every
ground-truth primitive with weak random lobes) standing in for a trained,
densified splat cloud that the pruner then compresses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .render import Camera, render
from .scene import ColorModel, GaussianPrimitive, Scene, SGLobe


@dataclass
class ToySetup:
    ground_truth: Scene
    model: Scene
    cameras: list[Camera]
    targets: list[np.ndarray]

    @property
    def views(self) -> list[tuple[Camera, np.ndarray]]:
        return list(zip(self.cameras, self.targets))


def _random_quat(rng) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def _random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def ring_cameras(n: int, radius: float = 2.5, image_size: int = 64,
                 height_amp: float = 0.6) -> list[Camera]:
    cams = []
    for i in range(n):
        ang = 2.0 * np.pi * i / n
        z = height_amp * (1.0 if i % 2 == 0 else -0.5)
        eye = np.array([radius * np.cos(ang), radius * np.sin(ang), z])
        cams.append(Camera.look_at(eye, (0.0, 0.0, 0.0),
                                   width=image_size, height=image_size,
                                   fx=1.2 * image_size, near=0.1))
    return cams


def make_ground_truth(n_primitives: int = 30, max_lobes: int = 3,
                      seed: int = 0) -> Scene:
    rng = np.random.default_rng(seed)
    prims = []
    for _ in range(n_primitives):
        n_lobes = int(rng.integers(1, max_lobes + 1))
        diffuse = rng.uniform(0.15, 0.8, size=3)
        lobes = [SGLobe(axis=_random_unit(rng),
                        sharpness=float(rng.uniform(2.0, 9.0)),
                        amplitude=rng.uniform(-0.1, 0.35, size=3))
                 for _ in range(n_lobes)]
        prims.append(GaussianPrimitive(
            position=rng.normal(scale=0.45, size=3),
            rotation=_random_quat(rng),
            scale=rng.uniform(0.08, 0.22, size=3),
            opacity=float(rng.uniform(0.55, 0.95)),
            diffuse=diffuse,
            lobes=lobes))
    return Scene(prims, ColorModel.sg(max_lobes),
                 provenance={"source": "toy-ground-truth", "seed": seed})


def make_model_init(ground_truth: Scene, n_primitives: int,
                    seed: int = 1) -> Scene:
    """Overparameterized start: jittered copies with weak random lobes."""
    rng = np.random.default_rng(seed)
    gt = ground_truth.primitives
    max_lobes = ground_truth.color_model.max_lobes
    copies = int(np.ceil(n_primitives / len(gt)))
    prims = []
    for rep in range(copies):
        for src in gt:
            if len(prims) == n_primitives:
                break
            lobes = [SGLobe(axis=_random_unit(rng),
                            sharpness=float(rng.uniform(0.5, 3.0)),
                            amplitude=rng.uniform(-0.04, 0.04, size=3))
                     for _ in range(max_lobes)]
            q = src.rotation + rng.normal(scale=0.05, size=4)
            prims.append(GaussianPrimitive(
                position=src.position + rng.normal(scale=0.04, size=3),
                rotation=q / np.linalg.norm(q),
                scale=np.maximum(src.scale * rng.uniform(0.75, 1.25, size=3), 1e-4),
                opacity=float(np.clip(
                    src.opacity * rng.uniform(0.45, 0.7), 0.05, 0.98)),
                diffuse=np.clip(
                    src.diffuse + rng.normal(scale=0.05, size=3), 0.0, 1.2),
                lobes=lobes))
    return Scene(prims, ColorModel.sg(max_lobes),
                 provenance={"source": "toy-model-init", "seed": seed})


def make_toy_setup(gt_primitives: int = 30, model_primitives: int = 120,
                   n_views: int = 8, image_size: int = 64,
                   max_lobes: int = 3, seed: int = 0) -> ToySetup:
    gt = make_ground_truth(gt_primitives, max_lobes, seed=seed)
    cams = ring_cameras(n_views, image_size=image_size)
    targets = [render(gt, cam) for cam in cams]
    model = make_model_init(gt, model_primitives, seed=seed + 1)
    return ToySetup(ground_truth=gt, model=model, cameras=cams,
                    targets=targets)
