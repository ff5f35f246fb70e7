import numpy as np
import pytest

from sgsplat.scene import ColorModel, GaussianPrimitive, Scene, SGLobe


def random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return (v / np.linalg.norm(v)).astype(np.float32)


def random_quat(rng) -> np.ndarray:
    q = rng.normal(size=4)
    return (q / np.linalg.norm(q)).astype(np.float32)


def random_lobe(rng, sharpness=None) -> SGLobe:
    if sharpness is None:
        sharpness = float(rng.uniform(0.0, 10.0))
    return SGLobe(axis=random_unit(rng), sharpness=sharpness,
                  amplitude=rng.uniform(-1, 1, 3).astype(np.float32))


def random_scene(rng, n=None, max_lobes=3) -> Scene:
    if n is None:
        n = int(rng.integers(0, 30))
    prims = []
    for _ in range(n):
        lobes = [random_lobe(rng) for _ in range(int(rng.integers(0, max_lobes + 1)))]
        prims.append(GaussianPrimitive(
            position=rng.uniform(-2, 2, 3).astype(np.float32),
            rotation=random_quat(rng),
            scale=rng.uniform(0.01, 1.0, 3).astype(np.float32),
            opacity=float(np.float32(rng.uniform(0.0, 1.0))),
            diffuse=rng.uniform(-0.2, 1.2, 3).astype(np.float32),
            lobes=lobes))
    return Scene(prims, ColorModel.sg(max_lobes))


def scenes_equal(a: Scene, b: Scene) -> bool:
    if len(a) != len(b) or a.color_model.kind != b.color_model.kind:
        return False
    for pa, pb in zip(a.primitives, b.primitives):
        if not (np.array_equal(pa.position, pb.position)
                and np.array_equal(pa.rotation, pb.rotation)
                and np.array_equal(pa.scale, pb.scale)
                and np.float32(pa.opacity) == np.float32(pb.opacity)
                and np.array_equal(pa.diffuse, pb.diffuse)
                and len(pa.lobes) == len(pb.lobes)):
            return False
        for la, lb in zip(pa.lobes, pb.lobes):
            if not (np.array_equal(la.axis, lb.axis)
                    and np.float32(la.sharpness) == np.float32(lb.sharpness)
                    and np.array_equal(la.amplitude, lb.amplitude)):
                return False
    return True


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
