"""Regenerate the viewer test fixtures from the primary implementation.

Run from the repository root:  python frontend/scripts/make_fixtures.py
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from sgsplat.io import save_camera_json, save_scene, write_compact
from sgsplat.scene import ColorModel, Scene
from sgsplat.toy import make_ground_truth, ring_cameras

ROOT = Path(__file__).resolve().parents[2]
FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"


def primitive_fields(prim):
    return {
        "position": prim.position.tolist(),
        "rotation": prim.rotation.tolist(),
        "scale": prim.scale.tolist(),
        "opacity": float(np.float32(prim.opacity)),
        "diffuse": prim.diffuse.tolist(),
        "lobes": [{
            "axis": lobe.axis.tolist(),
            "sharpness": float(np.float32(lobe.sharpness)),
            "amplitude": lobe.amplitude.tolist(),
        } for lobe in prim.lobes],
    }


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)

    scene = make_ground_truth(n_primitives=14, seed=3)
    # exercise the zero-lobe path too
    scene.primitives[0].lobes.clear()
    scene_path = FIXTURES / "scene.megs2"
    save_scene(scene_path, scene)

    cam = ring_cameras(1, image_size=64)[0]
    cam_path = FIXTURES / "camera.json"
    save_camera_json(cam_path, cam)

    cli = [sys.executable, "-m", "sgsplat.cli"]
    subprocess.run(cli + ["render", str(scene_path), str(cam_path),
                          str(FIXTURES / "render.png"),
                          "--raw", str(FIXTURES / "render.rgb32f")],
                   check=True, cwd=ROOT)
    stats = subprocess.run(cli + ["stats", str(scene_path), "--json"],
                           check=True, cwd=ROOT, capture_output=True,
                           text=True)
    (FIXTURES / "stats.json").write_text(stats.stdout)

    expected = {
        "primitive_count": len(scene),
        "lobe_count": scene.lobe_count,
        "first_primitive": primitive_fields(scene.primitives[0]),
        "second_primitive": primitive_fields(scene.primitives[1]),
        "last_primitive": primitive_fields(scene.primitives[-1]),
    }
    (FIXTURES / "expected.json").write_text(json.dumps(expected, indent=2))

    (FIXTURES / "empty.megs2").write_bytes(
        write_compact(Scene([], ColorModel.sg(3))))
    data = scene_path.read_bytes()
    (FIXTURES / "truncated.megs2").write_bytes(data[:len(data) - 17])

    for clean in ["render.png.manifest.json"]:
        p = FIXTURES / clean
        if p.exists():
            p.unlink()
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
