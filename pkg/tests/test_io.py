import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgsplat.io import (FORMAT_VERSION, MAGIC, load_scene, parse_ply,
                        read_compact, save_scene, write_compact,
                        load_raw_rgb32f, save_raw_rgb32f)
from sgsplat.scene import (ColorModel, Scene, SceneFormatError,
                           TruncatedFileError, UnsupportedEncodingError)

from conftest import random_scene, scenes_equal
from ply_oracle import make_fixture_vertices, write_gaussian_ply


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestParsePly:
    def test_opacity_logit_zero_maps_to_half(self):
        v = make_fixture_vertices(n=1)
        v[0]["opacity_logit"] = 0.0
        scene = parse_ply(write_gaussian_ply(v))
        assert scene.primitives[0].opacity == pytest.approx(0.5, abs=1e-7)

    def test_log_scale_exponentiated(self):
        v = make_fixture_vertices(n=1)
        v[0]["log_scales"] = [np.log(2.0), 0.0, 0.0]
        scene = parse_ply(write_gaussian_ply(v))
        assert scene.primitives[0].scale[0] == pytest.approx(2.0, rel=1e-6)
        assert scene.primitives[0].scale[1] == pytest.approx(1.0, rel=1e-6)

    def test_three_vertex_fixture_field_by_field(self):
        vertices = make_fixture_vertices(seed=42, n=3)
        scene = parse_ply(write_gaussian_ply(vertices))
        assert len(scene) == 3
        assert scene.color_model == ColorModel.sh(3)
        for prim, block, v in zip(scene.primitives, scene.sh_coeffs, vertices):
            f32 = lambda x: np.asarray(x, dtype=np.float32)
            np.testing.assert_array_equal(prim.position, f32(v["xyz"]))
            np.testing.assert_allclose(
                prim.opacity, sigmoid(np.float32(v["opacity_logit"])),
                rtol=1e-6)
            np.testing.assert_allclose(
                prim.scale, np.exp(f32(v["log_scales"])), rtol=1e-6)
            q = f32(v["quat"]).astype(np.float64)
            np.testing.assert_allclose(prim.rotation, q / np.linalg.norm(q),
                                       rtol=1e-5)
            np.testing.assert_array_equal(prim.diffuse, f32(v["f_dc"]))
            np.testing.assert_array_equal(block[0], f32(v["f_dc"]))
            # file order is channel-major: 15 reds, 15 greens, 15 blues
            rest = f32(v["f_rest"]).reshape(3, 15)
            np.testing.assert_array_equal(block[1:], rest.T)

    def test_no_rest_props_gives_degree_zero(self):
        scene = parse_ply(write_gaussian_ply(
            make_fixture_vertices(n=2), include_rest=False))
        assert scene.color_model.degree == 0
        assert scene.sh_coeffs[0].shape == (1, 3)

    def test_missing_property_named_in_error(self):
        data = write_gaussian_ply(make_fixture_vertices(n=1))
        broken = data.replace(b"property float opacity\n", b"")
        with pytest.raises(SceneFormatError, match="opacity"):
            parse_ply(broken)

    def test_big_endian_rejected(self):
        data = write_gaussian_ply(make_fixture_vertices(n=1),
                                  fmt="binary_big_endian")
        with pytest.raises(UnsupportedEncodingError):
            parse_ply(data)

    def test_ascii_rejected(self):
        data = write_gaussian_ply(make_fixture_vertices(n=1), fmt="ascii")
        with pytest.raises(UnsupportedEncodingError):
            parse_ply(data)

    def test_truncated_payload_reports_offset(self):
        data = write_gaussian_ply(make_fixture_vertices(n=3))
        with pytest.raises(TruncatedFileError) as err:
            parse_ply(data[:-10])
        assert err.value.offset == len(data) - 10

    def test_opacity_and_scale_domains(self, rng):
        vertices = make_fixture_vertices(n=8)
        for v, logit in zip(vertices, np.linspace(-40, 40, 8)):
            v["opacity_logit"] = logit
            v["log_scales"] = rng.uniform(-80, 3, 3)
        scene = parse_ply(write_gaussian_ply(vertices))
        for prim in scene.primitives:
            assert 0.0 < prim.opacity < 1.0
            assert np.all(prim.scale > 0.0)


class TestCompactFormat:
    def test_empty_scene_header(self):
        data = write_compact(Scene([], ColorModel.sg(3)))
        assert len(data) == len(MAGIC) + 2 + 4
        assert data[:6] == b"MEGS2\x00"
        back = read_compact(data)
        assert len(back) == 0

    def test_single_primitive_no_lobes_size(self, rng):
        scene = random_scene(rng, n=1, max_lobes=0)
        data = write_compact(scene)
        assert len(data) == (len(MAGIC) + 2 + 4) + 14 * 4 + 1

    def test_roundtrip_random_scene(self, rng):
        scene = random_scene(rng, n=100)
        data = write_compact(scene)
        back = read_compact(data)
        assert scenes_equal(scene, back)
        assert write_compact(back) == data

    def test_bad_magic(self):
        data = bytearray(write_compact(Scene([], ColorModel.sg(3))))
        data[0] = 0x58
        with pytest.raises(SceneFormatError):
            read_compact(bytes(data))

    def test_bad_version(self):
        data = bytearray(write_compact(Scene([], ColorModel.sg(3))))
        data[6] = FORMAT_VERSION + 1
        with pytest.raises(SceneFormatError):
            read_compact(bytes(data))

    def test_truncation_detected(self, rng):
        data = write_compact(random_scene(rng, n=4))
        with pytest.raises(TruncatedFileError):
            read_compact(data[:-3])

    def test_trailing_garbage_detected(self, rng):
        data = write_compact(random_scene(rng, n=2))
        with pytest.raises(SceneFormatError):
            read_compact(data + b"\x00")

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_roundtrip_property(self, seed):
        scene = random_scene(np.random.default_rng(seed))
        data = write_compact(scene)
        back = read_compact(data)
        assert scenes_equal(scene, back)
        assert write_compact(back) == data


class TestSceneArchive:
    def test_npz_roundtrip_sg(self, rng, tmp_path):
        scene = random_scene(rng, n=9)
        path = tmp_path / "scene.npz"
        save_scene(path, scene)
        assert scenes_equal(load_scene(path), scene)

    def test_npz_roundtrip_sh(self, tmp_path):
        data = write_gaussian_ply(make_fixture_vertices(n=3))
        scene = parse_ply(data)
        path = tmp_path / "scene.npz"
        save_scene(path, scene)
        back = load_scene(path)
        assert back.color_model == scene.color_model
        for a, b in zip(back.sh_coeffs, scene.sh_coeffs):
            np.testing.assert_array_equal(a, b)

    def test_megs2_extension_roundtrip(self, rng, tmp_path):
        scene = random_scene(rng, n=5)
        path = tmp_path / "scene.megs2"
        save_scene(path, scene)
        assert scenes_equal(load_scene(path), scene)

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(SceneFormatError):
            load_scene(tmp_path / "scene.abc")


class TestRawImage:
    def test_raw_dump_roundtrip(self, rng, tmp_path):
        img = rng.uniform(0, 1, size=(7, 5, 3)).astype(np.float32).astype(np.float64)
        path = tmp_path / "img.rgb32f"
        save_raw_rgb32f(path, img)
        np.testing.assert_array_equal(load_raw_rgb32f(path), img)
