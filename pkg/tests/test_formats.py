import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lf4d.core import PointCloud3D
from lf4d.errors import BadMagic, ParseError, TruncatedFile
from lf4d.formats import (
    FLO_MAGIC,
    read_flo,
    read_id_map,
    read_pfm,
    read_ply,
    read_png,
    write_flo,
    write_id_map,
    write_pfm,
    write_ply,
    write_png,
)


class TestFlo:
    def test_single_pixel_layout(self, tmp_path):
        p = tmp_path / "one.flo"
        write_flo(np.array([[[2.5, -1.0]]], dtype=np.float32), p)
        raw = p.read_bytes()
        assert len(raw) == 12 + 8
        assert raw[:4] == FLO_MAGIC
        assert raw[4:12] == (1).to_bytes(4, "little") * 2
        back = read_flo(p)
        np.testing.assert_array_equal(back, [[[2.5, -1.0]]])

    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        flow = rng.standard_normal((48, 64, 2)).astype(np.float32)
        p = tmp_path / "f.flo"
        write_flo(flow, p)
        back = read_flo(p)
        assert back.tobytes() == flow.tobytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.flo"
        p.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(BadMagic):
            read_flo(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.flo"
        write_flo(np.zeros((4, 4, 2), dtype=np.float32), p)
        p.write_bytes(p.read_bytes()[:-6])
        with pytest.raises(TruncatedFile):
            read_flo(p)

    @given(h=st.integers(1, 12), w=st.integers(1, 12))
    @settings(max_examples=20, deadline=None)
    def test_roundtrip_any_shape(self, tmp_path_factory, h, w):
        flow = np.arange(h * w * 2, dtype=np.float32).reshape(h, w, 2)
        p = tmp_path_factory.mktemp("flo") / "x.flo"
        write_flo(flow, p)
        np.testing.assert_array_equal(read_flo(p), flow)


class TestPfm:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        d = rng.uniform(0.1, 9.0, (20, 30)).astype(np.float32)
        d[3, 4] = np.inf
        p = tmp_path / "d.pfm"
        write_pfm(d, p)
        np.testing.assert_array_equal(read_pfm(p), d)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "x.pfm"
        p.write_bytes(b"PF\n1 1\n-1.0\n" + b"\x00" * 12)
        with pytest.raises(BadMagic):
            read_pfm(p)


class TestPly:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        pts = rng.standard_normal((17, 3))
        vis = rng.integers(0, 2 ** 20, 17).astype(np.uint64)
        obj = rng.integers(0, 3, 17).astype(np.int32)
        cloud = PointCloud3D(pts, vis, obj)
        p = tmp_path / "c.ply"
        write_ply(cloud, p, n_views=20)
        back = read_ply(p)
        np.testing.assert_array_equal(back.points, pts)
        np.testing.assert_array_equal(back.visibility, vis)
        np.testing.assert_array_equal(back.object_ids, obj)
        np.testing.assert_array_equal(back.point_ids, cloud.point_ids)

    def test_parse_error_carries_line_number(self, tmp_path):
        p = tmp_path / "c.ply"
        cloud = PointCloud3D(np.zeros((2, 3)), np.zeros(2, dtype=np.uint64))
        write_ply(cloud, p, n_views=4)
        lines = p.read_text().splitlines()
        lines[-1] = "not a number at all"
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as err:
            read_ply(p)
        assert err.value.line == len(lines)

    def test_not_ply(self, tmp_path):
        p = tmp_path / "x.ply"
        p.write_text("hello\n")
        with pytest.raises(BadMagic):
            read_ply(p)


class TestPng:
    def test_gray_roundtrip_8bit_quantized(self, tmp_path):
        img = np.linspace(0, 1, 64).reshape(8, 8)
        p = tmp_path / "g.png"
        write_png(img, p)
        back = read_png(p)
        assert np.max(np.abs(back - img)) <= 0.5 / 255.0 + 1e-12

    def test_id_map_roundtrip(self, tmp_path):
        ids = np.array([[-1, 0], [5, 999]], dtype=np.int32)
        p = tmp_path / "ids.png"
        write_id_map(ids, p)
        np.testing.assert_array_equal(read_id_map(p), ids)
