import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lf4d.core import Image
from lf4d.epi import (
    EPIVolume,
    OrientedWindowEngine,
    build_epi_volume,
    disparity_offsets,
    fit_epi_line,
    oriented_window,
    window_distance,
)
from lf4d.errors import NoOverlap, OutOfImage, TooFewSamples
from lf4d.objects import clusters_from_labels
from lf4d.synthetic import CameraGridSpec, SyntheticSceneSpec, generate_synthetic

from conftest import frontal_plane


@pytest.fixture(scope="module")
def row_scene():
    """Single-row 5-camera array, one plane at depth 2 m."""
    spec = SyntheticSceneSpec(
        planes=[frontal_plane(z=2.0, half=1.6)],
        grid=CameraGridSpec(rows=1, cols=5, baseline=0.05, width=64, height=48,
                            focal_px=70.0, reference=(0, 0)),
        n_frames=1,
        points_per_plane=196,
    )
    return generate_synthetic(spec, seed=21)


class TestBuildEpiVolume:
    def test_height_is_cameras_times_scale(self, row_scene):
        seq, _ = row_scene
        frame = seq.frames[0]
        cluster = clusters_from_labels(frame.cloud)[0]
        vol = build_epi_volume(frame, cluster, seq.array, "horizontal", rows_per_camera=50)
        assert vol.height == 5 * 50 == 250

    def test_equispaced_row_epi_heights(self, row_scene):
        seq, _ = row_scene
        frame = seq.frames[0]
        cluster = clusters_from_labels(frame.cloud)[0]
        vol = build_epi_volume(frame, cluster, seq.array, "horizontal")
        H = vol.height
        heights = set()
        for epi in vol.epis.values():
            heights.update(np.round(epi.ys, 9).tolist())
        assert heights <= {0.0, H / 4, H / 2, 3 * H / 4, float(H)}

    def test_scene_point_samples_collinear(self, row_scene):
        seq, _ = row_scene
        frame = seq.frames[0]
        cluster = clusters_from_labels(frame.cloud)[0]
        vol = build_epi_volume(frame, cluster, seq.array, "horizontal")
        checked = 0
        for epi in vol.epis.values():
            for pid in np.unique(epi.point_ids):
                sel = epi.point_ids == pid
                if sel.sum() < 3:
                    continue
                line = fit_epi_line(np.stack([epi.xs[sel], epi.ys[sel]], axis=1))
                assert line.rms_residual < 1e-6
                checked += 1
        assert checked > 30

    def test_line_implied_depth_within_one_percent(self, row_scene):
        seq, _ = row_scene
        frame = seq.frames[0]
        cluster = clusters_from_labels(frame.cloud)[0]
        vol = build_epi_volume(frame, cluster, seq.array, "horizontal")
        depths = []
        for epi in vol.epis.values():
            for pid in np.unique(epi.point_ids):
                sel = epi.point_ids == pid
                if sel.sum() < 3:
                    continue
                line = fit_epi_line(
                    np.stack([epi.xs[sel], epi.ys[sel]], axis=1),
                    focal=vol.focal,
                    baseline_per_row=vol.baseline_per_row,
                )
                depths.append(line.depth)
        depths = np.asarray(depths)
        assert len(depths) > 30
        assert np.max(np.abs(depths - 2.0) / 2.0) < 0.01

    def test_vertical_volume_uses_columns(self, static_scene):
        seq, _ = static_scene
        frame = seq.frames[0]
        cluster = clusters_from_labels(frame.cloud)[0]
        vol = build_epi_volume(frame, cluster, seq.array, "vertical", rows_per_camera=50)
        assert vol.height == 2 * 50
        assert len(vol.epis) > 0

    def test_rescaling_mu_scales_heights_linearly(self, row_scene):
        seq, _ = row_scene
        frame = seq.frames[0]
        cluster = clusters_from_labels(frame.cloud)[0]
        v1 = build_epi_volume(frame, cluster, seq.array, "horizontal", rows_per_camera=10)
        v2 = build_epi_volume(frame, cluster, seq.array, "horizontal", rows_per_camera=20)
        key = next(iter(v1.epis))
        np.testing.assert_allclose(v2.epis[key].ys, 2.0 * v1.epis[key].ys, atol=1e-9)


class TestFitEpiLine:
    def test_exact_line_slope_in_x_per_y(self):
        # samples on y = 2x + 1, i.e. x = (y - 1) / 2: slope dx/dy = 0.5
        ys = np.array([1.0, 3.0, 5.0, 7.0])
        xs = (ys - 1.0) / 2.0
        line = fit_epi_line(np.stack([xs, ys], axis=1))
        assert line.slope == pytest.approx(0.5, abs=1e-12)
        assert line.rms_residual < 1e-12
        np.testing.assert_allclose(line.x_at(ys), xs, atol=1e-12)

    def test_outlier_rejected(self):
        ys = np.array([0.0, 1.0, 2.0, 3.0, 4.0, 2.5])
        xs = 0.3 * ys + 1.0
        xs[-1] += 5.0  # gross outlier
        line = fit_epi_line(np.stack([xs, ys], axis=1))
        assert 5 not in line.inliers
        assert line.rms_residual < 1e-9
        assert line.slope == pytest.approx(0.3, abs=1e-9)

    def test_all_x_equal_gives_infinite_depth(self):
        ys = np.array([0.0, 1.0, 2.0])
        xs = np.full(3, 7.0)
        line = fit_epi_line(np.stack([xs, ys], axis=1), focal=70.0, baseline_per_row=0.001)
        assert line.slope == pytest.approx(0.0)
        assert np.isinf(line.depth)

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            fit_epi_line(np.array([[1.0, 2.0]]))
        with pytest.raises(TooFewSamples):
            fit_epi_line(np.array([[1.0, 2.0], [3.0, 2.0]]))  # same height

    @given(
        slope=st.floats(-3, 3),
        intercept=st.floats(-10, 10),
        n=st.integers(3, 12),
        seed=st.integers(0, 1000),
    )
    @settings(max_examples=40, deadline=None)
    def test_permutation_invariant(self, slope, intercept, n, seed):
        rng = np.random.default_rng(seed)
        ys = np.sort(rng.uniform(0, 10, n))
        if len(np.unique(ys)) < 2:
            return
        xs = slope * ys + intercept + rng.normal(0, 0.01, n)
        samples = np.stack([xs, ys], axis=1)
        perm = rng.permutation(n)
        a = fit_epi_line(samples)
        b = fit_epi_line(samples[perm])
        assert a.slope == pytest.approx(b.slope, abs=1e-9)
        assert a.intercept == pytest.approx(b.intercept, abs=1e-9)


def _engine(seq, frame=0, sigma=1.0, anchor=None):
    anchor = seq.array.reference_index if anchor is None else anchor
    return OrientedWindowEngine(seq.frames[frame].views, seq.array, anchor, sigma=sigma)


class TestOrientedWindow:
    def test_infinite_depth_is_unsheared_stack(self, static_scene):
        seq, _ = static_scene
        eng = _engine(seq, sigma=1.0)
        w = oriented_window(eng, np.inf, (30.0, 20.0))
        # every view's window must equal a plain crop around the center
        r = eng.radius
        for vi, v in enumerate(eng.cross):
            crop = seq.frames[0].views[v].data[20 - r : 20 + r + 1, 30 - r : 30 + r + 1]
            np.testing.assert_allclose(w.values[vi], crop, atol=1e-12)

    def test_cross_mask_view_count(self):
        spec = SyntheticSceneSpec(
            planes=[frontal_plane(z=2.0, half=2.5)],
            grid=CameraGridSpec(rows=4, cols=5, baseline=0.04, width=48, height=36, focal_px=50.0),
            n_frames=1,
        )
        seq, _ = generate_synthetic(spec, seed=30)
        eng = _engine(seq, sigma=1.0)
        assert eng.n_views == 5 + 4 - 1 == 8

    def test_shift_equivariance_integer_delta(self, static_scene):
        seq, _ = static_scene
        eng = _engine(seq, sigma=1.0)
        delta = 3
        w1 = oriented_window(eng, 2.0, (30.0 + delta, 20.0))
        shifted_views = []
        for img in seq.frames[0].views:
            d = np.roll(img.data, -delta, axis=1)
            shifted_views.append(Image(d))
        eng2 = OrientedWindowEngine(shifted_views, seq.array, seq.array.reference_index, sigma=1.0)
        w2 = oriented_window(eng2, 2.0, (30.0, 20.0))
        both = w1.valid & w2.valid
        # away from the roll wrap-around the windows agree exactly
        assert np.max(np.abs(w1.values[both] - w2.values[both])) < 1e-6

    def test_center_outside_image_raises(self, static_scene):
        seq, _ = static_scene
        eng = _engine(seq)
        with pytest.raises(OutOfImage):
            oriented_window(eng, 2.0, (-5.0, 10.0))

    def test_clipped_flag_near_border(self, static_scene):
        seq, _ = static_scene
        eng = _engine(seq, sigma=1.0)
        assert oriented_window(eng, np.inf, (0.0, 0.0)).clipped
        assert not oriented_window(eng, np.inf, (30.0, 20.0)).clipped

    def test_true_depth_minimizes_cross_view_variance(self, static_scene):
        # windows sheared at the correct depth align the views; a 20%% depth
        # error leaves residual parallax, raising across-view variance
        seq, gt = static_scene
        eng = _engine(seq, sigma=1.0)
        rng = np.random.default_rng(0)
        wins, losses = 0, 0
        for _ in range(60):
            x = rng.uniform(12, 52)
            y = rng.uniform(12, 36)
            good = oriented_window(eng, 2.0, (x, y))
            bad = oriented_window(eng, 2.0 * 1.2, (x, y))

            def cross_var(w):
                ok = w.valid.all(axis=0)
                return float(np.mean(np.var(w.values[:, ok], axis=0)))

            if cross_var(good) < cross_var(bad):
                wins += 1
            else:
                losses += 1
        assert wins / (wins + losses) >= 0.95


class TestWindowDistance:
    def test_identity_zero(self, static_scene):
        seq, _ = static_scene
        eng = _engine(seq)
        w = oriented_window(eng, 2.0, (30.0, 20.0))
        assert window_distance(w, w) == 0.0

    def test_constant_offset_squared(self, static_scene):
        seq, _ = static_scene
        eng = _engine(seq, sigma=1.0)
        w1 = oriented_window(eng, np.inf, (30.0, 20.0))
        import copy

        w2 = copy.deepcopy(w1)
        w2.values = w2.values + 0.1
        assert window_distance(w1, w2) == pytest.approx(0.01)

    def test_pseudometric_axioms_random_windows(self, static_scene):
        seq, _ = static_scene
        eng = _engine(seq, sigma=1.0)
        rng = np.random.default_rng(1)
        for _ in range(200):
            a = oriented_window(eng, rng.uniform(1.5, 4.0), rng.uniform([8, 8], [55, 39]))
            b = oriented_window(eng, rng.uniform(1.5, 4.0), rng.uniform([8, 8], [55, 39]))
            dab = window_distance(a, b)
            dba = window_distance(b, a)
            assert dab >= 0.0
            assert dab == pytest.approx(dba, rel=1e-12)
            assert window_distance(a, a) == 0.0

    def test_no_overlap_raises(self, static_scene):
        seq, _ = static_scene
        eng = _engine(seq, sigma=1.0)
        w1 = oriented_window(eng, 2.0, (30.0, 20.0))
        import copy

        w2 = copy.deepcopy(w1)
        w2.valid = np.zeros_like(w2.valid)
        with pytest.raises(NoOverlap):
            window_distance(w1, w2)

    def test_static_consecutive_frames_prefer_zero_displacement(self, static_scene):
        seq, _ = static_scene
        e0 = _engine(seq, frame=0, sigma=1.0)
        e1 = _engine(seq, frame=1, sigma=1.0)
        rng = np.random.default_rng(2)
        for _ in range(100):
            x = float(rng.uniform(10, 54))
            y = float(rng.uniform(10, 38))
            w0 = oriented_window(e0, 2.0, (x, y))
            base = window_distance(w0, oriented_window(e1, 2.0, (x, y)))
            for dx in (-3, -2, 2, 3):
                d = window_distance(w0, oriented_window(e1, 2.0, (x + dx, y)))
                assert base < d


class TestDisparityOffsets:
    def test_infinite_depth_zero(self):
        ang = np.array([[7.0, 0.0], [0.0, -3.0]])
        np.testing.assert_array_equal(disparity_offsets(np.inf, ang), 0.0)

    def test_matches_projection_displacement(self, static_scene):
        # the shear offset must equal the true projection displacement
        # between cross views for a point at known depth
        seq, _ = static_scene
        eng = _engine(seq)
        from lf4d.core import backproject_pixel, project_points

        anchor_cam = seq.array.cameras[eng.anchor]
        pt = backproject_pixel(np.array([30.0, 20.0]), 2.0, anchor_cam)
        offs = disparity_offsets(2.0, eng.angular)
        for vi, v in enumerate(eng.cross):
            pix, _ = project_points(pt[None], seq.array.cameras[v])
            np.testing.assert_allclose(pix[0], np.array([30.0, 20.0]) + offs[vi], atol=1e-9)
