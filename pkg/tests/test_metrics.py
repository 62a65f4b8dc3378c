import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from derain.metrics import evaluate_video, psnr, rain_residual, warp_error
from derain.synthetic_rain import RainSceneSpec, render


class TestPsnr:
    def test_identical_is_infinite(self):
        a = np.random.default_rng(0).random((2, 1, 4, 4))
        assert psnr(a, a) == math.inf

    def test_zero_db_at_peak_mse(self):
        a = np.zeros((3, 3))
        b = np.ones((3, 3))
        assert psnr(a, b, peak=1.0) == pytest.approx(0.0)

    def test_constant_offset_closed_form(self):
        a = np.zeros((4, 4))
        assert psnr(a, a + 0.1, peak=1.0) == pytest.approx(20.0)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((2, 3, 3)), rng.random((2, 3, 3))
        assert psnr(a, b) == pytest.approx(psnr(b, a))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((3, 3)))


class TestWarpError:
    def test_static_video_zero_flow(self):
        video = np.tile(np.random.default_rng(0).random((1, 8, 8)), (4, 1, 1, 1))
        flow = np.zeros((3, 2, 8, 8))
        assert warp_error(video, flow) == pytest.approx(0.0, abs=1e-12)

    def test_clean_scene_with_its_own_flow(self):
        bundle = render(RainSceneSpec(seed=5, camera_velocity=(1, 1)))
        assert warp_error(bundle.clean, bundle.flow) < 1e-3

    def test_rain_breaks_temporal_consistency(self):
        spec = RainSceneSpec(
            seed=6, streak_count=10, intensity="heavy", camera_velocity=(0, 1)
        )
        bundle = render(spec)
        assert warp_error(bundle.rainy, bundle.flow) > warp_error(
            bundle.clean, bundle.flow
        )

    def test_dims_mismatch(self):
        with pytest.raises(ValueError):
            warp_error(np.zeros((4, 1, 8, 8)), np.zeros((2, 2, 8, 8)))


class TestRainResidual:
    def test_output_equals_clean(self):
        clean = np.random.default_rng(0).random((2, 1, 4, 4))
        mask = np.ones_like(clean)
        assert rain_residual(clean, clean, mask) == 0.0

    def test_rainy_input_has_positive_residual(self):
        bundle = render(RainSceneSpec(seed=7, streak_count=4, intensity="light"))
        value = rain_residual(bundle.rainy, bundle.clean, bundle.rain_mask)
        assert value > 0
        sel = bundle.rain_mask > 0
        expected = float(np.mean((bundle.rainy - bundle.clean)[sel] ** 2))
        assert value == pytest.approx(expected)

    def test_empty_mask_warns_and_returns_zero(self):
        a = np.ones((2, 1, 4, 4))
        with pytest.warns(UserWarning):
            assert rain_residual(a, a * 0.5, np.zeros_like(a)) == 0.0


class TestDeterminism:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_metrics_stable_across_reruns(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.random((3, 1, 6, 6))
        b = rng.random((3, 1, 6, 6))
        flow = rng.uniform(-1, 1, (2, 2, 6, 6))
        assert psnr(a, b) == psnr(a, b)
        assert warp_error(a, flow) == warp_error(a, flow)


def test_evaluate_video_report_fields():
    bundle = render(RainSceneSpec(seed=8, streak_count=4, intensity="light"))
    rep = evaluate_video(bundle.rainy, bundle.clean, bundle.rain_mask, bundle.flow)
    assert rep.rain_residual > 0
    assert rep.warp_error > 0
    assert len(rep.per_frame_psnr) == bundle.rainy.shape[0]
    assert rep.to_dict()["psnr_vs_clean"] == rep.psnr_vs_clean
