import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from echolocate.doa import DoaSet
from echolocate.geometry import Direction, RoomScene, unit_vector
from echolocate.source_loc import (
    DISTANCE_CLAMP,
    FloorNotFound,
    LocalizationFeatures,
    NoiseSpec,
    SourceEstimate,
    TrainParams,
    ddnn_infer,
    ddnn_train,
    distance_from_height,
    distance_from_tdoa,
    estimate_source,
    select_floor_reflection,
    synthetic_features,
)
from echolocate.tdoa import TdoaEstimate
from oracles import C, floor_angles

SCENE_A = floor_angles(1.5, 1.5, 2.0)
SCENE_B = floor_angles(1.5, 2.0, 2.0)


def oracle_rows(n, seed, d_range=None):
    """Exact ``[h, alpha1, alpha2, dt]`` rows and distances for random array/source placements."""
    rng = np.random.default_rng(seed)
    x, d = [], []
    while len(x) < n:
        h, zs = rng.uniform(0.5, 3.5, 2)
        if d_range is None:
            r = rng.uniform(0.5, 8.0)
        else:
            dist = rng.uniform(*d_range)
            if dist <= abs(zs - h):
                continue
            r = math.sqrt(dist**2 - (zs - h) ** 2)
        x.append([h, *floor_angles(h, zs, r)])
        d.append(math.hypot(r, zs - h))
    return np.array(x), np.array(d)


@pytest.fixture(scope="module")
def clean_model():
    return ddnn_train(oracle_rows(8000, 0), noise=None, params=TrainParams(epochs=150), seed=0)


class TestClosedForms:
    def test_scene_oracles(self):
        assert SCENE_A[1] == pytest.approx(56.310, abs=5e-4)
        assert SCENE_A[2] * 1e3 == pytest.approx(4.681, abs=5e-4)
        assert SCENE_B[0] == pytest.approx(14.036, abs=5e-4)
        assert SCENE_B[1] == pytest.approx(60.255, abs=5e-4)
        assert SCENE_B[2] * 1e3 == pytest.approx(5.742, abs=5e-4)

    def test_height_examples(self):
        assert distance_from_height(1.5, 0.0, 56.310) == pytest.approx(2.000, abs=5e-4)
        assert distance_from_height(1.5, 14.036, 60.255) == pytest.approx(2.062, abs=5e-4)

    def test_tdoa_examples(self):
        assert distance_from_tdoa(4.681e-3, 0.0, 56.310, 343.0) == pytest.approx(2.000, abs=1e-3)
        assert distance_from_tdoa(5.742e-3, 14.036, 60.255) == pytest.approx(2.062, abs=1e-3)

    def test_divergence_as_angles_meet(self):
        d = [distance_from_height(1.5, 40.0 - gap, 40.0) for gap in (1.0, 0.1, 0.01)]
        assert d[0] < d[1] < d[2]
        assert d[2] > 1000

    @pytest.mark.parametrize("args", [(1.5, 0.0, 90.0), (1.5, 30.0, 30.0), (1.5, 40.0, 20.0), (1.5, -10.0, 0.0)])
    def test_height_rejects_bad_geometry(self, args):
        with pytest.raises(ValueError):
            distance_from_height(*args)

    @pytest.mark.parametrize("args", [(0.0, 0.0, 56.3), (1e-3, 20.0, 20.0), (1e-3, -60.0, 56.3)])
    def test_tdoa_rejects_bad_geometry(self, args):
        with pytest.raises(ValueError):
            distance_from_tdoa(*args)

    def test_oracle_round_trip(self):
        x, d = oracle_rows(1000, 1)
        h, a1, a2, dt = x.T
        assert np.max(np.abs(distance_from_height(h, a1, a2) / d - 1)) < 1e-9
        assert np.max(np.abs(distance_from_tdoa(dt, a1, a2) / d - 1)) < 1e-9

    @given(st.floats(0.3, 3.5), st.floats(0.3, 3.5), st.floats(0.3, 9.0))
    def test_delay_identity(self, h, zs, r):
        a1, a2, dt = floor_angles(h, zs, r)
        d1 = distance_from_tdoa(dt, a1, a2)
        lhs = (d1 + C * dt) * math.cos(math.radians(a2))
        assert lhs == pytest.approx(d1 * math.cos(math.radians(a1)), rel=1e-9)

    def test_height_beats_tdoa_under_noise(self):
        """Median error of the height method is smaller; bootstrap upper bound of the gap below zero."""
        rng = np.random.default_rng(2)
        x, d = oracle_rows(1000, 3, d_range=(1.0, 2.0))
        noisy = x + rng.standard_normal(x.shape) * np.array([0.0, 1.0, 1.0, 0.5e-3])
        err_h, err_t = np.full(len(d), np.inf), np.full(len(d), np.inf)
        for i, (h, a1, a2, dt) in enumerate(noisy):
            try:
                err_h[i] = abs(distance_from_height(h, a1, a2) - d[i])
            except ValueError:
                pass
            try:
                err_t[i] = abs(distance_from_tdoa(dt, a1, a2) - d[i])
            except ValueError:
                pass
        gaps = []
        for _ in range(1000):
            idx = rng.integers(0, len(d), len(d))
            gaps.append(np.median(err_h[idx]) - np.median(err_t[idx]))
        assert np.percentile(gaps, 95) < 0


class TestFloorSelection:
    def doas(self, elevations):
        return DoaSet(Direction(0, 0), [Direction(90 * i, e) for i, e in enumerate(elevations)],
                      [0.0] + [-1.0] * len(elevations))

    def test_picks_floor_consistent_reflection(self):
        doas = self.doas([-56.31, 35.0, -12.0])
        taus = [TdoaEstimate(SCENE_A[2], 75, 0.8, True), TdoaEstimate(3e-3, 48, 0.6, True),
                TdoaEstimate(6e-3, 96, 0.7, True)]
        assert select_floor_reflection(doas, taus, h=1.5) == 0

    def test_single_reflection(self):
        doas = self.doas([-30.0])
        assert select_floor_reflection(doas, [TdoaEstimate(2e-3, 32, 0.5, True)], h=1.5) == 0

    def test_lowest_without_height(self):
        doas = self.doas([-20.0, -50.0])
        taus = [TdoaEstimate(2e-3, 32, 0.5, True)] * 2
        assert select_floor_reflection(doas, taus) == 1

    def test_none_below_horizon(self):
        doas = self.doas([10.0, -2.0])
        with pytest.raises(FloorNotFound):
            select_floor_reflection(doas, [TdoaEstimate(2e-3, 32, 0.5, True)] * 2, h=1.5)

    def test_invalid_delays_skipped(self):
        doas = self.doas([-40.0])
        with pytest.raises(FloorNotFound):
            select_floor_reflection(doas, [TdoaEstimate(2e-3, 32, 0.1, False)], h=1.5)


class TestDdnn:
    def test_noise_free_accuracy(self, clean_model):
        x, d = oracle_rows(500, 9)
        assert np.mean(np.abs(clean_model.predict(x) - d)) < 0.05

    def test_scene_a(self, clean_model):
        a1, a2, dt = SCENE_A
        est = ddnn_infer(clean_model, LocalizationFeatures(1.5, a1, a2, dt, Direction(90, a1)))
        assert est.d1 == pytest.approx(2.0, abs=0.05)
        assert est.method == "D-DNN" and not est.clamped
        assert np.allclose(est.position, est.d1 * unit_vector(Direction(90, a1)))

    def test_clamped_output(self, clean_model):
        # far outside the training range the raw output leaves (0.1, 20) m
        est = ddnn_infer(clean_model, LocalizationFeatures(1.5, 0.0, 0.01, 1e-9))
        assert est.clamped and est.d1 in (0.1, 20.0)

    def test_noisy_training_beats_closed_forms(self):
        """Mean error on identically perturbed inputs, over rows where both closed forms are defined."""
        noise = NoiseSpec()
        model = ddnn_train(oracle_rows(4000, 11), noise, TrainParams(epochs=60), seed=0)
        x, d = oracle_rows(300, 12)
        x = noise.perturb(np.repeat(x, 10, axis=0), np.random.default_rng(3))
        d = np.repeat(d, 10)
        keep = (x[:, 2] > 0) & (x[:, 2] < 90) & (np.abs(x[:, 1]) < x[:, 2]) & (x[:, 3] > 0)
        x, d = x[keep], d[keep]
        err_h = np.abs(distance_from_height(x[:, 0], x[:, 1], x[:, 2]) - d)
        err_t = np.abs(distance_from_tdoa(x[:, 3], x[:, 1], x[:, 2]) - d)
        err_n = np.abs(np.clip(model.predict(x), *DISTANCE_CLAMP) - d)
        assert keep.mean() > 0.9
        assert np.mean(err_n) <= min(np.mean(err_h), np.mean(err_t))

    def test_deterministic(self):
        data = oracle_rows(1000, 4)
        a = ddnn_train(data, params=TrainParams(epochs=3), seed=5)
        b = ddnn_train(data, params=TrainParams(epochs=3), seed=5)
        assert a.history["train"] == b.history["train"]
        assert a.to_bytes() == b.to_bytes()

    def test_needs_enough_rows(self):
        with pytest.raises(ValueError):
            ddnn_train(oracle_rows(999, 4))

    def test_accepts_feature_pairs(self):
        x, d = oracle_rows(1000, 6)
        pairs = [(LocalizationFeatures(*row), di) for row, di in zip(x, d)]
        a = ddnn_train(pairs, params=TrainParams(epochs=1), seed=0)
        b = ddnn_train((x, d), params=TrainParams(epochs=1), seed=0)
        assert a.to_bytes() == b.to_bytes()


class TestEstimates:
    def test_methods_agree_on_exact_features(self):
        scene = RoomScene((6, 6, 3), (3, 1, 2.0), (1, 1, 1.5))
        f = LocalizationFeatures.from_scene(scene)
        for method in ("height", "tdoa"):
            est = estimate_source(f, method)
            assert est.d1 == pytest.approx(math.sqrt(4.25), rel=1e-9)
            assert np.allclose(est.position, scene.source_pos - scene.array_pos)

    def test_unknown_method(self):
        f = LocalizationFeatures(1.5, *SCENE_A)
        with pytest.raises(ValueError):
            estimate_source(f, "sonar")
        with pytest.raises(ValueError):
            estimate_source(f, "dnn")

    def test_feature_invariants(self):
        with pytest.raises(ValueError):
            LocalizationFeatures(0.0, 0, 50, 1e-3)
        with pytest.raises(ValueError):
            LocalizationFeatures(1.5, 50, 50, 1e-3)
        with pytest.raises(ValueError):
            LocalizationFeatures(1.5, 0, 50, -1e-3)
        with pytest.raises(ValueError):
            SourceEstimate(0.0, np.zeros(3), "D-height")

    def test_synthetic_features(self):
        scenes = [RoomScene((6, 6, 3), (3, 1, z), (1, 1, 1.5)) for z in (1.0, 1.5, 2.0)]
        x, d = synthetic_features(scenes)
        assert x.shape == (3, 4)
        assert np.allclose(distance_from_height(*x[:, :3].T), d, rtol=1e-9)
