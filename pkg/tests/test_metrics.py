"""Metric oracles: brute-force references, closed forms, permutation test."""

import math

import numpy as np
import pytest

from kforge.errors import ValidationError
from kforge.metrics import (METRICS_COLUMNS, EdgeSharpnessResult, ProfileSpec,
                            QualityReport, edge_sharpness, friedman_nemenyi,
                            mse, psnr, read_metrics_csv, snr_estimate, ssim,
                            write_metrics_csv)


class TestMseandPsnr:
    def test_identical_inputs(self):
        x = np.random.default_rng(0).random((4, 16, 16))
        assert mse(x, x) == 0.0
        assert psnr(x, x) == math.inf

    def test_constant_offset(self):
        a = np.full((8, 8), 0.3)
        b = a + 0.1
        assert abs(mse(a, b) - 0.01) <= 1e-15
        assert abs(psnr(a, b, peak=1.0) - 20.0) <= 1e-12

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.random((3, 12, 12))
        b = rng.random((3, 12, 12))
        total = 0.0
        count = 0
        for t in range(3):
            for i in range(12):
                for j in range(12):
                    total += (a[t, i, j] - b[t, i, j]) ** 2
                    count += 1
        want_mse = total / count
        peak = b.max()
        want_psnr = 10.0 * math.log10(peak * peak / want_mse)
        assert abs(mse(a, b) - want_mse) <= 1e-12
        assert abs(psnr(a, b) - want_psnr) <= 1e-12

    def test_psnr_monotone_in_noise(self):
        rng = np.random.default_rng(2)
        truth = rng.random((2, 24, 24))
        noise = rng.standard_normal(truth.shape)
        values = [psnr(truth + amp * noise, truth, peak=1.0)
                  for amp in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            mse(np.zeros((3, 3)), np.zeros((4, 4)))


def _gaussian_window(size, sigma):
    off = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(off ** 2) / (2 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_slow(x, y, data_range):
    """Windowed SSIM by explicit loops over every valid position."""
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    w = _gaussian_window(11, 1.5)
    h, wid = x.shape
    vals = []
    for i in range(h - 10):
        for j in range(wid - 10):
            px = x[i:i + 11, j:j + 11]
            py = y[i:i + 11, j:j + 11]
            mx = (w * px).sum()
            my = (w * py).sum()
            vx = (w * px * px).sum() - mx * mx
            vy = (w * py * py).sum() - my * my
            cxy = (w * px * py).sum() - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


class TestSsim:
    def test_self_similarity(self):
        x = np.random.default_rng(3).random((2, 20, 20))
        assert abs(ssim(x, x) - 1.0) <= 1e-12

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(4)
        a = rng.random((24, 24))
        b = np.clip(a + 0.1 * rng.standard_normal((24, 24)), 0, 1)
        want = _ssim_slow(a, b, b.max() - b.min())
        assert abs(ssim(a, b) - want) <= 1e-9

    def test_constant_images_luminance_only(self):
        a = np.full((16, 16), 0.5)
        b = np.full((16, 16), 0.25)
        c1 = (0.01 * 1.0) ** 2
        want = (2 * 0.5 * 0.25 + c1) / (0.5 ** 2 + 0.25 ** 2 + c1)
        assert abs(ssim(a, b, data_range=1.0) - want) <= 1e-12

    def test_anticorrelated_is_negative(self):
        # zero-mean stripes: luminance term is ~1, structure term ~ -1
        stripes = 0.5 * np.cos(np.pi * np.arange(24) / 2.0)
        a = np.tile(stripes, (24, 1))
        assert ssim(a, -a, data_range=2.0) < 0.0

    def test_symmetric_with_external_range(self):
        rng = np.random.default_rng(5)
        a = rng.random((20, 20))
        b = rng.random((20, 20))
        assert abs(ssim(a, b, data_range=1.0) - ssim(b, a, data_range=1.0)) <= 1e-12

    def test_series_averages_frames(self):
        rng = np.random.default_rng(6)
        a = rng.random((3, 16, 16))
        b = rng.random((3, 16, 16))
        L = b.max() - b.min()
        per_frame = [ssim(a[t], b[t], data_range=L) for t in range(3)]
        assert abs(ssim(a, b) - np.mean(per_frame)) <= 1e-12

    def test_image_smaller_than_window(self):
        with pytest.raises(ValidationError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)), data_range=1.0)

    def test_zero_range_reference_needs_explicit_range(self):
        with pytest.raises(ValidationError):
            ssim(np.zeros((16, 16)), np.zeros((16, 16)))


class TestSnrEstimate:
    def _rois(self, shape):
        signal = np.zeros(shape, dtype=bool)
        noise = np.zeros(shape, dtype=bool)
        signal[2:6, 2:6] = True
        noise[10:14, 10:14] = True
        return signal, noise

    def test_forty_db_example(self):
        img = np.zeros((16, 16))
        signal, noise = self._rois(img.shape)
        img[signal] = 1.0
        img[10:14, 10:14:2] = 0.01
        img[10:14, 11:14:2] = -0.01
        assert abs(snr_estimate(img, signal, noise) - 40.0) <= 1e-12

    def test_matches_pooled_statistics(self):
        rng = np.random.default_rng(7)
        img = rng.normal(1.0, 0.1, (5, 16, 16))
        signal, noise = self._rois(img.shape[1:])
        vals_s = [img[t, i, j] for t in range(5) for i in range(16)
                  for j in range(16) if signal[i, j]]
        vals_n = [img[t, i, j] for t in range(5) for i in range(16)
                  for j in range(16) if noise[i, j]]
        want = 20 * math.log10(np.mean(vals_s) / np.std(vals_n))
        assert abs(snr_estimate(img, signal, noise) - want) <= 1e-10

    def test_zero_variance_noise(self):
        img = np.ones((16, 16))
        signal, noise = self._rois(img.shape)
        assert snr_estimate(img, signal, noise) == math.inf

    def test_overlapping_rois_rejected(self):
        img = np.ones((16, 16))
        signal, _ = self._rois(img.shape)
        with pytest.raises(ValidationError):
            snr_estimate(img, signal, signal)

    def test_small_roi_rejected(self):
        img = np.ones((16, 16))
        signal = np.zeros((16, 16), dtype=bool)
        noise = np.zeros((16, 16), dtype=bool)
        signal[0:3, 0:3] = True
        noise[10:14, 10:14] = True
        with pytest.raises(ValidationError):
            snr_estimate(img, signal, noise)


class TestEdgeSharpness:
    def test_ideal_step_edge(self):
        frame = np.zeros((16, 16))
        frame[:, 8:] = 1.0
        prof = ProfileSpec(start=(8, 4), end=(8, 11), samples=8)
        out = edge_sharpness(frame, prof)
        assert out.es_mean == 1.0
        assert not out.flat_frames.any()

    def test_linear_ramp(self):
        w = 32
        frame = np.tile(np.arange(w) / (w - 1.0), (w, 1))
        prof = ProfileSpec(start=(16, 0), end=(16, w - 1), samples=16)
        out = edge_sharpness(frame, prof)
        assert abs(out.es_mean - 1.0 / 15.0) <= 1e-12

    def test_static_series_has_zero_std(self):
        frame = np.random.default_rng(8).random((20, 20))
        series = np.stack([frame] * 6)
        prof = ProfileSpec(start=(3, 2), end=(15, 17))
        out = edge_sharpness(series, prof)
        assert out.es_std_t == 0.0
        assert out.per_frame.shape == (6,)

    def test_flat_profile_flagged(self):
        frame = np.full((16, 16), 0.7)
        prof = ProfileSpec(start=(2, 2), end=(12, 12))
        out = edge_sharpness(frame, prof)
        assert out.es_mean == 0.0
        assert out.flat_frames.all()

    def test_affine_intensity_invariance(self):
        rng = np.random.default_rng(9)
        series = rng.random((4, 24, 24))
        prof = ProfileSpec(start=(4, 3), end=(20, 21))
        a = edge_sharpness(series, prof)
        b = edge_sharpness(3.2 * series + 1.7, prof)
        assert np.abs(a.per_frame - b.per_frame).max() <= 1e-12

    def test_endpoint_outside_image(self):
        with pytest.raises(ValidationError):
            edge_sharpness(np.zeros((8, 8)), ProfileSpec(start=(0, 0), end=(9, 3)))

    def test_degenerate_profile_rejected(self):
        with pytest.raises(ValidationError):
            ProfileSpec(start=(2, 2), end=(2, 2))


def _permutation_range_tail(ranks, n_shuffles, seed):
    """Null distribution of the max pairwise mean-rank gap under shuffling."""
    rng = np.random.default_rng(seed)
    n, k = ranks.shape
    ranges = np.empty(n_shuffles)
    done = 0
    while done < n_shuffles:
        block = min(20000, n_shuffles - done)
        keys = rng.random((block, n, k))
        perms = np.argsort(keys, axis=2)
        permuted = np.take_along_axis(np.broadcast_to(ranks, (block, n, k)),
                                      perms, axis=2)
        means = permuted.mean(axis=1)
        ranges[done:done + block] = means.max(axis=1) - means.min(axis=1)
        done += block
    return ranges


class TestFriedmanNemenyi:
    def test_strict_ordering_statistic(self):
        rng = np.random.default_rng(10)
        base = rng.random((10, 1))
        table = base + np.array([0.0, 1.0, 2.0])
        out = friedman_nemenyi(table)
        assert abs(out.statistic - 20.0) <= 1e-12
        assert out.p_value < 1e-3

    def test_full_ties(self):
        out = friedman_nemenyi(np.ones((6, 3)))
        assert out.statistic == 0.0
        assert out.p_value == 1.0
        assert (out.nemenyi_p == 1.0).all()

    def test_nemenyi_matches_permutation_oracle(self):
        rng = np.random.default_rng(11)
        table = rng.standard_normal((12, 3)) + np.array([0.0, 0.55, 0.9])
        out = friedman_nemenyi(table)
        from scipy.stats import rankdata
        ranks = rankdata(table, axis=1)
        null_ranges = _permutation_range_tail(ranks, 100_000, seed=12)
        mean_ranks = ranks.mean(axis=0)
        for i in range(3):
            for j in range(i + 1, 3):
                gap = abs(mean_ranks[i] - mean_ranks[j])
                # mid-p convention: the observed gap sits on a lattice atom
                # of the discrete null, so count half of that atom's mass
                over = float((null_ranges > gap + 1e-12).mean())
                atom = float((np.abs(null_ranges - gap) <= 1e-12).mean())
                p_perm = over + 0.5 * atom
                assert abs(out.nemenyi_p[i, j] - p_perm) <= 0.02, \
                    f"pair ({i},{j}): analytic {out.nemenyi_p[i, j]:.4f} " \
                    f"vs permutation {p_perm:.4f}"

    def test_relabeling_equivariance(self):
        rng = np.random.default_rng(13)
        table = rng.standard_normal((9, 4)) + np.array([0.0, 0.3, 0.6, 0.2])
        perm = np.array([2, 0, 3, 1])
        a = friedman_nemenyi(table)
        b = friedman_nemenyi(table[:, perm])
        assert abs(a.statistic - b.statistic) <= 1e-12
        for i in range(4):
            for j in range(4):
                assert abs(b.nemenyi_p[i, j] - a.nemenyi_p[perm[i], perm[j]]) <= 1e-12

    def test_rank_table_input_equivalent(self):
        rng = np.random.default_rng(14)
        table = rng.standard_normal((8, 3))
        from scipy.stats import rankdata
        a = friedman_nemenyi(table)
        b = friedman_nemenyi(rankdata(table, axis=1))
        assert abs(a.statistic - b.statistic) <= 1e-12

    def test_degenerate_tables_rejected(self):
        with pytest.raises(ValidationError):
            friedman_nemenyi(np.zeros((0, 3)))
        with pytest.raises(ValidationError):
            friedman_nemenyi(np.zeros((1, 3)))
        with pytest.raises(ValidationError):
            friedman_nemenyi(np.zeros((5, 2)))


class TestMetricsCsv:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "metrics.csv"
        rows = [
            QualityReport("vid000", "cs", 1.5e-4, 31.25, 0.91, 24.0, 0.41, 0.02),
            QualityReport("vid001", "zf", 2.5e-3, math.inf, 0.62, 11.5, 0.3, 0.0),
        ]
        write_metrics_csv(path, rows)
        back = read_metrics_csv(path)
        assert back == rows
        with open(path) as fh:
            assert fh.readline().strip() == ",".join(METRICS_COLUMNS)

    def test_append_writes_single_header(self, tmp_path):
        path = tmp_path / "metrics.csv"
        row = QualityReport("a", "m", 0.0, 1.0, 1.0, 1.0, 0.5, 0.0)
        write_metrics_csv(path, [row], append=True)
        write_metrics_csv(path, [row], append=True)
        back = read_metrics_csv(path)
        assert len(back) == 2
        with open(path) as fh:
            lines = fh.read().strip().splitlines()
        assert len(lines) == 3
