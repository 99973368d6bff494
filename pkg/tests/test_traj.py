"""Sampling-scheme contracts: line schedules, spoke angles, spiral geometry,
density weights, and the binary trajectory/mask files."""

import numpy as np
import pytest

from kforge.errors import FormatError, ValidationError
from kforge.nufft import NufftPlan
from kforge.traj import (
    CartesianConfig,
    SpiralConfig,
    cartesian_mask,
    center_line_block,
    density_compensation,
    mask_to_grid_trajectory,
    radial_trajectory,
    read_mask,
    read_trajectory,
    spiral_trajectory,
    write_mask,
    write_trajectory,
)


class TestCartesianMask:
    def test_line_counts_and_center_block(self):
        cm = cartesian_mask(30, 240, rng=np.random.default_rng(3))
        assert cm.mask.shape == (30, 240)
        assert (cm.mask.sum(axis=1) == 17).all()
        assert cm.mask[:, center_line_block(240, 8)].all()
        assert cm.n_center == 8 and cm.n_random == 9

    def test_center_block_straddles_dc(self):
        assert center_line_block(240, 8).tolist() == list(range(116, 124))
        assert center_line_block(224, 8).tolist() == list(range(108, 116))

    def test_random_lines_stay_in_band(self):
        cm = cartesian_mask(40, 240, rng=np.random.default_rng(11))
        band_top = int(np.floor(0.6 * 240))
        random_part = cm.mask.copy()
        random_part[:, center_line_block(240, 8)] = False
        assert not random_part[:, band_top:].any()

    def test_no_repeat_within_window(self):
        cm = cartesian_mask(60, 240, rng=np.random.default_rng(7))
        center = set(center_line_block(240, 8).tolist())
        rand_sets = [set(np.flatnonzero(f).tolist()) - center for f in cm.mask]
        for t in range(60):
            for u in range(t + 1, min(t + 15, 60)):
                assert not (rand_sets[t] & rand_sets[u]), (t, u)

    def test_band_coverage_after_window(self):
        cm = cartesian_mask(15, 240, rng=np.random.default_rng(5))
        center = center_line_block(240, 8)
        band = np.setdiff1d(np.arange(int(np.floor(0.6 * 240))), center)
        covered = cm.mask[:, band].any(axis=0).sum()
        assert covered / len(band) >= 0.95

    def test_infeasible_height_reports_minimum(self):
        with pytest.raises(ValidationError) as exc:
            cartesian_mask(20, 128, rng=np.random.default_rng(0))
        assert "H >= 239" in str(exc.value)

    def test_small_height_feasible_with_short_window(self):
        cfg = CartesianConfig(norepeat_window=3)
        cm = cartesian_mask(24, 64, cfg, rng=np.random.default_rng(1))
        assert (cm.mask.sum(axis=1) == 17).all()

    def test_deterministic_given_rng_seed(self):
        a = cartesian_mask(20, 240, rng=np.random.default_rng(42))
        b = cartesian_mask(20, 240, rng=np.random.default_rng(42))
        assert np.array_equal(a.mask, b.mask)


class TestRadial:
    def test_angle_schedule(self):
        tr = radial_trajectory(3, spokes=13, samples=64)
        # spoke j of frame t sits at (t*13 + j) * 23.8 degrees, mod 180
        for t, j, expect in [(0, 0, 0.0), (0, 1, 23.8), (1, 0, 129.4), (2, 3, 150.2)]:
            spoke = tr.coords[t, j * 64:(j + 1) * 64]
            outer = spoke[0]  # most negative radius
            ang = np.rad2deg(np.arctan2(outer[0], outer[1])) % 180.0
            assert abs(ang - expect % 180.0) < 1e-9

    def test_spokes_pass_through_dc(self):
        tr = radial_trajectory(2, spokes=5, samples=32)
        per_spoke = tr.coords.reshape(2, 5, 32, 2)
        assert np.abs(per_spoke[:, :, 16, :]).max() == 0.0

    def test_radius_span(self):
        tr = radial_trajectory(1, spokes=1, samples=128)
        r = np.linalg.norm(tr.coords[0], axis=-1)
        assert abs(r.max() - 0.5) <= 1.0 / 128
        assert tr.coords.min() >= -0.5 and tr.coords.max() < 0.5

    def test_ramp_dcf(self):
        tr = radial_trajectory(1, spokes=2, samples=8)
        dcf = tr.dcf.reshape(2, 8)
        radii = np.abs((np.arange(8) - 4) / 8.0)
        expect = radii.copy()
        expect[4] = 1.0 / 8
        expect = np.tile(expect, 2)
        expect /= expect.sum()
        assert np.allclose(tr.dcf[0], expect, atol=1e-12)
        assert dcf[0, 4] == dcf[0, 3]  # DC weight equals innermost nonzero

    def test_dcf_unit_sum(self):
        tr = radial_trajectory(4, spokes=13, samples=96)
        assert np.allclose(tr.dcf.sum(axis=1), 1.0, atol=1e-12)


@pytest.fixture(scope="module")
def traj():
    return spiral_trajectory(14, SpiralConfig(samples_per_arm=96, dcf_grid=None))


class TestSpiral:
    def test_shape_and_bounds(self, traj):
        assert traj.coords.shape == (14, 15 * 96, 2)
        assert traj.coords.min() >= -0.5 and traj.coords.max() < 0.5

    def test_max_radius(self, traj):
        r = np.linalg.norm(traj.coords[0], axis=-1)
        assert abs(r.max() - 0.5) <= 1e-9

    def test_fifteen_fold_symmetry_exact(self, traj):
        pts = traj.coords[0].reshape(15, 96, 2)
        for j in range(1, 15):
            a = 2.0 * np.pi * j / 15
            c, s = np.cos(a), np.sin(a)
            ky, kx = pts[0, :, 0], pts[0, :, 1]
            rot = np.stack([s * kx + c * ky, c * kx - s * ky], axis=-1)
            assert np.array_equal(rot, pts[j])

    def test_twelve_frame_periodicity_exact(self, traj):
        assert np.array_equal(traj.coords[0], traj.coords[12])
        assert np.array_equal(traj.coords[1], traj.coords[13])
        assert not np.allclose(traj.coords[0], traj.coords[1])

    def test_frame_shift_is_one_twelfth_turn(self, traj):
        a = 2.0 * np.pi / 12
        c, s = np.cos(a), np.sin(a)
        ky, kx = traj.coords[0, :, 0], traj.coords[0, :, 1]
        rot = np.stack([s * kx + c * ky, c * kx - s * ky], axis=-1)
        assert np.abs(rot - traj.coords[1]).max() < 1e-12

    def test_variable_density(self, traj):
        # sample spacing near center is much tighter than near the edge
        arm = traj.coords[0, :96]
        r = np.linalg.norm(arm, axis=-1)
        step = np.linalg.norm(np.diff(arm, axis=0), axis=-1)
        assert step[r[:-1] < 0.05].mean() < step[r[:-1] > 0.26].mean()

    def test_bad_radius_order_rejected(self):
        with pytest.raises(ValidationError):
            spiral_trajectory(1, SpiralConfig(r_inner=0.6, r_outer=0.5))


class TestDensityCompensation:
    def test_radial_delta_psf_peak(self):
        tr = radial_trajectory(1, spokes=48, samples=64)
        tr = density_compensation(tr, 32, method="ramp")
        plan = NufftPlan((32, 32), tr.coords[0])
        delta = np.zeros((32, 32), dtype=np.complex128)
        delta[16, 16] = 1.0
        psf = plan.adjoint(plan.forward(delta), dcf=tr.dcf[0])
        assert abs(psf[16, 16] - 1.0) <= 0.05

    def test_pipe_menon_delta_psf(self):
        tr = spiral_trajectory(1, SpiralConfig(samples_per_arm=160, dcf_grid=32))
        plan = NufftPlan((32, 32), tr.coords[0])
        delta = np.zeros((32, 32), dtype=np.complex128)
        delta[16, 16] = 1.0
        psf = plan.adjoint(plan.forward(delta), dcf=tr.dcf[0])
        assert abs(psf[16, 16] - 1.0) <= 0.05
        # a single spiral frame is heavily undersampled at the edge by design,
        # so sidelobes exist; they must still sit well below the peak
        side = np.abs(psf.copy())
        side[15:18, 15:18] = 0.0
        assert side.max() <= 0.35

    def test_grid_points_get_uniform_weights(self):
        from kforge.traj import CartesianMask
        full = CartesianMask(np.ones((2, 32), dtype=bool), 8, 24)
        tr = mask_to_grid_trajectory(full, 32)
        tr = density_compensation(tr, 32, method="pipe_menon")
        for t in range(2):
            w = tr.dcf[t]
            assert w.std() / w.mean() < 1e-6

    def test_unit_sum(self):
        tr = spiral_trajectory(2, SpiralConfig(samples_per_arm=128, dcf_grid=32))
        assert np.allclose(tr.dcf.sum(axis=1), 1.0, atol=1e-9)

    def test_degenerate_points_rejected(self):
        from kforge.traj import Trajectory
        coords = np.zeros((1, 10, 2))
        tr = Trajectory(coords, np.full((1, 10), 0.1))
        with pytest.raises(ValidationError):
            density_compensation(tr, 16)


class TestSerialization:
    def test_trajectory_roundtrip_byte_identical(self, tmp_path):
        tr = radial_trajectory(3, spokes=5, samples=64)
        p1, p2 = tmp_path / "a.ktrj", tmp_path / "b.ktrj"
        write_trajectory(tr, p1)
        back = read_trajectory(p1)
        write_trajectory(back, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert np.allclose(back.coords, tr.coords, atol=1e-7)
        assert np.allclose(back.dcf, tr.dcf, atol=1e-7)

    def test_trajectory_bad_magic(self, tmp_path):
        p = tmp_path / "x.ktrj"
        p.write_bytes(b"JUNK" + b"\x00" * 32)
        with pytest.raises(FormatError):
            read_trajectory(p)

    def test_trajectory_truncated(self, tmp_path):
        tr = radial_trajectory(2, spokes=3, samples=16)
        p = tmp_path / "t.ktrj"
        write_trajectory(tr, p)
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(FormatError):
            read_trajectory(p)

    def test_mask_roundtrip_byte_identical(self, tmp_path):
        cm = cartesian_mask(16, 240, rng=np.random.default_rng(2))
        p1, p2 = tmp_path / "a.kmsk", tmp_path / "b.kmsk"
        write_mask(cm, p1)
        back = read_mask(p1)
        write_mask(back, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(back.mask, cm.mask)
        assert back.n_center == cm.n_center and back.n_random == cm.n_random

    def test_mask_bad_magic(self, tmp_path):
        p = tmp_path / "x.kmsk"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError):
            read_mask(p)
