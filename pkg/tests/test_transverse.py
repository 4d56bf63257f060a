import numpy as np
import pytest

from oct_align.core import EmptyBandWarning, OctVolume, SurfaceSet
from oct_align.errors import ConfigError
from oct_align.metrics import motion_error
from oct_align.synth import MotionSpec, PhantomSpec, apply_motion, generate_phantom
from oct_align.transverse import (
    align_transverse,
    apply_transverse_correction,
    best_shift,
    mean_projection,
    projection_mse,
)


class TestMeanProjection:
    def test_constant_intensity_inside_retina(self):
        data = np.full((2, 4, 12), 0.1)
        band = np.full((2, 4), 0.7)
        rows = np.arange(1, 13)
        inside = (rows >= 4) & (rows <= 9)
        data[:, :, inside] = band[..., None]
        vol = OctVolume(data)
        surf = SurfaceSet(np.stack([np.full((2, 4), 4.0), np.full((2, 4), 9.0)]))
        proj = mean_projection(vol, surf)
        assert np.allclose(proj, 0.7, atol=1e-7)

    def test_ramp_band_mean(self):
        # band rows 5..8 of I(r) = r average to 6.5
        data = np.tile(np.arange(1.0, 13.0), (2, 3, 1))
        vol = OctVolume(data)
        surf = SurfaceSet(np.stack([np.full((2, 3), 5.0), np.full((2, 3), 8.0)]))
        assert np.allclose(mean_projection(vol, surf), 6.5, atol=1e-6)

    def test_matches_brute_force_means(self, rng):
        data = rng.uniform(0, 1, size=(3, 5, 16))
        lo = rng.uniform(2, 6, size=(3, 5))
        hi = lo + rng.uniform(1, 6, size=(3, 5))
        vol = OctVolume(data)
        surf = SurfaceSet(np.stack([lo, hi]))
        proj = mean_projection(vol, surf)
        for b in range(3):
            for a in range(5):
                rows = [
                    r for r in range(1, 17)
                    if np.ceil(lo[b, a]) <= r <= np.floor(hi[b, a])
                ]
                expect = np.mean([data[b, a, r - 1] for r in rows])
                assert np.isclose(proj[b, a], expect, atol=1e-7)

    def test_empty_band_flagged_and_zero(self):
        data = np.full((2, 2, 8), 0.5)
        vol = OctVolume(data)
        # band (3.6, 3.4) contains no integer rows
        surf = SurfaceSet(np.stack([np.full((2, 2), 3.6), np.full((2, 2), 3.9)]))
        with pytest.warns(EmptyBandWarning):
            proj = mean_projection(vol, surf)
        assert (proj == 0).all()

    def test_without_surfaces_whole_column(self, rng):
        data = rng.uniform(size=(2, 3, 8))
        vol = OctVolume(data)
        assert np.allclose(mean_projection(vol, None), data.mean(axis=2))


class TestBestShift:
    def test_single_bright_column_recovered_exactly(self):
        base = np.full(40, 0.2)
        p = base.copy()
        p[12] = 1.0
        q = base.copy()
        q[16] = 1.0  # content moved +4 columns
        assert best_shift(p, q, radius=10) == -4

    def test_returned_shift_minimizes_mse_over_the_window(self, rng):
        for _ in range(20):
            p = rng.uniform(size=30)
            q = rng.uniform(size=30)
            t = best_shift(p, q, radius=8)
            best = projection_mse(p, q, t)
            for s in range(-8, 9):
                assert best <= projection_mse(p, q, s) + 1e-15

    def test_tie_prefers_smaller_magnitude(self):
        p = np.zeros(10)
        q = np.zeros(10)
        assert best_shift(p, q, radius=5) == 0


class TestAlignTransverse:
    def test_identical_projections_give_zero(self):
        vol, surf = generate_phantom(PhantomSpec(seed=0, noise_sigma=0.0,
                                                 speckle_sigma=0.0))
        d = align_transverse(vol, surf)
        assert (d.transverse == 0).all()

    def test_grouped_corruption_recovered(self):
        vol, surf = generate_phantom(PhantomSpec(seed=1))
        tr = np.zeros(vol.n_b, dtype=np.int64)
        tr[8:15] = 9
        tr[15:] = -5
        motion = MotionSpec(np.zeros(vol.n_b), tr, (0, 8, 15))
        cvol, csurf = apply_motion(vol, surf, motion)
        d = align_transverse(cvol, csurf, radius=15)
        assert motion_error(d, motion)[1] == 0.0

    def test_radius_must_be_below_na(self):
        vol, surf = generate_phantom(PhantomSpec(seed=0))
        with pytest.raises(ConfigError):
            align_transverse(vol, surf, radius=vol.n_a)

    def test_retina_mask_helps_with_background_noise(self):
        # noise added outside the retinal band only: the masked projection
        # is untouched while the unmasked one degrades
        wins = 0
        for seed in range(20):
            spec = PhantomSpec(seed=seed, speckle_sigma=0.0, noise_sigma=0.0,
                               vessel_count=4, vessel_drift_px=1.5)
            vol, surf = generate_phantom(spec)
            rng = np.random.default_rng(500 + seed)
            tr = np.zeros(vol.n_b, dtype=np.int64)
            cuts = np.sort(rng.choice(np.arange(1, vol.n_b), 2, replace=False))
            tr[cuts[0]:cuts[1]] = rng.integers(-12, 13)
            tr[cuts[1]:] = rng.integers(-12, 13)
            motion = MotionSpec(np.zeros(vol.n_b), tr, (0, int(cuts[0]), int(cuts[1])))
            cvol, csurf = apply_motion(vol, surf, motion)

            data = cvol.data.astype(np.float64)
            rows = np.arange(1, vol.n_r + 1)
            outside = (
                (rows[None, None, :] < csurf.positions[0][..., None])
                | (rows[None, None, :] > csurf.positions[-1][..., None])
            )
            noisy = data + outside * rng.normal(0, 0.3, data.shape)
            noisy_vol = cvol.with_data(np.clip(noisy, 0, 1))

            e_masked = motion_error(
                align_transverse(noisy_vol, csurf, radius=24), motion
            )[1]
            e_full = motion_error(
                align_transverse(noisy_vol, csurf, radius=24, layer_mask=False), motion
            )[1]
            wins += e_masked <= e_full
        assert wins >= 15

    def test_correction_round_trip_up_to_gauge(self):
        vol, surf = generate_phantom(PhantomSpec(seed=2))
        tr = np.zeros(vol.n_b, dtype=np.int64)
        tr[10:] = 6
        motion = MotionSpec(np.zeros(vol.n_b), tr, (0, 10))
        cvol, csurf = apply_motion(vol, surf, motion)
        d = align_transverse(cvol, csurf, radius=15)
        v2, s2 = apply_transverse_correction(cvol, csurf, d)
        # the gauge constant is unknowable; the residual must be uniform
        resid = tr - d.transverse
        assert np.ptp(resid) == 0
        c = int(resid[0])
        expected, _ = apply_motion(
            vol, surf, MotionSpec(np.zeros(vol.n_b), np.full(vol.n_b, c), (0,))
        )
        margin = 6 + abs(c)
        inner = slice(margin, vol.n_a - margin)
        assert np.allclose(v2.data[:, inner, :], expected.data[:, inner, :], atol=1e-6)
