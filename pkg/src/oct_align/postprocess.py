"""Surface ordering fix, flattening to the estimated Bruch's membrane, cropping."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter1d, median_filter

from .core import OctVolume, SurfaceSet
from .errors import ValidationError
from .resample import resample_columns


def fix_surface_order(surfaces: SurfaceSet) -> SurfaceSet:
    """Swap out-of-order neighboring surfaces until every A-scan is ordered.

    Repeated adjacent-pair swap passes (bubble passes) over the surface
    axis; the multiset of values in each A-scan is preserved, and applying
    the fix twice changes nothing.
    """
    pos = surfaces.positions.copy()
    n_s = pos.shape[0]
    for _ in range(max(n_s - 1, 0)):
        swapped = False
        for l in range(n_s - 1):
            bad = pos[l] > pos[l + 1]
            if bad.any():
                upper = np.where(bad, pos[l + 1], pos[l])
                lower = np.where(bad, pos[l], pos[l + 1])
                pos[l], pos[l + 1] = upper, lower
                swapped = True
        if not swapped:
            break
    return surfaces.with_positions(pos)


def estimate_bm_rows(volume: OctVolume, sigma: float = 2.0, median_size: int = 5) -> np.ndarray:
    """Estimate the Bruch's-membrane row per A-scan (1-based, shape (N_B, N_A)).

    Each A-scan is Gaussian-smoothed along rows; the BM estimate is the row
    of the most negative axial gradient in the lower half (the deepest
    bright-to-dark transition), median-filtered over (b, a) to knock out
    vessel-shadow outliers.
    """
    data = volume.data.astype(np.float64)
    n_r = volume.n_r
    smoothed = gaussian_filter1d(data, sigma=sigma, axis=2, mode="nearest")
    grad = np.gradient(smoothed, axis=2)
    half = n_r // 2
    rows0 = half + np.argmin(grad[:, :, half:], axis=2)
    rows = median_filter(rows0.astype(np.float64), size=median_size, mode="nearest")
    return rows + 1.0


def flatten_to_bm(volume: OctVolume, sigma: float = 2.0, median_size: int = 5,
                  target_row: float | None = None):
    """Shift every A-scan so the estimated BM lands on a fixed target row.

    Returns the flattened volume and the per-(b, a) shift map that was
    applied; ``unflatten`` with that map inverts the operation up to
    interpolation error.  The default target is 0.75 * R.
    """
    n_r = volume.n_r
    target = float(target_row) if target_row is not None else round(0.75 * n_r)
    if not 1.0 <= target <= n_r:
        raise ValidationError(f"target row {target} outside [1, {n_r}]")
    bm = estimate_bm_rows(volume, sigma=sigma, median_size=median_size)
    shifts = bm - target
    flat = resample_columns(volume.data, shifts)
    return volume.with_data(flat), shifts


def unflatten(volume: OctVolume, shift_map: np.ndarray) -> OctVolume:
    """Invert flatten_to_bm given its returned shift map."""
    return volume.with_data(resample_columns(volume.data, -np.asarray(shift_map)))


def crop_rows(volume: OctVolume, surfaces, row_range: tuple[int, int]):
    """Keep rows lo..hi (1-based, inclusive) and re-base surface positions.

    Every surface must lie inside the kept range; offenders are listed.
    """
    lo, hi = (int(x) for x in row_range)
    n_r = volume.n_r
    if not 1 <= lo <= hi <= n_r:
        raise ValidationError(f"crop range {lo}:{hi} outside [1, {n_r}]")
    if surfaces is not None and surfaces.n_surfaces:
        pos = surfaces.positions
        outside = (pos < lo) | (pos > hi)
        if outside.any():
            offenders = np.argwhere(outside)[:5]
            where = ", ".join(
                f"(surface {l + 1}, b={b + 1}, a={a + 1}, r={pos[l, b, a]:.2f})"
                for l, b, a in offenders
            )
            raise ValidationError(
                f"{int(outside.sum())} surface positions outside crop {lo}:{hi}: {where}"
            )
    cropped = volume.with_data(volume.data[:, :, lo - 1:hi])
    if surfaces is None:
        return cropped, None
    return cropped, surfaces.with_positions(surfaces.positions - (lo - 1))


def uncrop_rows(volume: OctVolume, surfaces, row_range: tuple[int, int],
                n_rows: int, fill: float = 0.0):
    """Undo crop_rows: pad the removed rows with ``fill`` and re-base surfaces."""
    lo, hi = (int(x) for x in row_range)
    if hi - lo + 1 != volume.n_r or not 1 <= lo <= hi <= n_rows:
        raise ValidationError(
            f"range {lo}:{hi} inconsistent with cropped R={volume.n_r} and full R={n_rows}"
        )
    data = np.full((volume.n_b, volume.n_a, n_rows), fill, dtype=np.float64)
    data[:, :, lo - 1:hi] = volume.data
    restored = volume.with_data(data)
    if surfaces is None:
        return restored, None
    return restored, surfaces.with_positions(surfaces.positions + (lo - 1))
