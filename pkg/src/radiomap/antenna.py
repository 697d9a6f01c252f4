"""Antenna radiation patterns with bilinear gain lookup.

Pattern file format: text, UTF-8, LF line endings, header
``elev_deg,azim_deg,gain_dbi``, one row per grid node. Elevation runs
over [-90, 90] (0 = horizon, positive up), azimuth over [0, 360).
Azimuth-omnidirectional patterns may carry a single azimuth column. The
single row ``*,*,0`` is shorthand for an isotropic radiator.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class AntennaPattern:
    """Gain table over an (elevation, azimuth) grid, in dBi."""

    elevation_grid: np.ndarray
    azimuth_grid: np.ndarray
    gain_dbi: np.ndarray

    def __post_init__(self):
        el = np.asarray(self.elevation_grid, dtype=float)
        az = np.asarray(self.azimuth_grid, dtype=float)
        g = np.asarray(self.gain_dbi, dtype=float)
        if el.ndim != 1 or az.ndim != 1 or g.shape != (el.size, az.size):
            raise DataError("gain matrix shape must be (n_elevation, n_azimuth)")
        if el.size < 1 or np.any(np.diff(el) <= 0):
            raise DataError("elevation grid must be strictly increasing")
        if np.any(el < -90.0) or np.any(el > 90.0):
            raise DataError("elevation grid outside [-90, 90]")
        if az.size < 1 or np.any(np.diff(az) <= 0):
            raise DataError("azimuth grid must be strictly increasing")
        if np.any(az < 0.0) or np.any(az >= 360.0):
            raise DataError("azimuth grid outside [0, 360)")
        if not np.all(np.isfinite(g)):
            raise DataError("gains must be finite")
        object.__setattr__(self, "elevation_grid", el)
        object.__setattr__(self, "azimuth_grid", az)
        object.__setattr__(self, "gain_dbi", g)

    def gain_dbi_at(self, elev_deg, azim_deg):
        """Bilinear dBi lookup; azimuth wraps, elevation clamps."""
        el = np.clip(np.asarray(elev_deg, dtype=float), self.elevation_grid[0], self.elevation_grid[-1])
        az = np.mod(np.asarray(azim_deg, dtype=float), 360.0)

        gi = self.elevation_grid
        i1 = np.clip(np.searchsorted(gi, el, side="right"), 1, gi.size - 1) if gi.size > 1 else np.zeros_like(el, dtype=int)
        if gi.size == 1:
            row_lo = row_hi = np.zeros_like(el, dtype=int)
            te = np.zeros_like(el)
        else:
            row_lo, row_hi = i1 - 1, i1
            te = (el - gi[row_lo]) / (gi[row_hi] - gi[row_lo])

        ga = self.azimuth_grid
        if ga.size == 1:
            col_lo = col_hi = np.zeros_like(az, dtype=int)
            ta = np.zeros_like(az)
        else:
            # wraparound segment between the last node and the first + 360
            j1 = np.searchsorted(ga, az, side="right")
            col_lo = (j1 - 1) % ga.size
            col_hi = j1 % ga.size
            lo_az = ga[col_lo]
            span = (ga[col_hi] - lo_az) % 360.0
            span = np.where(span == 0.0, 360.0, span)
            ta = ((az - lo_az) % 360.0) / span

        g = self.gain_dbi
        g00 = g[row_lo, col_lo]
        g01 = g[row_lo, col_hi]
        g10 = g[row_hi, col_lo]
        g11 = g[row_hi, col_hi]
        out = (1 - te) * ((1 - ta) * g00 + ta * g01) + te * ((1 - ta) * g10 + ta * g11)
        return out if out.ndim else float(out)

    def gain_linear_at(self, elev_deg, azim_deg):
        return 10.0 ** (self.gain_dbi_at(elev_deg, azim_deg) / 10.0)


def isotropic_pattern(gain_dbi: float = 0.0) -> AntennaPattern:
    return AntennaPattern(
        elevation_grid=np.array([-90.0, 90.0]),
        azimuth_grid=np.array([0.0]),
        gain_dbi=np.full((2, 1), float(gain_dbi)),
    )


def load_antenna_pattern(path) -> AntennaPattern:
    """Parse a pattern file; raises DataError with the offending line."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln.strip() for ln in text.split("\n")]
    rows = [(i + 1, ln) for i, ln in enumerate(lines) if ln and not ln.startswith("#")]
    if not rows or rows[0][1].replace(" ", "") != "elev_deg,azim_deg,gain_dbi":
        raise DataError(f"{path}: missing 'elev_deg,azim_deg,gain_dbi' header")
    rows = rows[1:]
    if len(rows) == 1 and [f.strip() for f in rows[0][1].split(",")] == ["*", "*", "0"]:
        return isotropic_pattern(0.0)
    if not rows:
        raise DataError(f"{path}: no grid rows")

    recs = []
    for lineno, ln in rows:
        parts = [f.strip() for f in ln.split(",")]
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 comma-separated fields")
        try:
            recs.append((float(parts[0]), float(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc

    elevs = np.array(sorted({r[0] for r in recs}))
    azims = np.array(sorted({r[1] for r in recs}))
    gain = np.full((elevs.size, azims.size), np.nan)
    ei = {v: i for i, v in enumerate(elevs)}
    aj = {v: j for j, v in enumerate(azims)}
    for el, az, g in recs:
        gain[ei[el], aj[az]] = g
    if np.any(np.isnan(gain)):
        raise DataError(f"{path}: grid is not complete over elevation x azimuth")
    return AntennaPattern(elevation_grid=elevs, azimuth_grid=azims, gain_dbi=gain)


def save_antenna_pattern(pattern: AntennaPattern, path) -> None:
    lines = ["elev_deg,azim_deg,gain_dbi"]
    for i, el in enumerate(pattern.elevation_grid):
        for j, az in enumerate(pattern.azimuth_grid):
            lines.append(f"{el:.6g},{az:.6g},{pattern.gain_dbi[i, j]:.6g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
