"""Spatial hash grid over latitude/longitude for radius-bounded neighbor search.

Cells are sized so that any two points within ``reach_m`` meters of each other
land in nearby cells; candidate pairs are then verified with exact haversine
distances by the caller. The column count wraps around the antimeridian, and
the per-axis scan reach is derived from exact spherical bounds, so candidate
generation never misses a qualifying pair regardless of where the points sit.
"""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Iterator

import numpy as np

from .geodesy import EARTH_RADIUS_M, METERS_PER_DEGREE, haversine_m_vectorized


def _lon_span_deg(reach_m: float, max_abs_lat_deg: float) -> float:
    """Max longitude difference (degrees, wrapped) between points within reach_m.

    Exact bound from the haversine identity: for a pair at most reach_m apart
    with both latitudes at most max_abs_lat_deg in magnitude,
    |sin(dlon/2)| <= sin(reach/2R) / cos(max_abs_lat).
    """
    c = math.cos(math.radians(min(max_abs_lat_deg, 90.0)))
    s = math.sin(min(reach_m / (2.0 * EARTH_RADIUS_M), math.pi / 2.0))
    if c <= 0.0 or s / c >= 1.0:
        return 360.0
    return 2.0 * math.degrees(math.asin(s / c))


class LatLonGrid:
    """Hash grid keyed by (lat cell, lon cell) with wrap-aware neighbor scans."""

    def __init__(self, lats: np.ndarray, lons: np.ndarray, cell_m: float):
        if cell_m <= 0.0:
            raise ValueError(f"cell size must be positive, got {cell_m}")
        self.lats = np.asarray(lats, dtype=np.float64)
        self.lons = np.asarray(lons, dtype=np.float64)
        self.cell_m = float(cell_m)
        self.cell_lat_deg = self.cell_m / METERS_PER_DEGREE
        self.max_abs_lat = float(np.max(np.abs(self.lats))) if self.lats.size else 0.0
        self.cell_lon_deg = min(_lon_span_deg(self.cell_m, self.max_abs_lat), 360.0)
        self.n_cols = max(1, math.ceil(360.0 / self.cell_lon_deg))
        self._cells: dict[tuple[int, int], list[int]] = defaultdict(list)
        rows = np.floor((self.lats + 90.0) / self.cell_lat_deg).astype(np.int64)
        cols = np.floor((self.lons + 180.0) / self.cell_lon_deg).astype(np.int64) % self.n_cols
        for idx, (r, c) in enumerate(zip(rows.tolist(), cols.tolist())):
            self._cells[(r, c)].append(idx)
        self._members = {key: np.asarray(v, dtype=np.int64) for key, v in self._cells.items()}

    def _reach_cells(self, reach_m: float, max_abs_lat_deg: float) -> tuple[int, int]:
        # +1 absorbs cell-boundary straddling; wrap caps the column reach.
        d_lat = int((reach_m / METERS_PER_DEGREE) / self.cell_lat_deg) + 1
        d_lon = int(_lon_span_deg(reach_m, max_abs_lat_deg) / self.cell_lon_deg) + 1
        d_lon = min(d_lon, self.n_cols // 2 + 1)
        return d_lat, d_lon

    def pair_chunks(self, reach_m: float) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (i, j) index-array chunks covering every pair within reach_m, i < j.

        Pairs may be farther than reach_m (candidates only, never missed);
        no pair is emitted twice.
        """
        d_lat, d_lon = self._reach_cells(reach_m, self.max_abs_lat)
        seen: set[frozenset] = set()
        for (r, c), ii in self._members.items():
            if ii.size > 1:
                a, b = np.triu_indices(ii.size, k=1)
                yield ii[a], ii[b]
            for dr in range(0, d_lat + 1):
                for dc in range(-d_lon, d_lon + 1):
                    if dr == 0 and dc <= 0:
                        continue
                    other = (r + dr, (c + dc) % self.n_cols)
                    jj = self._members.get(other)
                    if jj is None or other == (r, c):
                        continue
                    key = frozenset(((r, c), other))
                    if key in seen:
                        continue
                    seen.add(key)
                    a, b = np.meshgrid(ii, jj, indexing="ij")
                    a, b = a.ravel(), b.ravel()
                    lo, hi = np.minimum(a, b), np.maximum(a, b)
                    yield lo, hi

    def min_distance_within_reach_m(self, qlats, qlons) -> np.ndarray:
        """Per query point, min haversine distance to any indexed point within
        the grid's cell reach; +inf when no indexed point is that close.

        Exact for threshold decisions at radius <= cell_m.
        """
        qlats = np.asarray(qlats, dtype=np.float64)
        qlons = np.asarray(qlons, dtype=np.float64)
        out = np.full(qlats.shape[0], np.inf)
        if not self._members:
            return out
        max_abs = max(self.max_abs_lat, float(np.max(np.abs(qlats))) if qlats.size else 0.0)
        d_lat, d_lon = self._reach_cells(self.cell_m, max_abs)
        rows = np.floor((qlats + 90.0) / self.cell_lat_deg).astype(np.int64)
        cols = np.floor((qlons + 180.0) / self.cell_lon_deg).astype(np.int64) % self.n_cols
        for qi in range(qlats.shape[0]):
            r, c = int(rows[qi]), int(cols[qi])
            best = np.inf
            for dr in range(-d_lat, d_lat + 1):
                for dc in range(-d_lon, d_lon + 1):
                    jj = self._members.get((r + dr, (c + dc) % self.n_cols))
                    if jj is None:
                        continue
                    d = haversine_m_vectorized(
                        qlats[qi], qlons[qi], self.lats[jj], self.lons[jj])
                    m = float(np.min(d))
                    if m < best:
                        best = m
            out[qi] = best
        return out
