"""Exact cosine nearest-neighbor search and pose inference.

Search is brute-force (blocked dense dot products) rather than approximate:
the support sets this pipeline targets stay tractable, and exactness keeps
evaluation deterministic. Ties are broken toward the lower support index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import ImageRecord
from .errors import InputError

logger = logging.getLogger(__name__)

# Memory cap for one block of the query x support score matrix.
_SCORE_BLOCK_BYTES = 256 << 20


@dataclass
class Match:
    """Top-k neighbors of one query: (support_index, cosine) descending."""

    query_index: int
    neighbors: list[tuple[int, float]]


@dataclass(frozen=True)
class PoseEstimate:
    query_index: int
    lat: float
    lon: float


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, int]:
    out = x.astype(np.float64)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    zero = norms[:, 0] == 0.0
    n_zero = int(np.count_nonzero(zero))
    norms[zero] = 1.0
    out /= norms
    return out, n_zero


def cosine_knn(queries: np.ndarray, support: np.ndarray, k: int) -> list[Match]:
    """Exact top-k by cosine similarity for every query row.

    Zero rows (on either side) score 0 against everything and are counted in
    a log warning. Equal scores rank the smaller support index first.
    """
    q = np.asarray(queries)
    s = np.asarray(support)
    if q.ndim != 2 or s.ndim != 2:
        raise InputError("queries and support must be 2-D arrays")
    if q.shape[1] != s.shape[1]:
        raise InputError(f"dim mismatch: queries {q.shape[1]} vs support {s.shape[1]}")
    if not (1 <= k <= s.shape[0]):
        raise InputError(f"k={k} must be in [1, {s.shape[0]}]")
    q_hat, q_zero = _unit_rows(q)
    s_hat, s_zero = _unit_rows(s)
    if q_zero:
        logger.warning("cosine_knn: %d zero query rows score 0 everywhere", q_zero)
    if s_zero:
        logger.warning("cosine_knn: %d zero support rows score 0 everywhere", s_zero)
    matches: list[Match] = []
    block = max(1, int(_SCORE_BLOCK_BYTES // (8 * s.shape[0])))
    for start in range(0, q_hat.shape[0], block):
        scores = q_hat[start:start + block] @ s_hat.T
        # Stable sort on the negated scores: ties keep ascending support index.
        order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
        for row, picks in enumerate(order):
            qi = start + row
            matches.append(Match(
                query_index=qi,
                neighbors=[(int(p), float(scores[row, p])) for p in picks]))
    return matches


def infer_pose(match: Match, support_records: list[ImageRecord],
               strategy: str = "top1") -> PoseEstimate:
    """Turn retrieved neighbors into a position.

    top1 copies the best neighbor's GPS; weighted_topk takes the
    similarity-weighted mean of neighbor lat/lon (negative weights clamped to
    zero; if every weight clamps, falls back to top1). The weighted mean
    averages raw degrees, which is fine at city scale but wrong across the
    antimeridian.
    """
    if not match.neighbors:
        raise InputError("cannot infer a pose from an empty neighbor list")
    if strategy not in ("top1", "weighted_topk"):
        raise InputError(f"unknown pose strategy {strategy!r}")
    if strategy == "top1":
        best = support_records[match.neighbors[0][0]]
        return PoseEstimate(query_index=match.query_index, lat=best.lat, lon=best.lon)
    weights = np.array([max(0.0, score) for _, score in match.neighbors])
    total = weights.sum()
    if total == 0.0:
        best = support_records[match.neighbors[0][0]]
        return PoseEstimate(query_index=match.query_index, lat=best.lat, lon=best.lon)
    lats = np.array([support_records[i].lat for i, _ in match.neighbors])
    lons = np.array([support_records[i].lon for i, _ in match.neighbors])
    weights /= total
    return PoseEstimate(query_index=match.query_index,
                        lat=float(weights @ lats), lon=float(weights @ lons))


def write_matches(path: str | Path, matches: list[Match],
                  query_records: list[ImageRecord],
                  support_records: list[ImageRecord]) -> None:
    """CSV export: query_id,rank,support_id,score with 1-based ranks."""
    lines = ["query_id,rank,support_id,score"]
    for match in matches:
        qid = query_records[match.query_index].image_id
        for rank, (sidx, score) in enumerate(match.neighbors, start=1):
            lines.append(f"{qid},{rank},{support_records[sidx].image_id},{score!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
