"""Evaluation machinery: localization metrics, the four smoothing regimes,
kernel ablation, the m-sweep, and exhaustive grid search.

Ground truth for a query is its own GPS record; a run is scored by the median
localization error and the fraction of queries strictly inside the threshold
radius. Support and query graphs are always built independently, each from its
own split's metadata, and the query graph leaves GPS out unless explicitly
allowed (the query positions are what we are trying to predict).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import InputError
from .geodesy import GeoPoint, haversine_m
from .graph import GraphParams, build_operator
from .retrieval import Match, PoseEstimate, cosine_knn, infer_pose
from .smoothing import SmoothConfig, smooth

REGIMES = ("none", "gs_support", "gs_query", "gs_both")

DEFAULT_THRESHOLD_M = 25.0

# Ablation rows in canonical order: (dist, seq, latent) read as binary with
# dist the high bit, so the all-off baseline comes first.
ABLATION_ORDER = tuple(
    (bool(bits & 4), bool(bits & 2), bool(bits & 1)) for bits in range(8))


@dataclass
class EvalReport:
    """Outcome of one retrieval run.

    median_error_m follows the usual convention for even-length lists (mean of
    the two central values); acc_at_threshold counts errors strictly below the
    threshold.
    """

    per_query_error_m: list[float]
    median_error_m: float
    acc_at_threshold: float
    threshold_m: float
    regime: str
    config_snapshot: dict


@dataclass
class AblationRow:
    use_dist: bool
    use_seq: bool
    use_latent: bool
    median_error_m: float
    acc_at_threshold: float


def localization_error(estimate: PoseEstimate, truth: GeoPoint) -> float:
    """Great-circle distance in meters between an estimate and ground truth."""
    return haversine_m(GeoPoint(estimate.lat, estimate.lon), truth)


def query_graph_params(params: GraphParams, query_gps: bool) -> GraphParams:
    """Parameters for the query-side graph.

    The distance kernel is dropped unless query_gps is set: query GPS is the
    quantity under evaluation, so using it to build the graph would leak
    ground truth into retrieval.
    """
    return replace(params,
                   include_dist=params.include_dist and query_gps,
                   k_max=None)


def compute_report(matches: list[Match], support: Dataset, query: Dataset,
                   strategy: str, threshold_m: float, regime: str,
                   config_snapshot: dict) -> EvalReport:
    """Score retrieved matches against the query split's own GPS."""
    if threshold_m <= 0:
        raise InputError(f"threshold_m must be positive, got {threshold_m}")
    errors: list[float] = []
    for match in matches:
        estimate = infer_pose(match, support.records, strategy)
        rec = query.records[match.query_index]
        errors.append(localization_error(estimate, GeoPoint(rec.lat, rec.lon)))
    if not errors:
        raise InputError("cannot score an empty query set")
    err = np.asarray(errors)
    return EvalReport(
        per_query_error_m=errors,
        median_error_m=float(np.median(err)),
        acc_at_threshold=float(np.count_nonzero(err < threshold_m) / err.size),
        threshold_m=threshold_m,
        regime=regime,
        config_snapshot=config_snapshot,
    )


def _snapshot(params: GraphParams, cfg: SmoothConfig, regime: str, k: int,
              strategy: str, threshold_m: float, query_gps: bool,
              support: Dataset, query: Dataset) -> dict:
    return {
        "graph": asdict(params),
        "smoothing": {"m": cfg.m},
        "regime": regime,
        "k": k,
        "strategy": strategy,
        "threshold_m": threshold_m,
        "query_gps": query_gps,
        "n_support": support.n_images,
        "n_query": query.n_images,
        "dim": support.dim,
    }


def _smoothed_sides(support: Dataset, query: Dataset, params: GraphParams,
                    cfg: SmoothConfig, regime: str, query_gps: bool,
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Descriptors each side brings to retrieval under the given regime."""
    support_desc = support.descriptors
    query_desc = query.descriptors
    if cfg.m > 0 and regime in ("gs_support", "gs_both"):
        op = build_operator(support.records, support.descriptors, params)
        support_desc = smooth(op, support.descriptors, cfg)
    if cfg.m > 0 and regime in ("gs_query", "gs_both"):
        op = build_operator(query.records, query.descriptors,
                            query_graph_params(params, query_gps))
        query_desc = smooth(op, query.descriptors, cfg)
    return support_desc, query_desc


def evaluate_regime(support: Dataset, query: Dataset, params: GraphParams,
                    cfg: SmoothConfig, regime: str, *,
                    threshold_m: float = DEFAULT_THRESHOLD_M, k: int = 1,
                    strategy: str = "top1", query_gps: bool = False) -> EvalReport:
    """Run retrieval with smoothing applied per the regime and score it.

    Regimes: none (raw descriptors), gs_support (support smoothed on the
    support graph), gs_query (query smoothed on the query graph), gs_both.
    """
    if regime not in REGIMES:
        raise InputError(f"unknown regime {regime!r}, expected one of {REGIMES}")
    support_desc, query_desc = _smoothed_sides(
        support, query, params, cfg, regime, query_gps)
    matches = cosine_knn(query_desc, support_desc, k)
    snapshot = _snapshot(params, cfg, regime, k, strategy, threshold_m,
                         query_gps, support, query)
    return compute_report(matches, support, query, strategy, threshold_m,
                          regime, snapshot)


def run_ablation(support: Dataset, query: Dataset, params: GraphParams,
                 cfg: SmoothConfig, *, threshold_m: float = DEFAULT_THRESHOLD_M,
                 k: int = 1, strategy: str = "top1") -> list[AblationRow]:
    """Evaluate every kernel subset (8 rows) under gs_support.

    The all-off row degenerates to an identity operator, i.e. the
    no-smoothing baseline.
    """
    rows: list[AblationRow] = []
    for use_dist, use_seq, use_latent in ABLATION_ORDER:
        cell = replace(params, include_dist=use_dist, include_seq=use_seq,
                       include_latent=use_latent, k_max=None)
        report = evaluate_regime(support, query, cell, cfg, "gs_support",
                                 threshold_m=threshold_m, k=k, strategy=strategy)
        rows.append(AblationRow(use_dist=use_dist, use_seq=use_seq,
                                use_latent=use_latent,
                                median_error_m=report.median_error_m,
                                acc_at_threshold=report.acc_at_threshold))
    return rows


def sweep_m(support: Dataset, query: Dataset, params: GraphParams,
            m_values: list[int], *, threshold_m: float = DEFAULT_THRESHOLD_M,
            k: int = 1, strategy: str = "top1", query_gps: bool = False,
            ) -> list[tuple[int, float, float]]:
    """Evaluate gs_both once per m; returns (m, acc, median) rows."""
    if any(m < 0 for m in m_values):
        raise InputError("m values must be nonnegative")
    rows = []
    for m in m_values:
        report = evaluate_regime(support, query, params, SmoothConfig(m=m),
                                 "gs_both", threshold_m=threshold_m, k=k,
                                 strategy=strategy, query_gps=query_gps)
        rows.append((int(m), report.acc_at_threshold, report.median_error_m))
    return rows


# Grid axes in canonical order; ties in the search resolve toward the
# earliest cell of the cartesian product in this order.
GRID_AXES = ("alpha", "betas", "gamma", "max_distance_m", "m")


def grid_search(support: Dataset, validation_query: Dataset, grid: dict, *,
                base_params: GraphParams | None = None,
                base_cfg: SmoothConfig | None = None,
                regime: str = "gs_support",
                threshold_m: float = DEFAULT_THRESHOLD_M, k: int = 1,
                strategy: str = "top1", query_gps: bool = False,
                threads: int = 1,
                ) -> tuple[GraphParams, SmoothConfig, list[dict]]:
    """Exhaustively score every grid cell and return the winner plus the
    full score table.

    Maximizes acc_at_threshold; ties break to the lower median error, then to
    the earliest cell in canonical product order. Axes missing from the grid
    stay at their base values. Cells sharing graph parameters reuse one graph
    build; those groups are independent, so a thread pool may run them in
    parallel without changing any numbers.
    """
    if not grid:
        raise InputError("grid must name at least one parameter axis")
    unknown = set(grid) - set(GRID_AXES)
    if unknown:
        raise InputError(f"unknown grid axes {sorted(unknown)}; valid: {GRID_AXES}")
    base_params = base_params if base_params is not None else GraphParams()
    base_cfg = base_cfg if base_cfg is not None else SmoothConfig()
    if regime not in REGIMES:
        raise InputError(f"unknown regime {regime!r}, expected one of {REGIMES}")
    axes = {
        "alpha": [float(v) for v in grid.get("alpha", [base_params.alpha])],
        "betas": [tuple(float(b) for b in v) for v in grid.get("betas", [base_params.betas])],
        "gamma": [float(v) for v in grid.get("gamma", [base_params.gamma])],
        "max_distance_m": [float(v) for v in grid.get("max_distance_m", [base_params.max_distance_m])],
        "m": [int(v) for v in grid.get("m", [base_cfg.m])],
    }
    for name in GRID_AXES:
        if not axes[name]:
            raise InputError(f"grid axis {name!r} is empty")
    graph_combos = list(product(axes["alpha"], axes["betas"], axes["gamma"],
                                axes["max_distance_m"]))
    m_axis = axes["m"]

    def eval_group(combo: tuple) -> list[dict]:
        alpha, betas, gamma, max_distance_m = combo
        cell_params = replace(base_params, alpha=alpha, betas=betas,
                              gamma=gamma, max_distance_m=max_distance_m,
                              k_max=None)
        rows = []
        support_op = None
        query_op = None
        for m in m_axis:
            cfg = SmoothConfig(m=m)
            support_desc = support.descriptors
            query_desc = validation_query.descriptors
            if m > 0 and regime in ("gs_support", "gs_both"):
                if support_op is None:
                    support_op = build_operator(support.records,
                                                support.descriptors, cell_params)
                support_desc = smooth(support_op, support.descriptors, cfg)
            if m > 0 and regime in ("gs_query", "gs_both"):
                if query_op is None:
                    query_op = build_operator(
                        validation_query.records, validation_query.descriptors,
                        query_graph_params(cell_params, query_gps))
                query_desc = smooth(query_op, validation_query.descriptors, cfg)
            matches = cosine_knn(query_desc, support_desc, k)
            snapshot = _snapshot(cell_params, cfg, regime, k, strategy,
                                 threshold_m, query_gps, support, validation_query)
            report = compute_report(matches, support, validation_query,
                                    strategy, threshold_m, regime, snapshot)
            rows.append({
                "alpha": alpha,
                "betas": list(betas),
                "gamma": gamma,
                "max_distance_m": max_distance_m,
                "m": m,
                "acc_at_threshold": report.acc_at_threshold,
                "median_error_m": report.median_error_m,
            })
        return rows

    if threads > 1 and len(graph_combos) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_group = list(pool.map(eval_group, graph_combos))
    else:
        per_group = [eval_group(combo) for combo in graph_combos]
    table = [row for rows in per_group for row in rows]

    best = 0
    for idx in range(1, len(table)):
        row, champ = table[idx], table[best]
        if (row["acc_at_threshold"] > champ["acc_at_threshold"]
                or (row["acc_at_threshold"] == champ["acc_at_threshold"]
                    and row["median_error_m"] < champ["median_error_m"])):
            best = idx
    winner = table[best]
    best_params = replace(base_params, alpha=winner["alpha"],
                          betas=tuple(winner["betas"]), gamma=winner["gamma"],
                          max_distance_m=winner["max_distance_m"], k_max=None)
    return best_params, SmoothConfig(m=winner["m"]), table


# ---------------------------------------------------------------------------
# Serialization


def report_to_dict(report: EvalReport) -> dict:
    return asdict(report)


def write_report_json(path: str | Path, report: EvalReport) -> None:
    text = json.dumps(report_to_dict(report), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_report_csv(path: str | Path, report: EvalReport) -> None:
    lines = [
        "regime,threshold_m,n_queries,median_error_m,acc_at_threshold",
        f"{report.regime},{report.threshold_m!r},{len(report.per_query_error_m)}"
        f",{report.median_error_m!r},{report.acc_at_threshold!r}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_report(report: EvalReport) -> str:
    """One-line summary, e.g. `regime=gs_both: median 22.81 m / acc@25m 51.32%`."""
    return (f"regime={report.regime}: median {report.median_error_m:.2f} m"
            f" / acc@{report.threshold_m:g}m {report.acc_at_threshold * 100:.2f}%")


def ablation_table_csv(rows: list[AblationRow]) -> str:
    lines = ["use_dist,use_seq,use_latent,median_error_m,acc_at_threshold"]
    for row in rows:
        lines.append(f"{int(row.use_dist)},{int(row.use_seq)},{int(row.use_latent)}"
                     f",{row.median_error_m!r},{row.acc_at_threshold!r}")
    return "\n".join(lines) + "\n"


def sweep_table_csv(rows: list[tuple[int, float, float]]) -> str:
    lines = ["m,acc_at_threshold,median_error_m"]
    for m, acc, median in rows:
        lines.append(f"{m},{acc!r},{median!r}")
    return "\n".join(lines) + "\n"


def sweep_plot_data(rows: list[tuple[int, float, float]]) -> str:
    """Two-column (m, accuracy) text block for external plotting."""
    return "\n".join(f"{m}\t{acc!r}" for m, acc, _ in rows) + "\n"


def grid_table_csv(table: list[dict]) -> str:
    lines = ["alpha,betas,gamma,max_distance_m,m,acc_at_threshold,median_error_m"]
    for row in table:
        betas = ";".join(repr(b) for b in row["betas"])
        lines.append(f"{row['alpha']!r},{betas},{row['gamma']!r}"
                     f",{row['max_distance_m']!r},{row['m']}"
                     f",{row['acc_at_threshold']!r},{row['median_error_m']!r}")
    return "\n".join(lines) + "\n"
