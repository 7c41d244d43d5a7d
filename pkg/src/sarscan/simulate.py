"""Simulation harness: SAR-correlated synthetic data and method comparison.

Datasets follow Y = (I - rho W)^-1 (alpha 1 + delta xi + eps) with i.i.d.
Gaussian errors, a planted cluster indicator xi scaled by delta = c sqrt(2),
and autocorrelation rho.  The grid runner reproduces the standard comparison
experiments: Type I error (power at c = 0), power against cluster strength,
site-level true/false positive rates, and the robustness arm where the
weights matrix is not known but selected from a k-NN family by Moran's I.

Replicates are keyed by (seed, rho-index, c-index, replicate-index), so grid
results are bit-reproducible under a fixed seed regardless of how work is
scheduled across threads.
"""

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .core import CandidateCluster, SpatialDataset, enumerate_candidates, pairwise_distances
from .errors import InputDataError, NumericalError, SarScanError
from .scan import ScanMethod, detect
from .weights import WeightsMatrix, build_contiguity, knn_family, row_standardize, select_weights

__all__ = [
    "SimConfig",
    "CellResult",
    "ReplicateRecord",
    "SimResult",
    "french94_layout",
    "lattice_layout",
    "default_config",
    "generate_dataset",
    "tp_fp_rates",
    "run_grid",
    "results_to_csv",
    "result_to_json",
]

DEFAULT_RHO_GRID = (0.0, 0.2, 0.4, 0.6, 0.8)
DEFAULT_C_GRID = (0.0, 0.5, 1.0, 1.5)


@dataclass(frozen=True)
class SimConfig:
    """Inputs of one simulation experiment.

    Attributes:
        layout: Site geometry; its outcome values are placeholders.
        W_true: The weights matrix data are generated with.
        true_cluster: The planted cluster.
        rho_grid: Autocorrelation levels to simulate.
        c_grid: Cluster strengths; the effect size is delta = c sqrt(2).
        S: Replicates per (rho, c) cell.
        M: Permutations per significance test.
        alpha_level: Significance threshold.
        alpha0: Global mean of the generating model.
        sigma: Error SD; zero is allowed only for algebraic tests.
        seed: Root seed for all replicate streams.
    """

    layout: SpatialDataset
    W_true: WeightsMatrix
    true_cluster: CandidateCluster
    rho_grid: tuple[float, ...] = DEFAULT_RHO_GRID
    c_grid: tuple[float, ...] = DEFAULT_C_GRID
    S: int = 200
    M: int = 199
    alpha_level: float = 0.05
    alpha0: float = 0.0
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rho_grid", tuple(float(r) for r in self.rho_grid))
        object.__setattr__(self, "c_grid", tuple(float(c) for c in self.c_grid))
        if not self.rho_grid or not self.c_grid:
            raise InputDataError("rho_grid and c_grid must be nonempty")
        if self.S < 1:
            raise InputDataError(f"S must be at least 1, got {self.S}")
        if self.M < 19:
            raise InputDataError(f"M must be at least 19, got {self.M}")
        if self.sigma < 0:
            raise InputDataError(f"sigma must be nonnegative, got {self.sigma}")
        n = self.layout.n
        if self.W_true.n != n:
            raise InputDataError("W_true size does not match the layout")
        if not all(0 <= i < n for i in self.true_cluster.members):
            raise InputDataError("true_cluster members outside the layout")


@dataclass(frozen=True)
class CellResult:
    """Aggregated rates for one (method, rho, c) cell.

    `power` is the share of replicates with at least one significant
    cluster; at c = 0 it is the empirical Type I error.
    """

    method: ScanMethod
    rho: float
    c: float
    power: float
    tp_rate: float
    fp_rate: float
    n_ok: int
    n_fail: int


@dataclass(frozen=True)
class ReplicateRecord:
    """Per-replicate detection outcome for one method."""

    method: ScanMethod
    rho: float
    c: float
    rep: int
    significant: bool
    p_value: float
    tp: float
    fp: float
    detected: tuple[tuple[int, ...], ...]
    rho_hat: float | None = None
    moran_i: float | None = None
    failed: bool = False


@dataclass(frozen=True)
class SimResult:
    """Grid run output: per-cell rates plus the per-replicate records."""

    cells: tuple[CellResult, ...]
    records: tuple[ReplicateRecord, ...]
    methods: tuple[ScanMethod, ...]
    w_mode: str
    config: SimConfig


def _layout_sites(name: str):
    path = resources.files("sarscan").joinpath(f"data/{name}")
    with path.open("r", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if [h.strip().lower() for h in header] != ["id", "x", "y"]:
            raise InputDataError(f"{name}: expected header id,x,y")
        ids, xs, ys = [], [], []
        for row in reader:
            if not row:
                continue
            ids.append(row[0].strip())
            xs.append(float(row[1]))
            ys.append(float(row[2]))
    coords = np.column_stack([xs, ys])
    return ids, coords


def _truth_window(coords: np.ndarray, center: int, size: int) -> CandidateCluster:
    """The candidate window of `size` sites centred at site `center`."""
    d = np.linalg.norm(coords - coords[center], axis=1)
    order = np.argsort(d, kind="stable")
    members = tuple(sorted(int(i) for i in order[:size]))
    return CandidateCluster(center=center, radius=float(d[order[size - 1]]),
                            members=members)


def french94_layout() -> tuple[SpatialDataset, WeightsMatrix, CandidateCluster]:
    """Bundled 94-site layout with contiguity weights and a planted cluster.

    Sites are the mainland French departement administrative centres in a
    kilometre-scale planar projection, with departement contiguity edges.
    The planted cluster is the 8-site candidate window centred on
    departement 23 (Gueret), a compact group in the centre of the map.

    Returns:
        (layout, W, truth) with W row-standardized contiguity.
    """
    ids, coords = _layout_sites("french94_sites.csv")
    ds = SpatialDataset(ids=tuple(ids), coords=coords,
                        values=np.zeros(len(ids)))
    index = {s: k for k, s in enumerate(ids)}
    edges = []
    path = resources.files("sarscan").joinpath("data/french94_edges.csv")
    with path.open("r", encoding="utf-8") as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            if row:
                edges.append((index[row[0].strip()], index[row[1].strip()]))
    W = row_standardize(build_contiguity(ds.n, edges))
    truth = _truth_window(coords, index["23"], 8)
    return ds, W, truth


def lattice_layout(side: int = 10) -> tuple[SpatialDataset, WeightsMatrix, CandidateCluster]:
    """Square lattice layout with rook contiguity and a 3x3 planted block.

    Self-contained fallback when the bundled geography is not wanted.  The
    planted cluster is the 9-site circular window centred at the middle of
    the block, which the candidate enumeration reproduces exactly.
    """
    if side < 4:
        raise InputDataError(f"side must be at least 4, got {side}")
    n = side * side
    ids = tuple(f"s{r}_{c}" for r in range(side) for c in range(side))
    coords = np.array([(float(c), float(r)) for r in range(side) for c in range(side)])
    edges = []
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if c + 1 < side:
                edges.append((i, i + 1))
            if r + 1 < side:
                edges.append((i, i + side))
    ds = SpatialDataset(ids=ids, coords=coords, values=np.zeros(n))
    W = row_standardize(build_contiguity(n, edges))
    mid = side // 2 - 1
    center = mid * side + mid
    truth = _truth_window(coords, center, 9)
    return ds, W, truth


def default_config(layout: str = "french94", **overrides) -> SimConfig:
    """Desk-scale configuration on a bundled layout.

    Args:
        layout: "french94" or "lattice".
        **overrides: Any SimConfig field except the layout triple.
    """
    if layout == "french94":
        ds, W, truth = french94_layout()
    elif layout == "lattice":
        ds, W, truth = lattice_layout()
    else:
        raise InputDataError(f"unknown layout {layout!r}; expected french94 or lattice")
    return SimConfig(layout=ds, W_true=W, true_cluster=truth, **overrides)


def generate_dataset(cfg: SimConfig, rho: float, c: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw one synthetic outcome vector.

    Solves (I - rho W) Y = alpha0 1 + delta xi + eps with delta = c sqrt(2)
    and eps ~ N(0, sigma^2) i.i.d.; no matrix inverse is formed.

    Raises:
        NumericalError: If I - rho W is singular (rho at a spectral bound).
    """
    n = cfg.layout.n
    if cfg.W_true.row_standardized and rho >= 1.0:
        raise InputDataError(
            f"rho={rho} is outside the admissible interval of a "
            "row-standardized weights matrix (upper bound 1)")
    delta = c * np.sqrt(2.0)
    rhs = np.full(n, float(cfg.alpha0))
    rhs[list(cfg.true_cluster.members)] += delta
    if cfg.sigma > 0:
        rhs = rhs + rng.normal(0.0, cfg.sigma, size=n)
    if rho == 0.0:
        return rhs
    A = sparse.csc_array(sparse.eye_array(n) - rho * cfg.W_true.matrix)
    y = splinalg.spsolve(A, rhs)
    # backward-stable solves return finite garbage for singular systems, so
    # catch absurd amplification as well as explicit nan/inf
    if (not np.all(np.isfinite(y))
            or np.abs(y).max() > 1e12 * max(np.abs(rhs).max(), 1e-300)):
        raise NumericalError(f"I - rho W is numerically singular at rho={rho}")
    return np.asarray(y)


def tp_fp_rates(detected, truth, n: int) -> tuple[float, float]:
    """Site-level recall and false-alarm fraction of a detection outcome.

    With A the union of the detected member sets: tp = |A & truth| / |truth|
    and fp = |A - truth| / (n - |truth|).  No detections give (0, 0).

    Args:
        detected: Iterable of member-index iterables (significant clusters).
        truth: Member indices of the planted cluster.
        n: Total number of sites.
    """
    truth = frozenset(int(i) for i in truth)
    if not truth:
        raise InputDataError("truth member set must be nonempty")
    if len(truth) >= n:
        raise InputDataError("truth cannot cover every site")
    union: set[int] = set()
    for members in detected:
        union.update(int(i) for i in members)
    tp = len(union & truth) / len(truth)
    fp = len(union - truth) / (n - len(truth))
    return tp, fp


def _replicate(cfg: SimConfig, methods, w_mode: str, candidates,
               knn_ws, irho: int, ic: int, s: int):
    """All per-method records for one simulated dataset."""
    rho, c = cfg.rho_grid[irho], cfg.c_grid[ic]
    gen_ss, perm_ss = np.random.SeedSequence([cfg.seed, irho, ic, s]).spawn(2)
    y = generate_dataset(cfg, rho, c, np.random.default_rng(gen_ss))
    ds = cfg.layout.with_values(y)
    truth = cfg.true_cluster.members
    n = cfg.layout.n

    moran = None
    if w_mode == "knn_select" and any(m.is_sar for m in methods):
        W, moran = select_weights(knn_ws, y)
    else:
        W = cfg.W_true

    records = []
    for method in methods:
        base = dict(method=method, rho=rho, c=c, rep=s,
                    moran_i=moran if method.is_sar else None)
        try:
            res = detect(ds, method, W=W if method.is_sar else None,
                         M=cfg.M, alpha_level=cfg.alpha_level, seed=perm_ss,
                         candidates=candidates)
        except SarScanError:
            records.append(ReplicateRecord(significant=False, p_value=float("nan"),
                                           tp=0.0, fp=0.0, detected=(),
                                           failed=True, rho_hat=None, **base))
            continue
        detected = tuple(r.cluster.members for r in res.reports)
        tp, fp = tp_fp_rates(detected, truth, n)
        if res.reports:
            p = res.reports[0].p_value
        else:
            p = res.best_insignificant.p_value
        records.append(ReplicateRecord(significant=bool(res.reports), p_value=p,
                                       tp=tp, fp=fp, detected=detected,
                                       rho_hat=res.rho_hat if method.is_sar else None,
                                       **base))
    return records


def run_grid(cfg: SimConfig, methods=(ScanMethod.GAUSSIAN, ScanMethod.P_SAR,
                                      ScanMethod.NP_SAR),
             w_mode: str = "true", threads: int = 1) -> SimResult:
    """Run the full (method, rho, c) comparison grid.

    For each cell, S datasets are generated and every method is applied to
    each of them, so methods are compared on identical data.  SAR methods
    within a replicate share one estimated filtering coefficient.  With
    w_mode "knn_select" the weights matrix handed to SAR methods is not the
    generating one but the Moran's I maximizer over row-standardized k-NN
    matrices, k = 2..10.

    Args:
        cfg: Simulation configuration.
        methods: Methods to compare.
        w_mode: "true" or "knn_select".
        threads: Worker threads; results do not depend on this value.

    Returns:
        SimResult with one CellResult per (method, rho, c) and all
        replicate records.  Replicates whose detection failed are counted
        in `n_fail` and excluded from the cell averages.
    """
    methods = tuple(methods)
    if not methods:
        raise InputDataError("methods must be nonempty")
    if w_mode not in ("true", "knn_select"):
        raise InputDataError(f"w_mode must be 'true' or 'knn_select', got {w_mode!r}")
    if threads < 1:
        raise InputDataError(f"threads must be at least 1, got {threads}")
    if cfg.sigma == 0:
        raise InputDataError("sigma = 0 is reserved for algebraic tests")

    candidates = enumerate_candidates(cfg.layout)
    knn_ws = None
    if w_mode == "knn_select" and any(m.is_sar for m in methods):
        knn_ws = knn_family(pairwise_distances(cfg.layout))

    keys = [(irho, ic, s)
            for irho in range(len(cfg.rho_grid))
            for ic in range(len(cfg.c_grid))
            for s in range(cfg.S)]

    def work(key):
        return _replicate(cfg, methods, w_mode, candidates,
                          knn_ws, *key)

    if threads == 1:
        outs = [work(k) for k in keys]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(work, keys))

    records: list[ReplicateRecord] = []
    for out in outs:  # keys order: deterministic reduction
        records.extend(out)

    grouped: dict[tuple, list[ReplicateRecord]] = {}
    for r in records:
        grouped.setdefault((r.method, r.rho, r.c), []).append(r)

    cells = []
    for method in methods:
        for rho in cfg.rho_grid:
            for c in cfg.c_grid:
                recs = grouped.get((method, rho, c), [])
                ok = [r for r in recs if not r.failed]
                n_fail = len(recs) - len(ok)
                if ok:
                    power = float(np.mean([r.significant for r in ok]))
                    tp = float(np.mean([r.tp for r in ok]))
                    fp = float(np.mean([r.fp for r in ok]))
                else:
                    power = tp = fp = float("nan")
                cells.append(CellResult(method=method, rho=rho, c=c,
                                        power=power, tp_rate=tp, fp_rate=fp,
                                        n_ok=len(ok), n_fail=n_fail))
    return SimResult(cells=tuple(cells), records=tuple(records),
                     methods=methods, w_mode=w_mode, config=cfg)


def results_to_csv(result: SimResult) -> str:
    """Plot-ready CSV: one row per (method, rho, c) cell."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "rho", "c", "power", "tp", "fp", "n_fail"])
    for cell in result.cells:
        writer.writerow([cell.method.value, repr(cell.rho), repr(cell.c),
                         repr(cell.power), repr(cell.tp_rate),
                         repr(cell.fp_rate), cell.n_fail])
    return buf.getvalue()


def result_to_json(result: SimResult) -> str:
    """Full record of a grid run, including per-replicate outcomes."""
    cfg = result.config
    doc = {
        "config": {
            "n_sites": cfg.layout.n,
            "true_cluster": list(cfg.true_cluster.members),
            "rho_grid": list(cfg.rho_grid),
            "c_grid": list(cfg.c_grid),
            "S": cfg.S,
            "M": cfg.M,
            "alpha_level": cfg.alpha_level,
            "alpha0": cfg.alpha0,
            "sigma": cfg.sigma,
            "seed": cfg.seed,
        },
        "methods": [m.value for m in result.methods],
        "w_mode": result.w_mode,
        "cells": [
            {"method": c.method.value, "rho": c.rho, "c": c.c,
             "power": c.power, "tp": c.tp_rate, "fp": c.fp_rate,
             "n_ok": c.n_ok, "n_fail": c.n_fail}
            for c in result.cells
        ],
        "replicates": [
            {"method": r.method.value, "rho": r.rho, "c": r.c, "rep": r.rep,
             "significant": r.significant,
             "p_value": None if np.isnan(r.p_value) else r.p_value,
             "tp": r.tp, "fp": r.fp,
             "detected": [list(m) for m in r.detected],
             "rho_hat": r.rho_hat, "moran_i": r.moran_i, "failed": r.failed}
            for r in result.records
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"
