"""Scan statistics for continuous outcomes and sequential cluster detection.

Four detection methods share one scanning core.  The Gaussian scan ranks
candidate clusters by the log-likelihood ratio of a two-mean Gaussian model
against a common-mean null; the distribution-free scan ranks them by a
size-stabilized mean contrast.  The SAR-adjusted variants apply the same two
cores to the spatially filtered outcome (I - rho_hat W) Y, with rho_hat
estimated under BIC control, so that smooth autocorrelation is removed
before scanning.

Significance is assessed by Monte Carlo permutation: the observed maximum
statistic is ranked within the maxima of M random permutations of the
scanned outcome.  For SAR variants whose coefficient was estimated from the
data, each permutation is pushed through the full estimate-filter-scan
pipeline so the null reflects the estimation step as well.
"""

import csv
import enum
import io
import json
from dataclasses import dataclass

import numpy as np

from .core import CandidateCluster, SpatialDataset, enumerate_candidates, membership_matrix
from .errors import InputDataError, NumericalError
from .sar import (RhoSelection, _maximize_batch, estimate_rho, fit_sar,
                  make_logdet_engine, spatial_filter)
from .weights import WeightsMatrix

__all__ = [
    "ScanMethod",
    "ClusterReport",
    "DetectionResult",
    "mle_h0",
    "mle_h1",
    "gaussian_llr",
    "df_index",
    "scan",
    "mc_pvalue",
    "detect",
    "reports_to_json",
    "reports_to_csv",
]


class ScanMethod(enum.Enum):
    """Detection method tag.

    GAUSSIAN and DISTRIBUTION_FREE scan the raw outcome; P_SAR and NP_SAR
    scan the spatially filtered outcome with the respective core statistic.
    """

    GAUSSIAN = "gaussian"
    DISTRIBUTION_FREE = "distribution_free"
    P_SAR = "p_sar"
    NP_SAR = "np_sar"

    @property
    def is_sar(self) -> bool:
        return self in (ScanMethod.P_SAR, ScanMethod.NP_SAR)

    @property
    def core(self) -> "ScanMethod":
        """The statistic actually maximized (SAR variants reuse a core)."""
        if self is ScanMethod.P_SAR:
            return ScanMethod.GAUSSIAN
        if self is ScanMethod.NP_SAR:
            return ScanMethod.DISTRIBUTION_FREE
        return self

    @classmethod
    def from_string(cls, s: str) -> "ScanMethod":
        key = s.strip().lower().replace("-", "_")
        aliases = {"df": "distribution_free", "g": "gaussian"}
        key = aliases.get(key, key)
        for m in cls:
            if m.value == key:
                return m
        raise InputDataError(f"unknown method {s!r}; expected one of "
                             "gaussian, df, p-sar, np-sar")


@dataclass(frozen=True)
class ClusterReport:
    """One detected cluster with its significance and descriptive summary.

    The mean and SD fields always describe the unfiltered outcome, even for
    SAR methods where the statistic itself was computed on filtered values.
    SDs use the n-1 divisor; a one-site group has SD NaN.

    Attributes:
        cluster: The detected candidate window.
        statistic: Value of the maximized scan statistic.
        p_value: Monte Carlo p-value, in (0, 1].
        mean_inside: Mean outcome over member sites.
        sd_inside: Sample SD over member sites.
        mean_outside: Mean outcome over non-member sites.
        sd_outside: Sample SD over non-member sites.
        rank: Detection order, 1 for the most likely cluster.
    """

    cluster: CandidateCluster
    statistic: float
    p_value: float
    mean_inside: float
    sd_inside: float
    mean_outside: float
    sd_outside: float
    rank: int


@dataclass(frozen=True)
class DetectionResult:
    """Full outcome of a detection run.

    Attributes:
        reports: Significant clusters in detection order (may be empty).
        method: The method that produced the result.
        alpha_level: Significance threshold used.
        n_permutations: Monte Carlo sample size M.
        n_candidates: Number of candidate windows scanned.
        rho_hat: Filtering coefficient for SAR methods, None otherwise.
        selection: The BIC selection record behind rho_hat, None when the
            coefficient was supplied by the caller or the method is not SAR.
        best_insignificant: The most likely cluster of the first round whose
            p-value exceeded alpha_level, if detection stopped that way.
    """

    reports: tuple[ClusterReport, ...]
    method: ScanMethod
    alpha_level: float
    n_permutations: int
    n_candidates: int
    rho_hat: float | None = None
    selection: RhoSelection | None = None
    best_insignificant: ClusterReport | None = None


def _members_of(cluster) -> np.ndarray:
    if isinstance(cluster, CandidateCluster):
        return np.asarray(cluster.members, dtype=np.int64)
    return np.asarray(sorted(int(i) for i in cluster), dtype=np.int64)


def mle_h0(y) -> tuple[float, float]:
    """Common-mean Gaussian MLEs: mean and variance with divisor n."""
    y = np.asarray(y, dtype=float)
    alpha = float(y.mean())
    return alpha, float(np.mean((y - alpha) ** 2))


def mle_h1(y, cluster) -> tuple[float, float, float]:
    """Two-mean Gaussian MLEs for a cluster hypothesis.

    Args:
        y: Outcome vector.
        cluster: CandidateCluster or iterable of member indices, with
            1 <= n_k < n.

    Returns:
        (alpha_k, delta_k, sigma2_k): outside mean, inside-minus-outside
        contrast, and pooled variance with divisor n.
    """
    y = np.asarray(y, dtype=float)
    members = _members_of(cluster)
    n, nk = y.size, members.size
    if not 1 <= nk < n:
        raise InputDataError(f"cluster size must be in [1, {n - 1}], got {nk}")
    inside = np.zeros(n, dtype=bool)
    inside[members] = True
    m_in = float(y[inside].mean())
    m_out = float(y[~inside].mean())
    ssr = float(np.sum((y[inside] - m_in) ** 2) + np.sum((y[~inside] - m_out) ** 2))
    return m_out, m_in - m_out, ssr / n


def gaussian_llr(y, cluster) -> float:
    """Log-likelihood ratio of the cluster hypothesis against the null.

    LLR = (n/2) (log sigma2_0 - log sigma2_k), nonnegative by construction.

    Raises:
        NumericalError: If the fitted variance under the cluster hypothesis
            is zero (constant values inside and outside), which would send
            the ratio to infinity.
    """
    y = np.asarray(y, dtype=float)
    _, sigma2_0 = mle_h0(y)
    _, _, sigma2_k = mle_h1(y, cluster)
    if sigma2_k <= 0:
        raise NumericalError("degenerate cluster: zero variance inside and outside")
    return float(0.5 * y.size * (np.log(sigma2_0) - np.log(sigma2_k)))


def df_index(y, cluster) -> float:
    """Distribution-free concentration index sqrt(n_k (n-n_k)/n) |contrast|.

    The size factor standardizes the variance of the inside/outside mean
    difference, so permutation distributions are comparable across cluster
    sizes.
    """
    y = np.asarray(y, dtype=float)
    members = _members_of(cluster)
    n, nk = y.size, members.size
    if not 1 <= nk < n:
        raise InputDataError(f"cluster size must be in [1, {n - 1}], got {nk}")
    inside = np.zeros(n, dtype=bool)
    inside[members] = True
    contrast = y[inside].mean() - y[~inside].mean()
    return float(np.sqrt(nk * (n - nk) / n) * abs(contrast))


def _scalar_stat(y: np.ndarray, cluster, core: ScanMethod) -> float:
    """Full-precision core statistic of one candidate (reporting path)."""
    if core is ScanMethod.DISTRIBUTION_FREE:
        return df_index(y, cluster)
    return gaussian_llr(y, cluster)


def _stat_matrix(Y: np.ndarray, ind, nk: np.ndarray, core: ScanMethod) -> np.ndarray:
    """Scan statistic of every candidate for every outcome row.

    Args:
        Y: (B, n) outcome rows.
        ind: (K, n) sparse membership matrix.
        nk: (K,) candidate sizes.
        core: GAUSSIAN or DISTRIBUTION_FREE.

    Returns:
        (K, B) statistics; degenerate Gaussian entries are -inf.
    """
    n = Y.shape[1]
    T = Y.sum(axis=1)
    S = ind @ Y.T
    m_in = S / nk[:, None]
    m_out = (T[None, :] - S) / (n - nk)[:, None]
    if core is ScanMethod.DISTRIBUTION_FREE:
        return np.sqrt(nk * (n - nk) / n)[:, None] * np.abs(m_in - m_out)
    Q = np.einsum("ij,ij->i", Y, Y)
    sigma2_0 = (Q - T ** 2 / n) / n
    ssr = Q[None, :] - nk[:, None] * m_in ** 2 - (n - nk)[:, None] * m_out ** 2
    # residual sums at rounding-error scale relative to the raw quadratic
    # terms are degenerate splits, not perfect fits
    floor = 1e-14 * np.abs(Q)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = 0.5 * n * (np.log(sigma2_0)[None, :] - np.log(ssr / n))
    lam[~(ssr > floor)] = -np.inf
    return lam


def _argmax_with_ties(stats: np.ndarray, nk: np.ndarray,
                      centers: np.ndarray) -> int:
    """Index of the largest statistic; ties prefer smaller n_k, then lower center."""
    order = np.lexsort((centers, nk, -stats))
    return int(order[0])


def scan(y, candidates, core: ScanMethod = ScanMethod.GAUSSIAN):
    """Exhaustive maximization of the core statistic over candidates.

    Args:
        y: Outcome vector (already filtered for SAR variants).
        candidates: Nonempty sequence of CandidateCluster.
        core: GAUSSIAN or DISTRIBUTION_FREE (SAR tags are reduced to their
            core automatically).

    Returns:
        (best_cluster, statistic) with ties broken toward smaller clusters,
        then lower center index.

    Raises:
        NumericalError: If every candidate is degenerate (Gaussian core on
            data constant inside and outside every window).
    """
    candidates = list(candidates)
    if not candidates:
        raise InputDataError("scan needs at least one candidate cluster")
    y = np.asarray(y, dtype=float)
    ind = membership_matrix(candidates, y.size)
    nk = np.array([c.size for c in candidates], dtype=float)
    centers = np.array([c.center for c in candidates])
    stats = _stat_matrix(y[None, :], ind, nk, core.core)[:, 0]
    if not np.any(np.isfinite(stats)):
        raise NumericalError("every candidate cluster is degenerate")
    best = _argmax_with_ties(stats, nk, centers)
    return candidates[best], _scalar_stat(y, candidates[best], core.core)


def _null_maxima(y: np.ndarray, ind, nk: np.ndarray, core: ScanMethod,
                 M: int, rng: np.random.Generator) -> np.ndarray:
    """Maxima of the scan statistic over M random permutations of y."""
    n = y.size
    K = ind.shape[0]
    out = np.empty(M)
    chunk = max(1, int(2_000_000 // max(K, 1)))
    pos = 0
    while pos < M:
        m = min(chunk, M - pos)
        Yp = rng.permuted(np.tile(y, (m, 1)), axis=1)
        lam = _stat_matrix(Yp, ind, nk, core)
        out[pos:pos + m] = np.where(np.isfinite(lam), lam, -np.inf).max(axis=0)
        pos += m
    return out


class _NullProfileRows:
    """Cluster-free SAR profile log-likelihood for a batch of outcome rows.

    Plays the role of the profile object consumed by the batched rho
    maximizer, with one row per permuted dataset instead of one row per
    candidate cluster.
    """

    def __init__(self, Y: np.ndarray, V: np.ndarray, engine):
        self.n = Y.shape[1]
        self.engine = engine
        self.nk = np.zeros(Y.shape[0])
        self.quu = np.einsum("ij,ij->i", Y, Y)
        self.quv = np.einsum("ij,ij->i", Y, V)
        self.qvv = np.einsum("ij,ij->i", V, V)
        self.tu = Y.sum(axis=1)
        self.tv = V.sum(axis=1)

    def loglik(self, rho: np.ndarray) -> np.ndarray:
        n = self.n
        tf = self.tu - rho * self.tv
        qf = self.quu - 2.0 * rho * self.quv + rho ** 2 * self.qvv
        sigma2 = (qf - tf ** 2 / n) / n
        scale = (np.abs(self.quu) + 2.0 * np.abs(rho * self.quv)
                 + rho ** 2 * np.abs(self.qvv)) / n
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.engine.logdet(rho) - 0.5 * n * np.log(sigma2) - 0.5 * n
        return np.where(sigma2 > 1e-14 * scale, out, np.nan)


def _sar_pipeline_null(y: np.ndarray, W: WeightsMatrix, engine, candidates,
                       ind, nk: np.ndarray, core: ScanMethod, M: int,
                       rng: np.random.Generator, threshold: float) -> np.ndarray:
    """Null maxima for SAR scans whose rho was estimated from the data.

    Each permutation of the filtered outcome is pushed through the same
    estimate-filter-scan pipeline as the observed data: rho is re-estimated
    (cluster-free fit, then a common-rho screen of every candidate with a
    free refit when the BIC gap clears the adoption threshold), the
    permutation is re-filtered at its own estimate, and the scan maximum is
    recorded.  The resulting null distribution carries the same estimation
    noise as the observed statistic.
    """
    n = y.size
    K = ind.shape[0]
    logn = np.log(n)
    out = np.empty(M)
    chunk = max(1, int(1_000_000 // max(K, 1)))
    pos = 0
    while pos < M:
        m = min(chunk, M - pos)
        Yp = rng.permuted(np.tile(y, (m, 1)), axis=1)
        V = (W.matrix @ Yp.T).T
        prof = _NullProfileRows(Yp, V, engine)
        rho0, ll0, _ = _maximize_batch(prof, engine.rho_min, engine.rho_max)
        rho0 = np.where(np.isfinite(ll0), rho0, 0.0)
        # Screened at a common rho, the BIC gap reduces to twice the Gaussian
        # scan statistic of the filtered rows minus log n: the Jacobian terms
        # shared by both hypotheses cancel.
        Yf = Yp - rho0[:, None] * V
        lam0 = _stat_matrix(Yf, ind, nk, ScanMethod.GAUSSIAN)
        lam0 = np.where(np.isfinite(lam0), lam0, -np.inf)
        best = lam0.argmax(axis=0)
        delta = 2.0 * lam0[best, np.arange(m)] - logn
        for r in np.nonzero(delta > threshold)[0]:
            try:
                refit = fit_sar(Yp[r], W, candidates[best[r]], engine=engine)
            except NumericalError:
                continue
            if not refit.boundary:
                Yf[r] = Yp[r] - refit.rho * V[r]
        lam = _stat_matrix(Yf, ind, nk, core)
        out[pos:pos + m] = np.where(np.isfinite(lam), lam, -np.inf).max(axis=0)
        pos += m
    return out


def mc_pvalue(lambda_obs: float, y, candidates, core: ScanMethod,
              M: int, seed=None) -> float:
    """Monte Carlo p-value of an observed maximum statistic.

    Ranks lambda_obs within the maxima obtained by re-scanning M random
    permutations of y: p = (1 + #{lambda_perm >= lambda_obs}) / (M + 1).
    The smallest attainable value is 1/(M+1).

    Args:
        lambda_obs: Observed maximum statistic.
        y: The scanned outcome (filtered outcome for SAR variants).
        candidates: Candidate windows used in the observed scan.
        core: Core statistic.
        M: Number of permutations, at least 19.
        seed: Seed or Generator for reproducibility.
    """
    if M < 19:
        raise InputDataError(f"M must be at least 19, got {M}")
    candidates = list(candidates)
    if not candidates:
        raise InputDataError("mc_pvalue needs at least one candidate cluster")
    y = np.asarray(y, dtype=float)
    ind = membership_matrix(candidates, y.size)
    nk = np.array([c.size for c in candidates], dtype=float)
    rng = np.random.default_rng(seed)
    null = _null_maxima(y, ind, nk, core.core, M, rng)
    return float((1 + np.count_nonzero(null >= lambda_obs)) / (M + 1))


def _make_report(y: np.ndarray, cluster: CandidateCluster, statistic: float,
                 p_value: float, rank: int) -> ClusterReport:
    inside = np.zeros(y.size, dtype=bool)
    inside[list(cluster.members)] = True

    def _sd(x: np.ndarray) -> float:
        return float(np.std(x, ddof=1)) if x.size > 1 else float("nan")

    return ClusterReport(
        cluster=cluster,
        statistic=float(statistic),
        p_value=float(p_value),
        mean_inside=float(y[inside].mean()),
        sd_inside=_sd(y[inside]),
        mean_outside=float(y[~inside].mean()),
        sd_outside=_sd(y[~inside]),
        rank=rank,
    )


def detect(ds: SpatialDataset, method: ScanMethod = ScanMethod.GAUSSIAN,
           W: WeightsMatrix | None = None, M: int = 999,
           alpha_level: float = 0.05, max_clusters: int = 1,
           seed=None, candidates=None, max_fraction: float = 0.5,
           rho: float | None = None, bic_threshold: float = 10.0,
           report_values=None) -> DetectionResult:
    """Detect significant spatial clusters in a dataset.

    Pipeline: enumerate candidate windows; for SAR methods estimate the
    autocorrelation coefficient and scan the filtered outcome, otherwise
    scan the raw outcome; rank the most likely cluster against a Monte
    Carlo permutation null; on significance, remove every candidate that
    intersects the detected member set and repeat against the same null.
    The filter coefficient and the permutation null are computed once and
    reused across rounds, so sequentially detected clusters are pairwise
    disjoint and calibrated identically.

    The permutation null matches how the observed statistic was produced.
    When rho was estimated from the data, every permutation of the filtered
    outcome is itself re-estimated, re-filtered and re-scanned, so the null
    absorbs both the chance that noise alone clears the BIC adoption gate
    and the variance the filter soaks out of a permuted arrangement.  When
    the caller fixes rho (or for non-SAR methods), permutations are simply
    re-scanned, which makes a SAR scan at rho=0 agree exactly with the
    corresponding unfiltered method.

    Args:
        ds: The dataset to scan.
        method: Detection method.
        W: Weights matrix; required for SAR methods.
        M: Number of Monte Carlo permutations, at least 19.
        alpha_level: Significance threshold in (0, 1).
        max_clusters: Upper bound on the number of reported clusters.
        seed: Seed or Generator for the permutation null.
        candidates: Optional pre-built candidate list; enumerated from the
            dataset geometry when omitted.
        max_fraction: Largest candidate size as a fraction of n, used only
            when candidates are enumerated here.
        rho: Optional fixed filtering coefficient for SAR methods; skips
            estimation when given.
        bic_threshold: BIC evidence required to adopt a cluster-conditional
            coefficient during estimation.
        report_values: Values used for the descriptive report fields; the
            dataset values by default.  Lets a caller analyze transformed
            data yet summarize detected clusters on the original scale.

    Returns:
        A DetectionResult whose reports hold the significant clusters in
        detection order.
    """
    if M < 19:
        raise InputDataError(f"M must be at least 19, got {M}")
    if not 0.0 < alpha_level < 1.0:
        raise InputDataError(f"alpha_level must be in (0, 1), got {alpha_level}")
    if max_clusters < 1:
        raise InputDataError(f"max_clusters must be at least 1, got {max_clusters}")
    y = ds.values
    y_report = ds.values if report_values is None else np.asarray(report_values, dtype=float)
    if y_report.shape != y.shape:
        raise InputDataError(f"report_values must have shape {y.shape}, got {y_report.shape}")
    candidates = list(candidates) if candidates is not None else \
        enumerate_candidates(ds, max_fraction=max_fraction)
    if not candidates:
        raise InputDataError("no candidate clusters to scan")

    rho_hat = None
    selection = None
    if method.is_sar:
        if W is None:
            raise InputDataError(f"method {method.value} requires a weights matrix")
        engine = make_logdet_engine(W)
        if rho is None:
            selection = estimate_rho(y, W, candidates, engine=engine,
                                     threshold=bic_threshold)
            rho_hat = selection.rho_hat
        else:
            if not engine.contains(rho):
                raise InputDataError(
                    f"rho={rho} outside the admissible interval {engine.interval}")
            rho_hat = float(rho)
        y_work = spatial_filter(y, W, rho_hat)
    else:
        if rho is not None:
            raise InputDataError("rho is only meaningful for SAR methods")
        y_work = y

    n = ds.n
    ind = membership_matrix(candidates, n)
    nk = np.array([c.size for c in candidates], dtype=float)
    centers = np.array([c.center for c in candidates])
    core = method.core

    stats = _stat_matrix(y_work[None, :], ind, nk, core)[:, 0]
    if not np.any(np.isfinite(stats)):
        raise NumericalError("every candidate cluster is degenerate")
    rng = np.random.default_rng(seed)
    if method.is_sar and rho is None:
        null = _sar_pipeline_null(y_work, W, engine, candidates, ind, nk,
                                  core, M, rng, bic_threshold)
    else:
        null = _null_maxima(y_work, ind, nk, core, M, rng)

    reports: list[ClusterReport] = []
    best_insignificant = None
    active = np.ones(len(candidates), dtype=bool)
    masked = np.where(active & np.isfinite(stats), stats, -np.inf)
    while np.any(masked > -np.inf):
        best = _argmax_with_ties(masked, nk, centers)
        lam = _scalar_stat(y_work, candidates[best], core)
        p = float((1 + np.count_nonzero(null >= lam)) / (M + 1))
        report = _make_report(y_report, candidates[best], lam, p, rank=len(reports) + 1)
        if p > alpha_level:
            best_insignificant = report
            break
        reports.append(report)
        if len(reports) >= max_clusters:
            break
        hit = np.zeros(n)
        hit[list(candidates[best].members)] = 1.0
        overlap = (ind @ hit) > 0
        active &= ~overlap
        masked = np.where(active & np.isfinite(stats), stats, -np.inf)

    return DetectionResult(
        reports=tuple(reports),
        method=method,
        alpha_level=float(alpha_level),
        n_permutations=int(M),
        n_candidates=len(candidates),
        rho_hat=rho_hat,
        selection=selection,
        best_insignificant=best_insignificant,
    )


def _report_dict(r: ClusterReport, ids) -> dict:
    c = r.cluster
    return {
        "rank": r.rank,
        "center_id": str(ids[c.center]),
        "center_index": c.center,
        "radius": c.radius,
        "n_sites": c.size,
        "member_ids": [str(ids[i]) for i in c.members],
        "member_indices": list(c.members),
        "statistic": r.statistic,
        "p_value": r.p_value,
        "mean_inside": r.mean_inside,
        "sd_inside": r.sd_inside,
        "mean_outside": r.mean_outside,
        "sd_outside": r.sd_outside,
    }


def reports_to_json(reports, ids) -> str:
    """Serialize reports as a JSON array (deterministic key order)."""
    return json.dumps([_report_dict(r, ids) for r in reports],
                      sort_keys=True, indent=2) + "\n"


def reports_to_csv(reports, ids) -> str:
    """Serialize reports as CSV with the summary-table column layout."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cluster", "n_sites", "mean_inside", "sd_inside",
                     "mean_outside", "sd_outside", "p_value"])
    for r in reports:
        writer.writerow([str(ids[r.cluster.center]), r.cluster.size,
                         repr(r.mean_inside), repr(r.sd_inside),
                         repr(r.mean_outside), repr(r.sd_outside),
                         repr(r.p_value)])
    return buf.getvalue()
