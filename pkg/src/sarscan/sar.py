"""Simultaneous autoregressive (SAR) estimation and spatial filtering.

The model is (I - rho W) Y = alpha 1 + delta xi + epsilon with xi the
indicator of a candidate cluster (or absent under the null).  For a fixed
rho the Gaussian MLEs of (alpha, delta, sigma^2) are closed-form, so the
profile log-likelihood

    L(rho) = log|det(I - rho W)| - (n/2) log sigmahat^2(rho) - n/2

is a scalar function maximized numerically.  The additive constant
-(n/2) log(2 pi) is dropped throughout; it cancels in every likelihood
ratio and BIC difference this package computes.

Candidate-specific fits share one precomputed set of cross sums, so the
profile for every candidate cluster is evaluated simultaneously with O(1)
work per (candidate, rho) pair after an O(n) setup.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .core import CandidateCluster, membership_matrix
from .errors import InputDataError, NumericalError, SarScanWarning
from .weights import WeightsMatrix

__all__ = [
    "SarFit",
    "RhoSelection",
    "LogDetEngine",
    "make_logdet_engine",
    "spatial_filter",
    "concentrated_loglik",
    "fit_sar",
    "estimate_rho",
    "select_rho",
]

_RHO_CAP = 1000.0  # stand-in bound when the spectrum leaves a side unconstrained
_DENSE_CAP = 5000
_BIC_THRESHOLD = 10.0
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SarFit:
    """Fitted SAR model for one hypothesis (a cluster, or the null).

    Attributes:
        alpha: Intercept MLE.
        delta: Cluster effect MLE, None for the null fit.
        sigma2: Error variance MLE (divisor n).
        rho: Autoregression coefficient MLE.
        loglik: Maximized log-likelihood without the -(n/2) log(2 pi) term.
        bic: p log(n) - 2 loglik with p the number of free parameters.
        n_params: Number of free parameters p (3 under the null, 4 with a cluster).
        cluster: The candidate the fit conditions on, None for the null.
        boundary: True if rho landed at the edge of the searched interval.
    """

    alpha: float
    delta: float | None
    sigma2: float
    rho: float
    loglik: float
    bic: float
    n_params: int
    cluster: CandidateCluster | None = None
    boundary: bool = False


@dataclass(frozen=True)
class RhoSelection:
    """Outcome of BIC-guided autocorrelation estimation.

    Attributes:
        rho_hat: The coefficient to use for spatial filtering.
        delta_bic: BIC(null) - BIC(best cluster fit); large values favour
            estimating rho jointly with a cluster effect.
        fit_h0: The null-model fit.
        fit_best: The best cluster-conditional fit, None if every candidate
            fit failed.
        from_h1: True if rho_hat was taken from the cluster-conditional fit.
    """

    rho_hat: float
    delta_bic: float
    fit_h0: SarFit
    fit_best: SarFit | None
    from_h1: bool


class LogDetEngine:
    """Evaluator for log|det(I - rho W)| over an admissible rho interval.

    Eigenvalue mode precomputes the spectrum once so each evaluation costs
    O(n): the spectrum is real when W is symmetric or row-standardized from
    a symmetric base (similar to a symmetric matrix), complex otherwise, and
    the determinant identity det(I - rho W) = prod(1 - rho lambda_i) holds
    either way.  Dense-factorization mode instead runs one LU factorization
    per evaluated rho; it is exact too but far slower, and is kept for
    verification and as an explicit opt-in.
    """

    def __init__(self, mode: str, rho_min: float, rho_max: float,
                 spectrum: np.ndarray | None = None,
                 dense: np.ndarray | None = None):
        self.mode = mode
        self.rho_min = float(rho_min)
        self.rho_max = float(rho_max)
        self.spectrum = spectrum
        self._dense = dense

    @property
    def interval(self) -> tuple[float, float]:
        """Open interval on which I - rho W stays nonsingular."""
        return (self.rho_min, self.rho_max)

    def contains(self, rho: float) -> bool:
        return self.rho_min < rho < self.rho_max

    def logdet(self, rho):
        """log|det(I - rho W)| for scalar or array rho (inside the interval)."""
        rho_arr = np.atleast_1d(np.asarray(rho, dtype=float))
        if self.mode == "eigenvalue":
            if np.iscomplexobj(self.spectrum):
                out = np.log(np.abs(1.0 - np.outer(rho_arr, self.spectrum))).sum(axis=1)
            else:
                out = np.log1p(-np.outer(rho_arr, self.spectrum)).sum(axis=1)
        else:
            out = np.empty(rho_arr.shape)
            eye = np.eye(self._dense.shape[0])
            for i, r in enumerate(rho_arr):
                sign, val = np.linalg.slogdet(eye - r * self._dense)
                out[i] = val if sign > 0 else np.nan
        return out if np.ndim(rho) else float(out[0])


def _interval_from_real_parts(reals: np.ndarray) -> tuple[float, float]:
    lam_min = float(reals.min()) if reals.size else 0.0
    lam_max = float(reals.max()) if reals.size else 0.0
    lo = 1.0 / lam_min if lam_min < 0 else -_RHO_CAP
    hi = 1.0 / lam_max if lam_max > 0 else _RHO_CAP
    return lo, hi


def make_logdet_engine(W: WeightsMatrix, dense_cap: int = _DENSE_CAP,
                       force_dense: bool = False) -> LogDetEngine:
    """Build the cheapest valid log-determinant evaluator for W.

    Row-standardized matrices with a symmetric base get a real spectrum via
    the similarity W = D^-1 A ~ D^-1/2 A D^-1/2; symmetric matrices are
    decomposed directly; any other matrix gets its (complex) spectrum, whose
    interval of real singularities comes from the near-real eigenvalues.
    Pass force_dense to get per-evaluation LU factorization instead of a
    precomputed spectrum.

    Raises:
        InputDataError: When n exceeds dense_cap and the matrix has no
            symmetric structure to exploit, or dense mode was forced.
    """
    m = W.matrix
    n = W.n

    def _is_sym(a) -> bool:
        return (abs(a - a.T) > 1e-12 * max(1.0, abs(a).max() if a.nnz else 1.0)).nnz == 0

    spectrum = None
    if not force_dense:
        if W.row_standardized and W.base is not None and _is_sym(W.base):
            d = np.asarray(W.base.sum(axis=1)).ravel()
            s = np.divide(1.0, np.sqrt(d), out=np.zeros_like(d), where=d > 0)
            sym = sparse.diags_array(s) @ W.base @ sparse.diags_array(s)
            spectrum = np.linalg.eigvalsh(sym.toarray())
        elif _is_sym(m):
            spectrum = np.linalg.eigvalsh(m.toarray())

    if spectrum is not None:
        lo, hi = _interval_from_real_parts(spectrum)
        if W.row_standardized:
            # row sums <= 1 bound the spectral radius; pin the known edges
            hi = 1.0
            lo = max(lo, -1.0) if spectrum.min() <= -1.0 else lo
        return LogDetEngine("eigenvalue", lo, hi, spectrum=spectrum)

    if n > dense_cap:
        raise InputDataError(
            f"n={n} exceeds the dense log-determinant cap ({dense_cap}); "
            "use a symmetric or symmetric-base weights matrix")
    dense = m.toarray()
    eigs = np.linalg.eigvals(dense)
    near_real = np.abs(eigs.imag) <= 1e-8 * np.maximum(1.0, np.abs(eigs))
    lo, hi = _interval_from_real_parts(eigs.real[near_real])
    if W.row_standardized:
        hi = min(hi, 1.0)
    if force_dense:
        return LogDetEngine("dense", lo, hi, dense=dense)
    if np.all(near_real):
        eigs = eigs.real
    return LogDetEngine("eigenvalue", lo, hi, spectrum=eigs)


def spatial_filter(y, W: WeightsMatrix, rho: float) -> np.ndarray:
    """Filtered outcome (I - rho W) y.

    The caller is responsible for rho lying inside the admissible interval
    of W; the transform itself is defined for any rho.
    """
    y = np.asarray(y, dtype=float)
    return y - rho * (W.matrix @ y)


class _ProfileBatch:
    """Concentrated log-likelihood of many cluster hypotheses at once.

    For filtered data f = u - rho v with u = y and v = W y, the residual sum
    of squares after fitting the two group means is a quadratic in rho built
    from six cross sums per hypothesis.  The null model is the hypothesis
    with an empty member set.
    """

    def __init__(self, y: np.ndarray, W: WeightsMatrix, clusters,
                 engine: LogDetEngine):
        self.engine = engine
        u = np.asarray(y, dtype=float)
        v = W.matrix @ u
        n = u.size
        self.n = n
        ind = membership_matrix(
            [c for c in clusters if c is not None], n)
        sizes = np.zeros(len(clusters))
        su = np.zeros(len(clusters))
        sv = np.zeros(len(clusters))
        live = [i for i, c in enumerate(clusters) if c is not None]
        if live:
            sizes[live] = np.asarray(ind.sum(axis=1)).ravel()
            su[live] = ind @ u
            sv[live] = ind @ v
        self.nk = sizes
        self.su, self.sv = su, sv
        self.tu, self.tv = u.sum(), v.sum()
        self.quu, self.quv, self.qvv = u @ u, u @ v, v @ v

    def _group_stats(self, rho: np.ndarray):
        """Means inside/outside and total SSQ of the filtered outcome."""
        n, nk = self.n, self.nk
        sf_in = self.su - rho * self.sv
        tf = self.tu - rho * self.tv
        qf = self.quu - 2.0 * rho * self.quv + rho ** 2 * self.qvv
        m_in = np.divide(sf_in, nk, out=np.zeros_like(sf_in), where=nk > 0)
        m_out = (tf - sf_in) / (n - nk)
        return m_in, m_out, qf

    def loglik(self, rho: np.ndarray) -> np.ndarray:
        """Profile log-likelihood per hypothesis at its own rho."""
        n, nk = self.n, self.nk
        m_in, m_out, qf = self._group_stats(rho)
        ssr = qf - nk * m_in ** 2 - (n - nk) * m_out ** 2
        sigma2 = ssr / n
        # a residual variance at rounding-error scale is a degenerate fit,
        # not a perfect one; the error scale of the cancelled sums follows
        # the magnitudes of the raw quadratic terms
        scale = (np.abs(self.quu) + 2.0 * np.abs(rho * self.quv)
                 + rho ** 2 * np.abs(self.qvv)) / n
        floor = 1e-14 * scale
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.engine.logdet(rho)
                   - 0.5 * n * np.log(sigma2) - 0.5 * n)
        out[~(sigma2 > floor)] = np.nan
        return out

    def params(self, rho: np.ndarray):
        """(alpha, delta, sigma2) MLEs per hypothesis at its own rho."""
        n, nk = self.n, self.nk
        m_in, m_out, qf = self._group_stats(rho)
        ssr = qf - nk * m_in ** 2 - (n - nk) * m_out ** 2
        delta = np.where(nk > 0, m_in - m_out, np.nan)
        return m_out, delta, ssr / n


def _maximize_batch(profile: _ProfileBatch, lo: float, hi: float,
                    tol: float = 1e-7, max_iter: int = 200):
    """Golden-section search plus one parabolic refinement, vectorized.

    Every hypothesis in the batch shares the same initial bracket; the
    returned rho maximizes its own profile.  Returns (rho, loglik,
    boundary_flag) arrays.
    """
    width = hi - lo
    margin = 1e-6 * width
    a = np.full(profile.nk.shape, lo + margin)
    b = np.full(profile.nk.shape, hi - margin)

    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1 = profile.loglik(x1)
    f2 = profile.loglik(x2)
    for _ in range(max_iter):
        if np.max(b - a) < tol:
            break
        left = np.nan_to_num(f1, nan=-np.inf) > np.nan_to_num(f2, nan=-np.inf)
        # keep [a, x2] when the left interior point wins, [x1, b] otherwise
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        x1n = np.where(left, b - _GOLDEN * (b - a), x2)
        x2n = np.where(left, x1, a + _GOLDEN * (b - a))
        fresh = np.where(left, x1n, x2n)
        f_fresh = profile.loglik(fresh)
        f1, f2 = np.where(left, f_fresh, f2), np.where(left, f1, f_fresh)
        x1, x2 = x1n, x2n

    best_x = np.where(np.nan_to_num(f1, nan=-np.inf) >= np.nan_to_num(f2, nan=-np.inf), x1, x2)
    fa = profile.loglik(a)
    fb = profile.loglik(b)
    fx = profile.loglik(best_x)

    # parabola through (a, fa), (best_x, fx), (b, fb); fall back to best_x
    # when the three points are numerically collinear
    with np.errstate(divide="ignore", invalid="ignore"):
        num = ((best_x - a) ** 2 * (fx - fb) - (best_x - b) ** 2 * (fx - fa))
        den = ((best_x - a) * (fx - fb) - (best_x - b) * (fx - fa))
        vertex = best_x - 0.5 * num / den
    usable = np.isfinite(vertex) & (vertex > a) & (vertex < b)
    vertex = np.where(usable, vertex, best_x)
    fv = profile.loglik(vertex)

    take_v = np.nan_to_num(fv, nan=-np.inf) > np.nan_to_num(fx, nan=-np.inf)
    rho = np.where(take_v, vertex, best_x)
    ll = np.where(take_v, fv, fx)
    boundary = (np.minimum(rho - (lo + margin), (hi - margin) - rho)
                <= 2.0 * tol)
    return rho, ll, boundary


def concentrated_loglik(y, W: WeightsMatrix, cluster: CandidateCluster | None,
                        rho: float, engine: LogDetEngine | None = None):
    """Profile log-likelihood and MLEs at a fixed rho.

    Args:
        y: Outcome vector.
        W: Weights matrix.
        cluster: Candidate cluster, or None for the null model.
        rho: Autoregression coefficient, inside the admissible interval.
        engine: Optional preparatory log-determinant engine for W.

    Returns:
        Tuple (loglik, alpha, delta, sigma2); delta is None for the null.
    """
    if engine is None:
        engine = make_logdet_engine(W)
    if not engine.contains(rho):
        raise InputDataError(
            f"rho={rho} outside the admissible interval {engine.interval}")
    prof = _ProfileBatch(np.asarray(y, dtype=float), W, [cluster], engine)
    r = np.array([float(rho)])
    ll = prof.loglik(r)[0]
    alpha, delta, sigma2 = (arr[0] for arr in prof.params(r))
    if not np.isfinite(ll):
        raise NumericalError("degenerate filtered outcome: sigma^2(rho) = 0")
    return float(ll), float(alpha), (None if cluster is None else float(delta)), float(sigma2)


def _fits_from_batch(y, W, clusters, engine, tol=1e-7):
    """Maximize the profile for each hypothesis; None entries mark failures."""
    prof = _ProfileBatch(np.asarray(y, dtype=float), W, clusters, engine)
    rho, ll, boundary = _maximize_batch(prof, engine.rho_min, engine.rho_max, tol=tol)
    alpha, delta, sigma2 = prof.params(rho)
    n = prof.n
    fits: list[SarFit | None] = []
    for i, c in enumerate(clusters):
        if not np.isfinite(ll[i]):
            fits.append(None)
            continue
        p = 3 if c is None else 4
        fits.append(SarFit(
            alpha=float(alpha[i]),
            delta=None if c is None else float(delta[i]),
            sigma2=float(sigma2[i]),
            rho=float(rho[i]),
            loglik=float(ll[i]),
            bic=float(p * np.log(n) - 2.0 * ll[i]),
            n_params=p,
            cluster=c,
            boundary=bool(boundary[i]),
        ))
    return fits


def fit_sar(y, W: WeightsMatrix, cluster: CandidateCluster | None = None,
            engine: LogDetEngine | None = None, tol: float = 1e-7) -> SarFit:
    """Maximum-likelihood SAR fit for one hypothesis.

    Args:
        y: Outcome vector of length n.
        W: Weights matrix.
        cluster: Candidate cluster whose indicator enters the mean, or None
            for the intercept-only null model.
        engine: Optional reusable log-determinant engine for W.
        tol: Bracket width at which the rho search stops.

    Returns:
        The fitted model; `boundary` is set when rho stopped at the edge of
        the searched interval, where the estimate should not be trusted.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (W.n,):
        raise InputDataError(f"y must have shape ({W.n},), got {y.shape}")
    if engine is None:
        engine = make_logdet_engine(W)
    fit = _fits_from_batch(y, W, [cluster], engine, tol=tol)[0]
    if fit is None:
        raise NumericalError("SAR fit failed: profile likelihood degenerate "
                             "at every evaluated rho")
    return fit


def select_rho(fit_h0: SarFit, fit_best: SarFit | None,
               threshold: float = _BIC_THRESHOLD) -> RhoSelection:
    """Apply the BIC evidence rule to a null fit and a best cluster fit.

    The cluster-conditional estimate is adopted only when the BIC difference
    BIC(null) - BIC(best) exceeds `threshold` and the best fit did not stop
    at the interval boundary; otherwise the null estimate is used.
    """
    if fit_best is None:
        return RhoSelection(rho_hat=fit_h0.rho, delta_bic=float("-inf"),
                            fit_h0=fit_h0, fit_best=None, from_h1=False)
    delta = fit_h0.bic - fit_best.bic
    use_h1 = delta > threshold and not fit_best.boundary
    return RhoSelection(rho_hat=fit_best.rho if use_h1 else fit_h0.rho,
                        delta_bic=float(delta), fit_h0=fit_h0,
                        fit_best=fit_best, from_h1=use_h1)


def estimate_rho(y, W: WeightsMatrix, candidates,
                 engine: LogDetEngine | None = None,
                 threshold: float = _BIC_THRESHOLD,
                 tol: float = 1e-7) -> RhoSelection:
    """Estimate the autocorrelation coefficient for spatial filtering.

    Fits the null SAR model, then screens every candidate cluster with the
    autoregression coefficient held at the null estimate: the coefficient
    reflects the spatial structure of the region rather than any single
    clustering hypothesis, so the screen compares the competing mean
    structures at a common rho (one closed-form evaluation per candidate).
    Only when the best candidate beats the null by a decisive BIC margin is
    rho re-estimated jointly with that cluster's effect; the refit protects
    the later scan from absorbing a real cluster into the filter.  A refit
    that lands on the interval boundary is rejected and the null estimate
    kept.

    Args:
        y: Outcome vector.
        W: Weights matrix.
        candidates: Iterable of CandidateCluster hypotheses.
        engine: Optional reusable log-determinant engine for W.
        threshold: BIC difference required to adopt the cluster-based rho.
        tol: Bracket width at which each rho search stops.
    """
    candidates = list(candidates)
    if not candidates:
        raise InputDataError("estimate_rho needs at least one candidate cluster")
    y = np.asarray(y, dtype=float)
    if y.shape != (W.n,):
        raise InputDataError(f"y must have shape ({W.n},), got {y.shape}")
    if engine is None:
        engine = make_logdet_engine(W)

    fit_h0 = _fits_from_batch(y, W, [None], engine, tol=tol)[0]
    if fit_h0 is None:
        raise NumericalError("null SAR fit failed: degenerate profile likelihood")

    prof = _ProfileBatch(y, W, candidates, engine)
    rho0 = np.full(len(candidates), fit_h0.rho)
    ll = prof.loglik(rho0)
    n_failed = int(np.sum(~np.isfinite(ll)))
    if n_failed:
        warnings.warn(f"{n_failed} of {len(candidates)} candidate SAR fits "
                      "failed and were skipped", SarScanWarning, stacklevel=2)
    if n_failed == len(candidates):
        return select_rho(fit_h0, None, threshold=threshold)
    best = int(np.nanargmax(ll))
    alpha, delta, sigma2 = prof.params(rho0)
    screen_fit = SarFit(
        alpha=float(alpha[best]),
        delta=float(delta[best]),
        sigma2=float(sigma2[best]),
        rho=fit_h0.rho,
        loglik=float(ll[best]),
        bic=float(4 * np.log(prof.n) - 2.0 * ll[best]),
        n_params=4,
        cluster=candidates[best],
        boundary=False,
    )
    sel = select_rho(fit_h0, screen_fit, threshold=threshold)
    if not sel.from_h1:
        return sel
    refit = _fits_from_batch(y, W, [candidates[best]], engine, tol=tol)[0]
    if refit is None or refit.boundary:
        return RhoSelection(rho_hat=fit_h0.rho, delta_bic=sel.delta_bic,
                            fit_h0=fit_h0,
                            fit_best=screen_fit if refit is None else refit,
                            from_h1=False)
    return RhoSelection(rho_hat=refit.rho, delta_bic=sel.delta_bic,
                        fit_h0=fit_h0, fit_best=refit, from_h1=True)
