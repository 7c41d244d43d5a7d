"""Spatial weights matrices: construction, row standardization, Moran's I.

Weights are stored sparse (CSR) with a zero diagonal and strictly positive
entries.  A matrix may be row-standardized, in which case every nonzero row
sums to one; rows of isolated sites stay zero and are flagged, not rejected
(the spatial filter simply treats such sites as uncorrelated).
"""

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import InputDataError, NumericalError, SarScanWarning

__all__ = [
    "WeightsMatrix",
    "build_contiguity",
    "build_knn",
    "build_inverse_distance",
    "row_standardize",
    "morans_i",
    "select_weights",
    "knn_family",
    "load_weights_csv",
    "load_contiguity_csv",
    "save_weights_csv",
]

_ROWSUM_TOL = 1e-12


@dataclass(frozen=True)
class WeightsMatrix:
    """Sparse nonnegative interaction matrix with zero diagonal.

    Attributes:
        matrix: (n, n) CSR array of weights.
        row_standardized: True if nonzero rows sum to one.
        scheme: Construction tag ("contiguity", "knn(3)", ...).
        base: The matrix before row standardization, when known.  Kept so the
            log-determinant machinery can exploit a symmetric base.
    """

    matrix: sparse.csr_array
    row_standardized: bool = False
    scheme: str = "custom"
    base: sparse.csr_array | None = None

    def __post_init__(self):
        m = sparse.csr_array(self.matrix)
        m.eliminate_zeros()
        object.__setattr__(self, "matrix", m)
        if m.shape[0] != m.shape[1]:
            raise InputDataError(f"weights matrix must be square, got {m.shape}")
        if m.diagonal().any():
            raise InputDataError("weights matrix must have a zero diagonal")
        if m.nnz and m.data.min() <= 0:
            raise InputDataError("stored weights must be strictly positive")
        if self.row_standardized:
            sums = self.row_sums()
            bad = np.abs(sums[sums > 0] - 1.0) > _ROWSUM_TOL
            if bad.any():
                raise InputDataError("row_standardized=True but some row sums differ from 1")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @property
    def has_isolated_sites(self) -> bool:
        """True if some site has no neighbours (all-zero row)."""
        return bool(np.any(self.row_sums() == 0.0))

    def lag(self, y: np.ndarray) -> np.ndarray:
        """Spatial lag W @ y."""
        return self.matrix @ np.asarray(y, dtype=float)


def build_contiguity(n: int, edges) -> WeightsMatrix:
    """Symmetric binary contiguity matrix from an undirected edge list.

    Args:
        n: Number of sites.
        edges: Iterable of (i, j) index pairs; order and duplicates ignored.
    """
    rows, cols = [], []
    for i, j in edges:
        i, j = int(i), int(j)
        if i == j:
            raise InputDataError(f"self-loop edge ({i}, {j}) not allowed")
        if not (0 <= i < n and 0 <= j < n):
            raise InputDataError(f"edge ({i}, {j}) outside 0..{n - 1}")
        rows += [i, j]
        cols += [j, i]
    m = sparse.csr_array((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    m.data[:] = 1.0  # collapse duplicate edges
    return WeightsMatrix(m, scheme="contiguity")


def build_knn(dist: np.ndarray, k: int) -> WeightsMatrix:
    """Binary k-nearest-neighbour matrix (asymmetric in general).

    w_ij = 1 iff j is among the k nearest neighbours of i.  Ties in distance
    are broken by the lower site index, which makes the construction
    deterministic.
    """
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    if not 1 <= k <= n - 1:
        raise InputDataError(f"k must be in [1, {n - 1}], got {k}")
    rows = np.repeat(np.arange(n), k)
    cols = np.empty(n * k, dtype=np.int64)
    idx = np.arange(n)
    for i in range(n):
        others = idx[idx != i]
        order = np.lexsort((others, dist[i, others]))  # distance, then index
        cols[i * k:(i + 1) * k] = others[order[:k]]
    m = sparse.csr_array((np.ones(n * k), (rows, cols)), shape=(n, n))
    return WeightsMatrix(m, scheme=f"knn({k})")


def build_inverse_distance(dist: np.ndarray, power: float,
                           cutoff: float | None = None) -> WeightsMatrix:
    """Inverse-distance weights w_ij = d_ij ** -power, optionally truncated.

    Args:
        dist: (n, n) distance matrix.
        power: Decay exponent, > 0.
        cutoff: If given, weights for pairs farther apart than this are zero.
    """
    if power <= 0:
        raise InputDataError(f"power must be positive, got {power}")
    d = np.asarray(dist, dtype=float).copy()
    n = d.shape[0]
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] == 0.0):
        raise InputDataError("zero off-diagonal distance: inverse-distance weight undefined")
    w = np.zeros_like(d)
    w[off] = d[off] ** (-power)
    if cutoff is not None:
        w[d > cutoff] = 0.0
    return WeightsMatrix(sparse.csr_array(w), scheme=f"inverse_distance({power:g})")


def row_standardize(W: WeightsMatrix) -> WeightsMatrix:
    """Divide every nonzero row by its sum; zero rows are left untouched.

    Idempotent.  The pre-standardization matrix is retained on the result so
    that spectral log-determinant evaluation stays available when it is
    symmetric.
    """
    if W.row_standardized:
        return W
    sums = W.row_sums()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    m = sparse.csr_array(sparse.diags_array(scale) @ W.matrix)
    return WeightsMatrix(m, row_standardized=True, scheme=W.scheme,
                         base=W.base if W.base is not None else W.matrix)


def morans_i(W: WeightsMatrix, y) -> float:
    """Global Moran's I of y under W.

    I = (n / S0) * (sum_ij w_ij z_i z_j) / (sum_i z_i^2) with z the centred
    outcome and S0 the total weight.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (W.n,):
        raise InputDataError(f"y must have shape ({W.n},), got {y.shape}")
    s0 = W.matrix.sum()
    if s0 == 0:
        raise NumericalError("Moran's I undefined for an all-zero weights matrix")
    z = y - y.mean()
    denom = z @ z
    if denom == 0:
        raise NumericalError("Moran's I undefined for a constant outcome")
    return float(W.n / s0 * (z @ (W.matrix @ z)) / denom)


def select_weights(candidates, y) -> tuple[WeightsMatrix, float]:
    """Pick the candidate weights matrix that maximizes Moran's I of y.

    Ties are broken by position in the candidate list.  Candidates for which
    Moran's I is undefined are skipped with a warning; if every candidate is
    skipped, an error is raised.
    """
    candidates = list(candidates)
    if not candidates:
        raise InputDataError("empty candidate list")
    best: tuple[WeightsMatrix, float] | None = None
    for k, W in enumerate(candidates):
        try:
            score = morans_i(W, y)
        except (NumericalError, InputDataError) as exc:
            warnings.warn(f"candidate {k} ({W.scheme}) skipped: {exc}",
                          SarScanWarning, stacklevel=2)
            continue
        if best is None or score > best[1]:
            best = (W, score)
    if best is None:
        raise NumericalError("Moran's I failed for every candidate weights matrix")
    return best


def knn_family(dist: np.ndarray, ks=range(2, 11), standardize: bool = True):
    """Row-standardized k-NN matrices for a range of neighbour counts."""
    fam = [build_knn(dist, k) for k in ks]
    return [row_standardize(W) for W in fam] if standardize else fam


def load_contiguity_csv(path, ids=None) -> list[tuple[int, int]]:
    """Read an undirected edge list from CSV.

    Header ``i,j`` means 0-based indices; header ``id_i,id_j`` means site ids,
    resolved against `ids`.
    """
    edges = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = [h.strip().lower() for h in next(reader, [])]
        if header[:2] == ["i", "j"]:
            resolve = None
        elif header[:2] == ["id_i", "id_j"]:
            if ids is None:
                raise InputDataError(f"{path}: id-based edges need a dataset to resolve ids")
            resolve = {str(s): k for k, s in enumerate(ids)}
        else:
            raise InputDataError(f"{path}: expected header 'i,j' or 'id_i,id_j', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise InputDataError(f"{path}: line {lineno}: expected 2 fields")
            try:
                if resolve is None:
                    edges.append((int(row[0]), int(row[1])))
                else:
                    edges.append((resolve[row[0].strip()], resolve[row[1].strip()]))
            except (ValueError, KeyError) as exc:
                raise InputDataError(f"{path}: line {lineno}: {exc!r}") from exc
    return edges


def load_weights_csv(path, n: int | None = None, ids=None) -> WeightsMatrix:
    """Read a weights matrix from an edge-list CSV ``i,j,w`` or ``id_i,id_j,w``."""
    rows, cols, data = [], [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = [h.strip().lower() for h in next(reader, [])]
        if header == ["i", "j", "w"]:
            resolve = None
        elif header == ["id_i", "id_j", "w"]:
            if ids is None:
                raise InputDataError(f"{path}: id-based weights need a dataset to resolve ids")
            resolve = {str(s): k for k, s in enumerate(ids)}
        else:
            raise InputDataError(f"{path}: expected header 'i,j,w' or 'id_i,id_j,w', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise InputDataError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                if resolve is None:
                    i, j = int(row[0]), int(row[1])
                else:
                    i, j = resolve[row[0].strip()], resolve[row[1].strip()]
                data.append(float(row[2]))
            except (ValueError, KeyError) as exc:
                raise InputDataError(f"{path}: line {lineno}: {exc!r}") from exc
            rows.append(i)
            cols.append(j)
    if n is None:
        if ids is not None:
            n = len(tuple(ids))
        elif rows:
            n = max(max(rows), max(cols)) + 1
        else:
            raise InputDataError(f"{path}: empty weights file and no size given")
    m = sparse.csr_array((data, (rows, cols)), shape=(n, n))
    sums = np.asarray(m.sum(axis=1)).ravel()
    standardized = bool(np.all(np.abs(sums[sums > 0] - 1.0) <= _ROWSUM_TOL)) and m.nnz > 0
    return WeightsMatrix(m, row_standardized=standardized, scheme="custom")


def save_weights_csv(W: WeightsMatrix, path) -> None:
    """Write a weights matrix as an edge-list CSV with header ``i,j,w``."""
    coo = W.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("i,j,w\n")
        for k in order:
            f.write(f"{int(coo.row[k])},{int(coo.col[k])},{float(coo.data[k])!r}\n")
