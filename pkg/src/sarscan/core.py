"""Site geometry, dataset container, and enumeration of circular candidate clusters.

A dataset is a set of point sites in a planar coordinate system, each carrying
one continuous outcome value.  Candidate clusters are variable-radius circular
windows centred on the sites; the window family is capped so that no candidate
covers more than half the sites.
"""

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from .errors import InputDataError, SarScanWarning

__all__ = [
    "SpatialDataset",
    "CandidateCluster",
    "pairwise_distances",
    "enumerate_candidates",
    "membership_matrix",
    "load_dataset_csv",
    "load_dataset_geojson",
]


@dataclass(frozen=True)
class SpatialDataset:
    """Point sites with one continuous outcome value per site.

    Attributes:
        ids: Site identifiers, unique, one per site.
        coords: (n, 2) array of planar coordinates (projection is the
            caller's responsibility; distances are Euclidean).
        values: (n,) array with the outcome value of each site.
    """

    ids: tuple[str, ...]
    coords: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)
        n = len(self.ids)
        if n < 3:
            raise InputDataError(f"need at least 3 sites, got {n}")
        if len(set(self.ids)) != n:
            raise InputDataError("site ids must be unique")
        if coords.shape != (n, 2):
            raise InputDataError(f"coords must have shape ({n}, 2), got {coords.shape}")
        if values.shape != (n,):
            raise InputDataError(f"values must have shape ({n},), got {values.shape}")
        if not np.all(np.isfinite(coords)):
            raise InputDataError("coordinates must be finite")
        if not np.all(np.isfinite(values)):
            raise InputDataError("values must be finite")

    @property
    def n(self) -> int:
        return len(self.ids)

    def with_values(self, values) -> "SpatialDataset":
        """Same sites, different outcome vector."""
        return SpatialDataset(self.ids, self.coords, values)


@dataclass(frozen=True)
class CandidateCluster:
    """A circular scanning window: the sites within `radius` of a centre site.

    `members` is the sorted tuple of site indices inside the window; it always
    contains `center`.  Two candidates with the same member set are considered
    equal regardless of how they were generated.
    """

    center: int
    radius: float
    members: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(sorted(int(m) for m in self.members)))
        if self.center not in self.members:
            raise InputDataError("cluster centre must be a member")

    @property
    def size(self) -> int:
        return len(self.members)

    def indicator(self, n: int) -> np.ndarray:
        """(n,) 0/1 membership vector."""
        xi = np.zeros(n)
        xi[list(self.members)] = 1.0
        return xi


def pairwise_distances(ds) -> np.ndarray:
    """Euclidean distance matrix between all sites.

    Accepts a SpatialDataset or a raw (n, 2) coordinate array.  Duplicate
    coordinates are allowed (zero off-diagonal distance) but flagged with a
    warning because they make inverse-distance weights undefined.
    """
    coords = ds.coords if isinstance(ds, SpatialDataset) else np.asarray(ds, dtype=float)
    d = cdist(coords, coords)
    np.fill_diagonal(d, 0.0)
    d = 0.5 * (d + d.T)  # enforce exact symmetry against FP rounding
    off = d + np.eye(len(coords))
    if np.any(off == 0.0):
        warnings.warn("duplicate site coordinates (zero off-diagonal distance)",
                      SarScanWarning, stacklevel=2)
    return d


def enumerate_candidates(ds, max_fraction: float = 0.5) -> list[CandidateCluster]:
    """Enumerate all distinct circular candidate clusters.

    For every centre site the window is grown over the remaining sites in
    increasing-distance order; sites at identical distance from the centre
    enter together (the window is defined by a radius, not a count).  One
    candidate is emitted per distinct member set whose size does not exceed
    floor(n * max_fraction); member sets reachable from several centres or
    radii are emitted once, keyed on membership.  Output order is
    deterministic: by centre index, then by member count.

    Args:
        ds: SpatialDataset, or a precomputed (n, n) distance matrix.
        max_fraction: Cap on the fraction of sites a candidate may cover,
            in (0, 0.5].

    Returns:
        List of CandidateCluster.
    """
    if not 0.0 < max_fraction <= 0.5:
        raise InputDataError(f"max_fraction must be in (0, 0.5], got {max_fraction}")
    dist = pairwise_distances(ds) if isinstance(ds, SpatialDataset) else np.asarray(ds, dtype=float)
    n = dist.shape[0]
    cap = int(np.floor(n * max_fraction))
    if cap < 1:
        raise InputDataError(f"size cap is zero for n={n}, max_fraction={max_fraction}")

    seen: set[tuple[int, ...]] = set()
    out: list[CandidateCluster] = []
    for center in range(n):
        order = np.argsort(dist[center], kind="stable")
        d_sorted = dist[center, order]
        members: list[int] = []
        pos = 0
        while pos < n:
            radius = d_sorted[pos]
            while pos < n and d_sorted[pos] == radius:  # distance ties enter together
                members.append(int(order[pos]))
                pos += 1
            if len(members) > cap:
                break
            key = tuple(sorted(members))
            if key not in seen:
                seen.add(key)
                out.append(CandidateCluster(center=center, radius=float(radius), members=key))
    return out


def membership_matrix(candidates, n: int) -> sparse.csr_array:
    """Sparse (n_candidates, n) 0/1 indicator matrix of cluster membership.

    Shared by the scanners and the SAR profile machinery: row k selects the
    member sites of candidate k.
    """
    indptr = np.zeros(len(candidates) + 1, dtype=np.int64)
    indices = []
    for k, cand in enumerate(candidates):
        indices.extend(cand.members)
        indptr[k + 1] = len(indices)
    data = np.ones(len(indices))
    return sparse.csr_array((data, np.asarray(indices, dtype=np.int64), indptr),
                            shape=(len(candidates), n))


def load_dataset_csv(path) -> SpatialDataset:
    """Read a dataset from CSV with header ``id,x,y,value`` (UTF-8, '.' decimals)."""
    ids, xs, ys, vals = [], [], [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["id", "x", "y", "value"]:
            raise InputDataError(f"{path}: expected header 'id,x,y,value', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise InputDataError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            try:
                ids.append(row[0].strip())
                xs.append(float(row[1]))
                ys.append(float(row[2]))
                vals.append(float(row[3]))
            except ValueError as exc:
                raise InputDataError(f"{path}: line {lineno}: {exc}") from exc
    try:
        return SpatialDataset(tuple(ids), np.column_stack([xs, ys]) if ids else np.empty((0, 2)),
                              np.asarray(vals))
    except InputDataError as exc:
        raise InputDataError(f"{path}: {exc}") from exc


def load_dataset_geojson(path, value_property: str = "value",
                         id_property: str | None = None) -> SpatialDataset:
    """Read a dataset from a GeoJSON FeatureCollection of Point features.

    Args:
        path: File path.
        value_property: Feature property holding the outcome value.
        id_property: Feature property holding the site id; falls back to the
            feature-level ``id`` and then to the feature's position.
    """
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    feats = doc.get("features")
    if doc.get("type") != "FeatureCollection" or feats is None:
        raise InputDataError(f"{path}: not a GeoJSON FeatureCollection")
    ids, coords, vals = [], [], []
    for k, feat in enumerate(feats):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Point":
            raise InputDataError(f"{path}: feature {k}: only Point geometry is supported")
        props = feat.get("properties") or {}
        if value_property not in props:
            raise InputDataError(f"{path}: feature {k}: missing property {value_property!r}")
        if id_property is not None:
            if id_property not in props:
                raise InputDataError(f"{path}: feature {k}: missing property {id_property!r}")
            ids.append(str(props[id_property]))
        else:
            ids.append(str(feat.get("id", k)))
        coords.append(geom["coordinates"][:2])
        vals.append(float(props[value_property]))
    try:
        return SpatialDataset(tuple(ids), np.asarray(coords, dtype=float), np.asarray(vals))
    except InputDataError as exc:
        raise InputDataError(f"{path}: {exc}") from exc
