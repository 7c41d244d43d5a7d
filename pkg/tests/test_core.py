"""Tests for the dataset container, distances, and candidate enumeration."""

import numpy as np
import pytest

from sarscan import (
    CandidateCluster,
    InputDataError,
    SarScanWarning,
    SpatialDataset,
    enumerate_candidates,
    load_dataset_csv,
    load_dataset_geojson,
    membership_matrix,
    pairwise_distances,
)


def _square_dataset():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    return SpatialDataset(("a", "b", "c", "d"), coords, np.arange(4.0))


class TestSpatialDataset:
    def test_basic_properties(self):
        ds = _square_dataset()
        assert ds.n == 4
        assert ds.ids == ("a", "b", "c", "d")
        assert ds.values.dtype == float

    def test_rejects_fewer_than_three_sites(self):
        with pytest.raises(InputDataError):
            SpatialDataset(("a", "b"), np.zeros((2, 2)), np.zeros(2))

    def test_rejects_duplicate_ids(self):
        with pytest.raises(InputDataError):
            SpatialDataset(("a", "a", "b"), np.zeros((3, 2)), np.zeros(3))

    def test_rejects_wrong_value_length(self):
        with pytest.raises(InputDataError):
            SpatialDataset(("a", "b", "c"), np.zeros((3, 2)), np.zeros(4))

    def test_rejects_nonfinite(self):
        coords = np.zeros((3, 2))
        with pytest.raises(InputDataError):
            SpatialDataset(("a", "b", "c"), coords, np.array([1.0, np.nan, 2.0]))
        bad = coords.copy()
        bad[0, 0] = np.inf
        with pytest.raises(InputDataError):
            SpatialDataset(("a", "b", "c"), bad, np.zeros(3))

    def test_with_values_swaps_outcome_only(self):
        ds = _square_dataset()
        ds2 = ds.with_values([9.0, 8.0, 7.0, 6.0])
        assert ds2.ids == ds.ids
        assert np.array_equal(ds2.coords, ds.coords)
        assert np.array_equal(ds2.values, [9.0, 8.0, 7.0, 6.0])


class TestCandidateCluster:
    def test_members_sorted_and_center_included(self):
        c = CandidateCluster(center=3, radius=1.0, members=(5, 3, 1))
        assert c.members == (1, 3, 5)
        assert c.size == 3

    def test_center_must_be_member(self):
        with pytest.raises(InputDataError):
            CandidateCluster(center=0, radius=1.0, members=(1, 2))

    def test_indicator(self):
        c = CandidateCluster(center=1, radius=0.5, members=(1, 3))
        assert np.array_equal(c.indicator(5), [0, 1, 0, 1, 0])


class TestPairwiseDistances:
    def test_three_four_five_triangle(self):
        coords = np.array([[0.0, 0.0], [3.0, 4.0], [10.0, 10.0]])
        d = pairwise_distances(coords)
        assert d[0, 1] == 5.0 and d[1, 0] == 5.0
        assert np.all(np.diag(d) == 0.0)

    def test_duplicate_coordinates_warn(self):
        coords = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        with pytest.warns(SarScanWarning):
            d = pairwise_distances(coords)
        assert d[0, 1] == 0.0

    def test_matches_double_loop(self):
        rng = np.random.default_rng(42)
        coords = rng.normal(size=(10, 2))
        d = pairwise_distances(coords)
        for i in range(10):
            for j in range(10):
                expected = np.hypot(*(coords[i] - coords[j]))
                assert d[i, j] == pytest.approx(expected, abs=1e-12)
        assert np.array_equal(d, d.T)


def _brute_force_member_sets(dist, max_fraction):
    """Independent enumeration: all capped within-radius sets, hashed."""
    n = dist.shape[0]
    cap = int(np.floor(n * max_fraction))
    sets = set()
    for center in range(n):
        for radius in np.unique(dist[center]):
            members = frozenset(np.flatnonzero(dist[center] <= radius).tolist())
            if len(members) <= cap:
                sets.add(members)
    return sets


class TestEnumerateCandidates:
    def test_two_sites_give_two_singletons(self):
        dist = np.array([[0.0, 1.0], [1.0, 0.0]])
        cands = enumerate_candidates(dist)
        assert sorted(c.members for c in cands) == [(0,), (1,)]

    def test_unit_square_sizes_capped_at_two(self):
        cands = enumerate_candidates(_square_dataset())
        assert all(c.size in (1, 2) for c in cands)

    def test_cap_binds_on_rectangle(self):
        # distinct distances, so 2-site windows exist but 3-site ones are capped
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [1.0, 2.0]])
        ds = SpatialDataset(("a", "b", "c", "d"), coords, np.zeros(4))
        sizes = {c.size for c in enumerate_candidates(ds)}
        assert sizes == {1, 2}

    def test_distance_ties_enter_together(self):
        # sites 1 and 2 are equidistant from site 0: windows centered at 0
        # must jump from the singleton straight to the 3-site set
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0],
                           [5.0, 0.0], [6.0, 0.0], [7.0, 0.0]])
        ds = SpatialDataset(tuple("abcdef"), coords, np.zeros(6))
        centered = [c.members for c in enumerate_candidates(ds) if c.center == 0]
        assert (0, 1, 2) in centered
        assert (0, 1) not in centered and (0, 2) not in centered

    def test_no_duplicate_member_sets(self):
        rng = np.random.default_rng(7)
        ds = SpatialDataset(tuple(str(i) for i in range(25)),
                            rng.normal(size=(25, 2)), np.zeros(25))
        cands = enumerate_candidates(ds)
        sets = [c.members for c in cands]
        assert len(sets) == len(set(sets))

    def test_members_match_radius_definition(self):
        rng = np.random.default_rng(3)
        ds = SpatialDataset(tuple(str(i) for i in range(20)),
                            rng.normal(size=(20, 2)), np.zeros(20))
        dist = pairwise_distances(ds)
        for c in enumerate_candidates(ds):
            expected = tuple(np.flatnonzero(dist[c.center] <= c.radius).tolist())
            assert c.members == expected
            assert c.size <= 10

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(11)
        for trial in range(5):
            n = int(rng.integers(5, 30))
            coords = rng.normal(size=(n, 2))
            dist = pairwise_distances(coords)
            got = {frozenset(c.members) for c in enumerate_candidates(dist)}
            assert got == _brute_force_member_sets(dist, 0.5)

    def test_french_layout_count_vs_oracle(self):
        from sarscan import french94_layout
        ds, _, _ = french94_layout()
        cands = enumerate_candidates(ds)
        assert len(cands) <= 94 * 47
        oracle = _brute_force_member_sets(pairwise_distances(ds), 0.5)
        assert {frozenset(c.members) for c in cands} == oracle
        assert len(cands) == len(oracle)

    def test_enumeration_is_deterministic(self):
        ds = _square_dataset()
        a = enumerate_candidates(ds)
        b = enumerate_candidates(ds)
        assert [(c.center, c.members, c.radius) for c in a] == \
               [(c.center, c.members, c.radius) for c in b]

    def test_rejects_bad_max_fraction(self):
        ds = _square_dataset()
        for bad in (0.0, -0.1, 0.6, 1.0):
            with pytest.raises(InputDataError):
                enumerate_candidates(ds, max_fraction=bad)

    def test_rejects_zero_cap(self):
        dist = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(InputDataError):
            enumerate_candidates(dist, max_fraction=0.4)  # floor(2*0.4) = 0


class TestMembershipMatrix:
    def test_rows_are_indicators(self):
        cands = [CandidateCluster(0, 1.0, (0, 2)), CandidateCluster(1, 0.0, (1,))]
        ind = membership_matrix(cands, 4)
        assert ind.shape == (2, 4)
        dense = ind.toarray()
        assert np.array_equal(dense[0], [1, 0, 1, 0])
        assert np.array_equal(dense[1], [0, 1, 0, 0])


class TestCsvLoading:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "data.csv"
        p.write_text("id,x,y,value\nA,0.0,0.0,1.5\nB,1.0,0.0,2.5\nC,0.0,1.0,-3.0\n")
        ds = load_dataset_csv(p)
        assert ds.ids == ("A", "B", "C")
        assert np.array_equal(ds.values, [1.5, 2.5, -3.0])

    def test_malformed_row_reports_line_number(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,x,y,value\nA,0,0,1\nB,oops,0,2\nC,0,1,3\n")
        with pytest.raises(InputDataError, match="line 3"):
            load_dataset_csv(p)

    def test_wrong_header_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("site,x,y,value\nA,0,0,1\n")
        with pytest.raises(InputDataError, match="header"):
            load_dataset_csv(p)

    def test_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "data.csv"
        p.write_text("id,x,y,value\nA,0,0,1\n\nB,1,0,2\nC,0,1,3\n")
        assert load_dataset_csv(p).n == 3

    def test_wrong_field_count_reports_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,x,y,value\nA,0,0,1\nB,1,0\nC,0,1,3\n")
        with pytest.raises(InputDataError, match="line 3"):
            load_dataset_csv(p)


class TestGeojsonLoading:
    def test_point_features(self, tmp_path):
        doc = {"type": "FeatureCollection", "features": [
            {"type": "Feature", "id": "p1",
             "geometry": {"type": "Point", "coordinates": [0.0, 0.0]},
             "properties": {"value": 1.0}},
            {"type": "Feature", "id": "p2",
             "geometry": {"type": "Point", "coordinates": [1.0, 0.0]},
             "properties": {"value": 2.0}},
            {"type": "Feature", "id": "p3",
             "geometry": {"type": "Point", "coordinates": [0.0, 1.0]},
             "properties": {"value": 3.0}},
        ]}
        p = tmp_path / "pts.geojson"
        import json
        p.write_text(json.dumps(doc))
        ds = load_dataset_geojson(p)
        assert ds.ids == ("p1", "p2", "p3")
        assert np.array_equal(ds.values, [1.0, 2.0, 3.0])

    def test_missing_value_property(self, tmp_path):
        doc = {"type": "FeatureCollection", "features": [
            {"type": "Feature",
             "geometry": {"type": "Point", "coordinates": [0.0, 0.0]},
             "properties": {"rate": 1.0}}]}
        p = tmp_path / "pts.geojson"
        import json
        p.write_text(json.dumps(doc))
        with pytest.raises(InputDataError, match="value"):
            load_dataset_geojson(p)

    def test_non_point_rejected(self, tmp_path):
        doc = {"type": "FeatureCollection", "features": [
            {"type": "Feature",
             "geometry": {"type": "Polygon", "coordinates": []},
             "properties": {"value": 1.0}}]}
        p = tmp_path / "poly.geojson"
        import json
        p.write_text(json.dumps(doc))
        with pytest.raises(InputDataError, match="Point"):
            load_dataset_geojson(p)
