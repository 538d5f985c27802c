import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.hierarchy import linkage as scipy_linkage
from scipy.spatial.distance import squareform

from otseries.exceptions import ValidationError
from otseries.hierarchy import (
    Clustering,
    Dendrogram,
    compare_clusterings,
    flat_cut,
    height_profile,
    linkage,
    seriate,
    spatial_homogeneity,
    ward_linkage,
)
from otseries.transport import DistanceMatrix


def random_distances(rng, k):
    pts = rng.random((k, 3))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    noise = rng.random((k, k)) * 0.3
    d = d + noise + noise.T
    np.fill_diagonal(d, 0)
    return d


def test_two_leaves():
    dend = ward_linkage(np.array([[0, 1.0], [1.0, 0]]), ["A", "B"])
    np.testing.assert_array_equal(dend.merges, [[0, 1, 1.0, 2]])


def test_three_point_worked_example():
    # squared update: ((1+1)*16 + (1+1)*25 - 1*1) / 3 = 27
    d = np.array([[0, 1, 4], [1, 0, 5], [4, 5, 0]], dtype=float)
    dend = ward_linkage(d, ["A", "B", "C"])
    assert tuple(dend.merges[0, :2]) == (0, 1)
    assert dend.merges[0, 2] == 1.0
    assert dend.merges[1, 2] == math.sqrt(27)


def test_equidistant_ties_break_lexicographically():
    d = np.ones((4, 4)) - np.eye(4)
    dend = ward_linkage(d, list("ABCD"))
    assert tuple(dend.merges[0, :2]) == (0, 1)
    assert tuple(dend.merges[1, :2]) == (2, 3)
    assert np.all(np.diff(dend.heights) >= 0)


def test_matches_scipy_ward_heights(rng):
    for _ in range(30):
        k = int(rng.integers(2, 15))
        d = random_distances(rng, k)
        ours = ward_linkage(d).heights
        ref = scipy_linkage(squareform(d, checks=False), method="ward")[:, 2]
        np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31))
def test_heights_monotone(k, seed):
    d = random_distances(np.random.default_rng(seed), k)
    assert np.all(np.diff(ward_linkage(d).heights) >= -1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2**31))
def test_flat_cuts_nest(k, seed):
    dend = ward_linkage(random_distances(np.random.default_rng(seed), k))
    for c in range(2, k + 1):
        fine, coarse = flat_cut(dend, c), flat_cut(dend, c - 1)
        for lab in range(1, c + 1):
            parents = {coarse.as_dict()[i] for i in fine.members(lab)}
            assert len(parents) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2**31))
def test_permutation_invariance(k, seed):
    r = np.random.default_rng(seed)
    d = random_distances(r, k)
    ids = [f"c{i:02d}" for i in range(k)]
    perm = r.permutation(k)
    a = ward_linkage(d, ids)
    b = ward_linkage(d[np.ix_(perm, perm)], [ids[i] for i in perm])
    for c in range(1, k + 1):
        assert flat_cut(a, c).same_partition(flat_cut(b, c))
    assert seriate(a) == seriate(b)


def test_rejects_bad_input():
    with pytest.raises(ValidationError):
        ward_linkage(np.array([[0, 1], [2, 0]], dtype=float))
    with pytest.raises(ValidationError):
        ward_linkage(np.array([[0.0]]))


def test_custom_linkage_hook():
    def single(d2_ki, d2_kj, d2_ij, n_i, n_j, n_k):
        return np.minimum(d2_ki, d2_kj)

    d = np.array([[0, 1, 4], [1, 0, 5], [4, 5, 0]], dtype=float)
    dend = linkage(d, single)
    assert dend.method == "single"
    np.testing.assert_allclose(dend.heights, [1, 4])


def test_flat_cut_examples():
    d = np.array([[0, 1, 4], [1, 0, 5], [4, 5, 0]], dtype=float)
    dend = ward_linkage(d, ["A", "B", "C"])
    assert list(flat_cut(dend, 3).labels) == [1, 2, 3]
    assert list(flat_cut(dend, 1).labels) == [1, 1, 1]
    assert list(flat_cut(dend, 2).labels) == [1, 1, 2]
    with pytest.raises(ValueError):
        flat_cut(dend, 0)
    with pytest.raises(ValueError):
        flat_cut(dend, 4)


def test_seriation_examples():
    assert seriate(ward_linkage(np.array([[0, 1.0], [1.0, 0]]), ["A", "B"])) == ["A", "B"]
    d = np.array([[0, 1, 4], [1, 0, 5], [4, 5, 0]], dtype=float)
    assert seriate(ward_linkage(d, ["A", "B", "C"])) == ["A", "B", "C"]
    rev = d[::-1, ::-1]
    assert seriate(ward_linkage(rev, ["C", "B", "A"])) == ["A", "B", "C"]


def test_dendrogram_serialization():
    d = np.array([[0, 1, 4], [1, 0, 5], [4, 5, 0]], dtype=float)
    dend = ward_linkage(DistanceMatrix(("A", "B", "C"), d))
    back = Dendrogram.from_json(json.loads(json.dumps(dend.to_json())))
    assert back.merges.tobytes() == dend.merges.tobytes() and back.ids == dend.ids
    h = math.sqrt(27)
    assert dend.to_newick() == f"((A:1.0,B:1.0):{h - 1!r},C:{h!r});"
    with pytest.raises(ValidationError):
        Dendrogram(("A", "B", "C"), [[0, 1, 1, 2], [0, 2, 2, 2]])


def test_height_profile():
    d = np.array([[0, 1, 4], [1, 0, 5], [4, 5, 0]], dtype=float)
    prof = height_profile(ward_linkage(d))
    assert prof == [(2, math.sqrt(27)), (3, 1.0)]


def test_clustering_invariants():
    with pytest.raises(ValidationError):
        Clustering(("a", "b"), [1, 3])
    with pytest.raises(ValidationError):
        Clustering(("a", "a"), [1, 2])


def test_compare_contingency_example():
    ids = ("a", "b", "c", "d")
    g = compare_clusterings([Clustering(ids, [1, 1, 2, 2], "A"), Clustering(ids, [1, 2, 2, 2], "B")])
    assert {(a, b): n for _, a, b, n in g.edges} == {(1, 1): 1, (1, 2): 1, (2, 2): 2}
    assert g.summaries[0]["edge_count"] == 3


def test_compare_identical_and_layers():
    ids = tuple("abcdef")
    x = Clustering(ids, [1, 2, 3, 1, 2, 3], "X")
    g = compare_clusterings([x, x])
    assert len(g.edges) == 3 and g.summaries[0]["crossings"] == 0
    y = Clustering(ids, [1, 1, 1, 2, 2, 2], "Y")
    g3 = compare_clusterings([x, y, x])
    assert {e[0] for e in g3.edges} == {0, 1}
    for col in (0, 1):
        assert sum(n for c, _, _, n in g3.edges if c == col) == 6
    dot = g3.to_dot()
    assert dot.startswith("digraph") and dot.count("subgraph cluster_") == 3
    assert 'c0_1 -> c1_1 [label="1"' in dot
    assert len(g3.to_json()["columns"]) == 3


def test_compare_crossings_under_orders():
    ids = tuple("abcd")
    x = Clustering(ids, [1, 1, 2, 2], "X")
    y = Clustering(ids, [2, 2, 1, 1], "Y")
    assert compare_clusterings([x, y]).summaries[0]["crossings"] == 1
    g = compare_clusterings([x, y], [list("abcd"), list("abcd")])
    assert g.summaries[0]["crossings"] == 0


def test_compare_mismatched_ids():
    with pytest.raises(ValidationError):
        compare_clusterings([Clustering(("a", "b"), [1, 2]), Clustering(("a", "c"), [1, 2])])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=2, max_size=20))
def test_self_comparison_has_one_edge_per_cluster(raw):
    relabel = {}
    labels = [relabel.setdefault(v, len(relabel) + 1) for v in raw]
    c = Clustering(tuple(f"i{j}" for j in range(len(labels))), labels)
    g = compare_clusterings([c, c])
    assert len(g.edges) == c.n_clusters


def test_spatial_homogeneity_examples():
    c = Clustering(("a", "b", "c", "d"), [1, 1, 2, 3])
    assert spatial_homogeneity(c, {"a": "S1", "b": "S1", "c": "S2", "d": "S2"}) == 1.5
    one = Clustering(("a", "b"), [1, 1])
    assert spatial_homogeneity(one, {"a": "S", "b": "S"}) == 1.0
    each = Clustering(tuple("abcdef"), [1, 2, 3, 4, 5, 6])
    assert spatial_homogeneity(each, dict(zip("abcdef", ["S", "S", "S", "T", "T", "T"]))) == 3.0
    with pytest.raises(ValidationError):
        spatial_homogeneity(one, {"a": "S"})
