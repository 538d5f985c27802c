from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otseries.data import SpatialWeights
from otseries.exceptions import UndefinedStatisticError, ValidationError
from otseries.hierarchy import Clustering
from otseries.spatial import knn_weights, load_weights, morans_i, morans_i_labels, reaction_time


def moran_oracle(x, w):
    """Moran's I written out term by term."""
    n = len(x)
    mean = sum(x) / n
    num = sum(w[i][j] * (x[i] - mean) * (x[j] - mean) for i in range(n) for j in range(n))
    den = sum((v - mean) ** 2 for v in x)
    s0 = sum(w[i][j] for i in range(n) for j in range(n))
    return n / s0 * num / den


ROOK_2X2 = [[0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0]]
PAIRS = [[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]


def chain(n):
    w = np.zeros((n, n))
    idx = np.arange(n - 1)
    w[idx, idx + 1] = w[idx + 1, idx] = 1
    return w


@pytest.mark.parametrize(
    "stay, expected",
    [(date(2020, 3, 19), 4), (date(2020, 4, 4), 20), (date(2020, 3, 31), 16), (date(2020, 3, 22), 7),
     (date(2020, 4, 6), 22), (None, 85)],
)
def test_reaction_time_table(stay, expected):
    assert reaction_time(stay) == expected


def test_reaction_time_sanity_bound():
    with pytest.raises(ValidationError):
        reaction_time(date(2018, 1, 1))
    assert reaction_time(None, absent_value=99) == 99


@settings(max_examples=50, deadline=None)
@given(st.integers(-300, 300), st.integers(-5000, 5000))
def test_reaction_time_translation(offset, shift):
    ref = date(2020, 3, 15) + timedelta(days=shift)
    stay = ref + timedelta(days=offset)
    assert reaction_time(stay, ref) == reaction_time(stay + timedelta(days=7), ref + timedelta(days=7)) == offset


def test_moran_fixtures():
    assert moran_oracle([1, 0, 0, 1], ROOK_2X2) == -1.0
    assert morans_i([1, 0, 0, 1], np.array(ROOK_2X2, float)) == -1.0
    assert moran_oracle([1, 1, 0, 0], PAIRS) == 1.0
    assert morans_i([1, 1, 0, 0], np.array(PAIRS, float)) == 1.0


def test_moran_errors():
    with pytest.raises(UndefinedStatisticError):
        morans_i([2, 2, 2, 2], np.array(ROOK_2X2, float))
    with pytest.raises(ValidationError):
        morans_i([1, 0, 0, 1], np.zeros((4, 4)))
    with pytest.raises(ValidationError):
        morans_i([1, 0], np.array(ROOK_2X2, float))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(-10, 10).filter(lambda a: abs(a) > 0.1), st.floats(-100, 100))
def test_moran_affine_invariance_and_oracle(seed, a, b):
    r = np.random.default_rng(seed)
    n = 8
    w = (r.random((n, n)) < 0.4).astype(float)
    w = np.triu(w, 1)
    w = w + w.T
    w[0, 1] = w[1, 0] = 1.0
    x = r.normal(size=n)
    base = morans_i(x, w)
    assert base == pytest.approx(moran_oracle(list(x), w.tolist()), abs=1e-12)
    assert morans_i(a * x + b, w) == pytest.approx(base, abs=1e-9)


def test_label_moran_blocks_on_chain():
    n = 30
    c = Clustering(tuple(f"c{i}" for i in range(n)), np.repeat([1, 2, 3], 10))
    res = morans_i_labels(c, chain(n), n_perm=999, seed=1)
    assert res.p_value <= 0.01
    assert all(p <= 0.01 for p in res.p_values.values())
    assert res.p_value == pytest.approx(1 / 1000)
    sizes = np.array([10, 10, 10])
    assert res.statistic == pytest.approx(float(sizes @ [res.i_values[k] for k in (1, 2, 3)] / n))


def test_label_moran_random_labels_rarely_significant():
    n = 30
    hits = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        raw = r.integers(1, 4, n)
        raw[:3] = [1, 2, 3]
        c = Clustering(tuple(f"c{i}" for i in range(n)), raw)
        hits += morans_i_labels(c, chain(n), n_perm=199, seed=seed).p_value <= 0.01
    assert hits <= 2


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 60))
def test_permutation_p_values_in_range(seed, n_perm):
    r = np.random.default_rng(seed)
    raw = np.r_[[1, 2], r.integers(1, 3, 10)]
    c = Clustering(tuple(f"c{i}" for i in range(12)), raw)
    res = morans_i_labels(c, chain(12), n_perm=n_perm, seed=seed)
    for p in [res.p_value, *res.p_values.values()]:
        assert 1 / (n_perm + 1) - 1e-15 <= p <= 1


def test_label_moran_reorders_weights():
    ids = ("a", "b", "c", "d")
    w = SpatialWeights(("d", "c", "b", "a"), np.array(PAIRS[::-1], float)[:, ::-1])
    c = Clustering(ids, [1, 1, 2, 2])
    res = morans_i_labels(c, w, n_perm=9)
    assert res.i_values[1] == pytest.approx(1.0)


def test_label_moran_needs_two_clusters():
    with pytest.raises(UndefinedStatisticError):
        morans_i_labels(Clustering(("a", "b"), [1, 1]), np.array([[0, 1.0], [1, 0]]))


def test_load_weights(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("src_id,dst_id,weight\na,b,1\nb,c,2\nc,b,2\n")
    w = load_weights(p)
    assert w.ids == ("a", "b", "c")
    np.testing.assert_array_equal(w.weights, [[0, 1, 0], [1, 0, 2], [0, 2, 0]])
    bad = tmp_path / "bad.csv"
    bad.write_text("src_id,dst_id,weight\na,b,1\nb,a,3\n")
    with pytest.raises(ValidationError):
        load_weights(bad)
    assert load_weights(bad, asymmetric=True).weights[1, 0] == 3
    loop = tmp_path / "loop.csv"
    loop.write_text("src_id,dst_id,weight\na,a,1\n")
    with pytest.raises(ValidationError):
        load_weights(loop)


def test_knn_weights():
    lat = [0.0, 0.0, 0.0, 10.0]
    lon = [0.0, 1.0, 2.0, 0.0]
    w = knn_weights(list("abcd"), lat, lon, k=1)
    assert w.asymmetric
    np.testing.assert_allclose(w.weights.sum(axis=1), 1.0)
    assert w.weights[0, 1] == 1.0 and w.weights[3, 0] == 1.0
    with pytest.raises(ValueError):
        knn_weights(list("ab"), [0, 1], [0, 1], k=2)
