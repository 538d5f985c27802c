"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are also
collected in the "acceptance criteria" section of the terminal summary.
"""

import csv
import itertools
import math
import time
from datetime import date

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from otseries.barycenter import GridHistogram, barycenter_objective, discretize, wasserstein_barycenter
from otseries.cli import main
from otseries.covariates import shapley_values
from otseries.hierarchy import Clustering, ward_linkage
from otseries.preprocess import embed_city
from otseries.spatial import morans_i, morans_i_labels, reaction_time
from otseries.synthetic import synthetic_cities
from otseries.transport import cost_matrix, wasserstein_exact, wasserstein_sinkhorn


def brute_force_wp(x, y, p):
    C = cost_matrix(x, y, p)
    n = C.shape[0]
    best = min(sum(C[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n)))
    return (best / n) ** (1 / p)


def adjusted_rand_index(a, b):
    """Hubert-Arabie ARI from the contingency table."""
    a, b = np.asarray(a), np.asarray(b)
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ua.size, ub.size), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)

    def pairs(v):
        return sum(math.comb(int(x), 2) for x in np.ravel(v))

    index = pairs(table)
    rows, cols = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    expected = rows * cols / math.comb(a.size, 2)
    top = (rows + cols) / 2
    return 1.0 if top == expected else (index - expected) / (top - expected)


def test_adjusted_rand_index_oracle():
    assert adjusted_rand_index([1, 1, 2, 2], [5, 5, 7, 7]) == 1.0
    # table [[2,1,0],[0,1,2]]: index 2, row pairs 6, column pairs 3, expected 6*3/15
    a, b = [1, 1, 1, 2, 2, 2], [1, 1, 2, 2, 3, 3]
    assert adjusted_rand_index(a, b) == pytest.approx((2 - 1.2) / (4.5 - 1.2), abs=1e-15)
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)


def test_reaction_time_fixture(acceptance):
    t0 = time.perf_counter()
    table = [
        (date(2020, 3, 19), 4),
        (date(2020, 4, 4), 20),
        (date(2020, 3, 31), 16),
        (date(2020, 3, 22), 7),
        (date(2020, 4, 6), 22),
        (None, 85),
    ]
    got = [reaction_time(d) for d, _ in table]
    elapsed = time.perf_counter() - t0
    ok = got == [rt for _, rt in table] and elapsed < 1.0
    acceptance("reaction-time fixture", ok, f"got {got}, {elapsed:.3f}s")


def test_exact_ot_oracle(acceptance):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 7))
        dim = int(rng.integers(1, 4))
        p = int(rng.choice([1, 2]))
        x, y = rng.random((n, dim)), rng.random((n, dim))
        worst = max(worst, abs(wasserstein_exact(x, y, p)[0] - brute_force_wp(x, y, p)))
    elapsed = time.perf_counter() - t0
    acceptance("exact OT equals brute force", worst <= 1e-9 and elapsed < 10, f"max err {worst:.2e}, {elapsed:.2f}s")


def test_metric_axioms(acceptance):
    rng = np.random.default_rng(99)
    sym = ident = tri = True
    for _ in range(100):
        a, b, c = (rng.random((int(rng.integers(1, 9)), 3)) for _ in range(3))
        dab, dba = wasserstein_exact(a, b)[0], wasserstein_exact(b, a)[0]
        dbc, dac = wasserstein_exact(b, c)[0], wasserstein_exact(a, c)[0]
        sym &= dab == dba
        ident &= wasserstein_exact(a, a)[0] <= 1e-9 and wasserstein_exact(a, a[rng.permutation(len(a))])[0] <= 1e-9
        ident &= dab > 1e-9
        tri &= dac <= dab + dbc + 1e-9
    acceptance("metric axioms", sym and ident and tri, f"symmetry={sym} identity={ident} triangle={tri}")


def test_sinkhorn_accuracy(acceptance):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst, all_converged = 0.0, True
    for _ in range(50):
        x, y = rng.random((16, 3)), rng.random((16, 3))
        d, _, ok = wasserstein_sinkhorn(x, y, epsilon=1e-3)
        exact = wasserstein_exact(x, y)[0]
        worst = max(worst, abs(d - exact) / exact)
        all_converged &= ok
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.02 and all_converged and elapsed < 30
    acceptance("sinkhorn within 2% of exact", ok, f"max rel err {worst:.2e}, converged={all_converged}, {elapsed:.1f}s")


def test_ward_fixture(acceptance):
    d = np.array([[0, 1, 4], [1, 0, 5], [4, 5, 0]], dtype=float)
    dend = ward_linkage(d, ["A", "B", "C"])
    # Lance-Williams on squared distances: (2*16 + 2*25 - 1) / 3 = 27
    fixture = list(dend.heights) == [1.0, math.sqrt(27)] and tuple(dend.merges[0, :2]) == (0, 1)
    rng = np.random.default_rng(5)
    monotone = True
    for _ in range(100):
        k = int(rng.integers(2, 20))
        m = rng.random((k, k))
        m = m + m.T
        np.fill_diagonal(m, 0)
        monotone &= bool(np.all(np.diff(ward_linkage(m).heights) >= 0))
    acceptance("ward fixture and monotone heights", fixture and monotone, f"heights {[float(h) for h in dend.heights]}")


def test_barycenter_sanity(acceptance):
    t0 = time.perf_counter()
    records, _, _ = synthetic_cities(2, 92, seed=1)
    h = discretize(embed_city(records[0], "Mprime"), (20, 20, 20))
    # epsilon well below the squared bin width, so entropic blur is negligible
    single = wasserstein_barycenter([h], epsilon=1e-4)
    same = wasserstein_barycenter([h, h, h], epsilon=1e-4)
    err_single = float(np.abs(single.histogram.masses - h.masses).sum())
    err_same = float(np.abs(same.histogram.masses - h.masses).sum())
    r = 11
    a = GridHistogram((r, 1, 1), np.eye(r)[0])
    b = GridHistogram((r, 1, 1), np.eye(r)[-1])
    dirac = wasserstein_barycenter([a, b], epsilon=0.005)
    x = (np.arange(r) + 0.5) / r
    scan = x[np.argmin(0.5 * (x - x[0]) ** 2 + 0.5 * (x - x[-1]) ** 2)]
    mean_err = abs(dirac.histogram.mean()[0] - scan)
    elapsed = time.perf_counter() - t0
    ok = err_single <= 1e-6 and err_same <= 1e-6 and mean_err <= 0.05 and elapsed < 20
    acceptance(
        "barycenter sanity",
        ok,
        f"single L1 {err_single:.1e}, identical L1 {err_same:.1e}, dirac mean off {mean_err:.3f}, {elapsed:.1f}s",
    )


def test_barycenter_objective(acceptance):
    rng = np.random.default_rng(31)
    worst = -np.inf
    for i in range(20):
        hists = []
        for _ in range(3):
            m = rng.dirichlet(np.ones(512))
            if i % 2:
                m[rng.random(512) < 0.7] = 0
                m /= m.sum()
            hists.append(GridHistogram((8, 8, 8), m))
        res = wasserstein_barycenter(hists, epsilon=0.01)
        f_bar = barycenter_objective(res.histogram, hists)
        best_input = min(barycenter_objective(h, hists) for h in hists)
        worst = max(worst, f_bar - best_input)
    acceptance("barycenter objective sandwich", worst <= 1e-6, f"max f(bar) - min f(input) = {worst:.2e}")


def test_moran_fixtures(acceptance):
    rook = np.array([[0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0]], float)
    pairs = np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], float)
    checker = morans_i([1, 0, 0, 1], rook)
    paired = morans_i([1, 1, 0, 0], pairs)
    n = 30
    chain = np.zeros((n, n))
    chain[np.arange(n - 1), np.arange(1, n)] = chain[np.arange(1, n), np.arange(n - 1)] = 1
    c = Clustering(tuple(f"c{i}" for i in range(n)), np.repeat([1, 2, 3], 10))
    res = morans_i_labels(c, chain, n_perm=999, seed=0)
    floor = min([res.p_value, *res.p_values.values()])
    ok = checker == -1.0 and paired == 1.0 and floor >= 1 / 1000 and res.p_value == 1 / 1000
    acceptance("moran fixtures", ok, f"checkerboard {checker}, pairs {paired}, min p {floor}")


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    assert main(["synth", "--dir", str(root), "--n-cities", "30", "--n-clusters", "3", "--seed", "0"]) == 0
    cfg = str(root / "config.toml")
    t0 = time.perf_counter()
    code1 = main(["run", "--config", cfg, "--threads", "1", "--out", str(root / "t1"), "-q"])
    elapsed = time.perf_counter() - t0
    code8 = main(["run", "--config", cfg, "--threads", "8", "--out", str(root / "t8"), "-q"])
    return root, (code1, code8), elapsed


def test_end_to_end_recovery(acceptance, pipeline_runs):
    root, codes, elapsed = pipeline_runs
    with (root / "regimes.csv").open() as fh:
        planted = {r["city_id"]: int(r["regime"]) for r in csv.DictReader(fh)}
    with (root / "t1" / "cluster" / "labels.csv").open() as fh:
        found = {r["city_id"]: int(r["hc3"]) for r in csv.DictReader(fh)}
    ids = sorted(planted)
    ari = adjusted_rand_index([planted[i] for i in ids], [found[i] for i in ids])
    ok = codes[0] == 0 and ari >= 0.9 and elapsed < 120
    acceptance("synthetic recovery", ok, f"ARI {ari:.3f}, pipeline {elapsed:.1f}s")


def test_shapley_axioms(acceptance):
    rng = np.random.default_rng(17)

    def model(X):
        return 2.0 * X[:, 0] - X[:, 1] * X[:, 2] + np.sin(3 * X[:, 3])

    X = np.c_[rng.random((10, 4)), rng.random(10)]  # column 4 is ignored by the model
    background = np.c_[rng.random((60, 4)), rng.random(60)]
    est = shapley_values(model, X, background, n_samples=2000, seed=17)
    null = float(np.abs(est.values[:, 4, 0]).max())
    gap = model(X) - model(background).mean()
    off = np.abs(est.values[:, :, 0].sum(axis=1) - gap)
    efficient = bool(np.all(off <= 3 * est.baseline_error[:, 0]))
    acceptance("shapley axioms", null <= 0.01 and efficient, f"max null |phi| {null:.1e}, efficiency ok={efficient}")


def test_determinism_across_threads(acceptance, pipeline_runs):
    root, codes, _ = pipeline_runs
    one, eight = root / "t1", root / "t8"
    files = sorted(p.relative_to(one) for p in one.rglob("*") if p.is_file() and ".cache" not in p.parts)
    other = sorted(p.relative_to(eight) for p in eight.rglob("*") if p.is_file() and ".cache" not in p.parts)
    differing = [str(p) for p in files if (one / p).read_bytes() != (eight / p).read_bytes()]
    ok = codes == (0, 0) and files == other and not differing and len(files) > 20
    acceptance("determinism 1 vs 8 threads", ok, f"{len(files)} artifacts, differing: {differing[:3]}")
