"""Exact and entropic Wasserstein distances between uniform point clouds."""

from __future__ import annotations

import csv
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .exceptions import ConvergenceWarning, OTSeriesError, SizeError, ValidationError
from .preprocess import PointCloud

MARGINAL_ATOL = 1e-8


def _import_pot():
    # POT probes every installed array backend on import; only numpy is used here.
    for name in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot

    return ot


@dataclass(frozen=True, eq=False)
class TransportPlan:
    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    info: dict = field(default_factory=dict)

    def marginal_error(self) -> float:
        """Largest L1 deviation of the plan's marginals from the prescribed ones."""
        return max(
            float(np.abs(self.matrix.sum(axis=1) - self.row_marginal).sum()),
            float(np.abs(self.matrix.sum(axis=0) - self.col_marginal).sum()),
        )

    def cost(self, cost_matrix) -> float:
        return float(np.sum(self.matrix * cost_matrix))


def _points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise SizeError("empty point cloud")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("point cloud has non-finite coordinates")
    return pts


def cost_matrix(x, y, p: float = 2.0) -> np.ndarray:
    """Euclidean ground cost raised to the power ``p``."""
    x, y = _points(x), _points(y)
    if x.shape[1] != y.shape[1]:
        raise ValidationError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if p < 1:
        raise ValueError("p must be >= 1")
    d = cdist(x, y, metric="euclidean")
    return d if p == 1 else d**p


def wasserstein_exact(a, b, p: float = 2.0, method: str = "auto") -> tuple[float, TransportPlan]:
    """Exact W_p between two uniformly weighted point clouds.

    Equal-size clouds are solved as a linear assignment problem (an optimal
    vertex of the uniform transportation polytope is a scaled permutation).
    Otherwise the dense bipartite transportation problem is solved by network
    simplex. ``method`` forces one route: ``"assignment"`` or
    ``"network_simplex"``. The pair is always solved in a canonical
    orientation so that swapping the arguments gives a bit-identical
    distance and the transposed plan.
    """
    x, y = _points(a), _points(b)
    if (x.shape[0], x.tobytes()) > (y.shape[0], y.tobytes()):
        dist, plan = wasserstein_exact(y, x, p, method)
        return dist, TransportPlan(plan.matrix.T, plan.col_marginal, plan.row_marginal, dict(plan.info))
    C = cost_matrix(x, y, p)
    n, m = C.shape
    wa, wb = np.full(n, 1.0 / n), np.full(m, 1.0 / m)
    if method == "auto":
        method = "assignment" if n == m else "network_simplex"
    if method == "assignment":
        if n != m:
            raise ValueError("assignment route needs equal-size clouds")
        rows, cols = linear_sum_assignment(C)
        plan = np.zeros_like(C)
        plan[rows, cols] = 1.0 / n
        total = C[rows, cols].sum() / n
    elif method == "network_simplex":
        ot = _import_pot()
        plan, log = ot.emd(wa, wb, C, numItermax=1_000_000, log=True)
        if log.get("warning"):
            raise OTSeriesError(f"network simplex failed: {log['warning']}")
        total = float(np.sum(plan * C))
    else:
        raise ValueError(f"unknown exact method {method!r}")
    dist = max(float(total), 0.0) ** (1.0 / p)
    return dist, TransportPlan(plan, wa, wb, {"method": method})


def _g_update(C, f, lb, eps):
    return eps * (lb - logsumexp((f[:, None] - C) / eps, axis=0))


def _row_error(C, f, g, la, eps):
    logp = (f[:, None] + g[None, :] - C) / eps
    row = np.exp(logsumexp(logp, axis=1))
    return float(np.abs(row - np.exp(la)).sum()), logp


def _newton_direction(logp, la, lb, eps):
    """Newton step on ``f`` for the row-marginal residual, columns held exact."""
    P = np.exp(logp)
    r = P.sum(axis=1)
    J = np.diag(r) - (P / np.exp(lb)[None, :]) @ P.T
    delta, *_ = np.linalg.lstsq(J, eps * (np.exp(la) - r), rcond=1e-13)
    return delta - delta.mean()


def _sinkhorn_log(C, la, lb, eps, f, g, n_iter, tol, history=None, newton=False):
    """Log-domain Sinkhorn iterations; returns potentials, final L1 row error, iterations.

    With ``newton`` each iteration first tries a damped Newton step on the
    row potentials and keeps it only if the marginal violation drops below
    what the plain alternating update would give, so the recorded violation
    never increases.
    """
    err = np.inf
    it = 0
    logp = None
    for it in range(1, n_iter + 1):
        f_s = eps * (la - logsumexp((g[None, :] - C) / eps, axis=1))
        g_s = _g_update(C, f_s, lb, eps)
        err_s, logp_s = _row_error(C, f_s, g_s, la, eps)
        f, g, err, logp = f_s, g_s, err_s, logp_s
        if newton and err_s > tol:
            try:
                delta = _newton_direction(logp_s, la, lb, eps)
            except np.linalg.LinAlgError:
                delta = None
            step = 1.0
            while delta is not None and step > 1e-3:
                f_n = f_s + step * delta
                g_n = _g_update(C, f_n, lb, eps)
                err_n, logp_n = _row_error(C, f_n, g_n, la, eps)
                if np.isfinite(err_n) and err_n < err:
                    f, g, err, logp = f_n, g_n, err_n, logp_n
                    break
                step *= 0.5
        if history is not None:
            history.append(err)
        if err < tol:
            break
    return f, g, err, it


def wasserstein_sinkhorn(
    a,
    b,
    p: float = 2.0,
    epsilon: float = 1e-2,
    max_iter: int = 10_000,
    tol: float = 1e-9,
    scaling: float = 0.5,
    newton: bool = True,
) -> tuple[float, TransportPlan, bool]:
    """Entropic OT between uniform clouds, reported with the sharp cost.

    Iterates in the log domain so small ``epsilon`` cannot overflow. The
    regularisation is annealed geometrically from the largest cost down to
    ``epsilon`` (warm-started potentials) before iterating at ``epsilon``
    until the L1 row-marginal violation falls below ``tol``; column
    marginals are exact after every update. Small ``epsilon`` makes plain
    alternating updates crawl, so by default each iteration is accelerated
    with a safeguarded Newton step. The distance is
    ``(sum(plan * C)) ** (1/p)`` without the entropy term. On
    non-convergence the final iterate is returned with ``converged=False``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    C = cost_matrix(a, b, p)
    n, m = C.shape
    la, lb = np.full(n, -np.log(n)), np.full(m, -np.log(m))
    f, g = np.zeros(n), np.zeros(m)
    warm = 0
    eps = max(float(C.max()), epsilon)
    while scaling and eps > epsilon:
        f, g, _, k = _sinkhorn_log(C, la, lb, eps, f, g, 10, np.inf)
        warm += k
        eps = max(eps * scaling, epsilon)
    history: list[float] = []
    f, g, err, it = _sinkhorn_log(C, la, lb, epsilon, f, g, max_iter, tol, history, newton)
    plan = np.exp((f[:, None] + g[None, :] - C) / epsilon)
    converged = err < tol
    if n == 1 or m == 1:
        # a single row or column admits only the product coupling
        plan = np.outer(np.exp(la), np.exp(lb))
        converged = True
    total = float(np.sum(plan * C))
    info = {
        "method": "sinkhorn",
        "epsilon": epsilon,
        "iterations": it,
        "warmup_iterations": warm,
        "marginal_errors": history,
        "potentials": (f, g),
    }
    return max(total, 0.0) ** (1.0 / p), TransportPlan(plan, np.exp(la), np.exp(lb), info), converged


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    ids: tuple[str, ...]
    d: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        d = np.array(self.d, dtype=float)
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        check_distance_matrix(d, len(self.ids))

    def __len__(self):
        return len(self.ids)

    def reorder(self, order: Sequence[str]) -> "DistanceMatrix":
        pos = {c: i for i, c in enumerate(self.ids)}
        idx = np.array([pos[c] for c in order])
        return DistanceMatrix(order, self.d[np.ix_(idx, idx)], dict(self.info))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.ids)
            for row in self.d:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "DistanceMatrix":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValidationError(f"{path}: empty distance matrix file")
        ids = rows[0]
        try:
            d = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
        except ValueError:
            raise ValidationError(f"{path}: non-numeric distance entry") from None
        return cls(ids, d.reshape(len(rows) - 1, -1))

    def save_npz(self, path, key: str = "") -> None:
        with open(path, "wb") as fh:
            np.savez(fh, ids=np.array(self.ids), d=self.d, key=np.array(key),
                     info=np.array(json.dumps(_jsonable(self.info), sort_keys=True)))

    @classmethod
    def load_npz(cls, path, key: str | None = None) -> "DistanceMatrix":
        """Load a cached matrix; returns None when ``key`` does not match the stored one."""
        with np.load(path, allow_pickle=False) as z:
            if key is not None and str(z["key"]) != key:
                return None
            return cls(tuple(str(i) for i in z["ids"]), z["d"], json.loads(str(z["info"])))


def _jsonable(info):
    return {k: v for k, v in info.items() if isinstance(v, (str, int, float, bool, list, type(None)))}


def check_distance_matrix(d: np.ndarray, k: int | None = None, atol: float = 1e-12) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValidationError(f"distance matrix must be square, got shape {d.shape}")
    if k is not None and d.shape[0] != k:
        raise ValidationError(f"distance matrix has {d.shape[0]} rows for {k} ids")
    if not np.all(np.isfinite(d)):
        raise ValidationError("distance matrix has non-finite entries")
    if np.any(d < 0):
        raise ValidationError("distance matrix has negative entries")
    if np.any(np.abs(d - d.T) > atol):
        raise ValidationError("distance matrix is not symmetric")
    if np.any(np.diag(d) != 0):
        raise ValidationError("distance matrix has a non-zero diagonal")
    return d


def distance_matrix(
    clouds: Sequence[PointCloud],
    solver: str = "exact",
    p: float = 2.0,
    epsilon: float = 1e-2,
    max_iter: int = 10_000,
    tol: float = 1e-9,
    n_jobs: int = 1,
) -> DistanceMatrix:
    """All pairwise distances, each unordered pair computed once.

    Pairs are independent and may run on ``n_jobs`` threads; every result is
    written to its own slot so the output does not depend on scheduling.
    """
    k = len(clouds)
    if k < 2:
        raise SizeError("distance_matrix needs at least two clouds")
    ids = [c.city_id for c in clouds]
    if len(set(ids)) != k:
        raise ValidationError("duplicate city ids among clouds")
    if solver not in ("exact", "sinkhorn"):
        raise ValueError(f"unknown solver {solver!r}")
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]

    def one(pair):
        i, j = pair
        try:
            if solver == "exact":
                return wasserstein_exact(clouds[i], clouds[j], p)[0], True
            dist, _, ok = wasserstein_sinkhorn(clouds[i], clouds[j], p, epsilon, max_iter, tol)
            return dist, ok
        except Exception as exc:
            raise OTSeriesError(f"distance between {ids[i]!r} and {ids[j]!r} failed: {exc}") from exc

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, pairs))
    else:
        results = [one(pr) for pr in pairs]

    d = np.zeros((k, k))
    failed = []
    for (i, j), (dist, ok) in zip(pairs, results):
        d[i, j] = d[j, i] = dist
        if not ok:
            failed.append([ids[i], ids[j]])
    if failed:
        warnings.warn(f"sinkhorn did not converge for {len(failed)} pairs", ConvergenceWarning, stacklevel=2)
    info = {"solver": solver, "p": float(p), "nonconverged_pairs": failed}
    if solver == "sinkhorn":
        info.update(epsilon=float(epsilon), max_iter=int(max_iter), tol=float(tol))
    return DistanceMatrix(ids, d, info)
