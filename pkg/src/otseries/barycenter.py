"""Fixed-support Wasserstein barycenters on a regular grid over the unit cube.

The squared Euclidean cost between bin centres separates over axes, so the
Gibbs kernel is a tensor product of small per-axis kernels and is never
formed densely; all scaling updates run in the log domain.
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import ConvergenceWarning, ValidationError
from .preprocess import PointCloud

MASS_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class GridHistogram:
    resolution: tuple[int, ...]
    masses: np.ndarray

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        if not res or any(r < 1 for r in res):
            raise ValidationError(f"invalid resolution {self.resolution}")
        m = np.array(self.masses, dtype=float).ravel()
        if m.size != int(np.prod(res)):
            raise ValidationError(f"{m.size} masses for resolution {res}")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValidationError("histogram masses must be finite and non-negative")
        if abs(m.sum() - 1.0) > 1e-9:
            raise ValidationError(f"histogram masses sum to {m.sum()!r}, not 1")
        m.setflags(write=False)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "masses", m)

    @property
    def grid(self) -> np.ndarray:
        return self.masses.reshape(self.resolution)

    def axis_centers(self) -> list[np.ndarray]:
        return [(np.arange(r) + 0.5) / r for r in self.resolution]

    def centers(self) -> np.ndarray:
        """Bin centres in flat (C) order, shape ``(bins, dim)``."""
        mesh = np.meshgrid(*self.axis_centers(), indexing="ij")
        return np.column_stack([g.ravel() for g in mesh])

    def mean(self) -> np.ndarray:
        return self.masses @ self.centers()

    def entropy(self) -> float:
        m = self.masses[self.masses > 0]
        return float(-(m * np.log(m)).sum())

    def to_csv(self, path) -> None:
        names = ["x", "y", "z"] if len(self.resolution) == 3 else [f"x{i}" for i in range(len(self.resolution))]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*names, "mass"])
            nz = np.flatnonzero(self.masses)
            for c, m in zip(self.centers()[nz], self.masses[nz]):
                w.writerow([*(repr(float(v)) for v in c), repr(float(m))])


@dataclass(frozen=True, eq=False)
class BarycenterResult:
    histogram: GridHistogram
    objective: float
    iterations: int
    converged: bool
    regularized_objective: float = float("nan")
    history: list = field(default_factory=list)


def discretize(cloud, resolution=(20, 20, 20)) -> GridHistogram:
    """Bin a uniformly weighted cloud; bins are half-open except the last, which is closed."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.atleast_2d(np.asarray(cloud, dtype=float))
    res = tuple(int(r) for r in resolution)
    if any(r < 1 for r in res):
        raise ValidationError(f"resolution components must be >= 1, got {resolution}")
    if pts.shape[1] != len(res):
        raise ValidationError(f"{pts.shape[1]}-D points for a {len(res)}-D grid")
    if np.any(~np.isfinite(pts)) or np.any(pts < 0) or np.any(pts > 1):
        raise ValidationError("points must lie in the closed unit cube")
    r = np.array(res)
    idx = np.minimum(np.floor(pts * r).astype(int), r - 1)
    flat = np.ravel_multi_index(idx.T, res)
    masses = np.bincount(flat, minlength=int(np.prod(res))) / len(pts)
    return GridHistogram(res, masses)


def _axis_log_kernels(resolution, epsilon):
    out = []
    for r in resolution:
        x = (np.arange(r) + 0.5) / r
        c = (x[:, None] - x[None, :]) ** 2
        out.append((-c / epsilon, c))
    return out


def _log_matmul(lk, v):
    """``log(exp(lk) @ exp(v))`` contracting axis 1 of ``v`` (shape ``(B, r, rest)``)."""
    m = v.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    k = np.exp(lk)
    with np.errstate(divide="ignore"):
        out = np.log(np.matmul(k, np.exp(v - m))) + m
    lost = np.isneginf(out) & np.isfinite(v).any(axis=1, keepdims=True)
    if lost.any():
        # contributions underflowed; redo the affected slices exactly
        b_idx, r_idx = np.nonzero(lost.any(axis=1))
        out[b_idx, :, r_idx] = logsumexp(lk[None, :, :] + v[b_idx, :, r_idx][:, None, :], axis=2)
    return out


def _log_apply(logv, log_kernels):
    """``log(K @ exp(logv))`` for a tensor-product kernel; leading axis is the batch."""
    for ax, lk in enumerate(log_kernels, start=1):
        v = np.moveaxis(logv, ax, 1)
        shape = v.shape
        out = _log_matmul(lk, v.reshape(shape[0], shape[1], -1))
        logv = np.moveaxis(out.reshape(shape), 1, ax)
    return logv


def _log_apply_cost(logv, kernels):
    """``log((K * C) @ exp(logv))`` using ``C = sum_ax C_ax``."""
    terms = []
    for ax in range(len(kernels)):
        with np.errstate(divide="ignore"):
            lks = [lk + np.log(c) if a == ax else lk for a, (lk, c) in enumerate(kernels)]
        terms.append(_log_apply(logv, lks))
    return logsumexp(np.stack(terms), axis=0)


def _normalized(log_a):
    a = np.exp(log_a - log_a.max())
    a /= a.sum()
    a[a < MASS_FLOOR] = 0.0
    return a / a.sum()


def wasserstein_barycenter(
    hists: Sequence[GridHistogram],
    weights=None,
    epsilon: float = 0.01,
    max_iter: int = 5000,
    tol: float = 1e-8,
    debias: bool = False,
) -> BarycenterResult:
    """Entropic barycenter by iterative Bregman projections.

    Ground cost is the squared Euclidean distance between bin centres. The
    result is blurred on the scale ``sqrt(epsilon)``; it reproduces a single
    input only when ``epsilon`` is well below the squared bin width. With
    ``debias`` the iteration also carries a self-transport scaling that
    removes the blur (a single input becomes its own fixed point) at the
    price of much slower convergence on sparse histograms.
    Stops when successive normalised iterates differ by less than ``tol``
    in L1. ``objective`` is the weighted transport cost of the final plans
    without the entropy term.
    """
    if not hists:
        raise ValidationError("no histograms given")
    res = hists[0].resolution
    if any(h.resolution != res for h in hists):
        raise ValidationError("histograms have mixed resolutions")
    n = len(hists)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
        raise ValidationError("weights must be non-negative, one per histogram, summing to 1")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")

    kernels = _axis_log_kernels(res, epsilon)
    log_k = [lk for lk, _ in kernels]
    with np.errstate(divide="ignore"):
        lb = np.log(np.stack([h.grid for h in hists]))
    wshape = (n,) + (1,) * len(res)
    wb = w.reshape(wshape)
    lu = np.zeros_like(lb)
    ld = np.zeros((1,) + res)
    prev = None
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        lv = lb - _log_apply(lu, log_k)
        lkv = _log_apply(lv, log_k)
        la = ld[0] + (wb * np.where(wb > 0, lkv, 0.0)).sum(axis=0)
        lu = la[None] - lkv
        if debias:
            ld = 0.5 * (ld + la[None] - _log_apply(ld, log_k))
        a = _normalized(la)
        if prev is not None:
            change = float(np.abs(a - prev).sum())
            history.append(change)
            if change < tol:
                converged = True
                break
        prev = a

    # plans P_k = diag(u_k) K diag(v_k) with columns matching the inputs exactly
    lv = lb - _log_apply(lu, log_k)
    lkv = _log_apply(lv, log_k)
    costs = np.exp(logsumexp((lu + _log_apply_cost(lv, kernels)).reshape(n, -1), axis=1))
    with np.errstate(invalid="ignore"):
        mass_u = np.exp(lu + lkv)
        ent = np.nansum(np.where(mass_u > 0, mass_u * lu, 0.0).reshape(n, -1), axis=1)
        ent += np.nansum(np.where(np.isfinite(lv), np.exp(lb) * lv, 0.0).reshape(n, -1), axis=1)
    plan_mass = mass_u.reshape(n, -1).sum(axis=1)
    # sum P log P = <u Kv, log u> + <v K^T u, log v> - <P, C> / eps
    reg = costs + epsilon * (ent - costs / epsilon - plan_mass)
    if not converged:
        warnings.warn(f"barycenter did not converge in {max_iter} iterations", ConvergenceWarning, stacklevel=2)
    return BarycenterResult(
        GridHistogram(res, a.ravel()),
        float(w @ costs),
        it,
        converged,
        float(w @ reg),
        history,
    )


def barycenter_objective(mu: GridHistogram, hists: Sequence[GridHistogram], weights=None) -> float:
    """Exact weighted mean of squared W_2 from ``mu`` to each input (dense; small grids only)."""
    from .transport import _import_pot

    ot = _import_pot()
    n = len(hists)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    x = mu.centers()
    C = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    a = np.asarray(mu.masses, dtype=float)
    total = 0.0
    for wk, h in zip(w, hists):
        total += wk * float(ot.emd2(a, np.asarray(h.masses, dtype=float), C, numItermax=10_000_000))
    return total


def cluster_barycenters(
    clouds: Sequence[PointCloud],
    clustering,
    resolution=(20, 20, 20),
    epsilon: float = 0.01,
    max_iter: int = 5000,
    tol: float = 1e-8,
    debias: bool = False,
    n_jobs: int = 1,
) -> dict[int, BarycenterResult]:
    """Uniform-weight barycenter of each cluster's member histograms, keyed by label.

    Clusters are independent and may be solved on ``n_jobs`` threads.
    """
    by_id: Mapping[str, PointCloud] = {c.city_id: c for c in clouds}
    missing = [i for i in clustering.ids if i not in by_id]
    if missing:
        raise ValidationError(f"clustering references ids without clouds: {missing[:5]}")

    def one(label):
        members = [discretize(by_id[i], resolution) for i in clustering.members(label)]
        if len(members) == 1:
            return BarycenterResult(members[0], 0.0, 0, True, 0.0)
        return wasserstein_barycenter(members, None, epsilon, max_iter, tol, debias)

    labels = list(range(1, clustering.n_clusters + 1))
    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, labels))
    else:
        results = [one(label) for label in labels]
    return dict(zip(labels, results))
