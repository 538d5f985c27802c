"""Ward agglomeration on OT distances, flat cuts, seriation and partition comparison."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .exceptions import ValidationError
from .transport import DistanceMatrix, check_distance_matrix


def ward_update(d2_ki, d2_kj, d2_ij, n_i, n_j, n_k):
    """Lance-Williams update for Ward's method on squared dissimilarities."""
    t = n_i + n_j + n_k
    return ((n_i + n_k) * d2_ki + (n_j + n_k) * d2_kj - n_k * d2_ij) / t


LINKAGE_UPDATES: dict[str, Callable] = {"ward": ward_update}


@dataclass(frozen=True, eq=False)
class Dendrogram:
    """Merge tree over ``k`` leaves.

    ``merges`` is a ``(k-1, 4)`` array of ``(left, right, height, size)`` in
    the usual linkage-matrix convention: leaves are nodes ``0..k-1`` and the
    cluster formed by merge ``s`` is node ``k + s``.
    """

    ids: tuple[str, ...]
    merges: np.ndarray
    method: str = "ward"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        z = np.array(self.merges, dtype=float).reshape(-1, 4)
        z.setflags(write=False)
        object.__setattr__(self, "merges", z)
        k = len(self.ids)
        if z.shape[0] != k - 1:
            raise ValidationError(f"{k} leaves need {k - 1} merges, got {z.shape[0]}")
        sizes = np.ones(2 * k - 1)
        used = set()
        for s, (a, b, _, size) in enumerate(z):
            a, b = int(a), int(b)
            if not (0 <= a < k + s and 0 <= b < k + s) or a in used or b in used or a == b:
                raise ValidationError(f"merge {s} reuses or references an invalid node")
            used.update((a, b))
            sizes[k + s] = sizes[a] + sizes[b]
            if sizes[k + s] != size:
                raise ValidationError(f"merge {s} has size {size}, expected {sizes[k + s]}")

    def __len__(self):
        return len(self.ids)

    @property
    def heights(self) -> np.ndarray:
        return self.merges[:, 2]

    def children(self, node: int) -> tuple[int, int]:
        row = self.merges[node - len(self.ids)]
        return int(row[0]), int(row[1])

    def to_json(self) -> dict:
        return {
            "ids": list(self.ids),
            "method": self.method,
            "meta": self.meta,
            "merges": [
                {"left": int(a), "right": int(b), "height": float(h), "size": int(n)}
                for a, b, h, n in self.merges
            ],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Dendrogram":
        z = [[m["left"], m["right"], m["height"], m["size"]] for m in obj["merges"]]
        return cls(obj["ids"], np.array(z, dtype=float).reshape(-1, 4), obj.get("method", "ward"), obj.get("meta", {}))

    def to_newick(self) -> str:
        """Newick text; branch lengths are differences of merge heights."""
        k = len(self.ids)
        key = _min_leaf_ids(self)

        def height(node):
            return 0.0 if node < k else float(self.merges[node - k, 2])

        def render(node):
            if node < k:
                return _newick_label(self.ids[node])
            left, right = _ordered_children(self, node, key)
            h = height(node)
            return f"({render(left)}:{h - height(left)!r},{render(right)}:{h - height(right)!r})"

        return render(2 * k - 2) + ";"


def _newick_label(name: str) -> str:
    if any(ch in name for ch in " ():;,[]'\t"):
        return "'" + name.replace("'", "''") + "'"
    return name


def _min_leaf_ids(dend: Dendrogram) -> list[str]:
    k = len(dend.ids)
    key = list(dend.ids) + [""] * (k - 1)
    for s, (a, b, _, _) in enumerate(dend.merges):
        key[k + s] = min(key[int(a)], key[int(b)])
    return key


def _ordered_children(dend: Dendrogram, node: int, key: list[str] | None = None) -> tuple[int, int]:
    key = key if key is not None else _min_leaf_ids(dend)
    a, b = dend.children(node)
    return (a, b) if key[a] <= key[b] else (b, a)


def linkage(d, method: str | Callable = "ward", ids: Sequence[str] | None = None) -> Dendrogram:
    """Generic Lance-Williams agglomeration on squared dissimilarities.

    At each step the active pair with the smallest squared dissimilarity is
    merged; exact ties go to the lexicographically smallest
    ``(min node id, max node id)``. The merge height is the square root of
    the merged squared dissimilarity, so a merge of two leaves happens at
    their input distance.
    """
    if isinstance(d, DistanceMatrix):
        ids = d.ids if ids is None else tuple(ids)
        d = d.d
    d = check_distance_matrix(d)
    k = d.shape[0]
    ids = tuple(str(i) for i in (ids if ids is not None else range(k)))
    if len(ids) != k:
        raise ValidationError("ids do not match distance matrix size")
    if k < 2:
        raise ValidationError("need at least two leaves to cluster")
    update = LINKAGE_UPDATES[method] if isinstance(method, str) else method
    name = method if isinstance(method, str) else getattr(method, "__name__", "custom")

    total = 2 * k - 1
    d2 = np.full((total, total), np.inf)
    d2[:k, :k] = d**2
    size = np.zeros(total)
    size[:k] = 1
    active = list(range(k))
    merges = np.zeros((k - 1, 4))
    for s in range(k - 1):
        act = np.array(active)
        sub = d2[np.ix_(act, act)]
        sub[np.tril_indices(len(act))] = np.inf
        flat = int(np.argmin(sub))
        i, j = act[flat // len(act)], act[flat % len(act)]
        h2 = d2[i, j]
        new = k + s
        others = act[(act != i) & (act != j)]
        if others.size:
            upd = update(d2[others, i], d2[others, j], h2, size[i], size[j], size[others])
            d2[others, new] = d2[new, others] = upd
        size[new] = size[i] + size[j]
        merges[s] = (i, j, np.sqrt(max(h2, 0.0)), size[new])
        active = [a for a in active if a != i and a != j] + [new]
    return Dendrogram(ids, merges, name, {"dissimilarity": "squared input distances",
                                          "height": "sqrt of merged squared dissimilarity"})


def ward_linkage(d, ids: Sequence[str] | None = None) -> Dendrogram:
    return linkage(d, "ward", ids)


@dataclass(frozen=True, eq=False)
class Clustering:
    ids: tuple[str, ...]
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        lab = np.array(self.labels, dtype=int)
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        if lab.shape != (len(self.ids),):
            raise ValidationError("one label per id required")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("duplicate ids in clustering")
        c = int(lab.max()) if lab.size else 0
        if lab.size and (lab.min() < 1 or set(np.unique(lab)) != set(range(1, c + 1))):
            raise ValidationError("labels must cover 1..c with every label used")

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0

    def members(self, label: int) -> list[str]:
        return [i for i, lab in zip(self.ids, self.labels) if lab == label]

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.ids, (int(v) for v in self.labels)))

    def same_partition(self, other: "Clustering") -> bool:
        a, b = self.as_dict(), other.as_dict()
        if set(a) != set(b):
            return False
        fwd, bwd = {}, {}
        for cid in a:
            if fwd.setdefault(a[cid], b[cid]) != b[cid] or bwd.setdefault(b[cid], a[cid]) != a[cid]:
                return False
        return True


def flat_cut(dend: Dendrogram, c: int, name: str = "") -> Clustering:
    """Undo the last ``c - 1`` merges; labels follow first appearance in leaf order."""
    k = len(dend.ids)
    if not 1 <= c <= k:
        raise ValueError(f"cluster count {c} outside 1..{k}")
    parent = list(range(2 * k - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for s in range(k - c):
        a, b = int(dend.merges[s, 0]), int(dend.merges[s, 1])
        parent[find(a)] = k + s
        parent[find(b)] = k + s
    relabel: dict[int, int] = {}
    labels = [relabel.setdefault(find(i), len(relabel) + 1) for i in range(k)]
    return Clustering(dend.ids, labels, name)


def seriate(dend: Dendrogram) -> list[str]:
    """Left-to-right leaf order; at each node the child holding the smallest id goes left."""
    k = len(dend.ids)
    key = _min_leaf_ids(dend)
    order, stack = [], [2 * k - 2]
    while stack:
        node = stack.pop()
        if node < k:
            order.append(dend.ids[node])
        else:
            left, right = _ordered_children(dend, node, key)
            stack.extend((right, left))
    return order


def height_profile(dend: Dendrogram, max_clusters: int | None = None) -> list[tuple[int, float]]:
    """``(c, h)`` pairs: the height of the merge that turns ``c`` clusters into ``c - 1``."""
    k = len(dend.ids)
    top = k if max_clusters is None else min(max_clusters, k)
    return [(c, float(dend.merges[k - c, 2])) for c in range(2, top + 1)]


@dataclass(frozen=True)
class PartitionGraph:
    """Layered comparison of clusterings; ``edges`` are ``(col, a, b, shared)``."""

    columns: tuple[Clustering, ...]
    edges: tuple[tuple[int, int, int, int], ...]
    orders: tuple[tuple[int, ...], ...]
    summaries: tuple[dict, ...]

    def to_json(self) -> dict:
        return {
            "columns": [
                {
                    "name": col.name or f"col{i + 1}",
                    "order": list(self.orders[i]),
                    "sizes": {str(lab): int(np.sum(col.labels == lab)) for lab in range(1, col.n_clusters + 1)},
                }
                for i, col in enumerate(self.columns)
            ],
            "edges": [{"col": c, "from": a, "to": b, "shared": n} for c, a, b, n in self.edges],
            "summaries": list(self.summaries),
        }

    def to_dot(self, scale: float = 4.0) -> str:
        """Graphviz source: one rank per clustering, boxes sized by cluster cardinality."""
        total = len(self.columns[0].ids) if self.columns else 1
        lines = ["digraph partitions {", "  rankdir=LR;", "  node [shape=box, style=filled, fillcolor=lightblue];"]
        for i, col in enumerate(self.columns):
            name = col.name or f"col{i + 1}"
            lines.append(f"  subgraph cluster_{i} {{")
            lines.append(f'    label="{name}"; style=invis;')
            for lab in self.orders[i]:
                n = int(np.sum(col.labels == lab))
                lines.append(
                    f'    c{i}_{lab} [label="{name}:{lab} ({n})", height={scale * n / total:.4f}, fixedsize=true, width=1.2];'
                )
            lines.append("  }")
            if len(self.orders[i]) > 1:
                chain = " -> ".join(f"c{i}_{lab}" for lab in self.orders[i])
                lines.append(f"  {{ rank=same; {chain} [style=invis]; }}")
        for c, a, b, n in self.edges:
            lines.append(f'  c{c}_{a} -> c{c + 1}_{b} [label="{n}", penwidth={1 + 4 * n / total:.3f}, arrowhead=none];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _cluster_order(col: Clustering, leaf_order: Sequence[str] | None) -> tuple[int, ...]:
    if leaf_order is None:
        return tuple(range(1, col.n_clusters + 1))
    lab = col.as_dict()
    seen: dict[int, None] = {}
    for cid in leaf_order:
        seen.setdefault(lab[cid], None)
    return tuple(seen)


def count_crossings(edges, pos_a: Mapping[int, int], pos_b: Mapping[int, int]) -> int:
    """Number of pairs of edges whose endpoints are in opposite relative order."""
    n = 0
    for x in range(len(edges)):
        a1, b1 = pos_a[edges[x][0]], pos_b[edges[x][1]]
        for y in range(x + 1, len(edges)):
            a2, b2 = pos_a[edges[y][0]], pos_b[edges[y][1]]
            if (a1 - a2) * (b1 - b2) < 0:
                n += 1
    return n


def compare_clusterings(
    clusterings: Sequence[Clustering], leaf_orders: Sequence[Sequence[str]] | None = None
) -> PartitionGraph:
    """Contingency edges between consecutive clusterings.

    Clusters in each column are placed by first appearance along that
    column's seriated leaf order when ``leaf_orders`` is given, by label
    otherwise; crossings are counted under that placement.
    """
    if not clusterings:
        raise ValidationError("no clusterings to compare")
    ids = set(clusterings[0].ids)
    for col in clusterings[1:]:
        if set(col.ids) != ids or len(col.ids) != len(ids):
            raise ValidationError("clusterings are over different id sets")
    if leaf_orders is not None and len(leaf_orders) != len(clusterings):
        raise ValidationError("one leaf order per clustering required")
    orders = tuple(
        _cluster_order(col, None if leaf_orders is None else leaf_orders[i]) for i, col in enumerate(clusterings)
    )
    edges, summaries = [], []
    for c in range(len(clusterings) - 1):
        a, b = clusterings[c].as_dict(), clusterings[c + 1].as_dict()
        counts: dict[tuple[int, int], int] = defaultdict(int)
        for cid in clusterings[c].ids:
            counts[(a[cid], b[cid])] += 1
        layer = sorted(counts.items())
        edges.extend((c, x, y, n) for (x, y), n in layer)
        pos_a = {lab: i for i, lab in enumerate(orders[c])}
        pos_b = {lab: i for i, lab in enumerate(orders[c + 1])}
        summaries.append(
            {
                "from": clusterings[c].name or f"col{c + 1}",
                "to": clusterings[c + 1].name or f"col{c + 2}",
                "edge_count": len(layer),
                "crossings": count_crossings([k for k, _ in layer], pos_a, pos_b),
            }
        )
    return PartitionGraph(tuple(clusterings), tuple(edges), orders, tuple(summaries))


def spatial_homogeneity(c: Clustering, state_of: Mapping[str, str]) -> float:
    """Mean over states of the number of distinct clusters among that state's cities."""
    missing = [i for i in c.ids if i not in state_of]
    if missing:
        raise ValidationError(f"no state for ids {missing[:5]}")
    per_state: dict[str, set] = defaultdict(set)
    for cid, lab in zip(c.ids, c.labels):
        per_state[state_of[cid]].add(int(lab))
    return float(np.mean([len(v) for v in per_state.values()]))


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
