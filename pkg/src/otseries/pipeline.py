"""Staged end-to-end workflow with a TOML config, content-hash caching and a manifest.

Stages run in a fixed order (ingest, embed, dist, cluster, compare, bary,
analyze). Each stage reads its inputs from files written by the previous
ones, writes its outputs as ``*.partial`` and renames them only once the
whole stage succeeded. A stage is skipped as ``cached`` when the hash of
its config section(s) and of every input file matches the last run and its
outputs are still intact.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .barycenter import cluster_barycenters
from .covariates import build_feature_table, shapley_importance, train_forest, write_cluster_covariates
from .data import filter_by_min_cases, load_covariates, load_timeseries, write_covariates, write_timeseries
from .exceptions import (
    ConfigError,
    ConvergenceWarning,
    NotConvergedError,
    UndefinedStatisticError,
    ValidationError,
)
from .hierarchy import (
    Clustering,
    Dendrogram,
    compare_clusterings,
    flat_cut,
    height_profile,
    seriate,
    spatial_homogeneity,
    ward_linkage,
    write_json,
)
from .preprocess import MobilityVariant, PointCloud, embed_city
from .spatial import knn_weights, load_weights, morans_i_labels
from .transport import DistanceMatrix, distance_matrix

logger = logging.getLogger(__name__)

STAGES = ("ingest", "embed", "dist", "cluster", "compare", "bary", "analyze")
HC_NAMES = {"M": "hc1", "DeltaM": "hc2", "Mprime": "hc3"}

DEFAULTS: dict[str, dict[str, Any]] = {
    "input": {
        "timeseries": "",
        "covariates": "",
        "weights": "",
        "date_start": "",
        "date_end": "",
        "min_cases": 0,
        "on_invalid": "raise",
    },
    "embedding": {"variants": ["M", "DeltaM", "Mprime"]},
    "transport": {"solver": "exact", "p": 2.0, "epsilon": 0.01, "max_iter": 10000, "tol": 1e-9},
    "clustering": {"n_clusters": 10, "profile_max": 30},
    "barycenter": {
        "variant": "Mprime",
        "resolution": [20, 20, 20],
        "epsilon": 0.01,
        "max_iter": 5000,
        "tol": 1e-8,
        "debias": False,
    },
    "analysis": {
        "variant": "Mprime",
        "n_trees": 500,
        "max_depth": 0,
        "shapley_samples": 2000,
        "include_date": False,
        "reference_date": "2020-03-15",
        "absent_value": 85,
        "knn": 5,
        "n_perm": 999,
    },
    "run": {"output": "out", "seed": 0, "threads": 1, "fail_on_nonconvergence": False},
}

PATH_KEYS = (("input", "timeseries"), ("input", "covariates"), ("input", "weights"), ("run", "output"))

# config sections hashed into each stage key
STAGE_SECTIONS = {
    "ingest": ("input",),
    "embed": ("embedding",),
    "dist": ("transport",),
    "cluster": ("clustering",),
    "compare": ("analysis.knn", "analysis.n_perm", "run.seed"),
    "bary": ("barycenter",),
    "analyze": ("analysis", "run.seed"),
}


@dataclass
class PipelineConfig:
    values: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, section):
        return self.values[section]

    def path(self, section: str, key: str) -> Path | None:
        raw = self.values[section][key]
        if not raw:
            return None
        p = Path(raw)
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def output(self) -> Path:
        return self.path("run", "output")

    @property
    def variants(self) -> list[str]:
        return [MobilityVariant.parse(v).value for v in self.values["embedding"]["variants"]]

    def hash(self) -> str:
        """Digest of every setting that can change an artifact, with paths replaced by file contents."""
        vals = copy.deepcopy(self.values)
        del vals["run"]["output"], vals["run"]["threads"]
        for sec, key in PATH_KEYS[:-1]:
            p = self.path(sec, key)
            vals[sec][key] = file_sha256(p) if p is not None else ""
        return _digest(vals)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_scalar(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(values: dict, assignment: str) -> None:
    """Apply ``section.key=value``; the value is read as a TOML literal, else kept as a string."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form section.key=value")
    dotted, raw = assignment.split("=", 1)
    if dotted.count(".") != 1:
        raise ConfigError(f"override key {dotted!r} must be section.key")
    sec, key = dotted.strip().split(".")
    if sec not in values or key not in values[sec]:
        raise ConfigError(f"unknown config key {dotted!r}")
    values[sec][key] = _parse_scalar(raw.strip())


def load_config(path=None, overrides=(), **flags) -> PipelineConfig:
    """Read a TOML config, apply ``section.key=value`` overrides, then flags (which win)."""
    values = copy.deepcopy(DEFAULTS)
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = path.resolve().parent
        for sec, entries in raw.items():
            if sec not in values or not isinstance(entries, dict):
                raise ConfigError(f"unknown config section [{sec}]")
            for key, v in entries.items():
                if key not in values[sec]:
                    raise ConfigError(f"unknown config key {sec}.{key}")
                values[sec][key] = v
    for o in overrides:
        apply_override(values, o)
    for key, v in flags.items():
        if v is not None:
            values["run"][key] = v
    cfg = PipelineConfig(values, base)
    validate_config(cfg)
    return cfg


def _check_type(cfg, sec, key, expected):
    v = cfg[sec][key]
    ok = isinstance(v, expected) and not (expected in (int, (int, float)) and isinstance(v, bool))
    if not ok:
        raise ConfigError(f"{sec}.{key} has invalid value {v!r}")


def validate_config(cfg: PipelineConfig) -> None:
    for sec, entries in DEFAULTS.items():
        for key, default in entries.items():
            if isinstance(default, bool):
                _check_type(cfg, sec, key, bool)
            elif isinstance(default, (int, float)) and not isinstance(default, bool):
                _check_type(cfg, sec, key, int if isinstance(default, int) else (int, float))
            elif isinstance(default, str):
                _check_type(cfg, sec, key, str)
            elif isinstance(default, list):
                _check_type(cfg, sec, key, list)
    if not cfg["input"]["timeseries"]:
        raise ConfigError("input.timeseries is required")
    for sec, key in PATH_KEYS[:-1]:
        p = cfg.path(sec, key)
        if p is not None and not p.is_file():
            raise ConfigError(f"{sec}.{key}: file {p} does not exist")
    try:
        variants = cfg.variants
        for sec in ("barycenter", "analysis"):
            MobilityVariant.parse(cfg[sec]["variant"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not variants or len(set(variants)) != len(variants):
        raise ConfigError("embedding.variants must be a non-empty list without repeats")
    for sec in ("barycenter", "analysis"):
        if MobilityVariant.parse(cfg[sec]["variant"]).value not in variants:
            raise ConfigError(f"{sec}.variant must be one of embedding.variants")
    t = cfg["transport"]
    if t["solver"] not in ("exact", "sinkhorn"):
        raise ConfigError(f"transport.solver must be 'exact' or 'sinkhorn', got {t['solver']!r}")
    positive = [("transport", "p", 1), ("transport", "epsilon", 0), ("transport", "tol", 0),
                ("barycenter", "epsilon", 0), ("barycenter", "tol", 0)]
    for sec, key, low in positive:
        v = cfg[sec][key]
        if (low == 1 and v < 1) or (low == 0 and v <= 0):
            raise ConfigError(f"{sec}.{key} out of range: {v!r}")
    for sec, key, low in [("transport", "max_iter", 1), ("clustering", "n_clusters", 1),
                          ("clustering", "profile_max", 2), ("barycenter", "max_iter", 1),
                          ("analysis", "n_trees", 1), ("analysis", "shapley_samples", 10),
                          ("analysis", "knn", 1), ("analysis", "n_perm", 1), ("input", "min_cases", 0),
                          ("run", "threads", 1), ("analysis", "max_depth", 0), ("run", "seed", 0)]:
        if cfg[sec][key] < low:
            raise ConfigError(f"{sec}.{key} must be >= {low}")
    res = cfg["barycenter"]["resolution"]
    if len(res) != 3 or not all(isinstance(r, int) and not isinstance(r, bool) and r >= 1 for r in res):
        raise ConfigError("barycenter.resolution must be three positive integers")
    if cfg["input"]["on_invalid"] not in ("raise", "skip"):
        raise ConfigError("input.on_invalid must be 'raise' or 'skip'")
    for key in ("date_start", "date_end"):
        if cfg["input"][key]:
            try:
                date.fromisoformat(cfg["input"][key])
            except ValueError:
                raise ConfigError(f"input.{key} is not an ISO date") from None
    if bool(cfg["input"]["date_start"]) != bool(cfg["input"]["date_end"]):
        raise ConfigError("input.date_start and input.date_end must be given together")
    try:
        date.fromisoformat(cfg["analysis"]["reference_date"])
    except ValueError:
        raise ConfigError("analysis.reference_date is not an ISO date") from None


def render_config(values: dict) -> str:
    """TOML text for a values dict (flat sections of scalars and lists)."""
    out = []
    for sec, entries in values.items():
        out.append(f"[{sec}]")
        for key, v in entries.items():
            out.append(f"{key} = {_toml_value(v)}")
        out.append("")
    return "\n".join(out)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


# ---------------------------------------------------------------- stage plumbing


class StageWriter:
    """Hands out ``.partial`` paths and promotes them together on commit."""

    def __init__(self, root: Path):
        self.root = root
        self.pending: list[str] = []

    def path(self, rel: str) -> Path:
        final = self.root / rel
        final.parent.mkdir(parents=True, exist_ok=True)
        self.pending.append(rel)
        return final.with_name(final.name + ".partial")

    def commit(self) -> dict[str, str]:
        out = {}
        for rel in self.pending:
            final = self.root / rel
            os.replace(final.with_name(final.name + ".partial"), final)
            out[rel] = file_sha256(final)
        return out


@dataclass
class StageResult:
    name: str
    status: str  # ran | cached | skipped
    outputs: dict = field(default_factory=dict)


class StageFailed(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _subset(cfg: PipelineConfig, stage: str) -> dict:
    out = {}
    for item in STAGE_SECTIONS[stage]:
        sec, _, key = item.partition(".")
        out[item] = cfg[sec][key] if key else cfg[sec]
    if stage == "ingest":
        out = copy.deepcopy(out)
        for key in ("timeseries", "covariates", "weights"):
            p = cfg.path("input", key)
            out["input"][key] = file_sha256(p) if p else ""
    if stage == "compare":
        p = cfg.path("input", "weights")
        out["weights"] = file_sha256(p) if p else ""
    return out


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = cfg.output
        self.state_path = self.root / ".cache" / "state.json"
        self.threads = int(cfg["run"]["threads"])
        self.seed = int(cfg["run"]["seed"])
        self.fatal = bool(cfg["run"]["fail_on_nonconvergence"])
        self.results: list[StageResult] = []

    # state -------------------------------------------------------------
    def _load_state(self) -> dict:
        if self.state_path.is_file():
            try:
                return json.loads(self.state_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                return {}
        return {}

    def _save_state(self, state: dict) -> None:
        self.state_path.parent.mkdir(parents=True, exist_ok=True)
        self.state_path.write_text(json.dumps(state, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def _intact(self, outputs: dict) -> bool:
        for rel, digest in outputs.items():
            p = self.root / rel
            if not p.is_file() or file_sha256(p) != digest:
                return False
        return True

    def _inputs(self, stage: str, state: dict) -> dict:
        idx = STAGES.index(stage)
        return {s: state[s]["outputs"] for s in STAGES[:idx] if s in state}

    # execution ---------------------------------------------------------
    def run(self, until: str = "analyze") -> list[StageResult]:
        if until not in STAGES:
            raise ValueError(f"unknown stage {until!r}")
        self.root.mkdir(parents=True, exist_ok=True)
        state = self._load_state()
        for stage in STAGES[: STAGES.index(until) + 1]:
            key = _digest({"stage": stage, "config": _subset(self.cfg, stage), "inputs": self._inputs(stage, state)})
            prev = state.get(stage)
            if prev and prev.get("key") == key and self._intact(prev["outputs"]):
                status = "skipped" if prev.get("status") == "skipped" else "cached"
                self.results.append(StageResult(stage, status, prev["outputs"]))
                logger.info("[%s] %s", stage, status)
                continue
            state.pop(stage, None)
            writer = StageWriter(self.root)
            try:
                status = getattr(self, f"_stage_{stage}")(writer) or "ran"
                outputs = writer.commit()
            except Exception as exc:
                self._save_state(state)
                raise StageFailed(stage, exc) from exc
            state[stage] = {"key": key, "outputs": outputs, "status": status}
            self._save_state(state)
            logger.info("[%s] %s", stage, status)
            self.results.append(StageResult(stage, status, outputs))
        self.write_manifest(state)
        return self.results

    def write_manifest(self, state: dict) -> Path:
        artifacts = []
        for stage in STAGES:
            for rel, digest in sorted(state.get(stage, {}).get("outputs", {}).items()):
                artifacts.append({"path": rel, "sha256": digest, "stage": stage})
        manifest = {
            "config_hash": self.cfg.hash(),
            "seeds": {"run": self.seed},
            "stages": {r.name: r.status for r in self.results},
            "solver": {"transport": self.cfg["transport"]["solver"], "p": self.cfg["transport"]["p"]},
            "artifacts": artifacts,
        }
        path = self.root / "manifest.json"
        write_json(manifest, path)
        return path

    def _nonconverged(self, what: str) -> None:
        if self.fatal:
            raise NotConvergedError(what)
        warnings.warn(what, ConvergenceWarning, stacklevel=3)

    # readers -----------------------------------------------------------
    def _records(self):
        return load_timeseries(self.root / "ingest" / "cities.csv")

    def _covariates(self):
        p = self.root / "ingest" / "covariates.csv"
        return load_covariates(p) if p.is_file() else None

    def _clouds(self, variant: str) -> list[PointCloud]:
        return read_clouds(self.root / "embed" / f"clouds_{variant}.csv")

    def _clustering(self, variant: str) -> Clustering:
        return read_labels(self.root / "cluster" / "labels.csv", HC_NAMES[variant])

    # stages ------------------------------------------------------------
    def _stage_ingest(self, w: StageWriter):
        inp = self.cfg["input"]
        rng = (inp["date_start"], inp["date_end"]) if inp["date_start"] else None
        records = load_timeseries(self.cfg.path("input", "timeseries"), rng, inp["on_invalid"])
        kept = filter_by_min_cases(records, inp["min_cases"])
        if len(kept) < 2:
            raise ValidationError(f"only {len(kept)} cities left after filtering; need at least 2")
        write_timeseries(kept, w.path("ingest/cities.csv"))
        ids = [r.city_id for r in kept]
        cov_path = self.cfg.path("input", "covariates")
        if cov_path is not None:
            rows = {r.city_id: r for r in load_covariates(cov_path)}
            missing = [c for c in ids if c not in rows]
            if missing:
                    raise ValidationError(f"covariates missing for cities {missing[:5]}")
            write_covariates([rows[c] for c in ids], w.path("ingest/covariates.csv"))
        summary = {
            "n_cities": len(kept),
            "dropped_min_cases": sorted(set(r.city_id for r in records) - set(ids)),
            "n_days": {r.city_id: len(r) for r in kept},
        }
        write_json(summary, w.path("ingest/summary.json"))

    def _stage_embed(self, w: StageWriter):
        records = self._records()
        for v in self.cfg.variants:
            write_clouds([embed_city(r, v) for r in records], w.path(f"embed/clouds_{v}.csv"))

    def _stage_dist(self, w: StageWriter):
        t = self.cfg["transport"]
        params = {k: t[k] for k in ("solver", "p")}
        if t["solver"] == "sinkhorn":
            params.update({k: t[k] for k in ("epsilon", "max_iter", "tol")})
        cache_dir = self.root / ".cache"
        cache_dir.mkdir(parents=True, exist_ok=True)
        for v in self.cfg.variants:
            src = self.root / "embed" / f"clouds_{v}.csv"
            key = _digest({"variant": v, "params": params, "clouds": file_sha256(src)})
            cache = cache_dir / f"dist_{v}.npz"
            dm = DistanceMatrix.load_npz(cache, key) if cache.is_file() else None
            if dm is None:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ConvergenceWarning)
                    dm = distance_matrix(read_clouds(src), t["solver"], t["p"], t["epsilon"], t["max_iter"], t["tol"],
                                         self.threads)
                dm.save_npz(cache, key)
            dm.to_csv(w.path(f"dist/distance_{v}.csv"))
            bad = dm.info.get("nonconverged_pairs", [])
            info = {"variant": v, **params, "nonconverged_pairs": bad}
            write_json(info, w.path(f"dist/distance_{v}.json"))
            if bad:
                self._nonconverged(f"sinkhorn did not converge for {len(bad)} pairs of variant {v}")

    def _stage_cluster(self, w: StageWriter):
        c = self.cfg["clustering"]
        cols = {}
        for v in self.cfg.variants:
            hc = HC_NAMES[v]
            dm = DistanceMatrix.from_csv(self.root / "dist" / f"distance_{v}.csv")
            if c["n_clusters"] > len(dm):
                    raise ValidationError(f"n_clusters={c['n_clusters']} exceeds the {len(dm)} cities")
            dend = ward_linkage(dm)
            cols[hc] = flat_cut(dend, c["n_clusters"], hc)
            order = seriate(dend)
            write_json(dend.to_json(), w.path(f"cluster/dendrogram_{hc}.json"))
            w.path(f"cluster/dendrogram_{hc}.nwk").write_text(dend.to_newick() + "\n", encoding="utf-8")
            dm.reorder(order).to_csv(w.path(f"cluster/distance_seriated_{hc}.csv"))
            with w.path(f"cluster/height_profile_{hc}.csv").open("w", newline="", encoding="utf-8") as fh:
                out = csv.writer(fh, lineterminator="\n")
                out.writerow(["n_clusters", "merge_height"])
                for n, h in height_profile(dend, c["profile_max"]):
                    out.writerow([n, repr(h)])
        ids = next(iter(cols.values())).ids
        with w.path("cluster/labels.csv").open("w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            names = [HC_NAMES[v] for v in sorted(self.cfg.variants, key=lambda x: HC_NAMES[x])]
            out.writerow(["city_id", *names])
            for i, cid in enumerate(ids):
                out.writerow([cid, *(int(cols[n].labels[i]) for n in names)])

    def _stage_compare(self, w: StageWriter):
        variants = sorted(self.cfg.variants, key=lambda x: HC_NAMES[x])
        cols = [self._clustering(v) for v in variants]
        orders = []
        for v in variants:
            dend = Dendrogram.from_json(json.loads(
                (self.root / "cluster" / f"dendrogram_{HC_NAMES[v]}.json").read_text(encoding="utf-8")))
            orders.append(seriate(dend))
        graph = compare_clusterings(cols, orders)
        w.path("compare/partition_graph.dot").write_text(graph.to_dot(), encoding="utf-8")
        write_json(graph.to_json(), w.path("compare/partition_graph.json"))

        records = self._records()
        state_of = {r.city_id: r.state for r in records}
        ids = list(cols[0].ids)
        weights, source = self._spatial_weights(ids)
        spatial: dict[str, Any] = {"weights": source, "seed": self.seed}
        for col in cols:
            entry: dict[str, Any] = {"states_per_cluster_mean": spatial_homogeneity(col, state_of)}
            if weights is not None:
                try:
                    res = morans_i_labels(col, weights, self.cfg["analysis"]["n_perm"], self.seed)
                    entry["moran"] = {
                        "statistic": res.statistic,
                        "p_value": res.p_value,
                        "n_perm": res.n_perm,
                        "per_cluster": {str(k): {"I": res.i_values[k], "p_value": res.p_values[k]}
                                        for k in res.labels},
                    }
                except UndefinedStatisticError as exc:
                    entry["moran"] = {"undefined": str(exc)}
            spatial[col.name] = entry
        write_json(spatial, w.path("compare/spatial.json"))

    def _spatial_weights(self, ids):
        p = self.cfg.path("input", "weights")
        if p is not None:
            return load_weights(p, ids), "edge list"
        cov = self._covariates()
        if cov is None:
            return None, "none"
        by_id = {r.city_id: r.covariates for r in cov}
        first = by_id[ids[0]]
        lat_key = next((k for k in ("lat", "latitude") if k in first), None)
        lon_key = next((k for k in ("lon", "longitude") if k in first), None)
        if lat_key is None or lon_key is None or len(ids) < 2:
            return None, "none"
        k = min(self.cfg["analysis"]["knn"], len(ids) - 1)
        lat = [by_id[c][lat_key] for c in ids]
        lon = [by_id[c][lon_key] for c in ids]
        return knn_weights(ids, lat, lon, k), f"knn (k={k})"

    def _stage_bary(self, w: StageWriter):
        b = self.cfg["barycenter"]
        v = MobilityVariant.parse(b["variant"]).value
        clustering = self._clustering(v)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            results = cluster_barycenters(self._clouds(v), clustering, tuple(b["resolution"]), b["epsilon"],
                                          b["max_iter"], b["tol"], b["debias"], self.threads)
        summary = {"variant": v, "clustering": HC_NAMES[v], "epsilon": b["epsilon"], "clusters": {}}
        for label, res in sorted(results.items()):
            res.histogram.to_csv(w.path(f"bary/barycenter_{label}.csv"))
            if not res.converged:
                self._nonconverged(f"barycenter of cluster {label} did not converge in {b['max_iter']} iterations")
            summary["clusters"][str(label)] = {
                "size": len(clustering.members(label)),
                "objective": res.objective,
                "iterations": res.iterations,
                "converged": res.converged,
                "mean": [float(x) for x in res.histogram.mean()],
            }
        write_json(summary, w.path("bary/summary.json"))

    def _stage_analyze(self, w: StageWriter):
        cov = self._covariates()
        if cov is None:
            return "skipped"
        a = self.cfg["analysis"]
        v = MobilityVariant.parse(a["variant"]).value
        clustering = self._clustering(v)
        ft = build_feature_table(cov, clustering.ids, a["include_date"],
                                 date.fromisoformat(a["reference_date"]), a["absent_value"])
        model = train_forest(ft, clustering, a["n_trees"], a["max_depth"] or None, self.seed, self.threads)
        report = shapley_importance(model, ft, clustering, a["shapley_samples"], self.seed, self.threads)
        report.to_csv(w.path("analyze/importance.csv"))
        write_cluster_covariates(ft, clustering, w.path("analyze/cluster_covariates.csv"))
        roots = model.root_features()
        write_json(
            {
                "clustering": HC_NAMES[v],
                "seed": self.seed,
                "n_trees": a["n_trees"],
                "oob_accuracy": model.oob_accuracy_,
                "features": list(ft.names),
                "root_split_counts": {ft.names[j]: int(np.sum(roots == j)) for j in sorted(set(roots.tolist()))
                                      if j >= 0},
                "ranking": [{"feature": n, "mean_abs_shapley": s} for n, s in report.ranking_rows()],
            },
            w.path("analyze/forest.json"),
        )


def run_pipeline(cfg: PipelineConfig, until: str = "analyze") -> list[StageResult]:
    return Pipeline(cfg).run(until)


# ---------------------------------------------------------------- artifact io


def write_clouds(clouds, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["city_id", "x", "y", "z"])
        for c in clouds:
            for row in c.points:
                w.writerow([c.city_id, *(repr(float(x)) for x in row)])


def read_clouds(path) -> list[PointCloud]:
    groups: dict[str, list] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            groups.setdefault(row[0], []).append([float(x) for x in row[1:]])
    return [PointCloud(cid, np.array(pts)) for cid, pts in groups.items()]


def read_labels(path, column: str) -> Clustering:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or []):
            raise ConfigError(f"clustering {column} not available in {path}")
        rows = [(r["city_id"], int(r[column])) for r in reader]
    return Clustering([r[0] for r in rows], [r[1] for r in rows], column)

