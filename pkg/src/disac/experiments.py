"""Experiment spec files and the runners behind ``disac run``.

Every runner returns tables (lists of row dicts).  Rows are produced in a
fixed order so that identical specs and seeds give identical CSV bytes.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from . import __version__
from .benchmark_zf import zf_grid_search
from .instance import build_instance
from .mc_eval import DetectionExperiment, SyncMode, detection_probability, sampled_kld_report
from .optimizer import (InfeasibleError, check_solution, optimize_beamformers,
                        select_worst_case_aoa)
from .rcs import RcsProfile, emit_polar_pattern
from .scenario import (ConfigError, RcsModelSpec, ScenarioConfig, _ingest, db2lin,
                       load_config, make_config, spawn_rng_stream)

__all__ = ["ExperimentKind", "ExperimentSpec", "RunResult", "load_spec", "run_experiment",
           "scenario_for", "write_outputs"]

OUTPUT_ROOT_ENV = "DISAC_OUTPUT_ROOT"

_GENERATOR_KEYS = {"num_nodes", "antennas", "num_ues", "slant_range", "target_altitude",
                   "node_phase", "ue_half_side", "ue_min_distance"}
_FULL_SCALE = {"antennas": 12, "num_ues": 3}


class ExperimentKind(str, enum.Enum):
    CONVERGENCE = "convergence"
    TRADEOFF = "tradeoff"
    DETECTION = "detection"
    POWER_MODES = "power_modes"
    RCS_MODELS = "rcs_models"
    POLAR_PATTERN = "polar_pattern"


_DEFAULT_SWEEPS: dict[ExperimentKind, dict[str, Any]] = {
    ExperimentKind.CONVERGENCE: {"variants": [{"num_nodes": 1}, {"num_nodes": 2}],
                                 "aoa_half_width_deg": [2.0, 5.0], "sinr_db": [20.0]},
    ExperimentKind.TRADEOFF: {"variants": [{"num_nodes": 2, "antennas": 4},
                                           {"num_nodes": 1, "antennas": 8}],
                              "sinr_db": [0.0, 5.0, 10.0, 15.0, 20.0]},
    ExperimentKind.DETECTION: {"sinr_db": [0.0, 10.0], "deltas": [0.01, 0.05],
                               "trials": 1000, "sync_mode": "Shrinkage"},
    ExperimentKind.POWER_MODES: {"sinr_db": [0.0], "trials": 1000,
                                 "modes": ["TotalSystem", "PerNode", "PerAntenna"]},
    ExperimentKind.RCS_MODELS: {"sinr_db": [0.0, 5.0, 10.0, 15.0, 20.0],
                                "models": ["chi_square", "swerling1"], "kld_draws": 1000},
    ExperimentKind.POLAR_PATTERN: {"models": ["chi_square", "swerling1"],
                                   "resolution_deg": 1.0},
}


@dataclass(frozen=True)
class ExperimentSpec:
    kind: ExperimentKind
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    scenario: dict = field(default_factory=dict)
    config_path: str | None = None
    sweep: dict = field(default_factory=dict)
    output: str | None = None
    full_scale: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seed list is empty")
        for k, v in self.sweep.items():
            if isinstance(v, (list, tuple)) and len(v) == 0:
                raise ConfigError(f"sweep list {k!r} is empty")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base_dir: str | Path = ".") -> "ExperimentSpec":
        data = dict(data)
        try:
            kind = ExperimentKind(str(data.pop("kind")).lower())
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"missing or unknown experiment kind: {exc}") from exc
        sweep = dict(_DEFAULT_SWEEPS[kind])
        sweep.update(data.pop("sweep", {}) or {})
        spec = cls(kind=kind, seeds=tuple(int(s) for s in data.pop("seeds", (0, 1, 2, 3, 4))),
                   scenario=dict(data.pop("scenario", {}) or {}),
                   config_path=data.pop("config", None), sweep=sweep,
                   output=data.pop("output", None),
                   full_scale=dict(data.pop("full_scale", {}) or {}), base_dir=str(base_dir))
        if data:
            raise ConfigError(f"unknown experiment keys: {sorted(data)}")
        return spec

    def with_full_scale(self) -> "ExperimentSpec":
        scen = dict(_FULL_SCALE)
        scen.update(self.scenario)
        scen.update(self.full_scale.get("scenario", {}))
        sweep = dict(self.sweep)
        sweep.update(self.full_scale.get("sweep", {}))
        if "variants" in sweep and "variants" not in self.full_scale.get("sweep", {}):
            sweep["variants"] = [{**v, "antennas": 12 * v.get("antennas", 4) // 4}
                                 for v in sweep["variants"]]
        return ExperimentSpec(self.kind, self.seeds, scen, self.config_path, sweep,
                              self.output, self.full_scale, self.base_dir)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "seeds": list(self.seeds), "scenario": self.scenario,
                "config": self.config_path, "sweep": self.sweep}

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_spec(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError("experiment file must hold a mapping")
    return ExperimentSpec.from_mapping(data, base_dir=path.parent)


def scenario_for(spec: ExperimentSpec, seed: int, variant: Mapping | None = None,
                 **fields) -> ScenarioConfig:
    """Scenario for one seed; ``variant`` carries generator keys, ``fields`` config fields."""
    variant = dict(variant or {})
    if spec.config_path is not None:
        if set(variant) & _GENERATOR_KEYS:
            raise ConfigError("geometry variants need a generated scenario, not a config file")
        cfg = load_config(Path(spec.base_dir) / spec.config_path)
        return cfg.replace(seed=seed, **_ingest(variant, Path(spec.base_dir)), **fields)
    merged = {**spec.scenario, **variant}
    gen = {k: merged.pop(k) for k in list(merged) if k in _GENERATOR_KEYS}
    gen.setdefault("antennas", 4)
    gen.setdefault("num_ues", 2)
    overrides = _ingest(merged, Path(spec.base_dir))
    overrides.update(fields)
    overrides.setdefault("aoa_half_width", math.radians(2.0))
    return make_config(seed=seed, **gen, **overrides)


# ---------------------------------------------------------------------------
# runners (one seed each; the pool maps over seeds)


def _gammas_desc(sweep) -> list[float]:
    return sorted((float(g) for g in sweep["sinr_db"]), reverse=True)


def _design_chain(inst, aoa, gammas_db, extra_candidates=None):
    """Designs for descending SINR thresholds, each warm-started from the last.

    Returns ``{gamma_db: (proposed or None, zf)}``.
    """
    out = {}
    prev = None
    for gdb in gammas_db:
        g = db2lin(gdb)
        zf = zf_grid_search(inst, aoa, sinr_threshold=g)
        cands = [zf.as_beamformer(aoa)] if zf.feasible else []
        if prev is not None:
            cands.append(prev)
        if extra_candidates and gdb in extra_candidates:
            cands.append(extra_candidates[gdb])
        try:
            sol = optimize_beamformers(inst, aoa=aoa, sinr_threshold=g, candidates=cands)
        except InfeasibleError:
            sol = None
        out[gdb] = (sol, zf)
        if sol is not None:
            prev = sol
    return out


def _convergence_seed(spec: ExperimentSpec, seed: int):
    rows = []
    gdb = float(spec.sweep["sinr_db"][0])
    for variant in spec.sweep["variants"]:
        for width in spec.sweep["aoa_half_width_deg"]:
            cfg = scenario_for(spec, seed, variant, aoa_half_width=math.radians(float(width)),
                               sinr_threshold=db2lin(gdb))
            inst = build_instance(cfg)
            try:
                sol = optimize_beamformers(inst)
            except InfeasibleError:
                rows.append(dict(num_nodes=cfg.num_nodes, antennas=cfg.tx_antennas,
                                 aoa_half_width_deg=float(width), gamma_db=gdb, seed=seed,
                                 iteration=0, objective=float("nan"), converged=False))
                continue
            for i, v in enumerate(sol.objective_trace, start=1):
                rows.append(dict(num_nodes=cfg.num_nodes, antennas=cfg.tx_antennas,
                                 aoa_half_width_deg=float(width), gamma_db=gdb, seed=seed,
                                 iteration=i, objective=float(v), converged=sol.converged))
    return {"convergence": rows}


def _tradeoff_seed(spec: ExperimentSpec, seed: int):
    rows = []
    infeasible = 0
    for variant in spec.sweep["variants"]:
        cfg = scenario_for(spec, seed, variant)
        inst = build_instance(cfg)
        aoa = select_worst_case_aoa(inst)
        designs = _design_chain(inst, aoa, _gammas_desc(spec.sweep))
        for gdb in sorted(designs):
            sol, zf = designs[gdb]
            base = dict(num_nodes=cfg.num_nodes, antennas=cfg.tx_antennas, seed=seed,
                        gamma_db=gdb)
            if sol is None:
                infeasible += 1
            rows.append({**base, "scheme": "proposed",
                         "kld": sol.objective if sol else float("nan"),
                         "feasible": sol is not None,
                         "rho": float("nan"),
                         "iterations": sol.iterations if sol else 0})
            rows.append({**base, "scheme": "zf",
                         "kld": zf.objective if zf.feasible else float("nan"),
                         "feasible": zf.feasible,
                         "rho": zf.rho if zf.feasible else float("nan"), "iterations": 0})
    return {"tradeoff": rows, "_infeasible": infeasible}


def _detection_experiment(spec: ExperimentSpec, cfg: ScenarioConfig) -> DetectionExperiment:
    kw = dict(trials=int(spec.sweep.get("trials", 1000)), snapshots=cfg.snapshots,
              sync_mode=SyncMode(spec.sweep.get("sync_mode", "Shrinkage")),
              threshold_db=float(spec.sweep.get("threshold_db", 10.0)))
    if "scnr_db" in spec.sweep:
        kw["input_scnr_grid"] = tuple(float(x) for x in spec.sweep["scnr_db"])
    return DetectionExperiment(**kw)


def _curve_rows(curve, **labels):
    lo, hi = curve.intervals()
    rows = []
    for i, s in enumerate(curve.scnr_db):
        rows.append(dict(scnr_db=float(s), pd=float(curve.pd[i]), ci_low=lo[i], ci_high=hi[i],
                         gamma_db=labels["gamma_db"], delta=labels["delta"],
                         model=labels["model"], seed=labels["seed"],
                         scheme=labels["scheme"], detections=int(curve.detections[i]),
                         trials=curve.trials))
    return rows


def _detection_seed(spec: ExperimentSpec, seed: int):
    rows = []
    infeasible = 0
    prev_delta: dict[float, Any] = {}
    for delta in sorted((float(d) for d in spec.sweep["deltas"]), reverse=True):
        cfg = scenario_for(spec, seed, sync_error_bound=delta)
        inst = build_instance(cfg)
        aoa = select_worst_case_aoa(inst)
        designs = _design_chain(inst, aoa, _gammas_desc(spec.sweep), prev_delta)
        exp = _detection_experiment(spec, cfg)
        current = {}
        for gdb in sorted(designs):
            sol, zf = designs[gdb]
            labels = dict(gamma_db=gdb, delta=delta, model=cfg.rcs_model.kind, seed=seed)
            for scheme, s in (("proposed", sol), ("zf", zf.as_beamformer(aoa) if zf.feasible
                                                  else None)):
                if s is None:
                    infeasible += scheme == "proposed"
                    continue
                rng = spawn_rng_stream(cfg, f"detection:{gdb!r}")
                curve = detection_probability(inst, s, exp, rng)
                rows.extend(_curve_rows(curve, scheme=scheme, **labels))
            if sol is not None:
                current[gdb] = sol
        prev_delta = current
    return {"detection": rows, "_infeasible": infeasible}


def _power_modes_seed(spec: ExperimentSpec, seed: int):
    rows, kld_rows = [], []
    infeasible = 0
    order = ["PerAntenna", "PerNode", "TotalSystem"]
    modes = [m for m in order if m in spec.sweep["modes"]]
    for gdb in _gammas_desc(spec.sweep):
        cfg = scenario_for(spec, seed, sinr_threshold=db2lin(gdb))
        inst = build_instance(cfg)
        aoa = select_worst_case_aoa(inst)
        exp = _detection_experiment(spec, cfg)
        prev = []
        for mode in modes:
            try:
                sol = optimize_beamformers(inst, power_mode=mode, aoa=aoa, candidates=prev,
                                           label=mode)
            except InfeasibleError:
                infeasible += 1
                kld_rows.append(dict(seed=seed, gamma_db=gdb, mode=mode, kld=float("nan"),
                                     power_ok=False))
                continue
            chk = check_solution(inst, sol)
            kld_rows.append(dict(seed=seed, gamma_db=gdb, mode=mode, kld=sol.objective,
                                 power_ok=chk.ok()))
            curve = detection_probability(inst, sol, exp,
                                          spawn_rng_stream(cfg, f"detection:{gdb!r}"))
            rows.extend(_curve_rows(curve, gamma_db=gdb, delta=cfg.sync_error_bound,
                                    model=cfg.rcs_model.kind, seed=seed, scheme=mode))
            prev = [sol]
    return {"power_modes": rows, "power_modes_kld": kld_rows, "_infeasible": infeasible}


def _rcs_models_seed(spec: ExperimentSpec, seed: int):
    rows = []
    infeasible = 0
    draws = int(spec.sweep.get("kld_draws", 1000))
    for model in spec.sweep["models"]:
        cfg = scenario_for(spec, seed, rcs_model=RcsModelSpec(kind=str(model)))
        inst = build_instance(cfg)
        aoa = select_worst_case_aoa(inst)
        designs = _design_chain(inst, aoa, _gammas_desc(spec.sweep))
        for gdb in sorted(designs):
            sol, _ = designs[gdb]
            if sol is None:
                infeasible += 1
                continue
            rep = sampled_kld_report(inst, sol, draws,
                                     spawn_rng_stream(cfg, f"rcs_kld:{gdb!r}"))
            rows.append(dict(model=str(model), seed=seed, gamma_db=gdb,
                             kld_lower_bound=sol.objective, kld_mean=rep.mean,
                             kld_p10=rep.p10, kld_p90=rep.p90, band_width=rep.p90 - rep.p10))
    return {"rcs_models": rows, "_infeasible": infeasible}


def _polar_seed(spec: ExperimentSpec, seed: int):
    rows = []
    cfg = scenario_for(spec, seed)
    res = float(spec.sweep.get("resolution_deg", 1.0))
    for model in spec.sweep["models"]:
        m = RcsModelSpec(kind=str(model))
        base = RcsProfile.default(m) if cfg.rcs_profile is None else RcsProfile(
            np.asarray(cfg.rcs_profile[0]), np.asarray(cfg.rcs_profile[1]), m)
        ang, draws, means = emit_polar_pattern(base, spawn_rng_stream(cfg, f"polar:{model}"),
                                               res, m)
        for a, d, mu in zip(ang, draws, means):
            rows.append(dict(model=str(model), seed=seed, angle_deg=float(np.degrees(a)),
                             mean_rcs=float(mu), rcs_draw=float(d)))
    return {"polar_pattern": rows}


_RUNNERS = {
    ExperimentKind.CONVERGENCE: _convergence_seed,
    ExperimentKind.TRADEOFF: _tradeoff_seed,
    ExperimentKind.DETECTION: _detection_seed,
    ExperimentKind.POWER_MODES: _power_modes_seed,
    ExperimentKind.RCS_MODELS: _rcs_models_seed,
    ExperimentKind.POLAR_PATTERN: _polar_seed,
}


@dataclass
class RunResult:
    tables: dict
    infeasible_points: int
    wall_time: float


def run_experiment(spec: ExperimentSpec, seeds=None, workers: int = 1) -> RunResult:
    """Run every seed (in a process pool when ``workers > 1``) and merge the tables."""
    seeds = list(spec.seeds if seeds is None else seeds)
    if not seeds:
        raise ConfigError("seed list is empty")
    fn = partial(_RUNNERS[spec.kind], spec)
    t0 = time.perf_counter()
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, seeds))
    else:
        parts = [fn(s) for s in seeds]
    tables: dict[str, list] = {}
    infeasible = 0
    for part in parts:
        for name, rows in part.items():
            if name == "_infeasible":
                infeasible += rows
            else:
                tables.setdefault(name, []).extend(rows)
    return RunResult(tables, infeasible, time.perf_counter() - t0)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_outputs(spec: ExperimentSpec, result: RunResult, out_dir: str | Path,
                  seeds) -> Path:
    """Write one CSV per table plus ``manifest.json``; returns the directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, rows in result.tables.items():
        path = out / f"{name}.csv"
        header = list(rows[0]) if rows else []
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(r[h]) for h in header])
        files[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest = {
        "kind": spec.kind.value,
        "spec_hash": spec.spec_hash(),
        "config_hashes": {str(s): scenario_for(spec, s).config_hash() for s in seeds},
        "seeds": list(seeds),
        "revision": _revision(),
        "wall_time_s": result.wall_time,
        "infeasible_points": result.infeasible_points,
        "outputs": files,
        "spec": spec.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    return out


def _revision() -> str:
    import subprocess

    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def default_output_dir(spec: ExperimentSpec) -> Path:
    if spec.output:
        return Path(spec.base_dir) / spec.output
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "disac-runs"))
    return root / f"{spec.kind.value}-{spec.spec_hash()}"
