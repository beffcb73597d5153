"""Solution archives: arrays in ``.npz`` plus a JSON sidecar with scalars."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .optimizer import BeamformerSolution

__all__ = ["load_solution", "save_solution"]

_ARRAYS = ("Wc", "Ws", "wc", "ws", "aoa")


def save_solution(sol: BeamformerSolution, path: str | Path, config_hash: str = "") -> Path:
    path = Path(path).with_suffix(".npz")
    arrays = {k: getattr(sol, k) for k in _ARRAYS if getattr(sol, k) is not None}
    np.savez(path, **arrays)
    meta = {
        "objective": sol.objective,
        "objective_trace": list(map(float, sol.objective_trace)),
        "rank_report": sol.rank_report,
        "recovery_paths": sol.recovery_paths,
        "returned_infeasible": sol.returned_infeasible,
        "power_mode": sol.power_mode,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "scheme": sol.scheme,
        "origin": sol.origin,
        "config_hash": config_hash,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_solution(path: str | Path) -> tuple[BeamformerSolution, str]:
    """Returns the solution and the config hash it was designed for."""
    path = Path(path).with_suffix(".npz")
    meta = json.loads(path.with_suffix(".json").read_text())
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    config_hash = meta.pop("config_hash", "")
    return BeamformerSolution(**arrays, **meta), config_hash
