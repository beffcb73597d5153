"""Experiment configuration, deployment geometry and seeded random streams.

All quantities held by :class:`ScenarioConfig` are linear-scale and angles are
in radians.  Config files may give decibels or degrees through suffixed keys
(``*_db``, ``*_deg``); conversion happens once, at ingestion.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

__all__ = [
    "ClutterPoint",
    "ConfigError",
    "GeometryError",
    "GeometrySummary",
    "RcsModelSpec",
    "ScenarioConfig",
    "default_table2_config",
    "derive_geometry",
    "desk_scale_config",
    "load_config",
    "make_config",
    "save_config",
    "spawn_rng_stream",
]


class ConfigError(ValueError):
    """Raised for configurations that violate the model assumptions."""


class GeometryError(ValueError):
    """Raised when node, UE and target positions are degenerate."""


def db2lin(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


@dataclass(frozen=True)
class RcsModelSpec:
    """RCS fluctuation law: ``chi_square`` (Gamma with ``shape``) or ``swerling1``."""

    kind: str = "chi_square"
    shape: float = 4.0

    def __post_init__(self):
        if self.kind not in ("chi_square", "swerling1"):
            raise ConfigError(f"unknown RCS model {self.kind!r}")
        if self.kind == "chi_square" and not self.shape > 0:
            raise ConfigError("chi-square shape must be positive")


@dataclass(frozen=True)
class ClutterPoint:
    """A clutter scatterer on link (rx, tx).

    ``offset`` is the azimuth offset (rad) from the receiver's nominal target
    azimuth and ``power`` the scatterer power in watts.
    """

    rx: int
    tx: int
    offset: float
    power: float


@dataclass(frozen=True)
class ScenarioConfig:
    num_nodes: int
    tx_antennas: int
    rx_antennas: int
    num_ues: int
    node_positions: tuple[tuple[float, float, float], ...]
    ue_positions: tuple[tuple[float, float, float], ...]
    target_position: tuple[float, float, float]
    wavelength: float = 0.03
    antenna_spacing: float = 0.015
    rician_factor: float = db2lin(5.0)
    power_budget: float = 1.0
    comm_noise: float = 1e-3
    sensing_noise: float = 1e-3
    sync_error_bound: float = 0.01
    aoa_half_width: tuple[float, ...] = ()
    sinr_threshold: float = 1.0
    snapshots: int = 100
    sca_tolerance: float = 0.01
    rcs_model: RcsModelSpec = field(default_factory=RcsModelSpec)
    # (angles_rad, mean_rcs) table; None selects the built-in two-lobe profile
    rcs_profile: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    target_heading: float = 0.0
    clutter_offset: float = math.radians(20.0)
    clutter_cnr: float = 10.0
    # explicit scatterers override the default one-point-per-link clutter
    clutter_points: tuple[ClutterPoint, ...] | None = None
    # distance (m) at which path loss is normalized to 0 dB; None = absolute
    pathloss_reference: float | None = 100.0
    robust_numerator: str = "nominal"
    aoa_grid_points: int = 9
    max_sca_iterations: int = 30
    randomization_draws: int = 200
    rank_one_gate: float = 0.999
    seed: int = 0

    def __post_init__(self):
        obj = object.__setattr__
        # normalize containers so equality and hashing are structural
        obj(self, "node_positions", tuple(tuple(float(c) for c in p) for p in self.node_positions))
        obj(self, "ue_positions", tuple(tuple(float(c) for c in p) for p in self.ue_positions))
        obj(self, "target_position", tuple(float(c) for c in self.target_position))
        hw = self.aoa_half_width
        if isinstance(hw, (int, float)):
            hw = (float(hw),) * self.num_nodes
        elif len(hw) == 0:
            hw = (math.radians(2.0),) * self.num_nodes
        obj(self, "aoa_half_width", tuple(float(x) for x in hw))
        if isinstance(self.rcs_model, Mapping):
            obj(self, "rcs_model", RcsModelSpec(**self.rcs_model))
        if self.rcs_profile is not None:
            ang, val = self.rcs_profile
            obj(self, "rcs_profile", (tuple(float(a) for a in ang), tuple(float(v) for v in val)))
        if self.clutter_points is not None:
            pts = tuple(p if isinstance(p, ClutterPoint) else ClutterPoint(**p) for p in self.clutter_points)
            obj(self, "clutter_points", pts)
        self._validate()

    def _validate(self):
        for name in ("num_nodes", "tx_antennas", "rx_antennas", "num_ues", "snapshots"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if len(self.node_positions) != self.num_nodes:
            raise ConfigError("node_positions length must equal num_nodes")
        if len(self.ue_positions) != self.num_ues:
            raise ConfigError("ue_positions length must equal num_ues")
        pts = list(self.node_positions) + list(self.ue_positions) + [self.target_position]
        if any(len(p) != 3 for p in pts):
            raise ConfigError("positions must be 3-vectors")
        if not np.all(np.isfinite(np.asarray(pts, dtype=float))):
            raise ConfigError("positions must be finite")
        if len(self.aoa_half_width) != self.num_nodes:
            raise ConfigError("aoa_half_width needs one entry per node")
        if any(x < 0 for x in self.aoa_half_width):
            raise ConfigError("aoa_half_width must be nonnegative")
        if not 0 <= self.sync_error_bound < 0.5:
            raise ConfigError("sync_error_bound must lie in [0, 0.5)")
        for name in ("power_budget", "comm_noise", "sensing_noise", "sinr_threshold",
                     "sca_tolerance", "wavelength", "antenna_spacing", "rician_factor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.clutter_cnr < 0:
            raise ConfigError("clutter power must be nonnegative")
        if self.clutter_points is not None:
            for p in self.clutter_points:
                if p.power < 0:
                    raise ConfigError("clutter power must be nonnegative")
                if not (0 <= p.rx < self.num_nodes and 0 <= p.tx < self.num_nodes):
                    raise ConfigError("clutter link index out of range")
        if self.robust_numerator not in ("nominal", "conservative"):
            raise ConfigError("robust_numerator must be 'nominal' or 'conservative'")
        if self.aoa_grid_points < 3 or self.aoa_grid_points % 2 == 0:
            raise ConfigError("aoa_grid_points must be odd and >= 3")
        if self.rcs_profile is not None:
            ang, val = self.rcs_profile
            if len(ang) == 0 or len(ang) != len(val):
                raise ConfigError("rcs_profile table is empty or ragged")
            if any(v < 0 for v in val):
                raise ConfigError("rcs_profile means must be nonnegative")
        if self.pathloss_reference is not None and not self.pathloss_reference > 0:
            raise ConfigError("pathloss_reference must be positive")

    # ------------------------------------------------------------------
    @property
    def target_ranges(self) -> np.ndarray:
        d = np.asarray(self.target_position) - np.asarray(self.node_positions)
        return np.linalg.norm(d, axis=1)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        """Canonical mapping in internal (linear, radian) units."""
        out: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "rcs_model":
                v = {"kind": v.kind, "shape": v.shape}
            elif f.name == "rcs_profile" and v is not None:
                v = {"angles_rad": list(v[0]), "mean": list(v[1])}
            elif f.name == "clutter_points" and v is not None:
                v = [dataclasses.asdict(p) for p in v]
            elif isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> "ScenarioConfig":
        return cls(**_ingest(dict(data), base_dir))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ----------------------------------------------------------------------
# ingestion: unit-suffixed keys are converted here and nowhere else

_DB_KEYS = {"rician_factor_db": "rician_factor", "sinr_threshold_db": "sinr_threshold",
            "clutter_cnr_db": "clutter_cnr"}
_DEG_KEYS = {"target_heading_deg": "target_heading", "clutter_offset_deg": "clutter_offset"}


def _ingest(d: dict[str, Any], base_dir: Path | None) -> dict[str, Any]:
    for k, name in _DB_KEYS.items():
        if k in d:
            d[name] = db2lin(float(d.pop(k)))
    for k, name in _DEG_KEYS.items():
        if k in d:
            d[name] = math.radians(float(d.pop(k)))
    if "aoa_half_width_deg" in d:
        v = d.pop("aoa_half_width_deg")
        d["aoa_half_width"] = ([math.radians(float(x)) for x in v]
                               if isinstance(v, (list, tuple)) else math.radians(float(v)))
    # noise levels are given through P_max / sigma^2 ratios
    power = float(d.get("power_budget", 1.0))
    if "comm_snr_db" in d:
        d["comm_noise"] = power / db2lin(float(d.pop("comm_snr_db")))
    if "sensing_snr_db" in d:
        d["sensing_noise"] = power / db2lin(float(d.pop("sensing_snr_db")))
    if isinstance(d.get("aoa_half_width"), list):
        d["aoa_half_width"] = tuple(d["aoa_half_width"])
    prof = d.get("rcs_profile")
    if isinstance(prof, Mapping):
        if "csv" in prof:
            path = Path(prof["csv"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            arr = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
            d["rcs_profile"] = (tuple(np.radians(arr[:, 0])), tuple(arr[:, 1]))
        elif "table_deg" in prof:
            arr = np.asarray(prof["table_deg"], dtype=float)
            d["rcs_profile"] = (tuple(np.radians(arr[:, 0])), tuple(arr[:, 1]))
        else:
            d["rcs_profile"] = (tuple(prof["angles_rad"]), tuple(prof["mean"]))
    pts = d.get("clutter_points")
    if pts is not None:
        conv = []
        for p in pts:
            p = dict(p)
            if "offset_deg" in p:
                p["offset"] = math.radians(float(p.pop("offset_deg")))
            if "cnr_db" in p:
                sn = float(d.get("sensing_noise", 1e-3))
                p["power"] = sn * db2lin(float(p.pop("cnr_db")))
            conv.append(ClutterPoint(**p))
        d["clutter_points"] = tuple(conv)
    return d


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    data = yaml.safe_load(path.read_text())
    return ScenarioConfig.from_dict(data, base_dir=path.parent)


def save_config(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


# ----------------------------------------------------------------------


def spawn_rng_stream(cfg_or_seed: ScenarioConfig | int, label: str) -> np.random.Generator:
    """Deterministic generator keyed by ``(seed, label)``."""
    seed = cfg_or_seed.seed if isinstance(cfg_or_seed, ScenarioConfig) else int(cfg_or_seed)
    seed &= (1 << 64) - 1
    digest = hashlib.sha256(label.encode()).digest()
    label_words = np.frombuffer(digest[:16], dtype=np.uint32).tolist()
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, *label_words])
    return np.random.Generator(np.random.PCG64(ss))


def _circle_nodes(num_nodes: int, target: np.ndarray, slant_range: float, phase: float):
    ground = math.sqrt(max(slant_range**2 - target[2] ** 2, 0.0))
    ang = phase + 2 * np.pi * np.arange(num_nodes) / num_nodes
    return [(target[0] + ground * math.cos(a), target[1] + ground * math.sin(a), 0.0) for a in ang]


def _draw_ues(rng, num_ues, center, half_side, nodes, min_distance):
    ues = []
    while len(ues) < num_ues:
        xy = center[:2] + rng.uniform(-half_side, half_side, size=2)
        p = np.array([xy[0], xy[1], 0.0])
        if all(np.linalg.norm(p - np.asarray(n)) >= min_distance for n in nodes):
            ues.append(tuple(p))
    return ues


def make_config(num_nodes: int = 2, antennas: int = 12, num_ues: int = 3, seed: int = 0,
                slant_range: float = 100.0, target_altitude: float = 20.0,
                node_phase: float = 0.0, ue_half_side: float = 100.0,
                ue_min_distance: float = 10.0, **overrides) -> ScenarioConfig:
    """Nodes evenly spaced on a circle under the target; UEs uniform in a square.

    UE positions are redrawn per ``seed`` (stream ``"ue_placement"``), rejecting
    draws closer than ``ue_min_distance`` to any node.
    """
    target = np.array([0.0, 0.0, target_altitude])
    nodes = _circle_nodes(num_nodes, target, slant_range, node_phase)
    rng = spawn_rng_stream(seed, "ue_placement")
    ues = _draw_ues(rng, num_ues, target, ue_half_side, nodes, ue_min_distance)
    kw: dict[str, Any] = dict(
        num_nodes=num_nodes, tx_antennas=antennas, rx_antennas=antennas, num_ues=num_ues,
        node_positions=nodes, ue_positions=ues, target_position=tuple(target),
        pathloss_reference=slant_range, seed=seed,
    )
    kw.update(overrides)
    if "wavelength" in overrides and "antenna_spacing" not in overrides:
        kw["antenna_spacing"] = overrides["wavelength"] / 2
    return ScenarioConfig(**kw)


def default_table2_config(seed: int = 0, num_nodes: int = 2) -> ScenarioConfig:
    """Full-scale parameters: M = 12, K = 3, 30 dB budgets, R = 100 m, 2 deg AoA error."""
    return make_config(
        num_nodes=num_nodes, antennas=12, num_ues=3, seed=seed,
        wavelength=0.03, antenna_spacing=0.015, rician_factor=db2lin(5.0),
        power_budget=1.0, comm_noise=1.0 / db2lin(30.0), sensing_noise=1.0 / db2lin(30.0),
        sync_error_bound=0.01, aoa_half_width=math.radians(2.0),
        snapshots=100, sca_tolerance=0.01,
    )


def desk_scale_config(seed: int = 0, num_nodes: int = 2, antennas: int = 4,
                      num_ues: int = 2, **overrides) -> ScenarioConfig:
    """Default link budgets at desk size (N = 2, M = 4, K = 2 by default)."""
    return make_config(num_nodes=num_nodes, antennas=antennas, num_ues=num_ues, seed=seed,
                       **overrides)


# ----------------------------------------------------------------------


@dataclass(frozen=True)
class GeometrySummary:
    """Azimuths (rad, from the +x broadside, in (-pi, pi]) and ranges (m)."""

    target_angles: np.ndarray  # (N,) estimated target AoA per node
    target_ranges: np.ndarray  # (N,)
    ue_angles: np.ndarray  # (N, K)
    ue_ranges: np.ndarray  # (N, K)


def _azimuth(delta: np.ndarray) -> np.ndarray:
    ang = np.arctan2(delta[..., 1], delta[..., 0])
    return np.where(ang <= -np.pi, ang + 2 * np.pi, ang)


def derive_geometry(cfg: ScenarioConfig) -> GeometrySummary:
    nodes = np.asarray(cfg.node_positions)
    ues = np.asarray(cfg.ue_positions)
    tgt = np.asarray(cfg.target_position)
    d_t = tgt[None, :] - nodes
    d_u = ues[None, :, :] - nodes[:, None, :]
    r_t = np.linalg.norm(d_t, axis=-1)
    r_u = np.linalg.norm(d_u, axis=-1)
    if np.any(r_t <= 1e-9) or np.any(r_u <= 1e-9):
        raise GeometryError("node coincides with the target or a UE")
    if np.any(np.linalg.norm(d_t[:, :2], axis=-1) <= 1e-9):
        raise GeometryError("target directly above a node: azimuth undefined")
    return GeometrySummary(_azimuth(d_t), r_t, _azimuth(d_u), r_u)
