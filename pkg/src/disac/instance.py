"""One realized scenario: geometry, channels, clutter and RCS statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import (DownlinkChannelSet, SensingChannelFactors, draw_downlink_channels,
                      nominal_sensing_factors)
from .rcs import RcsProfile, RcsStatistics, network_statistics, profile_from_config
from .scenario import GeometrySummary, ScenarioConfig, derive_geometry, spawn_rng_stream
from .sdp_core.p3 import P3Data
from .sensing import build_clutter_covariance, lower_bound_objective, noise_covariance

__all__ = ["SystemInstance", "build_instance"]


@dataclass(frozen=True)
class SystemInstance:
    cfg: ScenarioConfig
    geometry: GeometrySummary
    channels: DownlinkChannelSet
    true_aoa: np.ndarray  # (N,) actual target AoA at each node
    clutter: np.ndarray  # (N, N, M_r, M_r)
    R0: np.ndarray  # (N, M_r, M_r)
    profile: RcsProfile

    @property
    def estimated_aoa(self) -> np.ndarray:
        return self.geometry.target_angles

    def factors(self, aoa=None) -> SensingChannelFactors:
        aoa = self.estimated_aoa if aoa is None else aoa
        return nominal_sensing_factors(self.cfg, self.geometry, aoa)

    def stats(self, aoa=None) -> RcsStatistics:
        aoa = self.estimated_aoa if aoa is None else aoa
        return network_statistics(self.profile, aoa, self.cfg.target_heading)

    def link_weight(self, aoa=None, stats: RcsStatistics | None = None) -> np.ndarray:
        f = self.factors(aoa)
        st = stats or self.stats(aoa)
        return f.shrinkage**2 * f.pathloss * st.second_moment

    def expected_rs(self, W_s: np.ndarray, aoa=None) -> np.ndarray:
        f = self.factors(aoa)
        w = self.link_weight(aoa)
        return np.einsum("nm,nmab,mbc,nmdc->nad", w, f.A, W_s, f.A.conj())

    def lower_bound(self, W_s: np.ndarray, aoa=None) -> float:
        return lower_bound_objective(self.R0, self.expected_rs(W_s, aoa))

    def isotropic_sensing(self, fraction: float = 0.5) -> np.ndarray:
        """Sensing covariances spreading ``fraction * P_max`` evenly over all antennas."""
        c = self.cfg
        level = fraction * c.power_budget / (c.num_nodes * c.tx_antennas)
        return np.broadcast_to(level * np.eye(c.tx_antennas),
                               (c.num_nodes, c.tx_antennas, c.tx_antennas)).copy()

    def p3_data(self, aoa=None, sinr_threshold: float | None = None) -> P3Data:
        c = self.cfg
        f = self.factors(aoa)
        return P3Data.from_physical(
            self.channels.per_node,
            c.sync_error_bound,
            c.sinr_threshold if sinr_threshold is None else sinr_threshold,
            self.R0, f.A, self.link_weight(aoa), c.power_budget, c.comm_noise,
            c.sensing_noise)


def build_instance(cfg: ScenarioConfig) -> SystemInstance:
    """Realize channels and the true target AoA for ``cfg.seed``."""
    geometry = derive_geometry(cfg)
    channels = draw_downlink_channels(cfg, geometry, spawn_rng_stream(cfg, "channels"))
    half = np.asarray(cfg.aoa_half_width, dtype=float)
    u = spawn_rng_stream(cfg, "aoa").uniform(-1.0, 1.0, size=cfg.num_nodes)
    true_aoa = geometry.target_angles + u * half
    clutter = build_clutter_covariance(cfg, geometry)
    return SystemInstance(cfg, geometry, channels, true_aoa, clutter,
                          noise_covariance(cfg, clutter), profile_from_config(cfg))
