"""Downlink Rician channels, sensing-channel factors and phase-sync impairments.

Path loss follows free space.  When ``cfg.pathloss_reference`` is set, gains
are expressed relative to the free-space gain at that distance, so that the
configured ``P_max / sigma^2`` ratios are link SNRs at the reference range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import GeometrySummary, ScenarioConfig

__all__ = [
    "DownlinkChannelSet",
    "SensingChannelFactors",
    "apply_sync_error",
    "bistatic_pathloss",
    "draw_downlink_channels",
    "free_space_gain",
    "nominal_sensing_factors",
    "steering_vector",
]


def steering_vector(theta, num_elements: int, d0: float, wavelength: float) -> np.ndarray:
    """ULA response ``exp(j 2 pi d0 i sin(theta) / lambda)``, i = 0..num_elements-1.

    ``theta`` may be an array; the element axis is appended last.
    """
    theta = np.asarray(theta, dtype=float)
    idx = np.arange(num_elements)
    return np.exp(1j * 2 * np.pi * d0 * np.sin(theta)[..., None] * idx / wavelength)


def free_space_gain(distance, wavelength: float) -> np.ndarray:
    """One-way free-space power gain ``(lambda / (4 pi d))**2``."""
    return (wavelength / (4 * np.pi * np.asarray(distance, dtype=float))) ** 2


def bistatic_pathloss(d_rx, d_tx, wavelength: float) -> np.ndarray:
    """Radar-equation gain ``lambda^2 / ((4 pi)^3 d_tx^2 d_rx^2)`` (RCS excluded)."""
    d_rx = np.asarray(d_rx, dtype=float)
    d_tx = np.asarray(d_tx, dtype=float)
    return wavelength**2 / ((4 * np.pi) ** 3 * d_tx**2 * d_rx**2)


@dataclass(frozen=True)
class DownlinkChannelSet:
    per_node: np.ndarray  # (N, K, M_t) complex, h_{n,k}
    pathloss: np.ndarray  # (N, K)

    @property
    def stacked(self) -> np.ndarray:
        """(K, N*M_t) stacked channels h_k (node blocks concatenated)."""
        n, k, m = self.per_node.shape
        return np.transpose(self.per_node, (1, 0, 2)).reshape(k, n * m)


def _downlink_gain(cfg: ScenarioConfig, distance):
    g = free_space_gain(distance, cfg.wavelength)
    if cfg.pathloss_reference is not None:
        g = g / free_space_gain(cfg.pathloss_reference, cfg.wavelength)
    return g


def draw_downlink_channels(cfg: ScenarioConfig, geometry: GeometrySummary,
                           rng: np.random.Generator) -> DownlinkChannelSet:
    n, k, m = cfg.num_nodes, cfg.num_ues, cfg.tx_antennas
    gamma = cfg.rician_factor
    ell = _downlink_gain(cfg, geometry.ue_ranges)
    los_phase = np.exp(-1j * 2 * np.pi * geometry.ue_ranges / cfg.wavelength)
    los = los_phase[..., None] * steering_vector(geometry.ue_angles, m, cfg.antenna_spacing,
                                                 cfg.wavelength)
    nlos = (rng.standard_normal((n, k, m)) + 1j * rng.standard_normal((n, k, m))) / np.sqrt(2)
    h = np.sqrt(ell)[..., None] * (np.sqrt(gamma / (gamma + 1)) * los
                                   + np.sqrt(1 / (gamma + 1)) * nlos)
    return DownlinkChannelSet(h, ell)


def apply_sync_error(h: np.ndarray, phi: float) -> np.ndarray:
    """Effective channel under a residual phase error ``phi`` at the transmitting node."""
    return np.exp(1j * phi) * np.asarray(h)


@dataclass(frozen=True)
class SensingChannelFactors:
    """Nominal factors of every link (rx n, tx m) at a given set of target AoAs."""

    L: np.ndarray  # (N, N) complex large-scale factor with round-trip phase
    pathloss: np.ndarray  # (N, N), |L|^2
    A: np.ndarray  # (N, N, M_r, M_t), a_r(theta_n) a_t(theta_m)^T
    shrinkage: float  # 1 - 2 delta
    aoa: np.ndarray  # (N,) angles used for A
    a_t: np.ndarray  # (N, M_t) transmit steering toward the target
    a_r: np.ndarray  # (N, M_r)

    def effective(self, beta: np.ndarray, phases: np.ndarray | None = None) -> np.ndarray:
        """Sensing channels ``G = shrink * L * beta * A`` for an RCS draw ``beta``.

        ``beta`` has shape (..., N, N).  With explicit per-node ``phases`` the
        relative rotation ``exp(j(phi_n - phi_m))`` replaces the shrinkage.
        """
        gain = np.asarray(beta) * self.L
        if phases is None:
            gain = self.shrinkage * gain
        else:
            phases = np.asarray(phases)
            gain = gain * np.exp(1j * (phases[..., :, None] - phases[..., None, :]))
        return gain[..., None, None] * self.A


def nominal_sensing_factors(cfg: ScenarioConfig, geometry: GeometrySummary,
                            aoa) -> SensingChannelFactors:
    aoa = np.asarray(aoa, dtype=float)
    if aoa.shape != (cfg.num_nodes,):
        raise ValueError("need one AoA per node")
    r = geometry.target_ranges
    if np.any(r <= 0):
        raise ValueError("degenerate geometry")
    pl = bistatic_pathloss(r[:, None], r[None, :], cfg.wavelength)
    if cfg.pathloss_reference is not None:
        ref = cfg.pathloss_reference
        pl = pl / bistatic_pathloss(ref, ref, cfg.wavelength)
    L = np.sqrt(pl) * np.exp(-1j * 2 * np.pi * (r[:, None] + r[None, :]) / cfg.wavelength)
    a_t = steering_vector(aoa, cfg.tx_antennas, cfg.antenna_spacing, cfg.wavelength)
    a_r = steering_vector(aoa, cfg.rx_antennas, cfg.antenna_spacing, cfg.wavelength)
    A = a_r[:, None, :, None] * a_t[None, :, None, :]
    return SensingChannelFactors(L, pl, A, 1.0 - 2.0 * cfg.sync_error_bound, aoa, a_t, a_r)
