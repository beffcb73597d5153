"""Second-order statistics of the sensing signal and KLD evaluation.

Block-diagonal covariances are carried as stacks of blocks, shape
``(N, M_r, M_r)``.  The KLD of block-diagonal Gaussians is the sum of the
per-block values, so nothing here forms the full ``N*M_r`` matrix unless asked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .channel import SensingChannelFactors, steering_vector
from .rcs import RcsStatistics, sample_rcs
from .scenario import GeometrySummary, RcsModelSpec, ScenarioConfig

__all__ = [
    "KldSpread",
    "NotPositiveDefiniteError",
    "block_diag",
    "build_clutter_covariance",
    "expected_kld_monte_carlo",
    "expected_target_covariance",
    "kld",
    "kld_blocks",
    "lower_bound_objective",
    "noise_covariance",
    "target_covariance_draw",
]


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


def _herm(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + np.conj(np.swapaxes(x, -1, -2)))


def block_diag(blocks: np.ndarray) -> np.ndarray:
    return sla.block_diag(*blocks)


def build_clutter_covariance(cfg: ScenarioConfig, geometry: GeometrySummary) -> np.ndarray:
    """Point-scatterer clutter covariances ``R^clu_{n,m}``, shape (N, N, M_r, M_r).

    Directions are offsets from the nominal target azimuth at the receiving
    node.  Without explicit points every link gets one scatterer at
    ``clutter_offset`` with power ``clutter_cnr * sigma_s^2``.
    """
    n, mr = cfg.num_nodes, cfg.rx_antennas
    out = np.zeros((n, n, mr, mr), dtype=complex)
    if cfg.clutter_points is None:
        points = [(i, j, cfg.clutter_offset, cfg.clutter_cnr * cfg.sensing_noise)
                  for i in range(n) for j in range(n)]
    else:
        points = [(p.rx, p.tx, p.offset, p.power) for p in cfg.clutter_points]
    for rx, tx, offset, power in points:
        if power < 0:
            raise ValueError("negative clutter power")
        a = steering_vector(geometry.target_angles[rx] + offset, mr, cfg.antenna_spacing,
                            cfg.wavelength)
        out[rx, tx] += power * np.outer(a, a.conj())
    return out


def noise_covariance(cfg: ScenarioConfig, clutter: np.ndarray) -> np.ndarray:
    """H0 covariance blocks ``R_{0,n} = sum_m R^clu_{n,m} + sigma_s^2 I``."""
    eye = np.eye(cfg.rx_antennas)
    return clutter.sum(axis=1) + cfg.sensing_noise * eye


def target_covariance_draw(factors: SensingChannelFactors, beta: np.ndarray,
                           w_s: np.ndarray, phases: np.ndarray | None = None) -> np.ndarray:
    """Target covariance blocks for one (or a batch of) RCS draw(s).

    ``w_s`` holds lifted sensing covariances (N, M_t, M_t); ``beta`` is (..., N, N).
    """
    G = factors.effective(beta, phases)
    return np.einsum("...nmab,mbc,...nmdc->...nad", G, w_s, G.conj())


def expected_target_covariance(factors: SensingChannelFactors, stats: RcsStatistics,
                               w_s: np.ndarray) -> np.ndarray:
    """RCS-averaged target covariance blocks (second moments of beta)."""
    coef = factors.shrinkage**2 * np.abs(factors.L) ** 2 * stats.second_moment
    return np.einsum("nm,nmab,mbc,nmdc->nad", coef, factors.A, w_s, factors.A.conj())


def _logdet_chol(x: np.ndarray):
    try:
        c = np.linalg.cholesky(x)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc
    return c, 2.0 * np.sum(np.log(np.real(np.diagonal(c, axis1=-2, axis2=-1))), axis=-1)


def kld(R0: np.ndarray, R1: np.ndarray) -> np.ndarray:
    """``log|R0| - log|R1| + tr(R0^{-1} R1) - n`` for complex Gaussians.

    Broadcasts over leading axes.  Uses Cholesky factors only.
    """
    R0 = _herm(np.asarray(R0, dtype=complex))
    R1 = _herm(np.asarray(R1, dtype=complex))
    c0, ld0 = _logdet_chol(R0)
    _, ld1 = _logdet_chol(R1)
    # tr(R0^{-1} R1) = ||C0^{-1} C1||_F^2 would need C1; solving is cheaper
    y = np.linalg.solve(c0, R1)
    x = np.linalg.solve(np.conj(np.swapaxes(c0, -1, -2)), y)
    tr = np.real(np.trace(x, axis1=-2, axis2=-1))
    return ld0 - ld1 + tr - R0.shape[-1]


def kld_blocks(R0_blocks: np.ndarray, R1_blocks: np.ndarray) -> np.ndarray:
    """KLD of block-diagonal covariances (sum over the block axis)."""
    return np.sum(kld(R0_blocks, R1_blocks), axis=-1)


def lower_bound_objective(R0_blocks: np.ndarray, expected_rs: np.ndarray) -> float:
    """Jensen lower bound on the RCS-averaged KLD."""
    return float(kld_blocks(R0_blocks, R0_blocks + expected_rs))


@dataclass(frozen=True)
class KldSpread:
    mean: float
    p10: float
    p90: float
    samples: np.ndarray


def expected_kld_monte_carlo(R0_blocks: np.ndarray, factors: SensingChannelFactors,
                             stats: RcsStatistics, w_s: np.ndarray, count: int,
                             rng: np.random.Generator, model: RcsModelSpec,
                             batch: int = 2000) -> KldSpread:
    """Sample-average KLD over ``count`` RCS draws with its 10/90 % percentiles."""
    if count < 1:
        raise ValueError("count must be >= 1")
    vals = []
    remaining = count
    while remaining > 0:
        b = min(batch, remaining)
        beta = sample_rcs(stats, model, rng, b)
        rs = target_covariance_draw(factors, beta, w_s)
        vals.append(kld_blocks(R0_blocks[None], R0_blocks[None] + rs))
        remaining -= b
    v = np.concatenate(vals)
    p10, p90 = np.percentile(v, [10, 90])
    return KldSpread(float(v.mean()), float(p10), float(p90), v)
