"""Statistical RCS: angle-indexed mean profiles, bistatic scaling and sampling.

RCS enters the sensing channel as a real nonnegative amplitude coefficient
``beta`` (the profile is expressed in the same units).  A chi-square target
draws ``beta ~ Gamma(k, mu / k)``; a Swerling I target draws
``beta ~ Exponential(mu)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import RcsModelSpec, ScenarioConfig

__all__ = [
    "RcsProfile",
    "RcsStatistics",
    "aspect_angle",
    "bistatic_scale",
    "default_mean_profile",
    "emit_polar_pattern",
    "link_statistics",
    "network_statistics",
    "profile_from_config",
    "sample_rcs",
]


def _wrap(theta):
    """Wrap to [-pi, pi)."""
    return (np.asarray(theta, dtype=float) + np.pi) % (2 * np.pi) - np.pi


def default_mean_profile(theta) -> np.ndarray:
    return 0.1 + 0.9 * np.cos(np.asarray(theta, dtype=float)) ** 4


@dataclass(frozen=True)
class RcsProfile:
    angles: np.ndarray  # sorted, in [-pi, pi)
    means: np.ndarray
    model: RcsModelSpec

    def __post_init__(self):
        ang = _wrap(self.angles)
        if ang.size == 0:
            raise ValueError("empty RCS profile")
        order = np.argsort(ang, kind="stable")
        means = np.asarray(self.means, dtype=float)[order]
        if np.any(means < 0):
            raise ValueError("RCS means must be nonnegative")
        object.__setattr__(self, "angles", ang[order])
        object.__setattr__(self, "means", means)

    @classmethod
    def default(cls, model: RcsModelSpec | None = None, resolution_deg: float = 1.0):
        ang = np.radians(np.arange(-180.0, 180.0, resolution_deg))
        return cls(ang, default_mean_profile(ang), model or RcsModelSpec())

    @classmethod
    def flat(cls, value: float = 1.0, model: RcsModelSpec | None = None):
        return cls(np.array([0.0]), np.array([value]), model or RcsModelSpec())

    @classmethod
    def from_csv(cls, path: str | Path, model: RcsModelSpec | None = None):
        """Rows ``angle_deg, mean_rcs``; '#' starts a comment."""
        arr = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        return cls(np.radians(arr[:, 0]), arr[:, 1], model or RcsModelSpec())

    def mean_at(self, theta) -> np.ndarray:
        """Periodic linear interpolation of the mean profile."""
        if self.angles.size == 1:
            return np.full(np.shape(theta), self.means[0], dtype=float)
        return np.interp(_wrap(theta), self.angles, self.means, period=2 * np.pi)

    def variance_of(self, mu, model: RcsModelSpec | None = None) -> np.ndarray:
        model = model or self.model
        mu = np.asarray(mu, dtype=float)
        if model.kind == "swerling1":
            return mu**2
        return mu**2 / model.shape


def profile_from_config(cfg: ScenarioConfig, model: RcsModelSpec | None = None) -> RcsProfile:
    model = model or cfg.rcs_model
    if cfg.rcs_profile is None:
        return RcsProfile.default(model)
    ang, val = cfg.rcs_profile
    return RcsProfile(np.asarray(ang), np.asarray(val), model)


@dataclass(frozen=True)
class RcsStatistics:
    mean: np.ndarray  # (N, N) mu_{s,n,m}
    variance: np.ndarray  # (N, N) nu^2_{s,n,m}

    @property
    def second_moment(self) -> np.ndarray:
        return self.mean**2 + self.variance


def bistatic_scale(theta_n, theta_m) -> np.ndarray:
    """``cos(|theta_n - theta_m| / 2)`` with the difference wrapped to [0, pi]."""
    diff = np.abs(_wrap(np.asarray(theta_n) - np.asarray(theta_m)))
    return np.cos(diff / 2)


def aspect_angle(theta_n, theta_m, heading: float = 0.0) -> np.ndarray:
    """Circular midpoint of the two AoAs, in the target frame.

    For diametrically opposed AoAs the midpoint is taken as ``theta_n + pi/2``.
    """
    tn = np.asarray(theta_n, dtype=float)
    tm = np.asarray(theta_m, dtype=float)
    s = np.exp(1j * tn) + np.exp(1j * tm)
    mid = np.where(np.abs(s) < 1e-12, tn + np.pi / 2, np.angle(s))
    return _wrap(mid - heading)


def link_statistics(profile: RcsProfile, theta_n, theta_m, heading: float = 0.0):
    """Bistatic RCS mean and variance of one link (broadcasts over arrays)."""
    sigma = profile.mean_at(aspect_angle(theta_n, theta_m, heading))
    mu = bistatic_scale(theta_n, theta_m) * sigma
    return mu, profile.variance_of(mu)


def network_statistics(profile: RcsProfile, aoa, heading: float = 0.0) -> RcsStatistics:
    aoa = np.asarray(aoa, dtype=float)
    mu, var = link_statistics(profile, aoa[:, None], aoa[None, :], heading)
    return RcsStatistics(mu, var)


def sample_rcs(stats: RcsStatistics, model: RcsModelSpec, rng: np.random.Generator,
               count: int) -> np.ndarray:
    """``count`` independent draws of beta for every link, shape (count, N, N)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    mu = np.asarray(stats.mean, dtype=float)
    size = (count,) + mu.shape
    if model.kind == "swerling1":
        return rng.exponential(1.0, size=size) * mu
    k = model.shape
    return rng.gamma(k, 1.0, size=size) * (mu / k)


def emit_polar_pattern(profile: RcsProfile, rng: np.random.Generator,
                       resolution_deg: float = 1.0, model: RcsModelSpec | None = None):
    """One monostatic RCS draw per aspect angle, for polar plots.

    Returns ``(angles_rad, draws, means)``.
    """
    if resolution_deg < 1.0:
        raise ValueError("angular resolution must be >= 1 degree")
    model = model or profile.model
    ang = np.radians(np.arange(-180.0, 180.0, resolution_deg))
    mu = profile.mean_at(ang)
    stats = RcsStatistics(mu, profile.variance_of(mu, model))
    draws = sample_rcs(stats, model, rng, 1)[0]
    return ang, draws, mu
