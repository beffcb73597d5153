"""Monte-Carlo detection with a whitened matched filter, and sampled-KLD reports.

Input SCNR is the per-snapshot ratio ``alpha^2 tr(E[Rs_ref]) / tr(R0)`` where
``E[Rs_ref]`` is the expected echo covariance of an isotropic full-power
reference transmission at the true AoA.  The amplitude ``alpha`` found that way
scales the echo of whichever beams are evaluated, so better sensing beams show
up as a left shift of the Pd curve.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .instance import SystemInstance
from .optimizer import BeamformerSolution
from .rcs import network_statistics, sample_rcs
from .scenario import RcsModelSpec
from .sensing import KldSpread, expected_kld_monte_carlo

__all__ = [
    "DetectionCurve",
    "DetectionExperiment",
    "SyncMode",
    "detection_probability",
    "echo_signature",
    "pd_crossing",
    "reference_scale",
    "sampled_kld_report",
    "sensing_sequences",
    "simulate_hypothesis_data",
    "whitening_factors",
    "wilson_interval",
    "wmf_statistic",
]


class SyncMode(str, enum.Enum):
    SHRINKAGE = "Shrinkage"
    SAMPLED_PHASES = "SampledPhases"


@dataclass(frozen=True)
class DetectionExperiment:
    trials: int = 1000
    input_scnr_grid: tuple = tuple(float(x) for x in np.arange(-60.0, -9.9, 2.0))
    threshold_db: float = 10.0
    snapshots: int = 100
    sync_mode: SyncMode = SyncMode.SHRINKAGE
    per_snapshot_rcs: bool = False

    def __post_init__(self):
        if self.trials < 100:
            raise ValueError("trials must be >= 100")
        if len(self.input_scnr_grid) == 0:
            raise ValueError("empty SCNR grid")
        object.__setattr__(self, "sync_mode", SyncMode(self.sync_mode))


def wilson_interval(successes: int, trials: int, confidence: float = 0.95):
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


def sensing_sequences(num_nodes: int, T: int) -> np.ndarray:
    """Orthonormal (over T) unit-power DFT sequences, shape (N, T)."""
    if T < num_nodes:
        raise ValueError("need at least one snapshot per transmitting node")
    t = np.arange(T)
    return np.exp(1j * 2 * np.pi * np.outer(np.arange(num_nodes), t) / T)


def _sqrt_psd(R: np.ndarray) -> np.ndarray:
    lam, U = np.linalg.eigh(0.5 * (R + R.conj().T))
    return U * np.sqrt(np.clip(lam, 0, None))


def simulate_hypothesis_data(inst: SystemInstance, ws: np.ndarray, target_present: bool,
                             rng: np.random.Generator, T: int, count: int = 1,
                             sync_mode: SyncMode = SyncMode.SHRINKAGE,
                             amplitude: float = 1.0, aoa=None,
                             per_snapshot_rcs: bool = False) -> np.ndarray:
    """Received blocks, shape (count, N, M_r, T).

    Clutter and noise are fresh per snapshot.  The RCS draw is held over the T
    snapshots of a trial unless ``per_snapshot_rcs``.  Echoes use the true AoA
    unless ``aoa`` is given.
    """
    cfg = inst.cfg
    N, Mr = cfg.num_nodes, cfg.rx_antennas
    shape = (count, N, Mr, T)
    noise = np.sqrt(cfg.sensing_noise / 2) * (rng.standard_normal(shape)
                                              + 1j * rng.standard_normal(shape))
    clutter_cov = inst.clutter.sum(axis=1)
    g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    roots = np.array([_sqrt_psd(R) for R in clutter_cov])  # (N, Mr, Mr)
    y = noise + np.einsum("nab,cnbt->cnat", roots, g)
    if not target_present:
        return y
    y = y + amplitude * _echo(inst, ws, rng, T, count, sync_mode, aoa, per_snapshot_rcs)
    return y


def _echo(inst, ws, rng, T, count, sync_mode, aoa, per_snapshot_rcs):
    cfg = inst.cfg
    N = cfg.num_nodes
    aoa = inst.true_aoa if aoa is None else aoa
    factors = inst.factors(aoa)
    stats = inst.stats(aoa)
    s = sensing_sequences(N, T)
    if sync_mode is SyncMode.SAMPLED_PHASES:
        phases = rng.uniform(-cfg.sync_error_bound, cfg.sync_error_bound, size=(count, N))
    else:
        phases = None
    # per-link transmitted spatial response: A_nm w_m -> (N, N, Mr)
    Aw = np.einsum("nmab,mb->nma", factors.A, ws)
    if per_snapshot_rcs:
        beta = sample_rcs(stats, cfg.rcs_model, rng, count * T).reshape(count, T, N, N)
        gain = beta * factors.L
        if phases is None:
            gain = factors.shrinkage * gain
        else:
            gain = gain * np.exp(1j * (phases[:, None, :, None] - phases[:, None, None, :]))
        return np.einsum("ctnm,nma,mt->cnat", gain, Aw, s)
    beta = sample_rcs(stats, cfg.rcs_model, rng, count)
    gain = beta * factors.L
    if phases is None:
        gain = factors.shrinkage * gain
    else:
        gain = gain * np.exp(1j * (phases[:, :, None] - phases[:, None, :]))
    return np.einsum("cnm,nma,mt->cnat", gain, Aw, s)


def whitening_factors(R0: np.ndarray) -> np.ndarray:
    """Inverse lower Cholesky factors per node, so ``F R0 F^H = I``."""
    L = np.linalg.cholesky(0.5 * (R0 + np.conj(np.swapaxes(R0, -1, -2))))
    eye = np.eye(R0.shape[-1])
    return np.array([np.linalg.solve(Ln, eye) for Ln in L])


def echo_signature(inst: SystemInstance, ws: np.ndarray) -> np.ndarray:
    """Nominal per-waveform echo ``d[m, n] = L_nm mu_nm A_nm w_m`` at the estimated
    AoA, shape (N_tx, N_rx, M_r)."""
    factors = inst.factors(inst.estimated_aoa)
    mu = inst.stats(inst.estimated_aoa).mean
    return np.einsum("nm,nmab,mb->mna", factors.L * mu, factors.A, ws)


def wmf_statistic(y: np.ndarray, R0: np.ndarray, signature: np.ndarray) -> np.ndarray:
    """Whitened matched-filter output for blocks ``y`` (..., N, M_r, T).

    Snapshots are whitened, correlated with each transmit sequence and the
    stacked result is projected on the whitened signature.  The value is
    normalized so that its mean under H0 is 1.
    """
    y = np.asarray(y)
    N_rx, Mr, T = y.shape[-3:]
    N_tx = signature.shape[0]
    F = whitening_factors(R0)
    s = sensing_sequences(N_tx, T)
    z = np.einsum("nab,...nbt,mt->...mna", F, y, s.conj()) / np.sqrt(T)
    d = np.einsum("nab,mnb->mna", F, signature)
    norm2 = np.sum(np.abs(d) ** 2)
    if norm2 == 0:
        return np.zeros(y.shape[:-3])
    return np.abs(np.einsum("mna,...mna->...", d.conj(), z)) ** 2 / norm2


def reference_scale(inst: SystemInstance) -> float:
    """``tr(E[Rs])`` of an isotropic full-power transmission at the true AoA."""
    ref = inst.isotropic_sensing(1.0)
    return float(np.real(np.trace(inst.expected_rs(ref, inst.true_aoa), axis1=-2,
                                  axis2=-1).sum()))


@dataclass
class DetectionCurve:
    scnr_db: np.ndarray
    detections: np.ndarray  # counts per grid point
    trials: int
    false_alarms: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def pd(self) -> np.ndarray:
        return self.detections / self.trials

    def intervals(self):
        ci = [wilson_interval(k, self.trials) for k in self.detections]
        return np.array([c[0] for c in ci]), np.array([c[1] for c in ci])

    def __add__(self, other: "DetectionCurve") -> "DetectionCurve":
        if not np.array_equal(self.scnr_db, other.scnr_db):
            raise ValueError("SCNR grids differ")
        return DetectionCurve(self.scnr_db, self.detections + other.detections,
                              self.trials + other.trials,
                              self.false_alarms + other.false_alarms, dict(self.meta))


def detection_probability(inst: SystemInstance, solution: BeamformerSolution,
                          experiment: DetectionExperiment, rng: np.random.Generator,
                          batch: int = 250) -> DetectionCurve:
    """Pd over the SCNR grid using common random numbers across grid points."""
    cfg = inst.cfg
    grid = np.asarray(experiment.input_scnr_grid, dtype=float)
    thr = 10 ** (experiment.threshold_db / 10)
    ws = solution.ws
    sig = echo_signature(inst, ws)
    R0 = inst.R0
    tr_r0 = float(np.real(np.trace(R0, axis1=-2, axis2=-1).sum()))
    alpha = np.sqrt(10 ** (grid / 10) * tr_r0 / reference_scale(inst))
    F = whitening_factors(R0)
    d = np.einsum("nab,mnb->mna", F, sig)
    norm = np.sqrt(np.sum(np.abs(d) ** 2))
    T = experiment.snapshots
    s = sensing_sequences(cfg.num_nodes, T)
    hits = np.zeros(grid.size, dtype=int)
    false_alarms = 0
    done = 0
    while done < experiment.trials:
        b = min(batch, experiment.trials - done)
        base = simulate_hypothesis_data(inst, ws, False, rng, T, b)
        echo = _echo(inst, ws, rng, T, b, experiment.sync_mode, None,
                     experiment.per_snapshot_rcs)

        def project(x):
            z = np.einsum("nab,cnbt,mt->cmna", F, x, s.conj()) / np.sqrt(T)
            return np.einsum("mna,cmna->c", d.conj(), z) / norm if norm > 0 else np.zeros(b)

        v, u = project(base), project(echo)
        stat = np.abs(alpha[:, None] * u[None, :] + v[None, :]) ** 2
        hits += np.sum(stat >= thr, axis=1)
        false_alarms += int(np.sum(np.abs(v) ** 2 >= thr))
        done += b
    return DetectionCurve(grid, hits, experiment.trials, false_alarms,
                          {"sync_mode": experiment.sync_mode.value})


def pd_crossing(scnr_db: np.ndarray, pd: np.ndarray, level: float = 0.5) -> float:
    """First SCNR at which the curve reaches ``level`` (linear interpolation)."""
    scnr_db, pd = np.asarray(scnr_db, float), np.asarray(pd, float)
    above = np.flatnonzero(pd >= level)
    if above.size == 0:
        return float("nan")
    i = above[0]
    if i == 0:
        return float(scnr_db[0])
    x0, x1, p0, p1 = scnr_db[i - 1], scnr_db[i], pd[i - 1], pd[i]
    return float(x0 + (level - p0) * (x1 - x0) / (p1 - p0))


def sampled_kld_report(inst: SystemInstance, solution: BeamformerSolution, count: int,
                       rng: np.random.Generator, model: RcsModelSpec | None = None,
                       aoa=None) -> KldSpread:
    """Per-draw KLD of the recovered sensing beams over ``count`` RCS draws."""
    if count < 2:
        raise ValueError("count must be >= 2")
    model = model or inst.cfg.rcs_model
    aoa = solution.aoa if aoa is None else aoa
    aoa = inst.estimated_aoa if aoa is None else aoa
    profile = inst.profile
    stats = network_statistics(type(profile)(profile.angles, profile.means, model), aoa,
                               inst.cfg.target_heading)
    return expected_kld_monte_carlo(inst.R0, inst.factors(aoa), stats,
                                    solution.sensing_covariances, count, rng, model)
