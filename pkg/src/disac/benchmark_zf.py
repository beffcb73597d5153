"""Zero-forcing benchmark with a one-dimensional communication/sensing power split."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .instance import SystemInstance
from .optimizer import BeamformerSolution
from .robust_sinr import robust_sinr_terms

__all__ = ["DEFAULT_RHO_GRID", "ZfSolution", "zf_comm_precoder", "zf_grid_search",
           "zf_sense_beam"]

log = logging.getLogger(__name__)

DEFAULT_RHO_GRID = np.round(np.arange(1, 20) * 0.05, 10)


def zf_comm_precoder(H: np.ndarray, power: float) -> np.ndarray:
    """ZF beams for stacked channels ``H`` (K, N*M_t), equal power per UE.

    Returns (K, N*M_t) with ``h_k^H w_j = 0`` for ``j != k``.
    """
    H = np.asarray(H)
    K = H.shape[0]
    Hc = H.T  # columns h_k
    gram = Hc.conj().T @ Hc
    if np.linalg.matrix_rank(gram) < K:
        raise np.linalg.LinAlgError("rank-deficient UE channel matrix")
    W = Hc @ np.linalg.inv(gram)
    W = W / np.linalg.norm(W, axis=0, keepdims=True) * np.sqrt(power / K)
    return W.T


def zf_sense_beam(a_t: np.ndarray, h_nodes: np.ndarray, power: float) -> np.ndarray:
    """Per-node sensing beams toward the target, projected off the UE channels.

    The beam follows ``conj(a_t)``: that is the direction a transmit steering
    row ``a_t^T`` responds to.  ``h_nodes`` is (N, K, M_t); each node gets
    ``power / N``.
    """
    a_t = np.asarray(a_t)
    N, Mt = a_t.shape
    out = np.empty((N, Mt), dtype=complex)
    for n in range(N):
        target = np.conj(a_t[n])
        Hn = h_nodes[n].T  # (M_t, K)
        if Hn.size:
            proj = target - Hn @ (np.linalg.pinv(Hn) @ target)
        else:
            proj = target
        if np.linalg.norm(proj) <= 1e-9 * np.linalg.norm(target):
            log.warning("node %d: target steering lies in the UE span; using it unprojected", n)
            proj = target
        out[n] = proj / np.linalg.norm(proj) * np.sqrt(power / N)
    return out


@dataclass
class ZfSolution:
    rho: float | None
    wc: np.ndarray | None
    ws: np.ndarray | None
    sinr: np.ndarray | None
    objective: float
    feasible: bool

    def as_beamformer(self, aoa=None) -> BeamformerSolution:
        if not self.feasible:
            raise ValueError("infeasible ZF solution")
        return BeamformerSolution(
            Wc=np.einsum("ki,kj->kij", self.wc, self.wc.conj()),
            Ws=np.einsum("ni,nj->nij", self.ws, self.ws.conj()),
            wc=self.wc, ws=self.ws, objective=self.objective,
            objective_trace=[self.objective], aoa=aoa, scheme="zf", origin="zf")


def zf_grid_search(inst: SystemInstance, aoa=None, rho_grid=DEFAULT_RHO_GRID,
                   sinr_threshold: float | None = None) -> ZfSolution:
    """Best feasible power split; the lowest ``rho`` wins ties.

    Feasibility uses the worst-case SINR; the objective is the lower bound at
    ``aoa`` (the estimated AoA when omitted).  Beams always point at the estimate.
    """
    cfg = inst.cfg
    gamma = cfg.sinr_threshold if sinr_threshold is None else sinr_threshold
    delta = cfg.sync_error_bound
    rho_grid = np.asarray(rho_grid, dtype=float)
    if rho_grid.size == 0:
        raise ValueError("empty rho grid")
    P = cfg.power_budget
    ch = inst.channels
    a_t = inst.factors().a_t
    wc_unit = zf_comm_precoder(ch.stacked, 1.0)
    ws_unit = zf_sense_beam(a_t, ch.per_node, 1.0)
    best = ZfSolution(None, None, None, None, -np.inf, False)
    for rho in rho_grid:
        wc = wc_unit * np.sqrt(rho * P)
        ws = ws_unit * np.sqrt((1 - rho) * P)
        Wc = np.einsum("ki,kj->kij", wc, wc.conj())
        Ws = np.einsum("ni,nj->nij", ws, ws.conj())
        terms = robust_sinr_terms(ch.stacked, ch.per_node, Wc, Ws, delta, cfg.comm_noise)
        if np.any(terms.sinr < gamma):
            continue
        obj = inst.lower_bound(Ws, aoa)
        if obj > best.objective:
            best = ZfSolution(float(rho), wc, ws, terms.sinr, obj, True)
    return best
