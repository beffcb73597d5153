"""Worst-case SINR under bounded per-node CSI perturbations.

Stacked channels ``h_k`` have shape (K, N*M_t); per-node channels
``h_{n,k}`` are (N, K, M_t).  Lifted communication covariances are
(K, N*M_t, N*M_t), sensing covariances (N, M_t, M_t).

The stacked perturbation lies in the ball of radius ``sqrt(N) * delta`` and each
node block in the ball of radius ``delta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RobustSinrTerms",
    "nominal_interference",
    "nominal_sinr",
    "robust_sinr_terms",
    "robust_sinr_value",
    "worst_case_interference",
    "worst_case_signal",
]


def worst_case_signal(Q_k: np.ndarray, W_k: np.ndarray) -> float:
    """Desired-signal power ``tr(Q_k W_k)`` (value at zero perturbation)."""
    return float(np.real(np.trace(Q_k @ W_k)))


def conservative_signal(h_k: np.ndarray, W_k: np.ndarray, radius: float) -> float:
    """Strict lower bound ``(max(0, sqrt(h^H W h) - r sqrt(lambda_max(W))))^2``.

    Equal to ``(max(0, |h^H w| - r ||w||))^2`` when ``W = w w^H``.
    """
    quad = max(float(np.real(np.conj(h_k) @ W_k @ h_k)), 0.0)
    lam = max(float(np.linalg.eigvalsh(W_k)[-1]), 0.0)
    return max(0.0, np.sqrt(quad) - radius * np.sqrt(lam)) ** 2


def _lemma_terms(h: np.ndarray, W: np.ndarray, radius: float):
    """tr(h h^H W) + r^2 tr W + r ||W h|| + r ||h^H W||, per leading axis."""
    quad = np.real(np.einsum("...i,...ij,...j->...", np.conj(h), W, h))
    tr = np.real(np.trace(W, axis1=-2, axis2=-1))
    wh = np.linalg.norm(np.einsum("...ij,...j->...i", W, h), axis=-1)
    hw = np.linalg.norm(np.einsum("...i,...ij->...j", np.conj(h), W), axis=-1)
    return quad, radius**2 * tr, radius * wh, radius * hw


def worst_case_interference(h_k: np.ndarray, W_others: np.ndarray, h_nk: np.ndarray,
                            W_s: np.ndarray, delta: float, noise: float) -> float:
    """Closed-form maximum interference plus noise for one UE.

    ``W_others`` are the lifted beams of the other UEs (J, N*M_t, N*M_t), ``h_nk``
    the UE's per-node channels (N, M_t) and ``W_s`` the sensing covariances.
    """
    num_nodes = W_s.shape[0] if W_s is not None and len(W_s) else h_nk.shape[0]
    total = float(noise)
    if W_others is not None and len(W_others):
        r = np.sqrt(num_nodes) * delta
        total += float(sum(np.sum(t) for t in _lemma_terms(h_k[None, :], W_others, r)))
    if W_s is not None and len(W_s):
        total += float(sum(np.sum(t) for t in _lemma_terms(h_nk, W_s, delta)))
    return total


def nominal_interference(h_k, W_others, h_nk, W_s, noise: float) -> float:
    return worst_case_interference(h_k, W_others, h_nk, W_s, 0.0, noise)


@dataclass(frozen=True)
class RobustSinrTerms:
    signal: np.ndarray  # (K,) worst-case numerators
    interference: np.ndarray  # (K,) worst-case denominators

    @property
    def sinr(self) -> np.ndarray:
        return self.signal / self.interference


def robust_sinr_terms(h_stacked: np.ndarray, h_per_node: np.ndarray, W_c: np.ndarray,
                      W_s: np.ndarray, delta: float, noise: float,
                      numerator: str = "nominal") -> RobustSinrTerms:
    """Worst-case numerator and denominator for every UE."""
    K = h_stacked.shape[0]
    N = h_per_node.shape[0]
    sig = np.empty(K)
    den = np.empty(K)
    for k in range(K):
        if numerator == "conservative":
            sig[k] = conservative_signal(h_stacked[k], W_c[k], np.sqrt(N) * delta)
        else:
            sig[k] = worst_case_signal(np.outer(h_stacked[k], h_stacked[k].conj()), W_c[k])
        others = np.delete(W_c, k, axis=0)
        den[k] = worst_case_interference(h_stacked[k], others, h_per_node[:, k, :], W_s,
                                         delta, noise)
    return RobustSinrTerms(sig, den)


def robust_sinr_value(k: int, h_stacked, h_per_node, W_c, W_s, delta: float, noise: float,
                      numerator: str = "nominal") -> float:
    t = robust_sinr_terms(h_stacked, h_per_node, W_c, W_s, delta, noise, numerator)
    return float(t.sinr[k])


def nominal_sinr(h_per_node: np.ndarray, w_c: np.ndarray, w_s: np.ndarray, noise: float,
                 errors: np.ndarray | None = None) -> np.ndarray:
    """SINR of every UE for beamforming vectors and an explicit perturbation.

    ``w_c`` is (K, N*M_t) stacked communication beams, ``w_s`` is (N, M_t) and
    ``errors`` (N, K, M_t) is added to the per-node channels.
    """
    h = h_per_node if errors is None else h_per_node + errors
    N, K, M = h.shape
    hs = np.transpose(h, (1, 0, 2)).reshape(K, N * M)
    g = np.conj(hs) @ w_c.T  # g[k, j] = h_k^H w_j
    sens = np.abs(np.einsum("nki,ni->kn", np.conj(h), w_s)) ** 2
    sig = np.abs(np.diag(g)) ** 2
    interf = np.sum(np.abs(g) ** 2, axis=1) - sig + sens.sum(axis=1) + noise
    return sig / interf
