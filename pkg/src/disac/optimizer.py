"""Robust beamformer design: worst-case AoA, SCA iterations and rank-one recovery.

Internally the SCA works in the normalized units of :class:`P3Data`; returned
solutions are in physical units (watts).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from .instance import SystemInstance
from .scenario import spawn_rng_stream
from .sdp_core import P3Data, PowerMode, SolveStatus, assemble_feasibility, assemble_p3, solve
from .sensing import kld_blocks

__all__ = [
    "BeamformerSolution",
    "FeasibilityCheck",
    "check_solution",
    "InfeasibleError",
    "ScaResult",
    "SolverError",
    "initialize_z",
    "optimize_beamformers",
    "per_node_slices",
    "phase_one",
    "recover_rank_one",
    "require_feasible",
    "rescale_powers",
    "sca_optimize",
    "select_worst_case_aoa",
    "stack_node_slices",
]

log = logging.getLogger(__name__)

POWER_MARGIN = 1e-7
SINR_MARGIN = 1e-7
# lifted matrices with less than this share of the budget are treated as zero
ZERO_TRACE = 1e-6


class InfeasibleError(RuntimeError):
    def __init__(self, message: str, binding=("sinr", "power")):
        super().__init__(message)
        self.binding = list(binding)


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# worst-case AoA


def select_worst_case_aoa(inst: SystemInstance, grid_points: int | None = None) -> np.ndarray:
    """One coordinate pass over per-node AoA grids minimizing the lower bound.

    The probe spreads half the power isotropically.  Ties keep the angle
    closest to the estimate.
    """
    cfg = inst.cfg
    grid_points = grid_points or cfg.aoa_grid_points
    if grid_points < 3 or grid_points % 2 == 0:
        raise ValueError("grid_points must be odd and >= 3")
    est = inst.estimated_aoa
    half = np.asarray(cfg.aoa_half_width, dtype=float)
    probe = inst.isotropic_sensing(0.5)
    theta = est.copy()
    best = inst.lower_bound(probe, theta)
    offsets = np.linspace(-1.0, 1.0, grid_points)
    order = np.argsort(np.abs(offsets), kind="stable")
    for n in range(cfg.num_nodes):
        if half[n] == 0:
            continue
        for off in offsets[order]:
            trial = theta.copy()
            trial[n] = est[n] + off * half[n]
            val = inst.lower_bound(probe, trial)
            if val < best - 1e-9 * (1.0 + abs(best)):
                best, theta = val, trial
    return theta


# ---------------------------------------------------------------------------
# phase one

# optimal elastic slack above this (in threshold-normalized SINR rows) means infeasible
SLACK_TOLERANCE = 1e-6


def phase_one(data: P3Data, power_mode=PowerMode.TOTAL_SYSTEM) -> np.ndarray | None:
    """Optimal per-UE SINR slacks of the elastic communication-only program.

    All zeros means the surrogate is feasible.  Returns ``None`` when the
    backend gives no usable answer.
    """
    prog = assemble_feasibility(data, power_mode)
    rep = solve(prog)
    if not np.isfinite(rep.objective_value) or not rep.variable_values:
        return None
    return np.array([rep.variable_values[f"slack_{k}"] for k in range(data.num_ues)])


def require_feasible(data: P3Data, power_mode=PowerMode.TOTAL_SYSTEM) -> None:
    """Raise :class:`InfeasibleError` naming the UEs whose SINR cannot be met."""
    slack = phase_one(data, power_mode)
    if slack is None or np.all(slack <= SLACK_TOLERANCE):
        return
    short = [f"sinr_{k}" for k in np.flatnonzero(slack > SLACK_TOLERANCE)]
    raise InfeasibleError(
        f"robust SINR threshold {data.gamma:g} unreachable under the "
        f"{PowerMode.parse(power_mode).value} budget (slack {slack.max():.3g})",
        binding=short + ["power"])


# ---------------------------------------------------------------------------
# SCA


def initialize_z(data: P3Data, fraction: float = 0.5) -> np.ndarray:
    """``R0 + E[Rs]`` with ``fraction`` of the budget spread isotropically over sensing."""
    N, Mt = data.num_nodes, data.tx
    Ws = np.broadcast_to(fraction * data.power / (N * Mt) * np.eye(Mt), (N, Mt, Mt))
    return data.R0 + data.expected_rs(np.asarray(Ws))


def _psd_part(X: np.ndarray) -> np.ndarray:
    X = 0.5 * (X + np.conj(np.swapaxes(X, -1, -2)))
    lam, U = np.linalg.eigh(X)
    return np.einsum("...ij,...j,...kj->...ik", U, np.clip(lam, 0, None), U.conj())


def _objective(data: P3Data, Ws: np.ndarray) -> float:
    return float(kld_blocks(data.R0, data.R0 + data.expected_rs(Ws)))


@dataclass
class ScaResult:
    Wc: np.ndarray  # normalized lifted matrices
    Ws: np.ndarray
    trace: list
    iterations: int
    converged: bool
    solve_times: list = field(default_factory=list)


def _surrogate_objective(prog, data: P3Data, Z_prev: np.ndarray):
    N, Mr = data.num_nodes, data.rx
    C = np.zeros((N * Mr, N * Mr), dtype=complex)
    for n in range(N):
        sl = slice(n * Mr, (n + 1) * Mr)
        C[sl, sl] = np.linalg.inv(data.R0[n]) - np.linalg.inv(Z_prev[n])
    return prog.variables["Z"].trace_with(0.5 * (C + C.conj().T))


def sca_optimize(data: P3Data, init_z: np.ndarray, power_mode=PowerMode.TOTAL_SYSTEM,
                 tolerance: float = 0.01, max_iterations: int = 30,
                 start: tuple | None = None) -> ScaResult:
    """Iterate surrogate solves from ``init_z`` until the lower bound stalls.

    ``start`` optionally gives a feasible lifted point ``(Wc, Ws)`` whose
    objective opens the trace.  A new iterate is kept only if it does not lower
    the objective, so the trace is nondecreasing.
    """
    prog = assemble_p3(data, init_z, power_mode)
    K, N = data.num_ues, data.num_nodes
    Z_prev = init_z
    trace, cur = [], None
    if start is not None:
        cur = start
        trace.append(_objective(data, start[1]))
    converged = False
    it = 0
    times = []
    while it < max_iterations:
        prog.maximize(_surrogate_objective(prog, data, Z_prev))
        t0 = time.perf_counter()
        rep = solve(prog)
        times.append(time.perf_counter() - t0)
        it += 1
        if rep.status is not SolveStatus.OPTIMAL:
            if cur is None and rep.status is SolveStatus.INFEASIBLE:
                raise InfeasibleError("surrogate problem infeasible at the first iterate")
            if cur is None:
                raise SolverError(f"backend returned {rep.status.value}")
            log.warning("stopping SCA after %s at iteration %d", rep.status.value, it)
            break
        Wc = _psd_part(np.array([rep.variable_values[f"Wc_{k}"] for k in range(K)]))
        Ws = _psd_part(np.array([rep.variable_values[f"Ws_{n}"] for n in range(N)]))
        f_new = _objective(data, Ws)
        if trace and f_new < trace[-1]:
            converged = True
            break
        trace.append(f_new)
        cur = (Wc, Ws)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= tolerance:
            converged = True
            break
        Z_prev = data.R0 + data.expected_rs(Ws)
    return ScaResult(cur[0], cur[1], trace, it, converged, times)


# ---------------------------------------------------------------------------
# rank-one recovery


def _phase_normalize(w: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(w) > 1e-14 * max(1.0, np.abs(w).max(initial=0.0)))
    if nz.size == 0:
        return w
    return w * np.exp(-1j * np.angle(w[nz[0]]))


def principal_vector(W: np.ndarray, zero_level: float = 0.0):
    """``(sqrt(lambda_1) v_1, lambda_1 / sum(lambda))`` with a real positive lead entry.

    Matrices with trace at or below ``zero_level`` count as zero (ratio 1).
    """
    lam, U = np.linalg.eigh(0.5 * (W + W.conj().T))
    lam = np.clip(lam, 0, None)
    total = lam.sum()
    if total <= zero_level:
        return np.zeros(W.shape[0], dtype=complex), 1.0
    return _phase_normalize(np.sqrt(lam[-1]) * U[:, -1]), float(lam[-1] / total)


def _link_terms(data: P3Data, wc: np.ndarray, ws: np.ndarray):
    """Signal, cross and sensing coefficients of the robust SINR for rank-one beams."""
    N = data.num_nodes
    rc, rs = np.sqrt(N) * data.delta, data.delta
    g = np.abs(np.conj(data.h) @ wc.T)  # g[k, j] = |h_k^H w_j|
    nw = np.linalg.norm(wc, axis=1)
    cross = g**2 + rc**2 * nw[None, :] ** 2 + 2 * rc * nw[None, :] * g
    gs = np.abs(np.einsum("nki,ni->kn", np.conj(data.h_nodes), ws))
    ns = np.linalg.norm(ws, axis=1)
    sens = (gs**2 + rs**2 * ns[None, :] ** 2 + 2 * rs * ns[None, :] * gs).sum(axis=1)
    return np.diag(g) ** 2, cross, sens


def _power_matrix(data: P3Data, wc, ws, mode: PowerMode):
    """Rows of per-budget power usage for variables (p_1..p_K, t) and their budgets."""
    N, Mt = data.num_nodes, data.tx
    pc = np.abs(wc) ** 2  # (K, N*Mt)
    ps = (np.abs(ws) ** 2).reshape(-1)  # (N*Mt,)
    if mode is PowerMode.TOTAL_SYSTEM:
        return np.concatenate([pc.sum(axis=1), [ps.sum()]])[None, :], np.array([data.power])
    if mode is PowerMode.PER_NODE:
        rows = np.concatenate([pc.reshape(-1, N, Mt).sum(axis=2).T,
                               ps.reshape(N, Mt).sum(axis=1)[:, None]], axis=1)
        return rows, np.full(N, data.power / N)
    rows = np.concatenate([pc.T, ps[:, None]], axis=1)
    return rows, np.full(N * Mt, data.power / (N * Mt))


def rescale_powers(data: P3Data, wc: np.ndarray, ws: np.ndarray,
                   mode: PowerMode | str = PowerMode.TOTAL_SYSTEM):
    """Scale beams so every robust SINR and power constraint holds, maximizing
    the sensing power.

    Returns ``(wc, ws)`` rescaled, or ``None`` when no scaling is feasible.
    """
    mode = PowerMode.parse(mode)
    K = data.num_ues
    sig, cross, sens = _link_terms(data, wc, ws)
    gam = data.gamma * (1 + SINR_MARGIN)
    A_sinr = np.zeros((K, K + 1))
    for k in range(K):
        A_sinr[k, :K] = gam * cross[k]
        A_sinr[k, k] = -sig[k]
        A_sinr[k, K] = gam * sens[k]
    b_sinr = np.full(K, -gam)
    A_pow, b_pow = _power_matrix(data, wc, ws, mode)
    b_pow = b_pow * (1 - POWER_MARGIN)
    has_sensing = np.linalg.norm(ws) > 0
    bounds = [(0, None)] * K + [(0, None if has_sensing else 0)]
    c = np.zeros(K + 1)
    c[K] = -1.0
    # a tiny preference for low communication power picks a unique vertex
    c[:K] = 1e-9 * A_pow[:, :K].sum(axis=0) / max(A_pow[:, K].sum(), 1e-300)
    if data.gamma <= 0:
        A_ub, b_ub = A_pow, b_pow
    else:
        A_ub, b_ub = np.vstack([A_sinr, A_pow]), np.concatenate([b_sinr, b_pow])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    p = np.clip(res.x, 0, None)
    return wc * np.sqrt(p[:K])[:, None], ws * np.sqrt(p[K])


def recover_rank_one(data: P3Data, Wc: np.ndarray, Ws: np.ndarray,
                     mode: PowerMode | str = PowerMode.TOTAL_SYSTEM, gate: float = 0.999,
                     draws: int = 200, rng: np.random.Generator | None = None):
    """Rank-one beams from lifted matrices.

    Returns ``(wc, ws, info)``; ``info`` holds the eigenvalue ratios, the path
    taken per matrix and the ``returned_infeasible`` flag.
    """
    mode = PowerMode.parse(mode)
    mats = list(Wc) + list(Ws)
    K = len(Wc)
    pv = [principal_vector(W, ZERO_TRACE * data.power) for W in mats]
    ratios = [r for _, r in pv]
    paths = ["eigen" if r >= gate else "randomized" for r in ratios]

    def split(vecs):
        return np.array(vecs[:K]), np.array(vecs[K:])

    def score(vecs):
        wc, ws = split(vecs)
        out = rescale_powers(data, wc, ws, mode)
        if out is None:
            return -np.inf, None
        return _objective(data, np.einsum("ni,nj->nij", out[1], out[1].conj())), out

    best_val, best = score([v for v, _ in pv])
    if "randomized" in paths:
        rng = rng or np.random.default_rng(0)
        roots = []
        for W, path in zip(mats, paths):
            lam, U = np.linalg.eigh(0.5 * (W + W.conj().T))
            roots.append(U * np.sqrt(np.clip(lam, 0, None)) if path == "randomized" else None)
        for _ in range(draws):
            vecs = []
            for (v, _), root in zip(pv, roots):
                if root is None:
                    vecs.append(v)
                else:
                    g = (rng.standard_normal(root.shape[1])
                         + 1j * rng.standard_normal(root.shape[1])) / np.sqrt(2)
                    vecs.append(root @ g)
            val, out = score(vecs)
            if val > best_val:
                best_val, best = val, out
    info = {"ratios": ratios, "paths": paths, "returned_infeasible": best is None}
    if best is None:
        wc, ws = split([v for v, _ in pv])
        return wc, ws, info
    return best[0], best[1], info


# ---------------------------------------------------------------------------
# solutions


@dataclass
class BeamformerSolution:
    """Designed beams in physical units (watts)."""

    Wc: np.ndarray  # (K, N*Mt, N*Mt) lifted communication covariances
    Ws: np.ndarray  # (N, Mt, Mt) lifted sensing covariances
    wc: np.ndarray  # (K, N*Mt) recovered communication beams
    ws: np.ndarray  # (N, Mt) recovered sensing beams
    objective: float  # lower bound of the recovered beams at the design AoA
    objective_trace: list = field(default_factory=list)
    rank_report: dict = field(default_factory=dict)
    recovery_paths: dict = field(default_factory=dict)
    returned_infeasible: bool = False
    aoa: np.ndarray | None = None
    power_mode: str = PowerMode.TOTAL_SYSTEM.value
    iterations: int = 0
    converged: bool = True
    scheme: str = "proposed"
    origin: str = "cold"
    solve_times: list = field(default_factory=list)

    @property
    def sensing_covariances(self) -> np.ndarray:
        return np.einsum("ni,nj->nij", self.ws, self.ws.conj())

    @property
    def comm_covariances(self) -> np.ndarray:
        return np.einsum("ki,kj->kij", self.wc, self.wc.conj())

    def total_power(self) -> float:
        return float(np.sum(np.abs(self.wc) ** 2) + np.sum(np.abs(self.ws) ** 2))


def per_node_slices(sol: BeamformerSolution):
    """``(W_cn, w_sn)``: per-node ``(M_t, K)`` communication blocks and sensing beams."""
    N, Mt = sol.ws.shape
    Wcn = np.stack([sol.wc[:, n * Mt:(n + 1) * Mt].T for n in range(N)])
    return Wcn, sol.ws.copy()


def stack_node_slices(Wcn: np.ndarray) -> np.ndarray:
    """Inverse of the communication part of :func:`per_node_slices`."""
    return np.concatenate(list(Wcn), axis=0).T.copy()


def _beam_objective(data: P3Data, ws: np.ndarray, P: float) -> float:
    """Lower bound of physical sensing beams ``ws``; one code path so that the same
    beams on the same instance always give the same float."""
    return _objective(data, np.einsum("ni,nj->nij", ws, ws.conj()) / P)


def _to_solution(data, P, wc, ws, Wc, Ws, info, **kw) -> BeamformerSolution:
    K = len(wc)
    names = [f"Wc_{k}" for k in range(K)] + [f"Ws_{n}" for n in range(len(ws))]
    ws_phys = ws * np.sqrt(P)
    return BeamformerSolution(
        Wc=Wc * P, Ws=Ws * P, wc=wc * np.sqrt(P), ws=ws_phys,
        objective=_beam_objective(data, ws_phys, P),
        rank_report=dict(zip(names, info.get("ratios", [1.0] * len(names)))),
        recovery_paths=dict(zip(names, info.get("paths", ["eigen"] * len(names)))),
        returned_infeasible=info.get("returned_infeasible", False), **kw)


def _feasible_as_is(data: P3Data, wc: np.ndarray, ws: np.ndarray, mode: PowerMode) -> bool:
    """Normalized beams already meet every constraint without rescaling."""
    rows, budgets = _power_matrix(data, wc, ws, mode)
    if np.any(rows @ np.ones(rows.shape[1]) > budgets):
        return False
    if data.gamma <= 0:
        return True
    sig, cross, sens = _link_terms(data, wc, ws)
    interf = cross.sum(axis=1) - np.diag(cross) + sens + 1.0
    return bool(np.all(sig >= data.gamma * interf))


def optimize_beamformers(inst: SystemInstance, power_mode=PowerMode.TOTAL_SYSTEM,
                         aoa: np.ndarray | None = None, candidates=(),
                         sinr_threshold: float | None = None,
                         init: str = "isotropic", warm_start: bool = True,
                         label: str = "") -> BeamformerSolution:
    """Full design: cold SCA plus warm starts from feasible ``candidates``.

    A candidate that already meets the constraints competes unchanged; each is
    also rescaled for the current constraints and used to warm-start the SCA.
    The best recovered objective wins, so a feasible candidate is never beaten
    by the returned solution.
    """
    cfg = inst.cfg
    mode = PowerMode.parse(power_mode)
    aoa = select_worst_case_aoa(inst) if aoa is None else np.asarray(aoa)
    data = inst.p3_data(aoa, sinr_threshold)
    P = cfg.power_budget
    rng = spawn_rng_stream(cfg, f"randomization:{label}:{mode.value}")
    common = dict(aoa=aoa, power_mode=mode.value)
    require_feasible(data, mode)

    z0 = initialize_z(data) if init == "isotropic" else data.R0.copy()
    results = []
    try:
        sca = sca_optimize(data, z0, mode, cfg.sca_tolerance, cfg.max_sca_iterations)
    except SolverError as exc:
        # phase one says feasible, so a candidate start may still succeed
        if not candidates:
            raise
        log.warning("cold start failed: %s", exc)
    else:
        wc, ws, info = recover_rank_one(data, sca.Wc, sca.Ws, mode, cfg.rank_one_gate,
                                        cfg.randomization_draws, rng)
        results.append(_to_solution(data, P, wc, ws, sca.Wc, sca.Ws, info,
                                    objective_trace=sca.trace, iterations=sca.iterations,
                                    converged=sca.converged, origin="cold",
                                    solve_times=sca.solve_times, **common))
    for i, cand in enumerate(candidates):
        nwc, nws = cand.wc / np.sqrt(P), cand.ws / np.sqrt(P)
        if _feasible_as_is(data, nwc, nws, mode):
            obj = _beam_objective(data, cand.ws, P)
            results.append(replace(cand, objective=obj, objective_trace=[obj],
                                   origin=f"candidate{i}", scheme="proposed",
                                   returned_infeasible=False, **common))
        out = rescale_powers(data, nwc, nws, mode)
        if out is None:
            continue
        cwc, cws = out
        cWc = np.einsum("ki,kj->kij", cwc, cwc.conj())
        cWs = np.einsum("ni,nj->nij", cws, cws.conj())
        scaled = _to_solution(data, P, cwc, cws, cWc, cWs, {}, origin=f"rescaled{i}",
                              **common)
        scaled.objective_trace = [scaled.objective]
        results.append(scaled)
        if not warm_start:
            continue
        try:
            warm = sca_optimize(data, data.R0 + data.expected_rs(cWs), mode,
                                cfg.sca_tolerance, cfg.max_sca_iterations, start=(cWc, cWs))
        except (InfeasibleError, SolverError) as exc:
            log.warning("warm start %d failed: %s", i, exc)
            continue
        wwc, wws, winfo = recover_rank_one(data, warm.Wc, warm.Ws, mode, cfg.rank_one_gate,
                                           cfg.randomization_draws, rng)
        results.append(_to_solution(data, P, wwc, wws, warm.Wc, warm.Ws, winfo,
                                    objective_trace=warm.trace, iterations=warm.iterations,
                                    converged=warm.converged, origin=f"warm{i}",
                                    solve_times=warm.solve_times, **common))
    if not results:
        raise SolverError("no start point produced a solution")
    feasible = [r for r in results if not r.returned_infeasible]
    pool = feasible or results
    best = max(pool, key=lambda r: r.objective)
    if best.origin != "cold" and results[0].origin == "cold":
        # keep the cold run's diagnostics visible next to the winning start
        best = replace(best, rank_report=best.rank_report or results[0].rank_report)
    return best


@dataclass(frozen=True)
class FeasibilityCheck:
    power_excess: float  # largest (usage - budget) over the mode's power rows, watts
    sinr: np.ndarray  # worst-case SINR per UE
    sinr_shortfall: float  # max over k of (gamma - sinr_k) / gamma, 0 when gamma = 0

    def ok(self, power_tol: float = 1e-6, sinr_tol: float = 1e-6) -> bool:
        return self.power_excess <= power_tol and self.sinr_shortfall <= sinr_tol


def check_solution(inst: SystemInstance, sol: BeamformerSolution,
                   sinr_threshold: float | None = None,
                   power_mode=None) -> FeasibilityCheck:
    """Re-verify power and worst-case SINR of the recovered beams in complex form."""
    from .robust_sinr import robust_sinr_terms

    cfg = inst.cfg
    gamma = cfg.sinr_threshold if sinr_threshold is None else sinr_threshold
    mode = PowerMode.parse(power_mode or sol.power_mode)
    data = P3Data(h=inst.channels.stacked, h_nodes=inst.channels.per_node, delta=0.0,
                  gamma=gamma, R0=inst.R0, sense_gain=np.zeros((cfg.num_nodes,) * 2),
                  A=np.zeros((cfg.num_nodes, cfg.num_nodes, cfg.rx_antennas, cfg.tx_antennas)),
                  power=cfg.power_budget)
    rows, budgets = _power_matrix(data, sol.wc, sol.ws, mode)
    usage = rows @ np.ones(rows.shape[1])
    terms = robust_sinr_terms(inst.channels.stacked, inst.channels.per_node,
                              sol.comm_covariances, sol.sensing_covariances,
                              cfg.sync_error_bound, cfg.comm_noise, cfg.robust_numerator)
    short = 0.0 if gamma <= 0 else float(np.max((gamma - terms.sinr) / gamma))
    return FeasibilityCheck(float(np.max(usage - budgets)), terms.sinr, max(short, 0.0))
