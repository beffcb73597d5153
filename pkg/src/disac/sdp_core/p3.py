"""Assembly of the per-iteration surrogate SDP.

Everything is expressed in normalized units: beam covariances are divided by
the power budget, sensing covariances by the sensing noise power and channels
are scaled by ``sqrt(P_max) / sigma_c`` so that the communication noise is 1.
SINR and KLD values are unchanged by this scaling; it keeps the conic data
well conditioned for the interior-point backend.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .program import (Affine, ConicProgram, HermitianVar, LinearConstraint, hermitian_basis,
                      matvec_coefficients, trace_coefficients)

__all__ = ["P3Data", "PowerMode", "alternative_power_constraints", "assemble_feasibility",
           "assemble_p3", "formula_size"]


class PowerMode(str, enum.Enum):
    TOTAL_SYSTEM = "TotalSystem"
    PER_NODE = "PerNode"
    PER_ANTENNA = "PerAntenna"

    @classmethod
    def parse(cls, value) -> "PowerMode":
        if isinstance(value, cls):
            return value
        for m in cls:
            if str(value).lower().replace("_", "") == m.value.lower():
                return m
        raise ValueError(f"unknown power mode {value!r}")


@dataclass(frozen=True)
class P3Data:
    """Normalized data of one surrogate problem."""

    h: np.ndarray  # (K, N*M_t) stacked channels
    h_nodes: np.ndarray  # (N, K, M_t)
    delta: float  # CSI error radius in normalized channel units
    gamma: float  # SINR threshold (linear)
    R0: np.ndarray  # (N, M_r, M_r) clutter-plus-noise blocks / sigma_s^2
    sense_gain: np.ndarray  # (N, N) expected-covariance weights per link
    A: np.ndarray  # (N, N, M_r, M_t)
    power: float = 1.0

    @classmethod
    def from_physical(cls, h_nodes, delta, gamma, R0, A, link_weight, power_budget,
                      comm_noise, sensing_noise) -> "P3Data":
        """``link_weight`` is ``(1-2 delta)^2 |L|^2 E[beta^2]`` per link."""
        h_nodes = np.asarray(h_nodes)
        N, K, M = h_nodes.shape
        s = np.sqrt(power_budget / comm_noise)
        hn = h_nodes * s
        return cls(
            h=np.transpose(hn, (1, 0, 2)).reshape(K, N * M),
            h_nodes=hn,
            delta=float(delta) * s,
            gamma=float(gamma),
            R0=np.asarray(R0) / sensing_noise,
            sense_gain=np.asarray(link_weight) * power_budget / sensing_noise,
            A=np.asarray(A),
        )

    @property
    def num_nodes(self) -> int:
        return self.h_nodes.shape[0]

    @property
    def num_ues(self) -> int:
        return self.h_nodes.shape[1]

    @property
    def tx(self) -> int:
        return self.h_nodes.shape[2]

    @property
    def rx(self) -> int:
        return self.R0.shape[-1]

    def expected_rs(self, W_s: np.ndarray) -> np.ndarray:
        return np.einsum("nm,nmab,mbc,nmdc->nad", self.sense_gain, self.A, W_s,
                         self.A.conj())


def _z_block_params(nr: int, n: int):
    """Pairs (global i, global j) of the Z parameters in block ``n``."""
    return [(n * nr + a, n * nr + d) for a in range(nr) for d in range(a, nr)]


def _add_z_equalities(prog: ConicProgram, Z: HermitianVar, Ws: list, data: P3Data):
    N, Mr, Mt = data.num_nodes, data.rx, data.tx
    B = hermitian_basis(Mt)
    for n in range(N):
        # T[m, p] = A_nm B_p A_nm^H  (Mr x Mr), weighted
        T = np.einsum("mab,pbc,mdc->mpad", data.A[n], B, data.A[n].conj())
        T *= data.sense_gain[n][:, None, None, None]
        for a in range(Mr):
            for d in range(a, Mr):
                gi, gj = n * Mr + a, n * Mr + d
                parts = ("re",) if a == d else ("re", "im")
                for part in parts:
                    pick = np.real if part == "re" else np.imag
                    expr = Affine({Z.entry_param(gi, gj, part): 1.0},
                                  -float(pick(data.R0[n, a, d])))
                    for m in range(N):
                        expr = expr - Affine.single(Ws[m], pick(T[m, :, a, d]))
                    prog.add_equality(expr, "z_link")
    # off-diagonal blocks vanish
    NMr = N * Mr
    for i in range(NMr):
        for j in range(i + 1, NMr):
            if i // Mr != j // Mr:
                for part in ("re", "im"):
                    prog.add_equality(Affine({Z.entry_param(i, j, part): 1.0}), "z_link")


def _norm_components(var: HermitianVar, v: np.ndarray) -> list:
    M = matvec_coefficients(v)
    return [Affine.single(var, np.real(row)) for row in M] + \
           [Affine.single(var, np.imag(row)) for row in M]


def _add_sinr(prog: ConicProgram, Wc: list, Ws: list, data: P3Data,
              normalize: bool = False):
    N, K = data.num_nodes, data.num_ues
    r_c = np.sqrt(N) * data.delta
    r_s = data.delta
    for k in range(K):
        hk = data.h[k]
        Qk = np.outer(hk, hk.conj())
        interf = Affine.constant(1.0)
        for j in range(K):
            if j == k:
                continue
            interf = interf + Wc[j].trace_with(Qk + r_c**2 * np.eye(len(hk)))
            if r_c > 0:
                t = prog.add_scalar(f"t_{k}_{j}")
                prog.add_soc(t.affine(), _norm_components(Wc[j], hk), "sinr_aux")
                interf = interf + t.affine(2 * r_c)
        for n in range(len(Ws)):
            hnk = data.h_nodes[n, k]
            Qnk = np.outer(hnk, hnk.conj())
            interf = interf + Ws[n].trace_with(Qnk + r_s**2 * np.eye(data.tx))
            if r_s > 0:
                u = prog.add_scalar(f"u_{n}_{k}")
                prog.add_soc(u.affine(), _norm_components(Ws[n], hnk), "sinr_aux")
                interf = interf + u.affine(2 * r_s)
        # phase one divides by max(1, gamma) so its slack is a relative shortfall;
        # the surrogate keeps raw rows, which the backend handles better there
        scale = 1.0 / max(1.0, data.gamma) if normalize else 1.0
        prog.add_le((interf * data.gamma - Wc[k].trace_with(Qk)) * scale, 0.0, "sinr")


def _power_rows(prog: ConicProgram, mode: PowerMode, budget: float):
    meta = prog.metadata
    N, K, Mt = meta["num_nodes"], meta["num_ues"], meta["tx"]
    Wc = [prog.variables[f"Wc_{k}"] for k in range(K)]
    Ws = [prog.variables[f"Ws_{n}"] for n in range(N) if f"Ws_{n}" in prog.variables]
    no_sensing = Affine()
    if mode is PowerMode.TOTAL_SYSTEM:
        expr = sum((w.trace() for w in Wc + Ws), Affine())
        prog.add_le(expr, budget, "power")
        return
    for n in range(N):
        sel = np.zeros(N * Mt)
        sel[n * Mt:(n + 1) * Mt] = 1.0
        if mode is PowerMode.PER_NODE:
            expr = sum((w.trace_with(np.diag(sel)) for w in Wc),
                       Ws[n].trace() if Ws else no_sensing)
            prog.add_le(expr, budget / N, "power")
            continue
        for i in range(Mt):
            e_c = np.zeros(N * Mt)
            e_c[n * Mt + i] = 1.0
            e_s = np.zeros(Mt)
            e_s[i] = 1.0
            expr = sum((w.trace_with(np.diag(e_c)) for w in Wc),
                       Ws[n].trace_with(np.diag(e_s)) if Ws else no_sensing)
            prog.add_le(expr, budget / (N * Mt), "power")


def assemble_p3(data: P3Data, Z_prev: np.ndarray,
                power_mode: PowerMode | str = PowerMode.TOTAL_SYSTEM) -> ConicProgram:
    """Surrogate SDP: maximize ``Re tr((R0^-1 - Z_prev^-1) Z)`` over the lifted beams.

    ``Z_prev`` is given as normalized blocks (N, M_r, M_r).
    """
    N, K, Mt, Mr = data.num_nodes, data.num_ues, data.tx, data.rx
    Z_prev = np.asarray(Z_prev)
    if Z_prev.shape != (N, Mr, Mr) or data.A.shape != (N, N, Mr, Mt) \
            or data.h.shape != (K, N * Mt) or data.R0.shape != (N, Mr, Mr):
        raise ValueError("dimension mismatch in surrogate data")
    prog = ConicProgram(name="surrogate")
    prog.metadata.update(num_nodes=N, num_ues=K, tx=Mt, rx=Mr, power=data.power,
                         power_mode=PowerMode.parse(power_mode).value)
    Wc = [prog.add_hermitian(f"Wc_{k}", N * Mt) for k in range(K)]
    Ws = [prog.add_hermitian(f"Ws_{n}", Mt) for n in range(N)]
    Z = prog.add_hermitian("Z", N * Mr)
    _add_z_equalities(prog, Z, Ws, data)
    _add_sinr(prog, Wc, Ws, data)
    _power_rows(prog, PowerMode.parse(power_mode), data.power)
    C = np.zeros((N * Mr, N * Mr), dtype=complex)
    for n in range(N):
        sl = slice(n * Mr, (n + 1) * Mr)
        C[sl, sl] = np.linalg.inv(data.R0[n]) - np.linalg.inv(Z_prev[n])
    prog.maximize(Z.trace_with(0.5 * (C + C.conj().T)))
    return prog


def assemble_feasibility(data: P3Data,
                         power_mode: PowerMode | str = PowerMode.TOTAL_SYSTEM) -> ConicProgram:
    """Elastic phase-one program over the communication beams alone.

    Each robust SINR row gets a nonnegative slack ``slack_k`` and the total
    slack is minimized under the power rows.  Sensing beams only add
    interference and may be zero, so the surrogate is feasible exactly when the
    optimal slack is zero.  Unlike the surrogate itself, this program is always
    feasible and bounded, which the backend handles far more reliably than an
    infeasibility certificate.
    """
    N, K, Mt = data.num_nodes, data.num_ues, data.tx
    mode = PowerMode.parse(power_mode)
    prog = ConicProgram(name="feasibility")
    prog.metadata.update(num_nodes=N, num_ues=K, tx=Mt, rx=data.rx, power=data.power,
                         power_mode=mode.value)
    Wc = [prog.add_hermitian(f"Wc_{k}", N * Mt) for k in range(K)]
    _add_sinr(prog, Wc, [], data, normalize=True)
    slacks = [prog.add_scalar(f"slack_{k}") for k in range(K)]
    prog.inequalities = [LinearConstraint(c.expr - t.affine(), c.group)
                         for c, t in zip(prog.inequalities, slacks)]
    _power_rows(prog, mode, data.power)
    prog.maximize(sum((t.affine(-1.0) for t in slacks), Affine()))
    return prog


def alternative_power_constraints(program: ConicProgram, mode: PowerMode | str,
                                  budget: float | None = None) -> ConicProgram:
    """Copy of ``program`` with its power constraints replaced by ``mode``."""
    mode = PowerMode.parse(mode)
    out = program.remove_group("power")
    out.metadata["power_mode"] = mode.value
    _power_rows(out, mode, program.metadata["power"] if budget is None else budget)
    return out


def formula_size(N: int, K: int, Mt: int, Mr: int) -> tuple[int, int]:
    """Textbook ``(V, C)`` counts that ignore cone auxiliaries."""
    return K * (N * Mt) ** 2 + N * Mt**2 + (N * Mr) ** 2, (N * Mr) ** 2 + K + N
