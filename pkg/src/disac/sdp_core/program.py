"""Solver-agnostic conic programs over complex Hermitian PSD variables.

An ``n x n`` Hermitian variable is stored as ``n**2`` real parameters: the
diagonal, then the strict upper triangle's real parts, then its imaginary
parts (row-major over ``i < j``).  With that basis ``X[i, j] = re + 1j * im``
for ``i < j``, so trace functionals of ``X`` need no factor-of-two bookkeeping.
PSD-ness is imposed on the real embedding ``[[Re X, -Im X], [Im X, Re X]]``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "Affine",
    "ConicProgram",
    "HermitianVar",
    "ProgramSize",
    "ScalarVar",
    "embed_hermitian",
    "extract_hermitian",
    "hermitian_basis",
    "psd_svec_map",
]

HERMITIAN_TOL = 1e-10


def embed_hermitian(H: np.ndarray) -> np.ndarray:
    """Real symmetric ``2n x 2n`` embedding of a Hermitian matrix."""
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(H), initial=0.0)))
    if np.max(np.abs(H - H.conj().T), initial=0.0) > HERMITIAN_TOL * scale:
        raise ValueError("matrix is not Hermitian")
    re, im = np.real(H), np.imag(H)
    return np.block([[re, -im], [im, re]])


def extract_hermitian(S: np.ndarray) -> np.ndarray:
    """Inverse of :func:`embed_hermitian` (averages the redundant copies)."""
    S = np.asarray(S, dtype=float)
    n = S.shape[0] // 2
    re = 0.5 * (S[:n, :n] + S[n:, n:])
    im = 0.5 * (S[n:, :n] - S[:n, n:])
    return re + 1j * im


@lru_cache(maxsize=None)
def _upper_pairs(n: int):
    iu, ju = np.triu_indices(n, k=1)
    return iu, ju


@lru_cache(maxsize=None)
def hermitian_basis(n: int) -> np.ndarray:
    """Basis matrices ``B`` (n**2, n, n) with ``X = sum_p x_p B_p``."""
    iu, ju = _upper_pairs(n)
    m = len(iu)
    B = np.zeros((n * n, n, n), dtype=complex)
    d = np.arange(n)
    B[d, d, d] = 1.0
    r = n + np.arange(m)
    B[r, iu, ju] = 1.0
    B[r, ju, iu] = 1.0
    q = n + m + np.arange(m)
    B[q, iu, ju] = 1j
    B[q, ju, iu] = -1j
    B.setflags(write=False)
    return B


def params_from_hermitian(X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    iu, ju = _upper_pairs(n)
    return np.concatenate([np.real(np.diag(X)), np.real(X[iu, ju]), np.imag(X[iu, ju])])


def hermitian_from_params(p: np.ndarray, n: int) -> np.ndarray:
    return np.einsum("p,pij->ij", np.asarray(p, dtype=float), hermitian_basis(n))


def trace_coefficients(C: np.ndarray) -> np.ndarray:
    """Coefficients ``g`` with ``Re tr(C X) = g . params(X)``."""
    C = np.asarray(C)
    n = C.shape[0]
    iu, ju = _upper_pairs(n)
    return np.concatenate([
        np.real(np.diag(C)),
        np.real(C[iu, ju] + C[ju, iu]),
        np.imag(C[iu, ju]) - np.imag(C[ju, iu]),
    ])


def matvec_coefficients(v: np.ndarray) -> np.ndarray:
    """Complex matrix ``M`` (n, n**2) with ``X v = M @ params(X)``."""
    return np.einsum("kij,j->ik", hermitian_basis(len(v)), np.asarray(v))


@lru_cache(maxsize=None)
def psd_svec_map(n: int) -> np.ndarray:
    """Matrix mapping Hermitian params to the scaled upper-triangle vector of the
    ``2n x 2n`` embedding, columns stacked (the Clarabel PSD-triangle layout)."""
    B = hermitian_basis(n)
    E = np.array([embed_hermitian(b) for b in B])  # (n^2, 2n, 2n)
    N2 = 2 * n
    rows, cols = [], []
    for j in range(N2):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    rows, cols = np.array(rows), np.array(cols)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    M = (E[:, rows, cols] * scale).T
    M.setflags(write=False)
    return M


@dataclass(frozen=True)
class HermitianVar:
    name: str
    offset: int
    n: int

    @property
    def size(self) -> int:
        return self.n * self.n

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)

    def trace_with(self, C) -> "Affine":
        """``Re tr(C X)``."""
        return Affine.single(self, trace_coefficients(C))

    def trace(self) -> "Affine":
        return self.trace_with(np.eye(self.n))

    def entry_param(self, i: int, j: int, part: str) -> int:
        """Flat index of the real parameter holding ``Re``/``Im`` of ``X[i, j]``, i <= j."""
        n = self.n
        if i == j:
            if part != "re":
                raise ValueError("diagonal entries are real")
            return self.offset + i
        if i > j:
            raise ValueError("use i < j")
        k = i * n - i * (i + 1) // 2 + (j - i - 1)
        m = n * (n - 1) // 2
        return self.offset + n + k + (m if part == "im" else 0)

    def value(self, x: np.ndarray) -> np.ndarray:
        return hermitian_from_params(x[self.slice], self.n)


@dataclass(frozen=True)
class ScalarVar:
    name: str
    offset: int
    nonneg: bool

    size = 1

    def affine(self, coef: float = 1.0) -> "Affine":
        return Affine({self.offset: float(coef)}, 0.0)

    def value(self, x: np.ndarray) -> float:
        return float(x[self.offset])


class Affine:
    """Real affine function ``sum_i coef_i x_i + const`` kept as a sparse dict."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: dict | None = None, const: float = 0.0):
        self.terms = dict(terms or {})
        self.const = float(const)

    @classmethod
    def single(cls, var: HermitianVar, coefs: np.ndarray) -> "Affine":
        idx = np.arange(var.offset, var.offset + var.size)
        coefs = np.asarray(coefs, dtype=float)
        nz = coefs != 0
        return cls(dict(zip(idx[nz].tolist(), coefs[nz].tolist())), 0.0)

    @classmethod
    def constant(cls, c: float) -> "Affine":
        return cls({}, c)

    def __add__(self, other):
        if not isinstance(other, Affine):
            return Affine(self.terms, self.const + float(other))
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0.0) + v
        return Affine(out, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Affine) else -float(other))

    def __mul__(self, s: float):
        s = float(s)
        return Affine({k: v * s for k, v in self.terms.items()}, self.const * s)

    __rmul__ = __mul__

    def evaluate(self, x: np.ndarray) -> float:
        if not self.terms:
            return self.const
        idx = np.fromiter(self.terms.keys(), dtype=int, count=len(self.terms))
        val = np.fromiter(self.terms.values(), dtype=float, count=len(self.terms))
        return float(val @ x[idx] + self.const)


@dataclass
class SocConstraint:
    bound: Affine
    components: list  # list[Affine]
    group: str


@dataclass
class LinearConstraint:
    expr: Affine  # expr == 0 or expr <= 0
    group: str


@dataclass(frozen=True)
class ProgramSize:
    variables: int  # real scalars in PSD blocks and auxiliaries
    matrix_variables: int  # real scalars in PSD blocks only
    equalities: int
    inequalities: int
    soc_constraints: int
    psd_constraints: int

    @property
    def constraints(self) -> int:
        return self.equalities + self.inequalities + self.soc_constraints + self.psd_constraints


@dataclass
class ConicProgram:
    """Maximize a linear objective over Hermitian PSD blocks and real scalars."""

    name: str = "program"
    variables: dict = field(default_factory=dict)
    objective: Affine = field(default_factory=Affine)
    equalities: list = field(default_factory=list)
    inequalities: list = field(default_factory=list)
    socs: list = field(default_factory=list)
    num_params: int = 0
    metadata: dict = field(default_factory=dict)

    def add_hermitian(self, name: str, n: int) -> HermitianVar:
        if name in self.variables:
            raise ValueError(f"duplicate variable {name!r}")
        v = HermitianVar(name, self.num_params, int(n))
        self.variables[name] = v
        self.num_params += v.size
        return v

    def add_scalar(self, name: str, nonneg: bool = True) -> ScalarVar:
        if name in self.variables:
            raise ValueError(f"duplicate variable {name!r}")
        v = ScalarVar(name, self.num_params, nonneg)
        self.variables[name] = v
        self.num_params += 1
        return v

    def _check(self, expr: Affine):
        if expr.terms and (min(expr.terms) < 0 or max(expr.terms) >= self.num_params):
            raise ValueError("expression references an undeclared variable")

    def add_equality(self, expr: Affine, group: str = "eq"):
        self._check(expr)
        self.equalities.append(LinearConstraint(expr, group))

    def add_le(self, lhs: Affine, rhs, group: str = "ineq"):
        expr = lhs - rhs
        self._check(expr)
        self.inequalities.append(LinearConstraint(expr, group))

    def add_soc(self, bound: Affine, components, group: str = "soc"):
        for c in [bound, *components]:
            self._check(c)
        self.socs.append(SocConstraint(bound, list(components), group))

    def maximize(self, expr: Affine):
        self._check(expr)
        self.objective = expr

    def remove_group(self, group: str) -> "ConicProgram":
        out = copy.copy(self)
        out.equalities = [c for c in self.equalities if c.group != group]
        out.inequalities = [c for c in self.inequalities if c.group != group]
        out.socs = [c for c in self.socs if c.group != group]
        out.variables = dict(self.variables)
        out.metadata = dict(self.metadata)
        return out

    def hermitian_vars(self) -> list:
        return [v for v in self.variables.values() if isinstance(v, HermitianVar)]

    def scalar_vars(self) -> list:
        return [v for v in self.variables.values() if isinstance(v, ScalarVar)]

    def size(self) -> ProgramSize:
        herm = self.hermitian_vars()
        return ProgramSize(
            variables=self.num_params,
            matrix_variables=sum(v.size for v in herm),
            equalities=len(self.equalities),
            inequalities=len(self.inequalities),
            soc_constraints=len(self.socs),
            psd_constraints=len(herm),
        )

    def values(self, x: np.ndarray) -> dict:
        return {name: v.value(x) for name, v in self.variables.items()}

    def constraint_violation(self, x: np.ndarray, scaled: bool = False) -> float:
        """Largest violation of any constraint at ``x`` (PSD via min eigenvalue).

        With ``scaled`` each linear or cone residual is divided by one plus the
        largest magnitude among the terms it sums, and PSD residuals by one plus
        the largest eigenvalue.
        """
        def size(expr: Affine) -> float:
            if not expr.terms:
                return abs(expr.const)
            idx = np.fromiter(expr.terms, dtype=int)
            val = np.fromiter(expr.terms.values(), dtype=float)
            return max(abs(expr.const), float(np.max(np.abs(val * x[idx]))))

        def norm(v: float, *exprs) -> float:
            return v / (1.0 + max(size(e) for e in exprs)) if scaled else v

        worst = 0.0
        for c in self.equalities:
            worst = max(worst, norm(abs(c.expr.evaluate(x)), c.expr))
        for c in self.inequalities:
            worst = max(worst, norm(c.expr.evaluate(x), c.expr))
        for c in self.socs:
            t = c.bound.evaluate(x)
            nrm = np.linalg.norm([a.evaluate(x) for a in c.components])
            worst = max(worst, norm(nrm - t, c.bound, *c.components))
        for v in self.hermitian_vars():
            lam = np.linalg.eigvalsh(v.value(x))
            worst = max(worst, -float(lam[0]) / ((1.0 + abs(lam[-1])) if scaled else 1.0))
        for v in self.scalar_vars():
            if v.nonneg:
                worst = max(worst, -float(x[v.offset]))
        return worst

    def dump(self, stream) -> None:
        """Write the program as ``block,row,col,value`` lines.

        Blocks: ``obj`` (row 0, col = parameter), ``eq``/``le`` (row = constraint,
        col = parameter; col -1 holds the constant so that ``a.x + c {=,<=} 0``),
        ``soc`` (row = cone, col = parameter, value written per component as
        ``soc:<cone>:<component>``) and ``psd`` (row = block, col = first parameter
        and value = dimension).
        """
        def emit(block, row, expr):
            for col in sorted(expr.terms):
                stream.write(f"{block},{row},{col},{expr.terms[col]!r}\n")
            stream.write(f"{block},{row},-1,{expr.const!r}\n")

        stream.write("# block,row,col,value\n")
        stream.write(f"# program={self.name} params={self.num_params} sense=maximize\n")
        for name, v in self.variables.items():
            kind = f"hermitian:{v.n}" if isinstance(v, HermitianVar) else (
                "nonneg" if v.nonneg else "free")
            stream.write(f"# var {name} offset={v.offset} {kind}\n")
        emit("obj", 0, self.objective)
        for i, c in enumerate(self.equalities):
            emit("eq", i, c.expr)
        for i, c in enumerate(self.inequalities):
            emit("le", i, c.expr)
        for i, c in enumerate(self.socs):
            emit(f"soc:{i}:0", i, c.bound)
            for j, comp in enumerate(c.components):
                emit(f"soc:{i}:{j + 1}", i, comp)
        for i, v in enumerate(self.hermitian_vars()):
            stream.write(f"psd,{i},{v.offset},{v.n}\n")
