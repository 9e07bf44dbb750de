"""Solver-neutral linear programs with primal and dual extraction.

Variables and constraints are added in named blocks (``g``, ``energy``, ...)
whose members are addressed by array index, so large LPs are assembled with
numpy rather than per-row Python loops. Minimization only.

Dual values are reported as the sensitivity of the optimal objective to the
constraint right-hand side, so a binding ``>=`` row in a minimization has a
nonnegative dual and a binding ``<=`` row a nonpositive one.

The backend is chosen by name (``"highs"`` via highspy, ``"scipy"`` via
``scipy.optimize.linprog``) or by the ``HYDRO_LDR_SOLVER`` environment
variable.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

FEAS_TOL = 1e-6

LE, EQ, GE = "<=", "==", ">="
_SENSES = {"<=": LE, "<": LE, "==": EQ, "=": EQ, ">=": GE, ">": GE}


class LpError(RuntimeError):
    """Backend failure or an invalid model."""


@dataclass(frozen=True)
class Block:
    start: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def slice(self) -> slice:
        return slice(self.start, self.start + self.size)


@dataclass
class CompiledLp:
    c: np.ndarray
    A: sp.csr_matrix
    row_lower: np.ndarray
    row_upper: np.ndarray
    col_lower: np.ndarray
    col_upper: np.ndarray
    var_blocks: dict[str, Block]
    con_blocks: dict[str, Block]
    senses: np.ndarray  # per row: -1 (<=), 0 (==), +1 (>=)
    rhs: np.ndarray

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_cons(self) -> int:
        return self.A.shape[0]

    def with_rhs(self, name: str, rhs) -> "CompiledLp":
        """Copy with the right-hand side of constraint block ``name`` replaced."""
        b = self.con_blocks[name]
        rhs_all = self.rhs.copy()
        rhs_all[b.slice()] = np.ravel(rhs)
        lo, up = _row_bounds(self.senses, rhs_all)
        return replace(self, rhs=rhs_all, row_lower=lo, row_upper=up)

    def with_bounds(self, name: str, lb=None, ub=None) -> "CompiledLp":
        b = self.var_blocks[name]
        lo, up = self.col_lower, self.col_upper
        if lb is not None:
            lo = lo.copy()
            lo[b.slice()] = np.ravel(lb)
        if ub is not None:
            up = up.copy()
            up[b.slice()] = np.ravel(ub)
        return replace(self, col_lower=lo, col_upper=up)


def _row_bounds(senses: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = np.where(senses >= 0, rhs, -np.inf)
    up = np.where(senses <= 0, rhs, np.inf)
    return lo, up


class LpModel:
    """Incrementally built minimization LP."""

    def __init__(self, name: str = "lp"):
        self.name = name
        self.var_blocks: dict[str, Block] = {}
        self.con_blocks: dict[str, Block] = {}
        self.con_senses: dict[str, str] = {}
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._cost: list[np.ndarray] = []
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []
        self._rhs: list[np.ndarray] = []
        self._sense: list[np.ndarray] = []
        self.n_vars = 0
        self.n_cons = 0

    def add_variables(self, name: str, shape=(), lb=0.0, ub=np.inf, cost=0.0) -> np.ndarray:
        """Add a block of variables and return their indices with ``shape``."""
        if name in self.var_blocks:
            raise LpError(f"duplicate variable block {name!r}")
        shape = (int(shape),) if isinstance(shape, (int, np.integer)) else tuple(int(s) for s in shape)
        size = math.prod(shape)
        lb = np.broadcast_to(np.asarray(lb, dtype=float), shape).ravel()
        ub = np.broadcast_to(np.asarray(ub, dtype=float), shape).ravel()
        if np.any(lb > ub):
            raise LpError(f"variable block {name!r} has lb > ub")
        self._lb.append(lb)
        self._ub.append(ub)
        self._cost.append(np.broadcast_to(np.asarray(cost, dtype=float), shape).ravel().copy())
        self.var_blocks[name] = Block(self.n_vars, shape)
        idx = np.arange(self.n_vars, self.n_vars + size).reshape(shape)
        self.n_vars += size
        return idx

    def add_constraints(self, name: str, terms, sense: str, rhs) -> np.ndarray:
        """Add a block of rows ``sum(coef * x[idx]) <sense> rhs``.

        ``rhs`` fixes the row shape R. Each term is ``(idx, coef)`` where
        ``idx`` has shape R + extra dims (extra dims are summed into the same
        row) and ``coef`` broadcasts to ``idx``.
        """
        if name in self.con_blocks:
            raise LpError(f"duplicate constraint block {name!r}")
        if sense not in _SENSES:
            raise LpError(f"unknown sense {sense!r}")
        rhs = np.asarray(rhs, dtype=float)
        if not np.all(np.isfinite(rhs)):
            raise LpError(f"constraint block {name!r} has a non-finite rhs")
        shape = rhs.shape
        m = rhs.size
        row_ids = np.arange(m).reshape(shape)
        for idx, coef in terms:
            idx = np.asarray(idx)
            if idx.shape[: len(shape)] != shape:
                raise LpError(f"{name!r}: term index shape {idx.shape} does not start with {shape}")
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_vars):
                raise LpError(f"{name!r}: references an undefined variable")
            coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape)
            rows = np.broadcast_to(row_ids.reshape(shape + (1,) * (idx.ndim - len(shape))), idx.shape)
            self._rows.append(rows.ravel() + self.n_cons)
            self._cols.append(idx.ravel())
            self._vals.append(coef.ravel())
        s = {LE: -1, EQ: 0, GE: 1}[_SENSES[sense]]
        self._rhs.append(rhs.ravel())
        self._sense.append(np.full(m, s, dtype=np.int8))
        self.con_blocks[name] = Block(self.n_cons, shape)
        self.con_senses[name] = _SENSES[sense]
        self.n_cons += m
        return row_ids + (self.n_cons - m)

    def compile(self) -> CompiledLp:
        cat = lambda parts, dt=float: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
        rows, cols, vals = cat(self._rows, np.int64), cat(self._cols, np.int64), cat(self._vals)
        keep = vals != 0.0
        A = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(self.n_cons, self.n_vars))
        A.sum_duplicates()
        A.sort_indices()
        senses = cat(self._sense, np.int8)
        rhs = cat(self._rhs)
        lo, up = _row_bounds(senses, rhs)
        return CompiledLp(
            c=cat(self._cost), A=A, row_lower=lo, row_upper=up,
            col_lower=cat(self._lb), col_upper=cat(self._ub),
            var_blocks=dict(self.var_blocks), con_blocks=dict(self.con_blocks),
            senses=senses, rhs=rhs,
        )


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded | error
    objective: float
    x: np.ndarray
    y: np.ndarray  # row duals
    z: np.ndarray  # reduced costs
    var_blocks: dict[str, Block] = field(repr=False, default_factory=dict)
    con_blocks: dict[str, Block] = field(repr=False, default_factory=dict)
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def value(self, name: str) -> np.ndarray:
        b = self.var_blocks[name]
        return self.x[b.slice()].reshape(b.shape)

    def dual(self, name: str) -> np.ndarray:
        b = self.con_blocks[name]
        return self.y[b.slice()].reshape(b.shape)

    @property
    def primal(self) -> dict[str, np.ndarray]:
        return {k: self.value(k) for k in self.var_blocks}

    @property
    def duals(self) -> dict[str, np.ndarray]:
        return {k: self.dual(k) for k in self.con_blocks}


# ---------------------------------------------------------------------------
# Backends

def default_backend() -> str:
    name = os.environ.get("HYDRO_LDR_SOLVER", "highs").strip().lower()
    if name not in BACKENDS:
        raise LpError(f"unknown LP backend {name!r}; choose from {sorted(BACKENDS)}")
    if name == "highs":
        try:
            import highspy  # noqa: F401
        except ImportError:  # pragma: no cover
            return "scipy"
    return name


METHODS = ("auto", "simplex", "ipm")


class _HighsBackend:
    def __init__(self, method: str = "auto"):
        import highspy

        self._hs = highspy
        self.h = highspy.Highs()
        self.h.setOptionValue("output_flag", False)
        self.h.setOptionValue("random_seed", 0)
        self.h.setOptionValue("solver", {"auto": "choose", "simplex": "simplex", "ipm": "ipm"}[method])
        self._lp = None
        self._A = None

    def _status(self, st) -> str:
        M = self._hs.HighsModelStatus
        if st == M.kOptimal:
            return "optimal"
        if st == M.kInfeasible:
            return "infeasible"
        if st == M.kUnbounded:
            return "unbounded"
        if st == M.kUnboundedOrInfeasible:
            return "unbounded_or_infeasible"
        return "error"

    def __call__(self, lp: CompiledLp):
        hs = self._hs
        if self._A is not lp.A:
            m = hs.HighsLp()
            m.num_col_ = lp.n_vars
            m.num_row_ = lp.n_cons
            m.a_matrix_.format_ = hs.MatrixFormat.kRowwise
            m.a_matrix_.start_ = lp.A.indptr.astype(np.int32)
            m.a_matrix_.index_ = lp.A.indices.astype(np.int32)
            m.a_matrix_.value_ = lp.A.data
            self._lp, self._A = m, lp.A
        m = self._lp
        m.col_cost_ = lp.c
        m.col_lower_ = lp.col_lower
        m.col_upper_ = lp.col_upper
        m.row_lower_ = lp.row_lower
        m.row_upper_ = lp.row_upper
        h = self.h
        h.passModel(m)
        h.run()
        status = self._status(h.getModelStatus())
        if status == "unbounded_or_infeasible":
            h.setOptionValue("presolve", "off")
            h.passModel(m)
            h.run()
            h.setOptionValue("presolve", "choose")
            status = self._status(h.getModelStatus())
            if status == "unbounded_or_infeasible":
                status = "infeasible"
        if status != "optimal":
            return status, math.nan, None, None, None, h.modelStatusToString(h.getModelStatus())
        sol = h.getSolution()
        return (status, h.getInfo().objective_function_value, np.array(sol.col_value),
                np.array(sol.row_dual), np.array(sol.col_dual), "")


def _scipy_backend(lp: CompiledLp, method: str = "auto"):
    from scipy.optimize import linprog

    eq = lp.senses == 0
    le = lp.senses < 0
    ge = lp.senses > 0
    ub_rows = le | ge
    sign = np.where(ge, -1.0, 1.0)[ub_rows]
    A_ub = sp.diags(sign) @ lp.A[ub_rows] if ub_rows.any() else None
    b_ub = sign * lp.rhs[ub_rows] if ub_rows.any() else None
    A_eq = lp.A[eq] if eq.any() else None
    b_eq = lp.rhs[eq] if eq.any() else None
    bounds = np.column_stack([lp.col_lower, lp.col_upper])
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b) for a, b in bounds]
    res = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method={"auto": "highs", "simplex": "highs-ds", "ipm": "highs-ipm"}[method])
    status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "error")
    if status != "optimal":
        return status, math.nan, None, None, None, res.message
    y = np.zeros(lp.n_cons)
    if eq.any():
        y[eq] = res.eqlin.marginals
    if ub_rows.any():
        y[ub_rows] = sign * res.ineqlin.marginals
    z = res.lower.marginals + res.upper.marginals
    return status, float(res.fun), res.x, y, z, ""


BACKENDS = {
    "highs": _HighsBackend,
    "scipy": lambda method="auto": (lambda lp: _scipy_backend(lp, method)),
}


class Solver:
    """Reusable backend handle; one instance must not be shared across threads.

    ``method`` is ``"auto"``, ``"simplex"`` or ``"ipm"`` (interior point
    followed by crossover, so a basic solution is still returned).
    """

    def __init__(self, backend: str | None = None, method: str = "auto"):
        self.backend = backend or default_backend()
        if self.backend not in BACKENDS:
            raise LpError(f"unknown LP backend {self.backend!r}")
        if method not in METHODS:
            raise LpError(f"unknown LP method {method!r}")
        self.method = method
        self._impl = BACKENDS[self.backend](method)

    def solve(self, model: LpModel | CompiledLp) -> LpSolution:
        lp = model.compile() if isinstance(model, LpModel) else model
        try:
            status, obj, x, y, z, msg = self._impl(lp)
        except Exception as exc:  # backend crash is an error status, not a silent pass
            raise LpError(f"{self.backend} backend failed: {exc}") from exc
        if x is None:
            empty = np.full(lp.n_vars, np.nan)
            return LpSolution(status, math.nan, empty, np.full(lp.n_cons, np.nan), empty.copy(),
                              lp.var_blocks, lp.con_blocks, msg)
        return LpSolution(status, obj, x, y, z, lp.var_blocks, lp.con_blocks, msg)


def solve(model: LpModel | CompiledLp, backend: str | None = None, method: str = "auto") -> LpSolution:
    return Solver(backend, method).solve(model)


# ---------------------------------------------------------------------------
# Diagnostics and export

def row_names(lp: CompiledLp, rows) -> list[str]:
    out = []
    starts = sorted(lp.con_blocks.items(), key=lambda kv: kv[1].start)
    for r in np.atleast_1d(rows):
        for name, b in starts:
            if b.start <= r < b.start + b.size:
                if b.shape:
                    idx = np.unravel_index(r - b.start, b.shape)
                    out.append(f"{name}[{','.join(str(int(i)) for i in idx)}]")
                else:
                    out.append(name)
                break
    return out


def diagnose_infeasibility(model: LpModel | CompiledLp, backend: str | None = None,
                           max_rows: int = 20, method: str = "auto") -> list[str]:
    """Names of rows that must be violated in a minimum-total-violation relaxation."""
    lp = model.compile() if isinstance(model, LpModel) else model
    m, n = lp.A.shape
    eye = sp.identity(m, format="csr")
    A = sp.hstack([lp.A, eye, -eye], format="csr")
    relaxed = CompiledLp(
        c=np.concatenate([np.zeros(n), np.ones(2 * m)]), A=A,
        row_lower=lp.row_lower, row_upper=lp.row_upper,
        col_lower=np.concatenate([lp.col_lower, np.zeros(2 * m)]),
        col_upper=np.concatenate([lp.col_upper, np.full(2 * m, np.inf)]),
        var_blocks={}, con_blocks=lp.con_blocks, senses=lp.senses, rhs=lp.rhs,
    )
    sol = solve(relaxed, backend, method)
    if not sol.optimal:
        return []
    viol = sol.x[n:n + m] + sol.x[n + m:]
    bad = np.flatnonzero(viol > FEAS_TOL)
    bad = bad[np.argsort(-viol[bad])][:max_rows]
    return row_names(lp, np.sort(bad))


def residuals(lp: CompiledLp, x: np.ndarray) -> np.ndarray:
    """Per-row constraint violation (0 when satisfied)."""
    ax = lp.A @ x
    return np.maximum(np.maximum(lp.row_lower - ax, ax - lp.row_upper), 0.0)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_lp(model: LpModel | CompiledLp, path: str | Path) -> None:
    """Write the model in CPLEX LP text format (objective, constraints, bounds, end)."""
    lp = model.compile() if isinstance(model, LpModel) else model
    vnames = [""] * lp.n_vars
    for name, b in lp.var_blocks.items():
        for j in range(b.size):
            idx = np.unravel_index(j, b.shape) if b.shape else ()
            vnames[b.start + j] = "_".join([name, *map(str, idx)])
    rnames = [nm.replace("[", "_").replace("]", "").replace(",", "_") for nm in row_names(lp, range(lp.n_cons))]

    def expr(cols, vals):
        parts = []
        for j, v in zip(cols, vals):
            parts.append(f"{'-' if v < 0 else '+'} {_fmt(abs(v))} {vnames[j]}")
        s = " ".join(parts) if parts else "0"
        return s[2:] if s.startswith("+ ") else s

    lines = ["\\ " + getattr(model, "name", "lp"), "Minimize", " obj: " + expr(np.flatnonzero(lp.c), lp.c[lp.c != 0]),
             "Subject To"]
    sym = {-1: "<=", 0: "=", 1: ">="}
    for i in range(lp.n_cons):
        lo, hi = lp.A.indptr[i], lp.A.indptr[i + 1]
        lines.append(f" {rnames[i]}: {expr(lp.A.indices[lo:hi], lp.A.data[lo:hi])} {sym[int(lp.senses[i])]} {_fmt(lp.rhs[i])}")
    lines.append("Bounds")
    for j in range(lp.n_vars):
        lo, up = lp.col_lower[j], lp.col_upper[j]
        if lo == up:
            lines.append(f" {vnames[j]} = {_fmt(lo)}")
            continue
        left = "-inf" if not np.isfinite(lo) else _fmt(lo)
        right = "+inf" if not np.isfinite(up) else _fmt(up)
        lines.append(f" {left} <= {vnames[j]} <= {right}")
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")
