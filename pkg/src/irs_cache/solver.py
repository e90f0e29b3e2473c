"""Real conic standard form and a thin wrapper around cvxopt's cone LP solver.

Everything upstream speaks in named real variables.  Complex vectors are
stored as ``[Re z; Im z]``; see :func:`as_real` / :func:`as_complex`.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 200
TOL_ENV = "IRS_CACHE_SOLVER_TOL"
MAX_ITER_ENV = "IRS_CACHE_SOLVER_MAXITER"
EPIGRAPH = "_epigraph"

STATUSES = ("optimal", "infeasible", "unbounded", "numerical-failure", "iteration-limit")


def as_real(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex).ravel()
    return np.concatenate([z.real, z.imag])


def as_complex(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size // 2
    return x[:n] + 1j * x[n:]


@dataclass(frozen=True)
class Variable:
    name: str
    size: int
    kind: str = "free"  # or "nonnegative"

    def __post_init__(self):
        if self.kind not in ("free", "nonnegative"):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("variable size must be >= 1")


@dataclass
class LinearConstraint:
    """``sum_v coeffs[v] @ x_v + const >= 0`` (``== 0`` when ``equality``)."""

    coeffs: dict[str, np.ndarray]
    const: float = 0.0
    equality: bool = False
    label: str = ""

    def evaluate(self, values: dict[str, np.ndarray]) -> float:
        return float(self.const + sum(np.dot(a, values[v]) for v, a in self.coeffs.items()))


@dataclass
class SocConstraint:
    """``s = sum_v coeffs[v] @ x_v + const`` with ``s[0] >= ||s[1:]||``."""

    coeffs: dict[str, np.ndarray]
    const: np.ndarray
    label: str = ""

    @property
    def rows(self) -> int:
        return len(self.const)

    def evaluate(self, values: dict[str, np.ndarray]) -> float:
        s = np.array(self.const, dtype=float)
        for v, a in self.coeffs.items():
            s = s + a @ values[v]
        return float(s[0] - np.linalg.norm(s[1:]))


@dataclass
class Objective:
    """Minimise ``sum_v linear[v] @ x_v + sum_{v in squared} ||x_v||^2 + constant``."""

    linear: dict[str, np.ndarray] = field(default_factory=dict)
    squared: tuple[str, ...] = ()
    constant: float = 0.0


@dataclass
class PsdBlock:
    label: str
    const: np.ndarray
    coeffs: dict[str, np.ndarray]

    @property
    def dim(self) -> int:
        return self.const.shape[0]

    def evaluate(self, values: dict[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for v, a in self.coeffs.items():
            out = out + np.tensordot(values[v], a, axes=1)
        return out


@dataclass
class ConicProblem:
    variables: dict[str, Variable]
    offsets: dict[str, int]
    c: np.ndarray
    obj_constant: float
    linear: list[LinearConstraint]
    equalities: list[LinearConstraint]
    soc: list[SocConstraint]
    psd: list[PsdBlock]

    @property
    def n(self) -> int:
        return len(self.c)

    def split(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {v: np.array(x[o:o + self.variables[v].size]) for v, o in self.offsets.items()}

    def stack(self, values: dict[str, np.ndarray]) -> np.ndarray:
        x = np.zeros(self.n)
        for v, o in self.offsets.items():
            x[o:o + self.variables[v].size] = values[v]
        return x

    def _row(self, coeffs: dict[str, np.ndarray]) -> np.ndarray:
        row = np.zeros(self.n)
        for v, a in coeffs.items():
            o = self.offsets[v]
            row[o:o + self.variables[v].size] += a
        return row

    def _rows(self, coeffs: dict[str, np.ndarray], nrows: int) -> np.ndarray:
        out = np.zeros((nrows, self.n))
        for v, a in coeffs.items():
            o = self.offsets[v]
            out[:, o:o + self.variables[v].size] += a
        return out

    def cone_data(self):
        """``(G, h, dims, A, b)`` with ``G x + s = h``, ``s`` in the product cone."""
        G_rows, h_rows = [], []
        for con in self.linear:
            G_rows.append(-self._row(con.coeffs)[None, :])
            h_rows.append(np.array([con.const]))
        q_dims = []
        for con in self.soc:
            G_rows.append(-self._rows(con.coeffs, con.rows))
            h_rows.append(np.asarray(con.const, dtype=float))
            q_dims.append(con.rows)
        s_dims = []
        for blk in self.psd:
            n = blk.dim
            G = np.zeros((n * n, self.n))
            for v, a in blk.coeffs.items():
                o = self.offsets[v]
                # column-major vec of each coefficient matrix
                G[:, o:o + a.shape[0]] -= a.transpose(0, 2, 1).reshape(a.shape[0], n * n).T
            G_rows.append(G)
            h_rows.append(blk.const.T.reshape(-1))
            s_dims.append(n)
        G = np.vstack(G_rows) if G_rows else np.zeros((0, self.n))
        h = np.concatenate(h_rows) if h_rows else np.zeros(0)
        if self.equalities:
            A = np.vstack([self._row(e.coeffs) for e in self.equalities])
            b = np.array([-e.const for e in self.equalities])
        else:
            A, b = None, None
        dims = {"l": len(self.linear), "q": q_dims, "s": s_dims}
        return G, h, dims, A, b


@dataclass
class ConicSolution:
    status: str
    values: dict[str, np.ndarray]
    objective: float
    residuals: dict[str, float]
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _as_real_block(block) -> PsdBlock:
    const = np.asarray(block.const)
    coeffs = {v: np.asarray(a) for v, a in block.coeffs.items()}
    is_complex = np.iscomplexobj(const) or any(np.iscomplexobj(a) for a in coeffs.values())
    if is_complex and (np.abs(const.imag).max(initial=0.0) > 0 or any(np.abs(a.imag).max(initial=0.0) > 0 for a in coeffs.values())):
        rb = block.realified()
        const = np.asarray(rb.const, dtype=float)
        coeffs = {v: np.asarray(a, dtype=float) for v, a in rb.coeffs.items()}
    else:
        const = const.real.astype(float)
        coeffs = {v: a.real.astype(float) for v, a in coeffs.items()}
    scale = max(1.0, np.abs(const).max(initial=0.0))
    if np.abs(const - const.T).max(initial=0.0) > 1e-9 * scale:
        raise ValueError(f"block {block.label!r}: constant term is not symmetric")
    for v, a in coeffs.items():
        s = max(1.0, np.abs(a).max(initial=0.0))
        if np.abs(a - a.transpose(0, 2, 1)).max(initial=0.0) > 1e-9 * s:
            raise ValueError(f"block {block.label!r}: coefficient of {v!r} is not symmetric (non-affine in a real variable)")
    const = 0.5 * (const + const.T)
    coeffs = {v: 0.5 * (a + a.transpose(0, 2, 1)) for v, a in coeffs.items()}
    return PsdBlock(label=block.label, const=const, coeffs=coeffs)


def assemble(variables, objective: Objective, lmi_blocks=(), scalar_constraints=()) -> ConicProblem:
    """Lower an objective, LMI blocks and scalar constraints to real cone form.

    ``variables`` is an iterable of :class:`Variable`.  Complex Hermitian
    blocks are realified; 1x1 real blocks become linear rows; squared norms in
    the objective go through one epigraph variable with a rotated SOC.
    """
    registry: dict[str, Variable] = {}
    for var in variables:
        if var.name in registry:
            if registry[var.name] != var:
                raise ValueError(f"variable {var.name!r} registered twice with different shapes")
            continue
        registry[var.name] = var

    def check(names, where):
        for v in names:
            if v not in registry:
                raise KeyError(f"{where} references unregistered variable {v!r}")

    linear: list[LinearConstraint] = []
    equalities: list[LinearConstraint] = []
    soc: list[SocConstraint] = []
    psd: list[PsdBlock] = []

    for blk in lmi_blocks:
        check(blk.coeffs, f"block {blk.label!r}")
        for v, a in blk.coeffs.items():
            if a.shape[0] != registry[v].size:
                raise ValueError(f"block {blk.label!r}: {v!r} has {a.shape[0]} coefficients, expected {registry[v].size}")
        rb = _as_real_block(blk)
        if rb.dim == 1:
            linear.append(LinearConstraint({v: a[:, 0, 0] for v, a in rb.coeffs.items()}, float(rb.const[0, 0]), label=rb.label))
        else:
            psd.append(rb)

    for con in scalar_constraints:
        check(con.coeffs, f"constraint {con.label!r}")
        if isinstance(con, SocConstraint):
            soc.append(con)
        elif con.equality:
            equalities.append(con)
        else:
            linear.append(con)

    check(objective.linear, "objective")
    check(objective.squared, "objective")
    if objective.squared:
        if EPIGRAPH in registry:
            raise ValueError(f"{EPIGRAPH!r} is reserved")
        registry[EPIGRAPH] = Variable(EPIGRAPH, 1)
        # ||x||^2 <= t  <=>  ||(2x, t - 1)|| <= t + 1
        rows = 2 + sum(registry[v].size for v in objective.squared)
        t_col = np.zeros((rows, 1))
        t_col[0, 0] = t_col[-1, 0] = 1.0
        coeffs = {EPIGRAPH: t_col}
        r = 1
        for v in objective.squared:
            size = registry[v].size
            a = coeffs.get(v, np.zeros((rows, size)))
            a[r:r + size] += 2.0 * np.eye(size)
            coeffs[v] = a
            r += size
        const = np.zeros(rows)
        const[0], const[-1] = 1.0, -1.0
        soc.append(SocConstraint(coeffs, const, label="objective epigraph"))

    for var in registry.values():
        if var.kind == "nonnegative":
            for i in range(var.size):
                e = np.zeros(var.size)
                e[i] = 1.0
                linear.append(LinearConstraint({var.name: e}, 0.0, label=f"{var.name}[{i}] >= 0"))

    offsets, o = {}, 0
    for name, var in registry.items():
        offsets[name] = o
        o += var.size
    prob = ConicProblem(registry, offsets, np.zeros(o), objective.constant, linear, equalities, soc, psd)
    c = prob._row({v: np.asarray(a, dtype=float) for v, a in objective.linear.items()}) if objective.linear else np.zeros(o)
    if objective.squared:
        c[offsets[EPIGRAPH]] += 1.0
    prob.c = c
    return prob


def _settings(tol: float | None, max_iter: int | None) -> tuple[float, int]:
    if tol is None:
        tol = float(os.environ.get(TOL_ENV, DEFAULT_TOL))
    if max_iter is None:
        max_iter = int(os.environ.get(MAX_ITER_ENV, DEFAULT_MAX_ITER))
    return tol, max_iter


def solve(problem: ConicProblem, tol: float | None = None, max_iter: int | None = None) -> ConicSolution:
    """Solve with cvxopt's primal-dual interior point method.

    Failures come back as a status, never as an exception.
    """
    from cvxopt import solvers

    tol, max_iter = _settings(tol, max_iter)
    G, h, dims, A, b = problem.cone_data()
    # iterative refinement of the KKT solves keeps badly scaled SDPs from
    # losing precision near the optimum
    opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol, "maxiters": max_iter,
            "refinement": 2}
    args = [_dense(problem.c), _dense(G), _dense(h), dims]
    if A is not None:
        args += [_dense(A), _dense(b)]
    try:
        res = solvers.conelp(*args, options=opts)
    except (ArithmeticError, ValueError) as exc:
        log.debug("cvxopt raised %s", exc)
        return ConicSolution("numerical-failure", {}, float("nan"), {}, 0)

    raw = res["status"]
    iters = int(res.get("iterations", 0))
    residuals = {
        "primal_infeasibility": _num(res.get("primal infeasibility")),
        "dual_infeasibility": _num(res.get("dual infeasibility")),
        "gap": _num(res.get("gap")),
        "relative_gap": _num(res.get("relative gap")),
    }
    if raw == "optimal":
        status = "optimal"
    elif raw == "primal infeasible":
        status = "infeasible"
    elif raw == "dual infeasible":
        status = "unbounded"
    elif iters >= max_iter:
        status = "iteration-limit"
    else:
        status = "numerical-failure"

    x = np.array(res["x"]).ravel() if res["x"] is not None else None
    if x is None or status in ("infeasible", "unbounded"):
        return ConicSolution(status, {}, float("nan"), residuals, iters)
    values = problem.split(x)
    objective = float(problem.c @ x + problem.obj_constant)
    return ConicSolution(status, values, objective, residuals, iters)


def _dense(a):
    from cvxopt import matrix

    a = np.asarray(a, dtype=float)
    return matrix(a.reshape(-1, 1) if a.ndim == 1 else a)


def _num(v) -> float:
    return float("nan") if v is None else float(v)


def export_sdpa(problem: ConicProblem, path: str | Path) -> None:
    """Write the problem in sparse SDPA format (``.dat-s``).

    Form: min c'x  s.t.  sum_i x_i F_i - F_0 >= 0 blockwise.  Linear rows go
    in one diagonal block (equalities as two rows); each SOC becomes an arrow
    matrix block.  The objective constant is written as a comment.
    """
    n = problem.n
    blocks: list[tuple[int, list]] = []  # (size, [(mat, i, j, value)])

    lin_rows = []
    for con in problem.linear:
        lin_rows.append((problem._row(con.coeffs), con.const))
    for con in problem.equalities:
        row = problem._row(con.coeffs)
        lin_rows.append((row, con.const))
        lin_rows.append((-row, -con.const))
    if lin_rows:
        entries = []
        for r, (row, const) in enumerate(lin_rows, start=1):
            if const != 0.0:
                entries.append((0, r, r, -const))
            for i in np.flatnonzero(row):
                entries.append((i + 1, r, r, row[i]))
        blocks.append((-len(lin_rows), entries))

    for con in problem.soc:
        rows = con.rows
        F = problem._rows(con.coeffs, rows)
        g = np.asarray(con.const, dtype=float)
        # arrow(s) = [[s0 I, s1], [s1', s0]] with s = F x + g
        entries = []

        def arrow_entries(mat, vec):
            out = []
            m = rows - 1
            for d in range(1, m + 2):
                if vec[0] != 0.0:
                    out.append((mat, d, d, vec[0]))
            for r in range(1, rows):
                if vec[r] != 0.0:
                    out.append((mat, r, m + 1, vec[r]))
            return out

        entries += [(0, i, j, -v) for (_, i, j, v) in arrow_entries(0, g)]
        for k in range(n):
            if np.any(F[:, k]):
                entries += arrow_entries(k + 1, F[:, k])
        blocks.append((rows, entries))

    for blk in problem.psd:
        entries = []
        d = blk.dim
        iu = np.triu_indices(d)
        for i, j in zip(*iu):
            if blk.const[i, j] != 0.0:
                entries.append((0, i + 1, j + 1, -blk.const[i, j]))
        for v, a in blk.coeffs.items():
            o = problem.offsets[v]
            for k in range(a.shape[0]):
                for i, j in zip(*iu):
                    if a[k, i, j] != 0.0:
                        entries.append((o + k + 1, i + 1, j + 1, a[k, i, j]))
        blocks.append((d, entries))

    lines = [f'"irs_cache export; objective constant {problem.obj_constant!r}', str(n), str(len(blocks))]
    lines.append(" ".join(str(s) for s, _ in blocks))
    lines.append(" ".join(repr(float(v)) for v in problem.c))
    for b_idx, (_, entries) in enumerate(blocks, start=1):
        for mat, i, j, val in entries:
            lines.append(f"{mat} {b_idx} {i} {j} {float(val)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_sdpa(path: str | Path):
    """Parse a sparse SDPA file into ``(c, blocks)``; ``blocks[b][mat]`` is dense.

    Diagonal blocks come back as dense diagonal matrices.
    """
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and ln[0] not in '"*']
    m = int(lines[0])
    nb = int(lines[1])
    sizes = [int(s) for s in lines[2].replace(",", " ").split()][:nb]
    c = np.array([float(s) for s in lines[3].replace(",", " ").split()][:m])
    mats = [np.zeros((m + 1, abs(s), abs(s))) for s in sizes]
    for ln in lines[4:]:
        mat, b, i, j, val = ln.split()
        mat, b, i, j = int(mat), int(b) - 1, int(i) - 1, int(j) - 1
        mats[b][mat, i, j] = float(val)
        mats[b][mat, j, i] = float(val)
    return c, mats
