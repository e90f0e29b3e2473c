"""Robust precoder subproblem, penalty-CCP passive subproblem and the outer
alternating optimisation.

All subproblems run on the noise-normalised scene (see
:meth:`ChannelScene.normalized`), so slack values (IN, tau, lambda, beta) are in
units of the noise power while W is in absolute units (watts).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelScene
from .lmi import LmiBlock, SlackSet, ccp_modulus_constraints, interference_lmi, taylor_coefficients, useful_signal_lmi
from .solver import (
    ConicSolution, Objective, Variable, as_complex, assemble, solve,
)

log = logging.getLogger(__name__)

MODES = ("reduced", "full")


@dataclass(frozen=True)
class CcpConfig:
    rho0: float = 1e-3
    growth: float = 5.0
    rho_max: float = 1e4
    slack_tol: float = 1e-5
    step_tol: float = 1e-3
    max_inner: int = 50
    max_restarts: int = 10
    # re-anchor each inner solve at the unit-modulus projection of the iterate
    project_anchor: bool = False

    def __post_init__(self):
        if not self.growth > 1.0:
            raise ValueError("growth factor must be > 1")
        if not (self.rho0 > 0 and self.slack_tol > 0 and self.step_tol > 0):
            raise ValueError("rho0, slack_tol and step_tol must be > 0")
        if self.rho_max < self.rho0:
            raise ValueError("rho_max must be >= rho0")
        if self.max_inner < 1 or self.max_restarts < 0:
            raise ValueError("max_inner must be >= 1 and max_restarts >= 0")


@dataclass(frozen=True)
class AoConfig:
    rel_tol: float = 1e-3
    max_outer: int = 30
    ccp: CcpConfig = field(default_factory=CcpConfig)
    # interference block used inside the passive subproblem
    estep_interference: str = "reduced"
    init_restarts: int = 10
    bootstrap_iters: int = 40
    bootstrap_penalty: float = 1e4
    # iterate the precoder step at e(0) until the power settles
    init_converge: bool = True
    # phase-change halvings tried when the passive update is rejected
    backtrack: int = 4
    solver_tol: float | None = None

    def __post_init__(self):
        if self.estep_interference not in MODES:
            raise ValueError(f"estep_interference must be one of {MODES}")
        if self.max_outer < 1 or self.rel_tol <= 0:
            raise ValueError("max_outer must be >= 1 and rel_tol > 0")


@dataclass
class BeamformingState:
    W: np.ndarray
    e: np.ndarray
    W_anchor: np.ndarray
    e_anchor: np.ndarray
    IN: np.ndarray
    tau: np.ndarray
    lam: np.ndarray
    beta: np.ndarray
    d: np.ndarray
    outer_iter: int = 0
    power_history: list[float] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    seed: int = 0
    precoder_solves: int = 0

    @property
    def power(self) -> float:
        return float(np.vdot(self.W, self.W).real)

    def slacks(self) -> SlackSet:
        return SlackSet(IN=self.IN, tau=self.tau, lam=self.lam, beta=self.beta, d=self.d)


@dataclass
class StepResult:
    status: str
    power: float = float("nan")
    solver_iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


@dataclass
class PassiveReport:
    status: str  # accepted | stalled | skipped
    inner_iters: int = 0
    restarts: int = 0
    d_l1: float = float("nan")
    unit_modulus_error: float = float("nan")
    rho_history: list[float] = field(default_factory=list)
    last_solver_status: str = ""
    step_fraction: float = 0.0

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"


@dataclass
class IterationRecord:
    iteration: int
    power_w: float
    inner_iters: int
    d_l1: float
    passive_status: str
    restarts: int
    unit_modulus_error: float = float("nan")


@dataclass
class ConvergenceReport:
    records: list[IterationRecord]
    termination: str  # converged | outer-cap | step-failure
    outer_iters: int
    init_power_w: float

    def as_dicts(self) -> list[dict]:
        return [vars(r) | {"termination": self.termination} for r in self.records]


class InitializationError(RuntimeError):
    def __init__(self, message: str, status: str):
        super().__init__(f"{message} (last solver status: {status})")
        self.status = status


def sinr_threshold(gamma) -> np.ndarray:
    return 2.0 ** np.asarray(gamma, dtype=float) - 1.0


def _targets(scene: ChannelScene, gamma) -> np.ndarray:
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (scene.k_users,)).copy()
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("target rates must be finite and >= 0")
    return g


def _active(gamma: np.ndarray) -> list[int]:
    return [k for k in range(len(gamma)) if gamma[k] > 0]


def _scalar(v: dict, name: str) -> float:
    return float(v[name][0]) if name in v else 0.0


def _with_corner(n: int, Qa: np.ndarray) -> np.ndarray:
    Q = np.zeros((n + 1, Qa.shape[1] + 1), dtype=complex)
    Q[:n, :-1] = Qa
    Q[n, -1] = 1.0
    return Q


def _precoder_basis(e: np.ndarray, N: int) -> np.ndarray:
    # the e-dependence of the useful block lives in span{x kron e}
    u = e / np.linalg.norm(e)
    return _with_corner(N * e.size, np.kron(np.eye(N), u[:, None]))


def _passive_basis(w: np.ndarray, M: int) -> np.ndarray:
    u = w.conj() / np.linalg.norm(w)
    return _with_corner(M * w.size, np.kron(u[:, None], np.eye(M)))


def _useful_blocks(label, fn, sizes, xi, basis) -> list[LmiBlock]:
    if xi == 0.0:
        # no uncertainty: only the corner C >= 0 matters
        return [LmiBlock.from_affine(label, lambda v: fn(v)[-1:, -1:], sizes)]
    red, comp = LmiBlock.from_affine(label, fn, sizes).compress(basis)
    return [red] if comp is None else [red, comp]


def _user_slacks(k: int, xi: float) -> list[Variable]:
    out = [Variable(f"IN{k}", 1)]
    if xi > 0:
        out += [Variable(f"tau{k}", 1, "nonnegative"), Variable(f"lam{k}", 1, "nonnegative")]
    return out


def _collect_slacks(sol: ConicSolution, K: int, active: list[int]) -> dict[str, np.ndarray]:
    out = {n: np.zeros(K) for n in ("IN", "tau", "lam", "beta")}
    for k in active:
        for n in out:
            if f"{n}{k}" in sol.values:
                out[n][k] = float(sol.values[f"{n}{k}"][0])
    return out


def _interference_blocks(sc, k, active, W_of, e_of, sizes, mode) -> LmiBlock:
    xi = float(sc.xi[k])
    others = [j for j in active if j != k]
    N = sc.n_antennas

    def fn(v):
        Wm = np.column_stack([W_of(v, j) for j in others]) if others else np.zeros((N, 0), complex)
        return interference_lmi(
            Wm, e_of(v), sc.h[k], sc.G_hat[k], _scalar(v, f"IN{k}"), _scalar(v, f"lam{k}"),
            xi, float(sc.noise_power[k]), mode if xi > 0 else "reduced",
        )

    return LmiBlock.from_affine(f"interference {k}", fn, sizes)


def precoder_problem(sc: ChannelScene, gamma: np.ndarray, e: np.ndarray, W_anchor: np.ndarray,
                     slack_penalty: float | None = None):
    """Assemble the robust precoder SDP at fixed ``e`` around ``W_anchor``.

    With ``slack_penalty`` each user's rate constraint gets a penalised slack
    ``s_k`` (used to find a first feasible anchor).
    """
    K, N = sc.k_users, sc.n_antennas
    active = _active(gamma)
    variables, blocks = [], []
    for k in active:
        variables.append(Variable(f"w{k}", 2 * N))
    for k in active:
        xi = float(sc.xi[k])
        variables += _user_slacks(k, xi)
        sizes = {f"w{k}": 2 * N, f"IN{k}": 1} | ({f"tau{k}": 1} if xi > 0 else {})
        if slack_penalty is not None:
            variables.append(Variable(f"s{k}", 1, "nonnegative"))
            sizes[f"s{k}"] = 1

        def useful(v, k=k, xi=xi):
            co = taylor_coefficients(as_complex(v[f"w{k}"]), W_anchor[:, k], e, e, sc.h[k], sc.G_hat[k])
            return useful_signal_lmi(co, _scalar(v, f"IN{k}"), _scalar(v, f"tau{k}"), xi, gamma[k],
                                     beta=-_scalar(v, f"s{k}"))

        blocks += _useful_blocks(f"useful {k}", useful, sizes, xi, _precoder_basis(e, N))

        isizes = {f"w{j}": 2 * N for j in active if j != k} | {f"IN{k}": 1}
        if xi > 0:
            isizes[f"lam{k}"] = 1
        blocks.append(_interference_blocks(
            sc, k, active, lambda v, j: as_complex(v[f"w{j}"]), lambda v: e, isizes, "full"))
    linear = {f"s{k}": np.array([slack_penalty]) for k in active} if slack_penalty is not None else {}
    obj = Objective(linear=linear, squared=tuple(f"w{k}" for k in active))
    return assemble(variables, obj, blocks)


def _zero_solution(K: int) -> dict:
    return {n: np.zeros(K) for n in ("IN", "tau", "lam", "beta")}


def _solve_precoder(sc, gamma, e, W_anchor, slack_penalty=None, tol=None):
    K, N = sc.k_users, sc.n_antennas
    active = _active(gamma)
    if not active:
        return StepResult("optimal", 0.0), np.zeros((N, K), complex), _zero_solution(K) | {"IN": np.array(sc.noise_power, float)}, 0.0
    prob = precoder_problem(sc, gamma, e, W_anchor, slack_penalty)
    sol = solve(prob, tol=tol)
    if not sol.ok:
        return StepResult(sol.status, solver_iterations=sol.iterations), None, None, float("nan")
    W = np.zeros((N, K), complex)
    for k in active:
        W[:, k] = as_complex(sol.values[f"w{k}"])
    slack = sum(max(0.0, float(sol.values[f"s{k}"][0])) for k in active) if slack_penalty is not None else 0.0
    res = StepResult("optimal", float(np.vdot(W, W).real), sol.iterations)
    return res, W, _collect_slacks(sol, K, active), slack


def precoder_step(state: BeamformingState, scene: ChannelScene, gamma, tol: float | None = None):
    """One robust precoder update at fixed ``e``, anchored at the current W.

    Returns ``(new_state, StepResult)``; on solver failure the state is
    returned unchanged apart from a recorded failure.
    """
    sc = scene.normalized()
    g = _targets(scene, gamma)
    res, W, sl, _ = _solve_precoder(sc, g, state.e, state.W, tol=tol)
    if not res.ok:
        return replace(state, failures=state.failures + [f"precoder: {res.status}"]), res
    new = replace(
        state, W=W, W_anchor=W, e_anchor=state.e.copy(), IN=sl["IN"], tau=sl["tau"], lam=sl["lam"],
        power_history=state.power_history + [res.power], precoder_solves=state.precoder_solves + 1,
    )
    return new, res


def _bootstrap_anchor(sc: ChannelScene, gamma: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Regularised zero-forcing directions with per-user power for twice the target SINR."""
    K, N = sc.k_users, sc.n_antennas
    active = _active(gamma)
    W = np.zeros((N, K), complex)
    if not active:
        return W
    H = np.column_stack([sc.h[k] + sc.G_hat[k].conj().T @ e for k in active])
    gram = H.conj().T @ H
    reg = 1e-2 * np.trace(gram).real / len(active)
    V = H @ np.linalg.inv(gram + reg * np.eye(len(active)))
    thr = sinr_threshold(gamma)
    for i, k in enumerate(active):
        v = V[:, i] / np.linalg.norm(V[:, i])
        gain = abs(np.vdot(H[:, i], v)) ** 2
        W[:, k] = np.sqrt(2.0 * thr[k] * sc.noise_power[k] / max(gain, 1e-300)) * v
    return W


def _feasible_precoder(sc, gamma, e, cfg: AoConfig):
    """Slack-penalised successive approximation until the rate slacks vanish,
    then one exact precoder solve.  Returns ``(StepResult, W, slacks)``."""
    W = _bootstrap_anchor(sc, gamma, e)
    last = "not-run"
    for _ in range(cfg.bootstrap_iters):
        res, W_new, _, slack = _solve_precoder(sc, gamma, e, W, slack_penalty=cfg.bootstrap_penalty, tol=cfg.solver_tol)
        last = res.status
        if not res.ok:
            break
        W = W_new
        if slack <= 1e-8:
            res, W_new, sl, _ = _solve_precoder(sc, gamma, e, W, tol=cfg.solver_tol)
            if res.ok:
                return res, W_new, sl
            last = res.status
    # an optimal penalised solve whose slack never cleared means the targets
    # were not reached
    return StepResult("infeasible" if last == "optimal" else last), None, None


def _empty_state(sc: ChannelScene, e: np.ndarray, seed: int) -> BeamformingState:
    K, N, M = sc.k_users, sc.n_antennas, sc.m_elements
    W = np.zeros((N, K), complex)
    z = np.zeros(K)
    return BeamformingState(W=W, e=e, W_anchor=W.copy(), e_anchor=e.copy(), IN=np.ones(K), tau=z.copy(),
                            lam=z.copy(), beta=z.copy(), d=np.zeros(2 * M), seed=seed)


def random_phases(rng: np.random.Generator, M: int) -> np.ndarray:
    return np.exp(2j * np.pi * rng.uniform(size=M))


def initialize_state(scene: ChannelScene, gamma, seed: int = 0, config: AoConfig | None = None) -> BeamformingState:
    """Random unit-modulus e(0) and a feasible robust precoder W(0) at it.

    e(0) is redrawn (up to ``config.init_restarts`` times) when no feasible
    precoder is found.  With ``config.init_converge`` the precoder step is
    iterated at e(0) until the relative power change drops below
    ``config.rel_tol``; the result doubles as the random-phase baseline.
    """
    cfg = config or AoConfig()
    sc = scene.normalized()
    g = _targets(scene, gamma)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1E5]))
    last = "not-run"
    for attempt in range(cfg.init_restarts + 1):
        e0 = random_phases(rng, sc.m_elements)
        state = _empty_state(sc, e0, seed)
        if not _active(g):
            state.IN = np.array(sc.noise_power, float)
            state.power_history = [0.0]
            return state
        res, W, sl = _feasible_precoder(sc, g, e0, cfg)
        last = res.status
        if res.ok:
            break
        log.info("initialisation attempt %d failed (%s); redrawing e(0)", attempt, res.status)
    else:
        raise InitializationError("no feasible precoder for any drawn e(0)", last)
    state = replace(state, W=W, W_anchor=W, IN=sl["IN"], tau=sl["tau"], lam=sl["lam"], power_history=[res.power],
                    precoder_solves=1)
    if cfg.init_converge:
        for _ in range(cfg.max_outer):
            prev = state.power
            state, r = precoder_step(state, scene, g, tol=cfg.solver_tol)
            if not r.ok:
                state.failures.pop()
                break
            if abs(state.power - prev) <= cfg.rel_tol * max(prev, 1e-12):
                break
        state.power_history = [state.power]
    return state


def passive_problem(sc: ChannelScene, gamma: np.ndarray, W: np.ndarray, e_anchor: np.ndarray, rho: float,
                    interference: str = "reduced"):
    """Assemble the penalty-CCP passive subproblem around ``e_anchor``."""
    K, M = sc.k_users, sc.m_elements
    active = _active(gamma)
    variables = [Variable("e", 2 * M), Variable("d", 2 * M, "nonnegative")]
    blocks = []
    for k in active:
        xi = float(sc.xi[k])
        variables += _user_slacks(k, xi) + [Variable(f"beta{k}", 1, "nonnegative")]
        sizes = {"e": 2 * M, f"IN{k}": 1, f"beta{k}": 1} | ({f"tau{k}": 1} if xi > 0 else {})

        def useful(v, k=k, xi=xi):
            co = taylor_coefficients(W[:, k], W[:, k], as_complex(v["e"]), e_anchor, sc.h[k], sc.G_hat[k])
            return useful_signal_lmi(co, _scalar(v, f"IN{k}"), _scalar(v, f"tau{k}"), xi, gamma[k],
                                     beta=_scalar(v, f"beta{k}"))

        blocks += _useful_blocks(f"useful {k}", useful, sizes, xi, _passive_basis(W[:, k], M))
        isizes = {"e": 2 * M, f"IN{k}": 1} | ({f"lam{k}": 1} if xi > 0 else {})
        blocks.append(_interference_blocks(
            sc, k, active, lambda v, j: W[:, j], lambda v: as_complex(v["e"]), isizes, interference))
    scalar = ccp_modulus_constraints(e_anchor, "e", "d")
    obj = Objective(linear={f"beta{k}": np.array([-1.0]) for k in active} | {"d": np.full(2 * M, rho)})
    return assemble(variables, obj, blocks, scalar)


@dataclass
class _CcpOutcome:
    converged: bool
    e: np.ndarray
    d: np.ndarray
    beta: np.ndarray
    iters: int
    rho_history: list[float]
    status: str


def _run_ccp(sc, gamma, W, start, ccp: CcpConfig, interference, tol) -> _CcpOutcome:
    K, M = sc.k_users, sc.m_elements
    active = _active(gamma)
    e_prev = np.asarray(start, dtype=complex)
    rho = ccp.rho0
    rhos: list[float] = []
    d = np.full(2 * M, np.inf)
    beta = np.zeros(K)
    status = "not-run"
    for it in range(1, ccp.max_inner + 1):
        try:
            prob = passive_problem(sc, gamma, W, e_prev, rho, interference)
        except ValueError as exc:  # degenerate anchor
            return _CcpOutcome(False, e_prev, d, beta, it, rhos, f"numerical-failure: {exc}")
        sol = solve(prob, tol=tol)
        status = sol.status
        if not sol.ok:
            # a tiny penalty lets |e| run off and can break the solver;
            # tighten it and retry from the same anchor
            if rho < ccp.rho_max:
                rho = min(ccp.growth * rho, ccp.rho_max)
                continue
            return _CcpOutcome(False, e_prev, d, beta, it, rhos, status)
        rhos.append(rho)
        e_new = as_complex(sol.values["e"])
        d = np.maximum(sol.values["d"], 0.0)
        beta = np.array([float(sol.values[f"beta{k}"][0]) if k in active else 0.0 for k in range(K)])
        if ccp.project_anchor and np.all(e_new != 0):
            e_new = e_new / np.abs(e_new)
        step = float(np.abs(e_new - e_prev).sum())
        e_prev = e_new
        rho = min(ccp.growth * rho, ccp.rho_max)
        if d.sum() <= ccp.slack_tol and step <= ccp.step_tol:
            return _CcpOutcome(True, e_new, d, beta, it, rhos, status)
    return _CcpOutcome(False, e_prev, d, beta, ccp.max_inner, rhos, "inner-cap")


def robust_feasibility(scene: ChannelScene, W: np.ndarray, e: np.ndarray, gamma, tol: float | None = None) -> ConicSolution:
    """Is ``(W, e)`` feasible for the robust rate constraints (exact blocks)?

    Solves for IN, tau, lambda only; status ``optimal`` means certified.
    ``scene`` must already be noise-normalised.
    """
    g = _targets(scene, gamma)
    sc = scene
    N = sc.n_antennas
    active = _active(g)
    variables, blocks = [], []
    for k in active:
        xi = float(sc.xi[k])
        variables += _user_slacks(k, xi)
        sizes = {f"IN{k}": 1} | ({f"tau{k}": 1} if xi > 0 else {})

        def useful(v, k=k, xi=xi):
            co = taylor_coefficients(W[:, k], W[:, k], e, e, sc.h[k], sc.G_hat[k])
            return useful_signal_lmi(co, _scalar(v, f"IN{k}"), _scalar(v, f"tau{k}"), xi, g[k])

        blocks += _useful_blocks(f"useful {k}", useful, sizes, xi, _precoder_basis(e, N))
        isizes = {f"IN{k}": 1} | ({f"lam{k}": 1} if xi > 0 else {})
        blocks.append(_interference_blocks(sc, k, active, lambda v, j: W[:, j], lambda v: e, isizes, "full"))
    if not active:
        return ConicSolution("optimal", {}, 0.0, {})
    obj = Objective(linear={f"IN{k}": np.array([1.0]) for k in active})
    return solve(assemble(variables, obj, blocks), tol=tol)


def passive_step(state: BeamformingState, scene: ChannelScene, gamma, ccp: CcpConfig | None = None,
                 interference: str = "reduced", tol: float | None = None, backtrack: int = 4):
    """Penalty-CCP update of ``e`` at fixed W.

    The first CCP run starts from the current ``e``; each later attempt starts
    from fresh random phases.  The final iterate is projected to unit modulus
    and accepted only if the current W stays robustly feasible.  Failing
    that, up to ``backtrack`` halvings of the phase change are tried; if none
    is feasible the previous ``e`` is kept and a stall recorded.
    """
    ccp = ccp or CcpConfig()
    sc = scene.normalized()
    g = _targets(scene, gamma)
    if not _active(g) or not np.any(state.W):
        return state, PassiveReport("skipped")
    rng = np.random.default_rng(np.random.SeedSequence([state.seed, 0xCC9, state.outer_iter]))
    start = state.e
    total = 0
    out = None
    for attempt in range(ccp.max_restarts + 1):
        out = _run_ccp(sc, g, state.W, start, ccp, interference, tol)
        total += out.iters
        if out.converged:
            break
        start = random_phases(rng, sc.m_elements)
    report = PassiveReport("stalled", total, attempt, float(out.d.sum()), float("nan"), out.rho_history, out.status)
    if not out.converged:
        return replace(state, failures=state.failures + ["passive: restart cap"]), report
    e_new = out.e / np.abs(out.e)
    report.unit_modulus_error = float(np.max(np.abs(np.abs(e_new) - 1.0)))
    # phase backtracking towards the current e keeps the acceptance rule
    # useful when the CCP point itself breaks robust feasibility
    turn = np.angle(e_new * state.e.conj())
    for i in range(backtrack + 1):
        frac = 0.5**i
        cand = e_new if i == 0 else state.e * np.exp(1j * frac * turn)
        check = robust_feasibility(sc, state.W, cand, g, tol=tol)
        report.last_solver_status = check.status
        if check.ok:
            break
    else:
        return replace(state, failures=state.failures + [f"passive: rejected ({check.status})"]), report
    report.status = "accepted"
    report.step_fraction = frac
    sl = _collect_slacks(check, sc.k_users, _active(g))
    new = replace(state, e=cand, e_anchor=cand.copy(), IN=sl["IN"], tau=sl["tau"], lam=sl["lam"],
                  beta=out.beta, d=out.d)
    return new, report


def alternating_optimize(scene: ChannelScene, gamma, config: AoConfig | None = None, seed: int = 0,
                         state: BeamformingState | None = None):
    """Alternate passive and precoder updates until the power settles.

    Starts from ``state`` (or :func:`initialize_state`).  Each outer
    iteration updates e at fixed W, then W at the new e anchored at the old
    W, and stops once ``|P(n+1) - P(n)| <= rel_tol * max(P(n), 1e-12)``.
    """
    cfg = config or AoConfig()
    g = _targets(scene, gamma)
    if state is None:
        state = initialize_state(scene, g, seed, cfg)
    state = replace(state, power_history=list(state.power_history) or [state.power], failures=list(state.failures))
    p0 = state.power
    records: list[IterationRecord] = []
    if not _active(g):
        records.append(IterationRecord(1, 0.0, 0, 0.0, "skipped", 0))
        return replace(state, outer_iter=1), ConvergenceReport(records, "converged", 1, 0.0)
    termination = "outer-cap"
    for n in range(1, cfg.max_outer + 1):
        state = replace(state, outer_iter=n)
        prev = state.power
        state, prep = passive_step(state, scene, g, cfg.ccp, cfg.estep_interference, cfg.solver_tol,
                                   cfg.backtrack)
        state, wres = precoder_step(state, scene, g, tol=cfg.solver_tol)
        records.append(IterationRecord(n, state.power, prep.inner_iters, prep.d_l1, prep.status, prep.restarts,
                                       prep.unit_modulus_error))
        if not wres.ok:
            termination = "step-failure"
            break
        if abs(state.power - prev) <= cfg.rel_tol * max(prev, 1e-12):
            termination = "converged"
            break
    return state, ConvergenceReport(records, termination, state.outer_iter, p0)
