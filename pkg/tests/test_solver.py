import numpy as np
import pytest

from irs_cache.lmi import LmiBlock
from irs_cache.solver import (
    EPIGRAPH, LinearConstraint, Objective, SocConstraint, Variable, as_complex, as_real, assemble,
    export_sdpa, read_sdpa, solve,
)

from oracles import barrier_sdp


def block(label, const, **coeffs):
    return LmiBlock(label, np.asarray(const, dtype=complex), {k: np.asarray(v, dtype=complex) for k, v in coeffs.items()})


def test_real_complex_roundtrip():
    z = np.array([1 + 2j, -3j, 0.5])
    np.testing.assert_array_equal(as_complex(as_real(z)), z)


def test_assemble_unconstrained_squared_norm():
    prob = assemble([Variable("x", 1)], Objective(squared=("x",)))
    assert EPIGRAPH in prob.variables and prob.n == 2
    assert len(prob.soc) == 1 and not prob.psd
    sol = solve(prob)
    assert sol.ok and abs(sol.values["x"][0]) < 1e-6 and sol.objective == pytest.approx(0, abs=1e-6)


def test_assemble_realifies_complex_block():
    # [[t, i],[-i, t]] is complex Hermitian: realified to 4x4
    blk = block("c", [[0, 1j], [-1j, 0]], t=[np.eye(2)])
    prob = assemble([Variable("t", 1)], Objective(linear={"t": np.ones(1)}), [blk])
    assert [b.dim for b in prob.psd] == [4]
    sol = solve(prob)
    assert sol.ok and sol.values["t"][0] == pytest.approx(1.0, abs=1e-6)


def test_assemble_registry_dedup():
    a = block("a", np.eye(2), x=[np.diag([1.0, -1.0])])
    b = block("b", np.eye(2), x=[np.array([[0, 1.0], [1.0, 0]])])
    prob = assemble([Variable("x", 1), Variable("x", 1)], Objective(linear={"x": np.ones(1)}), [a, b])
    assert list(prob.variables) == ["x"]
    assert len(prob.psd) == 2 and all("x" in p.coeffs for p in prob.psd)


def test_assemble_errors():
    with pytest.raises(KeyError):
        assemble([Variable("x", 1)], Objective(), [block("b", np.eye(2), y=[np.eye(2)])])
    with pytest.raises(KeyError):
        assemble([Variable("x", 1)], Objective(linear={"z": np.ones(1)}))
    with pytest.raises(ValueError):
        assemble([Variable("x", 1), Variable("x", 2)], Objective())
    with pytest.raises(ValueError):
        assemble([Variable("x", 1)], Objective(), [block("asym", np.eye(2), x=[np.array([[0, 1.0], [0, 0]])])])
    with pytest.raises(ValueError):
        Variable("x", 1, kind="integer")


def test_solve_two_by_two_example():
    blk = block("t", [[0, 1], [1, 0]], t=[np.eye(2)])
    sol = solve(assemble([Variable("t", 1)], Objective(linear={"t": np.ones(1)}), [blk]))
    assert sol.ok and sol.objective == pytest.approx(1.0, abs=1e-6)


def test_solve_infeasible():
    cons = [
        LinearConstraint({"x": np.ones(1)}, -1.0),   # x >= 1
        LinearConstraint({"x": -np.ones(1)}, 0.0),   # x <= 0
    ]
    sol = solve(assemble([Variable("x", 1)], Objective(linear={"x": np.ones(1)}), scalar_constraints=cons))
    assert sol.status == "infeasible" and not sol.ok


def test_solve_halfspace_projection():
    # w in C^2 stored as [Re; Im]; Re(h^H w) = Re w_0 >= 1
    con = LinearConstraint({"w": np.array([1.0, 0, 0, 0])}, -1.0)
    sol = solve(assemble([Variable("w", 4)], Objective(squared=("w",)), scalar_constraints=[con]))
    assert sol.ok
    np.testing.assert_allclose(as_complex(sol.values["w"]), [1, 0], atol=1e-6)
    assert sol.objective == pytest.approx(1.0, abs=1e-6)


def test_soc_and_nonnegative_variables():
    # minimise -x - y with ||(x, y)|| <= 1, y >= 0 handled by the variable kind
    soc = SocConstraint({"x": np.array([[0.0], [1.0], [0.0]]), "y": np.array([[0.0], [0.0], [1.0]])}, np.array([1.0, 0, 0]))
    prob = assemble([Variable("x", 1), Variable("y", 1, "nonnegative")],
                    Objective(linear={"x": -np.ones(1), "y": -np.ones(1)}), scalar_constraints=[soc])
    sol = solve(prob)
    assert sol.ok and sol.objective == pytest.approx(-np.sqrt(2), abs=1e-6)


def test_equality_constraint():
    eq = LinearConstraint({"x": np.array([1.0, 1.0])}, -2.0, equality=True)
    sol = solve(assemble([Variable("x", 2)], Objective(squared=("x",)), scalar_constraints=[eq]))
    assert sol.ok
    np.testing.assert_allclose(sol.values["x"], [1, 1], atol=1e-6)


def test_unbounded_is_status():
    sol = solve(assemble([Variable("x", 1)], Objective(linear={"x": np.ones(1)})))
    assert sol.status in ("unbounded", "numerical-failure") and not sol.ok


def _random_sdp(rng, n, m):
    Fs = []
    for _ in range(m):
        A = rng.standard_normal((n, n))
        Fs.append(0.5 * (A + A.T))
    Fs = np.array(Fs)
    B = rng.standard_normal((n, n))
    F0 = B @ B.T + np.eye(n)  # x = 0 strictly feasible
    Z = rng.standard_normal((n, n))
    Z = Z @ Z.T + 0.1 * np.eye(n)  # strictly dual feasible, so the optimum is attained
    c = np.array([np.trace(Z @ F) for F in Fs])
    return c, F0, Fs


def test_tiny_sdp_matches_barrier_oracle():
    rng = np.random.default_rng(0)
    for _ in range(15):
        n, m = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        c, F0, Fs = _random_sdp(rng, n, m)
        blk = block("sdp", F0, x=Fs)
        sol = solve(assemble([Variable("x", m)], Objective(linear={"x": c}), [blk]))
        assert sol.ok
        _, ref = barrier_sdp(c, F0, Fs, np.zeros(m))
        assert abs(sol.objective - ref) <= 1e-4 * max(1.0, abs(ref))


def test_perturbed_infeasible_detected():
    rng = np.random.default_rng(1)
    for _ in range(10):
        n = 3
        c, F0, Fs = _random_sdp(rng, n, 2)
        blk = block("sdp", F0, x=Fs)
        prob = assemble([Variable("x", 2)], Objective(linear={"x": c}), [blk])
        sol = solve(prob)
        assert sol.ok
        # demand an objective strictly better than the optimum
        cut = LinearConstraint({"x": -c}, sol.objective - 1e-2 * max(1, abs(sol.objective)))
        bad = solve(assemble([Variable("x", 2)], Objective(linear={"x": c}), [blk], [cut]))
        assert not bad.ok


def test_solve_deterministic():
    rng = np.random.default_rng(2)
    c, F0, Fs = _random_sdp(rng, 4, 3)
    prob = assemble([Variable("x", 3)], Objective(linear={"x": c}), [block("sdp", F0, x=Fs)])
    a, b = solve(prob, tol=1e-8), solve(prob, tol=1e-8)
    np.testing.assert_array_equal(a.values["x"], b.values["x"])
    assert a.objective == b.objective


def test_tolerance_env_override(monkeypatch):
    rng = np.random.default_rng(3)
    c, F0, Fs = _random_sdp(rng, 3, 2)
    prob = assemble([Variable("x", 2)], Objective(linear={"x": c}), [block("sdp", F0, x=Fs)])
    monkeypatch.setenv("IRS_CACHE_SOLVER_MAXITER", "1")
    assert solve(prob).status == "iteration-limit"


def test_sdpa_export_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    c, F0, Fs = _random_sdp(rng, 3, 2)
    cons = [LinearConstraint({"x": np.array([1.0, 0.0])}, 5.0)]
    prob = assemble([Variable("x", 2)], Objective(linear={"x": c}), [block("sdp", F0, x=Fs)], cons)
    path = tmp_path / "p.dat-s"
    export_sdpa(prob, path)
    c_read, mats = read_sdpa(path)
    np.testing.assert_allclose(c_read, c)
    lin, sdp = mats
    # linear block: x_0 + 5 >= 0 as diag entry
    assert lin[0, 0, 0] == -5.0 and lin[1, 0, 0] == 1.0
    np.testing.assert_allclose(-sdp[0], F0, atol=1e-15)
    np.testing.assert_allclose(sdp[1:], Fs, atol=1e-15)
