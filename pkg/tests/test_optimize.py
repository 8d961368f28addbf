import numpy as np
import pytest

from conftest import random_stable_system
from tdmm import (
    DecisionVars,
    FixedStructure,
    LtiSystem,
    OptimizerConfig,
    build_interpolation,
    gradient_f,
    kkt_residual,
    moments_right,
    multi_start_p1,
    objective_f,
    run_kkt,
    run_pm,
)
from tdmm.errors import Diverged, InfeasiblePoint, InfeasibleStart
from tdmm.mateq import solve_lyapunov_ctrl, solve_lyapunov_obs, spectrum
from tdmm.optimize import (
    exact_kkt_residual,
    init_pole_placement,
    init_random_unstable_S,
    is_feasible,
    project_positive,
)


def flagship_structure(cart):
    """Order-2 fixed data at a doubled point at the origin."""
    data = build_interpolation([0.0, 0.0])
    C_V = moments_right(cart, data).value
    return data, FixedStructure(data.L, C_V, cart)


def random_p2_instance(rng, n=None, nu=None):
    n = n or int(rng.integers(3, 9))
    nu = nu or int(rng.integers(1, 4))
    sys = random_stable_system(rng, n)
    pts = [float(k + rng.uniform(0.0, 0.5)) for k in range(nu)]
    data = build_interpolation(pts)
    C_V = moments_right(sys, data).value
    fs = FixedStructure(data.L, C_V, sys)
    vars0 = init_pole_placement(data, [-(k + 1.0) for k in range(nu)], "P2")
    return sys, data, fs, vars0


def test_objective_zero_input_is_zero():
    sys = LtiSystem(np.diag([-1.0, -2.0]), np.zeros((2, 1)), [[1.0, 1.0]])
    fs = FixedStructure(np.ones((1, 1)), np.zeros((1, 1)), sys)
    vars = DecisionVars("P2", G=np.zeros((1, 1)), S=[[-1.0]])
    assert objective_f(vars, fs) <= 1e-14


def test_objective_matches_error_norm():
    from tdmm import build_error_system, error_system_as_lti, h2_norm
    from tdmm.moments import ReducedModel

    rng = np.random.default_rng(13)
    for _ in range(5):
        sys, data, fs, vars0 = random_p2_instance(rng)
        f = objective_f(vars0, fs)
        S, G = vars0.split(fs)
        model = ReducedModel(S - G @ fs.L, G, fs.C_V)
        h2 = h2_norm(error_system_as_lti(build_error_system(sys, model)))
        assert np.isclose(f, h2 ** 2 / (2.0 * np.pi), rtol=1e-10)


def test_objective_flagship_frozen_values(cart):
    data, fs = flagship_structure(cart)
    f_start = objective_f(DecisionVars("P2", G=[[1.0], [0.5]], S=data.S), fs)
    assert np.isclose(f_start, 0.30791337249, rtol=1e-9)
    f_ref = objective_f(DecisionVars("P2", G=[[0.2505], [0.15]], S=data.S), fs)
    assert np.isclose(f_ref, 0.17175653774564, rtol=1e-9)


def test_objective_infeasible_point(cart):
    data, fs = flagship_structure(cart)
    with pytest.raises(InfeasiblePoint):
        objective_f(DecisionVars("P2", G=[[-1.0], [0.0]], S=data.S), fs)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(14)
    for variant in ("P2", "P1"):
        for _ in range(3):
            sys, data, fs, vars0 = random_p2_instance(rng, n=5, nu=2)
            if variant == "P1":
                S, G = vars0.split(fs)
                vars0 = DecisionVars("P1", X=np.hstack([S, G]))
            grad = gradient_f(vars0, fs)
            U = vars0.unknown()
            fd = np.zeros_like(grad)
            h = 1e-6
            for idx in np.ndindex(U.shape):
                Up, Um = U.copy(), U.copy()
                Up[idx] += h
                Um[idx] -= h
                fd[idx] = (objective_f(vars0.with_unknown(Up), fs)
                           - objective_f(vars0.with_unknown(Um), fs)) / (2 * h)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel <= 1e-6, rel


def test_gradient_zero_input_block():
    sys = LtiSystem(np.diag([-1.0, -2.0]), np.zeros((2, 1)), [[1.0, 1.0]])
    fs = FixedStructure(np.ones((1, 1)), np.zeros((1, 1)), sys)
    vars = DecisionVars("P2", G=np.zeros((1, 1)), S=[[-1.0]])
    assert np.linalg.norm(gradient_f(vars, fs)) <= 1e-14


def test_gradient_vanishes_at_flagship_optimum(cart):
    data, fs = flagship_structure(cart)
    g_star = np.array([[0.3235455604], [0.3167186297]])
    vars = DecisionVars("P2", G=g_star, S=data.S)
    f = objective_f(vars, fs)
    assert np.linalg.norm(gradient_f(vars, fs)) <= 1e-7 * (1.0 + abs(f))


def test_kkt_residual_identities():
    rng = np.random.default_rng(15)
    sys, data, fs, vars0 = random_p2_instance(rng, n=4, nu=2)
    from tdmm.optimize import _error_blocks

    Acal, Be, Ccal = _error_blocks(vars0, fs)
    M = solve_lyapunov_obs(Acal, Ccal)
    W = solve_lyapunov_ctrl(Acal, Be @ Be.T)
    rM, rW, rX = kkt_residual(W, M, vars0, fs)
    scale = max(1.0, np.linalg.norm(Ccal))
    assert rM <= 1e-10 * scale and rW <= 1e-10 * scale
    half_grad = 0.5 * np.linalg.norm(gradient_f(vars0, fs))
    assert np.isclose(rX, half_grad, rtol=1e-10)
    # zero multipliers leave exactly the constant blocks
    rM0, rW0, _ = kkt_residual(np.zeros_like(W), np.zeros_like(M), vars0, fs)
    assert np.isclose(rM0, np.linalg.norm(Ccal), rtol=1e-12)
    assert np.isclose(rW0, np.linalg.norm(Be @ Be.T), rtol=1e-12)


def test_run_pm_flagship_converges_to_frozen_optimum(cart):
    data, fs = flagship_structure(cart)
    vars0 = DecisionVars("P2", G=[[1.0], [0.5]], S=data.S)
    vars_f, hist, fs_f, conv = run_pm(vars0, fs, OptimizerConfig())
    assert conv and len(hist) <= 50
    assert np.allclose(vars_f.G.ravel(), [0.3235455604, 0.3167186297], atol=1e-6)
    assert np.isclose(objective_f(vars_f, fs_f), 4.0512018032e-3, rtol=1e-6)
    # converged runs leave all three exact-multiplier residuals tiny
    assert max(exact_kkt_residual(vars_f, fs_f)) <= 1e-6


def test_run_pm_monotone_and_feasible(cart):
    data, fs = flagship_structure(cart)
    vars0 = DecisionVars("P2", G=[[1.0], [0.5]], S=data.S)
    _, hist, _, _ = run_pm(vars0, fs, OptimizerConfig())
    fvals = [h.f for h in hist if h.accepted]
    for a, b in zip(fvals, fvals[1:]):
        assert b <= a + 1e-12 * (1.0 + abs(a))
    assert all(h.abscissa < 0 for h in hist if h.accepted)


def test_run_pm_infeasible_start(cart):
    data, fs = flagship_structure(cart)
    with pytest.raises(InfeasibleStart):
        run_pm(DecisionVars("P2", G=[[-1.0], [0.0]], S=data.S), fs,
               OptimizerConfig())


def test_run_pm_quadratic_like_scalar(scalar_sys):
    data = build_interpolation([0.0])
    fs = FixedStructure(data.L, moments_right(scalar_sys, data).value,
                        scalar_sys)
    vars0 = DecisionVars("P2", G=[[0.5]], S=data.S)
    vars_f, hist, _, conv = run_pm(vars0, fs, OptimizerConfig())
    assert conv
    assert np.isclose(vars_f.G[0, 0], 1.0, atol=1e-7)
    fvals = [h.f for h in hist if h.accepted]
    assert all(b <= a + 1e-14 for a, b in zip(fvals, fvals[1:]))


def test_run_kkt_fixed_point_start(scalar_sys):
    from tdmm.optimize import _error_blocks

    data = build_interpolation([0.0])
    fs = FixedStructure(data.L, moments_right(scalar_sys, data).value,
                        scalar_sys)
    vstar, _, _, _ = run_pm(DecisionVars("P2", G=[[0.5]], S=data.S), fs,
                            OptimizerConfig())
    Acal, Be, Ccal = _error_blocks(vstar, fs)
    M = solve_lyapunov_obs(Acal, Ccal)
    W = solve_lyapunov_ctrl(Acal, Be @ Be.T)
    _, hist, _, conv, _ = run_kkt(vstar, W, M, fs,
                                  OptimizerConfig(method="kkt"))
    assert conv and len(hist) == 1


def test_run_kkt_matches_pm_on_scalar_problem(scalar_sys):
    # slow marginally damped iteration; the agreement bound needs the full
    # hundred thousand steps at the default stepsize
    from tdmm.optimize import _error_blocks

    data = build_interpolation([0.0])
    fs = FixedStructure(data.L, moments_right(scalar_sys, data).value,
                        scalar_sys)
    v0 = DecisionVars("P2", G=[[0.5]], S=data.S)
    Acal, Be, Ccal = _error_blocks(v0, fs)
    M0 = solve_lyapunov_obs(Acal, Ccal)
    W0 = solve_lyapunov_ctrl(Acal, Be @ Be.T)
    vk, _, _, _, _ = run_kkt(v0, W0, M0, fs,
                             OptimizerConfig(method="kkt", max_iters=100000))
    vq, _, _, _ = run_pm(v0, fs, OptimizerConfig())
    assert abs(vk.G[0, 0] - vq.G[0, 0]) <= 1e-6


def test_run_kkt_divergence_guard(scalar_sys):
    from tdmm.optimize import _error_blocks

    data = build_interpolation([0.0])
    fs = FixedStructure(data.L, moments_right(scalar_sys, data).value,
                        scalar_sys)
    v0 = DecisionVars("P2", G=[[0.5]], S=data.S)
    Acal, Be, Ccal = _error_blocks(v0, fs)
    M0 = solve_lyapunov_obs(Acal, Ccal)
    W0 = solve_lyapunov_ctrl(Acal, Be @ Be.T)
    with pytest.raises(Diverged):
        run_kkt(v0, W0, M0, fs,
                OptimizerConfig(method="kkt", alpha=1e-2, max_iters=100000))


def test_project_positive_variants(cart):
    data, fs = flagship_structure(cart)
    vars = DecisionVars("P2", G=[[-1.0], [2.0]], S=data.S)
    proj = project_positive(vars, fs)
    assert np.allclose(proj.G.ravel(), [0.0, 2.0])
    rng = np.random.default_rng(16)
    for variant in ("P2", "P1"):
        for _ in range(5):
            G = rng.standard_normal((2, 1))
            S = rng.standard_normal((2, 2))
            if variant == "P2":
                v = DecisionVars("P2", G=G, S=S)
            else:
                v = DecisionVars("P1", X=np.hstack([S, G]))
            p = project_positive(v, fs)
            F = p.closed_loop(fs)
            off = F - np.diag(np.diag(F))
            assert off.min() >= -1e-12
            assert p.split(fs)[1].min() >= 0.0
            # idempotent once positive
            again = project_positive(p, fs)
            for lhs, rhs in zip(again.split(fs), p.split(fs)):
                assert np.allclose(lhs, rhs)


def test_init_pole_placement_and_random_seed():
    data = build_interpolation([0.0, 0.0])
    vars = init_pole_placement(data, [-1.0, -2.0], "P1")
    assert vars.variant == "P1"
    assert np.allclose(vars.X[:, :2], data.S)
    assert np.allclose(vars.X[:, 2:], [[3.0], [2.0]])
    S1 = init_random_unstable_S(3, seed=42)
    S2 = init_random_unstable_S(3, seed=42)
    assert np.allclose(S1, S2)
    ev = np.diag(S1)
    assert np.all(ev > 0.0) and np.all(ev < 1.0)


def test_placement_start_is_feasible_for_pm():
    rng = np.random.default_rng(17)
    sys = random_stable_system(rng, 6)
    pts = [0.0, 0.4, 0.9, 1.5]
    data = build_interpolation(pts)
    C_V = moments_right(sys, data).value
    fs = FixedStructure(data.L, C_V, sys)
    vars0 = init_pole_placement(data, [-1.0, -2.0, -3.0, -4.0], "P2")
    assert is_feasible(vars0, fs)
    _, hist, _, _ = run_pm(vars0, fs, OptimizerConfig(max_iters=5))
    assert len(hist) >= 1


def test_multi_start_picks_lowest_objective(cart):
    cfg = OptimizerConfig(restarts=3, seed=5, max_iters=300)
    best, results = multi_start_p1(cart, 2, cfg)
    assert len(results) >= 1
    assert best.f == min(r.f for r in results)
    assert np.isfinite(best.f)


def test_lipschitz_smoke_on_segment(cart):
    data, fs = flagship_structure(cart)
    g0 = np.array([[1.0], [0.5]])
    g1 = np.array([[0.33], [0.32]])
    prev = None
    for t in np.linspace(0.0, 1.0, 7):
        g = (1 - t) * g0 + t * g1
        grad = gradient_f(DecisionVars("P2", G=g, S=data.S), fs)
        if prev is not None:
            num = np.linalg.norm(grad - prev[1])
            den = np.linalg.norm(g - prev[0])
            assert np.isfinite(num / den) and num / den < 1e6
        prev = (g, grad)


def test_refresh_mode_restores_interpolation(cart):
    from tdmm import check_interpolation
    from tdmm.moments import InterpolationData, ReducedModel, sylvester_pi

    cfg = OptimizerConfig(restarts=1, seed=3, max_iters=600, mode="refresh_cv")
    best, _ = multi_start_p1(cart, 1, cfg)
    S, G = best.vars.split(best.fs)
    data = InterpolationData(S, best.fs.L)
    Pi = sylvester_pi(cart, data)
    model = ReducedModel(S - G @ best.fs.L, G, cart.C @ Pi)
    result = check_interpolation(cart, model, data, tol=1e-6)
    assert result["pass"], result["max_residual"]
