import numpy as np
import pytest

from conftest import metzler_system
from tdmm import (
    LtiSystem,
    add_positivity,
    build_interpolation,
    build_relaxation,
    build_relaxation_p1,
    build_relaxation_p2,
    export_sdpa,
    moments_right,
    parse_sdpa,
    recover,
    solve_small,
)
from tdmm.errors import SingularM22, SizeLimit
from tdmm.sdp import SdpBlockDef, SdpProblem, SdpSolution

GOLDEN_TOY = (
    "1\n"
    "1\n"
    "1\n"
    "1.0000000000000000e+00\n"
    "1 1 1 1 1.0000000000000000e+00\n"
)


def toy_problem():
    F = np.zeros((2, 1, 1))
    F[1] = 1.0
    blocks = [SdpBlockDef("b", 1, False, F)]
    return SdpProblem("P2", 1, np.array([1.0]), blocks, [], None, None, None,
                      None, False)


def cart_structure(cart):
    data = build_interpolation([0.0, 0.0])
    C_V = moments_right(cart, data).value
    return data, C_V


def craft_y(problem, targets):
    """Invert unpack() by probing with basis vectors.

    Each variable touches a disjoint set of matrix entries, so projecting
    the target onto the probe images recovers the packed coordinates.
    """
    y = np.zeros(problem.nvars)
    keys = list(targets)
    for i in range(problem.nvars):
        e = np.zeros(problem.nvars)
        e[i] = 1.0
        mats = problem.unpack(e)
        num = sum(float(np.sum(mats[k] * targets[k])) for k in keys)
        den = sum(float(np.sum(mats[k] * mats[k])) for k in keys)
        if den > 0.0:
            y[i] = num / den
    return y


def test_block_layout_cart(cart):
    data, C_V = cart_structure(cart)
    p1 = build_relaxation_p1(cart, data.L, C_V)
    p2 = build_relaxation_p2(cart, data.S, data.L, C_V)
    n, nu, m = cart.n, 2, 1
    assert (n, nu, m) == (6, 2, 1)
    for prob, nvars in ((p1, 34), (p2, 30)):
        assert prob.nvars == nvars
        assert [b.name for b in prob.blocks] == [
            "slack", "schur", "lyapunov", "M11_psd", "M22_psd"]
        assert [b.size for b in prob.blocks] == [nu, m + nu, n + nu, n, nu]
        assert not any(b.linear for b in prob.blocks)
    assert p1.variant == "P1" and p2.variant == "P2"
    names1 = [name for name, _, _ in p1.layout]
    assert "Theta22" in names1
    names2 = [name for name, _, _ in p2.layout]
    assert "Theta22" not in names2


def test_positivity_adds_linear_rows(cart):
    data, C_V = cart_structure(cart)
    nu, m = 2, 1
    prob = build_relaxation(cart, data.L, C_V, S=None, positivity=True)
    tail = prob.blocks[-2:]
    assert [b.name for b in tail] == ["metzler_lin", "gain_lin"]
    assert all(b.linear for b in tail)
    assert [b.size for b in tail] == [nu * (nu - 1), nu * m]
    plain = build_relaxation_p1(cart, data.L, C_V)
    again = add_positivity(plain)
    assert [b.name for b in again.blocks] == [b.name for b in prob.blocks]
    assert prob.nvars == plain.nvars


def test_zero_output_system_is_feasible_at_origin():
    sys = LtiSystem(np.diag([-1.0, -2.0]), [[1.0], [1.0]], [[0.0, 0.0]])
    data = build_interpolation([0.5])
    prob = build_relaxation_p2(sys, data.S, data.L, [[0.0]])
    for b in prob.blocks:
        assert np.linalg.eigvalsh(-b.F[0]).min() >= -1e-12
    sol = solve_small(prob)
    assert 0.0 <= sol.value <= 1e-5


def test_solve_toy_nonnegative_scalar():
    sol = solve_small(toy_problem(), gap_tol=1e-8)
    assert 0.0 <= sol.value <= 1e-6
    assert sol.block_min_eigs[0] >= -1e-10


def test_solve_trace_bound():
    # min tr X subject to X >= I in two dimensions; optimum 2 at X = I
    F = np.zeros((4, 2, 2))
    F[0] = np.eye(2)
    F[1][0, 0] = 1.0
    F[2][0, 1] = F[2][1, 0] = 1.0
    F[3][1, 1] = 1.0
    prob = SdpProblem("P2", 3, np.array([1.0, 0.0, 1.0]),
                      [SdpBlockDef("b", 2, False, F)], [], None, None, None,
                      None, False)
    sol = solve_small(prob, gap_tol=1e-8)
    assert abs(sol.value - 2.0) <= 1e-5
    X = np.array([[sol.y[0], sol.y[1]], [sol.y[1], sol.y[2]]])
    assert np.linalg.eigvalsh(X - np.eye(2)).min() >= -1e-7


def test_recover_reads_off_gain(cart):
    data, C_V = cart_structure(cart)
    prob = build_relaxation_p2(cart, data.S, data.L, C_V)
    y = craft_y(prob, {"M22": np.eye(2), "Z22": np.array([[1.0], [2.0]])})
    sol = SdpSolution(y=y, value=0.0, gap_estimate=0.0, mu_final=0.0,
                      newton_iters=0, block_min_eigs=[])
    rec = recover(prob, sol)
    assert np.allclose(rec.G, [[1.0], [2.0]])
    assert np.allclose(rec.S, data.S)
    assert np.allclose(rec.F, data.S - rec.G @ data.L)
    assert np.allclose(rec.H, C_V)
    assert rec.stable


def test_recover_scales_out_m22(cart):
    data, C_V = cart_structure(cart)
    prob = build_relaxation_p1(cart, data.L, C_V)
    S_bar = np.array([[-1.0, 0.3], [0.0, -2.0]])
    G_bar = np.array([[0.5], [0.25]])
    y = craft_y(prob, {"M22": 2.0 * np.eye(2), "Theta22": 2.0 * S_bar,
                       "Z22": 2.0 * G_bar})
    sol = SdpSolution(y=y, value=0.0, gap_estimate=0.0, mu_final=0.0,
                      newton_iters=0, block_min_eigs=[])
    rec = recover(prob, sol)
    assert np.allclose(rec.S, S_bar)
    assert np.allclose(rec.G, G_bar)
    assert np.allclose(rec.F, S_bar - G_bar @ data.L)


def test_recover_singular_m22(cart):
    data, C_V = cart_structure(cart)
    prob = build_relaxation_p2(cart, data.S, data.L, C_V)
    sol = SdpSolution(y=np.zeros(prob.nvars), value=0.0, gap_estimate=0.0,
                      mu_final=0.0, newton_iters=0, block_min_eigs=[])
    with pytest.raises(SingularM22):
        recover(prob, sol)


def test_positive_network_relaxation_is_tight():
    sys = LtiSystem([[-2.0, 1.0], [1.0, -2.0]], [[1.0], [1.0]], [[1.0, 1.0]])
    data = build_interpolation([-0.5])
    mom = moments_right(sys, data).value
    assert np.allclose(mom, [[4.0]])
    prob = build_relaxation(sys, data.L, mom, S=data.S, positivity=True)
    sol = solve_small(prob, gap_tol=1e-7)
    # infimum equals the output energy of the full system, trace(B^T M B) = 2
    assert np.isclose(sol.value, 2.0000010, rtol=1e-6, atol=0.0)
    assert abs(sol.value - 2.0) <= 1e-4 * 3.0


def test_metzler_instance_recovers_positive_model():
    from tdmm.moments import InterpolationData

    sys = metzler_system(20, 3)
    S0 = np.diag(np.random.default_rng(1020).uniform(-2.0, -1.0, 1))
    L = np.ones((1, 1))
    data_mom = moments_right(sys, InterpolationData(S0, L)).value
    prob = build_relaxation(sys, L, data_mom, S=None, positivity=True)
    sol = solve_small(prob, gap_tol=1e-7)
    assert np.isclose(sol.value, 0.1040111740, rtol=1e-6, atol=0.0)
    rec = recover(prob, sol)
    assert rec.stable
    assert abs(sol.value - rec.f_recovered) <= 1e-4 * (1.0 + rec.f_recovered)
    off = rec.F - np.diag(np.diag(rec.F))
    assert off.min() >= -1e-8
    assert rec.G.min() >= -1e-8


def test_export_golden_bytes():
    assert export_sdpa(toy_problem()) == GOLDEN_TOY


def test_export_parse_round_trip(cart):
    data, C_V = cart_structure(cart)
    prob = build_relaxation_p2(cart, data.S, data.L, C_V)
    text = export_sdpa(prob)
    assert text == export_sdpa(prob)
    ds = parse_sdpa(text)
    assert ds.nvars == prob.nvars
    assert ds.sizes == [b.size for b in prob.blocks]
    assert np.array_equal(ds.c, prob.c)
    for i in range(prob.nvars + 1):
        for k, b in enumerate(prob.blocks):
            assert np.array_equal(ds.mats[i][k], b.F[i]), (i, k)


def test_export_marks_linear_blocks_negative(cart):
    data, C_V = cart_structure(cart)
    prob = build_relaxation(cart, data.L, C_V, S=data.S, positivity=True)
    sizes = export_sdpa(prob).splitlines()[2].split()
    assert sizes[-2:] == ["-2", "-2"]
    ds = parse_sdpa(export_sdpa(prob))
    assert ds.sizes[-2:] == [-2, -2]


def test_solver_size_limit():
    F = np.zeros((502, 1, 1))
    F[1] = 1.0
    prob = SdpProblem("P2", 501, np.zeros(501),
                      [SdpBlockDef("b", 1, False, F)], [], None, None, None,
                      None, False)
    with pytest.raises(SizeLimit):
        solve_small(prob)
