"""Objective, gradients, KKT residuals, and the two iterative solvers.

Problem 1 optimizes X = [S G] jointly; Problem 2 keeps (S, L) fixed and
optimizes G.  The objective is the Gramian trace f = trace(Be^T M Be) of
the error system, i.e. the squared H2 error in 1/(2 pi) units; the reported
norm is sqrt(2 pi f).  All formulas below need exactly two Lyapunov solves
per gradient call.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    Diverged,
    InfeasiblePoint,
    InfeasibleStart,
    LineSearchStalled,
    SpectraOverlap,
)
from .mateq import place_poles, solve_lyapunov_ctrl, solve_lyapunov_obs, spectrum
from .moments import InterpolationData, solve_sylvester


@dataclass
class FixedStructure:
    """Everything held fixed during a run: tangents, selectors, output map."""

    L: np.ndarray
    C_V: np.ndarray
    sys: object

    def __post_init__(self):
        self.L = np.atleast_2d(np.asarray(self.L, dtype=float))
        self.C_V = np.atleast_2d(np.asarray(self.C_V, dtype=float))
        m, nu = self.L.shape
        self.calL = np.vstack([np.eye(nu), -self.L])
        self.calE = np.vstack([np.zeros((nu, m)), np.eye(m)])

    @property
    def nu(self):
        return self.L.shape[1]

    @property
    def m(self):
        return self.L.shape[0]


@dataclass
class DecisionVars:
    variant: str
    X: np.ndarray = None
    G: np.ndarray = None
    S: np.ndarray = None

    def __post_init__(self):
        if self.variant not in ("P1", "P2"):
            raise ValueError("variant must be P1 or P2")
        if self.variant == "P1":
            self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        else:
            self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
            self.S = np.atleast_2d(np.asarray(self.S, dtype=float))

    def unknown(self):
        return self.X if self.variant == "P1" else self.G

    def with_unknown(self, U):
        if self.variant == "P1":
            return DecisionVars("P1", X=U)
        return DecisionVars("P2", G=U, S=self.S)

    def split(self, fs):
        """Current (S, G) regardless of variant."""
        if self.variant == "P1":
            nu = fs.nu
            return self.X[:, :nu], self.X[:, nu:]
        return self.S, self.G

    def closed_loop(self, fs):
        S, G = self.split(fs)
        return S - G @ fs.L


@dataclass
class OptimizerConfig:
    method: str = "pm"
    step: str = "armijo"
    alpha: float = 1e-3
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    armijo_alpha0: float = 1.0
    tol_grad: float = 1e-8
    tol_kkt: float = 1e-6
    max_iters: int = 5000
    mode: str = "refresh_cv"
    restarts: int = 1
    seed: int = 0
    positivity: bool = False


@dataclass
class IterateReport:
    iteration: int
    f: float
    grad_norm: float
    kkt_norm: float
    abscissa: float
    accepted: bool


def is_feasible(vars, fs):
    return spectrum(vars.closed_loop(fs)).spectral_abscissa < 0.0


def _error_blocks(vars, fs):
    sys = fs.sys
    F = vars.closed_loop(fs)
    S, G = vars.split(fs)
    n, nu = sys.n, fs.nu
    Acal = np.block([
        [sys.A, np.zeros((n, nu))],
        [np.zeros((nu, n)), F],
    ])
    Be = np.vstack([sys.B, G])
    Ccal = np.block([
        [sys.C.T @ sys.C, -sys.C.T @ fs.C_V],
        [-fs.C_V.T @ sys.C, fs.C_V.T @ fs.C_V],
    ])
    return Acal, Be, Ccal


def objective_f(vars, fs):
    """f = trace(Be^T M Be) with M the observability Gramian of the error."""
    if not is_feasible(vars, fs):
        raise InfeasiblePoint("sigma(S - GL) is not in the open left half-plane")
    Acal, Be, Ccal = _error_blocks(vars, fs)
    M = solve_lyapunov_obs(Acal, Ccal)
    return float(np.trace(Be.T @ M @ Be))


def _gramian_pair(vars, fs):
    Acal, Be, Ccal = _error_blocks(vars, fs)
    M = solve_lyapunov_obs(Acal, Ccal)
    W = solve_lyapunov_ctrl(Acal, Be @ Be.T)
    return Acal, Be, Ccal, M, W


def gradient_f(vars, fs, with_f=False):
    """Analytic gradient from the two error-system Gramians."""
    if not is_feasible(vars, fs):
        raise InfeasiblePoint("gradient undefined outside the stability domain")
    Acal, Be, Ccal, M, W = _gramian_pair(vars, fs)
    n = fs.sys.n
    M12, M22 = M[:n, n:], M[n:, n:]
    W12, W22 = W[:n, n:], W[n:, n:]
    S, G = vars.split(fs)
    if vars.variant == "P1":
        grad = 2.0 * (M12.T @ W12 @ fs.calL.T + M22 @ W22 @ fs.calL.T
                      + M12.T @ fs.sys.B @ fs.calE.T + M22 @ G @ fs.calE.T)
    else:
        grad = 2.0 * (-M12.T @ W12 @ fs.L.T - M22 @ W22 @ fs.L.T
                      + M12.T @ fs.sys.B + M22 @ G)
    if with_f:
        return grad, float(np.trace(Be.T @ M @ Be))
    return grad


def kkt_residual(W, M, vars, fs):
    """Residual norms (r_M, r_W, r_X) of the three KKT blocks."""
    Acal, Be, Ccal = _error_blocks(vars, fs)
    rM = np.linalg.norm(Acal.T @ M + M @ Acal + Ccal)
    rW = np.linalg.norm(Acal @ W + W @ Acal.T + Be @ Be.T)
    n = fs.sys.n
    M12, M22 = M[:n, n:], M[n:, n:]
    W12, W22 = W[:n, n:], W[n:, n:]
    S, G = vars.split(fs)
    if vars.variant == "P1":
        blockX = (M12.T @ fs.sys.B @ fs.calE.T + M22 @ G @ fs.calE.T
                  + M12.T @ W12 @ fs.calL.T + M22 @ W22 @ fs.calL.T)
    else:
        blockX = (M12.T @ fs.sys.B + M22 @ G
                  - M12.T @ W12 @ fs.L.T - M22 @ W22 @ fs.L.T)
    return float(rM), float(rW), float(np.linalg.norm(blockX))


def exact_kkt_residual(vars, fs):
    """KKT residuals with the multiplier pair taken from exact solves."""
    Acal, Be, Ccal, M, W = _gramian_pair(vars, fs)
    return kkt_residual(W, M, vars, fs)


def refresh_output_map(fs, S):
    """Recompute C_V = C Pi at the current interpolation data (S, L)."""
    Pi = solve_sylvester(fs.sys.A, S, fs.sys.B @ fs.L)
    return replace(fs, C_V=fs.sys.C @ Pi)


def run_pm(vars0, fs, cfg):
    """Gradient descent with Armijo backtracking on the stability domain.

    Trial steps leaving the domain count as Armijo failures.  In refresh_cv
    mode (Problem 1) the run alternates inner descent epochs with a
    Sylvester refresh of C_V at the current S; each epoch is monotone in
    its own objective.
    """
    if not is_feasible(vars0, fs):
        raise InfeasibleStart("initial point has unstable S - GL")
    history = []
    vars_k = vars0
    refresh = cfg.mode == "refresh_cv" and vars0.variant == "P1"
    outer_max = 30 if refresh else 1
    budget = cfg.max_iters
    # one alternation epoch never hogs the whole budget, so the output
    # map refresh actually cycles
    cap = 500 if refresh else cfg.max_iters
    converged = False
    for epoch in range(outer_max):
        if refresh:
            try:
                fs = refresh_output_map(fs, vars_k.split(fs)[0])
            except SpectraOverlap:
                break
        vars_k, hist, used, converged = _pm_epoch(vars_k, fs, cfg,
                                                  min(budget, cap),
                                                  len(history))
        history.extend(hist)
        budget -= used
        if budget <= 0:
            break
        if not refresh:
            break
        Snew = vars_k.split(fs)[0]
        try:
            fs_new = refresh_output_map(fs, Snew)
        except SpectraOverlap:
            break
        drift = np.linalg.norm(fs_new.C_V - fs.C_V)
        if converged and drift <= 1e-10 * (1.0 + np.linalg.norm(fs.C_V)):
            break
    return vars_k, history, fs, converged


def _pm_epoch(vars_k, fs, cfg, budget, offset):
    history = []
    used = 0
    converged = False
    if cfg.positivity:
        vars_k = project_positive(vars_k, fs)
        if not is_feasible(vars_k, fs):
            raise InfeasibleStart("positivity projection of the start "
                                  "leaves the stability domain")
    f_k = objective_f(vars_k, fs)
    prev = None
    for it in range(budget):
        grad = gradient_f(vars_k, fs)
        gnorm = float(np.linalg.norm(grad))
        absc = spectrum(vars_k.closed_loop(fs)).spectral_abscissa
        if gnorm <= cfg.tol_grad * (1.0 + abs(f_k)):
            history.append(IterateReport(offset + it, f_k, gnorm, np.nan,
                                         absc, True))
            converged = True
            used = it + 1
            break
        alpha = cfg.armijo_alpha0 if cfg.step == "armijo" else cfg.alpha
        if cfg.step == "armijo" and prev is not None:
            # spectral trial step; plain unit steps stall once the Armijo
            # decrease drops below the Lyapunov solver's noise floor
            sk = (vars_k.unknown() - prev[0]).ravel()
            yk = (grad - prev[1]).ravel()
            sy = float(sk @ yk)
            if sy > 0:
                alpha = min(max(float(sk @ sk) / sy, 1e-12), 1e6)
        prev = (vars_k.unknown().copy(), grad.copy())
        accepted = False
        while alpha >= 1e-16:
            trial = vars_k.with_unknown(vars_k.unknown() - alpha * grad)
            if cfg.positivity:
                trial = project_positive(trial, fs)
            if is_feasible(trial, fs):
                f_trial = objective_f(trial, fs)
                if f_trial <= f_k - cfg.armijo_c * alpha * gnorm ** 2:
                    vars_k, f_k = trial, f_trial
                    accepted = True
                    break
            if cfg.step != "armijo":
                break
            alpha *= cfg.armijo_shrink
        history.append(IterateReport(offset + it, f_k, gnorm, np.nan,
                                     absc, accepted))
        used = it + 1
        if not accepted:
            exc = LineSearchStalled(
                "no acceptable step above 1e-16 at iteration %d" % (offset + it))
            exc.vars = vars_k
            exc.history = history
            raise exc
    return vars_k, history, used, converged


def run_kkt(vars0, W0, M0, fs, cfg):
    """First-order primal-dual iteration on the KKT system.

    All three blocks are advanced with the same stepsize from the current
    iterate; stability of S - GL along the way is reported, not enforced.
    """
    vars_k = vars0
    W, M = W0.copy(), M0.copy()
    history = []
    alpha = cfg.alpha
    n = fs.sys.n
    r0 = max(kkt_residual(W, M, vars_k, fs))
    converged = False
    for it in range(cfg.max_iters):
        rM, rW, rX = kkt_residual(W, M, vars_k, fs)
        rmax = max(rM, rW, rX)
        absc = spectrum(vars_k.closed_loop(fs)).spectral_abscissa
        f_val = objective_f(vars_k, fs) if absc < 0 else float("nan")
        history.append(IterateReport(it, f_val, np.nan, rmax, absc, True))
        if rmax <= cfg.tol_kkt:
            converged = True
            break
        if r0 > 0 and rmax > 1e8 * max(r0, 1.0):
            raise Diverged("KKT residual %.3e exceeds guard" % rmax)
        Acal, Be, Ccal = _error_blocks(vars_k, fs)
        M12, M22 = M[:n, n:], M[n:, n:]
        W12, W22 = W[:n, n:], W[n:, n:]
        S, G = vars_k.split(fs)
        Wn = W + alpha * (Acal.T @ M + M @ Acal + Ccal)
        Mn = M - alpha * (Acal @ W + W @ Acal.T + Be @ Be.T)
        if vars_k.variant == "P1":
            step = (M12.T @ fs.sys.B @ fs.calE.T + M22 @ G @ fs.calE.T
                    + M12.T @ W12 @ fs.calL.T + M22 @ W22 @ fs.calL.T)
        else:
            step = (M12.T @ fs.sys.B + M22 @ G
                    - M12.T @ W12 @ fs.L.T - M22 @ W22 @ fs.L.T)
        vars_k = vars_k.with_unknown(vars_k.unknown() - alpha * step)
        W, M = Wn, Mn
    return vars_k, history, fs, converged, (W, M)


def project_positive(vars, fs):
    """Clamp G at zero, then raise offdiagonal S so S - GL stays Metzler.

    The S repair applies to both variants; for fixed-S data this trades
    interpolation fidelity for internal positivity of the iterate.
    """
    S, G = vars.split(fs)
    G = np.maximum(G, 0.0)
    S = S.copy()
    GL = G @ fs.L
    nu = S.shape[0]
    off = ~np.eye(nu, dtype=bool)
    S[off] = np.maximum(S[off], GL[off])
    if vars.variant == "P2":
        return DecisionVars("P2", G=G, S=S)
    return DecisionVars("P1", X=np.hstack([S, G]))


def init_pole_placement(data, targets, variant="P1"):
    """Stabilizing start: G0 places sigma(S - GL) at the targets."""
    G0 = place_poles(data.S, data.L, targets)
    if variant == "P1":
        return DecisionVars("P1", X=np.hstack([data.S, G0]))
    return DecisionVars("P2", G=G0, S=data.S)


def init_random_unstable_S(nu, seed):
    """Diagonal S with uniform(0, 1) eigenvalues; disjoint from any stable A."""
    rng = np.random.default_rng(seed)
    return np.diag(rng.uniform(0.0, 1.0, size=nu))


@dataclass
class RunResult:
    vars: object
    fs: object
    history: list = field(default_factory=list)
    converged: bool = False
    f: float = float("inf")
    seed: int = 0
    stalled: bool = False


def _single_run(vars0, fs, cfg):
    """Uniform (vars, history, fs, converged, extras) across both methods."""
    if cfg.method == "kkt":
        Acal, Be, Ccal = _error_blocks(vars0, fs)
        M0 = solve_lyapunov_obs(Acal, Ccal)
        W0 = solve_lyapunov_ctrl(Acal, Be @ Be.T)
        return run_kkt(vars0, W0, M0, fs, cfg)
    vars_f, hist, fs_f, conv = run_pm(vars0, fs, cfg)
    return vars_f, hist, fs_f, conv, None


def multi_start_p1(sys, nu, cfg, targets=None, S_seed=None):
    """Restarted Problem-1 solve; winner has the lowest final objective.

    Each restart draws S0 = diag(uniform(0,1)) under seed+i, places the
    closed-loop poles at stable targets for a feasible start, and runs the
    configured method.  A provided S_seed replaces the draw of restart 0.
    """
    m = sys.m
    targets = targets if targets is not None else [-(k + 1) for k in range(nu)]
    results = []
    for i in range(max(1, cfg.restarts)):
        if i == 0 and S_seed is not None:
            S0 = np.atleast_2d(np.asarray(S_seed, dtype=float))
        else:
            S0 = init_random_unstable_S(nu, cfg.seed + i)
        L = np.ones((m, nu))
        data = InterpolationData(S0, L)
        try:
            fs = FixedStructure(L, sys.C @ solve_sylvester(sys.A, S0, sys.B @ L),
                                sys)
            vars0 = init_pole_placement(data, targets, "P1")
            if cfg.positivity:
                vars0 = project_positive(vars0, fs)
            vars_f, hist, fs_f, conv, _ = _single_run(vars0, fs, cfg)
            stalled = False
        except LineSearchStalled as exc:
            vars_f, hist, fs_f, conv = exc.vars, exc.history, fs, False
            stalled = True
        except (SpectraOverlap, Diverged):
            continue
        try:
            f_final = objective_f(vars_f, fs_f)
        except InfeasiblePoint:
            f_final = float("inf")
        results.append(RunResult(vars_f, fs_f, hist, conv, f_final,
                                 cfg.seed + i, stalled))
    if not results:
        raise InfeasibleStart("every restart failed to produce a run")
    best = min(range(len(results)), key=lambda k: (results[k].f, k))
    return results[best], results
