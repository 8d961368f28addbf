"""Convex relaxation of the Gramian trace objective.

The bilinear terms M22*G and M22*S are lifted into new matrix unknowns
Z22 and Theta22, the certificate is restricted to block-diagonal form
blkdiag(M11, M22), and the resulting LMI problem is solved by a log-det
barrier method.  Models are recovered by inverting M22.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    Infeasible,
    InfeasiblePoint,
    NewtonStalled,
    SingularM22,
    SizeLimit,
)
from .mateq import spectrum
from .optimize import DecisionVars, FixedStructure, objective_f


def _ut_indices(k):
    return [(i, j) for i in range(k) for j in range(i, k)]


def _sym_from(vals, k):
    M = np.zeros((k, k))
    for v, (i, j) in zip(vals, _ut_indices(k)):
        M[i, j] = v
        M[j, i] = v
    return M


@dataclass
class SdpBlockDef:
    """One constraint block sum_i y_i F[i] - F[0] >= 0 (PSD, or diagonal)."""

    name: str
    size: int
    linear: bool
    F: np.ndarray


@dataclass
class SdpProblem:
    variant: str
    nvars: int
    c: np.ndarray
    blocks: list
    layout: list
    L: np.ndarray
    C_V: np.ndarray
    S: np.ndarray
    sys: object
    positivity: bool = False

    def unpack(self, y):
        out = {}
        off = 0
        for name, shape, kind in self.layout:
            if kind == "sym":
                k = shape[0]
                cnt = k * (k + 1) // 2
                out[name] = _sym_from(y[off:off + cnt], k)
            else:
                cnt = shape[0] * shape[1]
                out[name] = np.asarray(y[off:off + cnt]).reshape(shape)
            off += cnt
        return out


@dataclass
class SdpSolution:
    y: np.ndarray
    value: float
    gap_estimate: float
    mu_final: float
    newton_iters: int
    block_min_eigs: list


@dataclass
class RecoveredModel:
    F: np.ndarray
    G: np.ndarray
    S: np.ndarray
    H: np.ndarray
    M: np.ndarray
    value: float
    f_recovered: float
    gap: float
    stable: bool


def _layout_for(variant, n, nu, m):
    layout = [
        ("M11", (n, n), "sym"),
        ("M22", (nu, nu), "sym"),
        ("X22", (m, m), "sym"),
        ("Y22", (nu, nu), "sym"),
        ("Z22", (nu, m), "full"),
    ]
    if variant == "P1":
        layout.append(("Theta22", (nu, nu), "full"))
    return layout


def _nvars_of(layout):
    total = 0
    for name, shape, kind in layout:
        if kind == "sym":
            total += shape[0] * (shape[0] + 1) // 2
        else:
            total += shape[0] * shape[1]
    return total


def build_relaxation(sys, L, C_V, S=None, positivity=False):
    """Assemble the LMI data for either problem variant.

    Passing S fixes the interpolation matrix (variant P2, unknown G only);
    omitting it lifts M22*S into Theta22 as well (variant P1).
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    C_V = np.atleast_2d(np.asarray(C_V, dtype=float))
    variant = "P2" if S is not None else "P1"
    if S is not None:
        S = np.atleast_2d(np.asarray(S, dtype=float))
    n, m, nu = sys.n, sys.m, L.shape[1]
    layout = _layout_for(variant, n, nu, m)
    nvars = _nvars_of(layout)
    prob = SdpProblem(variant, nvars, np.zeros(nvars), [], layout,
                      L, C_V, S, sys, positivity)

    A, B, C = sys.A, sys.B, sys.C

    def block_exprs(mats):
        M11, M22 = mats["M11"], mats["M22"]
        X22, Y22, Z22 = mats["X22"], mats["Y22"], mats["Z22"]
        if variant == "P1":
            Th = mats["Theta22"]
            red = Th.T - L.T @ Z22.T + Th - Z22 @ L + C_V.T @ C_V
        else:
            red = S.T @ M22 - L.T @ Z22.T + M22 @ S - Z22 @ L + C_V.T @ C_V
        b1 = Y22 - red
        b2 = np.block([[X22, Z22.T], [Z22, M22]])
        b3 = -np.block([
            [A.T @ M11 + M11 @ A + C.T @ C, -C.T @ C_V],
            [-C_V.T @ C, Y22],
        ])
        exprs = [("slack", b1), ("schur", b2), ("lyapunov", b3),
                 ("M11_psd", M11), ("M22_psd", M22)]
        if positivity:
            if variant == "P1":
                SM = mats["Theta22"] - Z22 @ L
            else:
                SM = M22 @ S - Z22 @ L
            off = np.array([SM[i, j] for i in range(nu) for j in range(nu)
                            if i != j])
            if off.size:
                exprs.append(("metzler_lin", np.diag(off)))
            exprs.append(("gain_lin", np.diag(Z22.reshape(-1))))
        return exprs

    def objective(mats):
        return float(np.trace(B.T @ mats["M11"] @ B) + np.trace(mats["X22"]))

    zero = prob.unpack(np.zeros(nvars))
    base = block_exprs(zero)
    basis = []
    for k, (name, expr) in enumerate(base):
        F = np.zeros((nvars + 1, expr.shape[0], expr.shape[0]))
        F[0] = -expr
        basis.append(F)
    for i in range(nvars):
        e = np.zeros(nvars)
        e[i] = 1.0
        mats = prob.unpack(e)
        for k, (name, expr) in enumerate(block_exprs(mats)):
            basis[k][i + 1] = expr - base[k][1]
        prob.c[i] = objective(mats)
    for k, (name, expr) in enumerate(base):
        linear = name.endswith("_lin")
        prob.blocks.append(SdpBlockDef(name, expr.shape[0], linear, basis[k]))
    return prob


def build_relaxation_p1(sys, L, C_V):
    """Relaxation with both S and G lifted through M22."""
    return build_relaxation(sys, L, C_V, S=None)


def build_relaxation_p2(sys, S, L, C_V):
    """Relaxation with S fixed by the interpolation data."""
    return build_relaxation(sys, L, C_V, S=S)


def add_positivity(problem):
    """Return a copy of the problem with elementwise sign constraints.

    The linear blocks pin Z22 >= 0 and the off-diagonal part of
    M22 (S - G L) >= 0, which keeps the recovered model internally
    positive whenever M22 comes out diagonal.
    """
    return build_relaxation(problem.sys, problem.L, problem.C_V,
                            S=problem.S, positivity=True)


def _block_eval(block, y):
    return np.tensordot(y, block.F[1:], axes=(0, 0)) - block.F[0]


def _all_pd(blocks, y):
    for b in blocks:
        try:
            np.linalg.cholesky(_block_eval(b, y))
        except np.linalg.LinAlgError:
            return False
    return True


def _barrier_value(blocks, c, y, mu):
    val = float(c @ y)
    for b in blocks:
        sign, logdet = np.linalg.slogdet(_block_eval(b, y))
        if sign <= 0:
            return np.inf
        val -= mu * logdet
    return val


def _newton_center(blocks, c, y, mu, max_newton, stop_when=None):
    """Damped Newton to the mu-center; returns (y, iterations used)."""
    nvars = len(c)
    for it in range(max_newton):
        if stop_when is not None and stop_when(y):
            return y, it
        g = c.copy()
        H = np.zeros((nvars, nvars))
        for b in blocks:
            Bm = _block_eval(b, y)
            Binv = np.linalg.inv(Bm)
            P = np.einsum("ab,ibc->iac", Binv, b.F[1:])
            g -= mu * np.trace(P, axis1=1, axis2=2)
            H += mu * np.einsum("iab,jba->ij", P, P)
        reg = 1e-12 * (1.0 + float(np.trace(H)) / nvars)
        d = None
        for _ in range(8):
            try:
                d = np.linalg.solve(H + reg * np.eye(nvars), -g)
                break
            except np.linalg.LinAlgError:
                reg *= 1e3
        if d is None or not np.all(np.isfinite(d)):
            raise NewtonStalled("singular Newton system at mu=%.3e" % mu)
        dec = float(-g @ d)
        if dec <= 2e-10 * (1.0 + abs(float(c @ y))):
            return y, it
        phi0 = _barrier_value(blocks, c, y, mu)
        # damped step 1/(1+lambda) keeps the iterate inside the cone even
        # along near-flat barrier directions where |d| blows up
        lam = math.sqrt(max(dec, 0.0) / mu)
        t = 1.0 if lam < 0.25 else 1.0 / (1.0 + lam)
        while t > 1e-14:
            yt = y + t * d
            if _all_pd(blocks, yt):
                if _barrier_value(blocks, c, yt, mu) <= phi0 - 1e-4 * t * dec:
                    break
            t *= 0.5
        else:
            exc = NewtonStalled("line search underflow at mu=%.3e" % mu)
            exc.y = y
            raise exc
        y = y + t * d
    return y, max_newton


def solve_small(problem, gap_tol=1e-7, feas_tol=1e-8, max_newton=200,
                mu_shrink=0.5):
    """Interior-point solve for modest problem sizes.

    Phase one drives a uniform eigenvalue shift negative to find a strictly
    feasible point; phase two follows the central path, shrinking mu until
    the barrier gap estimate mu * (total block size) drops below gap_tol.
    """
    if problem.nvars > 500:
        raise SizeLimit("%d variables exceed the dense solver limit"
                        % problem.nvars)
    blocks = problem.blocks
    c = problem.c
    nvars = problem.nvars
    total = sum(b.size for b in blocks)
    newton_used = 0

    y = np.zeros(nvars)
    worst = 0.0
    for b in blocks:
        lam = np.linalg.eigvalsh(_block_eval(b, y))
        worst = max(worst, -float(lam[0]))
    shift = worst + 1.0
    aug_blocks = []
    for b in blocks:
        F = np.zeros((nvars + 2, b.size, b.size))
        F[:nvars + 1] = b.F
        F[nvars + 1] = np.eye(b.size)
        aug_blocks.append(SdpBlockDef(b.name, b.size, b.linear, F))
    c_aug = np.zeros(nvars + 1)
    c_aug[-1] = 1.0
    ya = np.concatenate([y, [shift]])
    mu = max(1.0, shift) / total
    margin = 1e-6 * max(1.0, shift)
    feasible_now = lambda v: v[-1] < -margin
    while not feasible_now(ya):
        ya, used = _newton_center(aug_blocks, c_aug, ya, mu, max_newton,
                                  stop_when=feasible_now)
        newton_used += used
        if feasible_now(ya):
            break
        if mu * total < 1e-9:
            raise Infeasible("phase one stalled with shift %.3e" % ya[-1])
        mu *= mu_shrink
    y = ya[:nvars]

    mu = max(1.0, abs(float(c @ y))) / total
    while True:
        try:
            y, used = _newton_center(blocks, c, y, mu, max_newton)
        except NewtonStalled as exc:
            # deep stalls near the target barrier weight are reported with
            # the honest coarser gap instead of discarding the whole run
            if mu * total <= 100.0 * gap_tol and hasattr(exc, "y"):
                y = exc.y
                gap = mu * total
                break
            raise
        newton_used += used
        gap = mu * total
        if gap <= gap_tol:
            break
        mu *= mu_shrink
    min_eigs = [float(np.linalg.eigvalsh(_block_eval(b, y))[0])
                for b in blocks]
    if min(min_eigs) < -feas_tol:
        raise Infeasible("returned point violates feasibility by %.3e"
                         % -min(min_eigs))
    return SdpSolution(y, float(c @ y), gap, mu, newton_used, min_eigs)


def recover(problem, solution):
    """Invert M22 on the lifted unknowns and score the recovered model."""
    mats = problem.unpack(solution.y)
    M22 = mats["M22"]
    lam = np.linalg.eigvalsh(M22)
    if lam[0] < 1e-10 * max(1e-300, float(np.linalg.norm(M22))):
        raise SingularM22("M22 minimum eigenvalue %.3e" % lam[0])
    G = np.linalg.solve(M22, mats["Z22"])
    S = (np.linalg.solve(M22, mats["Theta22"]) if problem.variant == "P1"
         else problem.S)
    F = S - G @ problem.L
    H = problem.C_V
    n = problem.sys.n
    Mfull = np.block([
        [mats["M11"], np.zeros((n, M22.shape[0]))],
        [np.zeros((M22.shape[0], n)), M22],
    ])
    stable = spectrum(F).spectral_abscissa < 0.0
    if stable:
        fs = FixedStructure(problem.L, problem.C_V, problem.sys)
        f_rec = objective_f(DecisionVars("P2", G=G, S=S), fs)
        gap = abs(solution.value - f_rec)
    else:
        f_rec = float("nan")
        gap = float("inf")
    return RecoveredModel(F, G, S, H, Mfull, solution.value, f_rec, gap,
                          bool(stable))


def export_sdpa(problem):
    """Serialize to sparse SDPA text with deterministic bytes.

    Four header lines (variable count, block count, block sizes with
    diagonal blocks negated, objective vector) followed by one line per
    upper-triangular nonzero: matrix number (0 for the constant part),
    block number, row, column, value, all 1-indexed.
    """
    lines = []
    lines.append("%d" % problem.nvars)
    lines.append("%d" % len(problem.blocks))
    sizes = " ".join("%d" % (-b.size if b.linear else b.size)
                     for b in problem.blocks)
    lines.append(sizes)
    lines.append(" ".join("%.16e" % v for v in problem.c))
    for mat_no in range(problem.nvars + 1):
        for blk_no, b in enumerate(problem.blocks, start=1):
            Fm = b.F[mat_no]
            for i in range(b.size):
                for j in range(i, b.size):
                    v = Fm[i, j]
                    if v != 0.0:
                        lines.append("%d %d %d %d %.16e"
                                     % (mat_no, blk_no, i + 1, j + 1, v))
    return "\n".join(lines) + "\n"


@dataclass
class SdpDataset:
    nvars: int
    sizes: list
    c: np.ndarray
    mats: list = field(default_factory=list)


def parse_sdpa(text):
    """Read the subset of sparse SDPA emitted by export_sdpa."""
    rows = [ln for ln in text.splitlines()
            if ln.strip() and not ln.lstrip().startswith(("*", '"'))]
    nvars = int(rows[0].split()[0])
    nblocks = int(rows[1].split()[0])
    sizes = [int(tok) for tok in rows[2].split()[:nblocks]]
    c = np.array([float(tok) for tok in rows[3].split()[:nvars]])
    mats = [[np.zeros((abs(s), abs(s))) for s in sizes]
            for _ in range(nvars + 1)]
    for ln in rows[4:]:
        toks = ln.split()
        mat_no, blk, i, j = (int(toks[0]), int(toks[1]),
                             int(toks[2]) - 1, int(toks[3]) - 1)
        v = float(toks[4])
        mats[mat_no][blk - 1][i, j] = v
        mats[mat_no][blk - 1][j, i] = v
    return SdpDataset(nvars, sizes, c, mats)
