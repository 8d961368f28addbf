"""State-space systems, transfer evaluation, Gramians, and H2 norms.

The squared H2 norm used throughout is the unnormalized frequency integral
of trace(K(-jw)^T K(jw)), which equals 2*pi times the Gramian trace
trace(C W C^T).  Gramian traces themselves (the optimizer objective) stay
in integral-over-2pi units.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    GramianMismatch,
    NonFinite,
    ResolventSingular,
    UnstableMatrix,
)
from .mateq import solve_lyapunov_ctrl, solve_lyapunov_obs, spectrum

TWO_PI = 2.0 * np.pi


@dataclass
class LtiSystem:
    """Dense real triple (A, B, C) with x' = Ax + Bu, y = Cx."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))
                and np.all(np.isfinite(self.C))):
            raise NonFinite("system matrices contain NaN or Inf")
        n = self.A.shape[0]
        if self.A.shape[1] != n:
            raise DimensionMismatch("A must be square")
        if self.B.shape[0] != n:
            raise DimensionMismatch("B row count must match A")
        if self.C.shape[1] != n:
            raise DimensionMismatch("C column count must match A")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]


@dataclass
class TransferSample:
    s: complex
    value: np.ndarray


@dataclass
class ErrorRealization:
    Ae: np.ndarray
    Be: np.ndarray
    Ce: np.ndarray
    split: tuple


@dataclass
class ErrorGramians:
    W: np.ndarray
    M: np.ndarray
    split: tuple

    def _blk(self, X, i, j):
        n = self.split[0]
        sl = (slice(0, n), slice(n, None))
        return X[sl[i], sl[j]]

    @property
    def W11(self):
        return self._blk(self.W, 0, 0)

    @property
    def W12(self):
        return self._blk(self.W, 0, 1)

    @property
    def W22(self):
        return self._blk(self.W, 1, 1)

    @property
    def M11(self):
        return self._blk(self.M, 0, 0)

    @property
    def M12(self):
        return self._blk(self.M, 0, 1)

    @property
    def M22(self):
        return self._blk(self.M, 1, 1)


def eval_transfer(sys, s):
    """K(s) = C (sI - A)^{-1} B by linear solve, never explicit inverse."""
    R = s * np.eye(sys.n) - sys.A
    if np.linalg.cond(R) > 1e14:
        raise ResolventSingular("s = %s is too close to a pole" % s)
    X = np.linalg.solve(R, sys.B.astype(complex))
    return TransferSample(s, sys.C @ X)


def gramians(sys):
    """Controllability and observability Gramians of a stable system."""
    W = solve_lyapunov_ctrl(sys.A, sys.B @ sys.B.T)
    M = solve_lyapunov_obs(sys.A, sys.C.T @ sys.C)
    return W, M


def h2_norm(sys):
    """H2 norm, sqrt of the unnormalized integral: sqrt(2 pi trace(C W C^T)).

    Cross-checks the controllability-side trace against trace(B^T M B) and
    raises GramianMismatch when the two disagree beyond 1e-8 of the squared
    norm.  The floor at 1 keeps zero-transfer systems (where both traces are
    pure rounding noise) from tripping the guard.
    """
    W, M = gramians(sys)
    tc = float(np.trace(sys.C @ W @ sys.C.T))
    to = float(np.trace(sys.B.T @ M @ sys.B))
    val2 = TWO_PI * max(tc, 0.0)
    if abs(tc - to) > 1e-8 * max(val2, 1.0):
        raise GramianMismatch(
            "trace(CWC^T)=%.15e vs trace(B^T M B)=%.15e" % (tc, to))
    # a trace this far below the magnitude of its summands is pure
    # cancellation noise; report an exact zero instead of sqrt(noise)
    floor = 1e-13 * float(np.trace(np.abs(sys.C) @ np.abs(W) @ np.abs(sys.C).T))
    if tc <= floor:
        val2 = 0.0
    return float(np.sqrt(val2))


def h2_norm_quadrature(sys, omega_max=None, samples=4096):
    """Trapezoid estimate of the same unnormalized-integral H2 norm.

    Integrates trace(K(jw) K(jw)^*) on a log grid over (0, omega_max],
    doubles it by symmetry, closes the [0, omega_min] gap with one panel,
    and adds the ||CB||^2/omega tail estimate.  Independent of the Gramian
    path, so it serves as a cross-check oracle.
    """
    if samples < 100:
        raise ValueError("samples must be at least 100")
    rep = spectrum(sys.A)
    if not rep.is_stable:
        raise UnstableMatrix("quadrature needs a stable system")
    if not np.any(sys.B) or not np.any(sys.C):
        return 0.0
    rho = float(np.max(np.abs(rep.eigenvalues)))
    if omega_max is None:
        omega_max = 1e4 * (1.0 + rho)
    omega_min = 1e-4 * max(1.0, rho)
    grid = np.logspace(np.log10(omega_min), np.log10(omega_max), samples)

    def density(w):
        K = sys.C @ np.linalg.solve(1j * w * np.eye(sys.n) - sys.A,
                                    sys.B.astype(complex))
        return float(np.sum(np.abs(K) ** 2))

    vals = np.array([density(w) for w in grid])
    trapezoid = getattr(np, "trapezoid", np.trapz)
    integral = trapezoid(vals, grid)
    integral += 0.5 * (density(0.0) + vals[0]) * omega_min
    tail = float(np.sum(np.abs(sys.C @ sys.B) ** 2)) / omega_max
    return float(np.sqrt(2.0 * (integral + tail)))


def build_error_system(sys, model):
    """Block realization of K - Khat: blkdiag dynamics, stacked input."""
    F = np.asarray(model.F, dtype=float)
    G = np.asarray(model.G, dtype=float)
    H = np.asarray(model.H, dtype=float)
    if F.size == 0:
        F = F.reshape(0, 0)
        G = G.reshape(0, sys.m)
        H = H.reshape(sys.p, 0)
    else:
        F, G, H = np.atleast_2d(F), np.atleast_2d(G), np.atleast_2d(H)
    nu = F.shape[0]
    if G.shape != (nu, sys.m):
        raise DimensionMismatch("model input map must be %d x %d" % (nu, sys.m))
    if H.shape != (sys.p, nu):
        raise DimensionMismatch("model output map must be %d x %d" % (sys.p, nu))
    Ae = np.block([
        [sys.A, np.zeros((sys.n, nu))],
        [np.zeros((nu, sys.n)), F],
    ])
    Be = np.vstack([sys.B, G])
    Ce = np.hstack([sys.C, -H])
    return ErrorRealization(Ae, Be, Ce, (sys.n, nu))


def error_system_as_lti(err):
    return LtiSystem(err.Ae, err.Be, err.Ce)


def error_gramians(err):
    """Block-partitioned Gramians of the error realization."""
    n, nu = err.split
    for name, block in (("A", err.Ae[:n, :n]), ("F", err.Ae[n:, n:])):
        if nu == 0 and name == "F":
            continue
        if not spectrum(block).is_stable:
            raise UnstableMatrix("error-system block %s is unstable" % name)
    W = solve_lyapunov_ctrl(err.Ae, err.Be @ err.Be.T)
    M = solve_lyapunov_obs(err.Ae, err.Ce.T @ err.Ce)
    return ErrorGramians(W, M, err.split)
