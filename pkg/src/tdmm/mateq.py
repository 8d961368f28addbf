"""Dense Sylvester/Lyapunov solvers, spectral tests, and pole placement."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.signal

from .errors import (
    NonFinite,
    NonSymmetricInput,
    NotObservable,
    PlacementFailed,
    SpectraOverlap,
    UnstableMatrix,
)

GAP_RTOL = 1e-8
RANK_RTOL = 1e-10


def _check_finite(*mats):
    for M in mats:
        if not np.all(np.isfinite(M)):
            raise NonFinite("matrix contains NaN or Inf")


def _as_matrix(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    _check_finite(M)
    return M


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    spectral_abscissa: float
    is_stable: bool


def spectrum(A, margin=0.0):
    """Eigenvalues, spectral abscissa, and strict-half-plane stability flag."""
    A = _as_matrix(A)
    ev = np.linalg.eigvals(A)
    abscissa = float(np.max(ev.real))
    return SpectrumReport(ev, abscissa, abscissa < -margin)


def _min_gap(evA, evS):
    return np.min(np.abs(evA[:, None] - evS[None, :]))


def solve_sylvester(A, S, RHS):
    """Solve A P - P S = -RHS for P.

    The sign convention makes P the coefficient map of interpolation data:
    with RHS = B L the solution satisfies A P + B L = P S.
    """
    A, S, RHS = _as_matrix(A), _as_matrix(S), _as_matrix(RHS)
    evA = np.linalg.eigvals(A)
    evS = np.linalg.eigvals(S)
    tol = GAP_RTOL * max(np.linalg.norm(A), np.linalg.norm(S), 1e-300)
    if _min_gap(evA, evS) < tol:
        raise SpectraOverlap(
            "eigenvalue gap %.3e below tolerance %.3e" % (_min_gap(evA, evS), tol))
    # scipy solves A X + X B = Q; ours is A P + (-S) P-side, so negate S and RHS
    P = scipy.linalg.solve_sylvester(A, -S, -RHS)
    return P


def solve_lyapunov_ctrl(A, Q, sym_rtol=1e-10):
    """Solve A W + W A^T + Q = 0 with A Hurwitz and Q symmetric."""
    A, Q = _as_matrix(A), _as_matrix(Q)
    if np.linalg.norm(Q - Q.T) > sym_rtol * max(1.0, np.linalg.norm(Q)):
        raise NonSymmetricInput("Q is not symmetric")
    rep = spectrum(A)
    if not rep.is_stable:
        raise UnstableMatrix(
            "spectral abscissa %.3e is not negative" % rep.spectral_abscissa)
    W = scipy.linalg.solve_lyapunov(A, -Q)
    return 0.5 * (W + W.T)


def solve_lyapunov_obs(A, Q, sym_rtol=1e-10):
    """Solve A^T M + M A + Q = 0 with A Hurwitz and Q symmetric."""
    return solve_lyapunov_ctrl(_as_matrix(A).T, Q, sym_rtol)


def observability_rank(L, S):
    """Numerical rank of [L; LS; ...; LS^(nu-1)]."""
    L, S = _as_matrix(L), _as_matrix(S)
    nu = S.shape[0]
    rows = [L]
    for _ in range(nu - 1):
        rows.append(rows[-1] @ S)
    O = np.vstack(rows)
    sv = np.linalg.svd(O, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > RANK_RTOL * sv[0] * max(O.shape)))


def controllability_rank(Q, R):
    """Numerical rank of [R, QR, ..., Q^(nu-1)R]."""
    return observability_rank(_as_matrix(R).T, _as_matrix(Q).T)


def _ackermann(S, L, targets):
    nu = S.shape[0]
    rows = [L]
    for _ in range(nu - 1):
        rows.append(rows[-1] @ S)
    O = np.vstack(rows)
    coeffs = np.real(np.poly(np.asarray(targets, dtype=complex)))
    pS = coeffs[0] * np.linalg.matrix_power(S, nu)
    for k in range(1, nu + 1):
        pS = pS + coeffs[k] * np.linalg.matrix_power(S, nu - k)
    e = np.zeros((nu, 1))
    e[-1, 0] = 1.0
    return pS @ np.linalg.solve(O, e)


def place_poles(S, L, targets, tol=1e-8):
    """Find G with sigma(S - GL) equal to the target multiset.

    Complex targets must come in conjugate pairs so G stays real.  Single
    input uses Ackermann's formula; wider L goes through scipy's
    eigenstructure assignment.
    """
    S, L = _as_matrix(S), _as_matrix(L)
    nu = S.shape[0]
    targets = list(targets)
    if len(targets) != nu:
        raise PlacementFailed("expected %d targets, got %d" % (nu, len(targets)))
    tarr = np.asarray(targets, dtype=complex)
    if not np.allclose(np.sort_complex(tarr), np.sort_complex(tarr.conj())):
        raise PlacementFailed("complex targets must appear in conjugate pairs")
    if observability_rank(L, S) < nu:
        raise NotObservable("(L, S) is not observable")
    if L.shape[0] == 1:
        G = _ackermann(S, L, targets)
    else:
        # duality: placing sigma(S - GL) equals state feedback on (S^T, L^T)
        res = scipy.signal.place_poles(S.T, L.T, np.sort_complex(tarr))
        G = res.gain_matrix.T
    achieved = np.sort_complex(np.linalg.eigvals(S - G @ L))
    wanted = np.sort_complex(tarr)
    scale = max(1.0, float(np.max(np.abs(wanted))))
    if np.max(np.abs(achieved - wanted)) > tol * scale:
        raise PlacementFailed(
            "achieved spectrum %s misses targets %s" % (achieved, wanted))
    return G
