"""Moments via Krylov or Sylvester routes and the parametrized model families.

Interpolation data is a pair (S, L): the eigenvalues of S are the
interpolation points and the columns of L the tangent directions.  Repeated
points with higher-order (derivative) matching are encoded by real Jordan
blocks in S with the unit-first tangent pattern.  Everything downstream is
kept real: conjugate point pairs are realified through a recorded change of
basis T, licensed by the fact that the moments only depend on C*Pi and Pi
is unique.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ClusteredPoints,
    DimensionMismatch,
    NotObservable,
    PointOnSpectrum,
    RankDeficient,
)
from .lti import eval_transfer
from .mateq import controllability_rank, observability_rank, solve_sylvester, spectrum


@dataclass
class InterpolationData:
    S: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        self.S = np.atleast_2d(np.asarray(self.S, dtype=float))
        self.L = np.atleast_2d(np.asarray(self.L, dtype=float))
        if self.L.shape[1] != self.S.shape[0]:
            raise DimensionMismatch("L must have one column per state of S")


@dataclass
class DualInterpolationData:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.R.shape[0] != self.Q.shape[0]:
            raise DimensionMismatch("R must have one row per state of Q")


@dataclass
class MomentSet:
    kind: str
    value: np.ndarray
    points: np.ndarray
    multiplicities: list


@dataclass
class ReducedModel:
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    provenance: dict = field(default_factory=dict)


@dataclass
class KrylovBasis:
    V: np.ndarray
    points: list
    directions: list
    multiplicities: list
    T: np.ndarray


def _check_points(sys, points):
    evA = np.linalg.eigvals(sys.A)
    for s in points:
        if np.min(np.abs(evA - s)) < 1e-8 * max(1.0, np.max(np.abs(evA))):
            raise PointOnSpectrum("interpolation point %s lies on sigma(A)" % s)


def _rank_guard(V):
    sv = np.linalg.svd(V, compute_uv=False)
    if sv[-1] < 1e-12 * sv[0]:
        raise RankDeficient("basis singular values span %.3e" % (sv[-1] / sv[0]))
    if sv[0] / sv[-1] > 1e12:
        raise ClusteredPoints("basis condition %.3e exceeds 1e12" % (sv[0] / sv[-1]))


def _resolvent_column(sys, s, ell):
    ell = np.asarray(ell, dtype=complex).reshape(sys.m)
    R = s * np.eye(sys.n) - sys.A
    return np.linalg.solve(R, sys.B @ ell)


def krylov_right(sys, points, directions):
    """Resolvent basis with column j equal to (s_j I - A)^{-1} B l_j.

    Conjugate-closed point lists produce a real basis: each pair (s, s~)
    contributes [Re v, Im v] and the change of basis into the complex
    columns is recorded in T, so V @ T reproduces the complex construction.
    """
    points = list(points)
    directions = [np.asarray(d, dtype=float).reshape(sys.m) for d in directions]
    if len(points) != len(directions):
        raise DimensionMismatch("one direction per point required")
    if len(set(np.round(np.asarray(points, dtype=complex), 12))) != len(points):
        raise ClusteredPoints("points must be distinct; use multiplicities instead")
    _check_points(sys, points)

    nu = len(points)
    cols = []
    T = np.zeros((nu, nu), dtype=complex)
    used = [False] * nu
    for j, s in enumerate(points):
        if used[j]:
            continue
        sc = complex(s)
        if abs(sc.imag) < 1e-14:
            v = _resolvent_column(sys, sc.real, directions[j])
            cols.append(v.real)
            T[len(cols) - 1, j] = 1.0
            used[j] = True
        else:
            k = _find_conjugate(points, directions, j, used)
            jpos, jneg = (j, k) if sc.imag > 0 else (k, j)
            v = _resolvent_column(sys, complex(points[jpos]), directions[j])
            cols.append(v.real)
            cols.append(v.imag)
            # V[:, r:r+2] = [Re v, Im v]; v = Re + i Im, conj(v) = Re - i Im
            r = len(cols) - 2
            T[r, jpos], T[r + 1, jpos] = 1.0, 1.0j
            T[r, jneg], T[r + 1, jneg] = 1.0, -1.0j
            used[j] = used[k] = True
    V = np.column_stack(cols)
    _rank_guard(V)
    return KrylovBasis(V, points, directions, [1] * len(points), T)


def _find_conjugate(points, directions, j, used):
    s = complex(points[j])
    for k in range(len(points)):
        if used[k] or k == j:
            continue
        if abs(complex(points[k]) - s.conjugate()) < 1e-12 * max(1.0, abs(s)):
            if np.allclose(directions[k], directions[j]):
                return k
    raise PointOnSpectrum(
        "complex point %s needs its conjugate with the same direction" % s)


def krylov_right_higher(sys, points, multiplicities, directions):
    """Jordan-structured basis of resolvent powers.

    For a real point s with multiplicity j and tangent l, contributes
    columns (sI-A)^{-1}Bl, (sI-A)^{-2}Bl, ..., (sI-A)^{-j}Bl.  These power
    columns satisfy the interpolation-data Sylvester equation only after the
    alternating column signs recorded in T: Pi = V T with per-block
    T = diag(1, -1, 1, ...).  Conjugate pairs realify as in krylov_right.
    """
    points = list(points)
    multiplicities = [int(j) for j in multiplicities]
    directions = [np.asarray(d, dtype=float).reshape(sys.m) for d in directions]
    if not (len(points) == len(multiplicities) == len(directions)):
        raise DimensionMismatch("points, multiplicities, directions must align")
    if any(j < 1 for j in multiplicities):
        raise DimensionMismatch("multiplicities must be positive")
    _check_points(sys, points)

    cols = []
    sign_diag = []
    used = [False] * len(points)
    for idx, s in enumerate(points):
        if used[idx]:
            continue
        jmult = multiplicities[idx]
        sc = complex(s)
        if sc.imag < 0:
            sc = sc.conjugate()
        R = sc * np.eye(sys.n) - sys.A
        v = _resolvent_column(sys, sc, directions[idx])
        if abs(sc.imag) < 1e-14:
            for k in range(jmult):
                if k > 0:
                    v = np.linalg.solve(R, v)
                cols.append(v.real)
                sign_diag.append((-1.0) ** k)
            used[idx] = True
        else:
            kconj = _find_conjugate(points, directions, idx, used)
            if multiplicities[kconj] != jmult:
                raise DimensionMismatch(
                    "conjugate points must share their multiplicity")
            for k in range(jmult):
                if k > 0:
                    v = np.linalg.solve(R, v)
                cols.append(v.real)
                cols.append(v.imag)
                sign_diag.append((-1.0) ** k)
                sign_diag.append((-1.0) ** k)
            used[idx] = used[kconj] = True
    V = np.column_stack(cols)
    _rank_guard(V)
    T = np.diag(sign_diag).astype(complex)
    return KrylovBasis(V, points, directions, multiplicities, T)


def krylov_left(sys, points, directions):
    """Mirror basis with columns (s_i I - A^T)^{-1} C^T r_i^T."""
    from .lti import LtiSystem

    dual = LtiSystem(sys.A.T, sys.C.T, sys.B.T)
    basis = krylov_right(dual, points, directions)
    return KrylovBasis(basis.V, points, directions, basis.multiplicities, basis.T)


def build_interpolation(points, multiplicities=None, tangents=None, m=1):
    """Real (S, L) from a point list.

    Distinct real points give a diagonal S; conjugate pairs a 2x2 rotation
    block; multiplicities > 1 expand into real Jordan blocks with the
    unit-first tangent pattern.  Default tangents are all ones.
    """
    pts = [complex(s) for s in points]
    if multiplicities is None:
        # repeated entries mean higher-order matching at that point
        uniq = []
        counts = []
        for s in pts:
            for k, u in enumerate(uniq):
                if u == s:
                    counts[k] += 1
                    break
            else:
                uniq.append(s)
                counts.append(1)
        pts, multiplicities = uniq, counts
    if tangents is None:
        tangents = [np.ones(m) for _ in pts]
    blocks = []
    Lcols = []
    used = [False] * len(pts)
    for i, s in enumerate(pts):
        if used[i]:
            continue
        j = multiplicities[i]
        ell = np.asarray(tangents[i], dtype=float).reshape(m)
        if abs(s.imag) < 1e-14:
            blk = s.real * np.eye(j) + np.diag(np.ones(j - 1), 1)
            blocks.append(blk)
            Lcols.append(np.column_stack([ell] + [np.zeros(m)] * (j - 1)))
            used[i] = True
        else:
            k = next(q for q in range(len(pts)) if not used[q] and q != i
                     and abs(pts[q] - s.conjugate()) < 1e-12 * max(1.0, abs(s)))
            if multiplicities[k] != j:
                raise DimensionMismatch("conjugate multiplicities must match")
            a, b = s.real, abs(s.imag)
            rot = np.array([[a, b], [-b, a]])
            blk = np.kron(np.eye(j), rot)
            for q in range(j - 1):
                blk[2 * q: 2 * q + 2, 2 * q + 2: 2 * q + 4] = np.eye(2)
            blocks.append(blk)
            # realified pair carries the tangent on its first column only:
            # A [Re v, Im v] + B [l, 0] = [Re v, Im v] [[a, b], [-b, a]]
            cols = [np.column_stack([ell, np.zeros(m)])]
            cols += [np.zeros((m, 2))] * (j - 1)
            Lcols.append(np.hstack(cols))
            used[i] = used[k] = True
    S = _blkdiag(blocks)
    L = np.hstack(Lcols) if Lcols else np.zeros((m, 0))
    return InterpolationData(S, L)


def _blkdiag(blocks):
    sizes = [b.shape[0] for b in blocks]
    total = sum(sizes)
    out = np.zeros((total, total))
    at = 0
    for b in blocks:
        out[at:at + b.shape[0], at:at + b.shape[0]] = b
        at += b.shape[0]
    return out


def moments_right(sys, data):
    """Moments C*Pi with Pi the unique solution of A Pi + B L = Pi S."""
    if observability_rank(data.L, data.S) < data.S.shape[0]:
        raise NotObservable("(L, S) must be observable")
    Pi = solve_sylvester(sys.A, data.S, sys.B @ data.L)
    value = sys.C @ Pi
    mult = _jordan_multiplicities(data.S)
    return MomentSet("right", value, np.linalg.eigvals(data.S), mult)


def moments_left(sys, data):
    """Dual moments Upsilon*B with Upsilon A + R C = Q Upsilon."""
    if controllability_rank(data.Q, data.R) < data.Q.shape[0]:
        raise NotObservable("(Q, R) must be controllable")
    # transpose to the right-side convention: A^T Y^T + C^T R^T = Y^T Q^T
    Ups = solve_sylvester(sys.A.T, data.Q.T, sys.C.T @ data.R.T).T
    value = Ups @ sys.B
    mult = _jordan_multiplicities(data.Q)
    return MomentSet("left", value, np.linalg.eigvals(data.Q), mult)


def _jordan_multiplicities(S):
    ev = np.linalg.eigvals(S)
    mult = []
    left = list(ev)
    while left:
        s = left.pop(0)
        count = 1 + sum(1 for t in left if abs(t - s) < 1e-9 * max(1.0, abs(s)))
        left = [t for t in left if abs(t - s) >= 1e-9 * max(1.0, abs(s))]
        mult.append(count)
    return mult


def sylvester_pi(sys, data):
    """The coefficient matrix Pi itself, for provenance and refreshes."""
    return solve_sylvester(sys.A, data.S, sys.B @ data.L)


def assemble_family_right(data, G, moments):
    """Member (F, G, H) = (S - GL, G, C*Pi) of the right family."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape != (data.S.shape[0], data.L.shape[0]):
        raise DimensionMismatch("G must be nu x m")
    F = data.S - G @ data.L
    H = np.atleast_2d(np.asarray(moments.value, dtype=float))
    evS = np.linalg.eigvals(data.S)
    evF = np.linalg.eigvals(F)
    disjoint = np.min(np.abs(evS[:, None] - evF[None, :])) > 1e-8
    prov = {
        "S": data.S,
        "L": data.L,
        "points": evS,
        "disjoint": bool(disjoint),
        "stable": bool(np.max(evF.real) < 0),
    }
    return ReducedModel(F, G, H, prov)


def assemble_family_left(data, H, moments):
    """Member (F, G, H) = (Q - RH, Upsilon B, H) of the dual family."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape != (data.R.shape[1], data.Q.shape[0]):
        raise DimensionMismatch("H must be p x nu")
    F = data.Q - data.R @ H
    G = np.atleast_2d(np.asarray(moments.value, dtype=float))
    evQ = np.linalg.eigvals(data.Q)
    evF = np.linalg.eigvals(F)
    prov = {
        "Q": data.Q,
        "R": data.R,
        "points": evQ,
        "disjoint": bool(np.min(np.abs(evQ[:, None] - evF[None, :])) > 1e-8),
        "stable": bool(np.max(evF.real) < 0),
    }
    return ReducedModel(F, G, H, prov)


def _fd_derivative(eval_fn, s, order, step):
    """Central finite-difference derivative of a matrix function of s."""
    if order == 0:
        return eval_fn(s)
    if order == 1:
        return (eval_fn(s + step) - eval_fn(s - step)) / (2.0 * step)
    if order == 2:
        return (eval_fn(s + step) - 2.0 * eval_fn(s) + eval_fn(s - step)) / step ** 2
    lower = lambda t: _fd_derivative(eval_fn, t, order - 2, step)
    return (lower(s + step) - 2.0 * lower(s) + lower(s - step)) / step ** 2


def check_interpolation(sys, model, data, tol=1e-7):
    """Tangential residuals ||(K - Khat)^(k)(s_i) l_i|| for each point.

    Derivative conditions at repeated points are checked by central finite
    differences with step 1e-6 (1 + |s|), keeping the check independent of
    how the model was built.  Returns a dict with per-point residuals, the
    max, and a pass flag.
    """
    from .lti import LtiSystem

    model_sys = LtiSystem(model.F, model.G, model.H)
    ev = np.linalg.eigvals(data.S)
    groups = _group_points(ev)
    entries = []
    worst = 0.0
    for s, jmult in groups:
        ell = _tangent_for_point(data, s)
        step = 1e-6 * (1.0 + abs(s))
        for k in range(jmult):
            Kk = _fd_derivative(lambda t: eval_transfer(sys, t).value, s, k, step)
            Hk = _fd_derivative(lambda t: eval_transfer(model_sys, t).value, s, k, step)
            res = float(np.linalg.norm((Kk - Hk) @ ell))
            entries.append({"point": complex(s), "order": k, "residual": res})
            worst = max(worst, res)
    return {"residuals": entries, "max_residual": worst, "pass": worst <= tol}


def _group_points(ev):
    groups = []
    left = list(ev)
    while left:
        s = left.pop(0)
        count = 1 + sum(1 for t in left if abs(t - s) < 1e-9 * max(1.0, abs(s)))
        left = [t for t in left if abs(t - s) >= 1e-9 * max(1.0, abs(s))]
        if s.imag < -1e-14:
            continue
        groups.append((complex(s), count))
    return groups


def _tangent_for_point(data, s):
    """Tangent direction for the condition (K - Khat)(s_i) L w_i = 0.

    w_i is the eigenvector of S at s_i, so L w_i recovers the tangent both
    for canonical forms (unit-first Jordan, realified pairs) and for a
    general optimized S.
    """
    ev, vec = np.linalg.eig(data.S)
    idx = int(np.argmin(np.abs(ev - s)))
    ell = data.L.astype(complex) @ vec[:, idx]
    norm = np.linalg.norm(ell)
    if norm < 1e-12:
        return data.L[:, 0]
    return np.real_if_close(ell / norm)
