"""Shared fixtures and independent dense oracles for the test suite.

The matrix-equation oracles here deliberately avoid the package's own
solvers: everything is vectorized through Kronecker products and solved
with a plain dense linear solve, so agreement is a genuine cross-check.
"""

import json

import numpy as np
import pytest

import tdmm
from tdmm import LtiSystem
from tdmm.moments import ReducedModel


def vec(M):
    return np.asarray(M, dtype=float).reshape(-1, order="F")


def unvec(x, shape):
    return np.asarray(x).reshape(shape, order="F")


def kron_sylvester(A, S, RHS):
    """Dense solve of A P - P S = -RHS via (I x A - S^T x I) vec(P) = -vec(RHS)."""
    A, S, RHS = np.atleast_2d(A), np.atleast_2d(S), np.atleast_2d(RHS)
    n, nu = A.shape[0], S.shape[0]
    K = np.kron(np.eye(nu), A) - np.kron(S.T, np.eye(n))
    return unvec(np.linalg.solve(K, -vec(RHS)), (n, nu))


def kron_lyap_ctrl(A, Q):
    """Dense solve of A W + W A^T + Q = 0."""
    A, Q = np.atleast_2d(A), np.atleast_2d(Q)
    n = A.shape[0]
    K = np.kron(np.eye(n), A) + np.kron(A, np.eye(n))
    return unvec(np.linalg.solve(K, -vec(Q)), (n, n))


def kron_lyap_obs(A, Q):
    return kron_lyap_ctrl(np.atleast_2d(A).T, Q)


def random_stable_system(rng, n, m=1, p=1):
    """Gaussian triple with A shifted left of the imaginary axis."""
    A = rng.standard_normal((n, n))
    shift = max(np.linalg.eigvals(A).real.max(), 0.0) + 0.5 + rng.uniform(0.0, 0.5)
    A = A - shift * np.eye(n)
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    return LtiSystem(A, B, C)


def metzler_system(seed, n):
    """Row-sum dominant Metzler A with positive input and output maps."""
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.0, 1.0, (n, n))
    np.fill_diagonal(A, 0.0)
    A -= np.diag(A.sum(axis=1) + rng.uniform(0.5, 1.5, n))
    B = rng.uniform(0.1, 1.0, (n, 1))
    C = rng.uniform(0.1, 1.0, (1, n))
    return LtiSystem(A, B, C)


@pytest.fixture(scope="session")
def cart():
    obj = json.load(open(tdmm.example_system_path()))
    return LtiSystem(obj["A"], obj["B"], obj["C"])


@pytest.fixture()
def row1_model():
    # order-2 member of the family at points {0, 0} with gain [1, 0.5]
    return ReducedModel(np.array([[-1.0, 1.0], [-0.5, 0.0]]),
                        np.array([[1.0], [0.5]]),
                        np.array([[1.0, -1.0]]))


@pytest.fixture(scope="session")
def scalar_sys():
    return LtiSystem([[-1.0]], [[1.0]], [[1.0]])
