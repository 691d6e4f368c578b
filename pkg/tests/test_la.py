import numpy as np
import pytest
import scipy.sparse as sp

from chnsfem.la import (
    FactorizationError,
    NewtonSettings,
    NonconvergenceError,
    lu_solve,
    newton,
)


def test_identity_solve():
    b = np.array([1.0, -2.0, 3.0, 0.5, 7.0])
    x = lu_solve(sp.identity(5, format="csc"), b)
    assert np.array_equal(x, b)


def test_hand_inverted_2x2():
    A = sp.csc_matrix(np.array([[2.0, 1.0], [1.0, 3.0]]))
    x = lu_solve(A, np.array([3.0, 4.0]))
    assert np.abs(x - 1.0).max() <= 1e-14


def test_singular_matrix_raises():
    A = sp.csc_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(FactorizationError):
        lu_solve(A, np.array([1.0, 2.0]))


@pytest.mark.parametrize("n", [100, 2000, 20000])
def test_residual_bound_on_random_well_conditioned_systems(n):
    # banded random pattern (grid-operator-like bandwidth keeps fill-in sane)
    rng = np.random.default_rng(n)
    band = max(2, int(np.sqrt(n)))
    offsets = [0, 1, -1, band, -band]
    diags = [10.0 + rng.random(n)] + [rng.standard_normal(n - abs(k))
                                      for k in offsets[1:]]
    A = sp.diags(diags, offsets, format="csc")
    x_ref = rng.standard_normal(n)
    b = A @ x_ref
    x = lu_solve(A, b)
    assert np.linalg.norm(A @ x - b) / max(1.0, np.linalg.norm(b)) <= 1e-10


def test_newton_square_root():
    def r(x):
        return x**2 - 4.0

    def J(x):
        return sp.csc_matrix([[2.0 * x[0]]])

    res = newton(r, J, np.array([3.0]), NewtonSettings(tol=1e-12, max_iter=20))
    assert abs(res.x[0] - 2.0) <= 1e-12
    assert res.iterations <= 8


def test_newton_linear_system_one_iteration():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((6, 6)) + 6 * np.eye(6)
    b = rng.standard_normal(6)

    res = newton(lambda x: A @ x - b, lambda x: sp.csc_matrix(A),
                 np.zeros(6), NewtonSettings(tol=1e-12, max_iter=5))
    assert res.iterations == 1
    assert np.linalg.norm(A @ res.x - b) <= 1e-12


def test_newton_degenerate_root_nonconvergence():
    def r(x):
        return x**2

    def J(x):
        return sp.csc_matrix([[2.0 * x[0]]])

    with pytest.raises(NonconvergenceError) as info:
        newton(r, J, np.array([1.0]), NewtonSettings(tol=1e-12, max_iter=5))
    assert info.value.residual_norm > 0


def test_damping_rescues_overshooting_iteration():
    # undamped Newton on arctan diverges from x0 = 3
    def r(x):
        return np.arctan(x)

    def J(x):
        return sp.csc_matrix([[1.0 / (1.0 + x[0] ** 2)]])

    res = newton(r, J, np.array([3.0]), NewtonSettings(tol=1e-12, max_iter=30))
    assert abs(res.x[0]) <= 1e-12


def test_retryable_error_shortens_step():
    class OutOfDomain(RuntimeError):
        pass

    def r(x):
        if x[0] <= 0:
            raise OutOfDomain("negative argument")
        return np.log(x)

    def J(x):
        return sp.csc_matrix([[1.0 / x[0]]])

    # the full step from 3.0 lands at 3*(1 - log 3) < 0
    res = newton(r, J, np.array([3.0]), NewtonSettings(tol=1e-12, max_iter=30),
                 retryable=(OutOfDomain,))
    assert abs(res.x[0] - 1.0) <= 1e-12


def test_row_scaling_leaves_solution_unchanged():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((4, 4)) + 5 * np.eye(4)
    b = rng.standard_normal(4)
    scale = np.array([1.0, 10.0, 0.1, 100.0])

    def make(d):
        return (lambda x: d * (A @ x + np.tanh(x) - b),
                lambda x: sp.csc_matrix(d[:, None] * (A + np.diag(1 / np.cosh(x) ** 2))))

    settings = NewtonSettings(tol=1e-13, max_iter=40)
    plain = newton(*make(np.ones(4)), np.zeros(4), settings)
    scaled = newton(*make(scale), np.zeros(4), settings)
    assert np.abs(plain.x - scaled.x).max() <= 1e-11


def test_settings_validation():
    with pytest.raises(ValueError):
        NewtonSettings(tol=0.0)
    with pytest.raises(ValueError):
        NewtonSettings(max_iter=0)
