import numpy as np

from contacthj.optimize import CONVERGED, DIVERGED, MAX_ITER, bfgs_batch


def rosenbrock(X, idx):
    a, b = X[:, 0], X[:, 1]
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.stack([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)], axis=1)
    return f, g


def test_rosenbrock_batch():
    x0 = np.array([[-1.2, 1.0], [0.0, 0.0], [2.0, 3.0]])
    res = bfgs_batch(rosenbrock, x0, np.eye(2), grad_tol=1e-8, max_iter=500)
    assert np.all(res.status == CONVERGED)
    np.testing.assert_allclose(res.x, 1.0, atol=1e-6)


def test_quadratic_per_problem_hessians():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(5, 4, 4))
    A = A @ A.transpose(0, 2, 1) + 4 * np.eye(4)
    c = rng.normal(size=(5, 4))

    def fun(X, idx):
        r = X - c[idx]
        Ar = np.einsum("bij,bj->bi", A[idx], r)
        return 0.5 * np.sum(r * Ar, axis=1), Ar

    res = bfgs_batch(fun, np.zeros((5, 4)), np.eye(4), grad_tol=1e-10)
    assert res.converged.all()
    np.testing.assert_allclose(res.x, c, atol=1e-8)


def test_infeasible_start_and_iteration_cap():
    def fun(X, idx):
        f = np.where(X[:, 0] > 5, np.inf, np.sum(X * X, axis=1))
        return f, 2 * X

    res = bfgs_batch(fun, np.array([[6.0], [1.0]]), np.eye(1), max_iter=50)
    assert res.status[0] == DIVERGED and res.status[1] == CONVERGED
    res = bfgs_batch(rosenbrock, np.array([[-1.2, 1.0]]), np.eye(2), max_iter=2)
    assert res.status[0] == MAX_ITER and res.iterations[0] == 2
