import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgfloc.errors import SingularSystem
from sgfloc.geometry import Se2, wrap_angle
from sgfloc.pose_graph import (
    Edge,
    OdometryEdge,
    OptimizerOptions,
    PoseNode,
    chain_integrate,
    linearize,
    odometry_edges,
    optimize,
    residual,
    residual_jacobians,
    transform_poses,
)

PLAIN = OptimizerOptions(huber_delta=None)


def mat(p) -> np.ndarray:
    x, y, a = p
    return np.array([[np.cos(a), -np.sin(a), x], [np.sin(a), np.cos(a), y], [0, 0, 1.0]])


def matrix_residual(z, xa, xb) -> np.ndarray:
    """Oracle: log map of Z^-1 A^-1 B built from 3x3 matrices."""
    m = np.linalg.inv(mat(z)) @ np.linalg.inv(mat(xa)) @ mat(xb)
    return np.array([m[0, 2], m[1, 2], np.arctan2(m[1, 0], m[0, 0])])


def random_poses(rng, n, spread=5.0):
    return np.column_stack([rng.uniform(-spread, spread, (n, 2)), rng.uniform(-np.pi, np.pi, n)])


# Residuals -------------------------------------------------------------------

def test_residual_zero_when_consistent():
    a, z = Se2(1.0, 2.0, 0.5), Se2(0.3, -0.1, 0.2)
    assert np.allclose(residual(Edge(0, 1, z), a, a @ z), 0.0, atol=1e-12)


def test_residual_sign_convention():
    assert np.allclose(residual(Edge(0, 1, Se2(1.0, 0.0, 0.0)), Se2(), Se2()), [-1.0, 0.0, 0.0])


def test_residual_matches_matrix_oracle():
    rng = np.random.default_rng(0)
    xa, xb, z = random_poses(rng, 500), random_poses(rng, 500), random_poses(rng, 500, 2.0)
    r, _, _ = linearize(xa, xb, z)
    want = np.array([matrix_residual(*row) for row in zip(z, xa, xb)])
    d = r - want
    d[:, 2] = wrap_angle(d[:, 2])
    assert np.abs(d).max() <= 1e-12


def test_residual_yaw_wrapped():
    r = residual(Edge(0, 1, Se2()), Se2(0, 0, 3.0), Se2(0, 0, -3.0))
    assert r[2] == pytest.approx(2 * np.pi - 6.0)


def fd_jacobians(z, xa, xb, h=1e-6):
    ja, jb = np.zeros((3, 3)), np.zeros((3, 3))
    for J, which in ((ja, 0), (jb, 1)):
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            args_p = [xa + e, xb] if which == 0 else [xa, xb + e]
            args_m = [xa - e, xb] if which == 0 else [xa, xb - e]
            rp = linearize(args_p[0][None], args_p[1][None], z[None])[0][0]
            rm = linearize(args_m[0][None], args_m[1][None], z[None])[0][0]
            d = rp - rm
            d[2] = wrap_angle(d[2])
            J[:, k] = d / (2 * h)
    return ja, jb


def jacobian_errors(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    xa, xb, z = random_poses(rng, n), random_poses(rng, n), random_poses(rng, n, 2.0)
    _, JA, JB = linearize(xa, xb, z)
    worst = 0.0
    for k in range(n):
        fa, fb = fd_jacobians(z[k], xa[k], xb[k])
        for an, fd in ((JA[k], fa), (JB[k], fb)):
            worst = max(worst, np.linalg.norm(an - fd) / max(np.linalg.norm(fd), 1.0))
    return worst


def test_jacobians_match_finite_differences():
    assert jacobian_errors(200, seed=1) <= 1e-5


def test_residual_jacobians_wrapper():
    z, a, b = Se2(0.2, 0.1, 0.3), Se2(1, 2, 0.4), Se2(2, 2, 1.0)
    r, ja, jb = residual_jacobians(z, a, b)
    fa, fb = fd_jacobians(z.as_array(), a.as_array(), b.as_array())
    assert np.allclose(ja, fa, atol=1e-6) and np.allclose(jb, fb, atol=1e-6)
    assert np.allclose(r, residual(Edge(0, 1, z), a, b))


# Chain -------------------------------------------------------------------------

def test_chain_identity_stays_at_origin():
    assert np.allclose(chain_integrate([Se2()] * 5), 0.0)


def test_chain_constant_forward_is_straight():
    out = chain_integrate([Se2(1.0, 0.0, 0.0)] * 4)
    assert np.allclose(out, np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)]))


def test_chain_matches_fold_oracle():
    rng = np.random.default_rng(2)
    zs = random_poses(rng, 50, 1.0)
    start = Se2(1.0, -1.0, 0.3)
    got = chain_integrate(zs, start)
    m = mat(start.as_array())
    assert np.allclose(got[0], start.as_array())
    for k, z in enumerate(zs):
        m = m @ mat(z)
        want = np.array([m[0, 2], m[1, 2], np.arctan2(m[1, 0], m[0, 0])])
        d = got[k + 1] - want
        d[2] = wrap_angle(d[2])
        assert np.abs(d).max() <= 1e-12


# Optimization -------------------------------------------------------------------

def noisy_graph(rng, n=30, loops=6, sigma=0.05):
    gt = chain_integrate([Se2(1.0, 0.0, 2 * np.pi / n)] * (n - 1))
    odo = []
    for t in range(n - 1):
        z = Se2.from_array(gt[t]).inverse() @ Se2.from_array(gt[t + 1])
        odo.append(Se2(z.x + rng.normal(0, sigma), z.y + rng.normal(0, sigma), z.yaw + rng.normal(0, sigma / 5)))
    init = chain_integrate(odo)
    odo_edges = [OdometryEdge(t, z) for t, z in enumerate(odo)]
    loop_edges = []
    for _ in range(loops):
        i, j = sorted(rng.choice(n, 2, replace=False))
        z = Se2.from_array(gt[i]).inverse() @ Se2.from_array(gt[j])
        loop_edges.append(Edge(int(i), int(j), z, np.eye(3) * 4))
    return gt, init, odo_edges, loop_edges


def test_perfect_measurements():
    rng = np.random.default_rng(3)
    gt = random_poses(rng, 10)
    edges = odometry_edges(gt)
    loops = [Edge(0, 7, Se2.from_array(gt[0]).inverse() @ Se2.from_array(gt[7]))]
    sol = optimize(gt, edges, loops)
    assert sol.cost <= 1e-20 and sol.iterations <= 2
    assert np.allclose(sol.poses, gt, atol=1e-12)


def test_zero_loops_returns_chain():
    rng = np.random.default_rng(4)
    _, init, odo, _ = noisy_graph(rng)
    sol = optimize(init, odo, [])
    assert np.array_equal(sol.poses, init)
    assert sol.cost == pytest.approx(0.0, abs=1e-20)


def test_gauge_must_be_fixed():
    rng = np.random.default_rng(5)
    _, init, odo, loops = noisy_graph(rng)
    with pytest.raises(SingularSystem):
        optimize(init, odo, loops, OptimizerOptions(fixed=()))


def test_no_edges():
    sol = optimize(np.zeros((1, 3)), [], [])
    assert sol.converged and sol.cost == 0.0


def test_accepts_pose_nodes():
    nodes = [PoseNode(k, Se2(k, 0, 0), 0.1 * k) for k in range(3)]
    sol = optimize(nodes, [OdometryEdge(0, Se2(1, 0, 0)), OdometryEdge(1, Se2(1, 0, 0))])
    assert sol.as_se2()[2] == Se2(2, 0, 0)


def test_three_node_chain_linear_oracle():
    # Collinear chain and loop: yaw stays 0 by symmetry, translation is linear.
    init = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    odo = [OdometryEdge(0, Se2(1.0, 0.0, 0.0)), OdometryEdge(1, Se2(1.0, 0.0, 0.0))]
    loop = [Edge(0, 2, Se2(1.8, 0.0, 0.0))]
    sol = optimize(init, odo, loop, PLAIN)
    A = np.array([[1.0, 0.0], [-1.0, 1.0], [0.0, 1.0]])
    b = np.array([1.0, 1.0, 1.8])
    x = np.linalg.solve(A.T @ A, A.T @ b)
    assert np.allclose(sol.poses[1:, 0], x, atol=1e-6)
    assert np.allclose(sol.poses[:, 1:], 0.0, atol=1e-9)


def dense_oracle(init, edges, fixed=0, iters=50):
    """Independent dense Gauss-Newton with matrix residuals and numeric Jacobians."""
    X = init.copy()
    free = [k for k in range(len(X)) if k != fixed]

    def stacked(X):
        out = []
        for e in edges:
            r = matrix_residual(e.z.as_array(), X[e.i], X[e.j])
            L = np.linalg.cholesky(e.information)
            out.append(L.T @ r)
        return np.concatenate(out)

    for _ in range(iters):
        r0 = stacked(X)
        J = np.zeros((len(r0), 3 * len(free)))
        for c, (k, d) in enumerate((k, d) for k in free for d in range(3)):
            Xp, Xm = X.copy(), X.copy()
            Xp[k, d] += 1e-7
            Xm[k, d] -= 1e-7
            diff = stacked(Xp) - stacked(Xm)
            diff[2::3] = wrap_angle(diff[2::3])
            J[:, c] = diff / 2e-7
        dx = np.linalg.solve(J.T @ J, -J.T @ r0)
        X[free] += dx.reshape(-1, 3)
        if np.abs(dx).max() < 1e-12:
            break
    return X


def test_small_graph_matches_dense_oracle():
    rng = np.random.default_rng(6)
    _, init, odo, loops = noisy_graph(rng, n=12, loops=4, sigma=0.05)
    sol = optimize(init, odo, loops, PLAIN)
    want = dense_oracle(init, odo + loops)
    d = sol.poses - want
    d[:, 2] = wrap_angle(d[:, 2])
    assert np.abs(d).max() <= 1e-6


def test_sparse_and_dense_solvers_agree():
    rng = np.random.default_rng(7)
    _, init, odo, loops = noisy_graph(rng, n=40, loops=8)
    a = optimize(init, odo, loops, OptimizerOptions(dense_below=10**6))
    b = optimize(init, odo, loops, OptimizerOptions(dense_below=0))
    assert np.allclose(a.poses, b.poses, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cost_monotone(seed):
    rng = np.random.default_rng(seed)
    _, init, odo, loops = noisy_graph(rng, n=25, loops=5, sigma=0.1)
    # One wildly wrong loop exercises the robust kernel and rejected steps.
    loops.append(Edge(0, 12, Se2(5.0, -3.0, 2.0)))
    sol = optimize(init, odo, loops)
    h = np.array(sol.cost_history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])
    assert sol.cost <= sol.initial_cost


def test_optimization_reduces_error():
    rng = np.random.default_rng(8)
    gt, init, odo, loops = noisy_graph(rng, n=60, loops=10, sigma=0.03)
    sol = optimize(init, odo, loops)
    err = lambda X: np.sqrt(np.mean(np.sum((X[:, :2] - gt[:, :2]) ** 2, axis=1)))  # noqa: E731
    assert err(sol.poses) < 0.5 * err(init)


@settings(max_examples=10, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-np.pi, np.pi))
def test_gauge_invariance(tx, ty, yaw):
    rng = np.random.default_rng(9)
    _, init, odo, loops = noisy_graph(rng, n=15, loops=3)
    T = Se2(tx, ty, yaw)
    a = optimize(init, odo, loops, PLAIN)
    b = optimize(transform_poses(T, init), odo, loops, PLAIN)
    d = transform_poses(T, a.poses) - b.poses
    d[:, 2] = wrap_angle(d[:, 2])
    assert np.abs(d).max() <= 1e-8


def test_huber_limits_outlier_influence():
    rng = np.random.default_rng(10)
    gt, init, odo, loops = noisy_graph(rng, n=30, loops=6, sigma=0.0)
    bad = loops + [Edge(3, 20, Se2(4.0, 4.0, 1.5), np.eye(3) * 4)]
    robust = optimize(init, odo, bad)
    plain = optimize(init, odo, bad, PLAIN)
    err = lambda X: np.abs(X[:, :2] - gt[:, :2]).max()  # noqa: E731
    assert err(robust.poses) < err(plain.poses)
