"""SE(2) pose-graph optimization over odometry and SGF loop factors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularSystem
from .geometry import Se2, compose_arrays, relative_arrays, wrap_angle


@dataclass
class PoseNode:
    index: int
    estimate: Se2
    timestamp: float = 0.0


@dataclass
class Edge:
    """Relative-pose factor ``z`` between nodes i and j with information matrix."""

    i: int
    j: int
    z: Se2
    information: np.ndarray = field(default_factory=lambda: np.eye(3))
    robust: bool = False


def OdometryEdge(t: int, z: Se2, information=None) -> Edge:
    return Edge(t, t + 1, z, np.eye(3) if information is None else np.asarray(information, float))


@dataclass
class OptimizerOptions:
    max_iter: int = 100
    rel_tol: float = 1e-9
    abs_tol: float = 1e-20
    lambda0: float = 1e-4
    huber_delta: Optional[float] = 1.0
    fixed: tuple = (0,)
    dense_below: int = 200


@dataclass
class GraphSolution:
    poses: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    cost_history: list[float] = field(default_factory=list)

    def as_se2(self) -> list[Se2]:
        return [Se2.from_array(p) for p in self.poses]


_S = np.array([[0.0, -1.0], [1.0, 0.0]])


def _rot_t(a: np.ndarray) -> np.ndarray:
    """Stack of R(-a) for an array of angles, shape (m, 2, 2)."""
    c, s = np.cos(a), np.sin(a)
    return np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2)


def linearize(xa: np.ndarray, xb: np.ndarray, z: np.ndarray):
    """Residuals and Jacobians for (m, 3) arrays of poses and measurements.

    The residual is the (translation, wrapped angle) of z^-1 (xa^-1 xb).
    """
    ra = _rot_t(xa[:, 2])
    rz = _rot_t(z[:, 2])
    rza = rz @ ra
    dt = xb[:, :2] - xa[:, :2]
    local = np.einsum("mij,mj->mi", ra, dt)
    r = np.empty_like(z)
    r[:, :2] = np.einsum("mij,mj->mi", rz, local - z[:, :2])
    r[:, 2] = wrap_angle(xb[:, 2] - xa[:, 2] - z[:, 2])

    m = len(z)
    ja = np.zeros((m, 3, 3))
    jb = np.zeros((m, 3, 3))
    ja[:, :2, :2] = -rza
    jb[:, :2, :2] = rza
    ja[:, :2, 2] = -np.einsum("mij,jk,mk->mi", rza, _S, dt)
    ja[:, 2, 2] = -1.0
    jb[:, 2, 2] = 1.0
    return r, ja, jb


def residual(edge, x_a: Se2, x_b: Se2) -> np.ndarray:
    z = edge.z if isinstance(edge, Edge) else edge
    r, _, _ = linearize(x_a.as_array()[None], x_b.as_array()[None], z.as_array()[None])
    return r[0]


def residual_jacobians(z: Se2, x_a: Se2, x_b: Se2):
    r, ja, jb = linearize(x_a.as_array()[None], x_b.as_array()[None], z.as_array()[None])
    return r[0], ja[0], jb[0]


def chain_integrate(odometry: Sequence, start: Se2 = Se2()) -> np.ndarray:
    """Compose relative poses from ``start``; returns (n + 1, 3) absolute poses."""
    out = [start.as_array()]
    cur = start
    for z in odometry:
        cur = cur @ (z if isinstance(z, Se2) else Se2.from_array(z))
        out.append(cur.as_array())
    return np.array(out)


class _Problem:
    def __init__(self, n: int, edges: list[Edge], opts: OptimizerOptions):
        self.n = n
        self.opts = opts
        self.I = np.array([e.i for e in edges], dtype=np.int64)
        self.J = np.array([e.j for e in edges], dtype=np.int64)
        self.Z = np.array([e.z.as_array() for e in edges]).reshape(-1, 3)
        info = np.array([e.information for e in edges]).reshape(-1, 3, 3)
        # Whitening: info = L L^T, whitened residual L^T r.
        self.Lt = np.transpose(np.linalg.cholesky(info), (0, 2, 1))
        self.robust = np.array([e.robust for e in edges], dtype=bool)
        free = np.ones(n, dtype=bool)
        free[list(opts.fixed)] = False
        self.col = np.full(n, -1, dtype=np.int64)
        self.col[free] = np.arange(free.sum()) * 3
        self.n_free = int(free.sum()) * 3

    def _weights(self, s: np.ndarray) -> np.ndarray:
        w = np.ones_like(s)
        delta = self.opts.huber_delta
        if delta is not None:
            big = self.robust & (s > delta**2)
            w[big] = delta / np.sqrt(s[big])
        return w

    def cost(self, X: np.ndarray) -> float:
        r, _, _ = linearize(X[self.I], X[self.J], self.Z)
        rw = np.einsum("mij,mj->mi", self.Lt, r)
        s = np.sum(rw**2, axis=1)
        rho = s.copy()
        delta = self.opts.huber_delta
        if delta is not None:
            big = self.robust & (s > delta**2)
            rho[big] = 2 * delta * np.sqrt(s[big]) - delta**2
        return float(np.sum(rho))

    def normal_equations(self, X: np.ndarray):
        r, ja, jb = linearize(X[self.I], X[self.J], self.Z)
        rw = np.einsum("mij,mj->mi", self.Lt, r)
        w = np.sqrt(self._weights(np.sum(rw**2, axis=1)))
        rw *= w[:, None]
        jaw = np.einsum("mij,mjk->mik", self.Lt, ja) * w[:, None, None]
        jbw = np.einsum("mij,mjk->mik", self.Lt, jb) * w[:, None, None]

        m = len(self.Z)
        rows, cols, vals = [], [], []
        base_r = (np.arange(m) * 3)[:, None, None] + np.arange(3)[None, :, None]
        for nodes, jac in ((self.I, jaw), (self.J, jbw)):
            c0 = self.col[nodes]
            ok = c0 >= 0
            rr = np.broadcast_to(base_r, (m, 3, 3))[ok]
            cc = (c0[ok][:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(jac[ok].ravel())
        Jm = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(3 * m, self.n_free),
        )
        H = (Jm.T @ Jm).tocsc()
        g = Jm.T @ rw.ravel()
        return H, g

    def solve(self, H, g, lam: float) -> np.ndarray:
        A = H + lam * sp.identity(H.shape[0], format="csc")
        try:
            if self.n < self.opts.dense_below:
                c = scipy.linalg.cho_factor(A.toarray())
                dx = scipy.linalg.cho_solve(c, -g)
            else:
                dx = spla.spsolve(A, -g)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise SingularSystem(str(exc)) from exc
        if not np.all(np.isfinite(dx)):
            raise SingularSystem("non-finite update")
        return dx

    def step(self, X: np.ndarray, dx: np.ndarray) -> np.ndarray:
        Xn = X.copy()
        free = self.col >= 0
        Xn[free] += dx.reshape(-1, 3)
        Xn[:, 2] = wrap_angle(Xn[:, 2])
        return Xn


def _as_pose_array(nodes) -> np.ndarray:
    if isinstance(nodes, np.ndarray):
        return np.asarray(nodes, float).reshape(-1, 3)
    out = []
    for n in nodes:
        if isinstance(n, PoseNode):
            n = n.estimate
        out.append(n.as_array() if isinstance(n, Se2) else np.asarray(n, float))
    return np.array(out).reshape(-1, 3)


def optimize(nodes, odom_edges: Sequence[Edge], loop_edges: Sequence[Edge] = (),
             opts: Optional[OptimizerOptions] = None) -> GraphSolution:
    """Levenberg-damped Gauss-Newton on the weighted sum of squared residuals.

    Loop edges get a Huber kernel unless ``opts.huber_delta`` is None; the
    nodes in ``opts.fixed`` anchor the gauge.
    """
    opts = opts or OptimizerOptions()
    X = _as_pose_array(nodes)
    if not opts.fixed:
        raise SingularSystem("gauge not fixed: at least one node must be held constant")
    loops = [Edge(e.i, e.j, e.z, e.information, True) for e in loop_edges]
    edges = list(odom_edges) + loops
    if not edges:
        return GraphSolution(X, 0.0, 0.0, 0, True, [0.0])
    prob = _Problem(len(X), edges, opts)
    cost = prob.cost(X)
    initial = cost
    history = [cost]
    lam = opts.lambda0
    it = 0
    converged = cost <= opts.abs_tol
    while not converged and it < opts.max_iter:
        it += 1
        H, g = prob.normal_equations(X)
        while True:
            Xn = prob.step(X, prob.solve(H, g, lam))
            new_cost = prob.cost(Xn)
            if new_cost <= cost:
                break
            lam *= 10
            if lam > 1e12:
                return GraphSolution(X, cost, initial, it, True, history)
        rel = (cost - new_cost) / cost if cost > 0 else 0.0
        X, cost = Xn, new_cost
        history.append(cost)
        lam = max(lam / 10, 1e-12)
        if rel < opts.rel_tol or cost <= opts.abs_tol:
            converged = True
    return GraphSolution(X, cost, initial, it, converged, history)


def odometry_edges(poses: np.ndarray, information=None) -> list[Edge]:
    """Consecutive relative-pose edges from absolute (n, 3) poses."""
    rel = relative_arrays(poses[:-1], poses[1:])
    info = np.eye(3) if information is None else np.asarray(information, float)
    return [Edge(t, t + 1, Se2.from_array(z), info) for t, z in enumerate(rel)]


def transform_poses(T: Se2, poses: np.ndarray) -> np.ndarray:
    return compose_arrays(np.repeat(T.as_array()[None], len(poses), axis=0), poses)
