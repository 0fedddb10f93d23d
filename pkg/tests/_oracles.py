"""Independent oracles used by the test suite.

Everything here is deliberately written against plain arithmetic rather than
the package's estimators, so that agreement between the two is evidence and
not tautology:

  * central finite differences for gradients and Hessians,
  * a standalone enumerator for binary Bayesian networks defined by logit
    tables (used to compute exact shifted expectations E_delta[loss]),
  * a random generator for such networks,
  * quasi-uniform samplers of the Euclidean ball and a polar ball grid,
  * a dense grid solver for the 2x2 shifted-subpopulation problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# ----------------------------------------------------------------------
# Finite differences


def fd_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f at x."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (np.asarray(f(x + e)).reshape(()) - np.asarray(f(x - e)).reshape(())) / (2.0 * h)
    return g


def fd_jacobian(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of vector-valued f at x."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h)
    return J


def fd_hessian(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian of scalar f at x.

    Diagonal from the 3-point second difference, off-diagonal from the
    4-point cross difference; symmetric by construction.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    H = np.zeros((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h**2)
    return H


# ----------------------------------------------------------------------
# Binary-network enumeration oracle


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


@dataclass
class OracleNode:
    """One binary node: parents (indices into the node list, all earlier)
    and a logit table with one entry per parent configuration.

    Parent configurations are indexed lexicographically with value 0 before
    value 1 and the leftmost parent most significant.
    """

    name: str
    parents: tuple[int, ...]
    logits: np.ndarray  # shape (2 ** len(parents),)


@dataclass
class OracleNet:
    """A binary Bayesian network plus a choice of shifted nodes.

    shifted: list of node indices; each shifted node gets one free shift
    coordinate per parent stratum (a per-stratum additive change to the
    logit), blocks concatenated in node order, strata in table order.
    """

    nodes: list[OracleNode]
    shifted: list[int] = field(default_factory=list)

    @property
    def n_delta(self) -> int:
        return sum(self.nodes[i].logits.size for i in self.shifted)

    def configs(self) -> np.ndarray:
        """All 2^k configurations, one row per config, node order columns."""
        k = len(self.nodes)
        grid = np.indices((2,) * k).reshape(k, -1).T
        return grid.astype(float)

    def _stratum_index(self, node: OracleNode, configs: np.ndarray) -> np.ndarray:
        idx = np.zeros(configs.shape[0], dtype=int)
        for p in node.parents:
            idx = idx * 2 + configs[:, p].astype(int)
        return idx

    def joint_probs(self, delta: np.ndarray | None = None) -> np.ndarray:
        """P_delta(v) for every configuration, by direct multiplication."""
        configs = self.configs()
        probs = np.ones(configs.shape[0])
        offsets = {}
        off = 0
        for i in self.shifted:
            offsets[i] = off
            off += self.nodes[i].logits.size
        for i, node in enumerate(self.nodes):
            strat = self._stratum_index(node, configs)
            logit = node.logits[strat]
            if delta is not None and i in offsets:
                block = np.asarray(delta, dtype=float)[offsets[i] : offsets[i] + node.logits.size]
                logit = logit + block[strat]
            p1 = _sigmoid(logit)
            v = configs[:, i]
            probs *= np.where(v == 1.0, p1, 1.0 - p1)
        return probs

    def expected_loss(self, loss_fn, delta: np.ndarray | None = None) -> float:
        """E_delta[loss] by full enumeration; loss_fn maps configs -> (m,)."""
        configs = self.configs()
        return float(self.joint_probs(delta) @ np.asarray(loss_fn(configs), dtype=float))


def random_oracle_net(
    rng: np.random.Generator,
    n_nodes: int | None = None,
    n_shifted: int | None = None,
    max_parents: int = 3,
    logit_scale: float = 1.5,
) -> OracleNet:
    """A random binary network with random per-stratum shift targets."""
    k = int(n_nodes) if n_nodes is not None else int(rng.integers(3, 11))
    nodes = []
    for i in range(k):
        n_par = int(rng.integers(0, min(i, max_parents) + 1))
        parents = tuple(sorted(rng.choice(i, size=n_par, replace=False).tolist())) if n_par else ()
        logits = rng.uniform(-logit_scale, logit_scale, size=2**n_par)
        nodes.append(OracleNode(name=f"V{i}", parents=parents, logits=logits))
    m = int(n_shifted) if n_shifted is not None else int(rng.integers(1, 4))
    m = min(m, k)
    shifted = sorted(rng.choice(k, size=m, replace=False).tolist())
    return OracleNet(nodes=nodes, shifted=shifted)


def random_config_loss(rng: np.random.Generator, n_nodes: int):
    """A smooth deterministic loss over binary configs: sigmoid of a random
    linear-plus-pairwise form. Returned as a callable on (m, k) arrays."""
    a = rng.normal(0.0, 1.0, size=n_nodes)
    B = rng.normal(0.0, 0.5, size=(n_nodes, n_nodes))
    c = rng.normal()

    def loss_fn(configs: np.ndarray) -> np.ndarray:
        configs = np.asarray(configs, dtype=float)
        quad = np.einsum("mi,ij,mj->m", configs, B, configs)
        return _sigmoid(c + configs @ a + quad)

    return loss_fn


# ----------------------------------------------------------------------
# Ball sampling and polar ball grid


def sobol_ball(n: int, d: int, radius: float, seed: int) -> np.ndarray:
    """Quasi-uniform points of the closed ball via Sobol + radial transform."""
    from scipy.stats import qmc

    m = max(int(n), 2)
    eng = qmc.Sobol(d=d + 1, scramble=True, seed=seed)
    u = eng.random(m)[:n]
    z = _norm_ppf(np.clip(u[:, :d], 1e-12, 1 - 1e-12))
    norms = np.linalg.norm(z, axis=1)
    norms[norms == 0] = 1.0
    dirs = z / norms[:, None]
    r = radius * u[:, d] ** (1.0 / d)
    return dirs * r[:, None]


def _norm_ppf(u: np.ndarray) -> np.ndarray:
    from scipy.special import ndtri

    return ndtri(u)


def polar_ball_grid(n_dirs: int, n_radii: int, radius: float) -> np.ndarray:
    """Dense grid of the closed 3-ball: Fibonacci-sphere directions crossed
    with equally spaced radii including 0 and the boundary shell."""
    i = np.arange(n_dirs, dtype=float)
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    zc = 1.0 - 2.0 * (i + 0.5) / n_dirs
    theta = 2.0 * np.pi * i / golden
    s = np.sqrt(np.maximum(0.0, 1.0 - zc**2))
    dirs = np.column_stack([s * np.cos(theta), s * np.sin(theta), zc])
    radii = np.linspace(0.0, radius, n_radii)
    pts = (dirs[None, :, :] * radii[:, None, None]).reshape(-1, 3)
    return pts


# ----------------------------------------------------------------------
# 2x2 shifted-subpopulation grid solver


def grid_2x2_worst(p11: float, p10: float, mu: np.ndarray, p_y1: float, alpha: float, n_grid: int = 2001):
    """Worst-case expected loss over CPDs q(T=1|y) with subpopulation weight
    at least alpha, by dense grid search over the feasible box.

    mu[t, y] is the conditional mean loss E[loss | T=t, Y=y]. Returns
    (q11, q10, worst) for the best grid point.
    """
    lo11 = max(0.0, (p11 - alpha) / (1.0 - alpha))
    hi11 = min(p11 / (1.0 - alpha), 1.0)
    lo10 = max(0.0, (p10 - alpha) / (1.0 - alpha))
    hi10 = min(p10 / (1.0 - alpha), 1.0)
    q11 = np.linspace(lo11, hi11, n_grid)
    q10 = np.linspace(lo10, hi10, n_grid)

    def value(a, b):
        return (
            p_y1 * (a * mu[1, 1] + (1 - a) * mu[0, 1])
            + (1 - p_y1) * (b * mu[1, 0] + (1 - b) * mu[0, 0])
        )

    V = value(q11[:, None], q10[None, :])
    i, j = np.unravel_index(np.argmax(V), V.shape)
    return float(q11[i]), float(q10[j]), float(V[i, j])
