"""Communication-graph analysis for the BESS agent fleet.

Builds the agent adjacency/Laplacian pair, the grounded matrix Q = L + G
(Laplacian plus diagonal pinning gains), its spectrum, and the gain
feasibility conditions that certify finite-time convergence of the
secondary controller.  Q is symmetric positive definite exactly when the
graph is connected and at least one agent is pinned to the virtual
leader; lambda_min(Q) then controls the admissible controller gains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CommTopology",
    "FeasibilityReport",
    "GraphError",
    "laplacian",
    "grounded_matrix",
    "spectrum",
    "check_feasibility",
]


class GraphError(ValueError):
    """Raised for malformed adjacency input or a non-pinned/disconnected graph."""


@dataclass(frozen=True)
class CommTopology:
    """Undirected communication graph among BESS agents with pinning gains.

    adjacency is a symmetric 0/1 matrix with zero diagonal; pinning holds
    one non-negative gain per agent, strictly positive for every agent
    with direct access to the virtual leader (at least one required).
    """

    n_agents: int
    adjacency: np.ndarray
    pinning: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=float)
        pin = np.asarray(self.pinning, dtype=float)
        n = self.n_agents
        if adj.shape != (n, n):
            raise GraphError(f"adjacency must be {n}x{n}, got {adj.shape}")
        if pin.shape != (n,):
            raise GraphError(f"pinning must have length {n}, got {pin.shape}")
        if not np.array_equal(adj, adj.T):
            raise GraphError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0.0):
            raise GraphError("adjacency must have zero diagonal (no self-loops)")
        if not np.all(np.isin(adj, (0.0, 1.0))):
            raise GraphError("adjacency entries must be 0 or 1")
        if np.any(pin < 0.0):
            raise GraphError("pinning gains must be non-negative")
        if not np.any(pin > 0.0):
            raise GraphError("at least one pinning gain must be strictly positive")
        if not _connected(adj):
            raise GraphError("communication graph must be connected")
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "pinning", pin)

    @classmethod
    def from_edges(cls, n_agents: int, edges, pinning) -> "CommTopology":
        adj = np.zeros((n_agents, n_agents))
        for i, j in edges:
            if not (0 <= i < n_agents and 0 <= j < n_agents):
                raise GraphError(f"edge ({i},{j}) out of range for {n_agents} agents")
            if i == j:
                raise GraphError(f"self-loop ({i},{j}) not allowed")
            adj[i, j] = adj[j, i] = 1.0
        return cls(n_agents=n_agents, adjacency=adj, pinning=np.asarray(pinning, float))

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def neighbors(self, i: int) -> np.ndarray:
        return np.nonzero(self.adjacency[i])[0]


def _connected(adj: np.ndarray) -> bool:
    """Breadth-first reachability from node 0."""
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(adj[i])[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


def laplacian(topology: CommTopology) -> np.ndarray:
    """Graph Laplacian L = D - A with D the diagonal degree matrix.

    Row sums are zero and L is positive semidefinite for any undirected
    simple graph; topology validation has already rejected asymmetric or
    self-looped adjacency.
    """
    adj = topology.adjacency
    return np.diag(adj.sum(axis=1)) - adj


def grounded_matrix(L: np.ndarray, topology: CommTopology) -> np.ndarray:
    """Grounded matrix Q = L + G with G = diag(pinning gains).

    Raises GraphError if Q is not positive definite, which signals a
    disconnected graph or an all-zero pinning vector.
    """
    Q = np.asarray(L, dtype=float) + np.diag(topology.pinning)
    if spectrum(Q)[0] <= 1e-12:
        raise GraphError("Q = L + G is not positive definite "
                         "(graph disconnected or no pinning gain)")
    return Q


def spectrum(Q: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric matrix in ascending order.

    Rejects asymmetric input.  Uses the dense symmetric eigensolver;
    residuals ||Qv - lam v|| are at LAPACK accuracy, well below the
    1e-9 * ||Q|| contract.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise GraphError(f"expected a square matrix, got shape {Q.shape}")
    if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise GraphError("spectrum requires a symmetric matrix")
    return np.linalg.eigvalsh(Q)


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of the finite-time gain conditions on a grounded matrix Q.

    cond1_value = 2 b^2 - a lambda_max(Q^-1)            (must be > 0)
    cond2_value = k3 - 1 - d/2 + a^2 - b^2 + lambda_max(Q^-1)   (must be > 0)
    rho_upper   = 2 d cond2_value                       (need 0 < rho < rho_upper)
    """

    lambda_min_q: float
    lambda_max_qinv: float
    cond1_value: float
    cond2_value: float
    rho_upper: float
    feasible: bool

    def as_dict(self) -> dict:
        return {
            "lambda_min_q": self.lambda_min_q,
            "lambda_max_qinv": self.lambda_max_qinv,
            "cond1_value": self.cond1_value,
            "cond2_value": self.cond2_value,
            "rho_upper": self.rho_upper,
            "feasible": self.feasible,
        }


def check_feasibility(gains, Q: np.ndarray) -> FeasibilityReport:
    """Evaluate the three sufficient gain conditions on Q.

    `gains` needs fields k1, k2, k3, alpha, beta, gamma1, gamma2, rho, d
    (see controller.GainSet).  Sign/range preconditions are rejected here
    so an infeasible *report* always refers to the inequality conditions,
    never to malformed input.
    """
    for name in ("k1", "k2", "k3", "alpha", "beta", "d", "rho"):
        if getattr(gains, name) <= 0.0:
            raise ValueError(f"gain {name} must be > 0, got {getattr(gains, name)}")
    if not (0.0 < gains.gamma1 < 1.0):
        raise ValueError(f"gamma1 must be in (0,1), got {gains.gamma1}")
    if gains.gamma2 <= 1.0:
        raise ValueError(f"gamma2 must be > 1, got {gains.gamma2}")

    eig = spectrum(Q)
    lam_min = float(eig[0])
    if lam_min <= 1e-12:
        raise GraphError("Q must be positive definite for feasibility analysis")
    lam_max_qinv = 1.0 / lam_min

    a, b, d = gains.alpha, gains.beta, gains.d
    cond1 = 2.0 * b * b - a * lam_max_qinv
    cond2 = gains.k3 - 1.0 - d / 2.0 + a * a - b * b + lam_max_qinv
    rho_upper = 2.0 * d * cond2
    feasible = cond1 > 0.0 and cond2 > 0.0 and 0.0 < gains.rho < rho_upper
    return FeasibilityReport(
        lambda_min_q=lam_min,
        lambda_max_qinv=lam_max_qinv,
        cond1_value=float(cond1),
        cond2_value=float(cond2),
        rho_upper=float(rho_upper),
        feasible=bool(feasible),
    )
