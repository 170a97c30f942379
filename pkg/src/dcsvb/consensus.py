"""
Network topologies and ADMM average consensus over simulated nodes.

Nodes only communicate through :class:`ConsensusMessage` objects, which
carry a node's current consensus variable and nothing else. Rounds are
synchronous: every node reads the values its neighbors broadcast in the
previous round, so the visiting order never changes the result.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Topology",
    "TopologyError",
    "harary_graph",
    "complete_graph",
    "ring_graph",
    "load_edges",
    "save_edges",
    "ConsensusMessage",
    "AdmmNode",
    "ConsensusStats",
    "run_consensus",
]

# bytes charged per message on top of the payload (sender, round, kind)
MESSAGE_HEADER_BYTES = 16


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Undirected simple graph on nodes ``0..K-1``."""

    adjacency: np.ndarray
    neighbors: tuple = field(init=False, repr=False)

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise TopologyError("adjacency must be a non-empty square matrix")
        if not np.array_equal(adj, adj.T):
            raise TopologyError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise TopologyError("self loops are not allowed")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "neighbors",
                           tuple(np.flatnonzero(row) for row in adj))

    @property
    def K(self):
        return self.adjacency.shape[0]

    @property
    def degrees(self):
        return self.adjacency.sum(axis=1)

    @property
    def edges(self):
        i, j = np.nonzero(np.triu(self.adjacency))
        return list(zip(i.tolist(), j.tolist()))

    def is_connected(self, removed=()):
        """Breadth-first connectivity check after deleting ``removed``."""
        gone = set(removed)
        alive = [k for k in range(self.K) if k not in gone]
        if not alive:
            return True
        seen = {alive[0]}
        todo = deque([alive[0]])
        while todo:
            k = todo.popleft()
            for j in self.neighbors[k]:
                j = int(j)
                if j not in seen and j not in gone:
                    seen.add(j)
                    todo.append(j)
        return len(seen) == len(alive)

    @classmethod
    def from_edges(cls, K, edges):
        adj = np.zeros((K, K), dtype=bool)
        for i, j in edges:
            if not (0 <= i < K and 0 <= j < K):
                raise TopologyError(f"edge ({i}, {j}) outside 0..{K - 1}")
            if i == j:
                raise TopologyError(f"self loop at node {i}")
            adj[i, j] = adj[j, i] = True
        return cls(adj)


def harary_graph(K, P):
    """Harary graph H(P, K): P-connected with the fewest edges.

    Even ``P`` links each node to the ``P/2`` nearest nodes on either side of
    a ring. Odd ``P`` adds diameter chords ``i -- i + K/2``; for odd ``K``
    node ``i`` in ``0..(K-1)/2`` is joined to ``i + (K+1)/2``, which leaves
    node 0 with degree ``P + 1``.
    """
    if not 1 <= P < K:
        raise TopologyError(f"Harary graph needs 1 <= P < K, got P={P}, K={K}")
    adj = np.zeros((K, K), dtype=bool)
    if P == 1:
        for i in range(K - 1):
            adj[i, i + 1] = adj[i + 1, i] = True
        return Topology(adj)
    half = P // 2
    for i in range(K):
        for d in range(1, half + 1):
            j = (i + d) % K
            adj[i, j] = adj[j, i] = True
    if P % 2:
        if K % 2 == 0:
            for i in range(K // 2):
                j = i + K // 2
                adj[i, j] = adj[j, i] = True
        else:
            for i in range((K + 1) // 2):
                j = (i + (K + 1) // 2) % K
                adj[i, j] = adj[j, i] = True
    return Topology(adj)


def complete_graph(K):
    return Topology(~np.eye(K, dtype=bool))


def ring_graph(K):
    if K < 3:
        raise TopologyError("a ring needs at least 3 nodes")
    return harary_graph(K, 2)


def save_edges(path, topology):
    """Edge list: a ``# nodes K`` line then one ``i j`` pair per line."""
    with open(path, "w") as fh:
        fh.write(f"# nodes {topology.K}\n")
        for i, j in topology.edges:
            fh.write(f"{i} {j}\n")


def load_edges(path):
    K, edges = None, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#":
                if len(parts) == 3 and parts[1] == "nodes":
                    K = int(parts[2])
                continue
            if len(parts) != 2:
                raise TopologyError(f"{path}:{lineno}: expected 'i j'")
            edges.append((int(parts[0]), int(parts[1])))
    if K is None:
        K = 1 + max((max(e) for e in edges), default=0)
    return Topology.from_edges(K, edges)


# --------------------------------------------------------------------------
# ADMM average consensus
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConsensusMessage:
    """What a node broadcasts to its neighbors in one round.

    The payload is the sender's current consensus variable; raw data,
    sensing matrices and posterior means have no field to travel in.
    """

    sender: int
    round: int
    kind: str
    value: np.ndarray

    def __post_init__(self):
        if self.kind not in ("matrix", "vector", "scalar"):
            raise ValueError(f"unknown consensus kind {self.kind!r}")
        v = np.array(self.value, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "value", v)

    @property
    def nbytes(self):
        return MESSAGE_HEADER_BYTES + self.value.nbytes


class AdmmNode:
    """Local state of one node: target, consensus variable and dual."""

    def __init__(self, index, target, neighbors, rho, kind):
        self.index = index
        self.target = np.array(target, dtype=float)
        self.x = self.target.copy()
        self.dual = np.zeros_like(self.x)
        self.neighbors = tuple(int(j) for j in neighbors)
        self.rho = rho
        self.kind = kind

    def broadcast(self, rnd):
        return ConsensusMessage(self.index, rnd, self.kind, self.x)

    def step(self, inbox):
        """Dual then primal update from the previous round's messages."""
        vals = []
        for j in self.neighbors:
            msg = inbox[j]
            if msg.value.shape != self.x.shape:
                raise ValueError(f"node {self.index}: shape mismatch with "
                                 f"node {j}")
            vals.append(msg.value)
        deg = len(vals)
        if deg == 0:
            return
        total = np.sum(vals, axis=0)
        self.dual = self.dual + self.rho * (deg * self.x - total)
        self.x = ((2 * self.target - self.dual
                   + self.rho * (deg * self.x + total))
                  / (2 + 2 * self.rho * deg))


@dataclass
class ConsensusStats:
    rounds: int = 0
    messages: int = 0
    bytes: int = 0
    disagreement: float = 0.0

    def add(self, other):
        self.rounds += other.rounds
        self.messages += other.messages
        self.bytes += other.bytes
        self.disagreement = max(self.disagreement, other.disagreement)


def _disagreement(nodes, eps=1e-300):
    worst = 0.0
    for node in nodes:
        nx = np.linalg.norm(node.x)
        for j in node.neighbors:
            d = np.linalg.norm(node.x - nodes[j].x) / (nx + eps)
            worst = max(worst, d)
    return worst


def run_consensus(targets, topology, rho=1.0, tol=1e-6, max_rounds=50,
                  order=None):
    """Drive every node's variable to the network average of ``targets``.

    Parameters
    ----------
    targets : sequence of arrays
        One local target per node, all the same shape.
    topology : Topology
    rho : float
        ADMM penalty.
    tol : float
        Stop once the largest relative difference across any edge is below
        ``tol``.
    max_rounds : int
    order : sequence of int, optional
        Order in which nodes are stepped inside a round. Rounds are
        synchronous, so this does not change the result.

    Returns
    -------
    values : list of arrays
        Each node's consensus variable.
    stats : ConsensusStats
    """
    if len(targets) != topology.K:
        raise ValueError(f"{len(targets)} targets for {topology.K} nodes")
    if not rho > 0:
        raise ValueError("rho must be positive")
    shapes = {np.shape(t) for t in targets}
    if len(shapes) != 1:
        raise ValueError(f"targets have different shapes {sorted(shapes)}")
    ndim = len(shapes.pop())
    kind = ("scalar", "vector", "matrix")[min(ndim, 2)]
    nodes = [AdmmNode(k, t, topology.neighbors[k], rho, kind)
             for k, t in enumerate(targets)]
    order = range(topology.K) if order is None else order
    stats = ConsensusStats()
    stats.disagreement = _disagreement(nodes)
    while stats.disagreement >= tol and stats.rounds < max_rounds:
        inbox = {}
        for node in nodes:
            msg = node.broadcast(stats.rounds)
            inbox[node.index] = msg
            stats.messages += len(node.neighbors)
            stats.bytes += len(node.neighbors) * msg.nbytes
        for k in order:
            nodes[k].step(inbox)
        stats.rounds += 1
        stats.disagreement = _disagreement(nodes)
    return [node.x for node in nodes], stats
