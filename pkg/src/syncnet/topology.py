"""Leader-rooted directed acyclic communication graphs.

Agent ids are 1-based labels, matching how agents are numbered in scenario
files and CSV output. ``adjacency[i-1][j-1] == 1`` means agent ``j`` is an
in-neighbor of agent ``i`` (information flows j -> i).
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import CycleDetected, DimensionMismatch, NonBinaryEntry, SelfLoop, Unreachable


@dataclass(frozen=True)
class CommGraph:
    adjacency: np.ndarray
    leader: int
    order: tuple = field(default=())

    @property
    def n_agents(self):
        return self.adjacency.shape[0]

    @property
    def followers(self):
        return tuple(a for a in self.order if a != self.leader)

    def edges(self):
        """(target, source) pairs in evaluation order of the target, sources ascending."""
        return [(i, j) for i in self.order for j in in_neighbors(self, i)]

    def levels(self):
        """Depth of every agent (leader is 0) measured along longest in-paths."""
        depth = {}
        for i in self.order:
            nbrs = in_neighbors(self, i)
            depth[i] = 0 if not nbrs else 1 + max(depth[j] for j in nbrs)
        return depth


def _kahn(adj):
    """Topological order with ascending-id tie-break, or None on a cycle."""
    n = adj.shape[0]
    indeg = adj.sum(axis=1).astype(int)
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        j = heapq.heappop(ready)
        order.append(j)
        for i in np.flatnonzero(adj[:, j]):
            indeg[i] -= 1
            if indeg[i] == 0:
                heapq.heappush(ready, int(i))
    if len(order) != n:
        return None
    return order


def _reachable(adj, start):
    seen = {start}
    stack = [start]
    while stack:
        j = stack.pop()
        for i in np.flatnonzero(adj[:, j]):
            if int(i) not in seen:
                seen.add(int(i))
                stack.append(int(i))
    return seen


def validate_graph(adjacency, leader=1):
    """Check an adjacency matrix against the graph assumptions and build a CommGraph."""
    raw = np.asarray(adjacency)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1] or raw.shape[0] < 1:
        raise DimensionMismatch(f"adjacency must be square, got shape {raw.shape}")
    n = raw.shape[0]
    if not np.all(np.isin(raw, (0, 1))):
        raise NonBinaryEntry("adjacency entries must be 0 or 1")
    adj = raw.astype(int)
    if np.any(np.diag(adj) != 0):
        i = int(np.flatnonzero(np.diag(adj))[0]) + 1
        raise SelfLoop(f"agent {i} lists itself as a neighbor")
    if not 1 <= int(leader) <= n:
        raise DimensionMismatch(f"leader id {leader} out of range 1..{n}")
    lead = int(leader) - 1

    order = _kahn(adj)
    if order is None:
        raise CycleDetected("communication graph contains a directed cycle")
    reach = _reachable(adj, lead)
    missing = sorted(set(range(n)) - reach)
    if missing:
        raise Unreachable(missing[0] + 1)
    adj.setflags(write=False)
    return CommGraph(adjacency=adj, leader=lead + 1, order=tuple(k + 1 for k in order))


def in_neighbors(g, i):
    """Ascending 1-based ids of agents that ``i`` listens to."""
    row = g.adjacency[i - 1]
    return [int(j) + 1 for j in np.flatnonzero(row)]


def evaluation_order(g):
    """Topological order, leader first, ties broken by ascending id."""
    return list(g.order)


def tree_adjacency(n_agents, branching=2):
    """Adjacency of a leader-rooted tree; agent k listens to agent ceil((k-1)/branching)."""
    adj = np.zeros((n_agents, n_agents), dtype=int)
    for k in range(2, n_agents + 1):
        parent = (k - 2) // branching + 1
        adj[k - 1, parent - 1] = 1
    return adj
