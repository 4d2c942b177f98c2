"""Boltzmann-machine support prior over spins s in {-1, +1}^N.

Unnormalized log-probability::

    score(s) = sum_i W_i s_i + sum_{(i,j) in E} W_ij s_i s_j

The partition function is never needed: MAP inference and
pseudo-likelihood learning both work with the unnormalized score.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import expit

from .errors import CapacityError, InvalidDimensionError, NumericError

EXACT_MAX_NODES = 20


@dataclass(frozen=True)
class Neighborhood:
    """Fixed candidate neighbourhood N_i used by graph updates.

    ``grid8`` is the 8-connected (king move) neighbourhood on a
    ``height x width`` raster; ``chain2`` links each index to its two
    adjacent indices.
    """

    kind: str
    height: int
    width: int = 1

    def __post_init__(self):
        if self.kind not in ("grid8", "chain2"):
            raise ValueError(f"unknown neighbourhood {self.kind!r}")
        if self.height < 1 or self.width < 1:
            raise InvalidDimensionError("neighbourhood dimensions must be positive")

    @classmethod
    def grid8(cls, height: int, width: int) -> "Neighborhood":
        return cls("grid8", height, width)

    @classmethod
    def chain2(cls, n: int) -> "Neighborhood":
        return cls("chain2", n, 1)

    @property
    def n_nodes(self) -> int:
        return self.height * self.width

    def pairs(self) -> np.ndarray:
        """All canonical (i < j) neighbour pairs, sorted lexicographically."""
        if self.kind == "chain2":
            i = np.arange(self.n_nodes - 1)
            return np.stack([i, i + 1], axis=1)
        h, w = self.height, self.width
        idx = np.arange(h * w).reshape(h, w)
        chunks = [
            np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1),      # right
            np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1),      # down
            np.stack([idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()], axis=1),   # down-right
            np.stack([idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()], axis=1),   # down-left
        ]
        p = np.concatenate(chunks).reshape(-1, 2)
        p = np.sort(p, axis=1)
        return p[np.lexsort((p[:, 1], p[:, 0]))]

    def neighbors(self, i: int) -> list[int]:
        if self.kind == "chain2":
            return [j for j in (i - 1, i + 1) if 0 <= j < self.n_nodes]
        r, c = divmod(i, self.width)
        out = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if (dr or dc) and 0 <= r + dr < self.height and 0 <= c + dc < self.width:
                    out.append((r + dr) * self.width + c + dc)
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "height": self.height, "width": self.width}


@dataclass(frozen=True, eq=False)
class Graph:
    n_nodes: int
    edges: np.ndarray  # (E, 2) int, canonical i < j, lexicographically sorted
    neighborhood: Neighborhood | None = None

    @classmethod
    def from_edges(cls, n_nodes: int, edges, neighborhood: Neighborhood | None = None) -> "Graph":
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        e = e.reshape(-1, 2)
        if e.size and (np.any(e[:, 0] == e[:, 1]) or e.min() < 0 or e.max() >= n_nodes):
            raise InvalidDimensionError("edges must join two distinct nodes below n_nodes")
        e = np.unique(np.sort(e, axis=1), axis=0)
        e.setflags(write=False)
        return cls(int(n_nodes), e, neighborhood)

    @classmethod
    def empty(cls, n_nodes: int, neighborhood: Neighborhood | None = None) -> "Graph":
        return cls.from_edges(n_nodes, np.empty((0, 2), dtype=np.int64), neighborhood)

    @classmethod
    def full(cls, neighborhood: Neighborhood) -> "Graph":
        """Every candidate neighbour pair connected."""
        return cls.from_edges(neighborhood.n_nodes, neighborhood.pairs(), neighborhood)

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in self.edges.tolist():
            adj[i].append(j)
            adj[j].append(i)
        return [sorted(a) for a in adj]

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}

    def is_forest(self) -> bool:
        parent = list(range(self.n_nodes))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in self.edges.tolist():
            ri, rj = find(i), find(j)
            if ri == rj:
                return False
            parent[ri] = rj
        return True


@dataclass(frozen=True, eq=False)
class BoltzmannMachine:
    graph: Graph
    unary: np.ndarray
    pairwise: np.ndarray  # aligned with graph.edges

    def __post_init__(self):
        u = np.asarray(self.unary, dtype=float)
        p = np.asarray(self.pairwise, dtype=float).reshape(-1)
        if u.shape != (self.graph.n_nodes,):
            raise InvalidDimensionError(f"unary has shape {u.shape}, expected ({self.graph.n_nodes},)")
        if p.shape != (self.graph.n_edges,):
            raise InvalidDimensionError(f"pairwise has {p.shape[0]} weights for {self.graph.n_edges} edges")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(p))):
            raise NumericError("Boltzmann machine weights must be finite")
        object.__setattr__(self, "unary", u)
        object.__setattr__(self, "pairwise", p)

    @classmethod
    def flat(cls, graph: Graph) -> "BoltzmannMachine":
        return cls(graph, np.zeros(graph.n_nodes), np.zeros(graph.n_edges))

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    def pairwise_map(self) -> dict[tuple[int, int], float]:
        return {(int(i), int(j)): float(w) for (i, j), w in zip(self.graph.edges, self.pairwise)}

    def to_dict(self) -> dict:
        d = {
            "n_nodes": self.n_nodes,
            "edges": self.graph.edges.tolist(),
            "unary": self.unary.tolist(),
            "pairwise": [[int(i), int(j), float(w)] for (i, j), w in zip(self.graph.edges, self.pairwise)],
        }
        if self.graph.neighborhood is not None:
            d["neighborhood"] = self.graph.neighborhood.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoltzmannMachine":
        nb = Neighborhood(**d["neighborhood"]) if d.get("neighborhood") else None
        graph = Graph.from_edges(d["n_nodes"], np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2), nb)
        weights = {(int(i), int(j)) if i < j else (int(j), int(i)): float(w) for i, j, w in d["pairwise"]}
        pairwise = np.array([weights[(int(i), int(j))] for i, j in graph.edges], dtype=float)
        return cls(graph, np.asarray(d["unary"], dtype=float), pairwise)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "BoltzmannMachine":
        return cls.from_dict(json.loads(text))


def as_spins(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if not np.all((s == 1.0) | (s == -1.0)):
        raise ValueError("spin vectors may only contain -1 and +1")
    return s


def spins_to_mask(s) -> np.ndarray:
    """{-1,+1} -> {0,1}."""
    return (np.asarray(s) > 0).astype(float)


def update_graph(b, neighborhood: Neighborhood) -> Graph:
    """Connect every node to each candidate neighbour whose mask value is +1.

    Because candidate neighbourhoods are symmetric, the resulting edge set is
    exactly the candidate pairs with at least one +1 endpoint.
    """
    b = np.asarray(b)
    if b.shape != (neighborhood.n_nodes,):
        raise InvalidDimensionError(f"mask length {b.shape} does not match {neighborhood.n_nodes} nodes")
    pairs = neighborhood.pairs()
    keep = (b[pairs[:, 0]] > 0) | (b[pairs[:, 1]] > 0)
    return Graph.from_edges(neighborhood.n_nodes, pairs[keep], neighborhood)


def bm_log_score(s, bm: BoltzmannMachine) -> float:
    s = np.asarray(s, dtype=float)
    if s.shape != (bm.n_nodes,):
        raise InvalidDimensionError(f"spin vector length {s.shape} does not match {bm.n_nodes} nodes")
    e = bm.graph.edges
    return float(bm.unary @ s + bm.pairwise @ (s[e[:, 0]] * s[e[:, 1]]))


# --- pseudo-likelihood ------------------------------------------------------

def _local_fields(b: np.ndarray, graph: Graph, unary: np.ndarray, pairwise: np.ndarray) -> np.ndarray:
    e = graph.edges
    h = unary.copy()
    np.add.at(h, e[:, 0], pairwise * b[e[:, 1]])
    np.add.at(h, e[:, 1], pairwise * b[e[:, 0]])
    return h


def pl_objective(b, graph: Graph, unary, pairwise, reg: float = 0.01) -> float:
    """Regularized log pseudo-likelihood sum_i log sigmoid(2 b_i h_i) - reg*|theta|^2."""
    b = np.asarray(b, dtype=float)
    h = _local_fields(b, graph, np.asarray(unary, float), np.asarray(pairwise, float))
    ll = -np.logaddexp(0.0, -2.0 * b * h).sum()
    return float(ll - reg * (np.dot(unary, unary) + np.dot(pairwise, pairwise)))


def pl_gradient(b, graph: Graph, unary, pairwise, reg: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    b = np.asarray(b, dtype=float)
    unary = np.asarray(unary, float)
    pairwise = np.asarray(pairwise, float)
    h = _local_fields(b, graph, unary, pairwise)
    # d/dh_i log sigmoid(2 b_i h_i) = 2 b_i sigmoid(-2 b_i h_i)
    g = 2.0 * b * expit(-2.0 * b * h)
    e = graph.edges
    g_unary = g - 2.0 * reg * unary
    g_pair = g[e[:, 0]] * b[e[:, 1]] + g[e[:, 1]] * b[e[:, 0]] - 2.0 * reg * pairwise
    return g_unary, g_pair


def fit_pseudolikelihood(b, graph: Graph, max_iters: int = 20, step: float = 0.1,
                         reg: float = 0.01, max_halvings: int = 30):
    """Gradient ascent on the pseudo-likelihood from zero weights.

    A step that lowers the objective is rejected and retried with half the
    step size. Returns the machine and the objective after every accepted
    step (entry 0 is the value at zero weights).
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (graph.n_nodes,):
        raise InvalidDimensionError(f"mask length {b.shape} does not match {graph.n_nodes} nodes")
    unary = np.zeros(graph.n_nodes)
    pairwise = np.zeros(graph.n_edges)
    obj = pl_objective(b, graph, unary, pairwise, reg)
    history = [obj]
    for _ in range(max_iters):
        gu, gp = pl_gradient(b, graph, unary, pairwise, reg)
        if not (np.all(np.isfinite(gu)) and np.all(np.isfinite(gp))):
            raise NumericError("non-finite pseudo-likelihood gradient")
        for _ in range(max_halvings):
            cand_u, cand_p = unary + step * gu, pairwise + step * gp
            cand = pl_objective(b, graph, cand_u, cand_p, reg)
            if cand >= obj:
                break
            step *= 0.5
        else:
            break
        unary, pairwise, obj = cand_u, cand_p, cand
        history.append(obj)
    return BoltzmannMachine(graph, unary, pairwise), history


def learn_pseudolikelihood(b, graph: Graph, max_iters: int = 20, step: float = 0.1,
                           reg: float = 0.01) -> BoltzmannMachine:
    return fit_pseudolikelihood(b, graph, max_iters, step, reg)[0]


# --- MAP inference ------------------------------------------------------------

def map_objective(s, unary_cost, bm: BoltzmannMachine) -> float:
    """sum_i unary_cost_i v_i - score(s), with v = (s + 1) / 2."""
    s = np.asarray(s, dtype=float)
    return float(np.asarray(unary_cost, float) @ ((s + 1.0) / 2.0)) - bm_log_score(s, bm)


def _map_exact(unary_cost: np.ndarray, bm: BoltzmannMachine, chunk: int = 1 << 15) -> np.ndarray:
    n = bm.n_nodes
    if n > EXACT_MAX_NODES:
        raise CapacityError(f"exact MAP enumerates 2**N labelings; N={n} exceeds {EXACT_MAX_NODES}")
    e = bm.graph.edges
    bits = 1 << np.arange(n, dtype=np.int64)
    best = (np.inf, 0, 0)  # (objective, active count, code)
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        v = ((codes[:, None] & bits) != 0).astype(float)
        s = 2.0 * v - 1.0
        obj = v @ unary_cost - s @ bm.unary - (s[:, e[:, 0]] * s[:, e[:, 1]]) @ bm.pairwise
        m = obj.min()
        if m > best[0]:
            continue
        cand = np.flatnonzero(obj == m)
        counts = v[cand].sum(axis=1)
        k = cand[np.lexsort((codes[cand], counts))[0]]
        key = (float(m), int(counts.min()), int(codes[k]))
        if key < best:
            best = key
    code = best[2]
    return np.where((code & bits) != 0, 1.0, -1.0)


def _map_loopy(unary_cost: np.ndarray, bm: BoltzmannMachine, max_sweeps: int,
               damping: float, tol: float) -> np.ndarray:
    # energies, state 0 <-> s=-1, state 1 <-> s=+1
    theta = np.stack([bm.unary, unary_cost - bm.unary], axis=1)
    e = bm.graph.edges
    if e.shape[0] == 0:
        return np.where(theta[:, 1] < theta[:, 0], 1.0, -1.0)
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    n_e = e.shape[0]
    rev = np.concatenate([np.arange(n_e, 2 * n_e), np.arange(n_e)])
    w = np.concatenate([bm.pairwise, bm.pairwise])
    # pair energy -w s_i s_j indexed [d, s_src, s_dst]
    pair = np.empty((2 * n_e, 2, 2))
    pair[:, 0, 0] = pair[:, 1, 1] = -w
    pair[:, 0, 1] = pair[:, 1, 0] = w
    msg = np.zeros((2 * n_e, 2))
    for _ in range(max_sweeps):
        belief = theta.copy()
        np.add.at(belief, dst, msg)
        cavity = belief[src] - msg[rev]
        new = np.min(cavity[:, :, None] + pair, axis=1)
        new -= new.min(axis=1, keepdims=True)
        new = damping * msg + (1.0 - damping) * new
        change = np.max(np.abs(new - msg))
        msg = new
        if change < tol:
            break
    belief = theta.copy()
    np.add.at(belief, dst, msg)
    return np.where(belief[:, 1] < belief[:, 0], 1.0, -1.0)


def map_inference(unary_cost, bm: BoltzmannMachine, mode: str = "loopy", max_sweeps: int = 200,
                  damping: float = 0.5, tol: float = 1e-6) -> np.ndarray:
    """Minimize ``map_objective`` over spin labelings.

    ``exact`` enumerates all labelings (N <= 20); exact ties go to the
    labeling with fewer active nodes. ``loopy`` runs damped synchronous
    min-sum belief propagation and returns the better of its decoded
    labeling and the all-inactive labeling.
    """
    u = np.asarray(unary_cost, dtype=float)
    if u.shape != (bm.n_nodes,):
        raise InvalidDimensionError(f"unary cost length {u.shape} does not match {bm.n_nodes} nodes")
    if mode == "exact":
        return _map_exact(u, bm)
    if mode != "loopy":
        raise ValueError(f"unknown MAP mode {mode!r}")
    s = _map_loopy(u, bm, max_sweeps, damping, tol)
    off = -np.ones(bm.n_nodes)
    if map_objective(off, u, bm) < map_objective(s, u, bm):
        return off
    return s
