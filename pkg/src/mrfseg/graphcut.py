"""Max-flow/min-cut and alpha-expansion for the first-order Potts energy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import (
    ClassParams,
    DomainError,
    LabelMap,
    NeighborhoodSystem,
    PottsModel,
    as_image,
    as_labels,
    check_shapes,
    shifted_pairs,
)
from .emission import log_densities
from .potts import estimate_beta

log = logging.getLogger(__name__)

SYSTEM = NeighborhoodSystem.FIRST_ORDER


class FlowNetwork:
    """Directed graph with non-negative finite arc capacities.

    Every arc ``u -> v`` is stored together with its residual twin ``v -> u``
    (whose own capacity is ``rev_cap``).
    """

    def __init__(self, n_nodes: int, source: int, sink: int):
        if not (0 <= source < n_nodes and 0 <= sink < n_nodes) or source == sink:
            raise DomainError("source and sink must be distinct nodes of the network")
        self.n_nodes = int(n_nodes)
        self.source = int(source)
        self.sink = int(sink)
        self._tails: list[np.ndarray] = []
        self._heads: list[np.ndarray] = []
        self._caps: list[np.ndarray] = []
        self._rcaps: list[np.ndarray] = []

    def add_edge(self, u: int, v: int, cap: float, rev_cap: float = 0.0) -> None:
        self.add_edges([u], [v], [cap], [rev_cap])

    def add_edges(self, tails, heads, caps, rev_caps=None) -> None:
        tails = np.asarray(tails, dtype=np.int64).ravel()
        heads = np.asarray(heads, dtype=np.int64).ravel()
        caps = np.broadcast_to(np.asarray(caps, dtype=np.float64), tails.shape).ravel()
        rev = np.zeros_like(caps) if rev_caps is None else np.broadcast_to(np.asarray(rev_caps, dtype=np.float64), tails.shape).ravel()
        if tails.shape != heads.shape:
            raise DomainError("tails and heads differ in length")
        if tails.size and (tails.min() < 0 or heads.min() < 0 or max(tails.max(), heads.max()) >= self.n_nodes):
            raise DomainError("arc endpoint outside the network")
        for c in (caps, rev):
            if c.size and (not np.all(np.isfinite(c)) or c.min() < 0):
                raise DomainError("capacities must be finite and non-negative")
        self._tails.append(tails)
        self._heads.append(heads)
        self._caps.append(caps.copy())
        self._rcaps.append(rev.copy())

    @property
    def n_arcs(self) -> int:
        return int(sum(t.size for t in self._tails))

    def arrays(self):
        """CSR arrays ``(first, to, cap, rev)`` with arcs grouped by tail."""
        if self._tails:
            u = np.concatenate(self._tails)
            v = np.concatenate(self._heads)
            c = np.concatenate(self._caps)
            r = np.concatenate(self._rcaps)
        else:
            u = v = np.zeros(0, np.int64)
            c = r = np.zeros(0)
        m = u.size
        tails = np.concatenate([u, v])
        heads = np.concatenate([v, u])
        caps = np.concatenate([c, r])
        twin = np.concatenate([np.arange(m, 2 * m), np.arange(m)])
        order = np.argsort(tails, kind="stable")
        pos = np.empty_like(order)
        pos[order] = np.arange(2 * m)
        first = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(tails, minlength=self.n_nodes), out=first[1:])
        return first, heads[order].astype(np.int64), caps[order].copy(), pos[twin[order]].astype(np.int64)


@numba.njit(cache=True)
def _bfs_levels(first, to, cap, s, level, queue):
    level[:] = -1
    level[s] = 0
    head, tail = 0, 1
    queue[0] = s
    while head < tail:
        u = queue[head]
        head += 1
        for e in range(first[u], first[u + 1]):
            v = to[e]
            if cap[e] > 0.0 and level[v] < 0:
                level[v] = level[u] + 1
                queue[tail] = v
                tail += 1


@numba.njit(cache=True)
def _dinic(first, to, cap, rev, s, t):
    n = first.shape[0] - 1
    level = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    it = np.empty(n, np.int64)
    path = np.empty(n, np.int64)
    total = 0.0
    while True:
        _bfs_levels(first, to, cap, s, level, queue)
        if level[t] < 0:
            break
        for u in range(n):
            it[u] = first[u]
        depth = 0
        u = s
        while True:
            if u == t:
                f = np.inf
                for k in range(depth):
                    if cap[path[k]] < f:
                        f = cap[path[k]]
                cut = depth
                for k in range(depth):
                    e = path[k]
                    cap[e] -= f
                    cap[rev[e]] += f
                    if cap[e] <= 0.0 and k < cut:
                        cut = k
                total += f
                depth = cut
                u = s if depth == 0 else to[path[depth - 1]]
                continue
            advanced = False
            while it[u] < first[u + 1]:
                e = it[u]
                v = to[e]
                if cap[e] > 0.0 and level[v] == level[u] + 1:
                    path[depth] = e
                    depth += 1
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                level[u] = -1
                if u == s:
                    break
                depth -= 1
                e = path[depth]
                u = to[rev[e]]
                it[u] += 1
    _bfs_levels(first, to, cap, s, level, queue)
    return total, level >= 0


def max_flow(network: FlowNetwork) -> tuple[float, np.ndarray]:
    """Maximum s-t flow by Dinic's blocking-flow method.

    Returns the flow value and a boolean mask of the nodes reachable from the
    source in the final residual graph (the source side of a minimum cut).
    """
    first, to, cap, rev = network.arrays()
    value, side = _dinic(first, to, cap, rev, network.source, network.sink)
    return float(value), side


def _grid_pairs(shape):
    """Flat index arrays ``(p, q)`` of all first-order neighbor pairs."""
    idx = np.arange(shape[0] * shape[1]).reshape(shape)
    ps, qs = [], []
    for off in SYSTEM.half_offsets:
        src, dst = shifted_pairs(shape, off)
        ps.append(idx[src].ravel())
        qs.append(idx[dst].ravel())
    return np.concatenate(ps), np.concatenate(qs)


def _add_terminal_arcs(net: FlowNetwork, nodes, cap_source, cap_sink):
    # shared part of the two terminal arcs is a constant of the cut
    shared = np.minimum(cap_source, cap_sink)
    net.add_edges(np.full(nodes.shape, net.source), nodes, cap_source - shared)
    net.add_edges(nodes, np.full(nodes.shape, net.sink), cap_sink - shared)


def energy(labels, image, params: ClassParams, beta: float) -> float:
    """First-order Potts posterior energy (lower is better)."""
    from .potts import posterior_energy

    return posterior_energy(labels, image, params, PottsModel(beta, SYSTEM))


def _energy_from(ld: np.ndarray, s: np.ndarray, beta: float, pairs) -> float:
    p, q = pairs
    flat = s.ravel()
    data = -np.take_along_axis(ld.reshape(-1, ld.shape[2]), flat[:, None], axis=1).sum()
    return float(data - beta * np.count_nonzero(flat[p] == flat[q]))


def binary_mapcut(image, params: ClassParams, beta: float) -> LabelMap:
    """Exact minimizer of the two-class first-order Potts energy by one s-t cut."""
    image = as_image(image)
    if params.n_classes != 2:
        raise DomainError("binary_mapcut needs exactly two classes")
    if beta < 0:
        raise DomainError("beta must be non-negative for a graph-cut construction")
    cost = -log_densities(image, params).reshape(-1, 2)
    n = cost.shape[0]
    net = FlowNetwork(n + 2, n, n + 1)
    nodes = np.arange(n)
    # source side means label 0: cutting s->p assigns label 1
    _add_terminal_arcs(net, nodes, cost[:, 1], cost[:, 0])
    p, q = _grid_pairs(image.shape)
    if beta > 0 and p.size:
        net.add_edges(p, q, beta, beta)
    _, side = max_flow(net)
    return LabelMap(np.where(side[:n], 0, 1).reshape(image.shape), 2)


def expansion_move(ld: np.ndarray, s: np.ndarray, alpha: int, beta: float, pairs) -> np.ndarray:
    """Best labeling reachable from ``s`` by switching any subset of pixels to ``alpha``."""
    z, w, L = ld.shape
    n = z * w
    cost = -ld.reshape(n, L)
    f = s.ravel()
    p, q = pairs
    free = f != alpha
    keep_cost = cost[np.arange(n), f]
    alpha_cost = cost[:, alpha]
    extra = np.zeros(n)
    # pairs with one end already at alpha: cost beta iff the free end keeps its label
    one_a = free[p] & ~free[q]
    np.add.at(extra, p[one_a], beta)
    one_b = ~free[p] & free[q]
    np.add.at(extra, q[one_b], beta)
    both = free[p] & free[q]
    same = both & (f[p] == f[q])
    diff = both & (f[p] != f[q])
    n_aux = int(np.count_nonzero(diff))
    net = FlowNetwork(n + n_aux + 2, n + n_aux, n + n_aux + 1)
    nodes = np.flatnonzero(free)
    # source side means "take alpha": cutting s->p keeps the current label
    _add_terminal_arcs(net, nodes, keep_cost[nodes] + extra[nodes], alpha_cost[nodes])
    if beta > 0:
        net.add_edges(p[same], q[same], beta, beta)
        aux = n + np.arange(n_aux)
        net.add_edges(p[diff], aux, beta, beta)
        net.add_edges(aux, q[diff], beta, beta)
        net.add_edges(np.full(n_aux, net.source), aux, beta)
    _, side = max_flow(net)
    out = np.where(free & side[:n], alpha, f)
    return out.reshape(z, w)


@dataclass
class ExpansionReport:
    labels: LabelMap
    energy_trace: list[float] = field(default_factory=list)
    cycles: int = 0
    converged: bool = False
    beta: float = 0.0
    initial_energy: float = 0.0


def alpha_expansion(image, init, params: ClassParams, beta: float, max_cycles: int = 10) -> ExpansionReport:
    """Alpha-expansion over labels in ascending order until a full cycle
    accepts no move (or ``max_cycles`` cycles have run)."""
    image = as_image(image)
    init = as_labels(init, params.n_classes)
    check_shapes(image, init)
    if beta < 0:
        raise DomainError("beta must be non-negative for a graph-cut construction")
    if params.n_classes < 2:
        raise DomainError("alpha-expansion needs at least two labels")
    ld = log_densities(image, params)
    pairs = _grid_pairs(image.shape)
    s = np.array(init.labels, copy=True)
    e_cur = _energy_from(ld, s, beta, pairs)
    report = ExpansionReport(init, [], 0, False, float(beta), e_cur)
    for cycle in range(1, max_cycles + 1):
        accepted = 0
        for alpha in range(params.n_classes):
            cand = expansion_move(ld, s, alpha, beta, pairs)
            e_new = _energy_from(ld, cand, beta, pairs)
            if e_new < e_cur - 1e-9 * max(1.0, abs(e_cur)):
                s, e_cur = cand, e_new
                report.energy_trace.append(e_cur)
                accepted += 1
        report.cycles = cycle
        log.debug("expansion cycle %d: %d moves accepted, energy %.6f", cycle, accepted, e_cur)
        if accepted == 0:
            report.converged = True
            break
    report.labels = LabelMap(s, params.n_classes)
    return report


def gc_segment(
    image,
    init,
    params: ClassParams,
    beta_override: float | None = None,
    max_cycles: int = 10,
    bracket: tuple[float, float] = (-10.0, 10.0),
) -> ExpansionReport:
    """Estimate beta once from ``init`` (first-order system, clamped at 0), then expand."""
    init = as_labels(init, params.n_classes)
    if beta_override is not None:
        beta = float(beta_override)
    else:
        try:
            beta = estimate_beta(init, SYSTEM, bracket).beta
        except DomainError:
            beta = float(bracket[1])
        beta = max(beta, 0.0)
    return alpha_expansion(image, init, params, beta, max_cycles)
