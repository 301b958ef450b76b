"""Itinerary planning: choose how many agents to dispatch and their tours.

An agent's state grows as it collects data, so later hops carry more bytes.
With s0 the base state size and sd the per-visited-node data increment, a
tour m -> v1 -> ... -> vk -> m costs

    d(m,v1)*s0 + sum_{i=1..k-1} d(v_i,v_{i+1})*(s0 + i*sd) + d(v_k,m)*(s0 + k*sd)

in bytes*distance units.  The planner minimizes the maximum route cost over
the fleet (response-time proxy), breaking ties on total cost (network
overhead), then on fewer agents.  The heuristic seeds k clusters with
mutually farthest targets, fills them by cheapest marginal insertion, orders
each route nearest-neighbor and polishes with 2-opt; an exact enumeration
oracle validates it on small instances.  All tie-breaks are lexicographic by
host id, so identical inputs always produce identical plans.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path

BRUTE_FORCE_LIMIT = 7
DEFAULT_K_MAX = 8


class PlanError(Exception):
    pass


class UnknownHost(PlanError):
    pass


class EmptyTargets(PlanError):
    pass


class Disconnected(PlanError):
    pass


class TooLarge(PlanError):
    pass


@dataclass(frozen=True)
class CostParams:
    s0: float
    sd: float = 0.0

    def __post_init__(self) -> None:
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")
        if self.sd < 0:
            raise ValueError("sd must be non-negative")


class Topology:
    """Weighted undirected managed-network graph with shortest-path metric."""

    def __init__(self, manager: str, edges: list[tuple[str, str, float]]) -> None:
        self.manager = manager
        self.adj: dict[str, list[tuple[str, float]]] = {manager: []}
        for u, v, cost in edges:
            if cost < 1:
                raise ValueError(f"edge cost must be >= 1: {u} {v} {cost}")
            self.adj.setdefault(u, []).append((v, cost))
            self.adj.setdefault(v, []).append((u, cost))
        self._dist: dict[str, dict[str, float]] = {}

    @property
    def nodes(self) -> list[str]:
        return sorted(self.adj)

    def _dijkstra(self, source: str) -> dict[str, float]:
        dist = {source: 0.0}
        heap = [(0.0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist.get(u, float("inf")):
                continue
            for v, cost in self.adj[u]:
                nd = d + cost
                if nd < dist.get(v, float("inf")):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist

    def d(self, u: str, v: str) -> float:
        if u not in self.adj:
            raise UnknownHost(u)
        if v not in self.adj:
            raise UnknownHost(v)
        if u not in self._dist:
            self._dist[u] = self._dijkstra(u)
        dist = self._dist[u].get(v)
        if dist is None:
            raise Disconnected(f"no path {u} -> {v}")
        return dist


def complete_topology(hosts: list[str], manager: str) -> Topology:
    """Unit-cost complete graph; the default when no topology file is given."""
    nodes = sorted(set(hosts) | {manager})
    edges = [(u, v, 1.0) for i, u in enumerate(nodes) for v in nodes[i + 1 :]]
    return Topology(manager, edges)


def parse_topology(text: str) -> Topology:
    manager = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "manager" and len(parts) == 2:
            manager = parts[1]
        elif parts[0] == "edge" and len(parts) == 4:
            edges.append((parts[1], parts[2], float(parts[3])))
        else:
            raise ValueError(f"topology line {lineno}: expected 'manager <h>' or 'edge <u> <v> <cost>'")
    if manager is None:
        raise ValueError("topology file names no manager")
    return Topology(manager, edges)


def load_topology(path: str | Path) -> Topology:
    return parse_topology(Path(path).read_text())


@dataclass(frozen=True)
class Plan:
    routes: tuple[tuple[str, ...], ...]
    max_cost: float
    total_cost: float

    @property
    def k(self) -> int:
        return len(self.routes)

    @property
    def objective(self) -> tuple[float, float]:
        return (self.max_cost, self.total_cost)


def route_cost(route: list[str] | tuple[str, ...], topo: Topology, params: CostParams) -> float:
    if not route:
        raise PlanError("route is empty")
    m = topo.manager
    cost = topo.d(m, route[0]) * params.s0
    for i in range(1, len(route)):
        cost += topo.d(route[i - 1], route[i]) * (params.s0 + i * params.sd)
    cost += topo.d(route[-1], m) * (params.s0 + len(route) * params.sd)
    return cost


def _plan_of(routes: list[list[str]], topo: Topology, params: CostParams) -> Plan:
    costs = [route_cost(r, topo, params) for r in routes]
    ordered = sorted(zip(routes, costs), key=lambda rc: rc[0])
    return Plan(
        routes=tuple(tuple(r) for r, _ in ordered),
        max_cost=max(costs),
        total_cost=sum(costs),
    )


def _nearest_neighbor_order(members: list[str], topo: Topology) -> list[str]:
    remaining = sorted(members)
    route: list[str] = []
    current = topo.manager
    while remaining:
        nxt = min(remaining, key=lambda h: (topo.d(current, h), h))
        route.append(nxt)
        remaining.remove(nxt)
        current = nxt
    return route


def _two_opt(route: list[str], topo: Topology, params: CostParams) -> list[str]:
    """First-improvement 2-opt on the full position-weighted cost."""
    best = list(route)
    best_cost = route_cost(best, topo, params)
    improved = True
    while improved:
        improved = False
        for i in range(len(best) - 1):
            for j in range(i + 1, len(best)):
                candidate = best[:i] + best[i : j + 1][::-1] + best[j + 1 :]
                cost = route_cost(candidate, topo, params)
                if cost < best_cost:
                    best, best_cost = candidate, cost
                    improved = True
    return best


def _seed_clusters(targets: list[str], k: int, topo: Topology) -> list[str]:
    m = topo.manager
    seeds = [max(targets, key=lambda h: (topo.d(m, h), _neg_lex(h)))]
    while len(seeds) < k:
        candidates = [h for h in targets if h not in seeds]
        seeds.append(
            max(candidates, key=lambda h: (min(topo.d(h, s) for s in seeds), _neg_lex(h)))
        )
    return seeds


def _neg_lex(host: str) -> tuple[int, ...]:
    # Max over (key, _neg_lex(host)) picks the lexicographically smallest host on ties.
    return tuple(-b for b in host.encode("utf-8"))


def _plan_for_k(targets: list[str], k: int, topo: Topology, params: CostParams) -> Plan:
    seeds = _seed_clusters(targets, k, topo)
    routes: list[list[str]] = [[s] for s in seeds]
    unassigned = sorted(h for h in targets if h not in seeds)
    while unassigned:
        best = None
        for host in unassigned:
            for ri, route in enumerate(routes):
                base = route_cost(route, topo, params)
                for pos in range(len(route) + 1):
                    candidate = route[:pos] + [host] + route[pos:]
                    delta = route_cost(candidate, topo, params) - base
                    key = (delta, host, ri, pos)
                    if best is None or key < best[0]:
                        best = (key, host, ri, pos)
        _, host, ri, pos = best
        routes[ri].insert(pos, host)
        unassigned.remove(host)
    routes = [_two_opt(_nearest_neighbor_order(r, topo), topo, params) for r in routes]
    return _plan_of(routes, topo, params)


def _check_instance(topo: Topology, targets) -> list[str]:
    targets = sorted(set(targets))
    if not targets:
        raise EmptyTargets("no target hosts")
    for host in targets:
        topo.d(topo.manager, host)  # raises UnknownHost / Disconnected
    return targets


def plan(
    topo: Topology,
    targets,
    params: CostParams,
    k_max: int = DEFAULT_K_MAX,
) -> Plan:
    """Best plan over k = 1..min(|targets|, k_max) agents."""
    targets = _check_instance(topo, targets)
    best: Plan | None = None
    for k in range(1, min(len(targets), k_max) + 1):
        candidate = _plan_for_k(targets, k, topo, params)
        if best is None or (candidate.max_cost, candidate.total_cost, k) < (
            best.max_cost,
            best.total_cost,
            best.k,
        ):
            best = candidate
    return best


def _partitions(items: list[str]):
    """All set partitions, deterministic order (items must be pre-sorted)."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for partial in _partitions(rest):
        for i in range(len(partial)):
            yield partial[:i] + [[first] + partial[i]] + partial[i + 1 :]
        yield [[first]] + partial


def brute_force_plan(topo: Topology, targets, params: CostParams) -> Plan:
    """Exact optimum by enumerating all partitions and all orderings per block."""
    targets = _check_instance(topo, targets)
    if len(targets) > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{len(targets)} targets exceeds oracle limit {BRUTE_FORCE_LIMIT}")
    best: Plan | None = None
    for partition in _partitions(targets):
        routes = []
        for block in partition:
            ordered = min(
                permutations(block),
                key=lambda perm: (route_cost(perm, topo, params), perm),
            )
            routes.append(list(ordered))
        candidate = _plan_of(routes, topo, params)
        key = (candidate.max_cost, candidate.total_cost, candidate.k, candidate.routes)
        if best is None or key < (best.max_cost, best.total_cost, best.k, best.routes):
            best = candidate
    return best


def apply_topology_event(targets: list[str], event: tuple[str, str]) -> list[str]:
    kind, host = event
    if kind == "host_lost":
        return [h for h in targets if h != host]
    if kind == "host_joined":
        return sorted(set(targets) | {host})
    raise ValueError(f"unknown topology event {kind!r}")


def replan_on_change(
    topo: Topology,
    targets: list[str],
    event: tuple[str, str],
    params: CostParams,
    k_max: int = DEFAULT_K_MAX,
) -> Plan:
    """Full re-plan over the target set after a directory change."""
    return plan(topo, apply_topology_event(targets, event), params, k_max=k_max)
