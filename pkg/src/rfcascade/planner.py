"""Cascade planning for filter banks.

Nodes are bank members plus the input. An edge u -> w exists when w can be
reached from u by a feasible incremental kernel; its cost is the kernel's number
of nonzero taps times the field size. Feasibility follows a cone ordering, so the
graph is acyclic once mutually reachable (identical) members are ordered by
index, and the cheapest arborescence takes the cheapest incoming edge per node.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from graphlib import TopologicalSorter

import numpy as np

from . import engine
from .cascade import (SpatialIncrement, STIncrement, TimeCausalIncrement, cascade_spatial,
                      cascade_st, cascade_timecausal)
from .params import CovMat2, SpatialParams, STParams, smoothing_key

INPUT = 0
PLAN_COLUMNS = ("from", "to", "kind", "c11", "c12", "c22", "tau", "v1", "v2", "mu", "c", "est_cost")


@dataclass
class BankSpec:
    """Targets (params, derivative ops) of one family; optional members may be skipped by the planner."""

    family: str  # "spatial", "st" or "timecausal"
    targets: list
    optional: list = field(default_factory=list)

    def __post_init__(self):
        if not self.targets:
            raise ValueError("bank needs at least one target")
        want = SpatialParams if self.family == "spatial" else STParams
        for p, _ in list(self.targets) + [(q, ()) for q in self.optional]:
            if not isinstance(p, want):
                raise TypeError(f"{self.family} bank holds {want.__name__}, got {type(p).__name__}")
            if self.family == "timecausal" and not p.causal:
                raise ValueError("time-causal bank members need c")
            if self.family == "st" and p.causal:
                raise ValueError("Gaussian-in-time bank members must not set c")

    @property
    def params(self) -> list:
        return [p for p, _ in self.targets] + list(self.optional)


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: str  # "direct" or "increment"
    step: object  # params for direct edges, an increment otherwise
    cost: int


@dataclass
class CascadePlan:
    family: str
    nodes: list  # index 0 is the input (None)
    ops: list
    edges: list
    spacing: tuple
    shape: tuple
    truncation: float
    direct_cost: int

    @property
    def total_cost(self) -> int:
        return int(sum(e.cost for e in self.edges))

    @property
    def savings(self) -> float:
        return self.direct_cost / self.total_cost if self.total_cost else 1.0

    def parent(self) -> dict:
        return {e.dst: e for e in self.edges}


def _cells(shape) -> int:
    return int(np.prod(shape))


def edge_kernel(family, step, spacing, truncation=5.0):
    if isinstance(step, (SpatialIncrement, STIncrement, TimeCausalIncrement)):
        return engine.sample_increment(step, spacing, truncation)
    return engine.sample(step, family, spacing, truncation)


def _increment(family, pu, pw):
    if family == "spatial":
        return cascade_spatial(pu, pw)
    if family == "st":
        return cascade_st(pu, pw)
    try:
        return cascade_timecausal(pu, pw)
    except ValueError:
        return None


def build_feasibility_graph(bank: BankSpec, spacing, shape, truncation: float = 5.0,
                            min_increment_std: float = 0.0) -> dict:
    """Weighted digraph {(u, w): Edge}; node 0 is the input, then bank.params in order."""
    nodes = [None] + bank.params
    cells = _cells(shape)
    edges = {}
    for w in range(1, len(nodes)):
        k = edge_kernel(bank.family, nodes[w], spacing, truncation)
        edges[(INPUT, w)] = Edge(INPUT, w, "direct", nodes[w], k.nnz * cells)
    for u, w in itertools.permutations(range(1, len(nodes)), 2):
        pu, pw = nodes[u], nodes[w]
        if smoothing_key(pu) == smoothing_key(pw) and u > w:
            continue  # identical members: only the lower index feeds the higher
        inc = _increment(bank.family, pu, pw)
        if inc is None or not inc.feasible:
            continue
        if min_increment_std > 0:
            d = inc.delta_prod
            lam = np.linalg.eigvalsh(d.as_array())
            if 0 < lam.max() and np.sqrt(max(lam.min(), 0.0)) < min_increment_std:
                continue
        try:
            k = engine.sample_increment(inc, spacing, truncation)
        except ValueError:
            continue  # degenerate increment not representable on this grid
        edges[(u, w)] = Edge(u, w, "increment", inc, k.nnz * cells)
    return edges


def _order_key(p) -> tuple:
    return (0,) if p is None else (1,) + smoothing_key(p)


def _choose(nodes, edges, active) -> list:
    """Cheapest incoming edge per active node; ties: fewer hops, then parameter order."""
    preds = {w: [u for (u, x) in edges if x == w and (u == INPUT or u in active)] for w in active}
    order = TopologicalSorter({w: [u for u in preds[w] if u != INPUT] for w in active}).static_order()
    hops = {INPUT: 0}
    chosen = []
    for w in order:
        best = min(preds[w], key=lambda u: (edges[(u, w)].cost, hops[u] + 1, _order_key(nodes[u]), u))
        hops[w] = hops[best] + 1
        chosen.append(edges[(best, w)])
    return chosen


def plan(bank: BankSpec, spacing, shape, strategy: str = "shortest_path", truncation: float = 5.0,
         min_increment_std: float = 0.0) -> CascadePlan:
    """Plan a bank; shortest_path picks the cheapest feasible arborescence, direct_only a star."""
    edges = build_feasibility_graph(bank, spacing, shape, truncation, min_increment_std)
    nodes = [None] + bank.params
    ops = [()] + [tuple(o) for _, o in bank.targets] + [()] * len(bank.optional)
    n_t = len(bank.targets)
    targets = set(range(1, n_t + 1))
    direct = [edges[(INPUT, w)] for w in sorted(targets)]
    direct_cost = sum(e.cost for e in direct)
    if strategy == "direct_only":
        chosen = direct
    elif strategy == "shortest_path":
        opt = list(range(n_t + 1, len(nodes)))
        best = None
        for r in range(len(opt) + 1):
            for extra in itertools.combinations(opt, r):
                cand = _choose(nodes, edges, targets | set(extra))
                cand = _prune(cand, targets)
                cost = sum(e.cost for e in cand)
                if best is None or cost < best[0]:
                    best = (cost, cand)
        chosen = best[1]
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    chosen = sorted(chosen, key=lambda e: e.dst)
    return CascadePlan(bank.family, nodes, ops, chosen, engine._spacing(spacing, len(shape)), tuple(shape),
                       truncation, direct_cost)


def _prune(chosen, targets):
    """Drop optional nodes that feed no target."""
    parent = {e.dst: e for e in chosen}
    keep = set()
    for t in targets:
        n = t
        while n != INPUT and n not in keep:
            keep.add(n)
            n = parent[n].src
    return [e for e in chosen if e.dst in keep]


def brute_force_cost(bank: BankSpec, spacing, shape, truncation: float = 5.0) -> int:
    """Minimum arborescence cost by enumerating every parent assignment (targets only)."""
    edges = build_feasibility_graph(bank, spacing, shape, truncation)
    n = len(bank.targets)
    options = [[u for (u, w) in edges if w == t and u <= n] for t in range(1, n + 1)]
    best = None
    for choice in itertools.product(*options):
        parent = dict(zip(range(1, n + 1), choice))
        ok = True
        for t in parent:
            seen, x = set(), t
            while x != INPUT:
                if x in seen:
                    ok = False
                    break
                seen.add(x)
                x = parent[x]
            if not ok:
                break
        if ok:
            cost = sum(edges[(parent[t], t)].cost for t in parent)
            best = cost if best is None else min(best, cost)
    return best


def execute(plan: CascadePlan, f, counter=None, accuracy: int = 6) -> dict:
    """Run every edge in dependency order; returns {target index: smoothed field or [op responses]}."""
    f = np.asarray(f, dtype=float)
    fields = {INPUT: f}
    for e in _in_order(plan.edges):
        k = edge_kernel(plan.family, e.step, plan.spacing, plan.truncation)
        fields[e.dst] = engine.convolve(fields[e.src], k, counter=counter)
    out = {}
    for w in sorted(fields):
        if w == INPUT:
            continue
        ops = plan.ops[w]
        out[w] = [engine.apply_deriv(fields[w], op, plan.spacing, accuracy) for op in ops] if ops else fields[w]
    return out


def _in_order(edges):
    by_dst = {e.dst: e for e in edges}
    deps = {e.dst: ([e.src] if e.src != INPUT else []) for e in edges}
    return [by_dst[w] for w in TopologicalSorter(deps).static_order() if w in by_dst]


def path_kernels(plan: CascadePlan, target: int) -> list:
    """Kernels applied, in order, on the way from the input to a node."""
    parent = plan.parent()
    chain = []
    n = target
    while n != INPUT:
        chain.append(parent[n])
        n = parent[n].src
    return [edge_kernel(plan.family, e.step, plan.spacing, plan.truncation) for e in reversed(chain)]


def compose_path(plan: CascadePlan, target: int):
    """(C, tau, tau*v) accumulated along the plan path: addition laws of the increments."""
    from .cascade import compose_check
    parent = plan.parent()
    chain = []
    n = target
    while n != INPUT:
        chain.append(parent[n])
        n = parent[n].src
    chain.reverse()
    p = chain[0].step
    for e in chain[1:]:
        p = compose_check(e.step, p)
    return p


# --- serialization ----------------------------------------------------------------------

def _row(e: Edge) -> list:
    s = e.step
    nan = float("nan")
    if isinstance(s, SpatialParams):
        C = s.prod
        return [e.src, e.dst, "spatial", C.s11, C.s12, C.s22, nan, nan, nan, nan, nan, e.cost]
    if isinstance(s, STParams):
        C = s.prod
        kind = "timecausal" if s.causal else "st"
        return [e.src, e.dst, kind, C.s11, C.s12, C.s22, s.tau, s.v[0], s.v[1], nan,
                s.c if s.causal else nan, e.cost]
    C = s.delta_prod
    if isinstance(s, SpatialIncrement):
        return [e.src, e.dst, "spatial_inc", C.s11, C.s12, C.s22, nan, nan, nan, nan, nan, e.cost]
    if isinstance(s, STIncrement):
        return [e.src, e.dst, "st_inc", C.s11, C.s12, C.s22, s.delta_tau, s.delta_v[0], s.delta_v[1],
                nan, nan, e.cost]
    return [e.src, e.dst, "timecausal_inc", C.s11, C.s12, C.s22, nan, s.v[0], s.v[1], s.mu, s.c, e.cost]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return "nan" if x != x else format(float(x), ".17g")


def plan_to_csv(plan: CascadePlan) -> str:
    buf = io.StringIO()
    buf.write(f"# family={plan.family} shape={'x'.join(map(str, plan.shape))} "
              f"spacing={','.join(_fmt(s) for s in plan.spacing)} truncation={_fmt(plan.truncation)}\n")
    buf.write(f"# total_cost={plan.total_cost} direct_cost={plan.direct_cost} savings={_fmt(plan.savings)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLAN_COLUMNS)
    for e in plan.edges:
        w.writerow([_fmt(x) for x in _row(e)])
    return buf.getvalue()


def plan_from_csv(text: str) -> CascadePlan:
    """Rebuild an executable plan (node params are not stored; targets are the edge endpoints)."""
    lines = text.splitlines()
    meta = {}
    for ln in lines:
        if ln.startswith("#"):
            for tok in ln[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
    rows = list(csv.DictReader([ln for ln in lines if not ln.startswith("#")]))
    if not rows or tuple(rows[0].keys()) != PLAN_COLUMNS:
        raise ValueError("not a plan file")
    family = meta.get("family", "spatial")
    spacing = tuple(float(x) for x in meta["spacing"].split(","))
    shape = tuple(int(x) for x in meta["shape"].split("x"))
    trunc = float(meta.get("truncation", 5.0))
    edges = []
    n_nodes = 1
    for r in rows:
        kind = r["kind"]
        C = CovMat2(float(r["c11"]), float(r["c12"]), float(r["c22"]))
        v = (float(r["v1"]), float(r["v2"]))
        if kind == "spatial":
            step = SpatialParams(1.0, C)
        elif kind in ("st", "timecausal"):
            c = float(r["c"]) if kind == "timecausal" else None
            step = STParams(1.0, C, float(r["tau"]), v, c)
        elif kind == "spatial_inc":
            step = SpatialIncrement(C, True)
        elif kind == "st_inc":
            step = STIncrement(float(r["tau"]), v, C, True, float(r["tau"]) == 0.0)
        elif kind == "timecausal_inc":
            step = TimeCausalIncrement(float(r["mu"]), C, v, True, float(r["c"]))
        else:
            raise ValueError(f"unknown edge kind {kind!r}")
        e = Edge(int(r["from"]), int(r["to"]), "direct" if "_inc" not in kind else "increment",
                 step, int(r["est_cost"]))
        edges.append(e)
        n_nodes = max(n_nodes, e.dst + 1, e.src + 1)
    nodes = [None] * n_nodes
    for e in edges:
        if e.kind == "direct":
            nodes[e.dst] = e.step
    plan_ = CascadePlan(family, nodes, [()] * n_nodes, edges, spacing, shape, trunc,
                        int(meta.get("direct_cost", 0)))
    return plan_
