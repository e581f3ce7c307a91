"""Backward induction for Dynkin games on finite layered lattices.

A :class:`FilteredLattice` stores one :class:`Layer` per time index.  Nodes
of layer ``k`` point to children in layer ``k+1`` through a padded
``(m, b)`` child-index table (``-1`` marks padding) and a matching
probability table (``0`` on padding).  Values may be floats or exact
rationals (``fractions.Fraction`` in object arrays).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import CapacityError, MalformedLattice

PROB_TOL = 1e-12
DEFAULT_DUMP_LIMIT = 200_000


@dataclass
class Layer:
    lower: np.ndarray
    upper: np.ndarray
    children: np.ndarray | None = None
    probs: np.ndarray | None = None
    ids: np.ndarray | None = None
    price: np.ndarray | None = None
    keys: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.lower)


@dataclass
class FilteredLattice:
    layers: list[Layer]
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def n(self) -> int:
        return len(self.layers) - 1

    @property
    def num_nodes(self) -> int:
        return sum(len(layer) for layer in self.layers)

    def node_id(self, k: int, index: int):
        layer = self.layers[k]
        if layer.ids is not None:
            return layer.ids[index].item() if hasattr(layer.ids[index], "item") else layer.ids[index]
        return sum(len(l) for l in self.layers[:k]) + index

    @property
    def root(self):
        return self.node_id(0, 0)

    def validate(self) -> None:
        if not self.layers:
            raise MalformedLattice("lattice has no layers")
        if len(self.layers[0]) != 1:
            raise MalformedLattice(f"time index 0 must hold exactly the root, found {len(self.layers[0])} nodes")
        for k, layer in enumerate(self.layers):
            m = len(layer.lower)
            if len(layer.upper) != m:
                raise MalformedLattice(f"layer {k}: lower/upper length mismatch")
            bad = np.flatnonzero(~(layer.lower <= layer.upper))
            if bad.size:
                raise MalformedLattice("lower payoff exceeds upper payoff", self.node_id(k, bad[0]))
            bad = np.flatnonzero(~(layer.lower >= 0))
            if bad.size:
                raise MalformedLattice("negative payoff", self.node_id(k, bad[0]))
            terminal = k == len(self.layers) - 1
            if terminal:
                if layer.children is not None and np.any(layer.children >= 0):
                    raise MalformedLattice(f"terminal layer {k} has transitions")
                continue
            if layer.children is None or layer.probs is None:
                raise MalformedLattice(f"layer {k} is not terminal but has no transitions")
            ch, pr = layer.children, layer.probs
            if ch.shape != pr.shape or ch.ndim != 2 or ch.shape[0] != m:
                raise MalformedLattice(f"layer {k}: transition tables have shape {ch.shape} / {pr.shape}")
            nxt = len(self.layers[k + 1])
            live = ch >= 0
            if np.any(ch >= nxt):
                i = np.flatnonzero(np.any(ch >= nxt, axis=1))[0]
                raise MalformedLattice("child index outside the next time layer", self.node_id(k, i))
            bad_rows = np.flatnonzero(np.any(live & ~(pr > 0), axis=1))
            if bad_rows.size:
                raise MalformedLattice("non-positive transition probability", self.node_id(k, bad_rows[0]))
            bad_rows = np.flatnonzero(np.any(~live & (pr != 0), axis=1))
            if bad_rows.size:
                raise MalformedLattice("probability on a padding slot", self.node_id(k, bad_rows[0]))
            bad_rows = np.flatnonzero(~np.any(live, axis=1))
            if bad_rows.size:
                raise MalformedLattice("non-terminal node without children", self.node_id(k, bad_rows[0]))
            totals = _kahan_rows(pr)
            bad_rows = np.flatnonzero(~(abs(totals - 1) <= PROB_TOL))
            if bad_rows.size:
                i = bad_rows[0]
                raise MalformedLattice(f"transition probabilities sum to {totals[i]!r}", self.node_id(k, i))

    # ------------------------------------------------------------------ JSON

    def to_json(self, max_nodes: int = DEFAULT_DUMP_LIMIT) -> dict[str, Any]:
        if self.num_nodes > max_nodes:
            raise CapacityError(f"lattice has {self.num_nodes} nodes, dump limit is {max_nodes}")
        nodes = []
        for k, layer in enumerate(self.layers):
            for i in range(len(layer)):
                kids = []
                if layer.children is not None:
                    for c, p in zip(layer.children[i], layer.probs[i]):
                        if c >= 0:
                            kids.append([self.node_id(k + 1, int(c)), float(p)])
                nodes.append(
                    {
                        "id": self.node_id(k, i),
                        "k": k,
                        "lower": float(layer.lower[i]),
                        "upper": float(layer.upper[i]),
                        "children": kids,
                    }
                )
        return {"root": self.root, "nodes": nodes, "meta": _jsonable(self.meta)}

    def dumps(self, max_nodes: int = DEFAULT_DUMP_LIMIT) -> str:
        return json.dumps(self.to_json(max_nodes), sort_keys=True)

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "FilteredLattice":
        return from_nodes(data["nodes"], data["root"], meta=data.get("meta") or {})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def from_nodes(nodes: Sequence[dict[str, Any]], root, meta: dict | None = None, dtype=float) -> FilteredLattice:
    """Build a lattice from a node list.

    Each node is ``{"id", "k", "lower", "upper", "children": [[id, p], ...]}``.
    Within a time layer nodes keep their input order.
    """
    by_id: dict[Any, dict] = {}
    for node in nodes:
        nid = node["id"]
        if nid in by_id:
            raise MalformedLattice("duplicate node id", nid)
        by_id[nid] = node
    if root not in by_id:
        raise MalformedLattice("root id not present", root)
    if by_id[root]["k"] != 0:
        raise MalformedLattice("root must have time index 0", root)
    n = max(node["k"] for node in nodes)
    per_layer: list[list[dict]] = [[] for _ in range(n + 1)]
    for node in nodes:
        k = node["k"]
        if not isinstance(k, int) or k < 0:
            raise MalformedLattice(f"bad time index {k!r}", node["id"])
        per_layer[k].append(node)
    if any(not nodes_k for nodes_k in per_layer):
        raise MalformedLattice("time layers are not contiguous")
    index = {}
    for k, layer_nodes in enumerate(per_layer):
        for i, node in enumerate(layer_nodes):
            index[node["id"]] = (k, i)

    layers = []
    for k, layer_nodes in enumerate(per_layer):
        lower = np.array([nd["lower"] for nd in layer_nodes], dtype=dtype)
        upper = np.array([nd["upper"] for nd in layer_nodes], dtype=dtype)
        ids = np.array([nd["id"] for nd in layer_nodes], dtype=object)
        if k == n:
            for nd in layer_nodes:
                if nd.get("children"):
                    raise MalformedLattice("terminal node has transitions", nd["id"])
            layers.append(Layer(lower, upper, ids=ids))
            continue
        width = max((len(nd.get("children") or []) for nd in layer_nodes), default=0)
        width = max(width, 1)
        ch = np.full((len(layer_nodes), width), -1, dtype=np.int64)
        pr = np.zeros((len(layer_nodes), width), dtype=dtype)
        if dtype is object:
            pr[:] = 0
        for i, nd in enumerate(layer_nodes):
            for j, (cid, p) in enumerate(nd.get("children") or []):
                if cid not in index:
                    raise MalformedLattice(f"unknown child id {cid!r}", nd["id"])
                ck, ci = index[cid]
                if ck != k + 1:
                    raise MalformedLattice(f"child {cid!r} is at time {ck}, expected {k + 1}", nd["id"])
                ch[i, j] = ci
                pr[i, j] = p
        layers.append(Layer(lower, upper, ch, pr, ids=ids))
    return FilteredLattice(layers, meta=dict(meta or {}))


def _kahan_rows(probs: np.ndarray) -> np.ndarray:
    """Row sums accumulated column by column with compensation."""
    s = probs[:, 0] * 0
    c = probs[:, 0] * 0
    for j in range(probs.shape[1]):
        y = probs[:, j] - c
        t = s + y
        c = (t - s) - y
        s = t
    return s


def expectation(layer: Layer, next_values: np.ndarray) -> np.ndarray:
    """``E[next | node]`` for every node of ``layer``.

    Children are summed in stored column order with Kahan compensation, so
    the result does not depend on how nodes are partitioned across workers.
    """
    ch, pr = layer.children, layer.probs
    s = pr[:, 0] * 0
    c = pr[:, 0] * 0
    for j in range(ch.shape[1]):
        term = pr[:, j] * next_values[np.where(ch[:, j] >= 0, ch[:, j], 0)]
        y = term - c
        t = s + y
        c = (t - s) - y
        s = t
    return s


@dataclass
class DPResult:
    values: list[np.ndarray]
    buyer_stop: list[np.ndarray]
    seller_cancel: list[np.ndarray]
    continuation: list[np.ndarray | None]
    lattice: FilteredLattice

    @property
    def V(self):
        return self.values[0][0]


def solve(lattice: FilteredLattice) -> DPResult:
    """Game value by backward induction.

    Terminal nodes pay the lower payoff; interior nodes take
    ``min(upper, max(lower, E[J_{k+1}]))``.  A flag is set wherever the
    corresponding bound is attained (both on ties).
    """
    n = lattice.n
    values: list[np.ndarray] = [None] * (n + 1)  # type: ignore[list-item]
    buyer: list[np.ndarray] = [None] * (n + 1)  # type: ignore[list-item]
    seller: list[np.ndarray] = [None] * (n + 1)  # type: ignore[list-item]
    cont: list[np.ndarray | None] = [None] * (n + 1)
    last = lattice.layers[n]
    values[n] = last.lower.copy()
    buyer[n] = np.ones(len(last), dtype=bool)
    seller[n] = np.asarray(last.lower == last.upper, dtype=bool)
    for k in range(n - 1, -1, -1):
        layer = lattice.layers[k]
        c = expectation(layer, values[k + 1])
        J = np.minimum(layer.upper, np.maximum(layer.lower, c))
        values[k] = J
        cont[k] = c
        buyer[k] = np.asarray(J == layer.lower, dtype=bool)
        seller[k] = np.asarray(J == layer.upper, dtype=bool)
    return DPResult(values, buyer, seller, cont, lattice)


def reach_probabilities(lattice: FilteredLattice) -> list[np.ndarray]:
    """Probability of visiting each node, propagated forward from the root."""
    out = [np.ones(1)]
    for k in range(lattice.n):
        layer = lattice.layers[k]
        live = layer.children >= 0
        w = (out[-1][:, None] * np.asarray(layer.probs, dtype=float))[live]
        out.append(np.bincount(layer.children[live], weights=w, minlength=len(lattice.layers[k + 1])))
    return out


def value(lattice: FilteredLattice):
    return solve(lattice).V


@dataclass
class StoppingRule:
    """Per-node stop flags; every terminal node stops."""

    flags: list[np.ndarray]

    def __post_init__(self):
        self.flags = [np.asarray(f, dtype=bool) for f in self.flags]
        self.flags[-1] = np.ones_like(self.flags[-1])

    def first_stop(self, path: Sequence[int]) -> int:
        """Stopping time along a path given as node indices per layer."""
        for k, i in enumerate(path):
            if self.flags[k][i]:
                return k
        raise AssertionError("terminal layer always stops")


def extract_strategies(result: DPResult) -> tuple[StoppingRule, StoppingRule]:
    """Return ``(buyer_rule, seller_rule)`` built from the attained-bound flags.

    The buyer stops at the first node where the value equals the exercise
    payoff; the seller cancels at the first node where it equals the
    cancellation payoff, or never (terminal) on paths without such a node.
    """
    return StoppingRule([f.copy() for f in result.buyer_stop]), StoppingRule([f.copy() for f in result.seller_cancel])
