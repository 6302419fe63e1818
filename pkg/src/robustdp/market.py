"""Finite scenario-tree market model: prices plus one-step ambiguity sets.

A market is a rooted tree of depth ``T`` whose nodes carry discounted price
vectors in ``R^d``.  Each non-terminal node owns a finite list of extreme
one-step priors over its children; the node's ambiguity set is the convex
hull of those extremes, so every infimum of an expectation over the set is
attained at one of the listed extremes.  Children ordering in the file is
the single source of truth for prior-vector indexing.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ParseError, ProbabilityError, StructureError, UnknownNode

PROB_TOL = 1e-12


@dataclass(frozen=True)
class Node:
    id: str
    t: int
    parent: str | None
    price: np.ndarray
    children: tuple[str, ...] = ()


@dataclass(frozen=True)
class AmbiguitySet:
    """Extreme one-step priors over the owner's children, hull-interpreted."""

    owner: str
    extremes: tuple[np.ndarray, ...]


class ScenarioTree:
    """Validated immutable event tree.

    ``nodes`` maps id -> Node; ``levels[t]`` lists node ids at depth ``t`` in
    file order, which makes backward sweeps simple level iterations.
    """

    def __init__(self, horizon: int, dim: int, nodes: dict[str, Node], root: str):
        self.T = horizon
        self.d = dim
        self.nodes = nodes
        self.root = root
        self.levels: list[list[str]] = [[] for _ in range(horizon + 1)]
        for node in nodes.values():
            self.levels[node.t].append(node.id)

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"unknown node {node_id!r}") from None

    def leaves(self) -> list[str]:
        return list(self.levels[self.T])

    def non_terminal(self) -> list[str]:
        out: list[str] = []
        for t in range(self.T):
            out.extend(self.levels[t])
        return out

    def path(self, leaf_id: str) -> list[str]:
        """Node ids from the root down to ``leaf_id`` inclusive."""
        chain = [leaf_id]
        node = self.node(leaf_id)
        while node.parent is not None:
            chain.append(node.parent)
            node = self.node(node.parent)
        return chain[::-1]


def increment(tree: ScenarioTree, child_id: str) -> np.ndarray:
    """Price increment from the parent of ``child_id`` to ``child_id``."""
    child = tree.node(child_id)
    if child.parent is None:
        raise UnknownNode(f"node {child_id!r} is the root; it has no increment")
    return child.price - tree.node(child.parent).price


def _check_prob_vector(vec: np.ndarray, where: str) -> np.ndarray:
    if np.any(np.isnan(vec)) or np.any(vec < 0.0):
        raise ProbabilityError(f"{where}: entries must be nonnegative, got {vec.tolist()}")
    total = float(vec.sum())
    if abs(total - 1.0) > PROB_TOL:
        raise ProbabilityError(f"{where}: entries sum to {total!r}, not 1")
    return vec


def load_market(text: bytes | str) -> tuple[ScenarioTree, dict[str, AmbiguitySet]]:
    """Parse and fully validate a market file.

    Raises ParseError on malformed JSON or a wrong document shape,
    StructureError for tree violations and ProbabilityError for bad prior
    vectors.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"market file is not UTF-8: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"market file is not valid JSON: {exc}") from exc

    if not isinstance(doc, dict):
        raise ParseError("market document must be a JSON object")
    for key in ("T", "d", "nodes", "priors"):
        if key not in doc:
            raise ParseError(f"market document lacks key {key!r}")
    horizon, dim = doc["T"], doc["d"]
    if not isinstance(horizon, int) or horizon < 1:
        raise ParseError(f"T must be an integer >= 1, got {horizon!r}")
    if not isinstance(dim, int) or dim < 1:
        raise ParseError(f"d must be an integer >= 1, got {dim!r}")

    raw_nodes = doc["nodes"]
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ParseError("'nodes' must be a nonempty list")

    parsed: dict[str, dict] = {}
    children: dict[str, list[str]] = {}
    root_id: str | None = None
    for entry in raw_nodes:
        if not isinstance(entry, dict):
            raise ParseError(f"node entry {entry!r} is not an object")
        try:
            nid, t, parent, price = entry["id"], entry["t"], entry["parent"], entry["price"]
        except KeyError as exc:
            raise ParseError(f"node entry {entry!r} lacks key {exc}") from None
        if not isinstance(nid, str):
            raise ParseError(f"node id {nid!r} is not a string")
        if nid in parsed:
            raise StructureError(f"duplicate node id {nid!r}")
        price_arr = np.asarray(price, dtype=float)
        if price_arr.shape != (dim,) or not np.all(np.isfinite(price_arr)):
            raise StructureError(f"node {nid!r}: price must be a finite {dim}-vector")
        if not isinstance(t, int) or not 0 <= t <= horizon:
            raise StructureError(f"node {nid!r}: depth {t!r} outside [0, {horizon}]")
        parsed[nid] = {"t": t, "parent": parent, "price": price_arr}
        children.setdefault(nid, [])
        if parent is None:
            if t != 0:
                raise StructureError(f"node {nid!r} has no parent but depth {t}")
            if root_id is not None:
                raise StructureError(f"two roots: {root_id!r} and {nid!r}")
            root_id = nid
        else:
            children.setdefault(parent, []).append(nid)
    if root_id is None:
        raise StructureError("no root node (parent == null) found")

    nodes: dict[str, Node] = {}
    for nid, info in parsed.items():
        parent = info["parent"]
        if parent is not None:
            if parent not in parsed:
                raise StructureError(f"node {nid!r} has unknown parent {parent!r}")
            if parsed[parent]["t"] != info["t"] - 1:
                raise StructureError(
                    f"node {nid!r} at depth {info['t']} has parent at depth {parsed[parent]['t']}"
                )
        kids = tuple(children[nid])
        if info["t"] == horizon and kids:
            raise StructureError(f"node {nid!r} at terminal depth has children")
        if info["t"] < horizon and not kids:
            raise StructureError(f"non-terminal node {nid!r} has no children")
        nodes[nid] = Node(id=nid, t=info["t"], parent=parent, price=info["price"], children=kids)

    tree = ScenarioTree(horizon, dim, nodes, root_id)

    raw_priors = doc["priors"]
    if not isinstance(raw_priors, dict):
        raise ParseError("'priors' must be an object")
    ambiguity: dict[str, AmbiguitySet] = {}
    for nid in tree.non_terminal():
        if nid not in raw_priors:
            raise StructureError(f"non-terminal node {nid!r} lacks a prior set")
        vectors = raw_priors[nid]
        if not isinstance(vectors, list) or not vectors:
            raise ProbabilityError(f"prior set of node {nid!r} must be a nonempty list")
        n_children = len(nodes[nid].children)
        extremes = []
        for k, vec in enumerate(vectors):
            arr = np.asarray(vec, dtype=float)
            if arr.shape != (n_children,):
                raise ProbabilityError(
                    f"prior {k} of node {nid!r} has length {arr.shape}, node has "
                    f"{n_children} children"
                )
            extremes.append(_check_prob_vector(arr, f"prior {k} of node {nid!r}"))
        ambiguity[nid] = AmbiguitySet(owner=nid, extremes=tuple(extremes))
    for nid in raw_priors:
        if nid not in nodes:
            raise StructureError(f"prior set for unknown node {nid!r}")
        if not nodes[nid].children:
            raise StructureError(f"prior set for terminal node {nid!r}")
    return tree, ambiguity


def dump_market(tree: ScenarioTree, ambiguity: dict[str, AmbiguitySet]) -> str:
    """Serialize back to the market file format (stable node ordering)."""
    node_list = []
    for t in range(tree.T + 1):
        for nid in tree.levels[t]:
            node = tree.nodes[nid]
            node_list.append(
                {"id": node.id, "t": node.t, "parent": node.parent, "price": node.price.tolist()}
            )
    priors = {nid: [ext.tolist() for ext in amb.extremes] for nid, amb in ambiguity.items()}
    return json.dumps({"T": tree.T, "d": tree.d, "nodes": node_list, "priors": priors})


@dataclass(frozen=True)
class ProductPriorSpec:
    """One stochastic kernel per non-terminal node, as mixing weights.

    ``mixing[node_id]`` holds convex weights over that node's listed extreme
    priors; the realized kernel over children is the corresponding convex
    combination.  Storing weights (not the combined vector) keeps membership
    in the ambiguity hull certifiable by construction.
    """

    mixing: dict[str, np.ndarray] = field(default_factory=dict)

    def kernel(self, ambiguity: dict[str, AmbiguitySet], node_id: str) -> np.ndarray:
        amb = ambiguity[node_id]
        weights = self.mixing[node_id]
        out = np.zeros_like(amb.extremes[0])
        for w, ext in zip(weights, amb.extremes):
            out = out + w * ext
        return out


def enumerate_extreme_products(
    tree: ScenarioTree, ambiguity: dict[str, AmbiguitySet]
) -> Iterator[ProductPriorSpec]:
    """Yield every assignment of one extreme prior per non-terminal node.

    The count is the product of the extreme counts over nodes, which can be
    astronomically large; the iterator is lazy.
    """
    node_ids = tree.non_terminal()
    choice_sets = [range(len(ambiguity[nid].extremes)) for nid in node_ids]
    for combo in itertools.product(*choice_sets):
        mixing = {}
        for nid, pick in zip(node_ids, combo):
            w = np.zeros(len(ambiguity[nid].extremes))
            w[pick] = 1.0
            mixing[nid] = w
        yield ProductPriorSpec(mixing=mixing)


def count_extreme_products(tree: ScenarioTree, ambiguity: dict[str, AmbiguitySet]) -> int:
    return math.prod(len(ambiguity[nid].extremes) for nid in tree.non_terminal())


def leaf_distribution(
    tree: ScenarioTree, ambiguity: dict[str, AmbiguitySet], spec: ProductPriorSpec
) -> dict[str, float]:
    """Push the spec's kernels forward from the root onto the leaves."""
    mass = {tree.root: 1.0}
    for t in range(tree.T):
        for nid in tree.levels[t]:
            here = mass.get(nid, 0.0)
            kern = spec.kernel(ambiguity, nid)
            for child, q in zip(tree.nodes[nid].children, kern):
                mass[child] = mass.get(child, 0.0) + here * float(q)
    return {leaf: mass.get(leaf, 0.0) for leaf in tree.leaves()}


def reachable_leaves(tree: ScenarioTree, ambiguity: dict[str, AmbiguitySet]) -> set[str]:
    """Leaves charged by at least one extreme product.

    A leaf is reachable iff every edge on its root path gets positive mass
    from some extreme of the edge's parent node; per-node choices are
    independent, so no product enumeration is needed.
    """
    out = set()
    for leaf in tree.leaves():
        chain = tree.path(leaf)
        ok = True
        for parent, child in zip(chain, chain[1:]):
            idx = tree.nodes[parent].children.index(child)
            if max(float(ext[idx]) for ext in ambiguity[parent].extremes) <= 0.0:
                ok = False
                break
        if ok:
            out.add(leaf)
    return out
