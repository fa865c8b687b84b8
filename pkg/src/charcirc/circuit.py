"""Circuit graph: node table, scopes, structural validation and JSON persistence.

Nodes live in a flat table indexed by integer id, so a node may be shared by
several parents (the graph is a DAG, not a tree).  Circuits are immutable;
:class:`CircuitBuilder` assembles new ones.
"""
from __future__ import annotations

import json
import math
import operator
import os
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence, Union

from .errors import InvalidParameterError, StructuralError
from .leaves import CATEGORICAL, Leaf, leaf_from_dict

DISCRETE = "discrete"
CONTINUOUS = "continuous"
KINDS = (DISCRETE, CONTINUOUS)

WEIGHT_TOL = 1e-9
LOAD_RENORMALIZE_TOL = 1e-6


@dataclass(frozen=True)
class SumNode:
    children: tuple
    weights: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(int(c) for c in self.children))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))


@dataclass(frozen=True)
class ProductNode:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(int(c) for c in self.children))


@dataclass(frozen=True)
class LeafNode:
    var: int
    leaf: Leaf

    children: tuple = field(default=(), init=False, repr=False)


Node = Union[SumNode, ProductNode, LeafNode]


@dataclass(frozen=True)
class Violation:
    kind: str
    node: int | None
    message: str


@dataclass(frozen=True)
class ValidationReport:
    """Every violated structural invariant; empty iff the circuit is valid."""

    violations: tuple = ()

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def __iter__(self) -> Iterator[Violation]:
        return iter(self.violations)

    def kinds(self) -> set:
        return {v.kind for v in self.violations}

    def __str__(self):
        if self.is_valid:
            return "valid circuit"
        return "\n".join(f"[{v.kind}] node {v.node}: {v.message}" for v in self.violations)


@dataclass(frozen=True, eq=True)
class Circuit:
    """A rooted DAG of sum, product and leaf nodes over ``dim`` variables.

    ``column_kinds[j]`` is ``"discrete"`` or ``"continuous"``.
    """

    nodes: tuple
    root: int
    dim: int
    column_kinds: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if self.column_kinds is None:
            kinds = [CONTINUOUS] * self.dim
            for node in self.nodes:
                if isinstance(node, LeafNode) and node.leaf.family == CATEGORICAL and 0 <= node.var < self.dim:
                    kinds[node.var] = DISCRETE
            object.__setattr__(self, "column_kinds", tuple(kinds))
        else:
            object.__setattr__(self, "column_kinds", tuple(self.column_kinds))
        if not self.nodes:
            raise StructuralError("circuit has no nodes")
        if not 0 <= self.root < len(self.nodes):
            raise StructuralError(f"root id {self.root} is not a node")

    def __len__(self):
        return len(self.nodes)

    def node(self, node_id: int) -> Node:
        try:
            idx = operator.index(node_id)
        except TypeError:
            raise StructuralError(f"unknown node id {node_id!r}") from None
        if not 0 <= idx < len(self.nodes):
            raise StructuralError(f"unknown node id {node_id!r}")
        return self.nodes[idx]

    # structure -----------------------------------------------------------
    @cached_property
    def order(self) -> tuple:
        """Reachable node ids, children before parents (deterministic)."""
        _check_references(self)
        order, state = [], {}
        stack = [(self.root, 0)]
        while stack:
            nid, i = stack.pop()
            children = self.nodes[nid].children
            if i == 0:
                if state.get(nid) == 2:
                    continue
                state[nid] = 1
            if i < len(children):
                stack.append((nid, i + 1))
                child = children[i]
                mark = state.get(child)
                if mark == 1:
                    raise StructuralError(f"cycle detected through node {child}")
                if mark is None:
                    stack.append((child, 0))
            else:
                state[nid] = 2
                order.append(nid)
        return tuple(order)

    @cached_property
    def _scopes(self) -> dict:
        scopes = {}
        for nid in self.order:
            node = self.nodes[nid]
            if isinstance(node, LeafNode):
                scopes[nid] = (node.var,)
            else:
                scopes[nid] = tuple(sorted(set().union(*(scopes[c] for c in node.children))))
        return scopes

    def scope(self, node_id: int) -> tuple:
        self.node(node_id)
        node_id = operator.index(node_id)
        try:
            return self._scopes[node_id]
        except KeyError:
            # unreachable from the root; compute on its own
            return Circuit(self.nodes, node_id, self.dim, self.column_kinds).scope(node_id)

    @cached_property
    def leaf_ids(self) -> tuple:
        return tuple(i for i in self.order if isinstance(self.nodes[i], LeafNode))

    def is_valid(self) -> bool:
        return validate(self).is_valid

    @cached_property
    def _checked(self) -> bool:
        report = validate(self)
        if not report.is_valid:
            raise StructuralError(f"invalid circuit:\n{report}")
        return True

    def check(self) -> "Circuit":
        """Raise :class:`StructuralError` unless the circuit is valid."""
        self._checked  # noqa: B018  (evaluated for its side effect)
        return self

    def summary(self) -> dict:
        """Node counts by type, depth (edges on the longest root-leaf path) and leaf families."""
        depth = {}
        counts = Counter()
        families = Counter()
        for nid in self.order:
            node = self.nodes[nid]
            counts[type(node).__name__.replace("Node", "").lower()] += 1
            if isinstance(node, LeafNode):
                depth[nid] = 0
                families[node.leaf.family] += 1
            else:
                depth[nid] = 1 + max(depth[c] for c in node.children)
        return {
            "nodes": {k: counts.get(k, 0) for k in ("sum", "product", "leaf")},
            "depth": depth[self.root],
            "leaf_families": dict(sorted(families.items())),
        }

    def replace_nodes(self, replacements: dict) -> "Circuit":
        """Copy of the circuit with ``nodes[i]`` replaced by ``replacements[i]``."""
        nodes = list(self.nodes)
        for nid, node in replacements.items():
            nodes[nid] = node
        return Circuit(tuple(nodes), self.root, self.dim, self.column_kinds)


def _check_references(circuit: Circuit) -> None:
    n = len(circuit.nodes)
    for nid, node in enumerate(circuit.nodes):
        for child in node.children:
            if not 0 <= child < n:
                raise StructuralError(f"node {nid} references missing node {child}")


class CircuitBuilder:
    """Incrementally assemble a node table and freeze it into a :class:`Circuit`."""

    def __init__(self):
        self._nodes: list = []

    def add(self, node: Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def add_leaf(self, var: int, leaf: Leaf) -> int:
        return self.add(LeafNode(int(var), leaf))

    def add_product(self, children: Sequence[int]) -> int:
        return self.add(ProductNode(tuple(children)))

    def add_sum(self, children: Sequence[int], weights: Sequence[float]) -> int:
        return self.add(SumNode(tuple(children), tuple(weights)))

    def build(self, root: int, dim: int, column_kinds=None) -> Circuit:
        return Circuit(tuple(self._nodes), root, dim, column_kinds)


# validation ---------------------------------------------------------------

def _find_cycle(circuit: Circuit) -> int | None:
    """Some node on a directed cycle, or ``None``."""
    state = [0] * len(circuit.nodes)
    for start in range(len(circuit.nodes)):
        if state[start]:
            continue
        stack = [(start, 0)]
        state[start] = 1
        while stack:
            nid, i = stack.pop()
            children = circuit.nodes[nid].children
            if i < len(children):
                stack.append((nid, i + 1))
                child = children[i]
                if state[child] == 1:
                    return child
                if state[child] == 0:
                    state[child] = 1
                    stack.append((child, 0))
            else:
                state[nid] = 2
    return None


def validate(circuit: Circuit) -> ValidationReport:
    """List every violated structural invariant of ``circuit``.

    Raises :class:`StructuralError` for edges to missing nodes.
    """
    _check_references(circuit)
    out = []
    nodes = circuit.nodes

    if len(circuit.column_kinds) != circuit.dim or any(k not in KINDS for k in circuit.column_kinds):
        out.append(Violation("columns", None, "column kinds do not match the dimension"))

    for nid, node in enumerate(nodes):
        if isinstance(node, SumNode):
            w = node.weights
            if len(node.children) == 0 or len(w) != len(node.children):
                out.append(Violation("weights", nid, "sum needs one weight per child (>= 1 child)"))
            elif any(x < 0 or not math.isfinite(x) for x in w):
                out.append(Violation("weights", nid, "negative or non-finite weight"))
            elif abs(math.fsum(w) - 1.0) > WEIGHT_TOL:
                out.append(Violation("weights", nid, f"weights sum to {math.fsum(w)!r}"))
        elif isinstance(node, ProductNode):
            if len(node.children) == 0:
                out.append(Violation("empty_product", nid, "product has no children"))
        elif isinstance(node, LeafNode):
            if not 0 <= node.var < circuit.dim:
                out.append(Violation("leaf_var", nid, f"variable {node.var} outside 0..{circuit.dim - 1}"))
        else:
            out.append(Violation("node_type", nid, f"unknown node type {type(node).__name__}"))

    cyc = _find_cycle(circuit)
    if cyc is not None:
        out.append(Violation("cycle", cyc, "node lies on a directed cycle"))
        return ValidationReport(tuple(out))

    reachable = set(circuit.order)
    for nid in range(len(nodes)):
        if nid not in reachable:
            out.append(Violation("unreachable", nid, "node is not reachable from the root"))

    scopes = circuit._scopes
    for nid in circuit.order:
        node = nodes[nid]
        if isinstance(node, SumNode) and node.children:
            first = scopes[node.children[0]]
            if any(scopes[c] != first for c in node.children[1:]):
                out.append(Violation("non_smooth", nid, "sum children have different scopes"))
        elif isinstance(node, ProductNode) and node.children:
            total = sum(len(scopes[c]) for c in node.children)
            if total != len(scopes[nid]):
                out.append(Violation("non_decomposable", nid, "product children share variables"))

    if scopes[circuit.root] != tuple(range(circuit.dim)):
        out.append(Violation("root_scope", circuit.root, f"root scope {scopes[circuit.root]} != 0..{circuit.dim - 1}"))
    return ValidationReport(tuple(out))


def scope_of(circuit: Circuit, node: int) -> tuple:
    return circuit.scope(node)


def topological_order(circuit: Circuit) -> list:
    return list(circuit.order)


# JSON -----------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise InvalidParameterError(f"cannot serialise non-finite value {x!r}")
    return format(x, ".17g")


def _dump(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_dump(obj[k], indent, level + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_dump(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _dump(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    try:  # numpy scalars
        return _dump(obj.item(), indent, level)
    except AttributeError:
        raise TypeError(f"cannot serialise {type(obj).__name__}") from None


def canonical_json(obj, indent: int = 1) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits."""
    return _dump(obj, indent, 0) + "\n"


def circuit_to_dict(circuit: Circuit) -> dict:
    nodes = []
    for nid, node in enumerate(circuit.nodes):
        if isinstance(node, SumNode):
            nodes.append({"id": nid, "type": "sum", "children": list(node.children), "weights": list(node.weights)})
        elif isinstance(node, ProductNode):
            nodes.append({"id": nid, "type": "product", "children": list(node.children)})
        else:
            nodes.append({"id": nid, "type": "leaf", "var": node.var, "leaf": node.leaf.to_dict()})
    return {
        "dim": circuit.dim,
        "root": circuit.root,
        "columns": [{"index": j, "kind": k} for j, k in enumerate(circuit.column_kinds)],
        "nodes": nodes,
    }


def _renormalized(values, what: str, nid: int) -> tuple:
    vals = tuple(float(v) for v in values)
    total = math.fsum(vals)
    if abs(total - 1.0) <= WEIGHT_TOL:
        return vals
    if abs(total - 1.0) <= LOAD_RENORMALIZE_TOL and all(v >= 0 for v in vals):
        return tuple(v / total for v in vals)
    raise StructuralError(f"node {nid}: {what} sum to {total!r}, not 1")


def circuit_from_dict(payload: dict) -> Circuit:
    try:
        dim = int(payload["dim"])
        root = int(payload["root"])
        raw_nodes = sorted(payload["nodes"], key=lambda n: int(n["id"]))
        columns = sorted(payload.get("columns", []), key=lambda c: int(c["index"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise StructuralError(f"malformed circuit payload: {exc}") from None
    if [int(n["id"]) for n in raw_nodes] != list(range(len(raw_nodes))):
        raise StructuralError("node ids must be exactly 0..n-1")
    if columns and [int(c["index"]) for c in columns] != list(range(dim)):
        raise StructuralError("column indices must be exactly 0..dim-1")
    nodes = []
    for item in raw_nodes:
        nid = int(item["id"])
        kind = item.get("type")
        try:
            if kind == "sum":
                weights = _renormalized(item["weights"], "weights", nid)
                nodes.append(SumNode(tuple(item["children"]), weights))
            elif kind == "product":
                nodes.append(ProductNode(tuple(item["children"])))
            elif kind == "leaf":
                leaf_payload = dict(item["leaf"])
                if leaf_payload.get("family") == CATEGORICAL:
                    leaf_payload["probs"] = list(_renormalized(leaf_payload["probs"], "probs", nid))
                nodes.append(LeafNode(int(item["var"]), leaf_from_dict(leaf_payload)))
            else:
                raise StructuralError(f"node {nid} has unknown type {kind!r}")
        except (KeyError, TypeError) as exc:
            raise StructuralError(f"node {nid} is malformed: {exc}") from None
        except InvalidParameterError as exc:
            raise StructuralError(f"node {nid}: {exc}") from None
    kinds = tuple(c["kind"] for c in columns) if columns else None
    circuit = Circuit(tuple(nodes), root, dim, kinds)
    circuit.check()
    return circuit


def to_json(circuit: Circuit) -> str:
    return canonical_json(circuit_to_dict(circuit))


def from_json(text: str) -> Circuit:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StructuralError(f"model file is not valid JSON: {exc}") from None
    return circuit_from_dict(payload)


def save_circuit(circuit: Circuit, path) -> None:
    write_text_atomic(path, to_json(circuit))


def load_circuit(path) -> Circuit:
    with open(path, encoding="utf-8") as fh:
        return from_json(fh.read())


def write_text_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
