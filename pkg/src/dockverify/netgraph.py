"""Piecewise-linear computation graphs and feed-forward ReLU networks.

Controllers, certificates, abs/max gadgets and k-step closed-loop
unrollings all share one substrate: a topologically ordered graph of
vector-valued nodes (inputs, affine maps, ReLUs, clamps).  Networks load
from and save to a JSON schema whose floats are decimal strings that
round-trip binary64 exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Layer",
    "Mlp",
    "ParseError",
    "SchemaError",
    "load_network",
    "save_network",
    "forward",
    "Node",
    "PwlGraph",
    "GraphBuilder",
    "gadget_abs",
    "gadget_max",
    "compile_network",
    "compose_closed_loop",
]


class ParseError(ValueError):
    """A network file is malformed (bad JSON, missing or mistyped field)."""


class SchemaError(ValueError):
    """A network file parses but its dimensions or values are inconsistent."""


_ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True, eq=False)
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str


@dataclass(frozen=True, eq=False)
class Mlp:
    """A feed-forward network: affine layers with relu/identity activations."""

    layers: tuple[Layer, ...]

    def __post_init__(self) -> None:
        if not self.layers:
            raise SchemaError("network must have at least one layer")
        prev = None
        for i, layer in enumerate(self.layers):
            w = layer.weights
            b = layer.bias
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise SchemaError(
                    f"layer {i}: weights {w.shape} and bias {b.shape} do not agree"
                )
            if prev is not None and w.shape[1] != prev:
                raise SchemaError(
                    f"layer {i}: expects input of size {w.shape[1]}, previous layer emits {prev}"
                )
            if layer.activation not in _ACTIVATIONS:
                raise SchemaError(f"layer {i}: unknown activation {layer.activation!r}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise SchemaError(f"layer {i}: non-finite parameter")
            prev = w.shape[0]

    @property
    def input_dim(self) -> int:
        return int(self.layers[0].weights.shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.layers[-1].weights.shape[0])


def make_mlp(layers: Sequence[tuple[np.ndarray, np.ndarray, str]]) -> Mlp:
    """Build an Mlp from (weights, bias, activation) triples."""
    return Mlp(
        tuple(
            Layer(
                np.ascontiguousarray(w, dtype=np.float64),
                np.ascontiguousarray(b, dtype=np.float64),
                act,
            )
            for w, b, act in layers
        )
    )


def forward(net: Mlp, x) -> np.ndarray:
    """Evaluate the network on x of shape (input_dim,) or (..., input_dim)."""
    a = np.asarray(x, dtype=np.float64)
    if a.shape[-1:] != (net.input_dim,):
        raise ValueError(
            f"input has trailing dimension {a.shape[-1:]}, network expects {net.input_dim}"
        )
    for layer in net.layers:
        a = a @ layer.weights.T + layer.bias
        if layer.activation == "relu":
            a = np.maximum(a, 0.0)
    return a


def _float_to_str(v: float) -> str:
    return format(float(v), ".17g")


def _parse_float(v, where: str) -> float:
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError as exc:
            raise ParseError(f"{where}: not a decimal number: {v!r}") from exc
    if isinstance(v, (int, float)):
        return float(v)
    raise ParseError(f"{where}: expected a number, got {type(v).__name__}")


def save_network(net: Mlp, path) -> None:
    """Write the network JSON; floats become 17-significant-digit strings."""
    doc = {
        "input_dim": net.input_dim,
        "layers": [
            {
                "weights": [[_float_to_str(v) for v in row] for row in layer.weights],
                "bias": [_float_to_str(v) for v in layer.bias],
                "activation": layer.activation,
            }
            for layer in net.layers
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_network(path) -> Mlp:
    """Load a network JSON written by save_network (bit-exact round trip)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    for key in ("input_dim", "layers"):
        if key not in doc:
            raise ParseError(f"missing field {key!r}")
    if not isinstance(doc["layers"], list) or not doc["layers"]:
        raise ParseError("field 'layers' must be a non-empty list")
    layers = []
    for i, entry in enumerate(doc["layers"]):
        if not isinstance(entry, dict):
            raise ParseError(f"layer {i}: expected an object")
        for key in ("weights", "bias", "activation"):
            if key not in entry:
                raise ParseError(f"layer {i}: missing field {key!r}")
        rows = entry["weights"]
        if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
            raise ParseError(f"layer {i}: field 'weights' must be a list of rows")
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise SchemaError(f"layer {i}: ragged weight rows")
        w = np.array(
            [[_parse_float(v, f"layer {i} weights") for v in row] for row in rows]
        )
        if not isinstance(entry["bias"], list):
            raise ParseError(f"layer {i}: field 'bias' must be a list")
        b = np.array([_parse_float(v, f"layer {i} bias") for v in entry["bias"]])
        if b.shape[0] != w.shape[0]:
            raise SchemaError(
                f"layer {i}: bias length {b.shape[0]} does not match {w.shape[0]} rows"
            )
        layers.append((w, b, entry["activation"]))
    net = make_mlp(layers)
    if net.input_dim != doc["input_dim"]:
        raise SchemaError(
            f"declared input_dim {doc['input_dim']} but first layer expects {net.input_dim}"
        )
    return net


# ---------------------------------------------------------------------------
# Piecewise-linear graphs


@dataclass(frozen=True, eq=False)
class Node:
    """One graph node.

    kind "input":  index selects which input block this node reads.
    kind "affine": value = sum(mats[j] @ value(refs[j])) + bias.
    kind "relu":   elementwise max(value(ref), 0).
    kind "clamp":  elementwise clip of value(ref) into [lo, hi].
    """

    kind: str
    dim: int
    refs: tuple[int, ...] = ()
    index: int = -1
    mats: tuple[np.ndarray, ...] = ()
    bias: np.ndarray | None = None
    lo: float = 0.0
    hi: float = 0.0


@dataclass(frozen=True, eq=False)
class PwlGraph:
    """An immutable, topologically ordered piecewise-linear graph."""

    input_dims: tuple[int, ...]
    nodes: tuple[Node, ...]
    outputs: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.input_dims or any(d < 1 for d in self.input_dims):
            raise SchemaError("graph needs at least one input block of positive size")
        for i, node in enumerate(self.nodes):
            if any(r >= i or r < 0 for r in node.refs):
                raise SchemaError(f"node {i}: references must point at earlier nodes")
            if node.kind == "input":
                if not (0 <= node.index < len(self.input_dims)):
                    raise SchemaError(f"node {i}: bad input index {node.index}")
                if node.dim != self.input_dims[node.index]:
                    raise SchemaError(f"node {i}: input dim mismatch")
            elif node.kind == "affine":
                if len(node.mats) != len(node.refs):
                    raise SchemaError(f"node {i}: one matrix per reference required")
                for m, r in zip(node.mats, node.refs):
                    if m.shape != (node.dim, self.nodes[r].dim):
                        raise SchemaError(
                            f"node {i}: matrix shape {m.shape} does not map node {r}"
                        )
                    if not np.all(np.isfinite(m)):
                        raise SchemaError(f"node {i}: non-finite matrix")
                if node.bias is None or node.bias.shape != (node.dim,):
                    raise SchemaError(f"node {i}: bias must have shape ({node.dim},)")
                if not np.all(np.isfinite(node.bias)):
                    raise SchemaError(f"node {i}: non-finite bias")
            elif node.kind in ("relu", "clamp"):
                if len(node.refs) != 1 or self.nodes[node.refs[0]].dim != node.dim:
                    raise SchemaError(f"node {i}: needs one same-size reference")
                if node.kind == "clamp" and not (
                    np.isfinite(node.lo) and np.isfinite(node.hi) and node.lo <= node.hi
                ):
                    raise SchemaError(f"node {i}: clamp bounds invalid")
            else:
                raise SchemaError(f"node {i}: unknown kind {node.kind!r}")
        for o in self.outputs:
            if not (0 <= o < len(self.nodes)):
                raise SchemaError(f"output reference {o} out of range")

    @property
    def input_dim(self) -> int:
        return sum(self.input_dims)

    @property
    def output_dim(self) -> int:
        return sum(self.nodes[o].dim for o in self.outputs)

    @property
    def n_relu_units(self) -> int:
        return sum(n.dim for n in self.nodes if n.kind == "relu")

    def input_offsets(self) -> list[int]:
        offs = [0]
        for d in self.input_dims:
            offs.append(offs[-1] + d)
        return offs

    def eval_all(self, x) -> list[np.ndarray]:
        """Values of every node on x of shape (input_dim,) or (..., input_dim)."""
        a = np.asarray(x, dtype=np.float64)
        if a.shape[-1:] != (self.input_dim,):
            raise ValueError(
                f"input has trailing dimension {a.shape[-1:]}, graph expects {self.input_dim}"
            )
        offs = self.input_offsets()
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.kind == "input":
                v = a[..., offs[node.index] : offs[node.index + 1]]
            elif node.kind == "affine":
                v = np.broadcast_to(node.bias, a.shape[:-1] + (node.dim,)).copy()
                for m, r in zip(node.mats, node.refs):
                    v += values[r] @ m.T
            elif node.kind == "relu":
                v = np.maximum(values[node.refs[0]], 0.0)
            else:
                v = np.clip(values[node.refs[0]], node.lo, node.hi)
            values.append(v)
        return values

    def eval(self, x) -> np.ndarray:
        """Concatenated output-node values on x."""
        values = self.eval_all(x)
        return np.concatenate([values[o] for o in self.outputs], axis=-1)


class GraphBuilder:
    """Accumulates nodes in topological order and produces a PwlGraph."""

    def __init__(self) -> None:
        self._input_dims: list[int] = []
        self._nodes: list[Node] = []
        self._outputs: list[int] = []

    def _add(self, node: Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def dim(self, ref: int) -> int:
        return self._nodes[ref].dim

    def input(self, dim: int) -> int:
        self._input_dims.append(dim)
        return self._add(Node(kind="input", dim=dim, index=len(self._input_dims) - 1))

    def affine(self, refs: Sequence[int], mats: Sequence, bias=None) -> int:
        mats_t = tuple(np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in mats)
        if not mats_t:
            raise ValueError("affine node needs at least one reference")
        dim = mats_t[0].shape[0]
        b = np.zeros(dim) if bias is None else np.asarray(bias, dtype=np.float64).reshape(dim)
        return self._add(
            Node(kind="affine", dim=dim, refs=tuple(refs), mats=mats_t, bias=b)
        )

    def relu(self, ref: int) -> int:
        return self._add(Node(kind="relu", dim=self.dim(ref), refs=(ref,)))

    def clamp(self, ref: int, lo: float, hi: float) -> int:
        return self._add(
            Node(kind="clamp", dim=self.dim(ref), refs=(ref,), lo=float(lo), hi=float(hi))
        )

    def select(self, ref: int, indices: Sequence[int]) -> int:
        """Affine node extracting the given coordinates of ref."""
        d = self.dim(ref)
        m = np.zeros((len(indices), d))
        for row, i in enumerate(indices):
            m[row, i] = 1.0
        return self.affine([ref], [m])

    def scale(self, ref: int, factor: float) -> int:
        return self.affine([ref], [factor * np.eye(self.dim(ref))])

    def add_output(self, ref: int) -> int:
        """Register ref as an output block; returns its offset in the flat output."""
        offset = sum(self._nodes[o].dim for o in self._outputs)
        self._outputs.append(ref)
        return offset

    def add_mlp(self, ref: int, net: Mlp) -> int:
        """Append the network's layers applied to ref; returns the final node."""
        if self.dim(ref) != net.input_dim:
            raise SchemaError(
                f"node of size {self.dim(ref)} fed to network expecting {net.input_dim}"
            )
        cur = ref
        for layer in net.layers:
            cur = self.affine([cur], [layer.weights], layer.bias)
            if layer.activation == "relu":
                cur = self.relu(cur)
        return cur

    def build(self) -> PwlGraph:
        return PwlGraph(
            input_dims=tuple(self._input_dims),
            nodes=tuple(self._nodes),
            outputs=tuple(self._outputs),
        )


def gadget_abs(builder: GraphBuilder, ref: int) -> int:
    """|u| as relu(u) + relu(-u), elementwise."""
    d = builder.dim(ref)
    pos = builder.relu(ref)
    neg = builder.relu(builder.affine([ref], [-np.eye(d)]))
    return builder.affine([pos, neg], [np.eye(d), np.eye(d)])


def gadget_max(builder: GraphBuilder, refs: Sequence[int]) -> int:
    """Elementwise max over same-size nodes: a + relu(b - a), folded left."""
    refs = list(refs)
    if not refs:
        raise ValueError("max gadget needs at least one node")
    acc = refs[0]
    d = builder.dim(acc)
    eye = np.eye(d)
    for ref in refs[1:]:
        if builder.dim(ref) != d:
            raise ValueError("max gadget requires same-size nodes")
        diff = builder.affine([ref, acc], [eye, -eye])
        acc = builder.affine([acc, builder.relu(diff)], [eye, eye])
    return acc


def _clamp_via_gadgets(builder: GraphBuilder, ref: int, lo: float, hi: float) -> int:
    """clip(u, lo, hi) as min(max(u, lo), hi) built from two ReLUs per unit."""
    d = builder.dim(ref)
    eye = np.eye(d)
    # max(u, lo) = u + relu(lo - u)
    below = builder.relu(builder.affine([ref], [-eye], np.full(d, lo)))
    floored = builder.affine([ref, below], [eye, eye])
    # min(v, hi) = v - relu(v - hi)
    above = builder.relu(builder.affine([floored], [eye], np.full(d, -hi)))
    return builder.affine([floored, above], [eye, -eye])


def compile_network(net: Mlp) -> PwlGraph:
    """A graph with one input block evaluating exactly to forward(net, x)."""
    b = GraphBuilder()
    out = b.add_mlp(b.input(net.input_dim), net)
    b.add_output(out)
    return b.build()


def compose_closed_loop(net: Mlp, A, B, f_max: float, k: int) -> PwlGraph:
    """Unroll k closed-loop steps s' = A s + B clip(net(s), -f_max, f_max).

    The graph maps the start state to the concatenation (s_0, s_1, ..., s_k);
    k = 0 yields the identity graph.  The clamp is realized with min/max
    gadgets (two ReLU units per control coordinate).
    """
    if k < 0:
        raise ValueError(f"step count must be nonnegative, got {k}")
    if f_max <= 0 or not np.isfinite(f_max):
        raise ValueError(f"f_max must be finite and > 0, got {f_max!r}")
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != (4, 4) or B.shape != (4, 2):
        raise SchemaError(f"transition matrices must be 4x4 and 4x2, got {A.shape}, {B.shape}")
    if net.input_dim != 4 or net.output_dim != 2:
        raise SchemaError(
            f"controller must map 4 states to 2 thrusts, got {net.input_dim}->{net.output_dim}"
        )
    b = GraphBuilder()
    s = b.input(4)
    b.add_output(s)
    for _ in range(k):
        u = _clamp_via_gadgets(b, b.add_mlp(s, net), -f_max, f_max)
        s = b.affine([s, u], [A, B])
        b.add_output(s)
    return b.build()
