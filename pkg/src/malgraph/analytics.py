"""Feature extraction: opcode vocabulary, one-hot encoding, topology metrics.

Centralities are computed on the simple undirected unweighted view of the
graph with self-loops dropped.  Closeness uses the reachable-set-scaled
(Wasserman–Faust) form so disconnected graphs still get finite values;
betweenness uses Brandes' accumulation with each unordered pair counted once,
normalized by 2/((n-1)(n-2)).
"""

from __future__ import annotations

import csv
import io
import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    EmptyDataset,
    EmptyGraph,
    GraphFormatError,
    IoError,
    MalformedFile,
    VersionMismatch,
)
from .depgraph import DepGraph

UNK = "<unk>"

FEATURES_CSV_HEADER = "origin,label,nodes,edges,avg_degree_c,avg_closeness_c,avg_betweenness_c"


@dataclass(frozen=True)
class OpVocabulary:
    """Opcode-name table; index 0 is reserved for unknown operations."""

    names: tuple[str, ...]
    built_from: int = 0

    def __post_init__(self):
        if not self.names or self.names[0] != UNK:
            raise ValueError(f"vocabulary must start with {UNK!r}")
        rest = self.names[1:]
        if list(rest) != sorted(set(rest)) or UNK in rest:
            raise ValueError("vocabulary names must be unique and sorted")

    @property
    def size(self) -> int:
        return len(self.names)

    @cached_property
    def _lookup(self) -> dict:
        return {name: i for i, name in enumerate(self.names)}

    def index_of(self, op: str) -> int:
        return self._lookup.get(op, 0)


@dataclass(frozen=True)
class GraphSample:
    """A model-ready graph: vocabulary indices plus kind-erased edges."""

    node_ops: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    edge_weights: tuple[int, ...]
    label: int | None = None
    family: str | None = None

    @property
    def num_nodes(self) -> int:
        return len(self.node_ops)


@dataclass(frozen=True)
class TopoFeatures:
    num_nodes: int
    num_edges: int
    avg_degree_centrality: float
    avg_closeness_centrality: float
    avg_betweenness_centrality: float


def build_vocab(graphs) -> OpVocabulary:
    """Union of opcode names over `graphs`, index 0 reserved for unknowns."""
    graphs = list(graphs)
    if not graphs:
        raise EmptyDataset("cannot build a vocabulary from zero graphs")
    ops = set()
    for g in graphs:
        ops.update(n.opcode for n in g.nodes)
    ops.discard(UNK)
    return OpVocabulary(names=(UNK, *sorted(ops)), built_from=len(graphs))


def encode(g: DepGraph, vocab: OpVocabulary) -> GraphSample:
    """Map a graph onto a vocabulary; unseen opcodes go to index 0."""
    if not g.nodes:
        raise EmptyGraph(f"cannot encode empty graph {g.origin!r}")
    return GraphSample(
        node_ops=tuple(vocab.index_of(n.opcode) for n in g.nodes),
        edges=tuple((e.src, e.dst) for e in g.edges),
        edge_weights=tuple(e.weight for e in g.edges),
        label=g.label,
        family=g.family,
    )


def one_hot(node_ops, size: int) -> np.ndarray:
    """num_nodes × size one-hot matrix (float64 rows summing to 1)."""
    idx = np.asarray(node_ops, dtype=np.intp)
    out = np.zeros((len(idx), size))
    out[np.arange(len(idx)), idx] = 1.0
    return out


# --- topology ---------------------------------------------------------------

def _simple_adjacency(g: DepGraph) -> list[set]:
    adj = [set() for _ in range(g.num_nodes)]
    for e in g.edges:
        if e.src != e.dst:
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
    return adj


def _bfs_distances(adj, start: int) -> dict:
    dist = {start: 0}
    q = deque([start])
    while q:
        v = q.popleft()
        for w in adj[v]:
            if w not in dist:
                dist[w] = dist[v] + 1
                q.append(w)
    return dist


def _closeness(adj, n: int) -> list[float]:
    out = []
    for v in range(n):
        dist = _bfs_distances(adj, v)
        r = len(dist)
        if r <= 1:
            out.append(0.0)
            continue
        total = sum(dist.values())
        out.append(((r - 1) / total) * ((r - 1) / (n - 1)))
    return out


def _betweenness(adj, n: int) -> list[float]:
    """Brandes (2001); returns normalized scores, pairs counted once."""
    cb = [0.0] * n
    for s in range(n):
        stack = []
        preds = [[] for _ in range(n)]
        sigma = [0] * n
        sigma[s] = 1
        dist = [-1] * n
        dist[s] = 0
        q = deque([s])
        while q:
            v = q.popleft()
            stack.append(v)
            for w in adj[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    q.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = [0.0] * n
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1 + delta[w])
            if w != s:
                cb[w] += delta[w]
    if n <= 2:
        return [0.0] * n
    # each unordered pair was accumulated from both endpoints
    scale = 1.0 / ((n - 1) * (n - 2))
    return [c * scale for c in cb]


def topo_features(g: DepGraph) -> TopoFeatures:
    if not g.nodes:
        raise EmptyGraph(f"no topology for empty graph {g.origin!r}")
    n = g.num_nodes
    adj = _simple_adjacency(g)
    if n == 1:
        return TopoFeatures(1, g.num_edges, 0.0, 0.0, 0.0)
    degree = [len(adj[v]) / (n - 1) for v in range(n)]
    closeness = _closeness(adj, n)
    betweenness = _betweenness(adj, n)
    return TopoFeatures(
        num_nodes=n,
        num_edges=g.num_edges,
        avg_degree_centrality=sum(degree) / n,
        avg_closeness_centrality=sum(closeness) / n,
        avg_betweenness_centrality=sum(betweenness) / n,
    )


def export_features_csv(samples) -> str:
    """Rows of (origin, label, TopoFeatures) to CSV text, reals at 6 dp."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FEATURES_CSV_HEADER.split(","))
    for origin, label, tf in samples:
        writer.writerow([
            origin,
            "" if label is None else label,
            tf.num_nodes,
            tf.num_edges,
            f"{tf.avg_degree_centrality:.6f}",
            f"{tf.avg_closeness_centrality:.6f}",
            f"{tf.avg_betweenness_centrality:.6f}",
        ])
    return buf.getvalue()


# --- vocabulary persistence ---------------------------------------------------

def vocab_to_json(v: OpVocabulary) -> bytes:
    return json.dumps({"version": 1, "names": list(v.names)},
                      separators=(",", ":")).encode("utf-8")


def vocab_from_json(data) -> OpVocabulary:
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise GraphFormatError(f"not valid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise GraphFormatError("top level must be an object")
    if obj.get("version") != 1:
        raise VersionMismatch(f"unsupported vocabulary version {obj.get('version')!r}")
    names = obj.get("names")
    if (not isinstance(names, list) or not names
            or not all(isinstance(s, str) for s in names)):
        raise GraphFormatError("names must be a non-empty array of strings")
    try:
        return OpVocabulary(names=tuple(names))
    except ValueError as e:
        raise GraphFormatError(str(e)) from None


def save_vocab(v: OpVocabulary, path):
    try:
        Path(path).write_bytes(vocab_to_json(v))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from None


def load_vocab(path) -> OpVocabulary:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from None
    try:
        return vocab_from_json(data)
    except (GraphFormatError, VersionMismatch) as e:
        raise MalformedFile(str(path), str(e)) from None
