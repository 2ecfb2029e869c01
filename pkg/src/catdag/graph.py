"""DAG representation, ordering, reachability and isomorphic relabelling.

Adjacency convention: ``adj[j, k] == 1`` iff there is an edge ``j -> k``
(rows are parents, columns are children).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import CycleError, GraphParseError, SelfLoopError, ShapeError

KINDS = ("continuous", "binary")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class NodeSpec:
    name: str
    dim: int = 1
    kind: str = "continuous"

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise GraphParseError(f"invalid node name {self.name!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ShapeError(f"node {self.name}: dim must be a positive integer, got {self.dim}")
        if self.kind not in KINDS:
            raise GraphParseError(f"node {self.name}: unknown kind {self.kind!r}")


def _as_nodes(nodes) -> tuple[NodeSpec, ...]:
    out = []
    for n in nodes:
        out.append(n if isinstance(n, NodeSpec) else NodeSpec(str(n)))
    return tuple(out)


def _kahn(adj: np.ndarray) -> list[int] | None:
    """Stable Kahn ordering; ties go to the lowest original index.

    Returns None when the graph has a cycle.
    """
    n = adj.shape[0]
    indeg = adj.sum(axis=0).astype(int)
    ready = [i for i in range(n) if indeg[i] == 0]
    order = []
    while ready:
        ready.sort()
        i = ready.pop(0)
        order.append(i)
        for k in np.flatnonzero(adj[i]):
            indeg[k] -= 1
            if indeg[k] == 0:
                ready.append(int(k))
    return order if len(order) == n else None


def _find_cycle(adj: np.ndarray) -> list[int]:
    n = adj.shape[0]
    color = [0] * n
    stack_path: list[int] = []

    def visit(u):
        color[u] = 1
        stack_path.append(u)
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if color[v] == 1:
                return stack_path[stack_path.index(v):] + [v]
            if color[v] == 0:
                found = visit(v)
                if found:
                    return found
        stack_path.pop()
        color[u] = 2
        return None

    for s in range(n):
        if color[s] == 0:
            found = visit(s)
            if found:
                return found
    return []


class Dag:
    """Immutable DAG over named, possibly multi-dimensional nodes.

    The constructor checks shape, self-loops and acyclicity but keeps the
    given node order. Use :func:`validate_and_sort` to obtain a
    topologically ordered graph.
    """

    __slots__ = ("nodes", "adj", "_topo", "_index")

    def __init__(self, nodes: Sequence[NodeSpec | str], adj):
        nodes = _as_nodes(nodes)
        adj = np.asarray(adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ShapeError(f"adjacency must be square, got shape {adj.shape}")
        if adj.shape[0] != len(nodes):
            raise ShapeError(f"adjacency is {adj.shape[0]}x{adj.shape[0]} but {len(nodes)} nodes given")
        if not np.all((adj == 0) | (adj == 1)):
            raise ShapeError("adjacency must be binary")
        names = [n.name for n in nodes]
        if len(set(names)) != len(names):
            raise GraphParseError("node names must be unique")
        adj = adj.astype(np.int8)
        loops = np.flatnonzero(np.diag(adj))
        if loops.size:
            raise SelfLoopError("self-loop on " + ", ".join(names[i] for i in loops))
        topo = _kahn(adj)
        if topo is None:
            raise CycleError([names[i] for i in _find_cycle(adj)])
        adj.setflags(write=False)
        self.nodes = nodes
        self.adj = adj
        self._topo = tuple(topo)
        self._index = {n: i for i, n in enumerate(names)}

    # -- basic accessors -------------------------------------------------
    def __len__(self):
        return len(self.nodes)

    def __eq__(self, other):
        return isinstance(other, Dag) and self.nodes == other.nodes and np.array_equal(self.adj, other.adj)

    def __hash__(self):
        return hash((self.nodes, self.adj.tobytes()))

    def __repr__(self):
        edges = ", ".join(f"{a}->{b}" for a, b in self.edge_names())
        return f"Dag([{', '.join(self.names)}], {{{edges}}})"

    @property
    def names(self) -> list[str]:
        return [n.name for n in self.nodes]

    @property
    def dims(self) -> list[int]:
        return [n.dim for n in self.nodes]

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    @property
    def max_dim(self) -> int:
        return max(self.dims)

    @property
    def n_edges(self) -> int:
        return int(self.adj.sum())

    @property
    def topological_order(self) -> tuple[int, ...]:
        return self._topo

    @property
    def is_sorted(self) -> bool:
        return self._topo == tuple(range(len(self)))

    def index(self, node: int | str) -> int:
        if isinstance(node, str):
            try:
                return self._index[node]
            except KeyError:
                raise IndexError(f"unknown node {node!r}") from None
        node = int(node)
        if not 0 <= node < len(self):
            raise IndexError(f"node index {node} out of range for {len(self)} nodes")
        return node

    def spans(self) -> list[tuple[int, int]]:
        """Column span ``[start, end)`` of each node in a concatenated row."""
        out, start = [], 0
        for d in self.dims:
            out.append((start, start + d))
            start += d
        return out

    def edges(self) -> list[tuple[int, int]]:
        return [(int(j), int(k)) for j, k in zip(*np.nonzero(self.adj))]

    def edge_names(self) -> list[tuple[str, str]]:
        names = self.names
        return [(names[j], names[k]) for j, k in self.edges()]

    def children(self, node) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.adj[self.index(node)])]

    def ancestor_matrix(self) -> np.ndarray:
        """Strict ancestor relation: ``out[j, k]`` iff a directed path j ~> k exists."""
        return transitive_closure(self.adj)


def validate_and_sort(nodes: Sequence[NodeSpec | str], adj) -> Dag:
    """Validate a graph and return it in stable topological order."""
    dag = Dag(nodes, adj)
    order = list(dag.topological_order)
    a = np.asarray(dag.adj)[np.ix_(order, order)]
    return Dag([dag.nodes[i] for i in order], a)


def from_edges(nodes: Sequence[NodeSpec | str], edges: Iterable[tuple[str, str]], sort: bool = True) -> Dag:
    nodes = _as_nodes(nodes)
    index = {n.name: i for i, n in enumerate(nodes)}
    adj = np.zeros((len(nodes), len(nodes)), dtype=np.int8)
    for a, b in edges:
        if a not in index or b not in index:
            missing = a if a not in index else b
            raise GraphParseError(f"edge references unknown node {missing!r}")
        adj[index[a], index[b]] = 1
    return validate_and_sort(nodes, adj) if sort else Dag(nodes, adj)


def transitive_closure(adj) -> np.ndarray:
    """Boolean reachability by repeated squaring of ``adj``."""
    a = np.asarray(adj).astype(bool)
    reach = a.copy()
    while True:
        nxt = reach | ((reach.astype(np.int64) @ reach.astype(np.int64)) > 0)
        if np.array_equal(nxt, reach):
            return reach
        reach = nxt


def transitive_reduction(dag: Dag) -> Dag:
    """Drop every edge implied by a longer path. Never applied implicitly."""
    adj = np.asarray(dag.adj).astype(bool)
    reach = transitive_closure(adj)
    # j -> k is redundant when some child c of j (c != k) reaches k
    implied = (adj.astype(np.int64) @ reach.astype(np.int64)) > 0
    return Dag(dag.nodes, (adj & ~implied).astype(np.int8))


def parents(dag: Dag, node: int | str) -> list[int]:
    i = dag.index(node)
    return [int(j) for j in np.flatnonzero(dag.adj[:, i])]


def descendants(dag: Dag, seeds: Iterable[int | str]) -> list[int]:
    """Nodes reachable from any seed, excluding the seeds, in topological order."""
    seeds = {dag.index(s) for s in seeds}
    seen: set[int] = set()
    frontier = list(seeds)
    while frontier:
        u = frontier.pop()
        for v in np.flatnonzero(dag.adj[u]):
            v = int(v)
            if v not in seen:
                seen.add(v)
                frontier.append(v)
    seen -= seeds
    return [i for i in dag.topological_order if i in seen]


class PermutationMap:
    """Relabelling of node positions: new position ``i`` holds old node ``perm[i]``.

    The matrix form has ``P[i, perm[i]] = 1`` so that ``P A P^T`` is the
    relabelled adjacency.
    """

    __slots__ = ("perm",)

    def __init__(self, perm):
        perm = np.asarray(perm, dtype=np.int64)
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ShapeError(f"not a permutation: {perm.tolist()}")
        perm.setflags(write=False)
        self.perm = perm

    def __len__(self):
        return self.perm.size

    def __eq__(self, other):
        return isinstance(other, PermutationMap) and np.array_equal(self.perm, other.perm)

    def __repr__(self):
        return f"PermutationMap({self.perm.tolist()})"

    @classmethod
    def identity(cls, n: int) -> "PermutationMap":
        return cls(np.arange(n))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "PermutationMap":
        return cls(rng.permutation(n))

    @property
    def matrix(self) -> np.ndarray:
        n = len(self)
        p = np.zeros((n, n), dtype=np.int8)
        p[np.arange(n), self.perm] = 1
        return p

    def inverse(self) -> "PermutationMap":
        return PermutationMap(np.argsort(self.perm))

    def compose(self, other: "PermutationMap") -> "PermutationMap":
        """Apply ``self`` first, then ``other``."""
        return PermutationMap(self.perm[other.perm])

    def column_index(self, dims: Sequence[int]) -> np.ndarray:
        """Column gather index moving per-node blocks of widths ``dims``."""
        starts = np.concatenate([[0], np.cumsum(dims)[:-1]]).astype(np.int64)
        return np.concatenate([np.arange(starts[i], starts[i] + dims[i]) for i in self.perm])


def permute(dag: Dag, pmap: PermutationMap) -> Dag:
    """Isomorphic relabelling ``A' = P A P^T``; the result is generally unsorted."""
    if len(pmap) != len(dag):
        raise ShapeError(f"permutation of size {len(pmap)} for a {len(dag)}-node graph")
    p = pmap.perm
    adj = np.asarray(dag.adj)[np.ix_(p, p)]
    return Dag([dag.nodes[i] for i in p], adj)


def complete_dag(dag: Dag, last: int | str | None = None) -> Dag:
    """Fully connected DAG over ``dag``'s nodes, keeping their positions.

    Nodes are chained in topological order with ``last`` moved to the end,
    so ``last`` has every other node as a parent. Used for the unconstrained
    baselines.
    """
    order = list(dag.topological_order)
    if last is not None:
        last = dag.index(last)
        order.remove(last)
        order.append(last)
    n = len(dag)
    adj = np.zeros((n, n), dtype=np.int8)
    for a in range(n):
        for b in range(a + 1, n):
            adj[order[a], order[b]] = 1
    return Dag(dag.nodes, adj)


# -- graph file format ----------------------------------------------------

def _sections(text: str, source: str) -> dict[str, list[tuple[int, str]]]:
    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current in sections:
                raise GraphParseError(f"{source}:{lineno}: duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            raise GraphParseError(f"{source}:{lineno}: content before any section header")
        sections[current].append((lineno, line))
    return sections


def parse_graph(text: str, source: str = "<graph>", sort: bool = True, allow_extra: bool = False) -> Dag:
    """Parse the line-oriented ``[nodes]`` / ``[edges]`` format."""
    sections = _sections(text, source)
    return _graph_from_sections(sections, source, sort=sort, allow_extra=allow_extra)


def _graph_from_sections(sections, source, sort=True, allow_extra=False) -> Dag:
    if "nodes" not in sections:
        raise GraphParseError(f"{source}: missing [nodes] section")
    extra = set(sections) - {"nodes", "edges"}
    if extra and not allow_extra:
        raise GraphParseError(f"{source}: unknown section(s) {sorted(extra)}")
    nodes = []
    for lineno, line in sections["nodes"]:
        parts = line.split()
        if len(parts) != 3:
            raise GraphParseError(f"{source}:{lineno}: expected 'name dim kind', got {line!r}")
        name, dim, kind = parts
        try:
            dim = int(dim)
        except ValueError:
            raise GraphParseError(f"{source}:{lineno}: dim must be an integer, got {dim!r}") from None
        try:
            nodes.append(NodeSpec(name, dim, kind))
        except (ShapeError, GraphParseError) as exc:
            raise GraphParseError(f"{source}:{lineno}: {exc}") from None
    names = [n.name for n in nodes]
    if len(set(names)) != len(names):
        raise GraphParseError(f"{source}: duplicate node names")
    edges: list[tuple[str, str]] = []
    for lineno, line in sections.get("edges", []):
        m = re.fullmatch(r"(\S+)\s*->\s*(\S+)", line)
        if not m:
            raise GraphParseError(f"{source}:{lineno}: expected 'parent -> child', got {line!r}")
        a, b = m.groups()
        for x in (a, b):
            if x not in names:
                raise GraphParseError(f"{source}:{lineno}: unknown node {x!r}")
        if (a, b) in edges:
            raise GraphParseError(f"{source}:{lineno}: duplicate edge {a} -> {b}")
        edges.append((a, b))
    return from_edges(nodes, edges, sort=sort)


def load_graph(path) -> Dag:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read(), source=str(path))


def format_graph(dag: Dag) -> str:
    lines = ["[nodes]"]
    lines += [f"{n.name} {n.dim} {n.kind}" for n in dag.nodes]
    lines.append("[edges]")
    lines += [f"{a} -> {b}" for a, b in dag.edge_names()]
    return "\n".join(lines) + "\n"
