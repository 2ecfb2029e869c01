"""Linear structural equation models: sampling, shifts and closed-form
interventional means."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .adcore.ops import _sigmoid
from .dataio import Dataset
from .errors import DomainError, GraphParseError, ShapeError
from .graph import Dag, NodeSpec, _graph_from_sections, _sections, from_edges


@dataclass(frozen=True)
class LinearSem:
    """``X_k = intercept_k + sum_j coeffs[j, k] X_j + U_k`` with
    ``U_k ~ N(noise_mean_k, noise_scale_k^2)``.

    Binary nodes draw ``Bernoulli(sigmoid(intercept_k + noise_mean_k + sum_j coeffs[j, k] X_j))``;
    their ``noise_scale`` is unused. Every node must have dim 1.
    """

    dag: Dag
    coeffs: np.ndarray
    noise_scale: np.ndarray
    intercept: np.ndarray
    noise_mean: np.ndarray

    def __post_init__(self):
        z = len(self.dag)
        if any(d != 1 for d in self.dag.dims):
            raise ShapeError("linear SEMs support unit-dimensional nodes only")
        w = np.array(self.coeffs, dtype=np.float64)
        if w.shape != (z, z):
            raise ShapeError(f"coefficient matrix must be {(z, z)}, got {w.shape}")
        if np.any((w != 0) & (self.dag.adj == 0)):
            j, k = np.argwhere((w != 0) & (self.dag.adj == 0))[0]
            raise ShapeError(f"coefficient on non-edge {self.dag.names[j]} -> {self.dag.names[k]}")
        vecs = {}
        for name in ("noise_scale", "intercept", "noise_mean"):
            v = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            if v.shape != (z,):
                raise ShapeError(f"{name} must have length {z}, got {v.shape}")
            vecs[name] = v
        if np.any(vecs["noise_scale"] < 0):
            raise DomainError("noise scales must be non-negative")
        for name, v in [("coeffs", w)] + list(vecs.items()):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def build(cls, dag: Dag, coeffs: dict | None = None, noise: dict | None = None,
              intercepts: dict | None = None) -> "LinearSem":
        """Construct from ``{(parent, child): value}`` and ``{node: value}`` dicts (names or indices)."""
        z = len(dag)
        w = np.zeros((z, z))
        for (a, b), c in (coeffs or {}).items():
            w[dag.index(a), dag.index(b)] = c
        scale = np.ones(z)
        for k, s in (noise or {}).items():
            scale[dag.index(k)] = s
        icpt = np.zeros(z)
        for k, c in (intercepts or {}).items():
            icpt[dag.index(k)] = c
        return cls(dag, w, scale, icpt, np.zeros(z))

    @property
    def binary(self) -> np.ndarray:
        return np.array([n.kind == "binary" for n in self.dag.nodes])

    def predict(self, x) -> np.ndarray:
        """Conditional mean of every node given the values in ``x`` (probabilities for binary nodes).

        Lets the SEM stand in for a trained model during recursive intervention.
        """
        x = np.asarray(x, dtype=np.float64)
        out = x @ self.coeffs + (self.intercept + self.noise_mean)
        b = self.binary
        if b.any():
            out[:, b] = _sigmoid(out[:, b])
        return out


def sample(sem: LinearSem, n: int, seed: int = 0) -> Dataset:
    """Ancestral sampling in topological order; deterministic per seed."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    z = len(sem.dag)
    x = np.zeros((n, z))
    # draw all noise up front so a node's stream does not depend on the graph order
    noise = rng.standard_normal((n, z))
    uniform = rng.random((n, z))
    for k in sem.dag.topological_order:
        lin = sem.intercept[k] + sem.noise_mean[k] + x @ sem.coeffs[:, k]
        if sem.dag.nodes[k].kind == "binary":
            x[:, k] = (uniform[:, k] < _sigmoid(lin)).astype(np.float64)
        else:
            x[:, k] = lin + sem.noise_scale[k] * noise[:, k]
    return Dataset(x, sem.dag)


def _interventions(sem: LinearSem, interventions) -> dict[int, float]:
    items = interventions.items() if isinstance(interventions, dict) else interventions
    out = {}
    for node, value in items:
        out[sem.dag.index(node)] = float(np.asarray(value, dtype=np.float64).reshape(-1)[0])
    return out


def _propagate(sem: LinearSem, fixed: dict[int, float], need) -> np.ndarray:
    mu = np.zeros(len(sem.dag))
    const = np.zeros(len(sem.dag), dtype=bool)  # node is deterministic under the interventions
    for i in sem.dag.topological_order:
        if i not in need:
            continue
        if i in fixed:
            mu[i], const[i] = fixed[i], True
            continue
        lin = sem.intercept[i] + sem.noise_mean[i] + mu @ sem.coeffs[:, i]
        if sem.dag.nodes[i].kind == "binary":
            # E[sigmoid(logit)] has a closed form only when the logit is constant
            if not all(const[j] for j in np.flatnonzero(sem.coeffs[:, i])):
                raise DomainError(f"no closed-form mean for binary node {sem.dag.names[i]}")
            mu[i] = _sigmoid(np.array(lin))
        else:
            mu[i] = lin
            const[i] = sem.noise_scale[i] == 0 and all(const[j] for j in np.flatnonzero(sem.coeffs[:, i]))
    return mu


def analytic_means(sem: LinearSem, interventions=()) -> np.ndarray:
    """Every node's mean under the given ``do()`` assignments."""
    return _propagate(sem, _interventions(sem, interventions), range(len(sem.dag)))


def analytic_interventional_mean(sem: LinearSem, interventions, node) -> float:
    """``E[node | do(interventions)]`` by propagating means through the linear equations."""
    k = sem.dag.index(node)
    # only ancestors matter, so unrelated binary nodes do not block the oracle
    need = {int(a) for a in np.flatnonzero(sem.dag.ancestor_matrix()[:, k])} | {k}
    return float(_propagate(sem, _interventions(sem, interventions), need)[k])


def shift(sem: LinearSem, node, delta: float = 0.0, scale: float = 1.0) -> LinearSem:
    """Move ``node``'s noise mean by ``delta`` and multiply its noise scale by ``scale``."""
    k = sem.dag.index(node)
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale}")
    mean = sem.noise_mean.copy()
    mean[k] += delta
    noise = sem.noise_scale.copy()
    noise[k] *= scale
    return replace(sem, noise_mean=mean, noise_scale=noise)


# -- the four-variable example ------------------------------------------------

_MEDIATION_NODES = ("D", "L1", "Y", "L2")


def misspecified_graphs() -> tuple[Dag, Dag, Dag]:
    """True graph and the two misspecified alternatives over (D, L1, Y, L2).

    All three keep the column order D, L1, Y, L2 so they share one dataset.
    """
    true = from_edges(_MEDIATION_NODES, [("D", "L1"), ("D", "Y"), ("L1", "Y"), ("D", "L2"), ("Y", "L2")], sort=False)
    false1 = from_edges(_MEDIATION_NODES, [("L1", "Y"), ("L2", "Y"), ("D", "Y")], sort=False)
    false2 = from_edges(_MEDIATION_NODES, [("D", "Y"), ("D", "L1"), ("L1", "Y"), ("L2", "Y")], sort=False)
    return true, false1, false2


def mediation_sem() -> LinearSem:
    """D = U; L1 = 0.8 D + U; Y = 0.8 D + 0.4 L1 + U; L2 = 0.7 Y + 0.6 D + U; all U ~ N(0, 1)."""
    dag = misspecified_graphs()[0]
    return LinearSem.build(dag, {("D", "L1"): 0.8, ("D", "Y"): 0.8, ("L1", "Y"): 0.4,
                                 ("Y", "L2"): 0.7, ("D", "L2"): 0.6})


def random_sem(n_nodes: int, rng: np.random.Generator, edge_prob: float = 0.5,
               coef_range: tuple[float, float] = (0.3, 1.0)) -> LinearSem:
    """Random continuous linear SEM over a random DAG (edges only go forward in a random order)."""
    order = rng.permutation(n_nodes)
    adj = np.zeros((n_nodes, n_nodes), dtype=np.int8)
    w = np.zeros((n_nodes, n_nodes))
    for a in range(n_nodes):
        for b in range(a + 1, n_nodes):
            if rng.random() < edge_prob:
                i, j = order[a], order[b]
                adj[i, j] = 1
                w[i, j] = rng.choice([-1.0, 1.0]) * rng.uniform(*coef_range)
    dag = Dag([NodeSpec(f"X{i}") for i in range(n_nodes)], adj)
    return LinearSem(dag, w, rng.uniform(0.5, 1.5, n_nodes), rng.uniform(-1.0, 1.0, n_nodes), np.zeros(n_nodes))


# -- spec files -------------------------------------------------------------------

def parse_sem(text: str, source: str = "<sem>") -> LinearSem:
    """Graph sections plus ``[coeffs]`` (parent child value), ``[noise]`` (node scale [mean])
    and ``[intercepts]`` (node value)."""
    sections = _sections(text, source)
    extra = set(sections) - {"nodes", "edges", "coeffs", "noise", "intercepts"}
    if extra:
        raise GraphParseError(f"{source}: unknown section(s) {sorted(extra)}")
    graph_part = {k: v for k, v in sections.items() if k in ("nodes", "edges")}
    dag = _graph_from_sections(graph_part, source, sort=True)
    z = len(dag)
    w, scale, icpt, mean = np.zeros((z, z)), np.ones(z), np.zeros(z), np.zeros(z)

    def node(name, lineno):
        try:
            return dag.index(name)
        except IndexError:
            raise GraphParseError(f"{source}:{lineno}: unknown node {name!r}") from None

    def number(tok, lineno):
        try:
            return float(tok)
        except ValueError:
            raise GraphParseError(f"{source}:{lineno}: expected a number, got {tok!r}") from None

    for lineno, line in sections.get("coeffs", []):
        parts = line.split()
        if len(parts) != 3:
            raise GraphParseError(f"{source}:{lineno}: expected 'parent child value', got {line!r}")
        a, b = node(parts[0], lineno), node(parts[1], lineno)
        if not dag.adj[a, b]:
            raise GraphParseError(f"{source}:{lineno}: no edge {parts[0]} -> {parts[1]} in [edges]")
        w[a, b] = number(parts[2], lineno)
    for lineno, line in sections.get("noise", []):
        parts = line.split()
        if len(parts) not in (2, 3):
            raise GraphParseError(f"{source}:{lineno}: expected 'node scale [mean]', got {line!r}")
        k = node(parts[0], lineno)
        scale[k] = number(parts[1], lineno)
        if len(parts) == 3:
            mean[k] = number(parts[2], lineno)
    for lineno, line in sections.get("intercepts", []):
        parts = line.split()
        if len(parts) != 2:
            raise GraphParseError(f"{source}:{lineno}: expected 'node value', got {line!r}")
        icpt[node(parts[0], lineno)] = number(parts[1], lineno)
    try:
        return LinearSem(dag, w, scale, icpt, mean)
    except (ShapeError, DomainError) as exc:
        raise GraphParseError(f"{source}: {exc}") from None


def load_sem(path) -> LinearSem:
    with open(path, encoding="utf-8") as fh:
        return parse_sem(fh.read(), source=str(path))


def format_sem(sem: LinearSem) -> str:
    from .graph import format_graph

    lines = [format_graph(sem.dag).rstrip("\n"), "[coeffs]"]
    for a, b in sem.dag.edges():
        lines.append(f"{sem.dag.names[a]} {sem.dag.names[b]} {float(sem.coeffs[a, b])!r}")
    lines.append("[noise]")
    for k, name in enumerate(sem.dag.names):
        lines.append(f"{name} {float(sem.noise_scale[k])!r} {float(sem.noise_mean[k])!r}")
    lines.append("[intercepts]")
    lines += [f"{name} {float(sem.intercept[k])!r}" for k, name in enumerate(sem.dag.names)]
    return "\n".join(lines) + "\n"
