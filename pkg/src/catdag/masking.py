"""Compile a DAG into CFCN weight masks and the CaT attention mask.

Masks are stored input-rows x output-columns, so a layer computes
``h @ (W * M)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError, WidthError
from .graph import Dag, PermutationMap


def block_owners(width: int, dims: Sequence[int]) -> np.ndarray:
    """Owning node of every neuron in a layer of ``width`` neurons.

    Node ``v`` gets a contiguous block of ``width * dims[v] / sum(dims)``
    neurons.
    """
    total = int(sum(dims))
    if width < total:
        raise WidthError(f"layer width {width} is below the input dimensionality {total}")
    if width % total:
        raise WidthError(f"layer width {width} is not a multiple of the input dimensionality {total}")
    factor = width // total
    return np.repeat(np.arange(len(dims)), [d * factor for d in dims])


def expand(connectivity: np.ndarray, owners_in: np.ndarray, owners_out: np.ndarray) -> np.ndarray:
    return np.asarray(connectivity, dtype=np.int8)[np.ix_(owners_in, owners_out)]


@dataclass(frozen=True)
class MaskStack:
    """Per-layer binary masks; ``masks[r]`` has shape ``widths[r] x widths[r+1]``.

    ``input_masks`` is set only for the mod variant, where layer ``r`` also
    reads the raw input through ``input_masks[r]`` (``widths[0] x widths[r+1]``).
    """

    widths: tuple[int, ...]
    dims: tuple[int, ...]
    masks: tuple[np.ndarray, ...]
    input_masks: tuple[np.ndarray, ...] | None = None
    owners: tuple[np.ndarray, ...] = field(default=(), repr=False)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


def _check_widths(dag: Dag, widths) -> tuple[tuple[int, ...], list[np.ndarray]]:
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise ShapeError("need at least an input and an output width")
    total = dag.total_dim
    if widths[0] != total or widths[-1] != total:
        raise ShapeError(f"first and last widths must equal the input dimensionality {total}, got {widths}")
    owners = [block_owners(w, dag.dims) for w in widths]
    return widths, owners


def compile_cfcn_masks(dag: Dag, widths: Sequence[int]) -> MaskStack:
    """Masks for the standard CFCN: ``A`` at layer 1, ``A + I`` afterwards."""
    widths, owners = _check_widths(dag, widths)
    a = np.asarray(dag.adj, dtype=np.int8)
    a_eye = a | np.eye(len(dag), dtype=np.int8)
    masks = []
    for r in range(len(widths) - 1):
        base = a if r == 0 else a_eye
        masks.append(expand(base, owners[r], owners[r + 1]))
    return MaskStack(widths, tuple(dag.dims), tuple(masks), None, tuple(owners))


def compile_cfcn_mod_masks(dag: Dag, widths: Sequence[int]) -> MaskStack:
    """Masks for CFCN-mod.

    Hidden-to-hidden masks carry ``A + I``; every layer also sees the raw
    input through an ``A``-only mask. ``masks[0]`` doubles as the first
    input mask.
    """
    widths, owners = _check_widths(dag, widths)
    a = np.asarray(dag.adj, dtype=np.int8)
    a_eye = a | np.eye(len(dag), dtype=np.int8)
    masks = [expand(a, owners[0], owners[1])]
    for r in range(1, len(widths) - 1):
        masks.append(expand(a_eye, owners[r], owners[r + 1]))
    inputs = tuple(expand(a, owners[0], owners[r + 1]) for r in range(len(widths) - 1))
    return MaskStack(widths, tuple(dag.dims), tuple(masks), inputs, tuple(owners))


def compile_cat_mask(dag: Dag) -> np.ndarray:
    """Attention mask ``A^T``: row ``i`` marks the parents of node ``i``."""
    m = np.ascontiguousarray(np.asarray(dag.adj, dtype=np.int8).T)
    m.setflags(write=False)
    return m


def _bool_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a.astype(np.int64) @ b.astype(np.int64)) > 0


def composed_reachability(stack: MaskStack) -> np.ndarray:
    """Neuron-level input-to-output reachability through all masks."""
    reach = stack.masks[0].astype(bool)
    for r in range(1, len(stack.masks)):
        reach = _bool_product(reach, stack.masks[r])
        if stack.input_masks is not None:
            reach |= stack.input_masks[r].astype(bool)
    return reach


def collapse(reach: np.ndarray, owners_in: np.ndarray, owners_out: np.ndarray, n: int) -> np.ndarray:
    """Collapse a neuron-level boolean matrix to node blocks (any-entry rule)."""
    out = np.zeros((n, n), dtype=bool)
    rows, cols = np.nonzero(reach)
    out[owners_in[rows], owners_out[cols]] = True
    return out


@dataclass
class ReachabilityReport:
    passed: bool
    leaks: list[tuple[str, str]]
    missing: list[tuple[str, str]]
    reach: np.ndarray

    def __str__(self):
        if self.passed:
            return "reachability: PASS"
        parts = ["reachability: FAIL"]
        if self.leaks:
            parts.append("  leaks: " + ", ".join(f"{a}->{b}" for a, b in self.leaks))
        if self.missing:
            parts.append("  missing: " + ", ".join(f"{a}->{b}" for a, b in self.missing))
        return "\n".join(parts)


def reachability_check(stack: MaskStack, dag: Dag) -> ReachabilityReport:
    """Compare node-level mask reachability with the strict ancestor relation.

    ``leaks`` are pairs that can influence each other but should not
    (including self-dependence); ``missing`` are ancestor pairs that no
    path of masks connects.
    """
    n = len(dag)
    owners = stack.owners or tuple(block_owners(w, dag.dims) for w in stack.widths)
    reach = collapse(composed_reachability(stack), owners[0], owners[-1], n)
    anc = dag.ancestor_matrix()
    names = dag.names
    leaks = [(names[j], names[k]) for j, k in zip(*np.nonzero(reach & ~anc))]
    missing = [(names[j], names[k]) for j, k in zip(*np.nonzero(anc & ~reach))]
    return ReachabilityReport(not leaks and not missing, leaks, missing, reach)


def block_permute(stack: MaskStack, pmap: PermutationMap) -> MaskStack:
    """Reorder neuron blocks of every mask by ``pmap`` (old node -> new position)."""
    idx = []
    for w in stack.widths:
        factor = w // sum(stack.dims)
        idx.append(pmap.column_index([d * factor for d in stack.dims]))
    masks = tuple(m[np.ix_(idx[r], idx[r + 1])] for r, m in enumerate(stack.masks))
    inputs = None
    if stack.input_masks is not None:
        inputs = tuple(m[np.ix_(idx[0], idx[r + 1])] for r, m in enumerate(stack.input_masks))
    dims = tuple(stack.dims[i] for i in pmap.perm)
    owners = tuple(block_owners(w, dims) for w in stack.widths)
    return MaskStack(stack.widths, dims, masks, inputs, owners)


def masks_to_csv(mask: np.ndarray) -> str:
    return "".join(",".join(str(int(v)) for v in row) + "\n" for row in mask)
