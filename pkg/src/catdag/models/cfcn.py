"""Causal fully-connected networks (standard and mod variants)."""

from __future__ import annotations

import numpy as np

from .. import adcore as ad
from ..adcore import ParamStore, Tensor
from ..graph import Dag, PermutationMap, permute
from ..masking import compile_cfcn_masks, compile_cfcn_mod_masks
from .base import CfcnConfig, Model, uniform_init


class CFCN(Model):
    """Masked MLP whose output for node ``i`` depends only on ancestors of ``i``.

    Standard variant::

        h_r = swish(h_{r-1} @ (W_r * M_r) + b_r)      # last layer linear

    Mod variant additionally feeds the raw input to every layer::

        h_r = swish(h_{r-1} @ (W*_r * M*_r) + x @ (W_r * M_r) + b_r)
    """

    def __init__(self, dag: Dag, config: CfcnConfig, store: ParamStore, buffers=None,
                 seed: int = 0, kind: str | None = None):
        super().__init__(dag, config, store, buffers, seed)
        self.kind = kind or ("cfcn-mod" if config.variant == "mod" else "cfcn")
        self.masks_for(dag)  # validates widths against the graph up front

    @classmethod
    def init(cls, dag: Dag, config: CfcnConfig, seed: int = 0, kind: str | None = None) -> "CFCN":
        rng = np.random.default_rng(seed)
        w = config.widths
        arrays = {}
        for r in range(len(w) - 1):
            if config.variant == "mod" and r > 0:
                arrays[f"layer{r}.hidden"] = uniform_init(rng, (w[r], w[r + 1]), w[r] + w[0])
                arrays[f"layer{r}.input"] = uniform_init(rng, (w[0], w[r + 1]), w[r] + w[0])
            else:
                name = "input" if config.variant == "mod" else "weight"
                arrays[f"layer{r}.{name}"] = uniform_init(rng, (w[r], w[r + 1]), w[r])
            arrays[f"layer{r}.bias"] = np.zeros(w[r + 1])
        return cls(dag, config, ParamStore(arrays), seed=seed, kind=kind)

    def _compile(self, dag: Dag):
        if self.config.variant == "mod":
            return compile_cfcn_mod_masks(dag, self.config.widths)
        return compile_cfcn_masks(dag, self.config.widths)

    def _forward(self, x, dag: Dag) -> Tensor:
        stack = self.masks_for(dag)
        p = self.store.params
        last = len(stack.masks) - 1
        rate = self.config.dropout
        if self.config.variant == "mod":
            h = ad.masked_linear(x, p["layer0.input"], stack.input_masks[0], p["layer0.bias"])
            for r in range(1, last + 1):
                h = ad.swish(h)
                h = ad.dropout(h, rate, self.rng, self.training)
                direct = ad.masked_linear(x, p[f"layer{r}.input"], stack.input_masks[r], p[f"layer{r}.bias"])
                h = ad.add(ad.masked_linear(h, p[f"layer{r}.hidden"], stack.masks[r]), direct)
            return h
        h = x
        for r, mask in enumerate(stack.masks):
            h = ad.masked_linear(h, p[f"layer{r}.weight"], mask, p[f"layer{r}.bias"])
            if r < last:
                h = ad.swish(h)
                h = ad.dropout(h, rate, self.rng, self.training)
        return h

    def permuted(self, pmap: PermutationMap) -> "CFCN":
        dims = self.dag.dims
        total = sum(dims)
        idx = [pmap.column_index([d * (w // total) for d in dims]) for w in self.config.widths]
        arrays = {}
        for name, param in self.store.items():
            r = int(name.split(".")[0][5:])
            a = param.data
            if name.endswith(".bias"):
                arrays[name] = a[idx[r + 1]]
            elif name.endswith(".input"):
                arrays[name] = a[np.ix_(idx[0], idx[r + 1])]
            else:
                arrays[name] = a[np.ix_(idx[r], idx[r + 1])]
        return CFCN(permute(self.dag, pmap), self.config, ParamStore(arrays), seed=self.seed, kind=self.kind)
