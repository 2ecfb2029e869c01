"""Causal transformer: cross-attention from a propagated state onto the
embedded input, masked so each node attends only to its parents."""

from __future__ import annotations

import numpy as np

from .. import adcore as ad
from ..adcore import ParamStore, Tensor
from ..errors import ConfigError
from ..graph import Dag, PermutationMap, permute
from ..masking import compile_cat_mask
from .base import CatConfig, Model, uniform_init

# parameters and buffers whose leading axis indexes nodes
_PER_NODE = ("embed.weight", "embed.bias", "gamma", "head.weight", "head.bias", ".bn1.", ".bn2.")


def pad_index(dims, width: int) -> np.ndarray:
    """Column positions of each data column inside the padded ``(Z * width)`` layout."""
    return np.concatenate([v * width + np.arange(d) for v, d in enumerate(dims)])


class CaT(Model):
    """Stack of causal blocks::

        state_0 = gamma
        a   = BN(swish(Dropout(Proj(Concat_h(Attn_h(state, X_E))))) + state)
        out = BN(FF(a) + a)

    Keys and values always come from the embedded input ``X_E``; queries
    come from the propagated state. No layer normalisation anywhere.
    """

    def __init__(self, dag: Dag, config: CatConfig, store: ParamStore, buffers=None,
                 seed: int = 0, kind: str | None = None):
        super().__init__(dag, config, store, buffers, seed)
        self.kind = kind or "cat"
        self.width = dag.max_dim
        if config.embed_dim < self.width:
            raise ConfigError(f"embed_dim {config.embed_dim} is smaller than the widest node ({self.width})")
        self._pad = {}
        self._calibrating = False

    @classmethod
    def init(cls, dag: Dag, config: CatConfig, seed: int = 0, kind: str | None = None) -> "CaT":
        c = dag.max_dim
        if config.embed_dim < c:
            raise ConfigError(f"embed_dim {config.embed_dim} is smaller than the widest node ({c})")
        rng = np.random.default_rng(seed)
        z, e, hs = len(dag), config.embed_dim, config.n_heads * config.head_size
        f = config.ff_hidden_dim
        arrays = {
            "embed.weight": uniform_init(rng, (z, c, e), c),
            "embed.bias": np.zeros((z, e)),
            "gamma": rng.standard_normal((z, e)) * 0.02,
        }
        buffers = {}
        for r in range(config.n_blocks):
            for name in ("query", "key", "value"):
                arrays[f"block{r}.{name}.weight"] = uniform_init(rng, (e, hs), e)
                arrays[f"block{r}.{name}.bias"] = np.zeros(hs)
            arrays[f"block{r}.proj.weight"] = uniform_init(rng, (hs, e), hs)
            arrays[f"block{r}.proj.bias"] = np.zeros(e)
            arrays[f"block{r}.ff1.weight"] = uniform_init(rng, (e, f), e)
            arrays[f"block{r}.ff1.bias"] = np.zeros(f)
            arrays[f"block{r}.ff2.weight"] = uniform_init(rng, (f, e), f)
            arrays[f"block{r}.ff2.bias"] = np.zeros(e)
            if config.use_batchnorm:
                for bn in ("bn1", "bn2"):
                    arrays[f"block{r}.{bn}.weight"] = np.ones((z, e))
                    arrays[f"block{r}.{bn}.bias"] = np.zeros((z, e))
                    buffers[f"block{r}.{bn}.mean"] = np.zeros((z, e))
                    buffers[f"block{r}.{bn}.var"] = np.ones((z, e))
        arrays["head.weight"] = uniform_init(rng, (z, e, c), e)
        arrays["head.bias"] = np.zeros((z, c))
        return cls(dag, config, ParamStore(arrays), buffers, seed=seed, kind=kind)

    def _compile(self, dag: Dag):
        return compile_cat_mask(dag).astype(np.float64)

    def _padding(self, dag: Dag) -> np.ndarray:
        key = tuple(dag.dims)
        if key not in self._pad:
            self._pad[key] = pad_index(dag.dims, self.width)
        return self._pad[key]

    def _bn(self, x, r, which):
        if not self.config.use_batchnorm:
            return x
        p, b = self.store.params, self.buffers
        pre = f"block{r}.{which}"
        if self._calibrating:
            b[pre + ".mean"][...] = x.data.mean(axis=0)
            b[pre + ".var"][...] = x.data.var(axis=0)
        return ad.batchnorm(x, p[pre + ".weight"], p[pre + ".bias"], b[pre + ".mean"], b[pre + ".var"],
                            self.training)

    def _forward(self, x, dag: Dag) -> Tensor:
        cfg = self.config
        p = self.store.params
        mask = self.masks_for(dag)
        idx = self._padding(dag)
        z, c = len(dag), self.width
        xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        n = xd.shape[0]
        xp = np.zeros((n, z * c))
        xp[:, idx] = xd
        xe = ad.nodewise_linear(xp.reshape(n, z, c), p["embed.weight"], p["embed.bias"])

        h, hs = cfg.n_heads, cfg.head_size
        state = p["gamma"]
        for r in range(cfg.n_blocks):
            pre = f"block{r}."
            q = ad.linear(state, p[pre + "query.weight"], p[pre + "query.bias"])
            k = ad.linear(xe, p[pre + "key.weight"], p[pre + "key.bias"])
            v = ad.linear(xe, p[pre + "value.weight"], p[pre + "value.bias"])
            # heads: (B, H, Z, hs); the first block's query is shared across the batch
            qshape = q.shape[:-1] + (h, hs)
            q = ad.transpose(ad.reshape(q, qshape), (1, 0, 2) if len(qshape) == 3 else (0, 2, 1, 3))
            k = ad.transpose(ad.reshape(k, (n, z, h, hs)), (0, 2, 3, 1))
            v = ad.transpose(ad.reshape(v, (n, z, h, hs)), (0, 2, 1, 3))
            att = ad.rowsoftmax(ad.matmul(q, k), mask, cfg.mask_mode, scale=1.0 / np.sqrt(hs))
            o = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)), (n, z, h * hs))
            o = ad.linear(o, p[pre + "proj.weight"], p[pre + "proj.bias"])
            o = ad.swish(ad.dropout(o, cfg.dropout, self.rng, self.training))
            a = self._bn(ad.add(o, state), r, "bn1")
            f = ad.swish(ad.linear(a, p[pre + "ff1.weight"], p[pre + "ff1.bias"]))
            f = ad.linear(f, p[pre + "ff2.weight"], p[pre + "ff2.bias"])
            f = ad.dropout(f, cfg.dropout, self.rng, self.training)
            state = self._bn(ad.add(f, a), r, "bn2")
        out = ad.reshape(ad.nodewise_linear(state, p["head.weight"], p["head.bias"]), (n, z * c))
        if idx.size == z * c:
            return out
        return ad.take_lastdim(out, idx)

    def calibrate(self, x):
        """Re-estimate batchnorm statistics on ``x`` with the current parameters.

        Layers are visited in forward order under eval-mode inputs, so eval
        reproduces train-mode normalisation. Without this, features that are
        constant over the batch (parentless nodes) end with near-zero running
        variance and every lag in the running mean is amplified by
        ``1/sqrt(eps)`` per layer.
        """
        if not self.config.use_batchnorm:
            return
        was = self.training
        self.training, self._calibrating = False, True
        try:
            with ad.no_grad():
                self.forward(np.asarray(x, dtype=np.float64))
        finally:
            self.training, self._calibrating = was, False

    def permuted(self, pmap: PermutationMap) -> "CaT":
        perm = pmap.perm
        arrays = {}
        for name, param in self.store.items():
            a = param.data
            arrays[name] = a[perm] if any(key in name for key in _PER_NODE) else a.copy()
        buffers = {k: v[perm].copy() for k, v in self.buffers.items()}
        return CaT(permute(self.dag, pmap), self.config, ParamStore(arrays), buffers,
                   seed=self.seed, kind=self.kind)
