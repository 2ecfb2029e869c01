from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..adcore import ParamStore, Tensor, no_grad
from ..adcore.ops import _sigmoid
from ..errors import ConfigError, ShapeError
from ..graph import Dag, PermutationMap

MODEL_KINDS = ("cfcn", "cfcn-mod", "cat", "baseline-mlp", "baseline-transformer")


@dataclass(frozen=True)
class CfcnConfig:
    """``widths`` lists every layer including input and output, e.g. ``(3, 3, 6, 3)``."""

    widths: tuple[int, ...]
    variant: str = "standard"
    dropout: float = 0.0
    activation: str = "swish"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.variant not in ("standard", "mod"):
            raise ConfigError(f"unknown CFCN variant {self.variant!r}")
        if self.activation != "swish":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if len(self.widths) < 2:
            raise ConfigError("CFCN needs at least one layer")

    @classmethod
    def defaults(cls, input_size: int, variant: str = "standard") -> "CfcnConfig":
        s = input_size
        return cls((s, s, 2 * s, 2 * s, 2 * s, 2 * s, s), variant=variant)


@dataclass(frozen=True)
class CatConfig:
    n_heads: int = 2
    n_blocks: int = 2
    head_size: int = 6
    embed_dim: int = 5
    ff_hidden_dim: int = 6
    dropout: float = 0.0
    use_batchnorm: bool = True
    mask_mode: str = "exclude"

    def __post_init__(self):
        for name in ("n_heads", "n_blocks", "head_size", "ff_hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.embed_dim <= 1:
            raise ConfigError("embed_dim must be greater than 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.mask_mode not in ("exclude", "hadamard"):
            raise ConfigError(f"unknown mask mode {self.mask_mode!r}")


def config_to_dict(config) -> dict:
    return {f.name: getattr(config, f.name) for f in fields(config)}


@dataclass
class LossColumns:
    """Per-column loss kind and weight in the concatenated data layout."""

    binary: np.ndarray
    weights: np.ndarray


def loss_columns(dag: Dag, node_weights=None) -> LossColumns:
    """Continuous nodes get squared error, binary nodes cross-entropy.

    Each node's weight is spread evenly over its components so a node
    contributes ``weight * mean(loss)``.
    """
    node_weights = np.ones(len(dag)) if node_weights is None else np.asarray(node_weights, float)
    binary, weights = [], []
    for node, w in zip(dag.nodes, node_weights):
        binary += [node.kind == "binary"] * node.dim
        weights += [w / node.dim] * node.dim
    return LossColumns(np.array(binary), np.array(weights))


class Model:
    """Shared plumbing for DAG-constrained networks.

    Subclasses implement ``_forward(x, dag)`` returning raw outputs in the
    concatenated data layout (logits for binary columns). ``dag`` is the
    constraint graph; its node order is the data column order.
    """

    kind = "model"

    def __init__(self, dag: Dag, config, store: ParamStore, buffers: dict | None = None, seed: int = 0):
        self.dag = dag
        self.config = config
        self.store = store
        self.buffers = buffers or {}
        self.training = False
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._mask_cache: dict = {}

    # -- mode switches -------------------------------------------------
    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    @property
    def params(self):
        return self.store.params

    @property
    def n_params(self) -> int:
        return self.store.size

    def masks_for(self, dag: Dag):
        key = dag
        if key not in self._mask_cache:
            self._mask_cache[key] = self._compile(dag)
        return self._mask_cache[key]

    def _compile(self, dag: Dag):
        raise NotImplementedError

    # -- evaluation ----------------------------------------------------
    def forward(self, x, dag: Dag | None = None) -> Tensor:
        dag = self.dag if dag is None else dag
        xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if xd.ndim != 2 or xd.shape[1] != dag.total_dim:
            raise ShapeError(f"expected input of shape (B, {dag.total_dim}), got {xd.shape}")
        return self._forward(x, dag)

    __call__ = forward

    def _forward(self, x, dag: Dag) -> Tensor:
        raise NotImplementedError

    def predict(self, x) -> np.ndarray:
        """Eval-mode predictions in data space (probabilities for binary nodes)."""
        was = self.training
        self.training = False
        try:
            with no_grad():
                out = self.forward(np.asarray(x, dtype=np.float64)).data.copy()
        finally:
            self.training = was
        binary = loss_columns(self.dag).binary
        if binary.any():
            out[:, binary] = _sigmoid(out[:, binary])
        return out

    def calibrate(self, x):
        """Hook run after training on (a subset of) the training rows."""

    # -- persistence helpers -------------------------------------------
    def state_tensors(self) -> dict[str, np.ndarray]:
        out = self.store.state_dict()
        out.update({"buffer:" + k: v.copy() for k, v in self.buffers.items()})
        return out

    def load_state(self, tensors: dict[str, np.ndarray]):
        self.store.load({k: v for k, v in tensors.items() if not k.startswith("buffer:")})
        for k in self.buffers:
            self.buffers[k][...] = tensors["buffer:" + k]

    def permuted(self, pmap: PermutationMap) -> "Model":
        """Same function on relabelled nodes: parameters and masks moved with them."""
        raise NotImplementedError


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)

