"""Loss assembly and the minibatch AdamW loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import adcore as ad
from .dataio import Dataset
from .errors import ConfigError, DomainError, NonFiniteError, ShapeError
from .graph import Dag, PermutationMap, permute
from .models.base import Model, loss_columns


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 6000
    batch_size: int = 100
    learning_rate: float = 5e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    eps: float = 1e-8
    scheduler: str = "cosine"
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.scheduler not in ("constant", "cosine"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")

    def lr_at(self, step: int) -> float:
        """Learning rate for 0-based ``step``; cosine decays to zero over the budget."""
        if self.scheduler == "constant":
            return self.learning_rate
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / self.iterations))


@dataclass(frozen=True)
class LossSpec:
    """One loss per node: ``mse`` for continuous, ``bce`` (on logits) for binary."""

    dag: Dag
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights) or (1.0,) * len(self.dag)
        if len(w) != len(self.dag):
            raise ShapeError(f"{len(w)} loss weights for {len(self.dag)} nodes")
        object.__setattr__(self, "weights", w)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple("bce" if n.kind == "binary" else "mse" for n in self.dag.nodes)

    def columns(self):
        return loss_columns(self.dag, self.weights)


def total_loss(predictions, targets, loss_spec: LossSpec) -> ad.Tensor:
    """``sum_i weight_i * mean(loss_i)`` over every node, parentless ones included."""
    cols = loss_spec.columns()
    t = np.asarray(targets, dtype=np.float64)
    p = predictions.shape if isinstance(predictions, ad.Tensor) else np.shape(predictions)
    if t.ndim != 2 or tuple(p) != t.shape or t.shape[1] != cols.binary.size:
        raise ShapeError(f"predictions {tuple(p)} and targets {t.shape} must both be (B, {cols.binary.size})")
    if cols.binary.any():
        tb = t[:, cols.binary]
        if np.any((tb != 0.0) & (tb != 1.0)):
            raise DomainError("binary targets must be 0 or 1")
    return ad.column_loss(predictions, t, cols.binary, cols.weights)


@dataclass
class TrainResult:
    model: Model
    losses: np.ndarray = field(repr=False)

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


# rows used to re-estimate normalisation statistics after the last step
CALIBRATION_ROWS = 10000

PermutationSchedule = Callable[[int], PermutationMap]


def random_permutations(n_nodes: int, seed: int) -> PermutationSchedule:
    """Schedule drawing an independent uniform relabelling at every step."""
    rng = np.random.default_rng(seed)
    return lambda step: PermutationMap.random(n_nodes, rng)


def train(model: Model, dataset: Dataset, config: TrainConfig, loss_spec: LossSpec | None = None,
          pmap_schedule: PermutationSchedule | None = None,
          on_checkpoint: Callable[[int, Model], None] | None = None) -> TrainResult:
    """Minibatch AdamW on rows drawn with replacement.

    With ``pmap_schedule`` every step relabels the nodes: the masks are
    compiled from ``P A P^T`` and the data columns are permuted to match,
    while the parameters stay where they are.
    """
    if [n.name for n in dataset.dag.nodes] != model.dag.names or dataset.dag.dims != model.dag.dims:
        raise ShapeError("dataset columns do not match the model's graph")
    n = len(dataset)
    if config.batch_size > n:
        raise ConfigError(f"batch size {config.batch_size} exceeds the {n} available rows")
    loss_spec = loss_spec or LossSpec(model.dag)
    cols = loss_spec.columns()
    x_all = dataset.values
    if cols.binary.any():
        tb = x_all[:, cols.binary]
        if np.any((tb != 0.0) & (tb != 1.0)):
            raise DomainError("binary targets must be 0 or 1")
    rng = np.random.default_rng(config.seed)
    opt = ad.AdamW(model.store, config.betas, config.weight_decay, config.eps)
    losses = np.empty(config.iterations)
    dims = model.dag.dims
    model.train()
    try:
        for step in range(config.iterations):
            x = x_all[rng.integers(0, n, config.batch_size)]
            dag, binary, weights = model.dag, cols.binary, cols.weights
            if pmap_schedule is not None:
                pmap = pmap_schedule(step)
                idx = pmap.column_index(dims)
                dag, x = permute(model.dag, pmap), x[:, idx]
                binary, weights = binary[idx], weights[idx]
            model.store.zero_grad()
            try:
                loss = ad.column_loss(model.forward(x, dag=dag), x, binary, weights)
                loss.backward()
                opt.step(config.lr_at(step))
            except NonFiniteError as exc:
                raise NonFiniteError(str(exc), iteration=step) from None
            if not np.isfinite(model.store.flat.sum()):
                raise NonFiniteError("parameters became non-finite", iteration=step)
            losses[step] = float(loss.data)
            if on_checkpoint and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                on_checkpoint(step + 1, model)
        model.calibrate(x_all[:CALIBRATION_ROWS])
    finally:
        model.eval()
    return TrainResult(model, losses)


def write_loss_trace(path, losses):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,loss\n")
        for i, v in enumerate(losses):
            fh.write(f"{i},{float(v)!r}\n")
