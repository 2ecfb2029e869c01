"""DAG-constrained networks and their persistence."""

from __future__ import annotations

import os

from ..adcore import load_tensors, save_tensors
from ..errors import ConfigError
from ..graph import Dag, complete_dag, format_graph, parse_graph
from .base import MODEL_KINDS, CatConfig, CfcnConfig, LossColumns, Model, config_to_dict, loss_columns
from .cat import CaT
from .cfcn import CFCN

__all__ = [
    "MODEL_KINDS", "CFCN", "CaT", "CatConfig", "CfcnConfig", "LossColumns", "Model",
    "build_model", "default_config", "init_params", "load_model", "loss_columns", "save_model",
]


def init_params(config, dag: Dag, seed: int = 0, kind: str | None = None) -> Model:
    """Fresh model for ``config``; deterministic per ``seed``."""
    if isinstance(config, CfcnConfig):
        return CFCN.init(dag, config, seed, kind)
    if isinstance(config, CatConfig):
        return CaT.init(dag, config, seed, kind)
    raise ConfigError(f"unknown config type {type(config).__name__}")


def default_config(kind: str, dag: Dag):
    """Default hyperparameters for ``kind``."""
    if kind in ("cfcn", "baseline-mlp"):
        return CfcnConfig.defaults(dag.total_dim)
    if kind == "cfcn-mod":
        return CfcnConfig.defaults(dag.total_dim, variant="mod")
    if kind in ("cat", "baseline-transformer"):
        return CatConfig(embed_dim=max(5, dag.max_dim))
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def build_model(kind: str, dag: Dag, seed: int = 0, config=None, outcome=None) -> Model:
    """Construct any model kind on the data graph ``dag``.

    Baselines are the same networks constrained by a complete DAG in which
    ``outcome`` (default: last node in topological order) sees every other
    node.
    """
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    config = config or default_config(kind, dag)
    graph = dag
    if kind.startswith("baseline"):
        last = outcome if outcome is not None else dag.topological_order[-1]
        graph = complete_dag(dag, last)
    return init_params(config, graph, seed, kind)


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _parse_config(text: str):
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            k, _, v = line.partition("=")
            kv[k.strip()] = v.strip()
    family = kv.pop("family")
    kind = kv.pop("kind")
    seed = int(kv.pop("seed"))
    if family == "cfcn":
        cfg = CfcnConfig(widths=tuple(int(w) for w in kv["widths"].split(",")), variant=kv["variant"],
                         dropout=float(kv["dropout"]), activation=kv["activation"])
    else:
        cfg = CatConfig(n_heads=int(kv["n_heads"]), n_blocks=int(kv["n_blocks"]),
                        head_size=int(kv["head_size"]), embed_dim=int(kv["embed_dim"]),
                        ff_hidden_dim=int(kv["ff_hidden_dim"]), dropout=float(kv["dropout"]),
                        use_batchnorm=kv["use_batchnorm"] == "True", mask_mode=kv["mask_mode"])
    return kind, seed, cfg


def save_model(model: Model, directory):
    """Write ``params.bin``, ``config.txt`` and ``graph.txt`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    save_tensors(os.path.join(directory, "params.bin"), model.state_tensors())
    family = "cfcn" if isinstance(model, CFCN) else "cat"
    lines = [f"family={family}", f"kind={model.kind}", f"seed={model.seed}"]
    lines += [f"{k}={_format_value(v)}" for k, v in config_to_dict(model.config).items()]
    with open(os.path.join(directory, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(directory, "graph.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_graph(model.dag))


def load_model(directory) -> Model:
    with open(os.path.join(directory, "config.txt"), encoding="utf-8") as fh:
        kind, seed, cfg = _parse_config(fh.read())
    with open(os.path.join(directory, "graph.txt"), encoding="utf-8") as fh:
        dag = parse_graph(fh.read(), source="graph.txt", sort=False)
    model = init_params(cfg, dag, seed, kind)
    model.load_state(load_tensors(os.path.join(directory, "params.bin")))
    return model
