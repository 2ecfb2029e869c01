"""Command-line entry point: ``catdag {train,estimate,shift-bench,masks,sample}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .dataio import Dataset, align, load_csv, save_csv
from .dgp import load_sem, sample
from .errors import CatdagError, NonFiniteError
from .graph import load_graph
from .intervene import (EffectEstimate, InterventionSet, ShiftSpec, ate, bootstrap_effect,
                        predict_interventional, shift_eval, write_effect_report)
from .masking import compile_cfcn_masks, compile_cfcn_mod_masks, masks_to_csv, reachability_check
from .models import MODEL_KINDS, CfcnConfig, build_model, init_params, load_model, save_model
from .training import TrainConfig, random_permutations, train, write_loss_trace

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

# iteration budgets per model family when --iters is not given
DEFAULT_ITERS = {"cfcn": 6000, "cfcn-mod": 6000, "baseline-mlp": 6000,
                 "cat": 20000, "baseline-transformer": 20000}


class UsageError(CatdagError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _assignment(text: str) -> tuple[str, tuple[float, ...]]:
    name, sep, value = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NODE=VALUE[,VALUE...], got {text!r}")
    return name.strip(), _floats(value)


def _add_data_args(p, sem_only=False):
    if sem_only:
        p.add_argument("--sem", required=True, help="linear SEM spec file to sample data from")
    else:
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--data", help="CSV with one column per node component")
        g.add_argument("--sem", help="linear SEM spec file to sample data from")
    p.add_argument("--n", type=int, default=10000, help="rows to sample with --sem (default 10000)")


def _add_train_args(p):
    p.add_argument("--iters", type=int, help="training iterations (default 6000 for CFCN kinds, 20000 for CaT kinds)")
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--scheduler", choices=("cosine", "constant"), default="cosine")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catdag", description="DAG-constrained networks for causal effect estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint plus loss trace")
    p.add_argument("--graph", help="graph file (defaults to the SEM's graph with --sem)")
    _add_data_args(p)
    p.add_argument("--model", choices=MODEL_KINDS, default="cfcn")
    _add_train_args(p)
    p.add_argument("--widths", type=_ints, help="CFCN layer widths after the input, e.g. 8,8,4")
    p.add_argument("--outcome", help="node that sees every other node in baseline models")
    p.add_argument("--shuffle", action="store_true", help="isomorphic shuffling during training")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="interventional estimates from a checkpoint")
    p.add_argument("--checkpoint", required=True, help="model directory written by train (OUT/model)")
    _add_data_args(p)
    p.add_argument("--treatment", help="treatment node for the ATE")
    p.add_argument("--outcome", help="outcome node for the ATE")
    p.add_argument("--d1", type=_floats, default=(1.0,))
    p.add_argument("--d0", type=_floats, default=(0.0,))
    p.add_argument("--do", type=_assignment, action="append", default=[],
                   help="NODE=VALUE; report every node's interventional mean (repeatable)")
    p.add_argument("--boot", type=int, default=0, help="bootstrap replicates, each retrained from scratch")
    p.add_argument("--fraction", type=float, default=0.9)
    _add_train_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("shift-bench", help="outcome MSE under a shifted noise mean")
    _add_data_args(p, sem_only=True)
    p.add_argument("--graph", help="graph for the causal models (defaults to the SEM's graph)")
    p.add_argument("--outcome", required=True)
    p.add_argument("--shift-node", required=True)
    p.add_argument("--shift-grid", type=_floats, default=(0.0, 1.0, 2.0, 3.0, 4.0, 5.0))
    p.add_argument("--shift-scale", type=float, default=1.0)
    p.add_argument("--models", default="cfcn,cat,baseline-mlp,baseline-transformer")
    _add_train_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("masks", help="dump CFCN masks and the reachability report")
    p.add_argument("--graph", required=True)
    p.add_argument("--widths", type=_ints, required=True, help="layer widths after the input, e.g. 3,6,3")
    p.add_argument("--variant", choices=("standard", "mod"), default="standard")
    p.add_argument("--out", help="directory for mask CSVs (stdout only when omitted)")

    p = sub.add_parser("sample", help="draw a dataset from a SEM spec")
    p.add_argument("--sem", required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


# -- helpers ------------------------------------------------------------------------

def _load_data(args, dag) -> Dataset:
    if args.data:
        return load_csv(args.data, dag)
    return align(sample(load_sem(args.sem), args.n, args.seed), dag)


def _train_config(args, kind) -> TrainConfig:
    iters = args.iters if args.iters is not None else DEFAULT_ITERS[kind]
    return TrainConfig(iterations=iters, batch_size=args.batch, learning_rate=args.lr,
                       scheduler=args.scheduler, seed=args.seed)


def _write_echo(path, args):
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(vars(args)):
            fh.write(f"{key}={getattr(args, key)}\n")


# -- subcommands ----------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.graph:
        dag = load_graph(args.graph)
    elif args.sem:
        dag = load_sem(args.sem).dag
    else:
        raise UsageError("--graph is required with --data")
    data = _load_data(args, dag)
    config = None
    if args.widths:
        if args.model not in ("cfcn", "cfcn-mod", "baseline-mlp"):
            raise UsageError("--widths applies to CFCN-family models only")
        config = CfcnConfig((dag.total_dim,) + args.widths, variant="mod" if args.model == "cfcn-mod" else "standard")
    model = build_model(args.model, dag, seed=args.seed, config=config, outcome=args.outcome)
    tcfg = _train_config(args, args.model)
    if args.checkpoint_every:
        tcfg = TrainConfig(**{**tcfg.__dict__, "checkpoint_every": args.checkpoint_every})
    os.makedirs(args.out, exist_ok=True)

    def checkpoint(step, m):
        save_model(m, os.path.join(args.out, f"checkpoint-{step}"))

    schedule = random_permutations(len(dag), args.seed + 1) if args.shuffle else None
    result = train(model, data, tcfg, pmap_schedule=schedule, on_checkpoint=checkpoint)
    save_model(result.model, os.path.join(args.out, "model"))
    write_loss_trace(os.path.join(args.out, "loss_trace.csv"), result.losses)
    _write_echo(os.path.join(args.out, "run_config.txt"), args)
    print(f"trained {args.model} for {tcfg.iterations} iterations; final loss {result.final_loss:.6g}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    want_ate = args.treatment is not None
    if not want_ate and not args.do:
        raise UsageError("no interventions")
    if want_ate and args.outcome is None:
        raise UsageError("--outcome is required with --treatment")
    model = load_model(args.checkpoint)
    dag = model.dag
    data = _load_data(args, dag)
    iset = InterventionSet.from_mapping(dag, args.do) if args.do else None

    def estimators(m, ds) -> dict[str, EffectEstimate]:
        out = {}
        if want_ate:
            out[f"ate:{args.treatment}->{args.outcome}"] = ate(m, ds, args.treatment, args.outcome, args.d1, args.d0)
        if iset is not None:
            moved = predict_interventional(m, ds, iset).values.mean(axis=0)
            label = ";".join(f"{dag.names[k]}={'/'.join(repr(float(x)) for x in v)}" for k, v in iset.items)
            for name, (a, b) in zip(dag.names, dag.spans()):
                out[f"mean:{name}|do({label})"] = EffectEstimate(moved[a:b])
        return out

    results = estimators(model, data)
    if args.boot > 0:
        tcfg = _train_config(args, model.kind)

        def factory(ds, seed):
            m = init_params(model.config, dag, seed, model.kind)
            train(m, ds, TrainConfig(**{**tcfg.__dict__, "seed": seed}))
            return m

        for name in list(results):
            boot = bootstrap_effect(factory, data, lambda m, ds, name=name: estimators(m, ds)[name],
                                    args.boot, args.fraction, seed=args.seed)
            results[name] = EffectEstimate(results[name].point, boot.se, boot.n_boot, boot.fraction)
    os.makedirs(args.out, exist_ok=True)
    write_effect_report(results, os.path.join(args.out, "effects.csv"), os.path.join(args.out, "effects.json"))
    for name, est in results.items():
        se = "" if est.se is None else f"  se {est.se_value:.6g}"
        print(f"{name}  {est.value:.6g}{se}")
    return EXIT_OK


def cmd_shift_bench(args) -> int:
    sem = load_sem(args.sem)
    sem.dag.index(args.shift_node)
    sem.dag.index(args.outcome)
    dag = load_graph(args.graph) if args.graph else sem.dag
    data = align(sample(sem, args.n, args.seed), dag)
    models = {}
    for kind in [k.strip() for k in args.models.split(",") if k.strip()]:
        if kind not in MODEL_KINDS:
            raise UsageError(f"unknown model kind {kind!r}")
        m = build_model(kind, dag, seed=args.seed, outcome=args.outcome)
        train(m, data, _train_config(args, kind))
        models[kind] = _Aligned(m, sem.dag)
    report = shift_eval(models, sem, ShiftSpec(args.shift_node, args.shift_grid, args.shift_scale),
                        args.outcome, n=args.n, seed=args.seed + 1)
    os.makedirs(args.out, exist_ok=True)
    report.to_csv(os.path.join(args.out, "shift.csv"))
    for name, s, mse in report.rows:
        print(f"{name},{s:g},{mse:.6g}")
    return EXIT_OK


class _Aligned:
    """Present a model trained on ``model.dag``'s column order in ``target``'s order."""

    def __init__(self, model, target):
        self.model = model
        self.dag = target
        src = model.dag
        fwd, inv = [], []
        spans = target.spans()
        for node in src.nodes:
            a, b = spans[target.index(node.name)]
            fwd.extend(range(a, b))
        self._fwd = np.array(fwd, dtype=int)
        self._inv = np.argsort(self._fwd)

    def predict(self, x):
        return self.model.predict(np.asarray(x)[:, self._fwd])[:, self._inv]


def cmd_masks(args) -> int:
    dag = load_graph(args.graph)
    widths = (dag.total_dim,) + args.widths
    compile_fn = compile_cfcn_mod_masks if args.variant == "mod" else compile_cfcn_masks
    stack = compile_fn(dag, widths)
    report = reachability_check(stack, dag)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    for r, mask in enumerate(stack.masks, 1):
        text = masks_to_csv(mask)
        print(f"# mask {r} ({mask.shape[0]}x{mask.shape[1]})")
        print(text, end="")
        if args.out:
            with open(os.path.join(args.out, f"mask_{r}.csv"), "w", encoding="utf-8") as fh:
                fh.write(text)
    if stack.input_masks is not None and args.out:
        for r, mask in enumerate(stack.input_masks, 1):
            with open(os.path.join(args.out, f"input_mask_{r}.csv"), "w", encoding="utf-8") as fh:
                fh.write(masks_to_csv(mask))
    print(report)
    if args.out:
        with open(os.path.join(args.out, "reachability.txt"), "w", encoding="utf-8") as fh:
            fh.write(str(report) + "\n")
    return EXIT_OK


def cmd_sample(args) -> int:
    data = sample(load_sem(args.sem), args.n, args.seed)
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    save_csv(data, args.out)
    print(f"wrote {len(data)} rows to {args.out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "estimate": cmd_estimate, "shift-bench": cmd_shift_bench,
            "masks": cmd_masks, "sample": cmd_sample}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except NonFiniteError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CatdagError, OSError, IndexError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
