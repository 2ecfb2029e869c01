"""Recursive intervention inference and causal-effect metrics."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .dataio import Dataset
from .dgp import LinearSem, sample, shift
from .errors import DomainError, EmptyGroupError, NonFiniteError, ShapeError
from .graph import Dag, descendants


@dataclass(frozen=True)
class InterventionSet:
    """``do()`` assignments as ``(node index, value vector)`` pairs."""

    items: tuple[tuple[int, np.ndarray], ...]

    @classmethod
    def from_mapping(cls, dag: Dag, assignments: Mapping | Sequence) -> "InterventionSet":
        pairs = assignments.items() if isinstance(assignments, Mapping) else assignments
        items, seen = [], set()
        for node, value in pairs:
            k = dag.index(node)
            if k in seen:
                raise ValueError(f"node {dag.names[k]} intervened on twice")
            seen.add(k)
            v = np.atleast_1d(np.asarray(value, dtype=np.float64)).reshape(-1)
            if v.size == 1 and dag.nodes[k].dim > 1:
                v = np.full(dag.nodes[k].dim, v[0])
            if v.size != dag.nodes[k].dim:
                raise ShapeError(f"value for {dag.names[k]} has {v.size} entries, node dim is {dag.nodes[k].dim}")
            items.append((k, v))
        return cls(tuple(items))

    def __len__(self):
        return len(self.items)

    @property
    def nodes(self) -> list[int]:
        return [k for k, _ in self.items]


def _as_interventions(dag: Dag, interventions) -> InterventionSet:
    if isinstance(interventions, InterventionSet):
        for k, v in interventions.items:
            if not 0 <= k < len(dag):
                raise IndexError(f"node index {k} out of range for {len(dag)} nodes")
            if v.size != dag.nodes[k].dim:
                raise ShapeError(f"value for {dag.names[k]} has {v.size} entries, node dim is {dag.nodes[k].dim}")
        return interventions
    return InterventionSet.from_mapping(dag, interventions)


def predict_interventional(model, dataset: Dataset, interventions, write_log: list | None = None) -> Dataset:
    """Set the intervened columns, then refresh every descendant in topological
    order from a full forward pass on the current values.

    ``model`` needs ``dag`` and ``predict(x)`` (a trained network or a
    :class:`LinearSem`); recursion follows ``model.dag``. Binary nodes are
    written as predicted probabilities. ``write_log`` collects updated node
    indices in the order they are written.
    """
    dag = model.dag
    if dataset.dag.names != dag.names or dataset.dag.dims != dag.dims:
        raise ShapeError("dataset columns do not match the model's graph")
    iset = _as_interventions(dag, interventions)
    x = dataset.values.copy()
    spans = dag.spans()
    for k, v in iset.items:
        a, b = spans[k]
        x[:, a:b] = v
    for k in descendants(dag, iset.nodes):
        a, b = spans[k]
        x[:, a:b] = np.asarray(model.predict(x))[:, a:b]
        if write_log is not None:
            write_log.append(k)
    return Dataset(x, dataset.dag)


@dataclass(frozen=True)
class EffectEstimate:
    """Point estimate per outcome component, with a bootstrap spread when ``n_boot > 0``.

    With ``n_boot == 1`` the spread is undefined and reported as NaN.
    """

    point: np.ndarray
    se: np.ndarray | None = None
    n_boot: int = 0
    fraction: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "point", np.atleast_1d(np.asarray(self.point, dtype=np.float64)))
        if (self.se is None) != (self.n_boot == 0):
            raise ValueError("se must be given exactly when n_boot > 0")
        if self.se is not None:
            object.__setattr__(self, "se", np.atleast_1d(np.asarray(self.se, dtype=np.float64)))

    @property
    def value(self) -> float:
        return float(self.point.mean())

    @property
    def se_value(self) -> float | None:
        return None if self.se is None else float(self.se.mean())


def ate(model, dataset: Dataset, treatment, outcome, d1=1.0, d0=0.0, average: bool = True) -> EffectEstimate:
    """``mean_i [Y_i(do(D=d1)) - Y_i(do(D=d0))]`` using recursive substitution.

    With ``average`` a multi-dimensional outcome is collapsed to the mean
    over its components.
    """
    dag = model.dag
    a, b = dag.spans()[dag.index(outcome)]
    y1 = predict_interventional(model, dataset, {treatment: d1}).values[:, a:b]
    y0 = predict_interventional(model, dataset, {treatment: d0}).values[:, a:b]
    per_dim = (y1 - y0).mean(axis=0)
    return EffectEstimate(per_dim.mean() if average else per_dim)


def individual_effects(model, dataset: Dataset, treatment, outcome, d1=1.0, d0=0.0) -> np.ndarray:
    """Per-row ``Y(d1) - Y(d0)``, averaged over outcome components."""
    dag = model.dag
    a, b = dag.spans()[dag.index(outcome)]
    y1 = predict_interventional(model, dataset, {treatment: d1}).values[:, a:b]
    y0 = predict_interventional(model, dataset, {treatment: d0}).values[:, a:b]
    return (y1 - y0).mean(axis=1)


# -- metrics -------------------------------------------------------------------

def eate(tau_true, tau_hat) -> float:
    return float(abs(float(tau_true) - float(tau_hat)))


def att_error(y_treated, y_control, effects_treated) -> float:
    """``|mean(Y | treated) - mean(Y | control) - mean(predicted effect over treated)|``."""
    yt, yc, e = (np.asarray(v, dtype=np.float64).reshape(-1) for v in (y_treated, y_control, effects_treated))
    if yt.size == 0 or yc.size == 0 or e.size == 0:
        raise EmptyGroupError("treated and control groups must both be non-empty")
    return float(abs(yt.mean() - yc.mean() - e.mean()))


def policy_risk(outcomes, treatments, effects, alpha: float = 0.0) -> float:
    """``1 - [E(Y(1) | pi=1) p(pi=1) + E(Y(0) | pi=0) p(pi=0)]`` with the policy
    ``pi = effect > alpha``; conditional means use rows whose received
    treatment agrees with the policy."""
    y, t, e = (np.asarray(v, dtype=np.float64).reshape(-1) for v in (outcomes, treatments, effects))
    if not (y.size == t.size == e.size):
        raise ShapeError(f"outcomes, treatments and effects differ in length: {y.size}, {t.size}, {e.size}")
    if y.size == 0:
        raise EmptyGroupError("no samples")
    if np.any((t != 0) & (t != 1)):
        raise DomainError("treatments must be 0 or 1")
    pi = e > alpha
    total = 0.0
    for arm, in_policy in ((1.0, pi), (0.0, ~pi)):
        share = in_policy.mean()
        if share == 0:
            continue
        agree = in_policy & (t == arm)
        if not agree.any():
            raise EmptyGroupError(f"no rows with policy {int(arm)} that also received treatment {int(arm)}")
        total += y[agree].mean() * share
    return float(1.0 - total)


def pehe(true_effects, predicted_effects) -> float:
    t = np.asarray(true_effects, dtype=np.float64)
    p = np.asarray(predicted_effects, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeError(f"effect vectors differ in shape: {t.shape} vs {p.shape}")
    return float(np.sqrt(np.mean((t - p) ** 2)))


# -- bootstrap -------------------------------------------------------------------

def bootstrap_effect(model_factory: Callable[[Dataset, int], object], dataset: Dataset,
                     estimator: Callable[[object, Dataset], object], n_boot: int,
                     fraction: float = 0.9, seed: int = 0, n_jobs: int = 1) -> EffectEstimate:
    """Refit from scratch on ``floor(fraction * N)`` rows drawn with replacement, ``n_boot`` times.

    ``model_factory(data, seed)`` returns a trained model;
    ``estimator(model, data)`` returns an :class:`EffectEstimate` or number.
    Every replicate has its own seed stream, so results do not depend on
    ``n_jobs``.
    """
    if n_boot < 1:
        raise ValueError(f"n_boot must be >= 1, got {n_boot}")
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    m = int(math.floor(fraction * len(dataset)))
    if m < 1:
        raise ValueError("resample would be empty")
    streams = np.random.SeedSequence(seed).spawn(n_boot)

    def replicate(r: int) -> np.ndarray:
        rng = np.random.default_rng(streams[r])
        rows = dataset.rows(rng.integers(0, len(dataset), m))
        model_seed = int(rng.integers(0, 2**31 - 1))
        try:
            est = estimator(model_factory(rows, model_seed), rows)
        except NonFiniteError as exc:
            raise NonFiniteError(f"bootstrap replicate {r}: {exc}", iteration=exc.iteration) from None
        except Exception as exc:
            exc.replicate = r
            raise
        return est.point if isinstance(est, EffectEstimate) else np.atleast_1d(np.asarray(est, dtype=np.float64))

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            draws = list(pool.map(replicate, range(n_boot)))
    else:
        draws = [replicate(r) for r in range(n_boot)]
    draws = np.stack(draws)
    se = draws.std(axis=0, ddof=1) if n_boot > 1 else np.full(draws.shape[1], np.nan)
    return EffectEstimate(draws.mean(axis=0), se, n_boot, fraction)


# -- covariate shift ---------------------------------------------------------------

@dataclass(frozen=True)
class ShiftSpec:
    """Additive shifts of ``node``'s noise mean (one per grid point) and a noise-scale factor."""

    node: str
    grid: tuple[float, ...] = (0.0,)
    scale: float = 1.0


@dataclass
class ShiftReport:
    rows: list[tuple[str, float, float]] = field(default_factory=list)

    def mse(self, model: str) -> np.ndarray:
        return np.array([m for name, _, m in self.rows if name == model])

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("model,shift,mse\n")
            for name, s, m in self.rows:
                fh.write(f"{name},{float(s)!r},{float(m)!r}\n")


def shift_eval(models: Mapping[str, object], sem: LinearSem, spec: ShiftSpec, outcome,
               n: int = 10000, seed: int = 0) -> ShiftReport:
    """Outcome MSE of each model on test sets drawn from the shifted SEM.

    Every grid point reuses the same noise draws, so only the shifted
    node's values differ between grid points.
    """
    sem.dag.index(spec.node)
    report = ShiftReport()
    y = sem.dag.index(outcome)
    a, b = sem.dag.spans()[y]
    for delta in spec.grid:
        test = sample(shift(sem, spec.node, delta, spec.scale), n, seed)
        for name, model in models.items():
            pred = np.asarray(model.predict(test.values))[:, a:b]
            report.rows.append((name, float(delta), float(np.mean((pred - test.values[:, a:b]) ** 2))))
    return report


# -- reports -----------------------------------------------------------------------

def effect_rows(estimates: Mapping[str, EffectEstimate]) -> list[dict]:
    rows = []
    for name, est in estimates.items():
        rows.append({"estimator": name, "point": est.value, "se": est.se_value, "n_boot": est.n_boot,
                     "fraction": est.fraction, "point_per_dim": [float(v) for v in est.point]})
    return rows


def write_effect_report(estimates: Mapping[str, EffectEstimate], csv_path=None, json_path=None):
    rows = effect_rows(estimates)
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("estimator,point,se,n_boot\n")
            for r in rows:
                se = "" if r["se"] is None else repr(r["se"])
                fh.write(f"{r['estimator']},{r['point']!r},{se},{r['n_boot']}\n")
    if json_path is not None:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump([{k: clean(v) for k, v in r.items()} for r in rows], fh, indent=2, sort_keys=True)
            fh.write("\n")
