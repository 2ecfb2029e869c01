import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from catdag.dataio import Dataset
from catdag.dgp import LinearSem, analytic_interventional_mean, analytic_means, mediation_sem, sample
from catdag.errors import DomainError, EmptyGroupError, NonFiniteError, ShapeError
from catdag.graph import NodeSpec, descendants, from_edges
from catdag.intervene import (
    EffectEstimate,
    InterventionSet,
    ShiftSpec,
    ate,
    att_error,
    bootstrap_effect,
    eate,
    individual_effects,
    pehe,
    policy_risk,
    predict_interventional,
    shift_eval,
    write_effect_report,
)
from catdag.models import build_model

from conftest import random_dag


class Recorder:
    """Wraps a predictor and remembers the input of every call."""

    def __init__(self, inner):
        self.inner, self.dag, self.calls = inner, inner.dag, []

    def predict(self, x):
        self.calls.append(np.array(x))
        return self.inner.predict(x)


def ols_sem(data: Dataset) -> LinearSem:
    """Least-squares fit of every node on its parents (a cheap stand-in for training)."""
    dag = data.dag
    x = data.values
    w = np.zeros((len(dag), len(dag)))
    icpt = np.zeros(len(dag))
    for k in range(len(dag)):
        pa = np.flatnonzero(np.asarray(dag.adj)[:, k])
        design = np.column_stack([x[:, pa], np.ones(len(x))])
        beta = np.linalg.lstsq(design, x[:, k], rcond=None)[0]
        w[pa, k], icpt[k] = beta[:-1], beta[-1]
    return LinearSem(dag, w, np.zeros(len(dag)), icpt, np.zeros(len(dag)))


@pytest.fixture(scope="module")
def mediation():
    return mediation_sem()


@pytest.fixture(scope="module")
def mediation_data(mediation):
    return sample(mediation, 500, seed=0)


# -- intervention sets ---------------------------------------------------------------

def test_intervention_set_validation(mediation_dag):
    iset = InterventionSet.from_mapping(mediation_dag, {"D": 1.0, "L1": [2.0]})
    assert iset.nodes == [0, 1] and len(iset) == 2
    with pytest.raises(ValueError):
        InterventionSet.from_mapping(mediation_dag, [("D", 1.0), (0, 2.0)])
    with pytest.raises(ShapeError):
        InterventionSet.from_mapping(mediation_dag, {"D": [1.0, 2.0]})
    with pytest.raises(IndexError):
        InterventionSet.from_mapping(mediation_dag, {"Q": 1.0})
    wide = from_edges([NodeSpec("A", 3)], [])
    np.testing.assert_array_equal(InterventionSet.from_mapping(wide, {"A": 2.0}).items[0][1], [2.0] * 3)


def test_raw_intervention_set_is_checked(mediation, mediation_data):
    with pytest.raises(IndexError):
        predict_interventional(mediation, mediation_data, InterventionSet(((9, np.ones(1)),)))
    with pytest.raises(ShapeError):
        predict_interventional(mediation, mediation_data, InterventionSet(((0, np.ones(2)),)))
    with pytest.raises(ShapeError):
        predict_interventional(mediation, Dataset(np.zeros((2, 3)), from_edges(["A", "B", "C"], [])), {})


# -- recursion ---------------------------------------------------------------------------

def test_empty_intervention_is_identity(mediation, mediation_data):
    out = predict_interventional(mediation, mediation_data, {})
    assert out.values.tobytes() == mediation_data.values.tobytes()
    assert out.values is not mediation_data.values


def test_sink_intervention_changes_one_column(mediation, mediation_data):
    out = predict_interventional(mediation, mediation_data, {"L2": 7.0})
    np.testing.assert_array_equal(out.values[:, :3], mediation_data.values[:, :3])
    assert np.all(out.values[:, 3] == 7.0)


def test_mediation_recursion_by_hand(mediation, mediation_data):
    out = predict_interventional(mediation, mediation_data, {"D": 1.0}).values
    np.testing.assert_array_equal(out[:, 0], 1.0)
    np.testing.assert_allclose(out[:, 1], 0.8, rtol=1e-15)
    np.testing.assert_allclose(out[:, 2], 0.8 + 0.4 * 0.8, rtol=1e-15)
    np.testing.assert_allclose(out[:, 3], 0.6 + 0.7 * 1.12, rtol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_only_intervened_and_descendants_touched(seed):
    rng = np.random.default_rng(seed)
    dag = random_dag(rng, max_nodes=6, max_dim=2)
    model = build_model("cfcn", dag, seed=int(rng.integers(100)))
    x = rng.standard_normal((4, dag.total_dim))
    chosen = [int(k) for k in rng.choice(len(dag), int(rng.integers(1, len(dag) + 1)), replace=False)]
    log = []
    out = predict_interventional(model, Dataset(x, dag), {k: float(rng.normal()) for k in chosen}, write_log=log)
    touched = set(chosen) | set(descendants(dag, chosen))
    spans = dag.spans()
    for k in range(len(dag)):
        a, b = spans[k]
        if k not in touched:
            assert out.values[:, a:b].tobytes() == x[:, a:b].tobytes()
    # write order: every node appears after all of its updated parents
    assert sorted(log) == sorted(touched - set(chosen))
    pos = {k: i for i, k in enumerate(log)}
    adj = np.asarray(dag.adj)
    for k in log:
        for p in np.flatnonzero(adj[:, k]):
            if p in pos:
                assert pos[p] < pos[k]


def test_each_write_sees_updated_parents(mediation, mediation_data):
    rec = Recorder(mediation)
    predict_interventional(rec, mediation_data.rows(np.arange(3)), {"D": 2.0})
    # L1, Y, L2 in that order; the call that writes Y already sees L1 = 1.6
    assert len(rec.calls) == 3
    np.testing.assert_allclose(rec.calls[1][:, 1], 1.6, rtol=1e-15)
    np.testing.assert_allclose(rec.calls[2][:, 2], 0.8 * 2 + 0.4 * 1.6, rtol=1e-15)


def test_binary_nodes_written_as_probabilities():
    dag = from_edges([NodeSpec("A"), NodeSpec("T", 1, "binary")], [("A", "T")])
    sem = LinearSem.build(dag, {("A", "T"): 1.0})
    out = predict_interventional(sem, Dataset(np.array([[0.0, 1.0]]), dag), {"A": 0.0})
    assert out.values[0, 1] == 0.5


# -- ate ------------------------------------------------------------------------------------

def test_ate_on_sem_and_antisymmetry(mediation, mediation_data):
    fwd = ate(mediation, mediation_data, "D", "Y")
    assert abs(fwd.value - 1.12) < 1e-12
    assert fwd.se is None and fwd.n_boot == 0
    back = ate(mediation, mediation_data, "D", "Y", d1=0.0, d0=1.0)
    assert back.value == -fwd.value
    np.testing.assert_allclose(individual_effects(mediation, mediation_data, "D", "Y"), 1.12, rtol=1e-14)


@pytest.mark.parametrize("kind", ["cfcn", "cat"])
def test_ate_antisymmetric_for_networks(kind, mediation_data):
    model = build_model(kind, mediation_data.dag, seed=2)
    a = ate(model, mediation_data, "D", "Y", 0.5, -0.5).value
    b = ate(model, mediation_data, "D", "Y", -0.5, 0.5).value
    assert a == -b


@pytest.mark.parametrize("kind", ["cfcn", "cat"])
def test_all_zero_model_has_zero_ate(kind, mediation_data):
    model = build_model(kind, mediation_data.dag, seed=0)
    model.store.flat[:] = 0.0
    assert ate(model, mediation_data, "D", "Y").value == 0.0


def test_multidim_outcome_average():
    dag = from_edges([NodeSpec("D"), NodeSpec("Y", 2)], [("D", "Y")])

    class Doubler:
        def __init__(self):
            self.dag = dag

        def predict(self, x):
            return np.column_stack([x[:, 0], x[:, 0], 3 * x[:, 0]])

    data = Dataset(np.zeros((3, 3)), dag)
    np.testing.assert_array_equal(ate(Doubler(), data, "D", "Y", average=False).point, [1.0, 3.0])
    assert ate(Doubler(), data, "D", "Y").value == 2.0


def test_effect_estimate_invariant():
    with pytest.raises(ValueError):
        EffectEstimate(1.0, se=0.1)
    with pytest.raises(ValueError):
        EffectEstimate(1.0, n_boot=3)


# -- metrics ---------------------------------------------------------------------------------

def test_eate_examples():
    assert eate(1.12, 1.12) == 0.0
    assert abs(eate(1.12, 1.00) - 0.12) < 1e-15
    assert eate(0.0, -0.3) == 0.3


def test_att_error():
    rng = np.random.default_rng(0)
    y0 = rng.standard_normal(200)
    delta = 0.7
    yt, yc = y0[:100] + delta, y0[100:]
    # perfect predictor: its effects reproduce the treated-minus-control gap exactly
    gap = yt.mean() - yc.mean()
    assert att_error(yt, yc, np.full(100, gap)) == 0.0
    # zero-effect predictor on a noise-free RCT with effect delta
    assert abs(att_error(np.full(5, 1.0 + delta), np.full(4, 1.0), np.zeros(5)) - delta) < 1e-15
    # toy: treated mean 4, control mean 1.5, predicted effect mean 2
    assert att_error([3.0, 5.0], [1.0, 2.0], [1.0, 3.0]) == 0.5
    with pytest.raises(EmptyGroupError):
        att_error([], [1.0], [])


def test_policy_risk():
    assert policy_risk([1, 1, 0], [1, 1, 0], [1.0, 2.0, 3.0]) == 0.0
    assert policy_risk([0, 0, 1], [0, 0, 1], [-1.0, -2.0, -3.0]) == 1.0
    y = [1, 0, 1, 1, 0, 1]
    t = [1, 1, 0, 0, 1, 0]
    e = [0.5, 0.2, -0.1, 0.3, -0.4, -0.2]
    # pi = (1,1,0,1,0,0): p(pi=1) = 1/2; treated agreeing rows 0,1 -> 0.5; control agreeing rows 2,5 -> 1
    assert policy_risk(y, t, e) == 1 - (0.5 * 0.5 + 1.0 * 0.5)
    # alpha 0.25 drops row 1: treated agreeing row 0 -> 1 (share 2/6); control agreeing rows 2,5 -> 1 (share 4/6)
    assert policy_risk(y, t, e, alpha=0.25) == 1 - (1.0 * (2 / 6) + 1.0 * (4 / 6))
    with pytest.raises(EmptyGroupError):
        policy_risk([1, 1], [0, 0], [1.0, 1.0])
    with pytest.raises(EmptyGroupError):
        policy_risk([], [], [])
    with pytest.raises(DomainError):
        policy_risk([1], [0.5], [1.0])
    with pytest.raises(ShapeError):
        policy_risk([1, 0], [1], [1.0])


def test_pehe():
    v = np.random.default_rng(1).standard_normal(50)
    assert pehe(v, v) == 0.0
    assert abs(pehe(v, v + 0.3) - 0.3) < 1e-15
    assert pehe([1.0, 2.0], [0.0, 0.0]) == math.sqrt(2.5)
    with pytest.raises(ShapeError):
        pehe([1.0, 2.0], [1.0])


# -- bootstrap ---------------------------------------------------------------------------------

def quiet_mediation():
    sem = mediation_sem()
    return LinearSem(sem.dag, sem.coeffs, np.array([1.0, 0.0, 0.0, 0.0]), sem.intercept, sem.noise_mean)


def ols_factory(data, seed):
    return ols_sem(data)


def ate_estimator(model, data):
    return ate(model, data, "D", "Y")


def test_bootstrap_single_replicate():
    data = sample(quiet_mediation(), 200, seed=0)
    est = bootstrap_effect(ols_factory, data, ate_estimator, n_boot=1)
    assert est.n_boot == 1 and est.fraction == 0.9
    assert math.isnan(est.se_value)
    assert abs(est.value - 1.12) < 1e-9


def test_bootstrap_zero_noise_is_tight():
    data = sample(quiet_mediation(), 1000, seed=0)
    est = bootstrap_effect(ols_factory, data, ate_estimator, n_boot=5, seed=3)
    assert est.se_value < 0.02
    assert abs(est.value - 1.12) < 1e-9


def test_bootstrap_resample_size_and_seeds():
    data = sample(mediation_sem(), 101, seed=0)
    seen = []

    def factory(rows, seed):
        seen.append((len(rows), seed))
        return ols_sem(rows)

    a = bootstrap_effect(factory, data, ate_estimator, n_boot=4, seed=9)
    assert [n for n, _ in seen] == [90] * 4
    assert len({s for _, s in seen}) == 4
    b = bootstrap_effect(ols_factory, data, ate_estimator, n_boot=4, seed=9)
    np.testing.assert_array_equal(a.point, b.point)
    np.testing.assert_array_equal(a.se, b.se)
    c = bootstrap_effect(ols_factory, data, ate_estimator, n_boot=4, seed=10)
    assert c.value != a.value


def test_bootstrap_threads_match_serial():
    from catdag.training import TrainConfig, train

    data = sample(mediation_sem(), 400, seed=1)

    def factory(rows, seed):
        model = build_model("cfcn", rows.dag, seed=seed)
        train(model, rows, TrainConfig(iterations=40, batch_size=50, seed=seed))
        return model

    serial = bootstrap_effect(factory, data, ate_estimator, n_boot=4, seed=2)
    threaded = bootstrap_effect(factory, data, ate_estimator, n_boot=4, seed=2, n_jobs=4)
    np.testing.assert_array_equal(serial.point, threaded.point)
    np.testing.assert_array_equal(serial.se, threaded.se)


def test_bootstrap_errors():
    data = sample(mediation_sem(), 10, seed=0)
    with pytest.raises(ValueError):
        bootstrap_effect(ols_factory, data, ate_estimator, n_boot=0)
    with pytest.raises(ValueError):
        bootstrap_effect(ols_factory, data, ate_estimator, n_boot=1, fraction=1.5)

    def exploding(rows, seed):
        raise NonFiniteError("loss is nan", iteration=3)

    with pytest.raises(NonFiniteError) as info:
        bootstrap_effect(exploding, data, ate_estimator, n_boot=2)
    assert "replicate 0" in str(info.value)
    assert info.value.iteration == 3

    def broken(rows, seed):
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError) as info:
        bootstrap_effect(broken, data, ate_estimator, n_boot=2)
    assert info.value.replicate == 0


# -- shift and reports ---------------------------------------------------------------------------------

def test_zero_shift_equals_unshifted(mediation):
    models = {"truth": mediation, "fit": ols_sem(sample(mediation, 300, seed=5))}
    spec = ShiftSpec("L2", (0.0, 0.0))
    rep = shift_eval(models, mediation, spec, "Y", n=2000, seed=4)
    for name in models:
        m = rep.mse(name)
        assert m[0] == m[1]
    # the true SEM predicts Y from its parents, so its MSE is the noise variance
    assert abs(rep.mse("truth")[0] - 1.0) < 0.1
    with pytest.raises(IndexError):
        shift_eval(models, mediation, ShiftSpec("Q"), "Y")


def test_shift_on_l2_leaves_causal_mse(mediation):
    rep = shift_eval({"truth": mediation}, mediation, ShiftSpec("L2", (0.0, 2.0, 5.0)), "Y", n=2000, seed=0)
    m = rep.mse("truth")
    assert m[0] == m[1] == m[2]


def test_shift_report_csv(tmp_path, mediation):
    rep = shift_eval({"truth": mediation}, mediation, ShiftSpec("L2", (0.0, 1.0)), "Y", n=100)
    path = tmp_path / "shift.csv"
    rep.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "model,shift,mse" and len(lines) == 3
    assert float(lines[2].split(",")[2]) == rep.rows[1][2]


def test_effect_report_files(tmp_path):
    ests = {"cfcn": EffectEstimate(1.1, se=np.array([0.02]), n_boot=5, fraction=0.9),
            "single": EffectEstimate(0.9, se=np.array([np.nan]), n_boot=1),
            "point": EffectEstimate(1.0)}
    write_effect_report(ests, tmp_path / "e.csv", tmp_path / "e.json")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "estimator,point,se,n_boot"
    assert lines[1] == "cfcn,1.1,0.02,5"
    assert lines[3] == "point,1.0,,0"
    rows = json.loads((tmp_path / "e.json").read_text())
    assert [r["estimator"] for r in rows] == ["cfcn", "single", "point"]
    assert rows[1]["se"] is None and rows[2]["se"] is None
    assert rows[0]["point_per_dim"] == [1.1]


def test_recursion_with_sem_matches_closed_form():
    # the SEM itself as the model: means over rows at the fixed point reproduce the analytic values
    sem = mediation_sem()
    data = sample(sem, 3000, seed=2)
    centred = data.values - data.values.mean(0) + analytic_means(sem)
    out = predict_interventional(sem, data.with_values(centred), {"L1": -1.5}).values.mean(0)
    for k in (2, 3):
        assert abs(out[k] - analytic_interventional_mean(sem, {"L1": -1.5}, k)) < 1e-10
