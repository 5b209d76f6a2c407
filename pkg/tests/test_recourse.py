from __future__ import annotations

import numpy as np
import pytest

import fairrecourse.recourse as rc
from fairrecourse.models import Model, ModelSpec, init_model, predict, predict_proba
from fairrecourse.recourse import (
    CostFunction,
    GrowingSpheres,
    GsConfig,
    RecourseError,
    Wachter,
    WtConfig,
    eval_cost,
    growing_spheres,
    make_method,
    recourse_costs_population,
    wachter,
    wachter_batch,
    write_trace,
)


def logistic(w, b=0.0) -> Model:
    return Model(ModelSpec("logistic"), [np.asarray(w, dtype=float)[:, None]], [np.array([float(b)])])


def hyperplane_instance(rng, dist, scale=10.0):
    """Logistic model with a boundary through the middle of the square and x at ``-dist``."""
    angle = rng.uniform(0, 2 * np.pi)
    u = np.array([np.cos(angle), np.sin(angle)])
    anchor = rng.uniform(0.4, 0.6, size=2)
    m = logistic(scale * u, -scale * u @ anchor)
    return m, anchor - dist * u


def check_invariants(m, x, res, mask=None):
    assert np.all(res.counterfactual >= 0.0) and np.all(res.counterfactual <= 1.0)
    if mask is not None:
        frozen = ~np.asarray(mask)
        assert np.array_equal(res.counterfactual[frozen], x[frozen])
    if res.success:
        assert predict(m, res.counterfactual) == 1


def test_eval_cost_examples():
    assert eval_cost([0.2, 0.7], [0.2, 0.7]) == 0.0
    assert eval_cost([0.0, 0.5], [1.0, 0.5]) == 100.0
    assert eval_cost([0.0, 0.0], [0.3, 0.4]) == pytest.approx(50.0, abs=1e-12)
    with pytest.raises(ValueError):
        eval_cost([0.0], [0.0, 1.0])


def test_cost_function():
    assert CostFunction()(np.zeros(2), [0.3, 0.4]) == pytest.approx(50.0)
    assert CostFunction("l1", 1.0)(np.zeros(2), [0.3, -0.4]) == pytest.approx(0.7)
    assert CostFunction("l1", 1.0, mask=(True, False))(np.zeros(2), [0.3, 0.4]) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        CostFunction(scale=0.0)
    with pytest.raises(ValueError):
        CostFunction("l1", 1.0, mask=(True,))(np.zeros(2), np.ones(2))


def test_config_validation():
    with pytest.raises(ValueError):
        GsConfig(growth=1.0)
    with pytest.raises(ValueError):
        GsConfig(n_samples=0)
    with pytest.raises(ValueError):
        WtConfig(lr=0.0)
    with pytest.raises(ValueError):
        WtConfig(max_iter=0)
    with pytest.raises(ValueError):
        make_method("cchvae")


def test_gs_first_shell_hit(monkeypatch):
    x = np.array([0.5, 0.5, 0.5])
    monkeypatch.setattr(rc, "predict", lambda m, pts: (np.abs(np.atleast_2d(pts) - x).sum(axis=1) > 0).astype(int))
    res = growing_spheres(None, x, GsConfig(seed=1))
    assert res.success and res.iterations == 1
    assert res.eval_cost <= 100 * 0.1


def test_gs_gives_up_after_max_shells(monkeypatch):
    monkeypatch.setattr(rc, "predict", lambda m, pts: np.zeros(len(np.atleast_2d(pts)), dtype=int))
    res = growing_spheres(None, np.full(3, 0.5), GsConfig(max_shells=7))
    assert not res.success and res.iterations == 7


def test_gs_hyperplane_oracle():
    rng = np.random.default_rng(0)
    for seed in range(20):
        m, x = hyperplane_instance(rng, 0.2)
        res = growing_spheres(m, x, GsConfig(seed=seed))
        assert res.success
        assert 20.0 <= res.eval_cost + 1e-9
        assert res.eval_cost <= 1.5 * 20.0
        check_invariants(m, x, res)


def test_gs_is_seeded_and_batch_independent():
    m = init_model(ModelSpec("mlp", (16,)), 4, seed=3)
    X = np.random.default_rng(1).random((5, 4))
    a = GrowingSpheres(GsConfig(seed=2)).generate(m, X)
    b = GrowingSpheres(GsConfig(seed=2)).generate(m, X[::-1])[::-1]
    assert all(np.array_equal(r.counterfactual, s.counterfactual) for r, s in zip(a, b))


def test_gs_respects_mask():
    rng = np.random.default_rng(5)
    m, x = hyperplane_instance(rng, 0.1)
    mask = np.array([True, False])
    res = growing_spheres(m, x, GsConfig(), mask)
    check_invariants(m, x, res, mask)
    assert not growing_spheres(m, x, GsConfig(), np.zeros(2, bool)).success


def test_wachter_near_boundary():
    w = np.array([4.0, 4.0])
    b = -4.0 + np.log(0.499 / 0.501)  # p(0.5, 0.5) = 0.499
    m = logistic(w, b)
    x = np.array([0.5, 0.5])
    assert predict_proba(m, x) == pytest.approx(0.499)
    res = wachter(m, x)
    assert res.success and res.iterations <= 5
    assert res.eval_cost < 1.0


def test_wachter_huge_lambda_stays_put():
    m = logistic([5.0, 5.0], -9.0)
    x = np.array([0.2, 0.3])
    res = wachter(m, x, WtConfig(lam=1e6))
    assert not res.success
    assert np.allclose(res.counterfactual, x, atol=1e-12)


def grid_l1_optimum(m, x, step=0.005):
    g = np.arange(0.0, 1.0 + step / 2, step)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    pos = predict(m, pts) == 1
    return np.abs(pts[pos] - x).sum(axis=1).min()


def test_wachter_grid_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        m, x = hyperplane_instance(rng, rng.uniform(0.05, 0.3))
        res = wachter(m, x)
        assert res.success and predict(m, res.counterfactual) == 1
        assert np.abs(res.counterfactual - x).sum() <= 2.0 * grid_l1_optimum(m, x)


def test_wachter_batch_equals_single_rows():
    m = init_model(ModelSpec("mlp", (16, 16)), 3, seed=4)
    X = np.random.default_rng(2).random((6, 3))
    batch = wachter_batch(m, X)
    for x, r in zip(X, batch):
        s = wachter(m, x)
        assert np.array_equal(s.counterfactual, r.counterfactual)
        assert s.iterations == r.iterations


def test_wachter_mask_and_box():
    m = logistic([-6.0, 6.0, 6.0], -1.0)
    x = np.array([0.9, 0.1, 0.2])
    mask = np.array([True, False, True])
    res = wachter(m, x, WtConfig(), mask)
    check_invariants(m, x, res, mask)
    assert res.success


def test_wachter_non_finite_model_aborts():
    m = logistic([np.nan, 1.0])
    with pytest.raises(RecourseError):
        wachter(m, np.array([0.1, 0.1]))


def test_population_costs_zero_for_accepted():
    m = logistic([10.0, 10.0], -1.0)  # everything in the box except near 0 is accepted
    X = np.array([[0.5, 0.5], [0.9, 0.2], [0.01, 0.02], [0.7, 0.7]])
    pop = recourse_costs_population(m, X, Wachter())
    pred = predict(m, X)
    assert np.all(pop.costs[pred == 1] == 0.0)
    assert np.all(pop.costs[pred == 0] > 0.0)
    assert np.flatnonzero(pop.costs).tolist() == np.flatnonzero(pred == 0).tolist()
    all_pos = recourse_costs_population(m, X[[0, 1, 3]], Wachter())
    assert not all_pos.costs.any() and all_pos.failure_rate == 0.0


class FixedStep:
    """Recourse method that moves each row by a fixed vector."""

    name = "fixed"

    def __init__(self, step, ok=True):
        self.step = np.asarray(step)
        self.ok = ok

    def generate(self, m, X, mask=None):
        return [rc.RecourseResult(x + self.step, self.ok, eval_cost(x, x + self.step), 1, self.name) for x in X]


def test_population_cost_scaling():
    m = logistic([1.0, 0.0], -0.5)
    X = np.array([[0.9, 0.0], [0.1, 0.0], [0.8, 0.0]])
    pop = recourse_costs_population(m, X, FixedStep([0.0, 0.1]))
    assert pop.costs.tolist() == pytest.approx([0.0, 10.0, 0.0])


@pytest.mark.parametrize("policy,expected", [("max_observed", 30.0), ("penalize", 100 * np.sqrt(2)), ("drop", np.nan)])
def test_failure_policies(policy, expected):
    m = logistic([1.0, 0.0], -0.5)
    X = np.array([[0.1, 0.0], [0.2, 0.0], [0.9, 0.0]])

    class Mixed:
        name = "mixed"

        def generate(self, m, X, mask=None):
            return [rc.RecourseResult(X[0] + [0.3, 0], True, 30.0, 1, "mixed"),
                    rc.RecourseResult(X[1], False, 0.0, 1, "mixed")]

    pop = recourse_costs_population(m, X, Mixed(), failure_policy=policy)
    assert pop.failure_rate == 0.5
    assert pop.costs[0] == 30.0 and pop.costs[2] == 0.0
    np.testing.assert_equal(pop.costs[1], expected)


def test_restrict_to_postprocessed_decisions():
    m = logistic([1.0, 0.0], -0.5)
    X = np.array([[0.1, 0.0], [0.2, 0.0], [0.9, 0.0], [0.8, 0.0]])
    pop = recourse_costs_population(m, X, FixedStep([0.5, 0.0]))
    # row 0 flipped up, row 2 flipped down (model accepts it, so nothing can help)
    sub = pop.restrict(np.array([False, True, True, False]))
    assert sub.costs[0] == 0.0 and sub.costs[3] == 0.0
    assert sub.costs[1] == pytest.approx(50.0)
    assert not sub.success[2] and sub.costs[2] == pytest.approx(50.0)
    assert sub.failure_rate == 0.5


def test_trace_export(tmp_path):
    m = logistic([1.0, 0.0], -0.5)
    X = np.array([[0.1, 0.0], [0.9, 0.0]])
    pop = recourse_costs_population(m, X, FixedStep([0.5, 0.0]))
    write_trace(tmp_path / "t.csv", X, pop)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "row,method,success,cost,iterations,x,x_cf"
    assert len(lines) == 2 and lines[1].startswith("0,fixed,1,50,1,")
