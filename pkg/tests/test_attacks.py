import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from advrec.agent import Agent, AgentConfig
from advrec.attacks import (
    AttackSpec, Perturbation, Scheduler, craft_dataset, deepfool, fgsm, fgsm_from_grad, jsma,
    random_mask, timed_mask,
)
from advrec.env import ConfigError
from advrec.ndiff import Graph
from helpers import numeric_grad, rel_error


class LinearModel:
    """Logits ``W s``; critic ``q . s`` regardless of the item."""

    def __init__(self, W, q=None):
        self.W = np.asarray(W, dtype=np.float64)
        self.qw = np.zeros(self.W.shape[1]) if q is None else np.asarray(q, dtype=np.float64)

    def policy_logits(self, g, s):
        return g.linear(s, g.constant(self.W))

    def q_value(self, g, s, item_vec):
        return g.sum(g.mul(s, g.constant(self.qw)))


def test_fgsm_linf_sign_rule():
    p = fgsm(LinearModel(np.eye(2), q=[0.3, -0.2]), np.zeros(2), np.zeros(2), "linf", 0.5)
    np.testing.assert_allclose(p.delta, [-0.5, 0.5])
    assert p.applied


def test_fgsm_l2_normalized():
    p = fgsm(LinearModel(np.eye(2), q=[3.0, 4.0]), np.ones(2), np.zeros(2), "l2", 1.0)
    np.testing.assert_allclose(p.delta, [-0.6, -0.8])
    assert p.norm_l2 == pytest.approx(1.0)


def test_fgsm_l1_single_coordinate():
    p = fgsm_from_grad([0.3, -0.2], "l1", 0.1)
    np.testing.assert_allclose(p.delta, [-0.1, 0.0])


def test_fgsm_zero_gradient_skips():
    p = fgsm_from_grad(np.zeros(3), "linf", 1.0)
    assert not p.applied and not np.any(p.delta)


@settings(max_examples=100)
@given(arrays(np.float64, st.integers(2, 10), elements=st.floats(-5, 5)), st.floats(0.01, 3),
       st.sampled_from(["l1", "l2", "linf"]))
def test_fgsm_budget_and_support(grad, eps, norm):
    p = fgsm_from_grad(grad, norm, eps)
    if not np.any(grad):
        assert not p.applied
        return
    assert getattr(p, f"norm_{norm}") <= eps + 1e-9
    if norm == "l1":
        assert np.count_nonzero(p.delta) == 1
    if norm == "linf":
        nz = grad != 0
        np.testing.assert_allclose(np.abs(p.delta[nz]), eps)
    # reported norms agree with the vector
    assert p.norm_l1 == pytest.approx(np.abs(p.delta).sum(), abs=1e-9)
    assert p.norm_l2 == pytest.approx(np.linalg.norm(p.delta), abs=1e-9)
    assert p.norm_linf == pytest.approx(np.abs(p.delta).max(), abs=1e-9)


def test_fgsm_descends_q():
    rng = np.random.default_rng(0)
    agent = Agent.init(AgentConfig(n_items=20, item_dim=4), rng)
    state, item = rng.normal(size=8), rng.normal(size=4)
    before = agent.q(state, item)
    for norm in ("l1", "l2", "linf"):
        p = fgsm(agent, state, item, norm, 1e-3)
        assert agent.q(state + p.delta, item) < before


def test_jsma_linear_flip_after_two_iterations():
    model = LinearModel(np.eye(2))
    p = jsma(model, np.array([1.0, 0.0]), epsilon=2.0, theta=0.6, max_dims=2, max_iters=10)
    assert p.iterations == 2
    np.testing.assert_allclose(p.delta, [0.0, 1.2])
    assert np.argmax(model.W @ (np.array([1.0, 0.0]) + p.delta)) == 1


def test_jsma_already_target_and_no_budget():
    model = LinearModel(np.eye(2))
    p = jsma(model, np.array([1.0, 0.0]), 2.0, 0.6, 2, 10, target=0)
    assert not p.applied and not np.any(p.delta)
    p = jsma(model, np.array([1.0, 0.0]), 2.0, 0.6, 0, 10)
    assert not p.applied


def test_jsma_respects_linf_budget():
    rng = np.random.default_rng(3)
    agent = Agent.init(AgentConfig(n_items=15, item_dim=3), rng)
    for _ in range(20):
        p = jsma(agent, rng.normal(size=6), epsilon=0.35, theta=0.1, max_dims=3, max_iters=30)
        assert p.norm_linf <= 0.35 + 1e-9
        assert np.count_nonzero(p.delta) <= 3


def test_deepfool_binary_linear_closed_form():
    w = np.array([1.0, 0.0])
    model = LinearModel(np.stack([w, -w]))
    p = deepfool(model, np.array([2.0, 0.0]), epsilon=10.0, sample_k=1, overshoot=0.0, max_iters=5,
                 rng=np.random.default_rng(0))
    np.testing.assert_allclose(p.delta, [-2.0, 0.0], atol=1e-12)
    assert p.iterations == 1


def test_deepfool_on_boundary_needs_no_step():
    model = LinearModel(np.stack([[1.0, 0.0], [-1.0, 0.0]]))
    p = deepfool(model, np.zeros(2), 1.0, 1, 0.02, 5, np.random.default_rng(0))
    assert p.norm_l2 <= 1e-12


def test_deepfool_l2_cap():
    model = LinearModel(np.stack([[1.0, 0.0], [-1.0, 0.0]]))
    p = deepfool(model, np.array([5.0, 0.0]), 1.0, 1, 0.02, 5, np.random.default_rng(0))
    assert p.norm_l2 == pytest.approx(1.0)


def test_deepfool_full_sample_equals_exhaustive_and_is_closest():
    rng = np.random.default_rng(4)
    for trial in range(30):
        W = rng.normal(size=(8, 5))
        x = rng.normal(size=5)
        model = LinearModel(W)
        full = deepfool(model, x, 100.0, 7, 0.0, 1, np.random.default_rng(trial))
        again = deepfool(model, x, 100.0, 7, 0.0, 1, np.random.default_rng(trial + 1000))
        np.testing.assert_array_equal(full.delta, again.delta)
        for k in (1, 2, 4):
            sub = deepfool(model, x, 100.0, k, 0.0, 1, np.random.default_rng(trial))
            assert full.norm_l2 <= sub.norm_l2 + 1e-12


def test_deepfool_flips_mlp_policy():
    rng = np.random.default_rng(5)
    agent = Agent.init(AgentConfig(n_items=12, item_dim=3), rng)
    flipped = 0
    for _ in range(20):
        x = rng.normal(size=6)
        p = deepfool(agent, x, 50.0, 11, 0.02, 50, rng)
        if p.applied:
            flipped += np.argmax(agent.logits(x + p.delta)) != np.argmax(agent.logits(x))
    assert flipped >= 15


def test_attack_logit_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    agent = Agent.init(AgentConfig(n_items=9, item_dim=3), rng)
    for _ in range(100):
        x = rng.normal(size=6)
        c, a = rng.choice(9, size=2, replace=False)

        def margin(v):
            f = agent.logits(v)
            return f[c] - f[a]

        g = Graph(None)
        s = g.leaf(x)
        f = agent.policy_logits(g, s)
        seed = np.zeros(9)
        seed[c], seed[a] = 1.0, -1.0
        g.backward(f, seed)
        assert rel_error(s.grad, numeric_grad(margin, x)) < 1e-4

        def prob(v):
            z = agent.logits(v)
            e = np.exp(z - z.max())
            return (e / e.sum())[c]

        g = Graph(None)
        s = g.leaf(x)
        p = g.softmax(agent.policy_logits(g, s))
        seed = np.zeros(9)
        seed[c] = 1.0
        g.backward(p, seed)
        assert rel_error(s.grad, numeric_grad(prob, x)) < 1e-4


def test_timed_mask_examples():
    assert timed_mask([0.7, 0.2, 0.1], 0.4)
    assert not timed_mask([0.25] * 4, 0.0)
    assert timed_mask([0.5, 0.3, 0.2], 0.0)


def test_random_mask():
    rng = np.random.default_rng(0)
    assert all(random_mask(1.0, rng) for _ in range(100))
    freq = np.mean([random_mask(0.02, rng) for _ in range(10_000)])
    assert 0.01 <= freq <= 0.03
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    assert [random_mask(0.3, r1) for _ in range(50)] == [random_mask(0.3, r2) for _ in range(50)]


def test_spec_validation():
    with pytest.raises(ConfigError, match="valid families"):
        AttackSpec("bogus", 0.1)
    with pytest.raises(ConfigError):
        AttackSpec("fgsm_l1", 0.0)
    with pytest.raises(ConfigError):
        Scheduler("random", p_freq=0.0)
    with pytest.raises(ConfigError):
        Scheduler("timed", threshold=1.0)
    spec = AttackSpec.from_dict({"family": "jsma", "epsilon": 0.5, "scheduler": {"kind": "timed", "threshold": 0.2}})
    assert spec.name == "jsma" and spec.scheduler.threshold == 0.2
    assert AttackSpec.from_dict(spec.to_dict()) == spec


@pytest.fixture(scope="module")
def tiny_agent(small_world):
    return Agent.init(AgentConfig(small_world.n_items, small_world.table.dim, hidden=16), np.random.default_rng(0))


def test_craft_none_is_benign(small_world, tiny_agent):
    trajs, report = craft_dataset(tiny_agent, small_world, AttackSpec("none"), range(10), seed=0)
    assert all(t.label == 0 for t in trajs)
    assert report.achieved_frequency == 0.0


def test_craft_always_attacks_every_step(small_world, tiny_agent):
    spec = AttackSpec("fgsm_linf", 0.1)
    trajs, report = craft_dataset(tiny_agent, small_world, spec, range(10), seed=0)
    assert report.achieved_frequency == 1.0
    assert report.mean_delta_linf == pytest.approx(0.1)
    for t in trajs:
        assert t.label == 1
        for s in t.steps:
            assert s.attacked and s.delta_norm > 0


def test_craft_timed_high_threshold_on_flat_policy(small_world, tiny_agent):
    spec = AttackSpec("fgsm_l1", 0.1, Scheduler("timed", threshold=0.99))
    _, report = craft_dataset(tiny_agent, small_world, spec, range(10), seed=0)
    assert report.achieved_frequency == 0.0


@pytest.mark.parametrize("family", ["fgsm_l1", "fgsm_l2", "fgsm_linf", "jsma", "deepfool"])
def test_craft_norm_budget_holds(small_world, tiny_agent, family):
    spec = AttackSpec(family, 0.3, theta=0.1)
    trajs, report = craft_dataset(tiny_agent, small_world, spec, range(6), seed=1)
    bound = {"fgsm_l1": report.mean_delta_l1, "fgsm_l2": report.mean_delta_l2,
             "fgsm_linf": report.mean_delta_linf, "jsma": report.mean_delta_linf,
             "deepfool": report.mean_delta_l2}[family]
    assert bound <= 0.3 + 1e-9
    for t in trajs:
        for s in t.steps:
            assert s.attacked == (s.delta_norm > 0)


def test_craft_is_deterministic_and_worker_independent(small_world, tiny_agent):
    spec = AttackSpec("deepfool", 0.5, Scheduler("random", p_freq=0.5), sample_k=3)
    a, ra = craft_dataset(tiny_agent, small_world, spec, range(8), seed=3, workers=1)
    b, rb = craft_dataset(tiny_agent, small_world, spec, range(8), seed=3, workers=2)
    assert [t.to_json() for t in a] == [t.to_json() for t in b]
    assert ra.achieved_frequency == rb.achieved_frequency


def test_perturbation_zero():
    p = Perturbation.zero(4)
    assert not p.applied and p.norm_l2 == 0.0
