import math

import numpy as np
import pytest

import banditlab.learners as L
from banditlab.learners import (
    EpsilonGreedy,
    Exp4,
    LearnerParams,
    LinTS,
    LinUCB,
    RidgeArmState,
    confidence_radius,
    make_expert_panel,
)
from banditlab.model import generate_synthetic_instance


def params(**kw):
    return LearnerParams(**{"lam": 0.1, "delta": 0.01, "sigma": 0.1,
                            "param_bound": 1.0, "context_bound": 1.0, **kw})


# ---------------------------------------------------------------------------
# confidence radius
# ---------------------------------------------------------------------------

def test_beta_noise_free_reduces_to_regularization_term():
    p = params(sigma=0.0, param_bound=1.0, lam=1.0)
    for pulls in (0, 5, 1000):
        assert confidence_radius(p, pulls, 7) == pytest.approx(1.0)


def test_beta_direct_substitution():
    p = params(sigma=1.0, lam=1.0, delta=1 / math.e, param_bound=1.0,
               context_bound=1.0)
    want = math.sqrt(2 * math.log(2 * math.e)) + 1.0
    assert confidence_radius(p, 0, 2) == pytest.approx(want, abs=1e-12)


def test_beta_nondecreasing_in_pulls():
    p = params()
    vals = [confidence_radius(p, n, 5) for n in (0, 1, 10, 1000, 100000)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert confidence_radius(p, 1000, 5) >= confidence_radius(p, 10, 5)


# ---------------------------------------------------------------------------
# ridge state
# ---------------------------------------------------------------------------

def test_single_update_one_dimensional():
    s = RidgeArmState(1, lam=1.0)
    s.update([1.0], 1.0)
    assert s.theta[0] == pytest.approx(0.5)
    assert s.pulls == 1


def test_updates_match_batch_least_squares():
    rng = np.random.default_rng(0)
    s = RidgeArmState(4, lam=0.3)
    xs, rs = [], []
    for _ in range(100):
        x = rng.normal(size=4)
        r = rng.normal()
        xs.append(x)
        rs.append(r)
        s.update(x, r)
    xs = np.stack(xs)
    want = np.linalg.solve(0.3 * np.eye(4) + xs.T @ xs, xs.T @ np.array(rs))
    assert np.linalg.norm(s.theta - want) <= 1e-8
    assert s.pulls == 100


def test_estimate_consistent_after_every_update_across_refresh(monkeypatch):
    monkeypatch.setattr(L, "_REFRESH_EVERY", 7)
    rng = np.random.default_rng(1)
    s = RidgeArmState(3, lam=0.5)
    for _ in range(40):
        s.update(rng.normal(size=3), rng.normal())
        want = np.linalg.solve(s.V, s.b)
        assert np.linalg.norm(s.theta - want) <= 1e-8
        evals = np.linalg.eigvalsh(s.V)
        assert evals.min() >= 0.5 - 1e-9


# ---------------------------------------------------------------------------
# selection rules
# ---------------------------------------------------------------------------

def test_ucb_fresh_learner_tie_breaks_to_first_arm():
    learner = LinUCB(4, 3, params())
    assert learner.select([0.3, 0.2, 0.1], t=1) == 0


def test_ucb_one_dimensional_closed_form():
    p = params(lam=0.5, sigma=0.2, delta=0.05, param_bound=1.0,
               context_bound=1.0)
    learner = LinUCB(2, 1, p)
    learner.update([1.0], 1, 1.0)  # arm 1: V = lam+1, b = 1
    x = 0.7
    b0 = confidence_radius(p, 0, 1)
    b1 = confidence_radius(p, 1, 1)
    want0 = b0 * x / math.sqrt(p.lam)
    want1 = x / (p.lam + 1) + b1 * x / math.sqrt(p.lam + 1)
    got = learner.scores([x])
    assert got[0] == pytest.approx(want0, abs=1e-12)
    assert got[1] == pytest.approx(want1, abs=1e-12)
    assert learner.select([x], t=2) == int(np.argmax([want0, want1]))


def test_ucb_argmax_invariant_under_common_positive_scaling():
    rng = np.random.default_rng(2)
    learner = LinUCB(3, 4, params())
    for _ in range(30):
        learner.update(rng.normal(size=4) / 3, int(rng.integers(3)), rng.uniform())
    x = rng.normal(size=4)
    scores = learner.scores(x)
    for c in (1e-3, 0.5, 7.0, 1e4):
        assert int(np.argmax(scores)) == int(np.argmax(c * scores))


def test_ts_zero_scale_reduces_to_greedy():
    p = params(ts_scale=lambda t: 0.0)
    learner = LinTS(3, 2, p)
    rng = np.random.default_rng(3)
    learner.update([1.0, 0.0], 1, 1.0)
    learner.update([0.0, 1.0], 2, 0.1)
    for _ in range(10):
        got = learner.select([1.0, 0.0], t=5, rng=rng)
        assert got == int(np.argmax(learner.greedy_scores([1.0, 0.0])))


def test_ts_symmetric_arms_split_evenly():
    learner = LinTS(2, 2, params())
    rng = np.random.default_rng(4)
    picks = np.array([learner.select([0.7, 0.3], t=2, rng=rng)
                      for _ in range(100_000)])
    assert abs(np.mean(picks) - 0.5) < 0.01


def test_eps_greedy_first_step_uniform():
    learner = EpsilonGreedy(5, 2, params())
    rng = np.random.default_rng(5)
    picks = np.array([learner.select([1.0, 0.0], t=1, rng=rng)
                      for _ in range(20_000)])
    freqs = np.bincount(picks, minlength=5) / len(picks)
    assert np.all(np.abs(freqs - 0.2) < 0.02)


def test_eps_greedy_late_steps_mostly_exploit():
    learner = EpsilonGreedy(4, 2, params())
    learner.update([1.0, 0.0], 2, 1.0)
    rng = np.random.default_rng(6)
    t = 10 ** 6  # eps = 1e-3
    picks = np.array([learner.select([1.0, 0.0], t=t, rng=rng)
                      for _ in range(100_000)])
    non_greedy = np.mean(picks != 2)
    assert non_greedy <= 0.002


# ---------------------------------------------------------------------------
# expert-advice learner
# ---------------------------------------------------------------------------

def test_exp4_full_reward_is_uninformative():
    learner = Exp4(3, experts=[None, None], eta=0.5)
    advice = np.array([[1.0, 0.0, 0.0], [0.0, 0.5, 0.5]])
    learner.weights = np.array([0.3, 0.7])
    learner.step(advice, arm=0, reward_value=1.0, probs=np.array([0.4, 0.3, 0.3]))
    assert np.allclose(learner.weights, [0.3, 0.7])


def test_exp4_importance_weights_direct_substitution():
    learner = Exp4(2, experts=[None, None], eta=0.1)
    advice = np.array([[1.0, 0.0], [0.0, 1.0]])
    probs = np.array([0.5, 0.5])
    # r = 0 on arm 0: r_hat = (1 - 2, 1) = (-1, 1)
    learner.weights = np.array([0.5, 0.5])
    learner.step(advice, arm=0, reward_value=0.0, probs=probs)
    want = np.array([math.exp(-0.1), math.exp(0.1)])
    want /= want.sum()
    assert np.allclose(learner.weights, want)


def test_exp4_uniform_experts_leave_weights_unchanged():
    uniform = lambda x, rng: np.full(3, 1 / 3)
    learner = Exp4(3, experts=[uniform, uniform], eta=0.7)
    rng = np.random.default_rng(7)
    for t in range(1, 20):
        arm = learner.select([0.5], t, rng)
        learner.update([0.5], arm, rng.uniform())
        assert np.allclose(learner.weights, 0.5)


def test_exp4_weights_stay_on_simplex_and_reward_expert_grows():
    rng = np.random.default_rng(8)
    inst = generate_synthetic_instance(4, 3, 6, rng)
    experts = make_expert_panel(inst, target_arm=1, n_experts=5)
    learner = Exp4(3, experts, eta=0.3)
    w_const = learner.weights[-2]
    for t in range(1, 300):
        x = inst.contexts[rng.integers(inst.n_contexts)]
        arm = learner.select(x, t, rng)
        # feed rewards that make the constant-target expert look best
        learner.update(x, arm, 1.0 if arm == 1 else 0.0)
        assert learner.weights.min() >= 0
        assert learner.weights.sum() == pytest.approx(1.0, abs=1e-10)
    assert learner.weights[-2] > w_const


def test_expert_panel_composition():
    rng = np.random.default_rng(9)
    inst = generate_synthetic_instance(3, 4, 5, rng)
    experts = make_expert_panel(inst, target_arm=2, n_experts=10)
    assert len(experts) == 10
    x = inst.contexts[0]
    const = experts[-2](x, rng)
    assert const[2] == 1.0 and const.sum() == 1.0
    oracle = experts[-1](x, rng)
    assert oracle[inst.best_arm_for(x)] == 1.0 and oracle.sum() == 1.0
    for e in experts[:-2]:
        advice = e(x, rng)
        assert advice.sum() == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

def test_scaling_identity_estimates_and_exploration_norm():
    # feeding alpha-scaled contexts with unscaled rewards equals the
    # unscaled regression with regularization lam/alpha^2, shrunk by alpha
    rng = np.random.default_rng(10)
    for _ in range(25):
        alpha = rng.uniform(1.5, 6.0)
        lam = rng.uniform(0.05, 1.0)
        scaled = RidgeArmState(3, lam=lam)
        plain = RidgeArmState(3, lam=lam / alpha ** 2)
        for _ in range(rng.integers(1, 60)):
            x = rng.normal(size=3)
            r = rng.normal()
            scaled.update(alpha * x, r)
            plain.update(x, r)
        assert np.linalg.norm(scaled.theta - plain.theta / alpha) <= 1e-8
        probe = rng.normal(size=3)
        assert scaled.weighted_norm_inv(probe) == pytest.approx(
            plain.weighted_norm_inv(probe) / alpha, abs=1e-8)


def test_confidence_coverage_over_seeds():
    # unattacked runs: the true parameter leaves an arm's ellipsoid on at
    # most a ~5*delta fraction of (step, arm) pairs
    horizon, n_seeds = 2000, 200
    p = params(sigma=0.1, delta=0.01, lam=0.1)
    misses = 0
    total = 0
    for seed in range(n_seeds):
        rng = np.random.default_rng(1000 + seed)
        inst = generate_synthetic_instance(3, 3, 8, rng, sigma=0.1)
        pp = LearnerParams(lam=0.1, delta=0.01, sigma=0.1,
                           param_bound=inst.param_norm_bound,
                           context_bound=inst.context_norm_bound)
        learner = LinUCB(inst.n_arms, inst.dim, pp)
        for t in range(1, horizon + 1):
            idx = rng.integers(inst.n_contexts)
            x = inst.contexts[idx]
            arm = learner.select(x, t)
            r = float(inst.expected_rewards[arm, idx]) + rng.normal(0, 0.1)
            learner.update(x, arm, r)
            if t % 100 == 0:  # subsample the (t, a) grid
                for a in range(inst.n_arms):
                    s = learner.arms[a]
                    delta_v = inst.arm_params[a] - s.theta
                    dist = math.sqrt(delta_v @ s.V @ delta_v)
                    misses += dist > learner.beta(a)
                    total += 1
    assert misses / total <= 5 * 0.01


def test_snapshot_round_trip():
    rng = np.random.default_rng(11)
    learner = LinUCB(3, 4, params())
    for _ in range(37):
        learner.update(rng.normal(size=4) / 2, int(rng.integers(3)),
                       rng.uniform())
    doc = learner.snapshot()
    other = LinUCB(3, 4, params())
    other.restore(doc)
    x = rng.normal(size=4)
    assert np.allclose(other.scores(x), learner.scores(x), atol=1e-10)
    assert [a.pulls for a in other.arms] == [a.pulls for a in learner.arms]
