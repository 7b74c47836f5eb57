import copy
import json
import os

import numpy as np
import pytest

from banditlab.harness import (
    ConfigError,
    ExperimentConfig,
    aggregate_runs,
    apply_overrides,
    build_instance,
    gamma_sweep,
    load_config,
    read_results,
    resolve_target_arm,
    run_batched_poisoning,
    run_campaign,
    run_episode,
    write_results,
)


def base_config(**kw):
    doc = {
        "environment": {"kind": "synthetic", "dim": 4, "n_arms": 3,
                        "n_contexts": 6, "sigma": 0.1, "instance_seed": 3},
        "learner": {"kind": "linucb", "lam": 0.1, "delta": 0.01},
        "attack": {"kind": "none"},
        "horizon": 2000,
        "n_replications": 1,
        "seed": 7,
        "metric_stride": 500,
    }
    doc.update(kw)
    return ExperimentConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys"):
        ExperimentConfig.from_dict({"environment": {}, "learner": {},
                                    "horizont": 5})


def test_config_rejects_unknown_attack_kind():
    with pytest.raises(ConfigError, match="unknown attack kind"):
        base_config(attack={"kind": "reward-sideways"})


def test_config_file_round_trip(tmp_path):
    cfg = base_config()
    p = tmp_path / "exp.json"
    p.write_text(json.dumps(cfg.to_dict()))
    back = load_config(p)
    assert back.to_dict() == cfg.to_dict()


def test_overrides_dotted_keys():
    cfg = base_config(attack={"kind": "reward-soft", "gamma": 0.5})
    out = apply_overrides(cfg, [("attack.gamma", "0.22"), ("horizon", "123")])
    assert out.attack["gamma"] == 0.22
    assert out.horizon == 123
    with pytest.raises(ConfigError):
        apply_overrides(cfg, [("attack.nested.key", "1")])


def test_single_context_attack_requires_ridge_learner():
    cfg = base_config(learner={"kind": "exp4"},
                      attack={"kind": "single-ts"})
    with pytest.raises(ConfigError, match="ridge learner"):
        run_episode(cfg, 0)


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------

def test_zero_horizon_empty_metrics():
    m = run_episode(base_config(horizon=0), 0)
    assert m.steps == [] and m.total_cost == 0.0 and m.total_target_pulls == 0


def test_unattacked_run_regret_sublinear():
    m = run_episode(base_config(horizon=4000, metric_stride=400), 1)
    steps = np.array(m.steps, dtype=float)
    regret = np.array(m.regret)
    rate_early = regret[4] / steps[4]
    rate_late = regret[-1] / steps[-1]
    assert rate_late < rate_early


def test_reward_attack_interposition_never_leaks_true_nontarget_reward():
    cfg = base_config(attack={"kind": "reward-stationary"}, horizon=800)
    fed, originals = [], []

    def probe(rec, outcome):
        if rec.arm != tgt:
            assert rec.attacked
            assert rec.fed_reward == outcome.perturbed_reward
            fed.append(rec.fed_reward)
            originals.append(rec.true_reward)
        else:
            assert rec.fed_reward == rec.true_reward

    inst = build_instance(cfg)
    tgt = resolve_target_arm(cfg, inst)
    run_episode(cfg, 3, probe=probe)
    fed = np.array(fed)
    assert len(fed) > 10
    # fed rewards are the attacker's noise, mean ~0, never the true values
    assert abs(fed.mean()) < 4 * 0.1 / np.sqrt(len(fed)) + 0.02
    assert np.all(fed != np.array(originals))


def test_costs_zero_whenever_not_attacked():
    cfg = base_config(attack={"kind": "reward-soft", "gamma": 0.4},
                      horizon=600)

    def probe(rec, outcome):
        if not rec.attacked:
            assert rec.cost == 0.0

    m = run_episode(cfg, 5, probe=probe)
    diffs = np.diff([0.0] + m.cum_cost)
    assert np.all(diffs >= -1e-12)  # cumulative cost nondecreasing


def test_regret_identity_offline_recompute():
    cfg = base_config(attack={"kind": "context-dilation"}, horizon=700)
    m = run_episode(cfg, 11, record_log=True)
    inst = build_instance(cfg)
    expected = inst.expected_rewards
    best = expected.max(axis=0)
    offline = sum(best[rec.context_index] - expected[rec.arm, rec.context_index]
                  for rec in m.log)
    assert abs(offline - m.total_regret) <= 1e-9


def test_deterministic_byte_identical_csv(tmp_path):
    cfg = base_config(attack={"kind": "reward-soft", "gamma": 0.3},
                      horizon=1500)
    blobs = []
    for i in range(2):
        m = run_episode(cfg, 9)
        csv_path, _ = write_results(m, tmp_path / f"v{i}", config=cfg)
        blobs.append(open(csv_path, "rb").read())
    assert blobs[0] == blobs[1]


def test_lints_and_eps_and_exp4_run_under_each_attack_family():
    for learner in ({"kind": "lints"}, {"kind": "eps-greedy"},
                    {"kind": "exp4", "n_experts": 6}):
        for attack in ({"kind": "none"}, {"kind": "reward-stationary"},
                       {"kind": "reward-soft", "gamma": 0.3}):
            cfg = base_config(learner=learner, attack=attack, horizon=300)
            m = run_episode(cfg, 2)
            assert m.horizon == 300
    # dilation previews work for every ridge learner (best effort for the
    # sampling learner)
    for learner in ({"kind": "linucb"}, {"kind": "lints"},
                    {"kind": "eps-greedy"}):
        cfg = base_config(learner=learner,
                          attack={"kind": "context-dilation"}, horizon=300)
        m = run_episode(cfg, 2)
        assert m.total_cost >= 0.0


def test_single_context_episode_counts_visits_and_solves():
    cfg = base_config(
        learner={"kind": "linucb"},
        attack={"kind": "single-ucb-relaxed", "xi": 0.01},
        horizon=1200, attack_start=200, target_context_index=2)
    m = run_episode(cfg, 13)
    assert m.target_context_index == 2
    assert m.target_visits > 0
    assert (m.solver_feasible + m.solver_infeasible + m.solver_failures
            == m.target_visits)
    assert m.target_visit_successes <= m.target_visits


# ---------------------------------------------------------------------------
# campaigns, sweeps, persistence
# ---------------------------------------------------------------------------

def test_campaign_single_replication_equals_episode():
    cfg = base_config(horizon=400)
    runs, agg = run_campaign(cfg)
    solo = run_episode(cfg, cfg.seed)
    assert len(runs) == 1
    assert runs[0].total_regret == solo.total_regret
    assert agg["total_regret"]["std"] == 0.0


def test_aggregate_identical_runs_zero_std():
    cfg = base_config(horizon=300)
    run = run_episode(cfg, 4)
    agg = aggregate_runs([run, copy.deepcopy(run)])
    assert agg["total_cost"]["std"] == 0.0
    assert agg["total_regret"]["std"] == 0.0


def test_campaign_parallel_matches_serial(monkeypatch):
    cfg = base_config(horizon=400, n_replications=3)
    runs_serial, agg_serial = run_campaign(cfg)
    monkeypatch.setenv("BANDITLAB_THREADS", "2")
    runs_par, agg_par = run_campaign(cfg)
    assert [r.total_regret for r in runs_par] == [r.total_regret
                                                  for r in runs_serial]
    assert agg_par == agg_serial


def test_gamma_sweep_single_value_one_row():
    cfg = base_config(attack={"kind": "reward-soft", "gamma": 0.5},
                      horizon=300)
    rows = gamma_sweep(cfg, [0.4])
    assert len(rows) == 1 and rows[0]["gamma"] == 0.4


def test_results_round_trip_and_header(tmp_path):
    cfg = base_config(horizon=2300, metric_stride=500)
    m = run_episode(cfg, 1)
    csv_path, json_path = write_results(m, tmp_path, config=cfg)
    with open(csv_path) as fh:
        assert fh.readline().strip() == "step,cum_cost,target_pulls,regret"
    series = read_results(csv_path)
    assert series["step"] == m.steps
    assert series["cum_cost"] == m.cum_cost
    assert series["regret"] == m.regret
    doc = json.loads(open(json_path).read())
    assert doc["config"]["horizon"] == 2300
    # stride rows plus the off-stride final step
    assert series["step"] == [500, 1000, 1500, 2000, 2300]


def test_downsampling_exact_multiple_has_no_duplicate_final():
    cfg = base_config(horizon=2000, metric_stride=500)
    m = run_episode(cfg, 1)
    assert m.steps == [500, 1000, 1500, 2000]


# ---------------------------------------------------------------------------
# batched poisoning
# ---------------------------------------------------------------------------

def test_batched_poisoning_forces_target_afterwards():
    cfg = base_config(
        environment={"kind": "synthetic", "dim": 3, "n_arms": 3,
                     "n_contexts": 5, "sigma": 0.1, "instance_seed": 1},
        attack={"kind": "batch-poison", "batch_size": 30, "n_batches": 4},
        horizon=120)
    out = run_batched_poisoning(cfg, 2)
    assert out["post_poison_steps"] == 90
    assert out["post_poison_target_fraction"] == 1.0
    assert out["anv_bound_holds"]
    assert out["poison_cost"] > 0


def test_batched_poisoning_requires_matching_config():
    with pytest.raises(ConfigError):
        run_batched_poisoning(base_config(), 0)
    cfg = base_config(attack={"kind": "batch-poison", "batch_size": 10,
                              "n_batches": 2},
                      learner={"kind": "lints"})
    with pytest.raises(ConfigError, match="optimistic learner"):
        run_batched_poisoning(cfg, 0)
