"""Closed-loop simulation of environment, learner and attacker, with
metric collection, replication, and result persistence."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .attacks import (
    BatchPoisonConfig,
    ContextDilationAttack,
    GreedyContextAttack,
    SingleContextAttackConfig,
    SoftRewardAttack,
    StationaryRewardAttack,
    TsContextAttack,
    UcbFullContextAttack,
    UcbRelaxedContextAttack,
    compute_poison_magnitude,
    poison_batch,
)
from .learners import (
    EpsilonGreedy,
    Exp4,
    LearnerParams,
    LinTS,
    LinUCB,
    confidence_radius,
    make_expert_panel,
)
from .model import (
    BanditInstance,
    generate_synthetic_instance,
    load_dataset_instance,
    load_instance,
)


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


LEARNER_KINDS = ("linucb", "lints", "eps-greedy", "exp4")
REWARD_ATTACKS = ("reward-stationary", "reward-soft")
CONTEXT_ATTACKS = ("context-dilation",)
SINGLE_CONTEXT_ATTACKS = ("single-ucb-relaxed", "single-ucb-full",
                          "single-ts", "single-greedy")
ATTACK_KINDS = (("none",) + REWARD_ATTACKS + CONTEXT_ATTACKS
                + SINGLE_CONTEXT_ATTACKS + ("batch-poison",))


@dataclass
class ExperimentConfig:
    """One experiment: environment, learner, attack, horizon, replication."""
    environment: dict
    learner: dict
    attack: dict = field(default_factory=lambda: {"kind": "none"})
    horizon: int = 10_000
    n_replications: int = 1
    seed: int = 0
    output_dir: str | None = None
    metric_stride: int = 1000
    attack_start: int = 1
    target_arm: int | None = None
    target_context_index: int | None = None

    def __post_init__(self):
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        if self.n_replications < 1:
            raise ConfigError("n_replications must be >= 1")
        if self.metric_stride < 1:
            raise ConfigError("metric_stride must be >= 1")
        kind = self.attack.get("kind", "none")
        if kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {kind!r}; "
                              f"expected one of {ATTACK_KINDS}")
        if self.learner.get("kind") not in LEARNER_KINDS:
            raise ConfigError(f"unknown learner kind "
                              f"{self.learner.get('kind')!r}; "
                              f"expected one of {LEARNER_KINDS}")

    @classmethod
    def from_dict(cls, doc):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        missing = {"environment", "learner"} - set(doc)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return {
            "environment": dict(self.environment),
            "learner": dict(self.learner),
            "attack": dict(self.attack),
            "horizon": self.horizon,
            "n_replications": self.n_replications,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "metric_stride": self.metric_stride,
            "attack_start": self.attack_start,
            "target_arm": self.target_arm,
            "target_context_index": self.target_context_index,
        }


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


def apply_overrides(config, overrides):
    """Apply dotted-key overrides (e.g. attack.gamma=0.22) after parsing."""
    doc = config.to_dict()
    for key, raw in overrides:
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"override key {key!r} does not match the config")
            node = node[part]
        node[parts[-1]] = value
    return ExperimentConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_instance(config):
    env = config.environment
    kind = env.get("kind")
    if kind == "synthetic":
        rng = np.random.default_rng(env.get("instance_seed", 0))
        return generate_synthetic_instance(env["dim"], env["n_arms"],
                                           env.get("n_contexts", 10), rng,
                                           sigma=env.get("sigma", 0.1))
    if kind == "dataset":
        return load_dataset_instance(env["features_path"], env["n_arms"],
                                     env.get("sigma", 0.1))
    if kind == "instance":
        return load_instance(env["path"])
    raise ConfigError(f"unknown environment kind {kind!r}")


def resolve_target_arm(config, instance):
    """Explicit target, the instance's designated target, or the arm with
    the lowest average expected reward."""
    if config.target_arm is not None:
        if not 0 <= config.target_arm < instance.n_arms:
            raise ConfigError(f"target_arm {config.target_arm} out of range")
        return config.target_arm
    if instance.target_arm is not None:
        return instance.target_arm
    return instance.worst_arm()


def resolve_single_context_targets(config, instance, rng):
    """Target context (explicit index or a uniform draw) and target arm
    (explicit, or the arm worst on that context)."""
    if config.target_context_index is not None:
        idx = config.target_context_index
        if not 0 <= idx < instance.n_contexts:
            raise ConfigError(f"target_context_index {idx} out of range")
    else:
        idx = int(rng.integers(instance.n_contexts))
    if config.target_arm is not None:
        arm = config.target_arm
    else:
        arm = int(np.argmin(instance.expected_rewards[:, idx]))
    return idx, arm


def learner_params(config, instance):
    lc = config.learner
    return LearnerParams(
        lam=lc.get("lam", 0.1),
        delta=lc.get("delta", 0.01),
        sigma=lc.get("sigma", instance.sigma),
        param_bound=lc.get("param_bound") or instance.param_norm_bound,
        context_bound=lc.get("context_bound") or instance.context_norm_bound,
    )


def build_learner(config, instance, target_arm):
    lc = config.learner
    kind = lc["kind"]
    params = learner_params(config, instance)
    if kind == "linucb":
        return LinUCB(instance.n_arms, instance.dim, params)
    if kind == "lints":
        return LinTS(instance.n_arms, instance.dim, params)
    if kind == "eps-greedy":
        return EpsilonGreedy(instance.n_arms, instance.dim, params)
    if kind == "exp4":
        n_experts = lc.get("n_experts", 10)
        experts = make_expert_panel(instance, target_arm, n_experts)
        eta = lc.get("eta") or Exp4.default_eta(n_experts, instance.n_arms,
                                                config.horizon)
        return Exp4(instance.n_arms, experts, eta)
    raise ConfigError(f"unknown learner kind {kind!r}")


def build_attack(config, instance, target_arm, target_context_index=None):
    ac = config.attack
    kind = ac.get("kind", "none")
    if kind == "none":
        return None, "none"
    if kind == "reward-stationary":
        sigma = ac.get("noise_sigma", instance.sigma)
        return StationaryRewardAttack(target_arm, sigma), "reward"
    if kind == "reward-soft":
        params = learner_params(config, instance)
        return SoftRewardAttack(target_arm, ac.get("gamma", 0.22),
                                instance.n_arms, instance.dim, params), "reward"
    if kind == "context-dilation":
        nu = instance.with_target(target_arm).nu
        return ContextDilationAttack(
            target_arm, nu=nu, alpha=ac.get("alpha"),
            budget_fraction=ac.get("budget_fraction", 1.0),
            budget_multiplier=ac.get("budget_multiplier")), "context"
    if kind in SINGLE_CONTEXT_ATTACKS:
        if config.learner["kind"] == "exp4":
            raise ConfigError("single-context attacks need a ridge learner")
        sc = SingleContextAttackConfig(
            target_arm=target_arm,
            margin=ac.get("xi", 0.001),
            ts_confidence=ac.get("ts_confidence", 0.05),
            feas_tol=ac.get("feas_tol", 1e-6),
            solver_passes=ac.get("solver_passes", 2),
            subgrad_iters=ac.get("subgrad_iters", 80),
            n_starts=ac.get("n_starts", 20),
            start_seed=ac.get("start_seed", 0))
        cls = {"single-ucb-relaxed": UcbRelaxedContextAttack,
               "single-ucb-full": UcbFullContextAttack,
               "single-ts": TsContextAttack,
               "single-greedy": GreedyContextAttack}[kind]
        return cls(sc), "single"
    if kind == "batch-poison":
        return None, "batch"
    raise ConfigError(f"unknown attack kind {kind!r}")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

class StepRecord(NamedTuple):
    t: int
    context_index: int
    arm: int
    true_reward: float
    fed_reward: float
    cost: float
    attacked: bool


@dataclass
class RunMetrics:
    seed: int
    horizon: int
    target_arm: int
    steps: list = field(default_factory=list)
    cum_cost: list = field(default_factory=list)
    target_pulls: list = field(default_factory=list)
    regret: list = field(default_factory=list)
    arm_pulls: list = field(default_factory=list)
    total_cost: float = 0.0
    total_target_pulls: int = 0
    total_regret: float = 0.0
    target_context_index: int | None = None
    target_visits: int = 0
    target_visit_successes: int = 0
    solver_feasible: int = 0
    solver_infeasible: int = 0
    solver_failures: int = 0
    log: list | None = None

    def summary(self):
        frac = (self.total_target_pulls / self.horizon) if self.horizon else 0.0
        out = {
            "seed": self.seed,
            "horizon": self.horizon,
            "target_arm": self.target_arm,
            "total_cost": self.total_cost,
            "total_regret": self.total_regret,
            "target_pulls": self.total_target_pulls,
            "target_pull_fraction": frac,
            "arm_pulls": list(self.arm_pulls),
        }
        if self.target_context_index is not None:
            out["target_context_index"] = self.target_context_index
            out["target_visits"] = self.target_visits
            out["target_visit_successes"] = self.target_visit_successes
            out["visit_success_fraction"] = (
                self.target_visit_successes / self.target_visits
                if self.target_visits else 0.0)
            out["solver_feasible"] = self.solver_feasible
            out["solver_infeasible"] = self.solver_infeasible
            out["solver_failures"] = self.solver_failures
        return out


# ---------------------------------------------------------------------------
# the closed loop
# ---------------------------------------------------------------------------

def run_episode(config, seed, probe=None, record_log=False):
    """One seeded simulation run.

    Interposition order: context attacks perturb before the learner
    selects; reward attacks perturb after selection, before the learner's
    update.  Regret is always measured against the true parameters on the
    true context.  Deterministic given (config, seed).
    """
    if config.attack.get("kind") == "batch-poison":
        raise ConfigError("batch-poison runs through run_batched_poisoning")
    instance = build_instance(config)
    rng = np.random.default_rng(seed)
    target_ctx = None
    attack_kind = config.attack.get("kind", "none")
    if attack_kind in SINGLE_CONTEXT_ATTACKS:
        target_ctx, target_arm = resolve_single_context_targets(
            config, instance, rng)
    else:
        target_arm = resolve_target_arm(config, instance)
    learner = build_learner(config, instance, target_arm)
    attack, family = build_attack(config, instance, target_arm, target_ctx)

    expected = instance.expected_rewards
    best_reward = expected.max(axis=0)
    sigma = instance.sigma
    contexts = instance.contexts
    n_contexts = instance.n_contexts
    stride = config.metric_stride
    start = config.attack_start

    metrics = RunMetrics(seed=seed, horizon=config.horizon,
                         target_arm=target_arm,
                         target_context_index=target_ctx,
                         log=[] if record_log else None)
    arm_pulls = np.zeros(instance.n_arms, dtype=int)
    cost = 0.0
    regret = 0.0
    tpulls = 0

    def snap(t):
        metrics.steps.append(t)
        metrics.cum_cost.append(cost)
        metrics.target_pulls.append(tpulls)
        metrics.regret.append(regret)

    for t in range(1, config.horizon + 1):
        idx = int(rng.integers(n_contexts))
        x = contexts[idx]
        outcome = None
        x_fed = x
        if attack is not None and t >= start:
            if family == "context":
                outcome = attack.perturb_context(learner, x, t, rng)
            elif family == "single" and idx == target_ctx:
                outcome = attack.perturb_context(learner, x, t, rng)
        if outcome is not None and outcome.perturbed_context is not None:
            x_fed = outcome.perturbed_context

        arm = learner.select(x_fed, t, rng)

        r_true = float(expected[arm, idx])
        if sigma > 0:
            r_true += float(rng.normal(0.0, sigma))
        r_fed = r_true
        if attack is not None and family == "reward" and t >= start:
            outcome = attack.perturb_reward(x, arm, r_true, rng)
            r_fed = outcome.perturbed_reward
            attack.observe(x, arm, r_true)

        learner.update(x_fed, arm, r_fed)

        step_cost = outcome.cost if outcome is not None else 0.0
        cost += step_cost
        regret += float(best_reward[idx] - expected[arm, idx])
        arm_pulls[arm] += 1
        if arm == target_arm:
            tpulls += 1
        if family == "single" and t >= start and idx == target_ctx:
            metrics.target_visits += 1
            if arm == target_arm:
                metrics.target_visit_successes += 1
            status = outcome.solver_status if outcome is not None else None
            if status == "optimal":
                metrics.solver_feasible += 1
            elif status == "infeasible":
                metrics.solver_infeasible += 1
            elif status == "failed":
                metrics.solver_failures += 1
        if t % stride == 0:
            snap(t)
        if record_log or probe is not None:
            rec = StepRecord(t, idx, arm, r_true, r_fed, step_cost,
                             bool(outcome.attacked) if outcome else False)
            if record_log:
                metrics.log.append(rec)
            if probe is not None:
                probe(rec, outcome)

    if config.horizon % stride != 0 and config.horizon > 0:
        snap(config.horizon)
    metrics.arm_pulls = arm_pulls.tolist()
    metrics.total_cost = cost
    metrics.total_regret = regret
    metrics.total_target_pulls = tpulls
    return metrics


def warmup_learner(config, seed, steps=None):
    """Run the configured learner unattacked for `steps` rounds (default:
    attack_start - 1, else the horizon) and return the resulting state.

    Returns (instance, learner, target_arm, target_context_index)."""
    instance = build_instance(config)
    rng = np.random.default_rng(seed)
    target_ctx = None
    if config.attack.get("kind") in SINGLE_CONTEXT_ATTACKS:
        target_ctx, target_arm = resolve_single_context_targets(
            config, instance, rng)
    else:
        target_arm = resolve_target_arm(config, instance)
    learner = build_learner(config, instance, target_arm)
    if steps is None:
        steps = config.attack_start - 1 if config.attack_start > 1 \
            else config.horizon
    expected = instance.expected_rewards
    for t in range(1, steps + 1):
        idx = int(rng.integers(instance.n_contexts))
        x = instance.contexts[idx]
        arm = learner.select(x, t, rng)
        r = float(expected[arm, idx])
        if instance.sigma > 0:
            r += float(rng.normal(0.0, instance.sigma))
        learner.update(x, arm, r)
    return instance, learner, target_arm, target_ctx


# ---------------------------------------------------------------------------
# batched (semi-online) poisoning runs
# ---------------------------------------------------------------------------

def run_batched_poisoning(config, seed):
    """Mini-batch learner updates; the attacker rewrites the first batch.

    Returns a summary dict with the post-poison target-pull record and the
    numerical check of the inverse-design-matrix bound.
    """
    ac = config.attack
    if ac.get("kind") != "batch-poison":
        raise ConfigError("config does not request batch poisoning")
    instance = build_instance(config)
    rng = np.random.default_rng(seed)
    target_arm = resolve_target_arm(config, instance)
    learner = build_learner(config, instance, target_arm)
    if not isinstance(learner, LinUCB):
        raise ConfigError("batch poisoning targets the optimistic learner")

    batch_size = ac["batch_size"]
    n_batches = ac["n_batches"]
    params = learner_params(config, instance)
    beta_max = ac.get("beta_max") or confidence_radius(
        params, n_batches * batch_size, instance.dim)
    pcfg = BatchPoisonConfig(
        target_arm=target_arm, batch_size=batch_size, n_batches=n_batches,
        nu=instance.with_target(target_arm).nu, beta_max=beta_max,
        context_bound=instance.context_norm_bound)
    delta = compute_poison_magnitude(pcfg, instance.dim)

    expected = instance.expected_rewards
    rows = []
    poisoned_yet = False
    post_steps = 0
    post_target = 0
    cost = 0.0
    for t in range(1, n_batches * batch_size + 1):
        idx = int(rng.integers(instance.n_contexts))
        x = instance.contexts[idx]
        arm = learner.select(x, t, rng)
        if poisoned_yet:
            post_steps += 1
            post_target += arm == target_arm
        r = float(expected[arm, idx])
        if instance.sigma > 0:
            r += float(rng.normal(0.0, instance.sigma))
        rows.append((x, arm, r))
        if len(rows) == batch_size:
            if not poisoned_yet:
                rows, cost = poison_batch(pcfg, rows, instance.n_arms,
                                          instance.dim)
                poisoned_yet = True
            for xx, aa, rr in rows:
                learner.update(xx, aa, rr)
            rows = []

    bound = 1.0 / (delta ** 2 - instance.dim * n_batches * batch_size)
    anv_ok = True
    inf_norms = {}
    for arm in range(instance.n_arms):
        if arm == target_arm:
            continue
        v_inf = float(np.abs(learner.arms[arm].V_inv).sum(axis=1).max())
        inf_norms[arm] = v_inf
        anv_ok = anv_ok and v_inf <= bound + 1e-12
    return {
        "seed": seed,
        "target_arm": target_arm,
        "poison_magnitude": delta,
        "poison_cost": cost,
        "post_poison_steps": post_steps,
        "post_poison_target_pulls": post_target,
        "post_poison_target_fraction": (post_target / post_steps
                                        if post_steps else 0.0),
        "anv_bound": bound,
        "anv_bound_holds": bool(anv_ok),
        "inverse_design_inf_norms": inf_norms,
    }


# ---------------------------------------------------------------------------
# campaigns and sweeps
# ---------------------------------------------------------------------------

def _episode_worker(args):
    config_doc, seed = args
    config = ExperimentConfig.from_dict(config_doc)
    return run_episode(config, seed)


def max_workers():
    raw = os.environ.get("BANDITLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_campaign(config):
    """n_replications episodes with seeds seed, seed+1, ...; per-replication
    metrics plus mean/std aggregates of the final figures."""
    seeds = [config.seed + i for i in range(config.n_replications)]
    workers = max_workers()
    if workers > 1 and len(seeds) > 1:
        doc = config.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_episode_worker,
                                 [(doc, s) for s in seeds]))
    else:
        runs = [run_episode(config, s) for s in seeds]
    return runs, aggregate_runs(runs)


def aggregate_runs(runs):
    def stats(values):
        arr = np.asarray(values, dtype=float)
        return {"mean": float(arr.mean()),
                "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0}

    agg = {
        "n_replications": len(runs),
        "total_cost": stats([r.total_cost for r in runs]),
        "total_regret": stats([r.total_regret for r in runs]),
        "target_pull_fraction": stats([
            r.total_target_pulls / r.horizon if r.horizon else 0.0
            for r in runs]),
    }
    if runs and runs[0].target_context_index is not None:
        per = [r.target_visit_successes / r.target_visits
               for r in runs if r.target_visits]
        if per:
            agg["visit_success_fraction"] = stats(per)
        agg["solver_feasible"] = int(sum(r.solver_feasible for r in runs))
        agg["solver_infeasible"] = int(sum(r.solver_infeasible for r in runs))
        agg["solver_failures"] = int(sum(r.solver_failures for r in runs))
    return agg


def gamma_sweep(config, gamma_grid):
    """One campaign per gamma of the soft reward attack; returns table rows
    (gamma, cost mean/std, target-pull mean/std, regret mean)."""
    if config.attack.get("kind") != "reward-soft":
        raise ConfigError("gamma sweeps apply to the soft reward attack")
    rows = []
    for gamma in gamma_grid:
        if not 0 < gamma < 1:
            raise ConfigError(f"gamma {gamma} outside (0, 1)")
        attack = dict(config.attack, gamma=gamma)
        sub = replace(config, attack=attack)
        _, agg = run_campaign(sub)
        rows.append({
            "gamma": gamma,
            "cost_mean": agg["total_cost"]["mean"],
            "cost_std": agg["total_cost"]["std"],
            "target_pulls_mean": agg["target_pull_fraction"]["mean"],
            "target_pulls_std": agg["target_pull_fraction"]["std"],
            "regret_mean": agg["total_regret"]["mean"],
        })
    return rows


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

SERIES_HEADER = ("step", "cum_cost", "target_pulls", "regret")


def write_results(metrics, out_dir, prefix="run", config=None):
    """CSV series plus JSON summary; returns the two paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{prefix}.csv")
    json_path = os.path.join(out_dir, f"{prefix}.json")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_HEADER)
        for row in zip(metrics.steps, metrics.cum_cost,
                       metrics.target_pulls, metrics.regret):
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])
    doc = {"summary": metrics.summary()}
    if config is not None:
        doc["config"] = config.to_dict()
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return csv_path, json_path


def read_results(csv_path):
    """Round-trip reader for the CSV series."""
    with open(csv_path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != SERIES_HEADER:
            raise ConfigError(f"unexpected series header {header}")
        series = {k: [] for k in SERIES_HEADER}
        for row in reader:
            series["step"].append(int(row[0]))
            series["cum_cost"].append(float(row[1]))
            series["target_pulls"].append(int(row[2]))
            series["regret"].append(float(row[3]))
    return series


def write_campaign_results(runs, aggregate, out_dir, config=None):
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, run in enumerate(runs):
        csv_path, _ = write_results(run, out_dir, prefix=f"rep{i:03d}")
        paths.append(csv_path)
    doc = {"aggregate": aggregate,
           "replications": [r.summary() for r in runs]}
    if config is not None:
        doc["config"] = config.to_dict()
    json_path = os.path.join(out_dir, "summary.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return paths, json_path


def write_sweep_results(rows, out_dir, config=None):
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "sweep.csv")
    cols = ("gamma", "cost_mean", "cost_std", "target_pulls_mean",
            "target_pulls_std", "regret_mean")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([repr(float(row[c])) for c in cols])
    json_path = os.path.join(out_dir, "sweep.json")
    doc = {"rows": rows}
    if config is not None:
        doc["config"] = config.to_dict()
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return csv_path, json_path
