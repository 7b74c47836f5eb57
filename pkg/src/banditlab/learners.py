"""Contextual linear bandit learners with incremental ridge-regression
state: optimistic (UCB), posterior-sampling, epsilon-greedy, and
exponential-weights-over-experts algorithms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convex import ConfidenceEllipsoid, NumericalError, spd_factor


@dataclass
class LearnerParams:
    """Hyperparameters shared by the ridge-based learners.

    ts_scale: posterior width schedule t -> upsilon (None = default
              sigma*sqrt(d*ln(t/delta)/2));
    eps_schedule: exploration schedule t -> epsilon (None = 1/sqrt(t)).
    """
    lam: float = 0.1
    delta: float = 0.01
    sigma: float = 0.1
    param_bound: float = 1.0     # S
    context_bound: float = 1.0   # L
    ts_scale: object = None
    eps_schedule: object = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    def upsilon(self, t, dim):
        if self.ts_scale is not None:
            return float(self.ts_scale(t))
        return self.sigma * math.sqrt(dim * math.log(max(t, 1) / self.delta) / 2.0)

    def epsilon(self, t):
        if self.eps_schedule is not None:
            return float(self.eps_schedule(t))
        return 1.0 / math.sqrt(max(t, 1))


def confidence_radius(params, pulls, dim):
    """Width beta of the per-arm confidence ellipsoid after `pulls` pulls:
    sigma*sqrt(d*log((1 + L^2(1+pulls)/lam)/delta)) + S*sqrt(lam)."""
    if pulls < 0:
        raise ValueError("pulls must be >= 0")
    lg = math.log((1.0 + params.context_bound ** 2 * (1 + pulls) / params.lam)
                  / params.delta)
    return (params.sigma * math.sqrt(dim * lg)
            + params.param_bound * math.sqrt(params.lam))


_REFRESH_EVERY = 10_000  # rank-one inverse updates between refactorizations


class RidgeArmState:
    """Regularized least-squares state for one arm.

    Maintains the design matrix V = lam*I + sum x x^T, its inverse via
    rank-one updates (refreshed periodically to cap drift), the response
    vector b, and the estimate theta = V^-1 b.
    """

    def __init__(self, dim, lam):
        self.dim = dim
        self.lam = lam
        self.V = lam * np.eye(dim)
        self.V_inv = np.eye(dim) / lam
        self.b = np.zeros(dim)
        self.theta = np.zeros(dim)
        self.pulls = 0
        self._since_refresh = 0

    def update(self, x, r):
        x = np.asarray(x, dtype=float)
        self.V += np.outer(x, x)
        vx = self.V_inv @ x
        self.V_inv -= np.outer(vx, vx) / (1.0 + float(x @ vx))
        self.b += r * x
        self.pulls += 1
        self._since_refresh += 1
        if self._since_refresh >= _REFRESH_EVERY:
            self.V_inv = np.linalg.inv(self.V)
            self._since_refresh = 0
        self.theta = self.V_inv @ self.b

    def weighted_norm_inv(self, x):
        """||x||_{V^-1}."""
        x = np.asarray(x, dtype=float)
        return math.sqrt(max(float(x @ self.V_inv @ x), 0.0))

    def ellipsoid(self, radius):
        return ConfidenceEllipsoid(self.theta.copy(), radius,
                                   shape=self.V.copy(),
                                   shape_inv=self.V_inv.copy())

    def snapshot(self):
        return {"V": self.V.tolist(), "b": self.b.tolist(), "pulls": self.pulls}

    @classmethod
    def from_snapshot(cls, doc, lam):
        v = np.array(doc["V"], dtype=float)
        state = cls(v.shape[0], lam)
        state.V = v
        state.V_inv = np.linalg.inv(v)
        state.b = np.array(doc["b"], dtype=float)
        state.pulls = int(doc["pulls"])
        state.theta = state.V_inv @ state.b
        return state


class _RidgeLearner:
    """Shared plumbing for the disjoint-model learners."""

    def __init__(self, n_arms, dim, params):
        self.n_arms = n_arms
        self.dim = dim
        self.params = params
        self.arms = [RidgeArmState(dim, params.lam) for _ in range(n_arms)]

    def update(self, context, arm, reward_value):
        self.arms[arm].update(context, reward_value)

    def beta(self, arm):
        return confidence_radius(self.params, self.arms[arm].pulls, self.dim)

    def ellipsoid(self, arm):
        return self.arms[arm].ellipsoid(self.beta(arm))

    def ellipsoids(self):
        return [self.ellipsoid(a) for a in range(self.n_arms)]

    def greedy_scores(self, context):
        x = np.asarray(context, dtype=float)
        return np.array([float(s.theta @ x) for s in self.arms])

    def snapshot(self):
        return {"kind": self.kind,
                "arms": [s.snapshot() for s in self.arms]}

    def restore(self, doc):
        self.arms = [RidgeArmState.from_snapshot(d, self.params.lam)
                     for d in doc["arms"]]
        self.n_arms = len(self.arms)


class LinUCB(_RidgeLearner):
    """Optimism in the face of uncertainty: maximize the per-arm upper
    confidence bound <theta_a, x> + beta_a ||x||_{V_a^-1}."""

    kind = "linucb"

    def scores(self, context, t=None):
        x = np.asarray(context, dtype=float)
        out = np.empty(self.n_arms)
        for a, s in enumerate(self.arms):
            out[a] = float(s.theta @ x) + self.beta(a) * s.weighted_norm_inv(x)
        return out

    def select(self, context, t, rng=None):
        scores = self.scores(context, t)
        if not np.all(np.isfinite(scores)):
            raise NumericalError(f"non-finite selection score: {scores}")
        return int(np.argmax(scores))

    def preview(self, context, t, rng=None):
        """White-box prediction of the next pull; exact for this learner."""
        return self.select(context, t, rng)


class LinTS(_RidgeLearner):
    """Posterior sampling with Gaussian perturbations
    theta~_a ~ N(theta_a, upsilon^2 V_a^-1), then greedy."""

    kind = "lints"

    def select(self, context, t, rng):
        x = np.asarray(context, dtype=float)
        ups = self.params.upsilon(t, self.dim)
        best, best_val = 0, -math.inf
        for a, s in enumerate(self.arms):
            root = spd_factor(s.V_inv)
            theta = s.theta + ups * (root @ rng.standard_normal(self.dim))
            val = float(theta @ x)
            if not math.isfinite(val):
                raise NumericalError("non-finite posterior sample")
            if val > best_val:
                best, best_val = a, val
        return best

    def preview(self, context, t, rng):
        """Best effort: a fresh posterior draw (the actual pull has
        independent randomness and cannot be predicted)."""
        return self.select(context, t, rng)


class EpsilonGreedy(_RidgeLearner):
    """Uniform exploration with probability eps_t, greedy otherwise."""

    kind = "eps-greedy"

    def select(self, context, t, rng):
        if rng.uniform() <= self.params.epsilon(t):
            return int(rng.integers(self.n_arms))
        return int(np.argmax(self.greedy_scores(context)))

    def preview(self, context, t, rng=None):
        """White-box prediction: the greedy choice (the exploration coin is
        unobservable and scale-invariant anyway)."""
        return int(np.argmax(self.greedy_scores(context)))


def make_expert_panel(instance, target_arm, n_experts):
    """Expert set for the expert-advice learner: n-2 experts recommending a
    uniformly random arm each round, one constant expert on the target arm,
    and one oracle expert recommending the truly best arm per context."""
    if n_experts < 2:
        raise ValueError("need at least the constant and oracle experts")
    n_arms = instance.n_arms
    params = instance.arm_params.copy()

    def random_expert(context, rng):
        advice = np.zeros(n_arms)
        advice[rng.integers(n_arms)] = 1.0
        return advice

    def constant_expert(context, rng):
        advice = np.zeros(n_arms)
        advice[target_arm] = 1.0
        return advice

    def oracle_expert(context, rng):
        advice = np.zeros(n_arms)
        advice[int(np.argmax(params @ np.asarray(context)))] = 1.0
        return advice

    return [random_expert] * (n_experts - 2) + [constant_expert, oracle_expert]


class Exp4:
    """Exponential weights over expert advice.

    Per round: mix the experts' advice with the current weights, sample an
    arm, build importance-weighted reward estimates
    r_hat_i = 1 - 1{a_t = i}(1 - r)/P_i, credit each expert with its
    expected estimate, and update the weights multiplicatively.
    """

    kind = "exp4"

    def __init__(self, n_arms, experts, eta):
        self.n_arms = n_arms
        self.experts = experts
        self.eta = eta
        self.weights = np.full(len(experts), 1.0 / len(experts))
        self._advice = None
        self._probs = None

    @staticmethod
    def default_eta(n_experts, n_arms, horizon):
        return math.sqrt(2.0 * math.log(n_experts) / (horizon * n_arms))

    def advice_matrix(self, context, rng):
        return np.stack([e(context, rng) for e in self.experts])

    def select(self, context, t, rng):
        advice = self.advice_matrix(context, rng)
        probs = self.weights @ advice
        probs = probs / probs.sum()
        arm = int(rng.choice(self.n_arms, p=probs))
        self._advice = advice
        self._probs = probs
        return arm

    def update(self, context, arm, reward_value):
        self.step(self._advice, arm, reward_value, self._probs)

    def step(self, advice, arm, reward_value, probs):
        if probs[arm] <= 0:
            raise ZeroDivisionError(
                "chosen arm has zero mixture probability; sampling is broken")
        r_hat = np.ones(self.n_arms)
        r_hat[arm] -= (1.0 - reward_value) / probs[arm]
        gains = advice @ r_hat
        scaled = self.weights * np.exp(self.eta * gains)
        self.weights = scaled / scaled.sum()

    def snapshot(self):
        return {"kind": self.kind, "weights": self.weights.tolist()}

    def restore(self, doc):
        self.weights = np.array(doc["weights"], dtype=float)
