"""Attacker strategies: reward poisoning, context dilation, single-context
minimum-perturbation attacks, and semi-online batch poisoning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convex import (
    ConfidenceEllipsoid,
    SocConstraint,
    hull_membership_distance,
    min_norm_soc,
    normal_quantile,
    point_outside_hull,
)
from .learners import RidgeArmState, confidence_radius


@dataclass
class AttackOutcome:
    """Per-step record of what the attacker did."""
    cost: float = 0.0
    attacked: bool = False
    perturbed_context: np.ndarray | None = None
    perturbed_reward: float | None = None
    solver_status: str | None = None  # single-context attacks only


# ---------------------------------------------------------------------------
# reward poisoning
# ---------------------------------------------------------------------------

class StationaryRewardAttack:
    """Replace every non-target reward with fresh zero-mean noise.

    The perceived problem becomes a stationary bandit problem in which the
    target arm keeps its true rewards and every other arm has mean zero.
    """

    def __init__(self, target_arm, noise_sigma):
        self.target_arm = target_arm
        self.noise_sigma = noise_sigma

    def perturb_reward(self, context, arm, reward_value, rng):
        if arm == self.target_arm:
            return AttackOutcome(perturbed_reward=reward_value)
        fake = float(rng.normal(0.0, self.noise_sigma)) if self.noise_sigma > 0 else 0.0
        return AttackOutcome(cost=abs(reward_value - fake), attacked=True,
                             perturbed_reward=fake)

    def observe(self, context, arm, reward_value):
        pass


class SoftRewardAttack:
    """Depress non-target rewards by the clipped confidence-band gap

        C = (1 - gamma) * min_{target band} <theta, x>
            - max_{pulled-arm band} <theta, x>,
        fed reward = r + clip(C, -1, 0).

    The bands come from the attacker's own ridge estimator trained on the
    clean (unperturbed) rewards, with the same hyperparameters as the
    learner under attack.
    """

    def __init__(self, target_arm, gamma, n_arms, dim, params):
        if not 0 < gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        self.target_arm = target_arm
        self.gamma = gamma
        self.params = params
        self.dim = dim
        self.clean = [RidgeArmState(dim, params.lam) for _ in range(n_arms)]

    def _band(self, arm, x):
        state = self.clean[arm]
        beta = confidence_radius(self.params, state.pulls, self.dim)
        mid = float(state.theta @ x)
        spread = beta * state.weighted_norm_inv(x)
        return mid - spread, mid + spread

    def gap(self, context, arm):
        x = np.asarray(context, dtype=float)
        lo_target, _ = self._band(self.target_arm, x)
        _, hi_arm = self._band(arm, x)
        return (1.0 - self.gamma) * lo_target - hi_arm

    def perturb_reward(self, context, arm, reward_value, rng=None):
        if arm == self.target_arm:
            return AttackOutcome(perturbed_reward=reward_value)
        shift = max(-1.0, min(0.0, self.gap(context, arm)))
        return AttackOutcome(cost=abs(shift), attacked=shift != 0.0,
                             perturbed_reward=reward_value + shift)

    def observe(self, context, arm, reward_value):
        self.clean[arm].update(context, reward_value)


# ---------------------------------------------------------------------------
# context dilation
# ---------------------------------------------------------------------------

class ContextDilationAttack:
    """Scale the incoming context whenever the white-box preview of the
    learner's decision is not the target arm.

    The scale defaults to 2/nu, which makes the target arm's (unattacked)
    value dominate every dilation-biased estimate.  The budgeted variant
    attacks only when a Bernoulli(budget_fraction) coin allows it, using
    `budget_multiplier` as the scale.
    """

    def __init__(self, target_arm, nu=None, alpha=None, budget_fraction=1.0,
                 budget_multiplier=None):
        if alpha is None:
            if nu is None or nu <= 0:
                raise ValueError("either alpha or a positive nu is required")
            alpha = 2.0 / nu
        if not 0 < budget_fraction <= 1:
            raise ValueError("budget_fraction must be in (0, 1]")
        self.target_arm = target_arm
        self.alpha = alpha
        self.budget_fraction = budget_fraction
        self.multiplier = budget_multiplier if budget_multiplier is not None else alpha

    def perturb_context(self, learner, context, t, rng):
        predicted = learner.preview(context, t, rng)
        if predicted == self.target_arm:
            return AttackOutcome()
        if self.budget_fraction < 1.0 and rng.uniform() > self.budget_fraction:
            return AttackOutcome()
        x = np.asarray(context, dtype=float)
        scaled = self.multiplier * x
        cost = (self.multiplier - 1.0) * float(np.linalg.norm(x))
        return AttackOutcome(cost=abs(cost), attacked=True,
                             perturbed_context=scaled)


# ---------------------------------------------------------------------------
# feasibility of single-context attacks
# ---------------------------------------------------------------------------

@dataclass
class FeasibilityResult:
    feasible: bool
    witness: np.ndarray | None = None
    distance: float = 0.0


def _target_boundary_candidates(target, n_random, seed):
    """Candidate witnesses on the target ellipsoid: the center, the extreme
    points along the shape eigendirections, and random boundary points."""
    cands = [target.center]
    if target.radius > 0:
        evals, evecs = np.linalg.eigh(target.shape)
        for i in range(target.dim):
            step = (target.radius / math.sqrt(max(evals[i], 1e-300))) * evecs[:, i]
            cands.append(target.center + step)
            cands.append(target.center - step)
        root = evecs @ np.diag(evals ** -0.5) @ evecs.T
        rng = np.random.default_rng(seed)
        sph = rng.standard_normal((n_random, target.dim))
        sph /= np.linalg.norm(sph, axis=1, keepdims=True)
        cands.extend(target.center + target.radius * (root @ s) for s in sph)
    return cands


def _pairwise_separation_candidates(target, others, iters=25):
    """For each rival ellipsoid, iterate the mutual support map to find the
    target boundary point farthest past that rival."""
    out = []
    for other in others:
        u = target.center - other.center
        n = float(np.linalg.norm(u))
        u = u / n if n > 0 else np.ones(target.dim)
        for _ in range(iters):
            _, p_t = target.support(u)
            _, p_o = other.support(-u)
            diff = p_t - p_o
            n = float(np.linalg.norm(diff))
            if n <= 1e-12:
                break
            u_new = diff / n
            if float(np.linalg.norm(u_new - u)) <= 1e-10:
                u = u_new
                break
            u = u_new
        out.append(target.support(u)[1])
    return out


def feasibility_check(ellipsoids, target_arm, mode="relaxed", tol=1e-6,
                      n_random=64, seed=0):
    """Can some parameter vector the learner considers plausible for the
    target arm escape the hull of the rival arms' confidence sets?

    relaxed: tests only the target center (exact feasibility condition for
    the convexified attack problem).
    full: additionally tests sampled extreme points of the target ellipsoid
    (sufficient-only for the exact attack problem).
    """
    if len(ellipsoids) < 2:
        raise ValueError("need the target and at least one rival ellipsoid")
    target = ellipsoids[target_arm]
    others = [e for a, e in enumerate(ellipsoids) if a != target_arm]

    hd = hull_membership_distance(target.center, others, decision_threshold=tol)
    if hd.converged and hd.distance > tol:
        return FeasibilityResult(True, target.center.copy(), hd.distance)
    if mode == "relaxed":
        return FeasibilityResult(False, None, hd.distance)

    cands = _pairwise_separation_candidates(target, others)
    cands += _target_boundary_candidates(target, n_random, seed)
    for cand in cands:
        verdict = point_outside_hull(cand, others, margin=tol)
        if verdict is True:
            return FeasibilityResult(True, np.asarray(cand, dtype=float), tol)
    return FeasibilityResult(False, None, 0.0)


# ---------------------------------------------------------------------------
# single-context attacks
# ---------------------------------------------------------------------------

@dataclass
class SingleContextAttackConfig:
    target_arm: int
    margin: float = 0.001          # xi
    ts_confidence: float = 0.05    # delta for the sampling-learner attack
    feas_tol: float = 1e-6
    solver_passes: int = 2
    subgrad_iters: int = 80
    n_starts: int = 20             # extra start directions, exact solver
    start_seed: int = 0


class _SingleContextAttackBase:
    """Shared white-box plumbing; subclasses build the constraint system."""

    def __init__(self, config):
        self.config = config
        self._warm = None

    def _solve(self, constraints, x_target):
        res = min_norm_soc(constraints, x_target, margin=self.config.margin,
                           feas_tol=self.config.feas_tol,
                           subgrad_iters=self.config.subgrad_iters,
                           warm_direction=self._warm,
                           passes=self.config.solver_passes)
        if res.ok and res.norm > 0:
            self._warm = res.y / res.norm
        return res

    def perturb_context(self, learner, context, t, rng=None):
        x = np.asarray(context, dtype=float)
        res = self._solve(self.constraints(learner, t), x)
        if not res.ok:
            return AttackOutcome(solver_status=res.status)
        if res.norm == 0.0:
            return AttackOutcome(perturbed_context=x, solver_status="optimal")
        return AttackOutcome(cost=res.norm, attacked=True,
                             perturbed_context=x + res.y,
                             solver_status="optimal")


class UcbRelaxedContextAttack(_SingleContextAttackBase):
    """Convexified minimum-perturbation attack on the optimistic learner:
    push every rival's upper band below the target center's value."""

    def constraints(self, learner, t=None):
        tgt = self.config.target_arm
        theta_t = learner.arms[tgt].theta
        cons = []
        for a in range(learner.n_arms):
            if a == tgt:
                continue
            s = learner.arms[a]
            cons.append(SocConstraint(s.theta - theta_t, 0.0, learner.beta(a),
                                      s.V_inv.copy()))
        return cons


class GreedyContextAttack(_SingleContextAttackBase):
    """Minimum perturbation making the target the greedy choice: pure
    linear margins, no confidence terms."""

    def constraints(self, learner, t=None):
        tgt = self.config.target_arm
        theta_t = learner.arms[tgt].theta
        return [SocConstraint(learner.arms[a].theta - theta_t, 0.0)
                for a in range(learner.n_arms) if a != tgt]


class TsContextAttack(_SingleContextAttackBase):
    """Minimum perturbation making the posterior-sampling learner pick the
    target with probability at least 1 - ts_confidence, via the per-rival
    Gaussian tail bound with combined shape V_a^-1 + V_target^-1."""

    def constraints(self, learner, t):
        tgt = self.config.target_arm
        theta_t = learner.arms[tgt].theta
        v_t_inv = learner.arms[tgt].V_inv
        ups = learner.params.upsilon(t, learner.dim)
        quant = normal_quantile(
            1.0 - self.config.ts_confidence / (learner.n_arms - 1))
        cons = []
        for a in range(learner.n_arms):
            if a == tgt:
                continue
            s = learner.arms[a]
            cons.append(SocConstraint(s.theta - theta_t, 0.0, ups * quant,
                                      s.V_inv + v_t_inv))
        return cons


class _ExactUcbRays:
    """Values of the exact optimistic-attack constraints along y = t*w:

        h_a(t) = <c_a, z> + kappa_a ||z||_{A_a} - kappa_t ||z||_{A_t} + xi,
        z = x_target + t*w.

    Nonconvex in t (difference of norms), so the feasible t-set is scanned
    on a grid and refined by bisection at the first feasible bracket.
    """

    def __init__(self, deltas, kappas, shapes, kappa_t, shape_t, base, margin):
        self.deltas = deltas          # list of c_a
        self.kappas = kappas
        self.shapes = shapes          # list of A_a
        self.kappa_t = kappa_t
        self.shape_t = shape_t        # A_target
        self.base = base
        self.margin = margin
        self._lin0 = np.array([float(c @ base) for c in deltas])
        self._qa0 = np.array([float(base @ s @ base) for s in shapes])
        self._abase = [s @ base for s in shapes]
        self._qt0 = float(base @ shape_t @ base)
        self._tbase = shape_t @ base

    def prepare(self, w):
        lin1 = np.array([float(c @ w) for c in self.deltas])
        qa1 = np.array([float(ab @ w) for ab in self._abase])
        qa2 = np.array([float(w @ s @ w) for s in self.shapes])
        qt1 = float(self._tbase @ w)
        qt2 = float(w @ self.shape_t @ w)
        return lin1, qa1, qa2, qt1, qt2

    def max_values(self, ts, ray):
        lin1, qa1, qa2, qt1, qt2 = ray
        ts = np.asarray(ts, dtype=float)
        quad_a = (self._qa0[:, None] + 2.0 * qa1[:, None] * ts[None, :]
                  + qa2[:, None] * ts[None, :] ** 2)
        quad_t = self._qt0 + 2.0 * qt1 * ts + qt2 * ts ** 2
        vals = (self._lin0[:, None] + lin1[:, None] * ts[None, :]
                + self.kappas[:, None] * np.sqrt(np.maximum(quad_a, 0.0))
                - self.kappa_t * np.sqrt(np.maximum(quad_t, 0.0))[None, :]
                + self.margin)
        return vals.max(axis=0)

    def min_feasible_t(self, ray, t_hi, grid=160, refine=50):
        ts = np.linspace(0.0, t_hi, grid)
        vals = self.max_values(ts, ray)
        feas = np.flatnonzero(vals <= 0.0)
        if feas.size == 0:
            return None
        j = int(feas[0])
        if j == 0:
            return 0.0
        lo, hi = ts[j - 1], ts[j]
        for _ in range(refine):
            mid = 0.5 * (lo + hi)
            if float(self.max_values([mid], ray)[0]) <= 0.0:
                hi = mid
            else:
                lo = mid
        return hi


class UcbFullContextAttack:
    """Exact (non-convex) minimum-perturbation attack on the optimistic
    learner: require the target's upper band to beat every rival's upper
    band by the margin.  Multi-start local search; the convexified solution
    seeds one start, so the result is never worse when both succeed."""

    def __init__(self, config):
        self.config = config
        self.relaxed = UcbRelaxedContextAttack(config)
        self._warm = None

    def _system(self, learner, x):
        tgt = self.config.target_arm
        theta_t = learner.arms[tgt].theta
        deltas, kappas, shapes = [], [], []
        for a in range(learner.n_arms):
            if a == tgt:
                continue
            s = learner.arms[a]
            deltas.append(s.theta - theta_t)
            kappas.append(learner.beta(a))
            shapes.append(s.V_inv)
        return _ExactUcbRays(deltas, np.array(kappas), shapes,
                             learner.beta(tgt), learner.arms[tgt].V_inv,
                             x, self.config.margin)

    def _compass(self, system, w, t_best, t_cap, rounds=60):
        d = w.shape[0]
        h = 0.25
        eye = np.eye(d)
        for _ in range(rounds):
            improved = False
            cands = np.concatenate([w + h * eye, w - h * eye], axis=0)
            norms = np.linalg.norm(cands, axis=1)
            keep = norms > 1e-12
            cands = cands[keep] / norms[keep, None]
            for cand in cands:
                t_min = system.min_feasible_t(system.prepare(cand),
                                              min(t_cap, 1.5 * t_best))
                if t_min is not None and t_min < t_best * (1.0 - 1e-12):
                    t_best = t_min
                    w = cand
                    improved = True
            if not improved:
                h *= 0.5
                if h < 1e-6:
                    break
        return w, t_best

    def perturb_context(self, learner, context, t, rng=None):
        x = np.asarray(context, dtype=float)
        system = self._system(learner, x)

        # start directions: convexified solution, warm start, seeded sphere
        starts = []
        relaxed_res = min_norm_soc(self.relaxed.constraints(learner), x,
                                   margin=self.config.margin,
                                   feas_tol=self.config.feas_tol,
                                   subgrad_iters=self.config.subgrad_iters,
                                   passes=self.config.solver_passes)
        relaxed_norm = relaxed_res.norm if relaxed_res.ok else math.inf
        if relaxed_res.ok and relaxed_res.norm > 0:
            starts.append(relaxed_res.y / relaxed_res.norm)
        if relaxed_res.ok and relaxed_res.norm == 0.0:
            return AttackOutcome(perturbed_context=x, solver_status="optimal")
        if self._warm is not None:
            starts.append(self._warm)
        srng = np.random.default_rng(self.config.start_seed)
        sphere = srng.standard_normal((self.config.n_starts, x.shape[0]))
        sphere /= np.linalg.norm(sphere, axis=1, keepdims=True)
        starts.extend(sphere)

        t_cap = max(4.0 * float(np.linalg.norm(x)), 4.0,
                    2.0 * (relaxed_norm if math.isfinite(relaxed_norm) else 0.0))
        best_w, best_t = None, relaxed_norm
        scored = []
        for w in starts:
            t0 = system.min_feasible_t(system.prepare(w), t_cap)
            if t0 is not None:
                scored.append((t0, w))
        scored.sort(key=lambda p: p[0])
        for t0, w in scored[:4]:
            w_ref, t_ref = self._compass(system, w, t0, t_cap)
            if t_ref < best_t:
                best_w, best_t = w_ref, t_ref
        if best_w is None:
            if relaxed_res.ok:
                self._warm = relaxed_res.y / relaxed_res.norm
                return AttackOutcome(cost=relaxed_res.norm, attacked=True,
                                     perturbed_context=x + relaxed_res.y,
                                     solver_status="optimal")
            feas = feasibility_check(learner.ellipsoids(),
                                     self.config.target_arm, mode="full",
                                     tol=self.config.feas_tol,
                                     seed=self.config.start_seed)
            status = "failed" if feas.feasible else "infeasible"
            return AttackOutcome(solver_status=status)
        y = best_t * best_w
        self._warm = best_w
        if best_t == 0.0:
            return AttackOutcome(perturbed_context=x, solver_status="optimal")
        return AttackOutcome(cost=float(np.linalg.norm(y)), attacked=True,
                             perturbed_context=x + y, solver_status="optimal")


# ---------------------------------------------------------------------------
# semi-online batch poisoning
# ---------------------------------------------------------------------------

@dataclass
class BatchPoisonConfig:
    target_arm: int
    batch_size: int
    n_batches: int
    nu: float
    beta_max: float
    context_bound: float = 1.0
    safety_factor: float = 1.0 + 1e-6


def compute_poison_magnitude(config, dim):
    """Per-arm magnitude of the axis-aligned poison contexts: the larger of
    the two diagonal-dominance radicals, inflated to strict inequality by
    the safety factor."""
    m, b = config.n_batches, config.batch_size
    l2 = config.context_bound ** 2
    if min(m, b, dim, config.nu, config.beta_max) <= 0:
        raise ValueError("all magnitudes must be positive")
    first = math.sqrt(2.0 * m * b * l2 * dim / config.nu + dim * m * b)
    second = math.sqrt(4.0 * config.beta_max ** 2 * l2 * dim / config.nu ** 2
                       + dim * m * b)
    return max(first, second) * config.safety_factor


def poison_batch(config, batch, n_arms, dim):
    """Overwrite the first (K-1)*d rows of the batch with zero-reward
    entries whose contexts are huge axis-aligned spikes, one per non-target
    arm and basis direction.  Returns (poisoned rows, total cost)."""
    needed = (n_arms - 1) * dim
    if len(batch) < needed:
        raise ValueError(
            f"batch of {len(batch)} rows cannot host {needed} poison rows")
    delta = compute_poison_magnitude(config, dim)
    poisoned = list(batch)
    cost = 0.0
    i = 0
    for arm in range(n_arms):
        if arm == config.target_arm:
            continue
        for axis in range(dim):
            x_old, a_old, r_old = poisoned[i]
            x_new = np.zeros(dim)
            x_new[axis] = delta
            cost += (float(np.linalg.norm(np.asarray(x_old) - x_new))
                     + abs(float(r_old)) + (1.0 if a_old != arm else 0.0))
            poisoned[i] = (x_new, arm, 0.0)
            i += 1
    return poisoned, cost
