"""Ground-truth bandit environments: instances, context sampling, rewards,
synthetic generation, and feature-file ingestion."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class DataLoadError(ValueError):
    """Raised when a feature file or instance file cannot be ingested."""


@dataclass(frozen=True)
class BanditInstance:
    """A linear contextual bandit problem shared by learner and attacker.

    arm_params: (K, d) array of per-arm parameter vectors
    contexts:   (n, d) finite context pool
    sigma:      Gaussian reward-noise standard deviation
    target_arm: optional designated attack target
    """
    arm_params: np.ndarray
    contexts: np.ndarray
    sigma: float
    target_arm: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "arm_params",
                           np.asarray(self.arm_params, dtype=float))
        object.__setattr__(self, "contexts",
                           np.asarray(self.contexts, dtype=float))
        if self.arm_params.ndim != 2 or self.contexts.ndim != 2:
            raise ValueError("arm_params and contexts must be 2-d arrays")
        if self.arm_params.shape[1] != self.contexts.shape[1]:
            raise ValueError(
                f"dimension mismatch: arms are {self.arm_params.shape[1]}-d, "
                f"contexts are {self.contexts.shape[1]}-d")
        if self.contexts.shape[0] == 0:
            raise ValueError("context pool must be nonempty")
        if not (np.isfinite(self.arm_params).all()
                and np.isfinite(self.contexts).all()):
            raise ValueError("instance contains non-finite values")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        means = self.expected_rewards
        if means.min() <= 0.0 or means.max() > 1.0 + 1e-9:
            raise ValueError(
                "expected rewards must lie in (0, 1]; got range "
                f"[{means.min():.4g}, {means.max():.4g}]")
        if self.target_arm is not None and not 0 <= self.target_arm < self.n_arms:
            raise ValueError(f"target_arm {self.target_arm} out of range")
        self.arm_params.setflags(write=False)
        self.contexts.setflags(write=False)

    @property
    def n_arms(self):
        return self.arm_params.shape[0]

    @property
    def dim(self):
        return self.arm_params.shape[1]

    @property
    def n_contexts(self):
        return self.contexts.shape[0]

    @property
    def context_norm_bound(self):
        """L: largest context norm."""
        return float(np.linalg.norm(self.contexts, axis=1).max())

    @property
    def param_norm_bound(self):
        """S: largest arm-parameter norm."""
        return float(np.linalg.norm(self.arm_params, axis=1).max())

    @property
    def expected_rewards(self):
        """(K, n) grid of <theta_a, x> over the pool."""
        return self.arm_params @ self.contexts.T

    def reward_floor(self, arm):
        """Smallest expected reward of `arm` over the pool (nu for targets)."""
        return float(self.expected_rewards[arm].min())

    @property
    def nu(self):
        if self.target_arm is None:
            raise ValueError("no target arm designated")
        return self.reward_floor(self.target_arm)

    def worst_arm(self):
        """Arm minimizing the average expected reward over the pool."""
        return int(np.argmin(self.expected_rewards.mean(axis=1)))

    def best_arm_for(self, context):
        return int(np.argmax(self.arm_params @ np.asarray(context)))

    def with_target(self, arm):
        return BanditInstance(self.arm_params, self.contexts, self.sigma,
                              target_arm=int(arm))


def sample_context_index(instance, rng):
    """Uniform index into the context pool."""
    return int(rng.integers(instance.n_contexts))


def sample_context(instance, rng):
    """One pool context, uniformly at random."""
    return instance.contexts[sample_context_index(instance, rng)]


def reward(instance, context, arm, rng):
    """Noisy linear reward <theta_arm, x> + N(0, sigma^2)."""
    if not 0 <= arm < instance.n_arms:
        raise IndexError(f"arm {arm} out of range [0, {instance.n_arms})")
    mean = float(instance.arm_params[arm] @ np.asarray(context))
    if instance.sigma == 0.0:
        return mean
    return mean + float(rng.normal(0.0, instance.sigma))


def generate_synthetic_instance(dim, n_arms, n_contexts, rng, sigma=0.1,
                                max_redraws=50):
    """Random instance: folded-normal arm parameters, contexts drawn as
    folded-normal vectors projected onto the unit sphere and scaled by a
    uniform radius in (0, 1], all expected rewards rescaled into (0, 1]."""
    if min(dim, n_arms, n_contexts) < 1:
        raise ValueError("dim, n_arms and n_contexts must all be >= 1")
    for _ in range(max_redraws):
        thetas = np.abs(rng.normal(size=(n_arms, dim)))
        raw = np.abs(rng.normal(size=(n_contexts, dim)))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        radii = 1.0 - rng.uniform(size=(n_contexts, 1))  # in (0, 1]
        contexts = raw / norms * radii
        means = thetas @ contexts.T
        top = means.max()
        if top <= 0:
            continue
        thetas /= top
        if (thetas @ contexts.T).min() > 0:
            return BanditInstance(thetas, contexts, sigma)
    raise RuntimeError("failed to draw an instance with positive rewards")


def _parse_feature_block(lines, start_row, dim, block_name):
    rows = []
    for offset, line in enumerate(lines):
        row_no = start_row + offset
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != dim:
            raise DataLoadError(
                f"row {row_no}: expected {dim} columns in {block_name} "
                f"block, got {len(cells)}")
        vals = []
        for col, cell in enumerate(cells, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise DataLoadError(
                    f"row {row_no}, column {col}: unparsable value "
                    f"{cell!r}") from None
            if not math.isfinite(v):
                raise DataLoadError(
                    f"row {row_no}, column {col}: non-finite value {cell!r}")
            vals.append(v)
        rows.append(vals)
    return np.array(rows)


def load_dataset_instance(features_path, n_arms, noise_sigma):
    """Build an instance from a feature CSV.

    Format: a header line holding the column count d, then one row per arm,
    a blank line, then one row per context.  Expected rewards are the inner
    products, rescaled to (0, 1] by dividing the arm features by the
    largest product.
    """
    try:
        with open(features_path, "r", encoding="utf-8") as fh:
            raw_lines = fh.read().splitlines()
    except OSError as exc:
        raise DataLoadError(f"cannot read {features_path}: {exc}") from exc
    if not raw_lines:
        raise DataLoadError(f"{features_path} is empty")
    try:
        dim = int(raw_lines[0].strip())
    except ValueError:
        raise DataLoadError(
            f"row 1: header must be the column count, got {raw_lines[0]!r}") from None
    body = raw_lines[1:]
    try:
        split = body.index("")
    except ValueError:
        raise DataLoadError("missing blank line between arm and context blocks") from None
    arm_lines = body[:split]
    ctx_lines = [ln for ln in body[split + 1:] if ln.strip() != ""]
    if len(arm_lines) != n_arms:
        raise DataLoadError(
            f"expected {n_arms} arm rows before the blank line, got {len(arm_lines)}")
    if not ctx_lines:
        raise DataLoadError("context block is empty")
    arms = _parse_feature_block(arm_lines, 2, dim, "arm")
    ctxs = _parse_feature_block(ctx_lines, 2 + len(arm_lines) + 1, dim, "context")
    means = arms @ ctxs.T
    top = means.max()
    if top <= 0:
        raise DataLoadError("cannot rescale rewards: largest inner product is <= 0")
    arms = arms / top
    if (arms @ ctxs.T).min() <= 0:
        raise DataLoadError("rewards not positive after rescaling; "
                            "feature file yields non-positive inner products")
    return BanditInstance(arms, ctxs, noise_sigma)


def save_instance(instance, path):
    """JSON serialization (arrays of arrays)."""
    doc = {
        "arm_params": instance.arm_params.tolist(),
        "contexts": instance.contexts.tolist(),
        "sigma": instance.sigma,
        "target_arm": instance.target_arm,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_instance(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataLoadError(f"cannot load instance from {path}: {exc}") from exc
    try:
        return BanditInstance(np.array(doc["arm_params"], dtype=float),
                              np.array(doc["contexts"], dtype=float),
                              float(doc["sigma"]),
                              target_arm=doc.get("target_arm"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataLoadError(f"malformed instance file {path}: {exc}") from exc
