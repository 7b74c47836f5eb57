"""banditlab: a contextual-bandit attack laboratory.

Linear bandit learners (optimistic, posterior-sampling, epsilon-greedy,
expert-advice), adversarial reward and context perturbations, feasibility
analysis for single-context attacks, and a reproducible experiment harness.
"""

from .attacks import (
    AttackOutcome,
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
    feasibility_check,
    poison_batch,
)
from .convex import (
    ConfidenceEllipsoid,
    SocConstraint,
    ellipsoid_support,
    hull_membership_distance,
    min_norm_soc,
    normal_quantile,
    spd_factor,
    spd_solve,
)
from .harness import (
    ExperimentConfig,
    RunMetrics,
    gamma_sweep,
    read_results,
    run_batched_poisoning,
    run_campaign,
    run_episode,
    write_results,
)
from .learners import (
    EpsilonGreedy,
    Exp4,
    LearnerParams,
    LinTS,
    LinUCB,
    RidgeArmState,
    confidence_radius,
    make_expert_panel,
)
from .model import (
    BanditInstance,
    generate_synthetic_instance,
    load_dataset_instance,
    load_instance,
    reward,
    sample_context,
    save_instance,
)

__version__ = "0.1.0"
