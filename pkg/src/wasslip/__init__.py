"""wasslip: transport-robust risk certificates for Lipschitz classifiers.

Exact optimal transport over finite supports, the one-dimensional dual of the
worst-case risk over a transport ball, feature-space certificates for deep
models, adversarial-risk bounds, and the regularized training objectives they
justify; every analytic route is paired with an LP or grid oracle.
"""

from wasslip.numerics import (
    DimensionError,
    LPProblem,
    LPSolution,
    LPStatus,
    NormTag,
    NumericalError,
    UnsupportedNormError,
    finite_difference_gradient,
    norm,
    operator_norm,
    power_iteration,
    solve_lp,
)
from wasslip.measures import (
    CostMatrix,
    DiscreteMeasure,
    LabeledPoint,
    MetricSpec,
    PointSet,
    TransportInfeasibleError,
    ball_contains,
    cost_matrix,
    empirical_from_samples,
    metric_eval,
    pushforward,
    transport_cost,
)
from wasslip.models import (
    ActivationTag,
    BoundMode,
    LinearSoftmax,
    LossEval,
    MLP,
    MLPLayer,
    ce_lipschitz_bound,
    empirical_lipschitz,
    mlp_backprop,
    mlp_forward,
    network_lipschitz_bound,
    softmax_ce_loss,
)
from wasslip.robust import (
    DualSolution,
    RobustCertificate,
    RobustInstance,
    certify_robust_risk,
    check_envelope_collapse,
    dual_objective,
    empirical_risk,
    inner_label_sup,
    kappa_threshold,
    minimize_dual,
    minimize_dual_on_targets,
    primal_robust_risk_lp,
    pushforward_risk,
)
from wasslip.adversarial import (
    AttackConfig,
    AttackResult,
    BallSpec,
    adversarial_risk,
    check_adversarial_bound,
    fgsm_attack,
    grid_attack,
    pgd_attack,
)
from wasslip.train import ObjectiveKind, TrainConfig, TrainReport, objective_and_grad, project_layer_lipschitz, train_loop

__version__ = "0.1.0"
