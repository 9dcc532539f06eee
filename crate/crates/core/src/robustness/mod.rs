//! Weight-noise, corruption and adversarial probes, and per-class metrics.

mod attacks;
mod corruption;
mod metrics;
mod noise;
mod report;

pub use attacks::{
    apgd, apgd_checkpoints, apgd_with, attack, attack_dataset, attack_with, bim, fgsm, fgsm_with, iterative_with,
    pgd, success_rate, AttackKind, AttackOutcome, AttackSpec, ModelObjective, Objective,
};
pub use corruption::{
    corrupt, corrupt_with_parameter, gaussian_kernel, CorruptionKind, CorruptionSpec, SEVERITY_TABLE_VERSION,
};
pub use metrics::{accuracy_and_loss, dataset_logits, evaluate, metrics_from_predictions, Metrics, EVAL_BATCH};
pub use noise::{
    delta_loss_with, estimate_delta_loss, perturb_slice, perturb_weights, perturbation_curve, CurvePoint, DeltaLoss,
    NoiseSpec,
};
pub use report::{
    default_sigmas, run_probes, AttackResult, CorruptionProbe, CorruptionResult, MetricRow, PerturbationProbe,
    Probes, ReportMetadata, RobustnessReport,
};
