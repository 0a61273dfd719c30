//! Probes and reports that quantify concealment and attribute obedience.

mod leakage;
mod obedience;
mod probe;

pub use leakage::{
    audit_disjoint, latent_codes, leakage_report, leakage_report_against, sampled_latent_codes, train_plain_baseline,
    AttributeLeakage, LeakageReport, ProbePair,
};
pub use obedience::{
    image_features, obedience_report, obedience_report_with, reconstruction_report, ImageProbes, ObedienceReport,
    ObedienceRow, ReconstructionReport, DEFAULT_TARGET_AGES,
};
pub use probe::{
    accuracy, baseline_score, mae, rmse, train_probe, ProbeKind, ProbeModel, ProbeOptions, ProbeTask, MIN_PER_CLASS,
    MIN_REGRESSION,
};
