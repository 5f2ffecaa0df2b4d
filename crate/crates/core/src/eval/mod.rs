//! Batch evaluation over task manifests.

mod manifest;
mod run;

pub use self::manifest::{
    image_id_of, load_landmarks, PredictorSpec, ProviderSpec, TaskKind, TaskManifest, TemplateSpec,
};
pub use self::run::{
    run_cluster, run_eval, run_robustness, ClusterModelResult, EvalOptions, EvalSummary, RobustnessCell,
    RobustnessRow, RobustnessSummary,
};
