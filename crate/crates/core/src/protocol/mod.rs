//! Leave-one-class-out evaluation.

mod auroc;
mod embed;
mod experiment;
mod matrices;

pub use auroc::{auroc, auroc_brute_force, auroc_counts};
pub use embed::{export_embeddings, EmbeddingExport, EmbeddingRole, EmbeddingRow, Pca};
pub use experiment::{
    run_loco_experiment, run_loco_methods, run_split, train_full_classifier, ExperimentResult,
    LocoRun, MethodSettings, ProtocolConfig, Role, ScoreRow, SplitOutcome, SplitRun,
};
pub use matrices::{
    class_distance_matrix, mean_distance_matrix, ood_confusion_from_results, ood_confusion_matrix,
    ClassDistanceMatrix, OodConfusionMatrix,
};
