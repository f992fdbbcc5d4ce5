//! Classification and clustering metrics, and the evaluation protocols.

mod metrics;
mod protocol;

pub use metrics::{ari, binary_metrics, case_labels, classification_metrics, confusion, ClassMetrics, Confusion, MetricsBlock};
pub use protocol::{
    end_to_end_eval, gold_for_issue, phase_wise_eval, score_verdicts, PhaseInputs, PhaseWiseReport, RunMetrics,
    ShuffleStats,
};

/// Flatten a metrics block into `(block, class, metric, value)` rows for
/// CSV output. Overall figures use the class `all`.
pub fn metric_rows(block_name: &str, block: &MetricsBlock) -> Vec<[String; 4]> {
    let mut rows = Vec::new();
    let mut push = |class: &str, metric: &str, value: String| {
        rows.push([block_name.to_string(), class.to_string(), metric.to_string(), value]);
    };
    for (class, m) in &block.per_class {
        push(class, "precision", m.precision.to_string());
        push(class, "recall", m.recall.to_string());
        push(class, "f1", m.f1.to_string());
        push(class, "support", m.support.to_string());
    }
    push("all", "precision", block.precision.to_string());
    push("all", "recall", block.recall.to_string());
    push("all", "macro_f1", block.macro_f1.to_string());
    push("all", "weighted_f1", block.weighted_f1.to_string());
    push("all", "accuracy", block.accuracy.to_string());
    push("all", "n", block.n.to_string());
    if let Some(a) = block.ari {
        push("all", "ari", a.to_string());
    }
    rows
}
