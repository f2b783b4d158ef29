//! Evaluation metrics and reports.

mod metrics;

pub use metrics::{bleu4, edit_distance, exact_match, EvalReport, EvalRow};
