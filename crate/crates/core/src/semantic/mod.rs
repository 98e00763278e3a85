//! Semantic consistency scoring of generated images against a hypernym
//! taxonomy, using Wu-Palmer similarity.

mod score;
mod taxonomy;

pub use score::{
    categorize, labels_match, mean_std, read_predictions, score_image, score_predictions, summarize, Category,
    Prediction, ReportRow, Rule, ScoreRecord, ScoreReport, Summary, TopK, TopKEntry,
};
pub use taxonomy::{normalize_label, parse_taxonomy, Node, Taxonomy};
