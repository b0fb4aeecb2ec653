pub mod ablation;
pub mod metrics;
pub mod scores;

pub use ablation::{report_json, run_ablations, train_and_evaluate, AblationRow, AblationTable, Variant};
pub use metrics::{evaluate, ranks, Direction, RetrievalReport};
pub use scores::{decode_scores, encode_scores, load_scores, save_scores, scores_to_text, SCORES_MAGIC};
