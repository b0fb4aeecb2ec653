pub mod checkpoint;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use loss::{info_nce, info_nce_terms, info_nce_value, total_loss, Temperature, MAX_LOGIT_SCALE};
pub use optim::{AdamW, AdamWConfig};
pub use trainer::{batch_step, train, train_with, val_r1, EpochRecord, TrainConfig, TrainOutcome};
