//! Pre-training (auto-encoding, continuation from context embeddings),
//! response-only instruction tuning, and the optimizer loop.

pub mod loss;
pub mod objectives;
pub mod optim;
pub mod run;

pub use loss::next_token_loss;
pub use objectives::{
    ae_loss, assemble_ae, assemble_ft, assemble_lmce, ft_loss, lmce_loss, pretrain_loss, sample_split,
    sample_task, Assembled, ContextMode, ContextRef, FinetuneSample, PretrainSample, Task,
};
pub use optim::AdamW;
pub use run::{train_run, write_curve, LossRecord, TrainConfig, TrainData, TrainOutcome};
