//! Fitting the fusion head over frozen embeddings.

pub mod batch;
pub mod grad;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use batch::{assemble_batches, multi_query_pairing, similarity_matrix, TrainingBatch};
pub use grad::{loss_grad, LossGrad, LossKind, Objective};
pub use loss::{bce_loss, bce_loss_grad, infonce_loss, infonce_loss_grad, LossWithGrad, SquareMatrix};
pub use optim::{lr_at, AdamW};
pub use trainer::{train, AlignedData, EpochLog, StepLog, TrainConfig, TrainLog, TrainOutcome};
