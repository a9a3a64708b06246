//! Minimal reverse-mode tensor core: exactly the ops the two segmentation
//! networks need (2-D/3-D same-padded convolution, batch normalization,
//! ReLU/sigmoid/tanh, dropout, per-pixel dense, the ConvLSTM cell, the
//! weighted soft-F1 loss) plus Adam and a finite-difference gradient
//! checker. Everything is f64.

pub mod adam;
pub mod convlstm;
pub mod gradcheck;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use convlstm::{convlstm_step, convlstm_step_infer, ConvLstmNodes, ConvLstmParams, ConvLstmState};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use ops::{soft_counts, soft_f1_loss_value, SoftCounts};
pub use tape::{BatchStats, NodeId, Tape};
pub use tensor::Tensor;
