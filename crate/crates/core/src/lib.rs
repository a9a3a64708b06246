//! Persistent-scatterer (PS) pixel selection on interferogram stacks.
//!
//! The crate bundles three selectors over the same stack data model —
//! the classical phase-stability chain (amplitude-dispersion candidates,
//! adaptive low-pass filtering, look-angle-error inversion, temporal
//! coherence thresholding) and two trainable per-pixel segmenters built on
//! a small reverse-mode tensor core (a 3-D CNN and a ConvLSTM) — plus a
//! truth-labelled synthetic scene generator, a training loop, and
//! STIP-based quality evaluation for comparing the resulting masks.
//!
//! The `psnet` binary exposes the pipeline as subcommands (`synth`,
//! `classical`, `train`, `predict`, `eval`, `gradcheck`); every command is
//! deterministic given its seed.

pub mod autodiff;
pub mod classical;
pub mod cli;
pub mod error;
pub mod networks;
pub mod quality;
pub mod seed;
pub mod synth;
pub mod stack;
pub mod trainer;

pub use error::{Error, Result};
