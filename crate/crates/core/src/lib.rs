//! Core of the chest X-ray benchmark harness.
//!
//! * [`nn`]: the fixed three-block CNN with hand-written backpropagation
//! * [`optim`]: AdamW with decoupled weight decay
//! * [`data`]: dataset bundles, stratified splits, normalization, augmentation
//! * [`zeroshot`]: text prototypes and cosine-similarity classification
//! * [`metrics`]: accuracy, F1, rank-based ROC AUC
//! * [`calibrate`]: F1-maximizing decision threshold search
//! * [`gradcam`]: class activation heatmaps and PPM overlays
//! * [`train`]: the training loop with best-validation-AUC checkpointing
//!
//! Data-parallel loops run through [`exec::Backend`]; with the `parallel`
//! feature (default) they use rayon, otherwise they run sequentially. Both
//! backends produce bit-identical results.

pub mod calibrate;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod exec;
pub mod gradcam;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod zeroshot;

pub use error::{Error, Result};
pub use exec::Backend;
pub use tensor::{Scalar, Tensor};
