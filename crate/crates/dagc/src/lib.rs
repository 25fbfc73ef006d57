//! Deep attention-guided graph clustering.
//!
//! A self-contained toolkit that fuses auto-encoder and graph-convolutional
//! features with three attention modules (per-layer, across scales, and
//! across assignment distributions) and trains the whole network with a
//! dual self-supervision objective: a triplet KL alignment of the soft
//! assignments plus a thresholded pseudo-label cross-entropy.
//!
//! The crate is organized around the pipeline:
//!
//! - [`autodiff`]: a minimal reverse-mode tape over dense f64 matrices
//! - [`graph`]: CSR adjacency, the renormalized propagation operator, and
//!   KNN graph construction
//! - [`model`]: the network, its forward pass, and checkpointing
//! - [`losses`]: the three objective terms
//! - [`trainer`]: k-means, Adam, DAE pretraining, and the joint loop
//! - [`metrics`]: ACC / NMI / ARI / macro-F1 against ground truth

pub mod autodiff;
pub mod dense;
pub mod error;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
