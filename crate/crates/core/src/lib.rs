//! Margin geometry for multi-class linear classifiers, with the training
//! machinery built around it.
//!
//! The crate provides:
//!
//! - decision-boundary geometry at a linear classification head: pairwise
//!   boundaries, signed distances, and the minimal margin score (MMS) of a
//!   sample — the distance to the boundary between its two highest-scoring
//!   classes ([`margin`]);
//! - the multi-margin regularization (MMR) term and an α-weighted composite
//!   objective over cross-entropy or multi-class hinge risk ([`objective`]);
//! - batch selection policies for selective-sampling training: MMS, random,
//!   hard-negative, and entropy ([`selection`]);
//! - a deterministic SGD training loop that scores a pool of B candidates per
//!   step and back-propagates only the b selected samples ([`trainer`]);
//! - independent verification oracles: brute-force boundary distances, central
//!   finite differences, and an exact 2-D max-margin solver ([`oracle`]).
//!
//! Everything is `f64`, seeded, and bit-reproducible: two runs from the same
//! configuration produce identical artifacts.

pub mod data;
pub mod error;
pub mod margin;
pub mod model;
pub mod numeric;
pub mod objective;
pub mod oracle;
pub mod selection;
pub mod trainer;

pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use margin::{MarginScore, PairBoundary};
pub use model::{Activation, Extractor, ForwardCache, Gradients, LinearHead, Model};
pub use numeric::{Matrix, Rng};
pub use objective::{AlphaSchedule, LossBreakdown, LossMode};
pub use selection::{PolicyKind, SelectionPolicy, SelectionResult};
pub use trainer::{LrSchedule, MetricsRow, TrainConfig, TrainRun};
