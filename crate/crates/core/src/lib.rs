//! Speaker-verification backend: LDA/PLDA baseline with global calibration,
//! a jointly trained discriminative PLDA with side-information dependent
//! calibration, trial-based calibration, and Cllr/min-Cllr/EER evaluation.

pub mod analysis;
pub mod benchmark;
pub mod calibration;
pub mod config;
pub mod data;
pub mod dplda;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model_io;
pub mod plda;
pub mod preprocess;
pub mod synth;
pub mod tbc;

pub use calibration::{EffectivePrior, GlobalCal};
pub use data::{EmbeddingSet, Label, SampleMeta, ScoreKind, ScoreSet, Trial};
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use plda::{PldaScorer, TwoCovModel};
pub use preprocess::{FrontEnd, LdaBasis};
