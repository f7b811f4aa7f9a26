//! Scoring, fitting and budgeted selection of vision representations for
//! multimodal language models.
//!
//! * [`tensor`]: feature maps and the FTF file format
//! * [`correspondence`]: C score (keypoint transfer + PCK)
//! * [`alignment`]: A score (caption log-likelihood)
//! * [`fit`]: quadratic (A, C) → performance regression and R² reports
//! * [`policy`]: region-based sampling and regression ranking
//! * [`evaluator`]: Monte Carlo recall simulation and report files

pub mod alignment;
pub mod correspondence;
pub mod error;
pub mod evaluator;
pub mod fit;
pub mod linalg;
pub mod policy;
pub mod table;
pub mod tensor;

pub use error::{Error, Result};
pub use fit::{Basis, FeatureMode, QuadraticModel};
pub use policy::{PolicyState, SamplingMode};
pub use table::{AcTable, BenchmarkTable, Category};
pub use tensor::{FeatureMap, Layout};
