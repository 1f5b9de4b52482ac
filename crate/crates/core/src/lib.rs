//! Counterfactual explanations as discrete geodesics under pullback
//! Riemannian metrics.
//!
//! The crate is organized bottom-up:
//!
//! * [`diffmap`]: smooth maps with forward/reverse derivatives,
//! * [`geometry`]: ambient and pullback metrics, path energy and length,
//! * [`paths`]: path initialization, resampling and the fixed-endpoint
//!   geodesic solver,
//! * [`counterfactual`]: the two-phase geodesic method and the single-point
//!   baselines, behind a common [`counterfactual::CounterfactualMethod`]
//!   trait and a name-keyed registry,
//! * [`evaluation`]: distance, alignment, margin and dispersion metrics,
//! * [`synth`]: reproducible synthetic scenarios,
//! * [`oracle`]: a grid-graph shortest-path oracle for 2-D latents,
//! * [`harness`]: batch experiments writing reports, CSV and summaries.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod counterfactual;
pub mod diffmap;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod oracle;
pub mod paths;
pub mod synth;

pub use error::{Error, Result};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
