//! Relational event models for species invasions.
//!
//! An invasion is a relational event `(s, c, t)`: species `s` is first
//! recorded in region `c` at time `t`. The hazard of dyad `(s, c)` is
//! `λ₀(t) exp(β'x_sc(t) + b_s + b_c + b_{s_c(t) s})`; the crate builds risk
//! sets and covariates from the invasion history, fits the model by partial
//! likelihood, and provides diagnostics and a simulator.

pub mod covariates;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod event;
pub mod ingest;
mod linalg;
pub mod model;
pub mod simulator;

pub use covariates::{CovariateEngine, CovariatePanels, DesignRow, TopInvaders};
pub use error::{Error, Result};
pub use estimator::{build_dataset, fit, Dataset, FitOptions, FitResult, LazyDataset, StrataSource};
pub use event::{build_event_sequence, EventSequence, FirstRecord, InvasionData, NodeSet, OccupancyState, Window};
pub use model::{CovariateDecl, CovariateKind, DyadicForm, Family, ModelSpec, Ties};
