//! Hierarchical nested subgroup logistic regression.
//!
//! Each predictor's effect in subgroup `d` is decomposed as
//! `beta_d = mu + eta^{M(d)} + delta_d`: an overall effect, an effect specific to
//! the parent category `M(d)`, and an effect specific to the subgroup itself.
//! The decomposition is encoded as a block-sparse expanded design matrix and fitted
//! under one of two penalties:
//!
//! * a sample-size weighted lasso ([`solver::fit_path_lasso`]), and
//! * an overlapping (tree-structured) group lasso solved by a groupwise
//!   majorization-minimization path algorithm with strong-rule screening
//!   ([`solver::fit_path_oglasso`]).
//!
//! The crate also contains a simulation engine ([`simulate`]), subgroup metrics
//! ([`metrics`]), k-fold tuning ([`tuning`]) and the pieces behind the `hiernest`
//! command-line tool ([`data`], [`model`], [`experiment`]).

pub mod config;
pub mod data;
pub mod design;
pub mod error;
pub mod experiment;
pub mod hierarchy;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod prox;
pub mod simulate;
pub mod solver;
pub mod tuning;

pub use design::{apply_standardization, standardize, ColumnStats, HierDesign, Level, PenaltyWeights};
pub use error::{Error, Result};
pub use hierarchy::{HierDataset, HierarchySpec};
pub use solver::{CoefficientTree, FitPath, PenaltyKind, SolverConfig};
