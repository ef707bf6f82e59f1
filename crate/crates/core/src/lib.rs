//! Likelihood-free maximum likelihood estimation with local Fisher score
//! matching, a KDE + SPSA baseline, and Fisher-information intervals.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fsm;
pub mod inference;
pub mod kdesp;
pub mod linalg;
pub mod model;
pub mod normal;
pub mod optimize;
pub mod oracles;
pub mod rng;

pub use error::{FsmError, Result};
pub use fsm::{
    estimate_gradient, fit_linear_fsm, sample_batch, FitOptions, GradEstimate, LinearScoreModel,
    ProposalSpec, Ridge, SimBatch,
};
pub use inference::{
    confidence_interval, coverage_experiment, estimate_fisher_info, ConfidenceInterval,
    CoverageConfig, CoverageReport, FisherInfoEstimate, ScoreSource,
};
pub use kdesp::{BandwidthRule, KdeSpConfig};
pub use model::{
    simulate, DataMatrix, GaussianMeanModel, ParamVec, ShiftedExponentialModel, SimulatorModel,
};
pub use optimize::{
    run_mle, tune_grid, FsmSettings, GradientMethod, Hyper, OptConfig, OptTrace, TuneResult,
    TuneSettings, UpdateRule,
};
pub use rng::Stream;
