//! KDE-SP baseline: a kernel-density log-likelihood surrogate differentiated
//! by simultaneous perturbation.

mod kde;
mod spsa;

pub use kde::{kde_loglik, BandwidthRule, ProductKde};
pub use spsa::{
    all_rademacher, rademacher, spsa_gradient, spsa_gradient_along, spsa_schedules,
    ExactLogLikelihood, FnLogLikelihood, KdeLogLikelihood, KdeSpConfig, LogLikelihood,
};
