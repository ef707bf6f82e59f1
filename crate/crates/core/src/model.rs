//! Simulator interface and the built-in synthetic models.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, check_finite, FsmError, Result};
use crate::rng::Stream;

/// `n x k` matrix of row samples.
pub type DataMatrix = DMatrix<f64>;

/// A finite point in parameter space.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVec(DVector<f64>);

impl ParamVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(values))
    }

    pub fn from_vector(values: DVector<f64>) -> Result<Self> {
        check_finite("parameter vector", values.iter())?;
        Ok(Self(values))
    }

    pub fn from_element(d: usize, value: f64) -> Result<Self> {
        Self::from_vector(DVector::from_element(d, value))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }
}

impl Deref for ParamVec {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

/// A simulator `P_theta` that can be sampled at any parameter value.
///
/// `log_density`, `closed_form_score` and `exact_mle` are only available on
/// models with a tractable likelihood; they exist for oracles and tests and
/// are never used by the likelihood-free estimators.
pub trait SimulatorModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn param_dim(&self) -> usize;

    fn data_dim(&self) -> usize;

    /// Draws `n` rows at `theta`. Dimensions are checked by [`simulate`].
    fn draw(&self, theta: &DVector<f64>, n: usize, rng: &mut ChaCha8Rng) -> DataMatrix;

    fn log_density(&self, _theta: &DVector<f64>, _x: &[f64]) -> Result<f64> {
        Err(FsmError::Unsupported {
            model: self.name(),
            operation: "log_density",
        })
    }

    fn closed_form_score(&self, _theta: &DVector<f64>, _x: &[f64]) -> Result<DVector<f64>> {
        Err(FsmError::Unsupported {
            model: self.name(),
            operation: "closed_form_score",
        })
    }

    fn exact_mle(&self, _data: &DataMatrix) -> Result<ParamVec> {
        Err(FsmError::Unsupported {
            model: self.name(),
            operation: "exact_mle",
        })
    }
}

/// Simulates `n` samples at `theta` using `stream`.
pub fn simulate(
    model: &dyn SimulatorModel,
    theta: &ParamVec,
    n: usize,
    stream: Stream,
) -> Result<DataMatrix> {
    check_dim("simulate: theta", model.param_dim(), theta.len())?;
    if n == 0 {
        return Err(FsmError::InvalidArgument("simulate requires n >= 1".into()));
    }
    Ok(model.draw(theta, n, &mut stream.rng()))
}

/// Multivariate Gaussian with unknown mean and fixed covariance.
#[derive(Clone, Debug)]
pub struct GaussianMeanModel {
    covariance: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianMeanModel {
    pub fn isotropic(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() || covariance.nrows() == 0 {
            return Err(FsmError::InvalidArgument(
                "covariance must be a non-empty square matrix".into(),
            ));
        }
        check_finite("covariance", covariance.iter())?;
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 * covariance.amax().max(1.0) {
            return Err(FsmError::InvalidArgument(
                "covariance must be symmetric".into(),
            ));
        }
        let chol = covariance.clone().cholesky().ok_or_else(|| {
            FsmError::InvalidArgument("covariance must be positive definite".into())
        })?;
        let chol_lower = chol.l();
        let precision = chol.inverse();
        let k = covariance.nrows() as f64;
        let log_det: f64 = 2.0 * chol_lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            covariance,
            chol_lower,
            precision,
            log_norm: -0.5 * (k * (2.0 * PI).ln() + log_det),
        })
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(variances)))
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    fn residual(&self, theta: &DVector<f64>, x: &[f64]) -> Result<DVector<f64>> {
        check_dim("gaussian: x", self.data_dim(), x.len())?;
        check_dim("gaussian: theta", self.param_dim(), theta.len())?;
        Ok(DVector::from_row_slice(x) - theta)
    }
}

impl SimulatorModel for GaussianMeanModel {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn param_dim(&self) -> usize {
        self.covariance.nrows()
    }

    fn data_dim(&self) -> usize {
        self.covariance.nrows()
    }

    fn draw(&self, theta: &DVector<f64>, n: usize, rng: &mut ChaCha8Rng) -> DataMatrix {
        let k = self.data_dim();
        let mut out = DMatrix::zeros(n, k);
        let mut z = DVector::zeros(k);
        for i in 0..n {
            for zj in z.iter_mut() {
                *zj = rng.sample(StandardNormal);
            }
            let x = theta + &self.chol_lower * &z;
            out.row_mut(i).copy_from(&x.transpose());
        }
        out
    }

    fn log_density(&self, theta: &DVector<f64>, x: &[f64]) -> Result<f64> {
        let r = self.residual(theta, x)?;
        Ok(self.log_norm - 0.5 * r.dot(&(&self.precision * &r)))
    }

    fn closed_form_score(&self, theta: &DVector<f64>, x: &[f64]) -> Result<DVector<f64>> {
        let r = self.residual(theta, x)?;
        Ok(&self.precision * r)
    }

    fn exact_mle(&self, data: &DataMatrix) -> Result<ParamVec> {
        check_dim("gaussian: data columns", self.data_dim(), data.ncols())?;
        if data.nrows() == 0 {
            return Err(FsmError::InvalidArgument("empty data".into()));
        }
        ParamVec::from_vector(data.row_mean().transpose())
    }
}

/// One-dimensional exponential shifted by `theta`:
/// `p(x | theta) = rate * exp(-rate (x - theta))` for `x >= theta`.
#[derive(Clone, Debug)]
pub struct ShiftedExponentialModel {
    rate: f64,
}

impl ShiftedExponentialModel {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(FsmError::InvalidArgument(format!(
                "rate must be positive and finite, got {rate}"
            )));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl Default for ShiftedExponentialModel {
    fn default() -> Self {
        Self { rate: 1.0 }
    }
}

impl SimulatorModel for ShiftedExponentialModel {
    fn name(&self) -> &'static str {
        "shifted_exp"
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn data_dim(&self) -> usize {
        1
    }

    fn draw(&self, theta: &DVector<f64>, n: usize, rng: &mut ChaCha8Rng) -> DataMatrix {
        let shift = theta[0];
        // inverse CDF with u in (0, 1]
        DMatrix::from_fn(n, 1, |_, _| {
            let u: f64 = 1.0 - rng.random::<f64>();
            shift - u.ln() / self.rate
        })
    }

    fn log_density(&self, theta: &DVector<f64>, x: &[f64]) -> Result<f64> {
        check_dim("shifted_exp: x", 1, x.len())?;
        check_dim("shifted_exp: theta", 1, theta.len())?;
        if x[0] >= theta[0] {
            Ok(self.rate.ln() - self.rate * (x[0] - theta[0]))
        } else {
            Ok(f64::NEG_INFINITY)
        }
    }

    fn closed_form_score(&self, theta: &DVector<f64>, x: &[f64]) -> Result<DVector<f64>> {
        check_dim("shifted_exp: x", 1, x.len())?;
        if x[0] < theta[0] {
            return Err(FsmError::Degenerate(
                "score undefined outside the support".into(),
            ));
        }
        Ok(DVector::from_element(1, self.rate))
    }

    fn exact_mle(&self, data: &DataMatrix) -> Result<ParamVec> {
        check_dim("shifted_exp: data columns", 1, data.ncols())?;
        if data.nrows() == 0 {
            return Err(FsmError::InvalidArgument("empty data".into()));
        }
        ParamVec::new(vec![data.min()])
    }
}
