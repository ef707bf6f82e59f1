//! Closed-form and quadrature ground truth for the Gaussian location model.
//!
//! Nothing here is used by the estimators themselves; tests, benches and the
//! `verify` command compare against these values.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, FsmError, Result};
use crate::model::{GaussianMeanModel, ParamVec, SimulatorModel};
use crate::rng::Stream;

fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    let chol = a.clone().cholesky().ok_or_else(|| {
        FsmError::Degenerate(format!("{context}: matrix is not positive definite"))
    })?;
    Ok(chol.solve(b))
}

/// Gaussian location model smoothed by an isotropic Gaussian proposal.
///
/// The smoothed likelihood is `N(x; theta_t, Sigma + sigma^2 I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedGaussianOracle {
    covariance: DMatrix<f64>,
    sigma: f64,
    center: DVector<f64>,
}

impl SmoothedGaussianOracle {
    pub fn new(covariance: DMatrix<f64>, sigma: f64, center: DVector<f64>) -> Result<Self> {
        check_dim("oracle: covariance", center.len(), covariance.nrows())?;
        check_dim("oracle: covariance", center.len(), covariance.ncols())?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(FsmError::InvalidArgument(format!(
                "sigma must be >= 0, got {sigma}"
            )));
        }
        if covariance.clone().cholesky().is_none() {
            return Err(FsmError::Degenerate(
                "covariance is not positive definite".into(),
            ));
        }
        Ok(Self {
            covariance,
            sigma,
            center,
        })
    }

    pub fn for_model(model: &GaussianMeanModel, sigma: f64, center: &ParamVec) -> Result<Self> {
        Self::new(
            model.covariance().clone(),
            sigma,
            center.as_vector().clone(),
        )
    }

    fn smoothed_covariance(&self) -> DMatrix<f64> {
        let d = self.center.len();
        &self.covariance + DMatrix::identity(d, d) * (self.sigma * self.sigma)
    }

    /// `(Sigma + sigma^2 I)^-1 (x - theta_t)`.
    pub fn smoothed_grad_exact(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim("smoothed_grad_exact: x", self.center.len(), x.len())?;
        let r = DVector::from_column_slice(x) - &self.center;
        spd_solve(&self.smoothed_covariance(), &r, "smoothed_grad_exact")
    }

    pub fn smoothed_loglik_exact(&self, x: &[f64]) -> Result<f64> {
        check_dim("smoothed_loglik_exact: x", self.center.len(), x.len())?;
        let cov = self.smoothed_covariance();
        let chol = cov.cholesky().ok_or_else(|| {
            FsmError::Degenerate("smoothed covariance is not positive definite".into())
        })?;
        let r = DVector::from_column_slice(x) - &self.center;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let d = self.center.len() as f64;
        Ok(-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + r.dot(&chol.solve(&r))))
    }
}

/// Posterior-mean score `E[Sigma^-1 (x - theta) | x]` for the prior
/// `theta ~ N(theta_t, sigma^2 I)`.
pub fn bayes_optimal_score_gaussian(
    covariance: &DMatrix<f64>,
    sigma: f64,
    center: &DVector<f64>,
    x: &[f64],
) -> Result<DVector<f64>> {
    let d = center.len();
    check_dim("bayes_optimal_score: x", d, x.len())?;
    check_dim("bayes_optimal_score: covariance", d, covariance.nrows())?;
    let precision = covariance
        .clone()
        .cholesky()
        .ok_or_else(|| FsmError::Degenerate("covariance is not positive definite".into()))?
        .inverse();
    let xv = DVector::from_column_slice(x);
    let posterior_mean = if sigma == 0.0 {
        center.clone()
    } else {
        let prior_precision = 1.0 / (sigma * sigma);
        let post_precision = &precision + DMatrix::identity(d, d) * prior_precision;
        let rhs = &precision * &xv + center * prior_precision;
        spd_solve(&post_precision, &rhs, "bayes_optimal_score")?
    };
    Ok(precision * (xv - posterior_mean))
}

/// Gauss-Hermite rule for the standard normal: `E f(z) ~ sum w_i f(z_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub-Welsch on the Jacobi matrix of the probabilists' polynomials.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(FsmError::InvalidArgument(
                "quadrature needs at least one node".into(),
            ));
        }
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }
}

/// Default rule for the smoothing integral.
pub const QUADRATURE_NODES: usize = 64;

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `log E_z L(theta_t + sigma z; x)` by tensor-product Gauss-Hermite, `d <= 2`.
pub fn smoothed_loglik_quadrature(
    model: &dyn SimulatorModel,
    theta_t: &DVector<f64>,
    sigma: f64,
    x: &[f64],
    rule: &GaussHermite,
) -> Result<f64> {
    let d = model.param_dim();
    check_dim("quadrature: theta_t", d, theta_t.len())?;
    if d > 2 {
        return Err(FsmError::Unsupported {
            model: model.name(),
            operation: "tensor quadrature above two dimensions",
        });
    }
    let q = rule.nodes.len();
    let mut terms = Vec::with_capacity(q.pow(d as u32));
    let mut theta = theta_t.clone();
    for idx in 0..q.pow(d as u32) {
        let mut log_w = 0.0;
        let mut rest = idx;
        for c in 0..d {
            let i = rest % q;
            rest /= q;
            theta[c] = theta_t[c] + sigma * rule.nodes[i];
            log_w += rule.weights[i].ln();
        }
        terms.push(log_w + model.log_density(&theta, x)?);
    }
    Ok(log_sum_exp(&terms))
}

/// Central difference of [`smoothed_loglik_quadrature`] with step
/// `1e-4 * max(1, |theta_i|)`.
pub fn smoothed_grad_quadrature(
    model: &dyn SimulatorModel,
    theta_t: &DVector<f64>,
    sigma: f64,
    x: &[f64],
    rule: &GaussHermite,
) -> Result<DVector<f64>> {
    let d = theta_t.len();
    let mut grad = DVector::zeros(d);
    for i in 0..d {
        let h = 1e-4 * theta_t[i].abs().max(1.0);
        let mut plus = theta_t.clone();
        plus[i] += h;
        let mut minus = theta_t.clone();
        minus[i] -= h;
        let up = smoothed_loglik_quadrature(model, &plus, sigma, x, rule)?;
        let down = smoothed_loglik_quadrature(model, &minus, sigma, x, rule)?;
        grad[i] = (up - down) / (2.0 * h);
        if !grad[i].is_finite() {
            return Err(FsmError::Degenerate(
                "smoothed likelihood vanishes at every quadrature node".into(),
            ));
        }
    }
    Ok(grad)
}

/// Posterior-weighted form `E[theta - theta_t | x] / sigma^2` of the smoothed
/// gradient on the same quadrature nodes. Unlike the finite difference it
/// stays valid when the likelihood jumps, e.g. at the edge of a support.
pub fn smoothed_grad_quadrature_weighted(
    model: &dyn SimulatorModel,
    theta_t: &DVector<f64>,
    sigma: f64,
    x: &[f64],
    rule: &GaussHermite,
) -> Result<DVector<f64>> {
    let d = model.param_dim();
    check_dim("quadrature: theta_t", d, theta_t.len())?;
    if d > 2 {
        return Err(FsmError::Unsupported {
            model: model.name(),
            operation: "tensor quadrature above two dimensions",
        });
    }
    if !(sigma > 0.0) {
        return Err(FsmError::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let q = rule.nodes.len();
    let mut log_terms = Vec::with_capacity(q.pow(d as u32));
    let mut zs = Vec::with_capacity(q.pow(d as u32));
    let mut theta = theta_t.clone();
    for idx in 0..q.pow(d as u32) {
        let mut log_w = 0.0;
        let mut z = DVector::zeros(d);
        let mut rest = idx;
        for c in 0..d {
            let i = rest % q;
            rest /= q;
            z[c] = rule.nodes[i];
            theta[c] = theta_t[c] + sigma * z[c];
            log_w += rule.weights[i].ln();
        }
        log_terms.push(log_w + model.log_density(&theta, x)?);
        zs.push(z);
    }
    let norm = log_sum_exp(&log_terms);
    if norm == f64::NEG_INFINITY {
        return Err(FsmError::Degenerate(
            "smoothed likelihood vanishes at every quadrature node".into(),
        ));
    }
    let mut mean = DVector::zeros(d);
    for (lt, z) in log_terms.iter().zip(&zs) {
        mean += z * (lt - norm).exp();
    }
    Ok(mean / sigma)
}

/// Affine score model `s(x) = slope * x + intercept` for the scalar checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarAffine {
    pub slope: f64,
    pub intercept: f64,
}

/// Both forms of the local score-matching objective for the scalar Gaussian
/// location model with data sd `tau`, evaluated by product quadrature over
/// `theta ~ N(theta_t, sigma^2)` and `x ~ N(theta, tau^2)`.
///
/// Returns `(E (s(x) - score)^2, E [s(x)^2 + 2 s(x) d/dtheta log q(theta)])`.
/// The two differ by a constant independent of `s`.
pub fn scalar_objectives(
    tau: f64,
    sigma: f64,
    theta_t: f64,
    s: ScalarAffine,
    rule: &GaussHermite,
) -> (f64, f64) {
    let mut intractable = 0.0;
    let mut tractable = 0.0;
    for (u, wu) in rule.nodes.iter().zip(&rule.weights) {
        let theta = theta_t + sigma * u;
        let log_q_grad = -(theta - theta_t) / (sigma * sigma);
        for (v, wv) in rule.nodes.iter().zip(&rule.weights) {
            let x = theta + tau * v;
            let fit = s.slope * x + s.intercept;
            let score = (x - theta) / (tau * tau);
            let w = wu * wv;
            intractable += w * (fit - score).powi(2);
            tractable += w * (fit * fit + 2.0 * fit * log_q_grad);
        }
    }
    (intractable, tractable)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasRow {
    pub sigma: f64,
    /// `E || (Sigma + sigma^2 I)^-1 (x - theta_t) - Sigma^-1 (x - theta_t) ||`.
    pub bias: f64,
    /// Largest eigenvalue of `Sigma^-1`.
    pub lipschitz: f64,
    /// Monte Carlo `E p(x | theta*) / p(x | theta_t)`.
    pub expected_ratio: f64,
    /// `L sqrt(d) sigma E[R]`.
    pub bound: f64,
}

/// Measures the smoothing bias of the optimal score against its bound on a
/// grid of `sigma`, reusing one sample of `x ~ P_{theta*}` for every row.
pub fn bias_scaling_probe(
    model: &GaussianMeanModel,
    truth: &ParamVec,
    theta_t: &ParamVec,
    sigmas: &[f64],
    samples: usize,
    stream: Stream,
) -> Result<Vec<BiasRow>> {
    let d = model.param_dim();
    check_dim("bias probe: truth", d, truth.len())?;
    check_dim("bias probe: theta_t", d, theta_t.len())?;
    if samples == 0 {
        return Err(FsmError::InvalidArgument("samples must be >= 1".into()));
    }
    if let Some(bad) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(FsmError::InvalidArgument(format!(
            "sigma must be >= 0, got {bad}"
        )));
    }
    let cov = model.covariance();
    let chol_l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| FsmError::Degenerate("covariance is not positive definite".into()))?
        .l();
    let mut rng = stream.rng();
    let xs: Vec<DVector<f64>> = (0..samples)
        .map(|_| {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            truth.as_vector() + &chol_l * z
        })
        .collect();

    let mut ratio_sum = 0.0;
    for x in &xs {
        let lp_truth = model.log_density(truth.as_vector(), x.as_slice())?;
        let lp_t = model.log_density(theta_t.as_vector(), x.as_slice())?;
        ratio_sum += (lp_truth - lp_t).exp();
    }
    let expected_ratio = ratio_sum / samples as f64;
    let precision = model.precision();
    let lipschitz = SymmetricEigen::new(precision.clone()).eigenvalues.max();

    let residuals: Vec<DVector<f64>> = xs.iter().map(|x| x - theta_t.as_vector()).collect();
    let exact: Vec<DVector<f64>> = residuals.iter().map(|r| precision * r).collect();
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let smoothed = cov + DMatrix::identity(d, d) * (sigma * sigma);
        let chol = smoothed.cholesky().ok_or_else(|| {
            FsmError::Degenerate("smoothed covariance is not positive definite".into())
        })?;
        let bias = if sigma == 0.0 {
            0.0
        } else {
            residuals
                .iter()
                .zip(&exact)
                .map(|(r, e)| (chol.solve(r) - e).norm())
                .sum::<f64>()
                / samples as f64
        };
        rows.push(BiasRow {
            sigma,
            bias,
            lipschitz,
            expected_ratio,
            bound: lipschitz * (d as f64).sqrt() * sigma * expected_ratio,
        });
    }
    Ok(rows)
}
