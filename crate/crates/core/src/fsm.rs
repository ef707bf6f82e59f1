//! Local Fisher score matching with a linear score model.
//!
//! Parameters `theta_j` are drawn from an isotropic Gaussian proposal around
//! the current iterate `theta_t`, data `x_{j,k}` are simulated at each
//! `theta_j`, and a linear map `S_W(x) = W^T phi(x)` is fitted by minimising
//!
//! ```text
//! J(W) = 1/m sum_j 1/n sum_k ||S_W(x_jk)||^2 + 2 S_W(x_jk)^T grad log q(theta_j | theta_t)
//! ```
//!
//! whose minimiser solves the (ridge) normal equations
//!
//! ```text
//! (sum_j G_j + lambda I) W = - sum_j sum_k phi(x_jk) grad log q(theta_j | theta_t)^T
//! ```
//!
//! with `G_j = Phi_j^T Phi_j`. `phi(x)` is either `x` or `(x, 1)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, check_finite, FsmError, Result};
use crate::linalg::{max_abs, solve_spd};
use crate::model::{DataMatrix, ParamVec, SimulatorModel};
use crate::rng::Stream;

/// Isotropic Gaussian proposal `N(center, sigma^2 I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalSpec {
    center: ParamVec,
    sigma: f64,
}

impl ProposalSpec {
    pub fn new(center: ParamVec, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(FsmError::InvalidArgument(format!(
                "proposal sigma must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self { center, sigma })
    }

    pub fn center(&self) -> &ParamVec {
        &self.center
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

/// `grad_theta log q(theta_j | theta_t) = -(theta_j - theta_t) / sigma^2`.
pub fn proposal_log_grad(theta_j: &DVector<f64>, proposal: &ProposalSpec) -> Result<DVector<f64>> {
    check_dim("proposal_log_grad", proposal.dim(), theta_j.len())?;
    let s2 = proposal.sigma * proposal.sigma;
    Ok((proposal.center.as_vector() - theta_j) / s2)
}

/// Proposal draws and the data simulated at each draw.
#[derive(Clone, Debug)]
pub struct SimBatch {
    thetas: DMatrix<f64>,
    data: Vec<DataMatrix>,
    proposal: ProposalSpec,
}

impl SimBatch {
    /// Assembles a batch from explicit parts; rows of `thetas` pair with
    /// `data` entries.
    pub fn new(
        thetas: DMatrix<f64>,
        data: Vec<DataMatrix>,
        proposal: ProposalSpec,
    ) -> Result<Self> {
        if thetas.nrows() == 0 {
            return Err(FsmError::InvalidArgument("batch needs m >= 1".into()));
        }
        check_dim("SimBatch: theta columns", proposal.dim(), thetas.ncols())?;
        check_dim("SimBatch: data matrices", thetas.nrows(), data.len())?;
        let n = data[0].nrows();
        let k = data[0].ncols();
        if n == 0 || k == 0 {
            return Err(FsmError::InvalidArgument(
                "batch needs n >= 1 and k >= 1".into(),
            ));
        }
        for x in &data {
            check_dim("SimBatch: rows per draw", n, x.nrows())?;
            check_dim("SimBatch: data dimension", k, x.ncols())?;
            check_finite("simulated data", x.iter())?;
        }
        check_finite("proposal draws", thetas.iter())?;
        Ok(Self {
            thetas,
            data,
            proposal,
        })
    }

    pub fn m(&self) -> usize {
        self.thetas.nrows()
    }

    pub fn n(&self) -> usize {
        self.data[0].nrows()
    }

    pub fn data_dim(&self) -> usize {
        self.data[0].ncols()
    }

    pub fn param_dim(&self) -> usize {
        self.thetas.ncols()
    }

    pub fn thetas(&self) -> &DMatrix<f64> {
        &self.thetas
    }

    pub fn data(&self) -> &[DataMatrix] {
        &self.data
    }

    pub fn proposal(&self) -> &ProposalSpec {
        &self.proposal
    }

    /// `m x d` matrix whose row `j` is `grad log q(theta_j | theta_t)`.
    pub fn log_grads(&self) -> DMatrix<f64> {
        let s2 = self.proposal.sigma * self.proposal.sigma;
        let mut g = self.thetas.clone();
        for mut row in g.row_iter_mut() {
            for (v, c) in row.iter_mut().zip(self.proposal.center.iter()) {
                *v = (c - *v) / s2;
            }
        }
        g
    }
}

/// Draws `m` proposal parameters and `n` samples at each.
///
/// Draw `j` uses only the sub-stream `stream.child(j)`.
pub fn sample_batch(
    model: &dyn SimulatorModel,
    proposal: &ProposalSpec,
    m: usize,
    n: usize,
    stream: Stream,
) -> Result<SimBatch> {
    if m == 0 || n == 0 {
        return Err(FsmError::InvalidArgument(format!(
            "sample_batch needs m, n >= 1 (got m={m}, n={n})"
        )));
    }
    let d = model.param_dim();
    check_dim("sample_batch: proposal center", d, proposal.dim())?;
    let mut thetas = DMatrix::zeros(m, d);
    let mut data = Vec::with_capacity(m);
    let mut theta_j = DVector::zeros(d);
    for j in 0..m {
        let mut rng = stream.child(j as u64).rng();
        for (i, t) in theta_j.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *t = proposal.center[i] + proposal.sigma * z;
        }
        thetas.row_mut(j).copy_from(&theta_j.transpose());
        data.push(model.draw(&theta_j, n, &mut rng));
    }
    Ok(SimBatch {
        thetas,
        data,
        proposal: proposal.clone(),
    })
}

/// Ridge penalty on `||W||_F^2` in the summed objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ridge {
    Absolute(f64),
    /// `factor * trace(sum_j G_j) / feature_dim`.
    Relative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-6)
    }
}

impl Ridge {
    fn resolve(self, gram: &DMatrix<f64>) -> Result<f64> {
        let lambda = match self {
            Ridge::Absolute(l) => l,
            Ridge::Relative(f) => f * gram.trace() / gram.nrows() as f64,
        };
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(FsmError::InvalidArgument(format!(
                "ridge penalty must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(lambda)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub ridge: Ridge,
    /// Append a constant feature to `x`.
    pub affine: bool,
    /// Divide each raw feature by its standard deviation over the batch.
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            ridge: Ridge::default(),
            affine: true,
            standardize: false,
        }
    }
}

/// Fitted linear score model `S(x) = W^T phi(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearScoreModel {
    weights: DMatrix<f64>,
    ridge: f64,
    affine: bool,
    scale: Option<DVector<f64>>,
    condition_estimate: f64,
    used_fallback: bool,
}

impl LinearScoreModel {
    /// Builds a model from explicit weights (`feature_dim x d`).
    pub fn new(weights: DMatrix<f64>, ridge: f64, affine: bool) -> Result<Self> {
        check_finite("score weights", weights.iter())?;
        if weights.nrows() < 1 + usize::from(affine) || weights.ncols() == 0 {
            return Err(FsmError::InvalidArgument(format!(
                "weights of shape {:?} cannot describe a score model",
                weights.shape()
            )));
        }
        Ok(Self {
            weights,
            ridge,
            affine,
            scale: None,
            condition_estimate: 1.0,
            used_fallback: false,
        })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn affine(&self) -> bool {
        self.affine
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn data_dim(&self) -> usize {
        self.weights.nrows() - usize::from(self.affine)
    }

    pub fn param_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    pub fn used_fallback(&self) -> bool {
        self.used_fallback
    }

    fn feature(&self, x: impl Iterator<Item = f64>, out: &mut [f64]) {
        let k = self.data_dim();
        for (i, v) in x.take(k).enumerate() {
            out[i] = match &self.scale {
                Some(s) => v / s[i],
                None => v,
            };
        }
        if self.affine {
            out[k] = 1.0;
        }
    }

    fn score_into(&self, phi: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self
                .weights
                .column(c)
                .iter()
                .zip(phi)
                .map(|(w, f)| w * f)
                .sum();
        }
    }
}

fn feature_scale(batch: &SimBatch) -> DVector<f64> {
    let k = batch.data_dim();
    let count = (batch.m() * batch.n()) as f64;
    let mut mean = DVector::zeros(k);
    for x in batch.data() {
        mean += x.row_sum().transpose();
    }
    mean /= count;
    let mut var = DVector::<f64>::zeros(k);
    for x in batch.data() {
        for row in x.row_iter() {
            for l in 0..k {
                var[l] += (row[l] - mean[l]).powi(2);
            }
        }
    }
    var.map(|v| {
        let sd = (v / count).sqrt();
        if sd > 0.0 {
            sd
        } else {
            1.0
        }
    })
}

/// Sufficient statistics `(sum_j G_j, sum_j sum_k phi_jk g_j^T)`.
fn accumulate(batch: &SimBatch, proto: &LinearScoreModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = proto.feature_dim();
    let d = batch.param_dim();
    let grads = batch.log_grads();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DMatrix::zeros(p, d);
    let mut phi = vec![0.0; p];
    let mut phi_sum = vec![0.0; p];
    for (j, x) in batch.data().iter().enumerate() {
        phi_sum.iter_mut().for_each(|v| *v = 0.0);
        for row in x.row_iter() {
            proto.feature(row.iter().copied(), &mut phi);
            for a in 0..p {
                phi_sum[a] += phi[a];
                let fa = phi[a];
                for b in a..p {
                    gram[(a, b)] += fa * phi[b];
                }
            }
        }
        for c in 0..d {
            let g = grads[(j, c)];
            for a in 0..p {
                rhs[(a, c)] += phi_sum[a] * g;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    (gram, rhs)
}

fn prototype(batch: &SimBatch, options: &FitOptions) -> LinearScoreModel {
    let p = batch.data_dim() + usize::from(options.affine);
    LinearScoreModel {
        weights: DMatrix::zeros(p, batch.param_dim()),
        ridge: 0.0,
        affine: options.affine,
        scale: options.standardize.then(|| feature_scale(batch)),
        condition_estimate: 1.0,
        used_fallback: false,
    }
}

/// Closed-form minimiser of the (ridge-penalised) local score matching
/// objective.
pub fn fit_linear_fsm(batch: &SimBatch, options: &FitOptions) -> Result<LinearScoreModel> {
    let mut model = prototype(batch, options);
    let (gram, rhs) = accumulate(batch, &model);
    let lambda = options.ridge.resolve(&gram)?;
    let mut system = gram;
    for a in 0..system.nrows() {
        system[(a, a)] += lambda;
    }
    let sol = solve_spd(&system, &(-rhs))?;
    check_finite("fitted weights", sol.solution.iter())?;
    model.weights = sol.solution;
    model.ridge = lambda;
    model.condition_estimate = sol.condition_estimate;
    model.used_fallback = sol.used_fallback;
    Ok(model)
}

/// Relative max-norm residual of the normal equations at `fitted`:
/// `||(G + lambda I) W + R||_max / (||G + lambda I||_max ||W||_max + ||R||_max)`.
pub fn normal_equation_residual(batch: &SimBatch, fitted: &LinearScoreModel) -> Result<f64> {
    check_dim(
        "normal_equation_residual: data dim",
        fitted.data_dim(),
        batch.data_dim(),
    )?;
    check_dim(
        "normal_equation_residual: param dim",
        fitted.param_dim(),
        batch.param_dim(),
    )?;
    let (mut gram, rhs) = accumulate(batch, fitted);
    for a in 0..gram.nrows() {
        gram[(a, a)] += fitted.ridge;
    }
    let residual = &gram * &fitted.weights + &rhs;
    let scale = max_abs(&gram) * max_abs(&fitted.weights) + max_abs(&rhs);
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(max_abs(&residual) / scale)
}

/// The Monte-Carlo objective, averaged over draws and samples. The ridge
/// penalty is not included.
pub fn empirical_objective(batch: &SimBatch, fitted: &LinearScoreModel) -> Result<f64> {
    check_dim(
        "empirical_objective: data dim",
        fitted.data_dim(),
        batch.data_dim(),
    )?;
    check_dim(
        "empirical_objective: param dim",
        fitted.param_dim(),
        batch.param_dim(),
    )?;
    let grads = batch.log_grads();
    let d = batch.param_dim();
    let mut phi = vec![0.0; fitted.feature_dim()];
    let mut s = vec![0.0; d];
    let mut total = 0.0;
    for (j, x) in batch.data().iter().enumerate() {
        let mut inner = 0.0;
        for row in x.row_iter() {
            fitted.feature(row.iter().copied(), &mut phi);
            fitted.score_into(&phi, &mut s);
            for c in 0..d {
                inner += s[c] * s[c] + 2.0 * s[c] * grads[(j, c)];
            }
        }
        total += inner / batch.n() as f64;
    }
    Ok(total / batch.m() as f64)
}

/// `W^T phi(x)` for one observation.
pub fn evaluate_score(fitted: &LinearScoreModel, x: &[f64]) -> Result<DVector<f64>> {
    check_dim("evaluate_score: x", fitted.data_dim(), x.len())?;
    let mut phi = vec![0.0; fitted.feature_dim()];
    fitted.feature(x.iter().copied(), &mut phi);
    let mut out = DVector::zeros(fitted.param_dim());
    fitted.score_into(&phi, out.as_mut_slice());
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradDiagnostics {
    pub gram_condition_estimate: f64,
    pub used_fallback: bool,
    pub m: usize,
    pub n: usize,
    pub sigma: f64,
}

/// Estimated log-likelihood gradient at the proposal center.
#[derive(Clone, Debug)]
pub struct GradEstimate {
    pub gradient: DVector<f64>,
    /// `N x d`, one estimated score per observation.
    pub per_observation_scores: DMatrix<f64>,
    pub diagnostics: GradDiagnostics,
}

/// Scores every row of `observations` under `fitted`.
pub fn score_rows(fitted: &LinearScoreModel, observations: &DataMatrix) -> Result<DMatrix<f64>> {
    check_dim(
        "score_rows: data dim",
        fitted.data_dim(),
        observations.ncols(),
    )?;
    let d = fitted.param_dim();
    let mut out = DMatrix::zeros(observations.nrows(), d);
    let mut phi = vec![0.0; fitted.feature_dim()];
    let mut s = vec![0.0; d];
    for (i, row) in observations.row_iter().enumerate() {
        fitted.feature(row.iter().copied(), &mut phi);
        fitted.score_into(&phi, &mut s);
        for c in 0..d {
            out[(i, c)] = s[c];
        }
    }
    Ok(out)
}

/// Simulates a batch around `proposal.center()`, fits the score model and
/// sums its value over the observations.
pub fn estimate_gradient(
    model: &dyn SimulatorModel,
    observations: &DataMatrix,
    proposal: &ProposalSpec,
    m: usize,
    n: usize,
    options: &FitOptions,
    stream: Stream,
) -> Result<GradEstimate> {
    if observations.nrows() == 0 {
        return Err(FsmError::InvalidArgument("no observations".into()));
    }
    check_dim(
        "estimate_gradient: observations",
        model.data_dim(),
        observations.ncols(),
    )?;
    let batch = sample_batch(model, proposal, m, n, stream)?;
    let fitted = fit_linear_fsm(&batch, options)?;
    let per_observation_scores = score_rows(&fitted, observations)?;
    let gradient = per_observation_scores.row_sum().transpose();
    Ok(GradEstimate {
        gradient,
        per_observation_scores,
        diagnostics: GradDiagnostics {
            gram_condition_estimate: fitted.condition_estimate,
            used_fallback: fitted.used_fallback,
            m,
            n,
            sigma: proposal.sigma,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianMeanModel;

    fn pv(v: &[f64]) -> ParamVec {
        ParamVec::new(v.to_vec()).unwrap()
    }

    fn exact() -> FitOptions {
        FitOptions {
            ridge: Ridge::Absolute(0.0),
            affine: false,
            standardize: false,
        }
    }

    #[test]
    fn proposal_rejects_bad_sigma() {
        assert!(ProposalSpec::new(pv(&[0.0]), 0.0).is_err());
        assert!(ProposalSpec::new(pv(&[0.0]), -1.0).is_err());
        assert!(ProposalSpec::new(pv(&[0.0]), f64::NAN).is_err());
    }

    #[test]
    fn proposal_log_grad_examples() {
        let p = ProposalSpec::new(pv(&[0.3, -1.0]), 0.7).unwrap();
        let g = proposal_log_grad(&DVector::from_vec(vec![0.3, -1.0]), &p).unwrap();
        assert_eq!(g, DVector::zeros(2));

        let sigma = 0.5;
        let p = ProposalSpec::new(pv(&[0.0, 0.0]), sigma).unwrap();
        let g = proposal_log_grad(&DVector::from_vec(vec![sigma * sigma, 0.0]), &p).unwrap();
        assert_eq!(g, DVector::from_vec(vec![-1.0, 0.0]));

        let p = ProposalSpec::new(pv(&[1.0]), 0.1).unwrap();
        let g = proposal_log_grad(&DVector::from_vec(vec![1.2]), &p).unwrap();
        assert!((g[0] + 20.0).abs() < 1e-12);

        assert!(proposal_log_grad(&DVector::zeros(3), &p).is_err());
    }

    #[test]
    fn degenerate_proposal_collapses_to_center() {
        let model = GaussianMeanModel::isotropic(2);
        let p = ProposalSpec::new(pv(&[0.4, -0.2]), 1e-12).unwrap();
        let batch = sample_batch(&model, &p, 20, 2, Stream::new(1)).unwrap();
        for row in batch.thetas().row_iter() {
            assert!((row[0] - 0.4).abs() < 1e-10 && (row[1] + 0.2).abs() < 1e-10);
        }
    }

    #[test]
    fn proposal_moments() {
        let model = GaussianMeanModel::isotropic(2);
        let p = ProposalSpec::new(pv(&[0.0, 0.0]), 0.1).unwrap();
        let m = 100;
        let batch = sample_batch(&model, &p, m, 1, Stream::new(8)).unwrap();
        let t = batch.thetas();
        let cov = t.transpose() * t / m as f64;
        // var of a sample variance with m draws: 2 sigma^4 / m -> sd ~ 0.0014
        for i in 0..2 {
            assert!((cov[(i, i)] - 0.01).abs() < 4.0 * 0.01 * (2.0 / m as f64).sqrt());
        }
        assert!(cov[(0, 1)].abs() < 4.0 * 0.01 / (m as f64).sqrt());
    }

    #[test]
    fn sample_batch_is_deterministic() {
        let model = GaussianMeanModel::isotropic(2);
        let p = ProposalSpec::new(pv(&[1.0, 1.0]), 0.3).unwrap();
        let a = sample_batch(&model, &p, 7, 3, Stream::new(99)).unwrap();
        let b = sample_batch(&model, &p, 7, 3, Stream::new(99)).unwrap();
        assert_eq!(a.thetas(), b.thetas());
        assert_eq!(a.data(), b.data());
        assert!(sample_batch(&model, &p, 0, 3, Stream::new(0)).is_err());
    }

    #[test]
    fn zero_weights_give_zero_objective_and_score() {
        let model = GaussianMeanModel::isotropic(2);
        let p = ProposalSpec::new(pv(&[1.0, 1.0]), 0.3).unwrap();
        let batch = sample_batch(&model, &p, 5, 3, Stream::new(2)).unwrap();
        let w = LinearScoreModel::new(DMatrix::zeros(3, 2), 0.0, true).unwrap();
        assert_eq!(empirical_objective(&batch, &w).unwrap(), 0.0);
        assert_eq!(evaluate_score(&w, &[3.0, 4.0]).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn objective_without_proposal_offset_is_mean_square() {
        let p = ProposalSpec::new(pv(&[0.5]), 0.2).unwrap();
        let thetas = DMatrix::from_element(1, 1, 0.5);
        let data = vec![DMatrix::from_column_slice(2, 1, &[1.0, 3.0])];
        let batch = SimBatch::new(thetas, data, p).unwrap();
        let w = LinearScoreModel::new(DMatrix::from_element(1, 1, 2.0), 0.0, false).unwrap();
        // S = 2x -> squares 4 and 36
        assert_eq!(empirical_objective(&batch, &w).unwrap(), 20.0);
    }

    #[test]
    fn objective_hand_computed_small_instance() {
        // theta_t = 0, sigma = 1, theta = (0.5, -1), one sample each: x = 2, x = -1.
        // log-grads: -0.5, 1. W = 3 (linear): S = 6, -3.
        // draw 1: 36 + 2*6*(-0.5) = 30; draw 2: 9 + 2*(-3)*1 = 3; mean 16.5
        let p = ProposalSpec::new(pv(&[0.0]), 1.0).unwrap();
        let thetas = DMatrix::from_column_slice(2, 1, &[0.5, -1.0]);
        let data = vec![
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, -1.0),
        ];
        let batch = SimBatch::new(thetas, data, p).unwrap();
        let w = LinearScoreModel::new(DMatrix::from_element(1, 1, 3.0), 0.0, false).unwrap();
        assert!((empirical_objective(&batch, &w).unwrap() - 16.5).abs() < 1e-14);
    }

    #[test]
    fn zero_log_grads_give_zero_weights() {
        let model = GaussianMeanModel::isotropic(2);
        let p = ProposalSpec::new(pv(&[1.0, -1.0]), 0.5).unwrap();
        let thetas = DMatrix::from_fn(6, 2, |_, c| if c == 0 { 1.0 } else { -1.0 });
        let data = (0..6)
            .map(|j| simulate_rows(&model, &[1.0, -1.0], 4, j))
            .collect();
        let batch = SimBatch::new(thetas, data, p).unwrap();
        let fitted = fit_linear_fsm(&batch, &FitOptions::default()).unwrap();
        assert!(fitted.weights().amax() == 0.0);
    }

    fn simulate_rows(model: &GaussianMeanModel, theta: &[f64], n: usize, seed: u64) -> DataMatrix {
        crate::model::simulate(model, &pv(theta), n, Stream::new(seed)).unwrap()
    }

    #[test]
    fn one_by_one_normal_equation() {
        // theta_t = 0, sigma = 1, theta_1 = -3 -> log-grad 3; x = 2.
        // W = -(2 * 3) / 4 = -1.5
        let p = ProposalSpec::new(pv(&[0.0]), 1.0).unwrap();
        let batch = SimBatch::new(
            DMatrix::from_element(1, 1, -3.0),
            vec![DMatrix::from_element(1, 1, 2.0)],
            p,
        )
        .unwrap();
        let fitted = fit_linear_fsm(&batch, &exact()).unwrap();
        assert!((fitted.weights()[(0, 0)] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn singular_gram_without_ridge_is_an_error() {
        // every sample is zero: sum G_j = 0
        let p = ProposalSpec::new(pv(&[0.0]), 1.0).unwrap();
        let batch = SimBatch::new(
            DMatrix::from_column_slice(2, 1, &[0.3, -0.2]),
            vec![DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)],
            p,
        )
        .unwrap();
        match fit_linear_fsm(&batch, &exact()) {
            Err(FsmError::Singular { condition }) => assert!(condition.is_infinite()),
            other => panic!("expected singular error, got {other:?}"),
        }
        // a positive ridge makes it solvable
        let ridged = FitOptions {
            ridge: Ridge::Absolute(1e-3),
            ..exact()
        };
        assert!(fit_linear_fsm(&batch, &ridged).is_ok());
    }

    #[test]
    fn affine_model_represents_gaussian_score() {
        // S(x) = x - theta_t with theta_t = (1, 1)
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        let s = LinearScoreModel::new(w, 0.0, true).unwrap();
        assert_eq!(evaluate_score(&s, &[1.0, 1.0]).unwrap(), DVector::zeros(2));
        assert_eq!(
            evaluate_score(&s, &[3.0, 0.0]).unwrap(),
            DVector::from_vec(vec![2.0, -1.0])
        );
        assert!(evaluate_score(&s, &[1.0]).is_err());
    }

    #[test]
    fn evaluate_score_matches_matrix_vector_product() {
        let mut rng = Stream::new(4).rng();
        for _ in 0..20 {
            let w = DMatrix::from_fn(4, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let s = LinearScoreModel::new(w.clone(), 0.0, false).unwrap();
            let direct = w.transpose() * DVector::from_vec(x.clone());
            assert!((evaluate_score(&s, &x).unwrap() - direct).amax() < 1e-14);
        }
    }

    #[test]
    fn means_and_sums_give_the_same_minimiser() {
        // The fit works with sums; the objective averages. Scaling the
        // objective does not move its minimiser, so perturbing W must not
        // decrease the averaged objective.
        let model = GaussianMeanModel::isotropic(2);
        let p = ProposalSpec::new(pv(&[0.5, 0.2]), 0.4).unwrap();
        let batch = sample_batch(&model, &p, 40, 5, Stream::new(17)).unwrap();
        let fitted = fit_linear_fsm(&batch, &exact()).unwrap();
        let best = empirical_objective(&batch, &fitted).unwrap();
        let mut rng = Stream::new(18).rng();
        for _ in 0..1000 {
            let delta = DMatrix::from_fn(2, 2, |_, _| 0.05 * rng.sample::<f64, _>(StandardNormal));
            let other = LinearScoreModel::new(fitted.weights() + delta, 0.0, false).unwrap();
            assert!(empirical_objective(&batch, &other).unwrap() >= best);
        }
    }

    #[test]
    fn first_order_optimality_by_finite_differences() {
        let model = GaussianMeanModel::isotropic(2);
        let p = ProposalSpec::new(pv(&[0.5, 0.2]), 0.4).unwrap();
        let batch = sample_batch(&model, &p, 30, 4, Stream::new(21)).unwrap();
        let opts = FitOptions {
            ridge: Ridge::Absolute(0.0),
            ..FitOptions::default()
        };
        let fitted = fit_linear_fsm(&batch, &opts).unwrap();
        let h = 1e-5;
        let w0 = fitted.weights().clone();
        for idx in 0..w0.len() {
            let mut wp = w0.clone();
            let mut wm = w0.clone();
            wp[idx] += h;
            wm[idx] -= h;
            let jp = empirical_objective(&batch, &LinearScoreModel::new(wp, 0.0, true).unwrap())
                .unwrap();
            let jm = empirical_objective(&batch, &LinearScoreModel::new(wm, 0.0, true).unwrap())
                .unwrap();
            let g = (jp - jm) / (2.0 * h);
            assert!(g.abs() <= 1e-4, "entry {idx}: gradient {g}");
        }
    }

    #[test]
    fn permutation_invariance() {
        let model = GaussianMeanModel::isotropic(3);
        let p = ProposalSpec::new(pv(&[0.1, 0.2, 0.3]), 0.2).unwrap();
        let batch = sample_batch(&model, &p, 25, 3, Stream::new(5)).unwrap();
        let m = batch.m();
        let order: Vec<usize> = (0..m).rev().step_by(1).collect();
        let thetas = DMatrix::from_fn(m, 3, |r, c| batch.thetas()[(order[r], c)]);
        let data = order.iter().map(|&j| batch.data()[j].clone()).collect();
        let shuffled = SimBatch::new(thetas, data, p).unwrap();
        let a = fit_linear_fsm(&batch, &FitOptions::default()).unwrap();
        let b = fit_linear_fsm(&shuffled, &FitOptions::default()).unwrap();
        let scale = a.weights().amax().max(1.0);
        assert!((a.weights() - b.weights()).amax() / scale < 1e-10);
    }

    #[test]
    fn standardized_features_give_the_same_scores() {
        // rescaling features is a reparametrisation of W when the penalty is zero
        let model = GaussianMeanModel::diagonal(&[100.0, 0.01]).unwrap();
        let p = ProposalSpec::new(pv(&[3.0, -2.0]), 0.5).unwrap();
        let batch = sample_batch(&model, &p, 200, 2, Stream::new(31)).unwrap();
        let raw = fit_linear_fsm(
            &batch,
            &FitOptions {
                ridge: Ridge::Absolute(0.0),
                ..Default::default()
            },
        )
        .unwrap();
        let std = fit_linear_fsm(
            &batch,
            &FitOptions {
                ridge: Ridge::Absolute(0.0),
                standardize: true,
                ..Default::default()
            },
        )
        .unwrap();
        let x = [4.0, -2.1];
        let a = evaluate_score(&raw, &x).unwrap();
        let b = evaluate_score(&std, &x).unwrap();
        assert!((a - b).amax() < 1e-8);
        assert!(std.condition_estimate() < raw.condition_estimate());
    }

    #[test]
    fn gradient_is_sum_of_scores_and_doubles_with_duplicates() {
        let model = GaussianMeanModel::isotropic(2);
        let p = ProposalSpec::new(pv(&[0.0, 0.0]), 0.2).unwrap();
        let one = DMatrix::from_row_slice(1, 2, &[0.4, -0.3]);
        let two = DMatrix::from_row_slice(2, 2, &[0.4, -0.3, 0.4, -0.3]);
        let opts = FitOptions::default();
        let g1 = estimate_gradient(&model, &one, &p, 50, 2, &opts, Stream::new(3)).unwrap();
        let g2 = estimate_gradient(&model, &two, &p, 50, 2, &opts, Stream::new(3)).unwrap();
        assert_eq!(g2.gradient, &g1.gradient * 2.0);
        let col_sum = g2.per_observation_scores.row_sum().transpose();
        assert_eq!(g2.gradient, col_sum);
        assert_eq!(g2.diagnostics.m, 50);
        assert!(estimate_gradient(
            &model,
            &DMatrix::zeros(0, 2),
            &p,
            5,
            1,
            &opts,
            Stream::new(0)
        )
        .is_err());
    }
}
