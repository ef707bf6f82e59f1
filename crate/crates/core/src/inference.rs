//! Fisher information, Wald intervals and coverage experiments.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{check_dim, FsmError, Result};
use crate::fsm::{fit_linear_fsm, sample_batch, score_rows, ProposalSpec};
use crate::linalg::{solve_spd, symmetrize};
use crate::model::{simulate, DataMatrix, ParamVec, SimulatorModel};
use crate::normal::two_sided_z;
use crate::optimize::{run_mle, FsmSettings, OptConfig};
use crate::rng::Stream;

/// Smallest-to-largest eigenvalue ratio under which the estimate is flagged.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScoreSource {
    ClosedForm,
    Fsm(FsmSettings),
}

#[derive(Clone, Debug)]
pub struct FisherInfoEstimate {
    /// Per-observation information, `d x d`.
    pub matrix: DMatrix<f64>,
    pub n_sim: usize,
    pub theta_hat: Option<ParamVec>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Set when the matrix is not numerically positive definite.
    pub rank_deficient: bool,
}

impl FisherInfoEstimate {
    pub fn from_scores(scores: &DMatrix<f64>) -> Result<Self> {
        let n_sim = scores.nrows();
        if n_sim == 0 {
            return Err(FsmError::InvalidArgument("no scores".into()));
        }
        if !scores.iter().all(|v| v.is_finite()) {
            return Err(FsmError::NonFinite("scores"));
        }
        let matrix = symmetrize(&(scores.transpose() * scores / n_sim as f64));
        let eig = SymmetricEigen::new(matrix.clone());
        let min_eigenvalue = eig.eigenvalues.min();
        let max_eigenvalue = eig.eigenvalues.max();
        let rank_deficient =
            !(min_eigenvalue > RANK_TOLERANCE * max_eigenvalue.max(f64::MIN_POSITIVE));
        if rank_deficient {
            log::warn!("Fisher information estimate is rank deficient (min eigenvalue {min_eigenvalue:.3e})");
        }
        Ok(Self {
            matrix,
            n_sim,
            theta_hat: None,
            min_eigenvalue,
            max_eigenvalue,
            rank_deficient,
        })
    }
}

/// Mean outer product of scores of `n_sim` draws from `p(. | theta_hat)`.
pub fn estimate_fisher_info(
    model: &dyn SimulatorModel,
    theta_hat: &ParamVec,
    n_sim: usize,
    source: &ScoreSource,
    stream: Stream,
) -> Result<FisherInfoEstimate> {
    check_dim("fisher info: theta", model.param_dim(), theta_hat.len())?;
    if n_sim == 0 {
        return Err(FsmError::InvalidArgument("n_sim must be >= 1".into()));
    }
    let xs = simulate(model, theta_hat, n_sim, stream.child(0))?;
    let scores = match source {
        ScoreSource::ClosedForm => {
            let d = model.param_dim();
            let mut scores = DMatrix::zeros(n_sim, d);
            let mut x = vec![0.0; xs.ncols()];
            for i in 0..n_sim {
                for (c, v) in x.iter_mut().enumerate() {
                    *v = xs[(i, c)];
                }
                let s = model.closed_form_score(theta_hat.as_vector(), &x)?;
                scores.row_mut(i).copy_from(&s.transpose());
            }
            scores
        }
        ScoreSource::Fsm(settings) => {
            let proposal = ProposalSpec::new(theta_hat.clone(), settings.sigma)?;
            let batch = sample_batch(model, &proposal, settings.m, settings.n, stream.child(1))?;
            let fitted = fit_linear_fsm(&batch, &settings.fit)?;
            score_rows(&fitted, &xs)?
        }
    };
    let mut est = FisherInfoEstimate::from_scores(&scores)?;
    est.theta_hat = Some(theta_hat.clone());
    Ok(est)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceInterval {
    pub center: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub level: f64,
}

impl ConfidenceInterval {
    pub fn half_width(&self) -> DVector<f64> {
        (&self.upper - &self.lower) / 2.0
    }

    pub fn contains(&self, theta: &DVector<f64>) -> Vec<bool> {
        theta
            .iter()
            .enumerate()
            .map(|(i, v)| self.lower[i] <= *v && *v <= self.upper[i])
            .collect()
    }
}

/// Wald interval `theta_bar +- z sqrt([I^-1]_ii / n_obs)`.
pub fn confidence_interval(
    theta_bar: &ParamVec,
    info: &FisherInfoEstimate,
    n_obs: usize,
    level: f64,
) -> Result<ConfidenceInterval> {
    let d = theta_bar.len();
    check_dim("confidence interval: information", d, info.matrix.nrows())?;
    if n_obs == 0 {
        return Err(FsmError::InvalidArgument("n_obs must be >= 1".into()));
    }
    let z = two_sided_z(level)?;
    if info.rank_deficient {
        return Err(FsmError::Singular {
            condition: info.max_eigenvalue / info.min_eigenvalue.max(0.0),
        });
    }
    let inverse = solve_spd(&info.matrix, &DMatrix::identity(d, d))?.solution;
    let mut lower = DVector::zeros(d);
    let mut upper = DVector::zeros(d);
    for i in 0..d {
        let var = inverse[(i, i)];
        if !(var > 0.0 && var.is_finite()) {
            return Err(FsmError::Degenerate(format!(
                "non-positive variance {var} for coordinate {i}"
            )));
        }
        let half = z * (var / n_obs as f64).sqrt();
        lower[i] = theta_bar[i] - half;
        upper[i] = theta_bar[i] + half;
    }
    Ok(ConfidenceInterval {
        center: theta_bar.as_vector().clone(),
        lower,
        upper,
        level,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageConfig {
    pub n_obs: usize,
    pub runs: usize,
    pub opt: OptConfig,
    pub fim_samples: usize,
    pub fim_source: ScoreSource,
    pub level: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageRun {
    pub run: usize,
    pub estimate: Option<DVector<f64>>,
    pub interval: Option<ConfidenceInterval>,
    pub contained: Vec<bool>,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    pub per_coordinate: Vec<f64>,
    pub averaged: f64,
    pub completed: usize,
    pub diverged: usize,
    pub runs: Vec<CoverageRun>,
}

fn coverage_run(
    model: &dyn SimulatorModel,
    truth: &ParamVec,
    cfg: &CoverageConfig,
    run: usize,
    stream: Stream,
) -> Result<CoverageRun> {
    let obs: DataMatrix = simulate(model, truth, cfg.n_obs, stream.child(0))?;
    let trace = run_mle(model, &obs, &cfg.opt, stream.child(1))?;
    if trace.diverged {
        return Ok(CoverageRun {
            run,
            estimate: None,
            interval: None,
            contained: Vec::new(),
            diverged: true,
        });
    }
    let info = estimate_fisher_info(
        model,
        &trace.averaged,
        cfg.fim_samples,
        &cfg.fim_source,
        stream.child(2),
    )?;
    let interval = confidence_interval(&trace.averaged, &info, cfg.n_obs, cfg.level)?;
    Ok(CoverageRun {
        run,
        estimate: Some(trace.averaged.as_vector().clone()),
        contained: interval.contains(truth.as_vector()),
        interval: Some(interval),
        diverged: false,
    })
}

/// Repeats estimate-then-interval on fresh data and counts how often each
/// coordinate of `truth` is covered. Diverged runs are excluded.
pub fn coverage_experiment(
    model: &dyn SimulatorModel,
    truth: &ParamVec,
    cfg: &CoverageConfig,
    stream: Stream,
) -> Result<CoverageReport> {
    check_dim("coverage: truth", model.param_dim(), truth.len())?;
    if cfg.runs == 0 || cfg.n_obs == 0 {
        return Err(FsmError::InvalidArgument(
            "runs and n_obs must be >= 1".into(),
        ));
    }
    two_sided_z(cfg.level)?;
    let runs = (0..cfg.runs)
        .into_par_iter()
        .map(|r| coverage_run(model, truth, cfg, r, stream.child(r as u64)))
        .collect::<Result<Vec<_>>>()?;
    let done: Vec<&CoverageRun> = runs.iter().filter(|r| !r.diverged).collect();
    if done.is_empty() {
        return Err(FsmError::NoResult("every coverage run diverged".into()));
    }
    let d = truth.len();
    let per_coordinate: Vec<f64> = (0..d)
        .map(|i| done.iter().filter(|r| r.contained[i]).count() as f64 / done.len() as f64)
        .collect();
    let averaged = per_coordinate.iter().sum::<f64>() / d as f64;
    Ok(CoverageReport {
        per_coordinate,
        averaged,
        completed: done.len(),
        diverged: runs.len() - done.len(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianMeanModel;
    use crate::optimize::{GradientMethod, UpdateRule};

    fn pv(v: &[f64]) -> ParamVec {
        ParamVec::new(v.to_vec()).unwrap()
    }

    #[test]
    fn closed_form_information_approaches_precision() {
        let model = GaussianMeanModel::diagonal(&[1.0, 4.0]).unwrap();
        let est = estimate_fisher_info(
            &model,
            &pv(&[0.0, 0.0]),
            20000,
            &ScoreSource::ClosedForm,
            Stream::new(3),
        )
        .unwrap();
        assert!((est.matrix[(0, 0)] - 1.0).abs() < 0.05);
        assert!((est.matrix[(1, 1)] - 0.25).abs() < 0.0125);
        assert!(est.matrix[(0, 1)].abs() < 0.03);
        assert!(!est.rank_deficient);
        assert_eq!(est.matrix, est.matrix.transpose());
    }

    #[test]
    fn single_sample_information_is_rank_one() {
        let model = GaussianMeanModel::isotropic(2);
        let est = estimate_fisher_info(
            &model,
            &pv(&[0.0, 0.0]),
            1,
            &ScoreSource::ClosedForm,
            Stream::new(1),
        )
        .unwrap();
        assert!(est.rank_deficient);
        assert!(est.min_eigenvalue >= -1e-12);
    }

    #[test]
    fn fsm_information_close_to_closed_form() {
        let model = GaussianMeanModel::isotropic(2);
        let theta = pv(&[0.5, -0.5]);
        let exact = estimate_fisher_info(
            &model,
            &theta,
            10000,
            &ScoreSource::ClosedForm,
            Stream::new(7),
        )
        .unwrap();
        let source = ScoreSource::Fsm(FsmSettings::new(0.1, 400_000, 1));
        let fsm = estimate_fisher_info(&model, &theta, 10000, &source, Stream::new(7)).unwrap();
        let rel = (&fsm.matrix - &exact.matrix).norm() / exact.matrix.norm();
        assert!(rel < 0.1, "relative Frobenius error {rel}");
    }

    #[test]
    fn identity_information_interval_width() {
        let info = FisherInfoEstimate::from_scores(&DMatrix::identity(3, 3)).unwrap();
        // mean outer product of the rows is I/3
        let info = FisherInfoEstimate {
            matrix: &info.matrix * 3.0,
            ..info
        };
        let ci = confidence_interval(&pv(&[1.0, 2.0, 3.0]), &info, 100, 0.95).unwrap();
        let half = ci.half_width();
        for i in 0..3 {
            assert!((half[i] - 1.959964 * 0.1).abs() < 1e-6);
        }
        assert_eq!(
            ci.contains(&DVector::from_vec(vec![1.0, 2.0, 3.5])),
            vec![true, true, false]
        );
    }

    #[test]
    fn interval_scaling() {
        let unit =
            FisherInfoEstimate::from_scores(&(DMatrix::identity(2, 2) * 2f64.sqrt())).unwrap();
        let ci95 = confidence_interval(&pv(&[0.0, 0.0]), &unit, 100, 0.95).unwrap();
        let ci50 = confidence_interval(&pv(&[0.0, 0.0]), &unit, 100, 0.5).unwrap();
        assert!((ci50.half_width()[0] - 0.6744897501960817 * 0.1).abs() < 1e-9);
        // halving the information doubles the inverse diagonal
        let half = FisherInfoEstimate::from_scores(&DMatrix::identity(2, 2)).unwrap();
        let wide = confidence_interval(&pv(&[0.0, 0.0]), &half, 100, 0.95).unwrap();
        assert!((wide.half_width()[1] / ci95.half_width()[1] - 2f64.sqrt()).abs() < 1e-12);
        let mut prev = 0.0;
        for level in [0.1, 0.5, 0.8, 0.95, 0.999] {
            let w = confidence_interval(&pv(&[0.0, 0.0]), &unit, 100, level)
                .unwrap()
                .half_width()[0];
            assert!(w > prev);
            prev = w;
        }
    }

    #[test]
    fn rank_deficient_information_is_rejected() {
        let scores = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let info = FisherInfoEstimate::from_scores(&scores).unwrap();
        assert!(matches!(
            confidence_interval(&pv(&[0.0, 0.0]), &info, 10, 0.95),
            Err(FsmError::Singular { .. })
        ));
    }

    #[test]
    fn interval_rejects_bad_level() {
        let info = FisherInfoEstimate::from_scores(&DMatrix::identity(1, 1)).unwrap();
        assert!(confidence_interval(&pv(&[0.0]), &info, 10, 1.0).is_err());
        assert!(confidence_interval(&pv(&[0.0]), &info, 10, 0.0).is_err());
    }

    #[test]
    fn small_coverage_experiment_runs() {
        let model = GaussianMeanModel::isotropic(1);
        let cfg = CoverageConfig {
            n_obs: 50,
            runs: 8,
            opt: OptConfig {
                method: GradientMethod::Fsm(FsmSettings::new(0.1, 300, 1)),
                rule: UpdateRule::adam(),
                step_size: 0.1,
                iterations: 60,
                avg_window: 30,
                theta0: pv(&[0.0]),
            },
            fim_samples: 2000,
            fim_source: ScoreSource::ClosedForm,
            level: 0.95,
        };
        let a = coverage_experiment(&model, &pv(&[1.0]), &cfg, Stream::new(11)).unwrap();
        let b = coverage_experiment(&model, &pv(&[1.0]), &cfg, Stream::new(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.completed + a.diverged, 8);
        assert!((0.0..=1.0).contains(&a.averaged));
    }
}
