//! Numerical identities the estimators must satisfy.
//!
//! The fitting routine is a parameter so a deliberately broken fit can be
//! shown to trip the checks.

use fsmle_core::fsm::{
    empirical_objective, fit_linear_fsm, normal_equation_residual, sample_batch, FitOptions,
    LinearScoreModel, ProposalSpec, SimBatch,
};
use fsmle_core::kdesp::{spsa_gradient_along, spsa_schedules, FnLogLikelihood, KdeSpConfig};
use fsmle_core::oracles::{
    bayes_optimal_score_gaussian, bias_scaling_probe, scalar_objectives, smoothed_grad_quadrature,
    smoothed_loglik_quadrature, GaussHermite, ScalarAffine, SmoothedGaussianOracle,
    QUADRATURE_NODES,
};
use fsmle_core::{GaussianMeanModel, ParamVec, Stream};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use super::bias::{assess, BOUND_SLACK};
use super::{streams, Ctx, Outcome, Status};
use crate::output::{num, write_json, CsvSink};

pub type FitFn = dyn Fn(&SimBatch, &FitOptions) -> fsmle_core::Result<LinearScoreModel> + Sync;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &'static str, residual: f64, tolerance: f64) -> Self {
        Self {
            name,
            residual,
            tolerance,
            passed: residual <= tolerance,
        }
    }
}

fn random_batch(rng: &mut impl Rng, stream: Stream) -> anyhow::Result<SimBatch> {
    let d = rng.random_range(1..=3);
    let variances: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..3.0)).collect();
    let model = GaussianMeanModel::diagonal(&variances)?;
    let center: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let proposal = ProposalSpec::new(ParamVec::new(center)?, rng.random_range(0.05..1.0))?;
    let m = rng.random_range(5..=30);
    let n = rng.random_range(1..=5);
    Ok(sample_batch(&model, &proposal, m, n, stream)?)
}

fn random_spd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

fn random_vec(rng: &mut impl Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

/// Runs every check with `cases` random instances where applicable.
pub fn run_checks(cases: usize, stream: Stream, fit: &FitFn) -> anyhow::Result<Vec<Check>> {
    let mut rng = stream.child(0).rng();
    let mut checks = Vec::new();
    let options = FitOptions::default();

    // normal equations and optimality of the fitted weights
    let mut worst_residual: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for i in 0..cases {
        let batch = random_batch(&mut rng, stream.child(1).child(i as u64))?;
        let fitted = fit(&batch, &options)?;
        worst_residual = worst_residual.max(normal_equation_residual(&batch, &fitted)?);
        let best = empirical_objective(&batch, &fitted)?;
        for _ in 0..10 {
            let w = fitted.weights();
            let scale = 1e-3 * w.amax().max(1.0);
            let nudged =
                w + DMatrix::from_fn(w.nrows(), w.ncols(), |_, _| rng.random_range(-scale..scale));
            let other = LinearScoreModel::new(nudged, fitted.ridge(), fitted.affine())?;
            worst_gap = worst_gap.max(best - empirical_objective(&batch, &other)?);
        }
    }
    checks.push(Check::at_most(
        "normal_equation_residual",
        worst_residual,
        1e-8,
    ));
    checks.push(Check::at_most(
        "fit_beats_perturbations",
        worst_gap.max(0.0),
        0.0,
    ));

    // posterior-mean score equals the smoothed-likelihood gradient
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let d = rng.random_range(1..=3);
        let cov = random_spd(&mut rng, d);
        let center = random_vec(&mut rng, d, 3.0);
        let x = random_vec(&mut rng, d, 3.0);
        let sigma = rng.random_range(0.0..2.0);
        let oracle = SmoothedGaussianOracle::new(cov.clone(), sigma, center.clone())?;
        let a = oracle.smoothed_grad_exact(x.as_slice())?;
        let b = bayes_optimal_score_gaussian(&cov, sigma, &center, x.as_slice())?;
        worst = worst.max((a - b).amax());
    }
    checks.push(Check::at_most(
        "posterior_mean_score_identity",
        worst,
        1e-12,
    ));

    // quadrature against the closed form, d = 1 and 2
    let rule = GaussHermite::new(QUADRATURE_NODES)?;
    let fine = GaussHermite::new(2 * QUADRATURE_NODES)?;
    let mut worst_quad: f64 = 0.0;
    let mut worst_refine: f64 = 0.0;
    for d in [1usize, 2] {
        for _ in 0..5 {
            let variances: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
            let model = GaussianMeanModel::diagonal(&variances)?;
            let center = random_vec(&mut rng, d, 1.0);
            let x = random_vec(&mut rng, d, 2.0);
            let sigma = rng.random_range(0.1..1.0);
            let oracle =
                SmoothedGaussianOracle::new(model.covariance().clone(), sigma, center.clone())?;
            let exact = oracle.smoothed_grad_exact(x.as_slice())?;
            let quad = smoothed_grad_quadrature(&model, &center, sigma, x.as_slice(), &rule)?;
            worst_quad = worst_quad.max((exact - quad).amax());
            let a = smoothed_loglik_quadrature(&model, &center, sigma, x.as_slice(), &rule)?;
            let b = smoothed_loglik_quadrature(&model, &center, sigma, x.as_slice(), &fine)?;
            worst_refine = worst_refine.max((a - b).abs());
        }
    }
    checks.push(Check::at_most(
        "quadrature_vs_exact_gradient",
        worst_quad,
        1e-4,
    ));
    checks.push(Check::at_most("quadrature_refinement", worst_refine, 1e-5));

    // the two objective forms differ by a constant
    let small = GaussHermite::new(16)?;
    let diffs: Vec<f64> = (0..10)
        .map(|_| {
            let s = ScalarAffine {
                slope: rng.random_range(-3.0..3.0),
                intercept: rng.random_range(-3.0..3.0),
            };
            let (a, b) = scalar_objectives(1.2, 0.4, 0.3, s, &small);
            a - b
        })
        .collect();
    let spread = diffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - diffs.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(Check::at_most("objective_forms_constant_gap", spread, 1e-6));

    // bias scaling
    let model = GaussianMeanModel::isotropic(2);
    let truth = ParamVec::from_element(2, 1.0)?;
    let rows = bias_scaling_probe(
        &model,
        &truth,
        &truth,
        &[0.0, 0.01, 0.1, 0.5, 1.0],
        10_000,
        stream.child(2),
    )?;
    let verdict = assess(&rows);
    checks.push(Check::at_most("bias_zero_at_zero_sigma", rows[0].bias, 0.0));
    checks.push(Check::at_most(
        "bias_strictly_increasing",
        f64::from(u8::from(!verdict.strictly_increasing)),
        0.0,
    ));
    let ratio = rows
        .iter()
        .filter(|r| r.sigma > 0.0)
        .map(|r| r.bias / r.bound)
        .fold(0.0, f64::max);
    checks.push(Check::at_most("bias_within_bound", ratio, BOUND_SLACK));

    // SPSA schedules and exactness
    let mut cfg = KdeSpConfig::new(0.7, 0.3, 100, 10)?;
    cfg.gamma = 1.0 / 6.0;
    let (alpha1, _) = spsa_schedules(&cfg, 1)?;
    let (_, c64) = spsa_schedules(&cfg, 64)?;
    let schedule_err = (alpha1 - 0.7 / (1.0 + cfg.big_a))
        .abs()
        .max((c64 - 0.15).abs());
    checks.push(Check::at_most("spsa_schedules", schedule_err, 1e-15));
    let mut worst_lin: f64 = 0.0;
    let mut worst_quad0: f64 = 0.0;
    for _ in 0..cases.min(50) {
        let d = rng.random_range(1..=6);
        let b = random_vec(&mut rng, d, 2.0);
        let theta = random_vec(&mut rng, d, 2.0);
        let delta = DVector::from_fn(d, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let bb = b.clone();
        let linear = FnLogLikelihood::new(d, move |t: &DVector<f64>| bb.dot(t) + 4.0);
        let g = spsa_gradient_along(&linear, &theta, &delta, 0.1, Stream::new(0), Stream::new(0))?;
        // one direction returns delta (b . delta) exactly
        let expected = &delta * b.dot(&delta);
        worst_lin = worst_lin.max((g - expected).amax());
        // centred at the origin so the two probes are exact negations
        let a = random_spd(&mut rng, d);
        let quad = FnLogLikelihood::new(d, move |t: &DVector<f64>| -0.5 * t.dot(&(&a * t)));
        let g = spsa_gradient_along(
            &quad,
            &DVector::zeros(d),
            &delta,
            0.3,
            Stream::new(0),
            Stream::new(0),
        )?;
        worst_quad0 = worst_quad0.max(g.amax());
    }
    checks.push(Check::at_most("spsa_linear_exact", worst_lin, 1e-12));
    checks.push(Check::at_most(
        "spsa_symmetric_quadratic_zero",
        worst_quad0,
        0.0,
    ));
    Ok(checks)
}

pub fn run_with(ctx: &Ctx, fit: &FitFn) -> anyhow::Result<Outcome> {
    let checks = run_checks(
        ctx.config.experiments.verify.cases,
        ctx.stream(streams::VERIFY),
        fit,
    )?;
    let mut sink = CsvSink::create(
        &ctx.out,
        "verify.csv",
        &ctx.hash,
        &["check", "residual", "tolerance", "passed"],
    )?;
    for c in &checks {
        sink.row([
            c.name.to_string(),
            num(c.residual),
            num(c.tolerance),
            c.passed.to_string(),
        ])?;
    }
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name)
        .collect();
    let files = vec![
        sink.finish()?,
        write_json(
            &ctx.out,
            "summary_verify.json",
            &serde_json::json!({
                "config_hash": ctx.hash,
                "checks": checks,
                "failed": failed,
            }),
        )?,
    ];
    Ok(Outcome {
        files,
        status: if failed.is_empty() {
            Status::Ok
        } else {
            Status::VerificationFailed
        },
        message: if failed.is_empty() {
            format!("all {} checks passed", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    })
}

pub fn run(ctx: &Ctx) -> anyhow::Result<Outcome> {
    run_with(ctx, &fit_linear_fsm)
}
