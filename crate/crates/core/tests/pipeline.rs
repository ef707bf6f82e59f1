//! End-to-end use of the public API: simulate, estimate, and build intervals.

use fsmle_core::fsm::{estimate_gradient, FitOptions, ProposalSpec};
use fsmle_core::oracles::SmoothedGaussianOracle;
use fsmle_core::{
    confidence_interval, estimate_fisher_info, run_mle, simulate, FsmSettings, GaussianMeanModel,
    GradientMethod, KdeSpConfig, OptConfig, ParamVec, ScoreSource, SimulatorModel, Stream,
    UpdateRule,
};
use nalgebra::DVector;

fn fsm_config(d: usize, iterations: usize) -> OptConfig {
    OptConfig {
        method: GradientMethod::Fsm(FsmSettings::new(0.1, 1000, 1)),
        rule: UpdateRule::adam(),
        step_size: 0.1,
        iterations,
        avg_window: iterations / 2,
        theta0: ParamVec::from_element(d, 0.0).unwrap(),
    }
}

#[test]
fn gradient_tracks_the_smoothed_target() {
    let model = GaussianMeanModel::diagonal(&[1.0, 2.0]).unwrap();
    let truth = ParamVec::new(vec![0.5, -0.5]).unwrap();
    let obs = simulate(&model, &truth, 10, Stream::new(1)).unwrap();
    let theta_t = ParamVec::new(vec![1.5, 0.5]).unwrap();
    let proposal = ProposalSpec::new(theta_t.clone(), 0.1).unwrap();
    let est = estimate_gradient(
        &model,
        &obs,
        &proposal,
        200_000,
        1,
        &FitOptions::default(),
        Stream::new(2),
    )
    .unwrap();
    let oracle = SmoothedGaussianOracle::for_model(&model, 0.1, &theta_t).unwrap();
    let mut target = DVector::zeros(2);
    for row in obs.row_iter() {
        target += oracle
            .smoothed_grad_exact(row.clone_owned().as_slice())
            .unwrap();
    }
    let rel = (&est.gradient - &target).norm() / target.norm();
    assert!(
        rel < 0.1,
        "relative error {rel}, estimate {}, target {target}",
        est.gradient
    );
    assert_eq!(est.per_observation_scores.nrows(), 10);
}

#[test]
fn fsm_mle_lands_near_the_sample_mean() {
    let model = GaussianMeanModel::isotropic(3);
    let truth = ParamVec::from_element(3, 1.0).unwrap();
    let obs = simulate(&model, &truth, 100, Stream::new(3)).unwrap();
    let trace = run_mle(&model, &obs, &fsm_config(3, 100), Stream::new(4)).unwrap();
    assert!(!trace.diverged);
    assert_eq!(trace.iterates.len(), 101);
    let xbar = model.exact_mle(&obs).unwrap();
    let err = (trace.averaged.as_vector() - xbar.as_vector()).norm();
    assert!(err < 0.3, "{err}");
}

#[test]
fn kdesp_mle_moves_toward_the_sample_mean() {
    let model = GaussianMeanModel::isotropic(2);
    let truth = ParamVec::from_element(2, 1.0).unwrap();
    let obs = simulate(&model, &truth, 50, Stream::new(5)).unwrap();
    let cfg = OptConfig {
        method: GradientMethod::KdeSp(KdeSpConfig::new(0.01, 0.1, 200, 200).unwrap()),
        ..fsm_config(2, 200)
    };
    let trace = run_mle(&model, &obs, &cfg, Stream::new(6)).unwrap();
    let xbar = model.exact_mle(&obs).unwrap();
    let start = xbar.as_vector().norm();
    let end = (trace.averaged.as_vector() - xbar.as_vector()).norm();
    assert!(end < 0.5 * start, "start {start}, end {end}");
}

#[test]
fn identical_streams_give_identical_runs() {
    let model = GaussianMeanModel::isotropic(2);
    let obs = simulate(
        &model,
        &ParamVec::from_element(2, 1.0).unwrap(),
        20,
        Stream::new(7),
    )
    .unwrap();
    let a = run_mle(&model, &obs, &fsm_config(2, 30), Stream::new(8)).unwrap();
    let b = run_mle(&model, &obs, &fsm_config(2, 30), Stream::new(8)).unwrap();
    assert_eq!(a.iterates, b.iterates);
    assert_eq!(a.averaged, b.averaged);
    let c = run_mle(&model, &obs, &fsm_config(2, 30), Stream::new(9)).unwrap();
    assert_ne!(a.iterates, c.iterates);
}

#[test]
fn closed_form_interval_has_the_textbook_width() {
    let model = GaussianMeanModel::diagonal(&[4.0, 1.0]).unwrap();
    let theta = ParamVec::new(vec![0.0, 0.0]).unwrap();
    let info = estimate_fisher_info(
        &model,
        &theta,
        100_000,
        &ScoreSource::ClosedForm,
        Stream::new(10),
    )
    .unwrap();
    assert!((info.matrix[(0, 0)] - 0.25).abs() < 0.01);
    assert!((info.matrix[(1, 1)] - 1.0).abs() < 0.03);
    let ci = confidence_interval(&theta, &info, 100, 0.95).unwrap();
    let hw = ci.half_width();
    // sd 2 and 1 over sqrt(100)
    assert!((hw[0] - 1.96 * 0.2).abs() < 0.01, "{hw}");
    assert!((hw[1] - 1.96 * 0.1).abs() < 0.005, "{hw}");
    assert_eq!(ci.contains(&DVector::zeros(2)), vec![true, true]);
    assert_eq!(model.param_dim(), 2);
}
