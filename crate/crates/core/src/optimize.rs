//! Stochastic-gradient likelihood ascent driven by FSM or KDE-SP gradients.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{check_dim, FsmError, Result};
use crate::fsm::{estimate_gradient, FitOptions, ProposalSpec};
use crate::kdesp::{spsa_gradient, spsa_schedules, KdeLogLikelihood, KdeSpConfig};
use crate::model::{simulate, DataMatrix, ParamVec, SimulatorModel};
use crate::rng::Stream;

/// Iterates beyond this norm are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateRule {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
    RmsProp { decay: f64, eps: f64 },
}

impl UpdateRule {
    pub fn adam() -> Self {
        UpdateRule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop() -> Self {
        UpdateRule::RmsProp {
            decay: 0.9,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for gradient *ascent*.
#[derive(Clone, Debug)]
pub struct Ascent {
    rule: UpdateRule,
    first: DVector<f64>,
    second: DVector<f64>,
    steps: i32,
}

impl Ascent {
    pub fn new(rule: UpdateRule, dim: usize) -> Self {
        Self {
            rule,
            first: DVector::zeros(dim),
            second: DVector::zeros(dim),
            steps: 0,
        }
    }

    pub fn step(&mut self, theta: &mut DVector<f64>, grad: &DVector<f64>, eta: f64) {
        self.steps += 1;
        match self.rule {
            UpdateRule::Sgd => theta.axpy(eta, grad, 1.0),
            UpdateRule::Adam { beta1, beta2, eps } => {
                self.first = &self.first * beta1 + grad * (1.0 - beta1);
                self.second = &self.second * beta2 + grad.component_mul(grad) * (1.0 - beta2);
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                for i in 0..theta.len() {
                    let m_hat = self.first[i] / c1;
                    let v_hat = self.second[i] / c2;
                    theta[i] += eta * m_hat / (v_hat.sqrt() + eps);
                }
            }
            UpdateRule::RmsProp { decay, eps } => {
                self.second = &self.second * decay + grad.component_mul(grad) * (1.0 - decay);
                for i in 0..theta.len() {
                    theta[i] += eta * grad[i] / (self.second[i].sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FsmSettings {
    pub sigma: f64,
    pub m: usize,
    pub n: usize,
    pub fit: FitOptions,
}

impl FsmSettings {
    pub fn new(sigma: f64, m: usize, n: usize) -> Self {
        Self {
            sigma,
            m,
            n,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradientMethod {
    Fsm(FsmSettings),
    /// KDE-SP ignores the update rule and step size: it moves by `alpha_t`.
    KdeSp(KdeSpConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptConfig {
    pub method: GradientMethod,
    pub rule: UpdateRule,
    pub step_size: f64,
    pub iterations: usize,
    pub avg_window: usize,
    pub theta0: ParamVec,
}

impl OptConfig {
    pub fn validate(&self, param_dim: usize) -> Result<()> {
        check_dim("OptConfig: theta0", param_dim, self.theta0.len())?;
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(FsmError::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.avg_window == 0 {
            return Err(FsmError::InvalidArgument("avg_window must be >= 1".into()));
        }
        match &self.method {
            GradientMethod::Fsm(s) => {
                if !(s.sigma > 0.0 && s.sigma.is_finite()) {
                    return Err(FsmError::InvalidArgument(format!(
                        "sigma must be positive, got {}",
                        s.sigma
                    )));
                }
                if s.m == 0 || s.n == 0 {
                    return Err(FsmError::InvalidArgument("FSM needs m, n >= 1".into()));
                }
            }
            GradientMethod::KdeSp(k) => k.validate()?,
        }
        Ok(())
    }
}

/// Record of one optimization run.
#[derive(Clone, Debug)]
pub struct OptTrace {
    /// `theta_0, ..., theta_T` (fewer when the run diverged).
    pub iterates: Vec<DVector<f64>>,
    pub gradients: Vec<DVector<f64>>,
    pub averaged: ParamVec,
    /// Stream key used at each iteration.
    pub stream_keys: Vec<u64>,
    pub wall_ms: Vec<f64>,
    pub diverged: bool,
}

impl OptTrace {
    pub fn final_iterate(&self) -> &DVector<f64> {
        self.iterates.last().expect("trace holds theta_0")
    }
}

/// Mean of the last `window` iterates.
pub fn polyak_average(iterates: &[DVector<f64>], window: usize) -> Result<ParamVec> {
    if window == 0 || iterates.is_empty() {
        return Err(FsmError::InvalidArgument(
            "averaging window is empty".into(),
        ));
    }
    if window > iterates.len() {
        return Err(FsmError::InvalidArgument(format!(
            "window {window} exceeds {} iterates",
            iterates.len()
        )));
    }
    let tail = &iterates[iterates.len() - window..];
    let mut sum = DVector::zeros(tail[0].len());
    for t in tail {
        sum += t;
    }
    ParamVec::from_vector(sum / window as f64)
}

/// Tail average over `theta_1..theta_T`, falling back to `theta_0` when no
/// update was made.
fn trace_average(iterates: &[DVector<f64>], window: usize) -> Result<ParamVec> {
    if iterates.len() <= 1 {
        return ParamVec::from_vector(iterates[0].clone());
    }
    let updates = &iterates[1..];
    polyak_average(updates, window.min(updates.len()))
}

/// Runs `iterations` ascent steps with gradients from `gradient`.
///
/// `gradient(theta_t, t, stream)` is called with `stream.child(t)`. When
/// `kdesp` is set the iterate moves by the SPSA gain instead of `rule`.
#[allow(clippy::too_many_arguments)]
pub fn run_with_gradient<G>(
    theta0: &ParamVec,
    rule: UpdateRule,
    step_size: f64,
    iterations: usize,
    avg_window: usize,
    kdesp: Option<&KdeSpConfig>,
    stream: Stream,
    mut gradient: G,
) -> Result<OptTrace>
where
    G: FnMut(&DVector<f64>, usize, Stream) -> Result<DVector<f64>>,
{
    let d = theta0.len();
    let mut theta = theta0.as_vector().clone();
    let mut ascent = Ascent::new(rule, d);
    let mut trace = OptTrace {
        iterates: vec![theta.clone()],
        gradients: Vec::with_capacity(iterations),
        averaged: theta0.clone(),
        stream_keys: Vec::with_capacity(iterations),
        wall_ms: Vec::with_capacity(iterations),
        diverged: false,
    };
    for t in 0..iterations {
        let started = Instant::now();
        let s = stream.child(t as u64);
        let g = gradient(&theta, t, s)?;
        check_dim("gradient", d, g.len())?;
        let mut next = theta.clone();
        match kdesp {
            Some(cfg) => {
                let (gain, _) = spsa_schedules(cfg, t + 1)?;
                next.axpy(gain, &g, 1.0);
            }
            None => ascent.step(&mut next, &g, step_size),
        }
        trace.stream_keys.push(s.key());
        trace.wall_ms.push(started.elapsed().as_secs_f64() * 1e3);
        if !next.iter().all(|v| v.is_finite()) || next.norm() > DIVERGENCE_NORM {
            log::warn!("optimization diverged at iteration {t}");
            trace.gradients.push(g);
            trace.diverged = true;
            break;
        }
        trace.gradients.push(g);
        trace.iterates.push(next.clone());
        theta = next;
    }
    trace.averaged = trace_average(&trace.iterates, avg_window)?;
    Ok(trace)
}

/// FSM-MLE (or KDE-SP) maximum likelihood run on `observations`.
pub fn run_mle(
    model: &dyn SimulatorModel,
    observations: &DataMatrix,
    cfg: &OptConfig,
    stream: Stream,
) -> Result<OptTrace> {
    cfg.validate(model.param_dim())?;
    if observations.nrows() == 0 {
        return Err(FsmError::InvalidArgument("no observations".into()));
    }
    check_dim(
        "run_mle: observations",
        model.data_dim(),
        observations.ncols(),
    )?;
    match &cfg.method {
        GradientMethod::Fsm(s) => run_with_gradient(
            &cfg.theta0,
            cfg.rule,
            cfg.step_size,
            cfg.iterations,
            cfg.avg_window,
            None,
            stream,
            |theta, _, st| {
                let proposal = ProposalSpec::new(ParamVec::from_vector(theta.clone())?, s.sigma)?;
                Ok(
                    estimate_gradient(model, observations, &proposal, s.m, s.n, &s.fit, st)?
                        .gradient,
                )
            },
        ),
        GradientMethod::KdeSp(k) => {
            let surrogate = KdeLogLikelihood {
                model,
                observations,
                n_sim: k.n_sim,
                bandwidth: k.bandwidth,
            };
            run_with_gradient(
                &cfg.theta0,
                cfg.rule,
                cfg.step_size,
                cfg.iterations,
                cfg.avg_window,
                Some(k),
                stream,
                |theta, t, st| spsa_gradient(&surrogate, theta, k, t + 1, st),
            )
        }
    }
}

/// One hyperparameter tuple of a tuning grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Hyper {
    Fsm { sigma: f64, eta: f64 },
    KdeSp { a: f64, c: f64 },
}

impl Hyper {
    pub fn apply(&self, base: &OptConfig) -> Result<OptConfig> {
        let mut cfg = base.clone();
        match (self, &mut cfg.method) {
            (Hyper::Fsm { sigma, eta }, GradientMethod::Fsm(s)) => {
                s.sigma = *sigma;
                cfg.step_size = *eta;
            }
            (Hyper::KdeSp { a, c }, GradientMethod::KdeSp(k)) => {
                k.a = *a;
                k.c = *c;
            }
            _ => {
                return Err(FsmError::InvalidArgument(format!(
                    "hyperparameters {self:?} do not match the configured method"
                )))
            }
        }
        Ok(cfg)
    }
}

/// `{1e-3, 1e-2, 1e-1} x {1e-2, 1e-1, 1}` over `(sigma, eta)`.
pub fn fsm_grid() -> Vec<Hyper> {
    let mut grid = Vec::new();
    for sigma in [1e-3, 1e-2, 1e-1] {
        for eta in [1e-2, 1e-1, 1.0] {
            grid.push(Hyper::Fsm { sigma, eta });
        }
    }
    grid
}

/// `{1e-2, ..., 1e3}^2` over `(a, c)`.
pub fn kdesp_grid() -> Vec<Hyper> {
    let values = [1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];
    let mut grid = Vec::new();
    for a in values {
        for c in values {
            grid.push(Hyper::KdeSp { a, c });
        }
    }
    grid
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TuneSettings {
    /// Defaults to `max(20, T / 5)`.
    pub trial_iterations: Option<usize>,
    /// Samples simulated at each trial estimate to compute the prediction error.
    pub prediction_samples: usize,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self {
            trial_iterations: None,
            prediction_samples: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrialStatus {
    Ok,
    Diverged,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneRow {
    pub hyper: Hyper,
    pub score: Option<f64>,
    pub status: TrialStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub best_index: usize,
    pub best: Hyper,
    pub rows: Vec<TuneRow>,
}

fn prediction_error(
    model: &dyn SimulatorModel,
    observations: &DataMatrix,
    estimate: &ParamVec,
    samples: usize,
    stream: Stream,
) -> Result<f64> {
    let sims = simulate(model, estimate, samples, stream)?;
    let sim_mean = sims.row_mean();
    let obs_mean = observations.row_mean();
    Ok((sim_mean - obs_mean).map(|v| v * v).mean())
}

/// Short trial runs for every grid tuple, scored by the squared distance
/// between the simulated and observed sample means.
pub fn tune_grid(
    model: &dyn SimulatorModel,
    observations: &DataMatrix,
    base: &OptConfig,
    grid: &[Hyper],
    settings: &TuneSettings,
    stream: Stream,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(FsmError::InvalidArgument("tuning grid is empty".into()));
    }
    if settings.prediction_samples == 0 {
        return Err(FsmError::InvalidArgument(
            "prediction_samples must be >= 1".into(),
        ));
    }
    let trial_iterations = settings
        .trial_iterations
        .unwrap_or_else(|| (base.iterations / 5).max(20));
    let trial_window = base.avg_window.min((trial_iterations / 2).max(1));

    let rows: Vec<TuneRow> = grid
        .par_iter()
        .enumerate()
        .map(|(i, hyper)| {
            let cell = stream.child(i as u64);
            let outcome = hyper.apply(base).and_then(|mut cfg| {
                cfg.iterations = trial_iterations;
                cfg.avg_window = trial_window;
                let trace = run_mle(model, observations, &cfg, cell.child(0))?;
                if trace.diverged {
                    return Ok(None);
                }
                prediction_error(
                    model,
                    observations,
                    &trace.averaged,
                    settings.prediction_samples,
                    cell.child(1),
                )
                .map(Some)
            });
            match outcome {
                Ok(Some(score)) if score.is_finite() => TuneRow {
                    hyper: *hyper,
                    score: Some(score),
                    status: TrialStatus::Ok,
                },
                Ok(_) => TuneRow {
                    hyper: *hyper,
                    score: None,
                    status: TrialStatus::Diverged,
                },
                Err(e) => TuneRow {
                    hyper: *hyper,
                    score: None,
                    status: TrialStatus::Failed(e.to_string()),
                },
            }
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, row) in rows.iter().enumerate() {
        if let Some(score) = row.score {
            if best.is_none_or(|(_, b)| score < b) {
                best = Some((i, score));
            }
        }
    }
    match best {
        Some((best_index, _)) => Ok(TuneResult {
            best_index,
            best: rows[best_index].hyper,
            rows,
        }),
        None => {
            let statuses: Vec<String> = rows
                .iter()
                .map(|r| format!("{:?}: {:?}", r.hyper, r.status))
                .collect();
            Err(FsmError::NoResult(format!(
                "every grid cell failed: {}",
                statuses.join("; ")
            )))
        }
    }
}
