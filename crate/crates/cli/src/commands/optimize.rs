//! Repeated maximum likelihood runs.

use fsmle_core::optimize::{run_mle, tune_grid, Hyper, OptTrace, TuneSettings};
use fsmle_core::{simulate, FsmError};
use rayon::prelude::*;
use serde::Serialize;

use super::{streams, Ctx, Outcome, Status};
use crate::output::{indexed, num, nums, write_json, CsvSink};

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub run: usize,
    pub averaged: Vec<f64>,
    pub final_iterate: Vec<f64>,
    pub iterations_completed: usize,
    pub diverged: bool,
    pub exact_mle: Option<Vec<f64>>,
    /// `||averaged - exact MLE||_2` when the model has an exact MLE.
    pub error: Option<f64>,
    pub tuned: Option<String>,
}

pub fn run(ctx: &Ctx) -> anyhow::Result<Outcome> {
    let model = ctx.model.as_dyn();
    let ex = &ctx.config.experiments;
    let base = ctx.config.opt_config()?;
    let truth = ctx.config.model.truth()?;
    let root = ctx.stream(streams::OPTIMIZE);
    let grid = ctx.config.tune_grid();
    let tune_settings = TuneSettings {
        trial_iterations: ex.tune.trial_iterations,
        prediction_samples: ex.tune.prediction_samples,
    };

    let results: Vec<(OptTrace, Option<Hyper>, Option<Vec<f64>>)> = (0..ex.optimize.runs)
        .into_par_iter()
        .map(|r| -> anyhow::Result<_> {
            let s = root.child(r as u64);
            let obs = simulate(model, &truth, ctx.config.n_obs, s.child(0))?;
            let (cfg, hyper) = if ex.optimize.tuned {
                let res = tune_grid(model, &obs, &base, &grid, &tune_settings, s.child(1))?;
                (res.best.apply(&base)?, Some(res.best))
            } else {
                (base.clone(), None)
            };
            let trace = run_mle(model, &obs, &cfg, s.child(2))?;
            let mle = match model.exact_mle(&obs) {
                Ok(m) => Some(m.to_vec()),
                Err(FsmError::Unsupported { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            Ok((trace, hyper, mle))
        })
        .collect::<anyhow::Result<_>>()?;

    let d = model.param_dim();
    let mut header = vec!["run".to_string(), "iteration".to_string()];
    header.extend(indexed("theta_", d));
    header.extend(indexed("grad_", d));
    let mut trace_csv = CsvSink::create(&ctx.out, "trace.csv", &ctx.hash, &header)?;
    let mut timing_csv = CsvSink::create(
        &ctx.out,
        "timing.csv",
        &ctx.hash,
        &["run", "iteration", "wall_ms"],
    )?;
    let mut summaries = Vec::new();
    for (r, (trace, hyper, mle)) in results.iter().enumerate() {
        for (t, theta) in trace.iterates.iter().enumerate() {
            let mut row = vec![r.to_string(), t.to_string()];
            row.extend(nums(theta.as_slice()));
            match trace.gradients.get(t) {
                Some(g) => row.extend(nums(g.as_slice())),
                None => row.extend(std::iter::repeat_n(String::new(), d)),
            }
            trace_csv.row(row)?;
        }
        for (t, ms) in trace.wall_ms.iter().enumerate() {
            timing_csv.row([r.to_string(), t.to_string(), num(*ms)])?;
        }
        let averaged = trace.averaged.to_vec();
        let error = mle.as_ref().map(|m| {
            m.iter()
                .zip(&averaged)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        });
        summaries.push(RunSummary {
            run: r,
            averaged,
            final_iterate: trace.final_iterate().as_slice().to_vec(),
            iterations_completed: trace.iterates.len() - 1,
            diverged: trace.diverged,
            exact_mle: mle.clone(),
            error,
            tuned: hyper.map(|h| format!("{h:?}")),
        });
    }
    let mut errors: Vec<f64> = summaries.iter().filter_map(|s| s.error).collect();
    errors.sort_by(|a, b| a.total_cmp(b));
    let median_error = (!errors.is_empty()).then(|| errors[errors.len() / 2]);
    let diverged = summaries.iter().filter(|s| s.diverged).count();
    let files = vec![
        trace_csv.finish()?,
        timing_csv.finish()?,
        write_json(
            &ctx.out,
            "summary_optimize.json",
            &serde_json::json!({
                "config_hash": ctx.hash,
                "runs": summaries,
                "median_error": median_error,
                "diverged_runs": diverged,
            }),
        )?,
    ];
    Ok(Outcome {
        files,
        status: if diverged > 0 {
            Status::Diverged
        } else {
            Status::Ok
        },
        message: match median_error {
            Some(e) => format!(
                "{} runs, median error {e:.4}, {diverged} diverged",
                summaries.len()
            ),
            None => format!("{} runs, {diverged} diverged", summaries.len()),
        },
    })
}
