//! Grid search over `(sigma, eta)` or `(a, c)`.

use fsmle_core::optimize::{tune_grid, Hyper, TrialStatus, TuneSettings};
use fsmle_core::{simulate, FsmError};

use super::{streams, Ctx, Outcome, Status};
use crate::output::{num, write_json, CsvSink};

fn describe(h: &Hyper) -> (&'static str, &'static str, f64, &'static str, f64) {
    match *h {
        Hyper::Fsm { sigma, eta } => ("fsm", "sigma", sigma, "eta", eta),
        Hyper::KdeSp { a, c } => ("kdesp", "a", a, "c", c),
    }
}

pub fn run(ctx: &Ctx) -> anyhow::Result<Outcome> {
    let model = ctx.model.as_dyn();
    let t = &ctx.config.experiments.tune;
    let root = ctx.stream(streams::TUNE);
    let truth = ctx.config.model.truth()?;
    let obs = simulate(model, &truth, ctx.config.n_obs, root.child(0))?;
    let base = ctx.config.opt_config()?;
    let settings = TuneSettings {
        trial_iterations: t.trial_iterations,
        prediction_samples: t.prediction_samples,
    };
    let grid = ctx.config.tune_grid();
    let result = match tune_grid(model, &obs, &base, &grid, &settings, root.child(1)) {
        Ok(r) => r,
        Err(FsmError::NoResult(msg)) => {
            log::error!("{msg}");
            return Ok(Outcome {
                files: Vec::new(),
                status: Status::Diverged,
                message: "every grid cell failed or diverged".into(),
            });
        }
        Err(e) => return Err(e.into()),
    };

    let mut sink = CsvSink::create(
        &ctx.out,
        "tune.csv",
        &ctx.hash,
        &[
            "index", "method", "p1_name", "p1", "p2_name", "p2", "score", "status",
        ],
    )?;
    for (i, row) in result.rows.iter().enumerate() {
        let (method, n1, v1, n2, v2) = describe(&row.hyper);
        let status = match &row.status {
            TrialStatus::Ok => "ok".to_string(),
            TrialStatus::Diverged => "diverged".to_string(),
            TrialStatus::Failed(msg) => format!("failed: {msg}"),
        };
        sink.row([
            i.to_string(),
            method.to_string(),
            n1.to_string(),
            num(v1),
            n2.to_string(),
            num(v2),
            row.score.map(num).unwrap_or_default(),
            status,
        ])?;
    }
    let (method, n1, v1, n2, v2) = describe(&result.best);
    let files = vec![
        sink.finish()?,
        write_json(
            &ctx.out,
            "summary_tune.json",
            &serde_json::json!({
                "config_hash": ctx.hash,
                "best_index": result.best_index,
                "method": method,
                n1: v1,
                n2: v2,
                "score": result.rows[result.best_index].score,
            }),
        )?,
    ];
    Ok(Outcome {
        files,
        status: Status::Ok,
        message: format!("best {n1}={v1}, {n2}={v2}"),
    })
}
