//! Confidence-interval coverage over repeated datasets.

use fsmle_core::inference::{coverage_experiment, CoverageConfig};
use fsmle_core::FsmError;

use super::{streams, Ctx, Outcome, Status};
use crate::output::{indexed, nums, write_json, CsvSink};

pub fn run(ctx: &Ctx) -> anyhow::Result<Outcome> {
    let model = ctx.model.as_dyn();
    let c = &ctx.config.experiments.coverage;
    let truth = ctx.config.model.truth()?;
    let cfg = CoverageConfig {
        n_obs: ctx.config.n_obs,
        runs: c.runs,
        opt: ctx.config.opt_config()?,
        fim_samples: c.fim_samples,
        fim_source: ctx.config.fim_source(),
        level: c.level,
    };
    let report = match coverage_experiment(model, &truth, &cfg, ctx.stream(streams::COVERAGE)) {
        Ok(r) => r,
        Err(FsmError::NoResult(msg)) => {
            return Ok(Outcome {
                files: Vec::new(),
                status: Status::Diverged,
                message: msg,
            })
        }
        Err(e) => return Err(e.into()),
    };

    let d = model.param_dim();
    let mut header = vec!["run".to_string(), "diverged".to_string()];
    header.extend(indexed("estimate_", d));
    header.extend(indexed("lower_", d));
    header.extend(indexed("upper_", d));
    header.extend(indexed("contained_", d));
    let mut sink = CsvSink::create(&ctx.out, "coverage.csv", &ctx.hash, &header)?;
    for run in &report.runs {
        let mut row = vec![run.run.to_string(), run.diverged.to_string()];
        match (&run.estimate, &run.interval) {
            (Some(e), Some(ci)) => {
                row.extend(nums(e.as_slice()));
                row.extend(nums(ci.lower.as_slice()));
                row.extend(nums(ci.upper.as_slice()));
                row.extend(run.contained.iter().map(|b| u8::from(*b).to_string()));
            }
            _ => row.extend(std::iter::repeat_n(String::new(), 4 * d)),
        }
        sink.row(row)?;
    }
    let files = vec![
        sink.finish()?,
        write_json(
            &ctx.out,
            "summary_coverage.json",
            &serde_json::json!({
                "config_hash": ctx.hash,
                "level": c.level,
                "per_coordinate": report.per_coordinate,
                "averaged": report.averaged,
                "completed_runs": report.completed,
                "diverged_runs": report.diverged,
            }),
        )?,
    ];
    if report.diverged > 0 {
        log::warn!(
            "{} coverage runs diverged and were excluded",
            report.diverged
        );
    }
    Ok(Outcome {
        files,
        status: Status::Ok,
        message: format!(
            "coverage {:.3} over {} runs ({} diverged)",
            report.averaged, report.completed, report.diverged
        ),
    })
}
