//! Smoothing bias of the optimal score against its bound.

use fsmle_core::oracles::{bias_scaling_probe, BiasRow};
use fsmle_core::ParamVec;
use nalgebra::DVector;

use super::{streams, Ctx, Outcome, Status};
use crate::output::{num, write_json, CsvSink};

/// Slack on the bound for Monte Carlo error in `E[R]`.
pub const BOUND_SLACK: f64 = 1.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiasVerdict {
    pub zero_at_zero: bool,
    pub strictly_increasing: bool,
    pub within_bound: bool,
}

pub fn assess(rows: &[BiasRow]) -> BiasVerdict {
    BiasVerdict {
        zero_at_zero: rows
            .iter()
            .filter(|r| r.sigma == 0.0)
            .all(|r| r.bias == 0.0),
        strictly_increasing: rows
            .windows(2)
            .all(|w| w[1].sigma <= w[0].sigma || w[1].bias > w[0].bias),
        within_bound: rows.iter().all(|r| r.bias <= BOUND_SLACK * r.bound),
    }
}

pub fn run(ctx: &Ctx) -> anyhow::Result<Outcome> {
    let model = ctx.require_gaussian("bias-probe")?;
    let b = &ctx.config.experiments.bias_probe;
    let truth = ctx.config.model.truth()?;
    let theta_t = match &b.offset {
        Some(o) => ParamVec::from_vector(truth.as_vector() + DVector::from_column_slice(o))?,
        None => truth.clone(),
    };
    let rows = bias_scaling_probe(
        model,
        &truth,
        &theta_t,
        &b.sigmas,
        b.samples,
        ctx.stream(streams::BIAS),
    )?;
    let verdict = assess(&rows);

    let mut sink = CsvSink::create(
        &ctx.out,
        "bias.csv",
        &ctx.hash,
        &[
            "sigma",
            "bias",
            "lipschitz",
            "expected_ratio",
            "bound",
            "within_bound",
        ],
    )?;
    for r in &rows {
        sink.row([
            num(r.sigma),
            num(r.bias),
            num(r.lipschitz),
            num(r.expected_ratio),
            num(r.bound),
            (r.bias <= BOUND_SLACK * r.bound).to_string(),
        ])?;
    }
    let files = vec![
        sink.finish()?,
        write_json(
            &ctx.out,
            "summary_bias.json",
            &serde_json::json!({
                "config_hash": ctx.hash,
                "zero_at_zero": verdict.zero_at_zero,
                "strictly_increasing": verdict.strictly_increasing,
                "within_bound": verdict.within_bound,
            }),
        )?,
    ];
    Ok(Outcome {
        files,
        status: Status::Ok,
        message: format!("{verdict:?}"),
    })
}
