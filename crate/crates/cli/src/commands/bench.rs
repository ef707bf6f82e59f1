//! Wall-clock timing of single gradient estimates. Results depend on the
//! machine and are excluded from the determinism guarantee.

use std::time::Instant;

use fsmle_core::fsm::{estimate_gradient, FitOptions, ProposalSpec};
use fsmle_core::kdesp::{spsa_gradient, KdeLogLikelihood, KdeSpConfig};
use fsmle_core::{simulate, GaussianMeanModel, ParamVec, SimulatorModel};
use serde::Serialize;

use super::{streams, Ctx, Outcome, Status};
use crate::output::{num, write_json, CsvSink};

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub method: &'static str,
    pub param_dim: usize,
    pub budget: usize,
    pub repetitions: usize,
    pub median_ms: f64,
    pub iqr_ms: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(method: &'static str, d: usize, budget: usize, mut times: Vec<f64>) -> BenchRow {
    times.sort_by(|a, b| a.total_cmp(b));
    BenchRow {
        method,
        param_dim: d,
        budget,
        repetitions: times.len(),
        median_ms: quantile(&times, 0.5),
        iqr_ms: quantile(&times, 0.75) - quantile(&times, 0.25),
    }
}

pub fn run(ctx: &Ctx) -> anyhow::Result<Outcome> {
    let b = &ctx.config.experiments.bench;
    let root = ctx.stream(streams::BENCH);
    let mut rows = Vec::new();
    for (di, &d) in b.dims.iter().enumerate() {
        let model = GaussianMeanModel::isotropic(d);
        let truth = ParamVec::from_element(d, 1.0)?;
        let s = root.child(di as u64);
        let obs = simulate(&model, &truth, 10, s.child(0))?;
        let theta_t = model.exact_mle(&obs)?;
        let proposal = ProposalSpec::new(theta_t.clone(), b.sigma)?;
        for (bi, &budget) in b.budgets.iter().enumerate() {
            let cell = s.child(1).child(bi as u64);
            let mut fsm = Vec::with_capacity(b.repetitions);
            for r in 0..b.repetitions {
                let started = Instant::now();
                let g = estimate_gradient(
                    &model,
                    &obs,
                    &proposal,
                    budget,
                    1,
                    &FitOptions::default(),
                    cell.child(r as u64),
                )?;
                fsm.push(started.elapsed().as_secs_f64() * 1e3);
                std::hint::black_box(g);
            }
            rows.push(summarize("fsm", d, budget, fsm));

            let surrogate = KdeLogLikelihood {
                model: &model as &dyn SimulatorModel,
                observations: &obs,
                n_sim: budget / 2,
                bandwidth: Default::default(),
            };
            let cfg = KdeSpConfig::new(1.0, b.kdesp_c, 1, budget / 2)?;
            let mut kde = Vec::with_capacity(b.repetitions);
            for r in 0..b.repetitions {
                let started = Instant::now();
                let g = spsa_gradient(
                    &surrogate,
                    theta_t.as_vector(),
                    &cfg,
                    1,
                    cell.child((b.repetitions + r) as u64),
                )?;
                kde.push(started.elapsed().as_secs_f64() * 1e3);
                std::hint::black_box(g);
            }
            rows.push(summarize("kdesp", d, budget, kde));
        }
    }

    let mut sink = CsvSink::create(
        &ctx.out,
        "bench.csv",
        &ctx.hash,
        &[
            "method",
            "param_dim",
            "budget",
            "repetitions",
            "median_ms",
            "iqr_ms",
        ],
    )?;
    for r in &rows {
        sink.row([
            r.method.to_string(),
            r.param_dim.to_string(),
            r.budget.to_string(),
            r.repetitions.to_string(),
            num(r.median_ms),
            num(r.iqr_ms),
        ])?;
    }
    let files = vec![
        sink.finish()?,
        write_json(
            &ctx.out,
            "summary_bench.json",
            &serde_json::json!({
                "config_hash": ctx.hash,
                "machine_dependent": true,
                "rows": rows,
            }),
        )?,
    ];
    Ok(Outcome {
        files,
        status: Status::Ok,
        message: format!("{} timing cells (machine dependent)", rows.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
        let row = summarize("fsm", 2, 10, vec![4.0, 1.0, 3.0, 2.0]);
        assert_eq!(row.median_ms, 2.5);
        assert_eq!(row.iqr_ms, 1.5);
    }
}
