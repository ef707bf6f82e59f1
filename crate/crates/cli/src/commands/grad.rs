//! Gradient accuracy over simulation budgets and hyperparameters.

use fsmle_core::fsm::{estimate_gradient, FitOptions, ProposalSpec};
use fsmle_core::kdesp::{spsa_gradient, KdeLogLikelihood, KdeSpConfig};
use fsmle_core::oracles::SmoothedGaussianOracle;
use fsmle_core::{simulate, DataMatrix, ParamVec, SimulatorModel, Stream};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::{streams, Ctx, Outcome, Status};
use crate::output::{num, write_json, CsvSink};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Fsm {
        budget: usize,
        sigma: f64,
        m: usize,
        n: usize,
    },
    KdeSp {
        budget: usize,
        c: f64,
        n_sim: usize,
    },
}

impl Cell {
    fn method(&self) -> &'static str {
        match self {
            Cell::Fsm { .. } => "fsm",
            Cell::KdeSp { .. } => "kdesp",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellSummary {
    pub method: &'static str,
    pub m: usize,
    pub n: usize,
    pub simulations: usize,
    pub hyper_name: &'static str,
    pub hyper_value: f64,
    pub repeats: usize,
    pub mean_error: f64,
    pub ci_half_width: f64,
    pub median_error: f64,
    /// FSM only: median relative error against the smoothed-likelihood gradient.
    pub median_rel_error_smoothed: Option<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn sum_rows<F>(obs: &DataMatrix, mut f: F) -> anyhow::Result<DVector<f64>>
where
    F: FnMut(&[f64]) -> fsmle_core::Result<DVector<f64>>,
{
    let mut total: Option<DVector<f64>> = None;
    let mut x = vec![0.0; obs.ncols()];
    for i in 0..obs.nrows() {
        for (c, v) in x.iter_mut().enumerate() {
            *v = obs[(i, c)];
        }
        let s = f(&x)?;
        total = Some(match total {
            Some(t) => t + s,
            None => s,
        });
    }
    Ok(total.expect("at least one observation"))
}

fn estimate(
    model: &dyn SimulatorModel,
    obs: &DataMatrix,
    theta_t: &ParamVec,
    cell: &Cell,
    stream: Stream,
) -> anyhow::Result<DVector<f64>> {
    Ok(match *cell {
        Cell::Fsm { sigma, m, n, .. } => {
            let proposal = ProposalSpec::new(theta_t.clone(), sigma)?;
            estimate_gradient(model, obs, &proposal, m, n, &FitOptions::default(), stream)?.gradient
        }
        Cell::KdeSp { c, n_sim, .. } => {
            let surrogate = KdeLogLikelihood {
                model,
                observations: obs,
                n_sim,
                bandwidth: Default::default(),
            };
            // t = 1 makes the perturbation exactly c
            let cfg = KdeSpConfig::new(1.0, c, 1, n_sim)?;
            spsa_gradient(&surrogate, theta_t.as_vector(), &cfg, 1, stream)?
        }
    })
}

pub fn cells(ctx: &Ctx) -> Vec<Cell> {
    let g = &ctx.config.experiments.grad;
    let mut out = Vec::new();
    for &budget in &g.budgets {
        for &sigma in &g.fsm_sigmas {
            out.push(Cell::Fsm {
                budget,
                sigma,
                m: budget / g.fsm_n,
                n: g.fsm_n,
            });
        }
        for &c in &g.kdesp_cs {
            out.push(Cell::KdeSp {
                budget,
                c,
                n_sim: budget / 2,
            });
        }
    }
    out
}

pub fn run(ctx: &Ctx) -> anyhow::Result<Outcome> {
    let gaussian = ctx.require_gaussian("grad")?;
    let model: &dyn SimulatorModel = gaussian;
    let g = &ctx.config.experiments.grad;
    let root = ctx.stream(streams::GRAD);
    let truth = ctx.config.model.truth()?;
    let obs = simulate(model, &truth, ctx.config.n_obs, root.child(0))?;
    let mle = model.exact_mle(&obs)?;
    let offset = g
        .offset
        .clone()
        .map(DVector::from_vec)
        .unwrap_or_else(|| DVector::from_element(model.param_dim(), 0.5));
    let theta_t = ParamVec::from_vector(mle.as_vector() + offset)?;
    let exact = sum_rows(&obs, |x| model.closed_form_score(theta_t.as_vector(), x))?;

    let cells = cells(ctx);
    let mut summaries = Vec::with_capacity(cells.len());
    for (idx, cell) in cells.iter().enumerate() {
        let smoothed = match cell {
            Cell::Fsm { sigma, .. } => {
                let oracle = SmoothedGaussianOracle::for_model(gaussian, *sigma, &theta_t)?;
                Some(sum_rows(&obs, |x| oracle.smoothed_grad_exact(x))?)
            }
            Cell::KdeSp { .. } => None,
        };
        let cell_stream = root.child(1).child(idx as u64);
        let estimates: Vec<DVector<f64>> = (0..g.repeats)
            .into_par_iter()
            .map(|r| estimate(model, &obs, &theta_t, cell, cell_stream.child(r as u64)))
            .collect::<anyhow::Result<_>>()?;
        let errors: Vec<f64> = estimates.iter().map(|e| (e - &exact).norm()).collect();
        let k = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / k;
        let ci = if errors.len() > 1 {
            let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0);
            1.959963984540054 * (var / k).sqrt()
        } else {
            f64::NAN
        };
        let rel_smoothed = smoothed.map(|target| {
            let scale = target.norm();
            median(
                estimates
                    .iter()
                    .map(|e| (e - &target).norm() / scale)
                    .collect(),
            )
        });
        let (m, n, sims, hyper_name, hyper_value) = match *cell {
            Cell::Fsm { sigma, m, n, .. } => (m, n, m * n, "sigma", sigma),
            Cell::KdeSp { c, n_sim, .. } => (0, n_sim, 2 * n_sim, "c", c),
        };
        summaries.push(CellSummary {
            method: cell.method(),
            m,
            n,
            simulations: sims,
            hyper_name,
            hyper_value,
            repeats: g.repeats,
            mean_error: mean,
            ci_half_width: ci,
            median_error: median(errors),
            median_rel_error_smoothed: rel_smoothed,
        });
    }

    let mut sink = CsvSink::create(
        &ctx.out,
        "grad.csv",
        &ctx.hash,
        &[
            "method",
            "m",
            "n",
            "simulations",
            "hyper_name",
            "hyper_value",
            "repeats",
            "mean_error",
            "ci_half_width",
            "median_error",
            "median_rel_error_smoothed",
        ],
    )?;
    for s in &summaries {
        sink.row([
            s.method.to_string(),
            s.m.to_string(),
            s.n.to_string(),
            s.simulations.to_string(),
            s.hyper_name.to_string(),
            num(s.hyper_value),
            s.repeats.to_string(),
            num(s.mean_error),
            num(s.ci_half_width),
            num(s.median_error),
            s.median_rel_error_smoothed.map(num).unwrap_or_default(),
        ])?;
    }
    let csv = sink.finish()?;
    let json = write_json(
        &ctx.out,
        "summary_grad.json",
        &serde_json::json!({
            "config_hash": ctx.hash,
            "theta_t": theta_t.to_vec(),
            "exact_gradient": exact.as_slice(),
            "cells": summaries,
        }),
    )?;
    Ok(Outcome {
        files: vec![csv, json],
        status: Status::Ok,
        message: format!("{} gradient cells", summaries.len()),
    })
}
