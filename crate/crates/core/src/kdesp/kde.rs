use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{check_dim, FsmError, Result};
use crate::model::{simulate, DataMatrix, ParamVec, SimulatorModel};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum BandwidthRule {
    /// `h_l = s_l (4 / ((k + 2) n))^(1 / (k + 4))`
    #[default]
    Silverman,
    /// `h_l = s_l n^(-1 / (k + 4))`
    Scott,
    Fixed(f64),
}

/// Gaussian product-kernel density estimate with one bandwidth per dimension.
#[derive(Clone, Debug)]
pub struct ProductKde {
    samples: DataMatrix,
    inv_bandwidths: DVector<f64>,
    bandwidths: DVector<f64>,
    log_norm: f64,
}

impl ProductKde {
    pub fn fit(samples: DataMatrix, rule: BandwidthRule) -> Result<Self> {
        let (n, k) = samples.shape();
        if n == 0 || k == 0 {
            return Err(FsmError::InvalidArgument(
                "KDE needs at least one sample".into(),
            ));
        }
        let bandwidths = match rule {
            BandwidthRule::Fixed(h) => {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(FsmError::Degenerate(format!(
                        "bandwidth must be positive, got {h}"
                    )));
                }
                DVector::from_element(k, h)
            }
            BandwidthRule::Silverman | BandwidthRule::Scott => {
                if n < 2 {
                    return Err(FsmError::InvalidArgument(
                        "data-driven bandwidths need at least two samples".into(),
                    ));
                }
                let factor = match rule {
                    BandwidthRule::Silverman => {
                        (4.0 / ((k as f64 + 2.0) * n as f64)).powf(1.0 / (k as f64 + 4.0))
                    }
                    _ => (n as f64).powf(-1.0 / (k as f64 + 4.0)),
                };
                let mut h = DVector::zeros(k);
                for l in 0..k {
                    let col = samples.column(l);
                    let mean = col.mean();
                    let var =
                        col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
                    let sd = var.sqrt();
                    if !(sd > 0.0) {
                        return Err(FsmError::Degenerate(format!(
                            "simulated samples are constant in dimension {l}; bandwidth would be zero"
                        )));
                    }
                    h[l] = factor * sd;
                }
                h
            }
        };
        let log_norm = -(n as f64).ln()
            - bandwidths.iter().map(|h| h.ln()).sum::<f64>()
            - 0.5 * k as f64 * (2.0 * PI).ln();
        Ok(Self {
            inv_bandwidths: bandwidths.map(|h| 1.0 / h),
            samples,
            bandwidths,
            log_norm,
        })
    }

    pub fn bandwidths(&self) -> &DVector<f64> {
        &self.bandwidths
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim("kde: x", self.samples.ncols(), x.len())?;
        let mut exponents = vec![0.0; self.samples.nrows()];
        for ((col, &ih), &xl) in self
            .samples
            .column_iter()
            .zip(self.inv_bandwidths.iter())
            .zip(x)
        {
            for (e, s) in exponents.iter_mut().zip(col.iter()) {
                let z = (xl - s) * ih;
                *e -= 0.5 * z * z;
            }
        }
        let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = exponents.iter().map(|e| (e - max).exp()).sum();
        Ok(self.log_norm + max + sum.ln())
    }
}

/// Simulates `n_sim` samples at `theta`, fits a product KDE and returns the
/// summed log density of the observations.
pub fn kde_loglik(
    model: &dyn SimulatorModel,
    theta: &ParamVec,
    observations: &DataMatrix,
    n_sim: usize,
    rule: BandwidthRule,
    stream: Stream,
) -> Result<f64> {
    if n_sim < 2 {
        return Err(FsmError::InvalidArgument(format!(
            "kde_loglik needs n_sim >= 2, got {n_sim}"
        )));
    }
    check_dim(
        "kde_loglik: observations",
        model.data_dim(),
        observations.ncols(),
    )?;
    let sims = simulate(model, theta, n_sim, stream)?;
    let kde = ProductKde::fit(sims, rule)?;
    let mut total = 0.0;
    let mut row = vec![0.0; observations.ncols()];
    for r in observations.row_iter() {
        row.iter_mut().zip(r.iter()).for_each(|(a, b)| *a = *b);
        total += kde.log_density(&row)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianMeanModel;
    use nalgebra::DMatrix;

    #[test]
    fn kernel_at_its_own_center() {
        let h = 0.3;
        for k in 1..4 {
            let samples = DMatrix::from_element(1, k, 2.0);
            let kde = ProductKde::fit(samples, BandwidthRule::Fixed(h)).unwrap();
            let lp = kde.log_density(&vec![2.0; k]).unwrap();
            let expected = -(k as f64) * (h * (2.0 * PI).sqrt()).ln();
            assert!((lp - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_simulations_are_degenerate_for_data_driven_rules() {
        let samples = DMatrix::from_element(5, 2, 1.0);
        for rule in [BandwidthRule::Silverman, BandwidthRule::Scott] {
            assert!(matches!(
                ProductKde::fit(samples.clone(), rule),
                Err(FsmError::Degenerate(_))
            ));
        }
        assert!(matches!(
            ProductKde::fit(samples.clone(), BandwidthRule::Fixed(0.0)),
            Err(FsmError::Degenerate(_))
        ));
        // a fixed bandwidth does not care
        assert!(ProductKde::fit(samples, BandwidthRule::Fixed(0.5)).is_ok());
    }

    #[test]
    fn density_far_away_decreases_as_bandwidth_shrinks() {
        let samples = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
        let mut last = f64::INFINITY;
        for h in [2.0, 1.0, 0.5, 0.25, 0.1, 0.05] {
            let kde = ProductKde::fit(samples.clone(), BandwidthRule::Fixed(h)).unwrap();
            let lp = kde.log_density(&[5.0]).unwrap();
            assert!(lp < last, "h={h}: {lp} !< {last}");
            last = lp;
        }
        assert!(last < -1000.0);
    }

    #[test]
    fn silverman_bandwidth_formula() {
        let samples = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let kde = ProductKde::fit(samples, BandwidthRule::Silverman).unwrap();
        let sd = (5.0f64 / 3.0).sqrt();
        let expected = sd * (4.0 / (3.0 * 4.0f64)).powf(0.2);
        assert!((kde.bandwidths()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn density_integrates_to_one() {
        let samples = DMatrix::from_column_slice(3, 1, &[-1.0, 0.2, 0.9]);
        let kde = ProductKde::fit(samples, BandwidthRule::Fixed(0.4)).unwrap();
        let step = 1e-3;
        let total: f64 = (0..10_000)
            .map(|i| -5.0 + (i as f64 + 0.5) * step)
            .map(|x| kde.log_density(&[x]).unwrap().exp() * step)
            .sum();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn kde_loglik_tracks_gaussian_loglik() {
        let model = GaussianMeanModel::isotropic(2);
        let truth = ParamVec::new(vec![1.0, 1.0]).unwrap();
        let obs = simulate(&model, &truth, 10, Stream::new(1)).unwrap();
        let mle = model.exact_mle(&obs).unwrap();
        let exact: f64 = obs
            .row_iter()
            .map(|r| model.log_density(&mle, &[r[0], r[1]]).unwrap())
            .sum();
        let approx = kde_loglik(
            &model,
            &mle,
            &obs,
            20_000,
            BandwidthRule::Silverman,
            Stream::new(2),
        )
        .unwrap();
        assert!(
            ((approx - exact) / exact).abs() < 0.15,
            "kde {approx} vs exact {exact}"
        );
        assert!(kde_loglik(
            &model,
            &mle,
            &obs,
            1,
            BandwidthRule::Silverman,
            Stream::new(2)
        )
        .is_err());
    }

    #[test]
    fn kde_loglik_is_deterministic() {
        let model = GaussianMeanModel::isotropic(2);
        let theta = ParamVec::new(vec![0.0, 0.0]).unwrap();
        let obs = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.4]);
        let a = kde_loglik(
            &model,
            &theta,
            &obs,
            50,
            BandwidthRule::Scott,
            Stream::new(9),
        )
        .unwrap();
        let b = kde_loglik(
            &model,
            &theta,
            &obs,
            50,
            BandwidthRule::Scott,
            Stream::new(9),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
