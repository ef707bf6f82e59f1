use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, FsmError, Result};
use crate::kdesp::kde::{kde_loglik, BandwidthRule};
use crate::model::{DataMatrix, ParamVec, SimulatorModel};
use crate::rng::Stream;

/// Gains and surrogate settings for the KDE-SP gradient.
///
/// `alpha_t = a / (t + A)^alpha` and `c_t = c / t^gamma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KdeSpConfig {
    pub a: f64,
    pub c: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Stability offset `A`.
    pub big_a: f64,
    pub iterations: usize,
    pub bandwidth: BandwidthRule,
    /// Simulations per likelihood evaluation.
    pub n_sim: usize,
    /// Reuse one random stream for both perturbed evaluations.
    pub common_random_numbers: bool,
}

impl KdeSpConfig {
    /// Standard gains: `alpha = 1`, `gamma = 1/6`, `A = floor(0.1 T)`.
    pub fn new(a: f64, c: f64, iterations: usize, n_sim: usize) -> Result<Self> {
        let cfg = Self {
            a,
            c,
            alpha: 1.0,
            gamma: 1.0 / 6.0,
            big_a: (0.1 * iterations as f64).floor(),
            iterations,
            bandwidth: BandwidthRule::Silverman,
            n_sim,
            common_random_numbers: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(FsmError::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("a", self.a)?;
        positive("c", self.c)?;
        if !(self.big_a >= 0.0 && self.big_a.is_finite()) {
            return Err(FsmError::InvalidArgument(format!(
                "A must be non-negative, got {}",
                self.big_a
            )));
        }
        if !self.alpha.is_finite() || !self.gamma.is_finite() {
            return Err(FsmError::InvalidArgument(
                "gain exponents must be finite".into(),
            ));
        }
        if self.n_sim < 2 {
            return Err(FsmError::InvalidArgument(format!(
                "n_sim must be >= 2, got {}",
                self.n_sim
            )));
        }
        Ok(())
    }
}

/// `(alpha_t, c_t)` for iteration `t >= 1`.
pub fn spsa_schedules(cfg: &KdeSpConfig, t: usize) -> Result<(f64, f64)> {
    if t == 0 {
        return Err(FsmError::InvalidArgument(
            "SPSA gains are defined for t >= 1".into(),
        ));
    }
    let t = t as f64;
    Ok((
        cfg.a / (t + cfg.big_a).powf(cfg.alpha),
        cfg.c / t.powf(cfg.gamma),
    ))
}

/// A (possibly noisy) log-likelihood that SPSA can probe.
pub trait LogLikelihood {
    fn dim(&self) -> usize;

    fn log_likelihood(&self, theta: &DVector<f64>, stream: Stream) -> Result<f64>;
}

/// KDE surrogate built from fresh simulations at each probe point.
#[derive(Clone, Copy, Debug)]
pub struct KdeLogLikelihood<'a> {
    pub model: &'a dyn SimulatorModel,
    pub observations: &'a DataMatrix,
    pub n_sim: usize,
    pub bandwidth: BandwidthRule,
}

impl LogLikelihood for KdeLogLikelihood<'_> {
    fn dim(&self) -> usize {
        self.model.param_dim()
    }

    fn log_likelihood(&self, theta: &DVector<f64>, stream: Stream) -> Result<f64> {
        let theta = ParamVec::from_vector(theta.clone())?;
        kde_loglik(
            self.model,
            &theta,
            self.observations,
            self.n_sim,
            self.bandwidth,
            stream,
        )
    }
}

/// The model's own log density summed over the observations.
#[derive(Clone, Copy, Debug)]
pub struct ExactLogLikelihood<'a> {
    pub model: &'a dyn SimulatorModel,
    pub observations: &'a DataMatrix,
}

impl LogLikelihood for ExactLogLikelihood<'_> {
    fn dim(&self) -> usize {
        self.model.param_dim()
    }

    fn log_likelihood(&self, theta: &DVector<f64>, _stream: Stream) -> Result<f64> {
        let mut row = vec![0.0; self.observations.ncols()];
        let mut total = 0.0;
        for r in self.observations.row_iter() {
            row.iter_mut().zip(r.iter()).for_each(|(a, b)| *a = *b);
            total += self.model.log_density(theta, &row)?;
        }
        Ok(total)
    }
}

/// Deterministic log-likelihood given by a closure.
pub struct FnLogLikelihood<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&DVector<f64>) -> f64> FnLogLikelihood<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&DVector<f64>) -> f64> LogLikelihood for FnLogLikelihood<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_likelihood(&self, theta: &DVector<f64>, _stream: Stream) -> Result<f64> {
        Ok((self.f)(theta))
    }
}

pub fn rademacher(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// Two-sided difference along a fixed direction:
/// `delta (l(theta + c delta) - l(theta - c delta)) / (2 c)`.
pub fn spsa_gradient_along(
    surrogate: &dyn LogLikelihood,
    theta: &DVector<f64>,
    delta: &DVector<f64>,
    c_t: f64,
    plus: Stream,
    minus: Stream,
) -> Result<DVector<f64>> {
    check_dim("spsa: theta", surrogate.dim(), theta.len())?;
    check_dim("spsa: direction", theta.len(), delta.len())?;
    let up = surrogate.log_likelihood(&(theta + delta * c_t), plus)?;
    let down = surrogate.log_likelihood(&(theta - delta * c_t), minus)?;
    Ok(delta * ((up - down) / (2.0 * c_t)))
}

/// SPSA gradient at iteration `t` with a Rademacher direction.
///
/// The direction comes from `stream.child(0)`; the two evaluations use
/// `child(1)` and `child(2)` unless common random numbers are requested.
pub fn spsa_gradient(
    surrogate: &dyn LogLikelihood,
    theta: &DVector<f64>,
    cfg: &KdeSpConfig,
    t: usize,
    stream: Stream,
) -> Result<DVector<f64>> {
    let (_, c_t) = spsa_schedules(cfg, t)?;
    let delta = rademacher(theta.len(), &mut stream.child(0).rng());
    let plus = stream.child(1);
    let minus = if cfg.common_random_numbers {
        plus
    } else {
        stream.child(2)
    };
    spsa_gradient_along(surrogate, theta, &delta, c_t, plus, minus)
}

/// Every Rademacher vector of length `d`, one per column.
pub fn all_rademacher(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(
        d,
        1 << d,
        |i, col| if (col >> i) & 1 == 1 { 1.0 } else { -1.0 },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, GaussianMeanModel};

    fn cfg(a: f64, c: f64, big_a: f64) -> KdeSpConfig {
        KdeSpConfig {
            big_a,
            ..KdeSpConfig::new(a, c, 100, 10).unwrap()
        }
    }

    #[test]
    fn default_gains() {
        let c = KdeSpConfig::new(1.0, 1.0, 250, 10).unwrap();
        assert_eq!(c.alpha, 1.0);
        assert_eq!(c.gamma, 1.0 / 6.0);
        assert_eq!(c.big_a, 25.0);
        assert!(KdeSpConfig::new(0.0, 1.0, 10, 10).is_err());
        assert!(KdeSpConfig::new(1.0, 1.0, 10, 1).is_err());
    }

    #[test]
    fn schedule_examples() {
        let (alpha_1, _) = spsa_schedules(&cfg(1.0, 1.0, 10.0), 1).unwrap();
        assert_eq!(alpha_1, 1.0 / 11.0);
        let (_, c_64) = spsa_schedules(&cfg(1.0, 1.0, 10.0), 64).unwrap();
        assert!((c_64 - 0.5).abs() < 1e-15);
        assert!(spsa_schedules(&cfg(1.0, 1.0, 10.0), 0).is_err());
    }

    #[test]
    fn schedules_strictly_decrease() {
        let c = cfg(2.0, 0.3, 5.0);
        let mut prev = spsa_schedules(&c, 1).unwrap();
        for t in 2..5000 {
            let next = spsa_schedules(&c, t).unwrap();
            assert!(next.0 < prev.0 && next.1 < prev.1, "t={t}");
            prev = next;
        }
    }

    #[test]
    fn exact_on_linear_functions() {
        let b = 2.5;
        let lin = FnLogLikelihood::new(1, move |t: &DVector<f64>| b * t[0]);
        let theta = DVector::from_element(1, 0.7);
        for sign in [1.0, -1.0] {
            let delta = DVector::from_element(1, sign);
            let g = spsa_gradient_along(&lin, &theta, &delta, 0.3, Stream::new(0), Stream::new(0))
                .unwrap();
            assert!((g[0] - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_on_symmetric_quadratic_at_center() {
        let quad = FnLogLikelihood::new(3, |t: &DVector<f64>| -t.norm_squared());
        let theta = DVector::zeros(3);
        for seed in 0..20 {
            let g = spsa_gradient(
                &quad,
                &theta,
                &cfg(1.0, 0.4, 0.0),
                1 + seed as usize,
                Stream::new(seed),
            )
            .unwrap();
            assert_eq!(g, DVector::zeros(3));
        }
    }

    #[test]
    fn enumerated_directions_reproduce_quadratic_gradient() {
        // l(theta) = -||theta||^2 at (1, 0): gradient (-2, 0)
        let quad = FnLogLikelihood::new(2, |t: &DVector<f64>| -t.norm_squared());
        let theta = DVector::from_vec(vec![1.0, 0.0]);
        let dirs = all_rademacher(2);
        let mut mean = DVector::zeros(2);
        for col in dirs.column_iter() {
            let delta = col.into_owned();
            mean += spsa_gradient_along(&quad, &theta, &delta, 0.1, Stream::new(0), Stream::new(0))
                .unwrap();
        }
        mean /= dirs.ncols() as f64;
        assert!((mean - DVector::from_vec(vec![-2.0, 0.0])).amax() < 1e-12);
    }

    #[test]
    fn common_random_numbers_share_the_stream() {
        let model = GaussianMeanModel::isotropic(1);
        let obs = simulate(
            &model,
            &ParamVec::new(vec![0.0]).unwrap(),
            5,
            Stream::new(0),
        )
        .unwrap();
        let kde = KdeLogLikelihood {
            model: &model,
            observations: &obs,
            n_sim: 200,
            bandwidth: BandwidthRule::Silverman,
        };
        let mut c = cfg(1.0, 1e-9, 0.0);
        c.common_random_numbers = true;
        // with a tiny perturbation and shared simulations the difference is smooth
        let g = spsa_gradient(&kde, &DVector::from_element(1, 0.0), &c, 1, Stream::new(3)).unwrap();
        assert!(g[0].abs() < 100.0);
        c.common_random_numbers = false;
        let g = spsa_gradient(&kde, &DVector::from_element(1, 0.0), &c, 1, Stream::new(3)).unwrap();
        assert!(g[0].abs() > 1e3);
    }

    #[test]
    fn exact_surrogate_matches_closed_form() {
        let model = GaussianMeanModel::isotropic(2);
        let obs = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let exact = ExactLogLikelihood {
            model: &model,
            observations: &obs,
        };
        // enumerate directions: for a quadratic the average is the gradient exactly
        let theta = DVector::from_vec(vec![0.2, -0.4]);
        let mut mean = DVector::zeros(2);
        let dirs = all_rademacher(2);
        for col in dirs.column_iter() {
            mean += spsa_gradient_along(
                &exact,
                &theta,
                &col.into_owned(),
                0.05,
                Stream::new(0),
                Stream::new(0),
            )
            .unwrap();
        }
        mean /= 4.0;
        let truth = DVector::from_vec(vec![1.0 - 2.0 * 0.2, 1.0 + 2.0 * 0.4]);
        assert!((mean - truth).amax() < 1e-10);
    }

    #[test]
    fn spsa_gradient_is_deterministic() {
        let model = GaussianMeanModel::isotropic(2);
        let obs = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let kde = KdeLogLikelihood {
            model: &model,
            observations: &obs,
            n_sim: 30,
            bandwidth: BandwidthRule::Silverman,
        };
        let theta = DVector::zeros(2);
        let c = cfg(1.0, 0.5, 0.0);
        let a = spsa_gradient(&kde, &theta, &c, 3, Stream::new(77)).unwrap();
        let b = spsa_gradient(&kde, &theta, &c, 3, Stream::new(77)).unwrap();
        assert_eq!(a, b);
    }
}
