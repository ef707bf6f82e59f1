//! JSON run configuration.
//!
//! Every block has defaults, so `{}` is a valid config describing the
//! bivariate Gaussian setup with 10 observations around a true mean of ones.

use std::path::PathBuf;

use fsmle_core::fsm::{FitOptions, Ridge};
use fsmle_core::inference::ScoreSource;
use fsmle_core::kdesp::{BandwidthRule, KdeSpConfig};
use fsmle_core::model::{GaussianMeanModel, ParamVec, ShiftedExponentialModel, SimulatorModel};
use fsmle_core::optimize::{
    fsm_grid, kdesp_grid, FsmSettings, GradientMethod, Hyper, OptConfig, UpdateRule,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "invalid config: {}", self.message)
        } else {
            write!(f, "invalid config at `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_n_obs")]
    pub n_obs: usize,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub experiments: Experiments,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_n_obs() -> usize {
    10
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config parses")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Gaussian {
        dim: usize,
        /// Diagonal covariance; identity when absent.
        #[serde(default)]
        variances: Option<Vec<f64>>,
        /// True parameter; ones when absent.
        #[serde(default)]
        truth: Option<Vec<f64>>,
    },
    ShiftedExponential {
        #[serde(default = "one")]
        rate: f64,
        truth: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Gaussian {
            dim: 2,
            variances: None,
            truth: None,
        }
    }
}

/// Concrete model built from a [`ModelConfig`].
#[derive(Debug)]
pub enum BuiltModel {
    Gaussian(GaussianMeanModel),
    ShiftedExponential(ShiftedExponentialModel),
}

impl BuiltModel {
    pub fn as_dyn(&self) -> &dyn SimulatorModel {
        match self {
            BuiltModel::Gaussian(m) => m,
            BuiltModel::ShiftedExponential(m) => m,
        }
    }

    pub fn gaussian(&self) -> Option<&GaussianMeanModel> {
        match self {
            BuiltModel::Gaussian(m) => Some(m),
            BuiltModel::ShiftedExponential(_) => None,
        }
    }
}

impl ModelConfig {
    pub fn param_dim(&self) -> usize {
        match self {
            ModelConfig::Gaussian { dim, .. } => *dim,
            ModelConfig::ShiftedExponential { .. } => 1,
        }
    }

    pub fn build(&self) -> anyhow::Result<BuiltModel> {
        Ok(match self {
            ModelConfig::Gaussian { dim, variances, .. } => match variances {
                Some(v) => BuiltModel::Gaussian(GaussianMeanModel::diagonal(v)?),
                None => BuiltModel::Gaussian(GaussianMeanModel::isotropic(*dim)),
            },
            ModelConfig::ShiftedExponential { rate, .. } => {
                BuiltModel::ShiftedExponential(ShiftedExponentialModel::new(*rate)?)
            }
        })
    }

    pub fn truth(&self) -> anyhow::Result<ParamVec> {
        Ok(match self {
            ModelConfig::Gaussian { dim, truth, .. } => match truth {
                Some(t) => ParamVec::new(t.clone())?,
                None => ParamVec::from_element(*dim, 1.0)?,
            },
            ModelConfig::ShiftedExponential { truth, .. } => ParamVec::new(vec![*truth])?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BandwidthConfig {
    Silverman,
    Scott,
    Fixed(f64),
}

impl From<BandwidthConfig> for BandwidthRule {
    fn from(b: BandwidthConfig) -> Self {
        match b {
            BandwidthConfig::Silverman => BandwidthRule::Silverman,
            BandwidthConfig::Scott => BandwidthRule::Scott,
            BandwidthConfig::Fixed(h) => BandwidthRule::Fixed(h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsmConfig {
    pub sigma: f64,
    pub m: usize,
    #[serde(default = "one_usize")]
    pub n: usize,
    /// Relative ridge, scaled by the mean Gram diagonal.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "yes")]
    pub affine: bool,
    #[serde(default)]
    pub standardize: bool,
}

fn one_usize() -> usize {
    1
}

fn default_ridge() -> f64 {
    1e-6
}

fn yes() -> bool {
    true
}

impl FsmConfig {
    pub fn settings(&self) -> FsmSettings {
        FsmSettings {
            sigma: self.sigma,
            m: self.m,
            n: self.n,
            fit: FitOptions {
                ridge: Ridge::Relative(self.ridge),
                affine: self.affine,
                standardize: self.standardize,
            },
        }
    }

    fn validate(&self, path: &str) -> Result<(), ConfigError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(
                &format!("{path}.sigma"),
                format!("sigma must be > 0, got {}", self.sigma),
            ));
        }
        if self.m == 0 || self.n == 0 {
            return Err(invalid(path, "m and n must be >= 1"));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(invalid(&format!("{path}.ridge"), "ridge must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdeSpConfigBlock {
    pub a: f64,
    pub c: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Stability constant; `floor(0.1 T)` when absent.
    #[serde(default)]
    pub big_a: Option<f64>,
    pub n_sim: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: BandwidthConfig,
    #[serde(default = "yes")]
    pub common_random_numbers: bool,
}

fn default_gamma() -> f64 {
    1.0 / 6.0
}

fn default_bandwidth() -> BandwidthConfig {
    BandwidthConfig::Silverman
}

impl KdeSpConfigBlock {
    pub fn build(&self, iterations: usize) -> anyhow::Result<KdeSpConfig> {
        let mut cfg = KdeSpConfig::new(self.a, self.c, iterations, self.n_sim)?;
        cfg.alpha = self.alpha;
        cfg.gamma = self.gamma;
        if let Some(a) = self.big_a {
            cfg.big_a = a;
        }
        cfg.bandwidth = self.bandwidth.into();
        cfg.common_random_numbers = self.common_random_numbers;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Fsm(FsmConfig),
    Kdesp(KdeSpConfigBlock),
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig::Fsm(FsmConfig {
            sigma: 0.1,
            m: 1000,
            n: 1,
            ridge: default_ridge(),
            affine: true,
            standardize: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleConfig {
    Sgd,
    Adam,
    Rmsprop,
}

impl From<RuleConfig> for UpdateRule {
    fn from(r: RuleConfig) -> Self {
        match r {
            RuleConfig::Sgd => UpdateRule::Sgd,
            RuleConfig::Adam => UpdateRule::adam(),
            RuleConfig::Rmsprop => UpdateRule::rmsprop(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_rule")]
    pub rule: RuleConfig,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_window")]
    pub avg_window: usize,
    /// Zeros when absent.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
}

fn default_rule() -> RuleConfig {
    RuleConfig::Adam
}

fn default_eta() -> f64 {
    0.1
}

fn default_iterations() -> usize {
    100
}

fn default_window() -> usize {
    50
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            rule: default_rule(),
            eta: default_eta(),
            iterations: default_iterations(),
            avg_window: default_window(),
            theta0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperConfig {
    Fsm { sigma: f64, eta: f64 },
    Kdesp { a: f64, c: f64 },
}

impl From<HyperConfig> for Hyper {
    fn from(h: HyperConfig) -> Self {
        match h {
            HyperConfig::Fsm { sigma, eta } => Hyper::Fsm { sigma, eta },
            HyperConfig::Kdesp { a, c } => Hyper::KdeSp { a, c },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradExperiment {
    /// Total simulations per gradient estimate.
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    /// Samples per parameter draw for FSM; `m = budget / fsm_n`.
    #[serde(default = "one_usize")]
    pub fsm_n: usize,
    #[serde(default = "default_fsm_sigmas")]
    pub fsm_sigmas: Vec<f64>,
    /// KDE-SP perturbation sizes; `n_sim = budget / 2` per side.
    #[serde(default = "default_kdesp_cs")]
    pub kdesp_cs: Vec<f64>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Offset of `theta_t` from the sample MLE; 0.5 per coordinate when absent.
    /// At the MLE itself the target gradient is near zero and relative errors blow up.
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
}

fn default_budgets() -> Vec<usize> {
    vec![100, 1000, 10000]
}

fn default_fsm_sigmas() -> Vec<f64> {
    vec![1e-2, 1e-1, 1.0]
}

fn default_kdesp_cs() -> Vec<f64> {
    vec![1e-1, 1.0]
}

fn default_repeats() -> usize {
    100
}

impl Default for GradExperiment {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty block parses")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeExperiment {
    #[serde(default = "one_usize")]
    pub runs: usize,
    /// Tune hyperparameters on each run's data before the full run.
    #[serde(default)]
    pub tuned: bool,
}

impl Default for OptimizeExperiment {
    fn default() -> Self {
        Self {
            runs: 1,
            tuned: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneExperiment {
    /// Defaults to the standard grid of the configured method.
    #[serde(default)]
    pub grid: Option<Vec<HyperConfig>>,
    #[serde(default)]
    pub trial_iterations: Option<usize>,
    #[serde(default = "default_prediction_samples")]
    pub prediction_samples: usize,
}

fn default_prediction_samples() -> usize {
    1000
}

impl Default for TuneExperiment {
    fn default() -> Self {
        Self {
            grid: None,
            trial_iterations: None,
            prediction_samples: default_prediction_samples(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FimSourceConfig {
    ClosedForm,
    Fsm(FsmConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageExperiment {
    #[serde(default = "default_repeats")]
    pub runs: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_fim_samples")]
    pub fim_samples: usize,
    #[serde(default = "default_fim_source")]
    pub fim_source: FimSourceConfig,
}

fn default_level() -> f64 {
    0.95
}

fn default_fim_samples() -> usize {
    100_000
}

fn default_fim_source() -> FimSourceConfig {
    FimSourceConfig::Fsm(FsmConfig {
        sigma: 0.05,
        m: 100_000,
        n: 1,
        ridge: default_ridge(),
        affine: true,
        standardize: false,
    })
}

impl Default for CoverageExperiment {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty block parses")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasProbeExperiment {
    #[serde(default = "default_bias_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "default_bias_samples")]
    pub samples: usize,
    /// Offset of `theta_t` from the true parameter; zero when absent.
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
}

fn default_bias_sigmas() -> Vec<f64> {
    vec![0.0, 0.01, 0.1, 0.5, 1.0]
}

fn default_bias_samples() -> usize {
    10_000
}

impl Default for BiasProbeExperiment {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty block parses")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchExperiment {
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "default_bench_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_bench_reps")]
    pub repetitions: usize,
    #[serde(default = "default_bench_sigma")]
    pub sigma: f64,
    #[serde(default = "one")]
    pub kdesp_c: f64,
}

fn default_bench_dims() -> Vec<usize> {
    vec![2, 5, 10, 20]
}

fn default_bench_reps() -> usize {
    1000
}

fn default_bench_sigma() -> f64 {
    0.1
}

impl Default for BenchExperiment {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty block parses")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyExperiment {
    /// Random instances per identity check.
    #[serde(default = "default_verify_cases")]
    pub cases: usize,
}

fn default_verify_cases() -> usize {
    100
}

impl Default for VerifyExperiment {
    fn default() -> Self {
        Self {
            cases: default_verify_cases(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Experiments {
    #[serde(default)]
    pub grad: GradExperiment,
    #[serde(default)]
    pub optimize: OptimizeExperiment,
    #[serde(default)]
    pub tune: TuneExperiment,
    #[serde(default)]
    pub coverage: CoverageExperiment,
    #[serde(default)]
    pub bias_probe: BiasProbeExperiment,
    #[serde(default)]
    pub bench: BenchExperiment,
    #[serde(default)]
    pub verify: VerifyExperiment,
}

fn check_positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be > 0, got {v}")))
    }
}

fn check_len(path: &str, expected: usize, got: usize) -> Result<(), ConfigError> {
    if expected == got {
        Ok(())
    } else {
        Err(invalid(
            path,
            format!("expected {expected} entries, got {got}"),
        ))
    }
}

fn check_nonempty<T>(path: &str, v: &[T]) -> Result<(), ConfigError> {
    if v.is_empty() {
        Err(invalid(path, "must not be empty"))
    } else {
        Ok(())
    }
}

impl RunConfig {
    /// Parses and validates a JSON document, reporting the offending path.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.model.param_dim();
        match &self.model {
            ModelConfig::Gaussian {
                dim,
                variances,
                truth,
            } => {
                if *dim == 0 {
                    return Err(invalid("model.dim", "must be >= 1"));
                }
                if let Some(v) = variances {
                    check_len("model.variances", *dim, v.len())?;
                    for (i, x) in v.iter().enumerate() {
                        check_positive(&format!("model.variances[{i}]"), *x)?;
                    }
                }
                if let Some(t) = truth {
                    check_len("model.truth", *dim, t.len())?;
                }
            }
            ModelConfig::ShiftedExponential { rate, .. } => check_positive("model.rate", *rate)?,
        }
        if self.n_obs == 0 {
            return Err(invalid("n_obs", "must be >= 1"));
        }
        match &self.method {
            MethodConfig::Fsm(f) => f.validate("method")?,
            MethodConfig::Kdesp(k) => {
                check_positive("method.a", k.a)?;
                check_positive("method.c", k.c)?;
                if k.n_sim < 2 {
                    return Err(invalid("method.n_sim", "must be >= 2"));
                }
            }
        }
        let opt = &self.optimizer;
        check_positive("optimizer.eta", opt.eta)?;
        if opt.avg_window == 0 {
            return Err(invalid("optimizer.avg_window", "must be >= 1"));
        }
        if let Some(t) = &opt.theta0 {
            check_len("optimizer.theta0", d, t.len())?;
        }

        let ex = &self.experiments;
        check_nonempty("experiments.grad.budgets", &ex.grad.budgets)?;
        check_nonempty("experiments.grad.fsm_sigmas", &ex.grad.fsm_sigmas)?;
        check_nonempty("experiments.grad.kdesp_cs", &ex.grad.kdesp_cs)?;
        for (i, s) in ex.grad.fsm_sigmas.iter().enumerate() {
            check_positive(&format!("experiments.grad.fsm_sigmas[{i}]"), *s)?;
        }
        for (i, c) in ex.grad.kdesp_cs.iter().enumerate() {
            check_positive(&format!("experiments.grad.kdesp_cs[{i}]"), *c)?;
        }
        if ex.grad.fsm_n == 0 || ex.grad.repeats == 0 {
            return Err(invalid(
                "experiments.grad",
                "fsm_n and repeats must be >= 1",
            ));
        }
        for (i, b) in ex.grad.budgets.iter().enumerate() {
            if *b < ex.grad.fsm_n.max(4) {
                return Err(invalid(
                    &format!("experiments.grad.budgets[{i}]"),
                    "budget must allow at least one FSM draw and two KDE samples per side",
                ));
            }
        }
        if let Some(o) = &ex.grad.offset {
            check_len("experiments.grad.offset", d, o.len())?;
        }
        if ex.optimize.runs == 0 {
            return Err(invalid("experiments.optimize.runs", "must be >= 1"));
        }
        if let Some(grid) = &ex.tune.grid {
            check_nonempty("experiments.tune.grid", grid)?;
            for (i, h) in grid.iter().enumerate() {
                let (x, y) = match h {
                    HyperConfig::Fsm { sigma, eta } => (sigma, eta),
                    HyperConfig::Kdesp { a, c } => (a, c),
                };
                check_positive(&format!("experiments.tune.grid[{i}]"), *x)?;
                check_positive(&format!("experiments.tune.grid[{i}]"), *y)?;
            }
        }
        if ex.tune.prediction_samples == 0 {
            return Err(invalid(
                "experiments.tune.prediction_samples",
                "must be >= 1",
            ));
        }
        let cov = &ex.coverage;
        if !(cov.level > 0.0 && cov.level < 1.0) {
            return Err(invalid(
                "experiments.coverage.level",
                format!("must lie in (0, 1), got {}", cov.level),
            ));
        }
        if cov.runs == 0 || cov.fim_samples == 0 {
            return Err(invalid(
                "experiments.coverage",
                "runs and fim_samples must be >= 1",
            ));
        }
        if let FimSourceConfig::Fsm(f) = &cov.fim_source {
            f.validate("experiments.coverage.fim_source")?;
        }
        check_nonempty("experiments.bias_probe.sigmas", &ex.bias_probe.sigmas)?;
        for (i, s) in ex.bias_probe.sigmas.iter().enumerate() {
            if !(*s >= 0.0 && s.is_finite()) {
                return Err(invalid(
                    &format!("experiments.bias_probe.sigmas[{i}]"),
                    "must be >= 0",
                ));
            }
        }
        if ex.bias_probe.samples == 0 {
            return Err(invalid("experiments.bias_probe.samples", "must be >= 1"));
        }
        if let Some(o) = &ex.bias_probe.offset {
            check_len("experiments.bias_probe.offset", d, o.len())?;
        }
        check_nonempty("experiments.bench.budgets", &ex.bench.budgets)?;
        check_nonempty("experiments.bench.dims", &ex.bench.dims)?;
        if ex.bench.repetitions == 0
            || ex.bench.dims.contains(&0)
            || ex.bench.budgets.iter().any(|b| *b < 4)
        {
            return Err(invalid(
                "experiments.bench",
                "repetitions, dims >= 1 and budgets >= 4 required",
            ));
        }
        check_positive("experiments.bench.sigma", ex.bench.sigma)?;
        check_positive("experiments.bench.kdesp_c", ex.bench.kdesp_c)?;
        if ex.verify.cases == 0 {
            return Err(invalid("experiments.verify.cases", "must be >= 1"));
        }
        Ok(())
    }

    /// Short digest of everything that affects results (the output
    /// directory is excluded).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..8])
    }

    pub fn theta0(&self) -> anyhow::Result<ParamVec> {
        Ok(match &self.optimizer.theta0 {
            Some(t) => ParamVec::new(t.clone())?,
            None => ParamVec::from_element(self.model.param_dim(), 0.0)?,
        })
    }

    pub fn gradient_method(&self) -> anyhow::Result<GradientMethod> {
        Ok(match &self.method {
            MethodConfig::Fsm(f) => GradientMethod::Fsm(f.settings()),
            MethodConfig::Kdesp(k) => GradientMethod::KdeSp(k.build(self.optimizer.iterations)?),
        })
    }

    pub fn opt_config(&self) -> anyhow::Result<OptConfig> {
        Ok(OptConfig {
            method: self.gradient_method()?,
            rule: self.optimizer.rule.into(),
            step_size: self.optimizer.eta,
            iterations: self.optimizer.iterations,
            avg_window: self.optimizer.avg_window,
            theta0: self.theta0()?,
        })
    }

    pub fn tune_grid(&self) -> Vec<Hyper> {
        match (&self.experiments.tune.grid, &self.method) {
            (Some(g), _) => g.iter().map(|h| (*h).into()).collect(),
            (None, MethodConfig::Fsm(_)) => fsm_grid(),
            (None, MethodConfig::Kdesp(_)) => kdesp_grid(),
        }
    }

    pub fn fim_source(&self) -> ScoreSource {
        match &self.experiments.coverage.fim_source {
            FimSourceConfig::ClosedForm => ScoreSource::ClosedForm,
            FimSourceConfig::Fsm(f) => ScoreSource::Fsm(f.settings()),
        }
    }
}
