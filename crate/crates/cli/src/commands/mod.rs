//! Subcommand drivers. Each writes its CSV/JSON files under the output
//! directory and reports how the process should exit.

use std::path::PathBuf;

use fsmle_core::Stream;

use crate::config::{BuiltModel, ConfigError, RunConfig};

pub mod bench;
pub mod bias;
pub mod coverage;
pub mod grad;
pub mod optimize;
pub mod tune;
pub mod verify;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Diverged,
    VerificationFailed,
}

#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub status: Status,
    pub message: String,
}

pub struct Ctx {
    pub config: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub model: BuiltModel,
}

/// Root streams, one per subcommand.
pub mod streams {
    pub const GRAD: u64 = 1;
    pub const OPTIMIZE: u64 = 2;
    pub const TUNE: u64 = 3;
    pub const COVERAGE: u64 = 4;
    pub const BIAS: u64 = 5;
    pub const BENCH: u64 = 6;
    pub const VERIFY: u64 = 7;
}

impl Ctx {
    pub fn new(config: RunConfig) -> anyhow::Result<Self> {
        let model = config.model.build()?;
        Ok(Self {
            hash: config.hash(),
            out: config.output.clone(),
            model,
            config,
        })
    }

    pub fn stream(&self, command: u64) -> Stream {
        Stream::new(self.config.seed).child(command)
    }

    pub fn require_gaussian(
        &self,
        command: &str,
    ) -> anyhow::Result<&fsmle_core::GaussianMeanModel> {
        self.model.gaussian().ok_or_else(|| {
            ConfigError {
                path: "model".into(),
                message: format!("`{command}` needs the Gaussian model (closed-form oracle)"),
            }
            .into()
        })
    }
}
