//! Validated run configuration.

use std::path::PathBuf;

use serde::Serialize;

use ivlate::montecarlo::{DgpSpec, StudyEstimator};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Estimate,
    Simulate,
    Stratify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PropensityChoice {
    Logistic,
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dgp: Option<String>,
    pub estimators: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub format: Format,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub no_constant: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub propensity: Option<PropensityChoice>,
}

impl RunConfig {
    pub fn parsed_estimators(&self) -> CliResult<Vec<StudyEstimator>> {
        self.estimators
            .iter()
            .map(|s| s.parse().map_err(|e: ivlate::Error| CliError::Config(e.to_string())))
            .collect()
    }

    /// Checks the cross-field requirements of each command.
    pub fn validate(&self) -> CliResult<()> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(CliError::Config(what.to_string()))
            }
        };
        match self.command {
            Command::Estimate | Command::Stratify => {
                need(self.input.is_some(), "an input CSV is required")?;
                let b = self.b.unwrap_or(0);
                need(b >= 10, "--b must be at least 10")?;
                let a = self.alpha.unwrap_or(f64::NAN);
                need(a > 0.0 && a < 1.0, "--alpha must lie in (0, 1)")?;
            }
            Command::Simulate => {
                need(self.dgp.is_some(), "--dgp is required")?;
                need(self.reps.unwrap_or(0) >= 1, "--reps must be at least 1")?;
                need(self.n.unwrap_or(0) >= 1, "--n must be at least 1")?;
            }
        }
        if self.command == Command::Stratify {
            need(self.k.unwrap_or(0) >= 1, "--k must be at least 1")?;
        } else {
            need(!self.estimators.is_empty(), "no estimators requested")?;
            self.parsed_estimators()?;
        }
        Ok(())
    }

    /// Resolves `--dgp` as a registered name or a path to a JSON spec.
    pub fn resolve_dgp(&self) -> CliResult<DgpSpec> {
        let name = self.dgp.as_deref().ok_or_else(|| CliError::Config("--dgp is required".into()))?;
        if let Some(spec) = DgpSpec::named(name) {
            return Ok(spec);
        }
        let path = std::path::Path::new(name);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {name}: {e}")))?;
            let spec: DgpSpec =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid spec {name}: {e}")))?;
            spec.validate()?;
            return Ok(spec);
        }
        Err(CliError::Config(format!("unknown dgp {name:?}: expected A, B, C, D or a JSON spec file")))
    }
}
