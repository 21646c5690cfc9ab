//! Experiment config files: TOML parsed straight into [`ExperimentConfig`].

use std::path::Path;

use efl::experiment::ExperimentConfig;
use efl::Variant;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Reads and validates a config file.
pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text, path)
}

pub fn parse(text: &str, path: &Path) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
        CliError::Config {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    config.validate()?;
    Ok(config)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<String>,
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            config.seeds = vec![seed];
            config.train.seed = seed;
            config.dataset.seed = seed;
        }
        if let Some(v) = self.variant {
            config.variants = vec![v];
            config.train.loss.variant = v;
        }
    }
}

/// Hex SHA-256 of the effective config in canonical TOML form.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = toml::to_string(config).expect("configs always serialize");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
