//! Settings resolution: flag, then `CLUSTERGATE_*` environment variable
//! (both handled by clap), then the TOML config file.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Table,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FileConfig {
    pub state_file: Option<PathBuf>,
    pub constraints_dir: Option<PathBuf>,
    pub vault_addr: Option<String>,
    pub vault_token_file: Option<PathBuf>,
    pub output_format: Option<OutputFormat>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Effective settings after precedence is applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliConfig {
    pub state_file: Option<PathBuf>,
    pub constraints_dir: Option<PathBuf>,
    /// Unset means the default address is used by vault commands and no
    /// remote vault is attached by `serve`.
    pub vault_addr: Option<String>,
    pub vault_token_file: Option<PathBuf>,
    pub output_format: OutputFormat,
}

pub const DEFAULT_VAULT_ADDR: &str = "http://127.0.0.1:8200";

impl CliConfig {
    pub fn resolve(
        file: FileConfig,
        state_file: Option<PathBuf>,
        constraints_dir: Option<PathBuf>,
        vault_addr: Option<String>,
        vault_token_file: Option<PathBuf>,
        output_format: Option<OutputFormat>,
    ) -> Self {
        CliConfig {
            state_file: state_file.or(file.state_file),
            constraints_dir: constraints_dir.or(file.constraints_dir),
            vault_addr: vault_addr.or(file.vault_addr),
            vault_token_file: vault_token_file.or(file.vault_token_file),
            output_format: output_format.or(file.output_format).unwrap_or_default(),
        }
    }

    pub fn vault_addr(&self) -> &str {
        self.vault_addr.as_deref().unwrap_or(DEFAULT_VAULT_ADDR)
    }
}
