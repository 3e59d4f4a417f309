use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Subcommand;
use clustergate_core::vault::{Capability, PolicyDoc, PolicyRule, Role, SealStatus, DEFAULT_TOKEN_TTL};
use clustergate_server::RemoteVault;
use serde::Deserialize;

use crate::config::{CliConfig, OutputFormat};
use crate::{print_json, read_dir_files, usage, vault_failure, Failure, EXIT_OK, EXIT_VAULT};

#[derive(Subcommand, Debug)]
pub enum VaultCommand {
    /// Initialize the vault and print the unseal shares and root token.
    Init {
        #[arg(long, default_value_t = clustergate_core::vault::DEFAULT_SHARES)]
        shares: u8,
        #[arg(long, default_value_t = clustergate_core::vault::DEFAULT_THRESHOLD)]
        threshold: u8,
        /// Also write the root token to this file (mode 0600).
        #[arg(long)]
        token_out: Option<PathBuf>,
    },
    /// Submit unseal shares read from standard input, one per line.
    Unseal,
    /// Show seal state; exits 5 unless initialized and unsealed.
    Status,
    Seal,
    #[command(subcommand)]
    Kv(KvCommand),
    #[command(subcommand)]
    Policy(PolicyCommand),
    #[command(subcommand)]
    Role(RoleCommand),
    /// Log in as a service account and print the issued token.
    Login {
        #[arg(long)]
        role: Option<String>,
        #[arg(long)]
        service_account: String,
        #[arg(long)]
        namespace: String,
        /// Write the token to this file (mode 0600) instead of printing it.
        #[arg(long)]
        token_out: Option<PathBuf>,
    },
    /// Store every file of a directory as one secret and create the matching
    /// read policy and role.
    CreateSecrets {
        #[arg(long)]
        namespace: String,
        #[arg(long)]
        service: String,
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum KvCommand {
    /// Write a new version: `kv put cmsweb/crab/app key=value key2=@file`.
    Put {
        path: String,
        #[arg(required = true)]
        pairs: Vec<String>,
    },
    Get {
        path: String,
        #[arg(long)]
        version: Option<u64>,
    },
}

#[derive(Subcommand, Debug)]
pub enum PolicyCommand {
    /// Create or replace a policy from `--rule PATTERN=cap,cap` flags or a
    /// JSON file with a `rules` list.
    Write {
        name: String,
        #[arg(long = "rule")]
        rules: Vec<String>,
        #[arg(short = 'f', long = "file")]
        file: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum RoleCommand {
    Write {
        name: String,
        #[arg(long = "service-account", required = true)]
        service_accounts: Vec<String>,
        #[arg(long = "namespace", required = true)]
        namespaces: Vec<String>,
        #[arg(long = "policy", required = true)]
        policies: Vec<String>,
        /// Token lifetime in seconds.
        #[arg(long, default_value_t = DEFAULT_TOKEN_TTL)]
        ttl: u64,
    },
}

fn client(cfg: &CliConfig) -> Result<RemoteVault, Failure> {
    RemoteVault::new(cfg.vault_addr()).map_err(vault_failure)
}

fn authed(cfg: &CliConfig) -> Result<RemoteVault, Failure> {
    let path = cfg
        .vault_token_file
        .as_deref()
        .ok_or_else(|| usage(anyhow!("--vault-token-file is required for this command")))?;
    let token = std::fs::read_to_string(path)
        .with_context(|| format!("reading token file {}", path.display()))
        .map_err(usage)?;
    Ok(client(cfg)?.with_token(token.trim()))
}

fn write_secret_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    let mut options = std::fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    std::os::unix::fs::OpenOptionsExt::mode(&mut options, 0o600);
    let mut file = options.open(path).with_context(|| format!("writing {}", path.display()))?;
    writeln!(file, "{contents}")?;
    Ok(())
}

fn print_status(cfg: &CliConfig, status: &SealStatus) {
    match cfg.output_format {
        OutputFormat::Json => print_json(status),
        OutputFormat::Table => {
            println!("initialized: {}", status.initialized);
            println!("sealed:      {}", status.sealed);
            if status.initialized {
                println!("threshold:   {} of {}", status.threshold, status.shares);
                println!("progress:    {}", status.progress);
            }
        }
    }
}

pub fn run(cfg: &CliConfig, command: VaultCommand) -> Result<u8, Failure> {
    match command {
        VaultCommand::Init { shares, threshold, token_out } => {
            let init = client(cfg)?.init(shares, threshold).map_err(vault_failure)?;
            if let Some(path) = token_out {
                write_secret_file(&path, &init.root_token).map_err(usage)?;
            }
            match cfg.output_format {
                OutputFormat::Json => print_json(&init),
                OutputFormat::Table => {
                    for (i, share) in init.shares.iter().enumerate() {
                        println!("unseal share {}: {share}", i + 1);
                    }
                    println!("root token: {}", init.root_token);
                }
            }
        }
        VaultCommand::Unseal => {
            let vault = client(cfg)?;
            let mut status = vault.status().map_err(vault_failure)?;
            for line in io::stdin().lock().lines() {
                let line = line.map_err(usage)?;
                let share = line.trim();
                if share.is_empty() || !status.sealed {
                    continue;
                }
                status = vault.unseal(share).map_err(vault_failure)?;
            }
            print_status(cfg, &status);
        }
        VaultCommand::Status => {
            let status = client(cfg)?.status().map_err(vault_failure)?;
            print_status(cfg, &status);
            if !status.initialized || status.sealed {
                return Ok(EXIT_VAULT);
            }
        }
        VaultCommand::Seal => authed(cfg)?.seal().map_err(vault_failure)?,
        VaultCommand::Kv(KvCommand::Put { path, pairs }) => {
            let (mount, rest) = split_path(&path)?;
            let mut data = BTreeMap::new();
            for pair in pairs {
                let (k, v) = parse_pair(&pair).map_err(usage)?;
                data.insert(k, v);
            }
            let version = authed(cfg)?.kv_put(mount, rest, &data).map_err(vault_failure)?;
            match cfg.output_format {
                OutputFormat::Json => print_json(&serde_json::json!({ "path": path, "version": version })),
                OutputFormat::Table => println!("{path}: version {version}"),
            }
        }
        VaultCommand::Kv(KvCommand::Get { path, version }) => {
            let (mount, rest) = split_path(&path)?;
            let data = authed(cfg)?.kv_get(mount, rest, version).map_err(vault_failure)?;
            match cfg.output_format {
                OutputFormat::Json => print_json(&data),
                OutputFormat::Table => {
                    let width = data.keys().map(String::len).max().unwrap_or(0);
                    for (k, v) in &data {
                        println!("{k:<width$}  {v}");
                    }
                }
            }
        }
        VaultCommand::Policy(PolicyCommand::Write { name, rules, file }) => {
            let doc = build_policy(name, &rules, file.as_deref()).map_err(usage)?;
            authed(cfg)?.put_policy(&doc).map_err(vault_failure)?;
            println!("policy {} written", doc.name);
        }
        VaultCommand::Role(RoleCommand::Write { name, service_accounts, namespaces, policies, ttl }) => {
            let role = Role {
                name,
                bound_service_accounts: service_accounts,
                bound_namespaces: namespaces,
                policies,
                token_ttl: ttl,
            };
            role.validate().map_err(usage)?;
            authed(cfg)?.put_role(&role).map_err(vault_failure)?;
            println!("role {} written", role.name);
        }
        VaultCommand::Login { role, service_account, namespace, token_out } => {
            let issued = client(cfg)?
                .login(role.as_deref(), &service_account, &namespace)
                .map_err(vault_failure)?;
            match token_out {
                Some(path) => {
                    write_secret_file(&path, &issued.token).map_err(usage)?;
                    println!("token written to {}", path.display());
                }
                None => match cfg.output_format {
                    OutputFormat::Json => print_json(&issued),
                    OutputFormat::Table => println!("{}", issued.token),
                },
            }
        }
        VaultCommand::CreateSecrets { namespace, service, dir } => {
            let files = read_dir_files(&dir).map_err(usage)?;
            let bundle = authed(cfg)?.create_secrets(&namespace, &service, &files).map_err(vault_failure)?;
            match cfg.output_format {
                OutputFormat::Json => print_json(&bundle),
                OutputFormat::Table => {
                    println!("secret: {} (version {})", bundle.secret_path, bundle.version);
                    println!("policy: {}", bundle.policy_name);
                    println!("role:   {}", bundle.role_name);
                }
            }
        }
    }
    Ok(EXIT_OK)
}

fn split_path(path: &str) -> Result<(&str, &str), Failure> {
    path.split_once('/')
        .filter(|(m, r)| !m.is_empty() && !r.is_empty())
        .ok_or_else(|| usage(anyhow!("path {path:?} must be <mount>/<path>")))
}

fn parse_pair(pair: &str) -> anyhow::Result<(String, String)> {
    let (key, value) = pair.split_once('=').ok_or_else(|| anyhow!("expected key=value, got {pair:?}"))?;
    if key.is_empty() {
        return Err(anyhow!("empty key in {pair:?}"));
    }
    let value = match value.strip_prefix('@') {
        Some(file) => std::fs::read_to_string(file).with_context(|| format!("reading {file}"))?,
        None => value.to_string(),
    };
    Ok((key.to_string(), value))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct PolicyFile {
    rules: Vec<PolicyRule>,
    #[serde(default)]
    rate_limit: Option<String>,
}

fn build_policy(name: String, flags: &[String], file: Option<&Path>) -> anyhow::Result<PolicyDoc> {
    let mut doc = PolicyDoc { name, rules: Vec::new(), rate_limit: None };
    if let Some(path) = file {
        let text = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let parsed: PolicyFile = serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))?;
        doc.rules = parsed.rules;
        doc.rate_limit = parsed.rate_limit;
    }
    for flag in flags {
        let (path, caps) = flag.split_once('=').ok_or_else(|| anyhow!("expected PATTERN=cap,cap, got {flag:?}"))?;
        let capabilities = caps
            .split(',')
            .map(|c| c.trim().parse::<Capability>())
            .collect::<Result<BTreeSet<_>, _>>()?;
        doc.rules.push(PolicyRule { path: path.to_string(), capabilities });
    }
    doc.validate()?;
    Ok(doc)
}
