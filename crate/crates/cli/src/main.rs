mod config;
mod vault_cmd;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use clustergate_core::constraints::{
    load_constraints_dir, review, AuditReport, Operation, ReviewRequest, TemplateRegistry,
};
use clustergate_core::model::{parse_manifests, ClusterState, Format, Manifest};
use clustergate_core::netpol::{evaluate, Endpoint, Protocol, TrafficQuery, Verdict};
use clustergate_core::vault::{InjectorConfig, SecretBackend, Vault};
use clustergate_server::{Admission, RemoteVault, TlsFiles};

use config::{CliConfig, FileConfig, OutputFormat};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_TRAFFIC_DENIED: u8 = 3;
pub const EXIT_VALIDATION_DENIED: u8 = 4;
pub const EXIT_VAULT: u8 = 5;

/// Cluster security policy engine: network policy simulation, admission
/// constraints and audit, and a secrets vault.
#[derive(Parser, Debug)]
#[command(name = "clustergate", version)]
struct Cli {
    /// TOML config file with stateFile, constraintsDir, vaultAddr,
    /// vaultTokenFile and outputFormat keys.
    #[arg(long, env = "CLUSTERGATE_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// Cluster state fixture (JSON).
    #[arg(long = "state", env = "CLUSTERGATE_STATE", global = true)]
    state_file: Option<PathBuf>,
    /// Directory of constraint files.
    #[arg(long = "constraints", env = "CLUSTERGATE_CONSTRAINTS", global = true)]
    constraints_dir: Option<PathBuf>,
    /// Base URL of the vault API.
    #[arg(long, env = "CLUSTERGATE_VAULT_ADDR", global = true)]
    vault_addr: Option<String>,
    /// File holding the vault token to present.
    #[arg(long, env = "CLUSTERGATE_VAULT_TOKEN_FILE", global = true)]
    vault_token_file: Option<PathBuf>,
    #[arg(long, value_enum, env = "CLUSTERGATE_FORMAT", global = true)]
    format: Option<OutputFormat>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decide whether traffic between two endpoints is allowed.
    Simulate(SimulateArgs),
    /// Review manifests against the constraint set.
    Validate(ValidateArgs),
    /// Report constraint violations across the cluster state.
    Audit,
    /// Run the admission webhook (and optionally the vault API).
    Serve(ServeArgs),
    /// Vault administration.
    #[command(subcommand)]
    Vault(vault_cmd::VaultCommand),
    /// Dry-run secret injection for a pod manifest.
    Inject(InjectArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Source: <namespace>/<pod> or an IPv4 address.
    #[arg(long)]
    from: String,
    /// Destination: <namespace>/<pod> or an IPv4 address.
    #[arg(long)]
    to: String,
    #[arg(long)]
    port: u16,
    #[arg(long, default_value = "tcp")]
    protocol: Protocol,
    /// Print the per-policy evaluation trace.
    #[arg(long)]
    explain: bool,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Manifest file (YAML or JSON, may hold several documents).
    #[arg(short = 'f', long = "file")]
    file: PathBuf,
    #[arg(long, value_enum, default_value = "create")]
    operation: OperationArg,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum OperationArg {
    Create,
    Update,
    Delete,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, env = "CLUSTERGATE_ADDR", default_value = "127.0.0.1:8200")]
    addr: SocketAddr,
    #[arg(long, env = "CLUSTERGATE_TLS_CERT", requires = "tls_key")]
    tls_cert: Option<PathBuf>,
    #[arg(long, env = "CLUSTERGATE_TLS_KEY", requires = "tls_cert")]
    tls_key: Option<PathBuf>,
    /// Record admitted objects so `/audit` reflects them.
    #[arg(long)]
    track_admitted: bool,
    /// Admit on internal errors. For lab use only.
    #[arg(long)]
    fail_open: bool,
    /// Host a vault backed by this storage file and serve its API under /v1.
    #[arg(long, env = "CLUSTERGATE_VAULT_FILE", conflicts_with = "vault_addr")]
    vault_file: Option<PathBuf>,
    /// Append vault audit records as JSON lines to this file.
    #[arg(long, requires = "vault_file")]
    vault_audit_log: Option<PathBuf>,
    #[arg(long, env = "CLUSTERGATE_AGENT_IMAGE")]
    agent_image: Option<String>,
}

#[derive(Args, Debug)]
struct InjectArgs {
    /// Pod manifest.
    #[arg(short = 'f', long = "file")]
    file: PathBuf,
    /// Write rendered secret files into this directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, env = "CLUSTERGATE_AGENT_IMAGE")]
    agent_image: Option<String>,
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_USAGE, error: error.into() }
}

pub fn vault_failure(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_VAULT, error: error.into() }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path).map_err(usage)?,
        None => FileConfig::default(),
    };
    let cfg = CliConfig::resolve(file, cli.state_file, cli.constraints_dir, cli.vault_addr, cli.vault_token_file, cli.format);
    match cli.command {
        Command::Simulate(args) => simulate(&cfg, args),
        Command::Validate(args) => validate(&cfg, args),
        Command::Audit => audit_cmd(&cfg),
        Command::Serve(args) => serve(&cfg, args),
        Command::Vault(cmd) => vault_cmd::run(&cfg, cmd),
        Command::Inject(args) => inject_cmd(&cfg, args),
    }
}

fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, Failure> {
    value.as_deref().ok_or_else(|| usage(anyhow!("{what} is required")))
}

fn load_state(cfg: &CliConfig) -> Result<ClusterState, Failure> {
    let path = require(&cfg.state_file, "--state")?;
    ClusterState::load(path).with_context(|| format!("loading {}", path.display())).map_err(usage)
}

fn load_constraints(cfg: &CliConfig) -> Result<Vec<clustergate_core::constraints::Constraint>, Failure> {
    let dir = require(&cfg.constraints_dir, "--constraints")?;
    load_constraints_dir(dir, &TemplateRegistry::default()).map_err(usage)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(value).expect("output serializes"));
}

fn simulate(cfg: &CliConfig, args: SimulateArgs) -> Outcome {
    let state = load_state(cfg)?;
    let src: Endpoint = args.from.parse().map_err(usage)?;
    let dst: Endpoint = args.to.parse().map_err(usage)?;
    let query = TrafficQuery { src, dst, port: args.port, protocol: args.protocol };
    let verdict = evaluate(&state, &query).map_err(usage)?;
    match cfg.output_format {
        OutputFormat::Json => print_json(&verdict),
        OutputFormat::Table => print!("{}", verdict_table(&query, &verdict, args.explain)),
    }
    Ok(if verdict.allowed { EXIT_OK } else { EXIT_TRAFFIC_DENIED })
}

fn verdict_table(query: &TrafficQuery, verdict: &Verdict, explain: bool) -> String {
    let word = |ok: bool| if ok { "allow" } else { "deny" };
    let mut out = format!(
        "{} {} -> {} {}/{}\n  egress:  {}\n  ingress: {}\n",
        word(verdict.allowed).to_uppercase(),
        query.src,
        query.dst,
        query.protocol,
        query.port,
        word(verdict.egress_allowed),
        word(verdict.ingress_allowed),
    );
    if explain {
        if verdict.trace.is_empty() {
            out.push_str("  no policy selects either endpoint\n");
        }
        for t in &verdict.trace {
            let rule = t.rule.map_or_else(|| "-".to_string(), |r| r.to_string());
            let _ = writeln!(
                out,
                "  {:<8} {:<32} rule {:<3} {}",
                t.direction.to_string(),
                t.policy,
                rule,
                if t.matched { "matched" } else { "no match" }
            );
        }
    }
    out
}

fn validate(cfg: &CliConfig, args: ValidateArgs) -> Outcome {
    let constraints = load_constraints(cfg)?;
    let bytes = std::fs::read(&args.file).with_context(|| format!("reading {}", args.file.display())).map_err(usage)?;
    let manifests = parse_manifests(&bytes, Format::from_path(&args.file)).map_err(usage)?;
    let operation = match args.operation {
        OperationArg::Create => Operation::Create,
        OperationArg::Update => Operation::Update,
        OperationArg::Delete => Operation::Delete,
    };
    let mut denied = 0;
    let mut reviewed = 0;
    for manifest in manifests {
        if matches!(manifest, Manifest::NetworkPolicy(_)) {
            continue;
        }
        let object = manifest.into_resource().map_err(usage)?;
        let old = (operation != Operation::Create).then(|| object.clone());
        let request = ReviewRequest::new(operation, object, old).map_err(|e| usage(anyhow!(e)))?;
        let decision = review(&request, &constraints);
        reviewed += 1;
        for v in &decision.violations {
            print_json(v);
        }
        if !decision.allowed {
            denied += 1;
        }
    }
    if cfg.output_format == OutputFormat::Table {
        eprintln!("{reviewed} object(s) reviewed, {denied} denied");
    }
    Ok(if denied > 0 { EXIT_VALIDATION_DENIED } else { EXIT_OK })
}

fn audit_cmd(cfg: &CliConfig) -> Outcome {
    let state = load_state(cfg)?;
    let constraints = load_constraints(cfg)?;
    let report = clustergate_core::constraints::audit(&state, &constraints);
    match cfg.output_format {
        OutputFormat::Json => print_json(&report),
        OutputFormat::Table => print!("{}", audit_table(&report)),
    }
    Ok(EXIT_OK)
}

fn audit_table(report: &AuditReport) -> String {
    let mut rows = vec![["CONSTRAINT", "ACTION", "KIND", "NAMESPACE", "NAME", "MESSAGE"].map(String::from)];
    for v in report.violations() {
        rows.push([
            v.constraint_name.clone(),
            v.enforcement_action.to_string(),
            v.object_ref.kind.clone(),
            v.object_ref.namespace.clone(),
            v.object_ref.name.clone(),
            v.message.clone(),
        ]);
    }
    let mut widths = [0usize; 6];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    let _ = writeln!(out, "total: {}", report.total);
    out
}

fn serve(cfg: &CliConfig, args: ServeArgs) -> Outcome {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .try_init();
    let dir = require(&cfg.constraints_dir, "--constraints")?;
    let mut admission = Admission::from_dir(dir).map_err(usage)?.fail_open(args.fail_open);
    if cfg.state_file.is_some() {
        admission = admission.with_state(load_state(cfg)?);
    }
    if args.track_admitted {
        admission = admission.track_admitted();
    }
    let mut injector = InjectorConfig::default();
    if let Some(image) = args.agent_image {
        injector.agent_image = image;
    }
    let local = match &args.vault_file {
        Some(path) => {
            let mut vault = Vault::open_file(path).map_err(vault_failure)?;
            if let Some(log) = &args.vault_audit_log {
                vault = vault.with_audit_file(log).map_err(usage)?;
            }
            Some(Arc::new(vault))
        }
        None => None,
    };
    let backend: Option<Arc<dyn SecretBackend>> = match (&local, &cfg.vault_addr) {
        (Some(v), _) => Some(v.clone()),
        (None, Some(addr)) => Some(Arc::new(RemoteVault::new(addr).map_err(vault_failure)?)),
        (None, None) => None,
    };
    if let Some(b) = backend {
        admission = admission.with_secrets(b, injector);
    }
    let tls = args.tls_cert.zip(args.tls_key).map(|(cert, key)| TlsFiles { cert, key });
    let router = clustergate_server::router(Arc::new(admission), local);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure { code: 1, error: e.into() })?;
    runtime
        .block_on(clustergate_server::serve(router, args.addr, tls, |addr| {
            eprintln!("listening on {addr}");
        }))
        .map_err(|e| Failure { code: 1, error: anyhow!(e).context("server failed") })?;
    Ok(EXIT_OK)
}

fn inject_cmd(cfg: &CliConfig, args: InjectArgs) -> Outcome {
    let bytes = std::fs::read(&args.file).with_context(|| format!("reading {}", args.file.display())).map_err(usage)?;
    let pod = match clustergate_core::model::parse_manifest(&bytes, Format::from_path(&args.file)).map_err(usage)? {
        Manifest::Pod(p) => p,
        other => return Err(usage(anyhow!("expected a Pod manifest, found {}", other.kind()))),
    };
    let backend = RemoteVault::new(cfg.vault_addr()).map_err(vault_failure)?;
    let mut injector = InjectorConfig::default();
    if let Some(image) = args.agent_image {
        injector.agent_image = image;
    }
    let injection = clustergate_core::vault::inject(&pod, &backend, &injector).map_err(vault_failure)?;
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(usage)?;
        for (name, content) in &injection.files {
            std::fs::write(dir.join(name), content).map_err(usage)?;
        }
    }
    let files: Vec<&String> = injection.files.keys().collect();
    let manifest = clustergate_core::model::manifest::pod_value(&injection.pod);
    match cfg.output_format {
        OutputFormat::Json => print_json(&serde_json::json!({
            "changed": injection.changed,
            "files": files,
            "pod": manifest,
        })),
        OutputFormat::Table => {
            let containers: Vec<&str> = injection.pod.spec.containers.iter().map(|c| c.name.as_str()).collect();
            let mut out = io::stdout().lock();
            let _ = writeln!(out, "pod:        {}", injection.pod.pod_ref());
            let _ = writeln!(out, "changed:    {}", injection.changed);
            let _ = writeln!(out, "containers: {}", containers.join(", "));
            let names: Vec<&str> = files.iter().map(|s| s.as_str()).collect();
            let _ = writeln!(out, "files:      {}", names.join(", "));
        }
    }
    Ok(EXIT_OK)
}

/// Regular files of `dir`, not recursing and not following symlinks.
pub fn read_dir_files(dir: &Path) -> anyhow::Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().into_string().map_err(|n| anyhow!("file name {n:?} is not UTF-8"))?;
        files.insert(name, std::fs::read(entry.path())?);
    }
    if files.is_empty() {
        return Err(anyhow!("{} contains no regular files", dir.display()));
    }
    Ok(files)
}
