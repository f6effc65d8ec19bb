//! `grip-engine`: grasp synthesis, validation trials, benchmarks and dataset
//! reports, run through the grasp engine service. Without `--server` the
//! service is embedded on a loopback port.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use grip_client::api::*;
use grip_client::{Client, ClientError};
use grip_core::pipeline::{Config, PipelineError};

#[derive(Parser)]
#[command(name = "grip-engine", version, about = "Batched IPC grasp simulation and validation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Service URL; an embedded service is started when omitted.
    #[arg(long, global = true)]
    server: Option<String>,
    /// TOML scene and config file; the regression scene set when omitted.
    #[arg(long, global = true)]
    scene: Option<PathBuf>,
    /// Config override as a dotted key and TOML value, e.g. protocol.halt_force=60.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run environments in a fixed serial order.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Environments per batch; a comma-separated list for `bench`.
    #[arg(long, global = true, value_delimiter = ',')]
    envs: Vec<usize>,
    /// Do not print streamed status lines.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Antipodal,
    Compose,
}

#[derive(Subcommand)]
enum Command {
    /// Sample grasp candidates for every configured object.
    Synth {
        #[arg(long, value_enum, default_value = "antipodal")]
        mode: Mode,
        /// Candidates per object (per hand when composing).
        #[arg(long)]
        count: Option<usize>,
        /// Write candidates as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run validation trials and write the dataset.
    Validate {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare batched and sequential runtime over environment counts.
    Bench {
        /// Time steps per environment.
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Worker threads for batched runs; zero uses every core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Directory for speedup.csv and speedup.svg.
        #[arg(long, default_value = "bench")]
        out: PathBuf,
    },
    /// Per-trial D1 and D2 over a dataset, as CSV.
    Metrics {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate summary table and plot of a dataset.
    Report {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory for summary.csv and summary.svg; the dataset when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

/// Exit code 2 marks configuration problems.
enum Failure {
    Config(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e.api_error() {
            Some(api) if api.kind == ErrorKind::Config => Failure::Config(api.message.clone()),
            _ => Failure::Other(e.into()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(m) => Failure::Config(m),
            other => Failure::Other(other.into()),
        }
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).with_context(|| format!("resolving {}", path.display()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), String> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or("empty key")?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| format!("{p} is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(text: &str) -> toml::Value {
    // Bare words that are not TOML literals are taken as strings.
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

/// The scene file (or the regression set) with `--set` and global flag
/// overrides applied, plus the directory relative mesh paths resolve against.
fn load_config(g: &Global) -> Result<(Config, PathBuf), Failure> {
    let (text, base, origin) = match &g.scene {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let dir = absolute(path)?.parent().map(Path::to_path_buf).unwrap_or_default();
            (text, dir, path.display().to_string())
        }
        None => (Config::regression().to_toml(), absolute(Path::new("."))?, "regression scene".to_string()),
    };
    let mut config = if g.overrides.is_empty() {
        Config::from_toml(&text).map_err(|e| Failure::Config(format!("{origin}: {}", strip(e))))?
    } else {
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| Failure::Config(format!("{origin}: {e}")))?;
        for o in &g.overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Failure::Config(format!("--set {o}: expected KEY=VALUE")))?;
            set_dotted(&mut table, key.trim(), parse_value(value.trim()))
                .map_err(|e| Failure::Config(format!("--set {o}: {e}")))?;
        }
        let merged = toml::to_string(&table).map_err(|e| Failure::Other(e.into()))?;
        Config::from_toml(&merged).map_err(|e| Failure::Config(format!("{origin} with --set: {}", strip(e))))?
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
        config.scheduler.seed = seed;
    }
    if g.deterministic {
        config.scheduler.deterministic = true;
    }
    Ok((config, base))
}

fn strip(e: PipelineError) -> String {
    match e {
        PipelineError::Config(m) => m,
        other => other.to_string(),
    }
}

fn status_printer<T>(quiet: bool) -> impl FnMut(&Event<T>) {
    move |e| {
        if quiet {
            return;
        }
        let line = match e {
            Event::Batch(s) => serde_json::to_string(s),
            Event::Row(r) => serde_json::to_string(r),
            _ => return,
        };
        if let Ok(line) = line {
            eprintln!("{line}");
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

async fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Serve { bind } = cli.command {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        let addr = listener.local_addr().context("reading bound address")?;
        println!("listening on http://{addr}");
        std::io::stdout().flush().ok();
        grip_service::serve(listener).await.context("serving")?;
        return Ok(());
    }
    let g = &cli.global;
    let client = match &g.server {
        Some(url) => Client::new(url.clone()),
        None => {
            let (addr, _server) = grip_service::spawn(([127, 0, 0, 1], 0).into())
                .await
                .context("starting embedded service")?;
            Client::new(format!("http://{addr}"))
        }
    };
    match cli.command {
        Command::Synth { mode, count, out } => {
            let (config, base) = load_config(g)?;
            let req = SynthRequest {
                config,
                base,
                mode: match mode {
                    Mode::Antipodal => SynthMode::Antipodal,
                    Mode::Compose => SynthMode::Compose,
                },
                count,
            };
            let resp = client.synth(&req).await?;
            for o in &resp.objects {
                let composed = o.composition.as_ref().map_or(String::new(), |c| format!(" composed={}", c.candidates.len()));
                eprintln!("{}: candidates={} attempts={}{composed}", o.object, o.candidates.len(), o.stats.attempts);
            }
            let json = serde_json::to_string_pretty(&resp).context("encoding candidates")?;
            match out {
                Some(path) => write_file(&path, &json)?,
                None => println!("{json}"),
            }
        }
        Command::Validate { out } => {
            let (config, base) = load_config(g)?;
            let req = ValidateRequest {
                config,
                base,
                out: absolute(&out)?,
                batch_size: g.envs.first().copied().unwrap_or(0),
            };
            let resp = client.validate(&req, status_printer(g.quiet)).await?;
            let c = resp.counts;
            println!(
                "trials={} stable={} unstable={} failed={} schema_issues={}",
                c.total(),
                c.stable,
                c.unstable,
                c.failed,
                resp.issues.len()
            );
            for i in &resp.issues {
                println!("trial {}: {}", i.id, i.problems.join("; "));
            }
            println!("manifest: {}", resp.out.join("manifest.json").display());
        }
        Command::Bench { steps, threads, out } => {
            let (config, base) = load_config(g)?;
            let envs = if g.envs.is_empty() { vec![1, 8, 64] } else { g.envs.clone() };
            let req = BenchRequest {
                config,
                base,
                envs,
                steps,
                threads,
            };
            let resp = client.bench(&req, status_printer(g.quiet)).await?;
            write_file(&out.join("speedup.csv"), &resp.csv)?;
            write_file(&out.join("speedup.svg"), &resp.svg)?;
            print!("{}", resp.csv);
            println!("cores={}", resp.cores);
        }
        Command::Metrics { dataset, out } => {
            let resp = client
                .metrics(&DatasetRequest {
                    dataset: absolute(&dataset)?,
                })
                .await?;
            match out {
                Some(path) => write_file(&path, &resp.csv)?,
                None => print!("{}", resp.csv),
            }
            if !resp.changed.is_empty() {
                let list: Vec<String> = resp.changed.iter().map(|p| p.display().to_string()).collect();
                return Err(Failure::Other(anyhow::anyhow!("files differ from the manifest: {}", list.join(", "))));
            }
        }
        Command::Report { dataset, out } => {
            let dataset = absolute(&dataset)?;
            let resp = client.report(&DatasetRequest { dataset: dataset.clone() }).await?;
            let dir = out.unwrap_or(dataset);
            write_file(&dir.join("summary.csv"), &resp.csv)?;
            write_file(&dir.join("summary.svg"), &resp.svg)?;
            print!("{}", resp.csv);
            for i in &resp.issues {
                println!("trial {}: {}", i.id, i.problems.join("; "));
            }
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: invalid config: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
