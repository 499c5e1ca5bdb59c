use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use icms::replay::{figures, generate_dataset, run_replay, Dataset, Profile};
use icms::service::{serve, Engines, Service};
use icms::{Config, PostRegistry};

#[derive(Parser)]
#[command(name = "icms", version, about = "City management engines: serve the API, generate and replay datasets")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP API over a durable event log.
    Serve(ServeArgs),
    /// Write a synthetic dataset with its truth file.
    Generate(GenerateArgs),
    /// Replay a dataset and print the evaluation report.
    Replay(ReplayArgs),
    /// Replay a dataset and print the data behind the dashboard views.
    Report(ReplayArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Engine {
    Safety,
    Energy,
    Maintenance,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "ICMS_CONFIG")]
    config: Option<PathBuf>,
    /// Post registry (JSON array). Defaults to posts.json in the data dir.
    #[arg(long, env = "ICMS_POSTS")]
    posts: Option<PathBuf>,
    #[arg(long, env = "ICMS_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, env = "ICMS_PORT", default_value_t = 8080)]
    port: u16,
    /// Leave out an engine's routes (repeatable).
    #[arg(long, value_enum)]
    disable: Vec<Engine>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Profile as JSON; flags below override its fields.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    streets: Option<usize>,
    #[arg(long)]
    posts_per_street: Option<usize>,
    #[arg(long)]
    months: Option<u32>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    no_quiet_nights: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Config file; defaults to config.json in the dataset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train/holdout boundary (RFC 3339). Defaults to the start of the
    /// second month of data.
    #[arg(long)]
    boundary: Option<DateTime<Utc>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add wall-clock duration to the replay report.
    #[arg(long)]
    timing: bool,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), ExitCode> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| fail(1, format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_serve(args: ServeArgs) -> ExitCode {
    let config = match &args.config {
        Some(p) => match Config::load(p) {
            Ok(c) => c,
            Err(e) => return fail(3, e),
        },
        None => Config::default(),
    };
    let posts_path = args.posts.clone().unwrap_or_else(|| args.data_dir.join("posts.json"));
    let registry = match PostRegistry::load(&posts_path) {
        Ok(r) => r,
        Err(e) => return fail(2, format!("{}: {e}", posts_path.display())),
    };
    let (service, recovered) = match Service::open(config, registry, &args.data_dir) {
        Ok(s) => s,
        Err(e) => return fail(2, e),
    };
    if recovered.truncated_bytes > 0 {
        tracing::warn!(bytes = recovered.truncated_bytes, "dropped a torn final record");
    }
    let engines = Engines {
        safety: !args.disable.contains(&Engine::Safety),
        energy: !args.disable.contains(&Engine::Energy),
        maintenance: !args.disable.contains(&Engine::Maintenance),
    };
    let addr = SocketAddr::from((Ipv4Addr::UNSPECIFIED, args.port));
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(serve(Arc::new(service), engines, addr)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(1, e),
    }
}

fn run_generate(args: GenerateArgs) -> ExitCode {
    let mut profile = match &args.profile {
        Some(p) => {
            let parsed = std::fs::read_to_string(p)
                .map_err(|e| e.to_string())
                .and_then(|t| serde_json::from_str::<Profile>(&t).map_err(|e| e.to_string()));
            match parsed {
                Ok(profile) => profile,
                Err(e) => return fail(2, format!("{}: {e}", p.display())),
            }
        }
        None => Profile::default(),
    };
    if let Some(v) = args.streets {
        profile.streets = v;
    }
    if let Some(v) = args.posts_per_street {
        profile.posts_per_street = v;
    }
    if let Some(v) = args.months {
        profile.months = v;
    }
    if let Some(v) = args.noise {
        profile.noise = v;
    }
    if args.no_quiet_nights {
        profile.quiet_nights = false;
    }
    match generate_dataset(args.seed, &profile, &args.out) {
        Ok(truth) => {
            eprintln!(
                "wrote {} ({} zero blocks, {} detection clusters planted)",
                args.out.display(),
                truth.zero_blocks.len(),
                truth.detection_clusters.len()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(2, e),
    }
}

fn run_replay_cmd(args: ReplayArgs, figures_only: bool) -> ExitCode {
    let started = Instant::now();
    let result = Dataset::load(&args.data, args.config.as_deref()).and_then(|ds| run_replay(&ds, args.boundary));
    let out = match result {
        Ok(out) => out,
        Err(e) => return fail(e.exit_code() as u8, e),
    };
    let text = if figures_only {
        let mut s = serde_json::to_string_pretty(&figures(&out)).expect("figures serialize");
        s.push('\n');
        s
    } else {
        let mut report = out.report;
        if args.timing {
            report.duration_ms = Some(started.elapsed().as_millis() as u64);
        }
        report.to_canonical_json()
    };
    match emit(args.out.as_deref(), &text) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Cmd::Serve(a) => run_serve(a),
        Cmd::Generate(a) => run_generate(a),
        Cmd::Replay(a) => run_replay_cmd(a, false),
        Cmd::Report(a) => run_replay_cmd(a, true),
    }
}
