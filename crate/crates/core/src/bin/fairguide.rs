//! Command-line front end: pool ingestion, the HTTP service, batch
//! simulation, condition reports and log replay.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairguide::dataset::{load_csv, sample_pool, DatasetError, ProfilePool, TaskSpec};
use fairguide::service::{
    analyze, default_pool, read_log, router, run_simulation_sessions, write_log, EventStore, Service, SimulationSpec,
    StoreError,
};
use fairguide::session::{Condition, SessionReport, SessionState};
use fairguide::teaching::GuidanceConfig;

#[derive(Parser)]
#[command(name = "fairguide", version, about = "Fair machine guidance toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a CSV dataset and draw a session pool from it.
    Ingest(IngestArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Drive simulated participants through full sessions.
    Simulate(SimulateArgs),
    /// Compare conditions over simulated or collected session reports.
    Report(ReportArgs),
    /// Rebuild a session report from its event log.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct TaskArgs {
    /// Built-in task id (`income` or `credit`).
    #[arg(long, default_value = "income")]
    task: String,
    /// Task definition file; overrides `--task`.
    #[arg(long)]
    task_config: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the pool JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Seeds condition assignment and the built-in pools.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pool files from `ingest`; replace the built-in pool of their task.
    #[arg(long)]
    pool: Vec<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    task: TaskArgs,
    /// `guidance` or `feedback`.
    #[arg(long, default_value = "guidance")]
    condition: Condition,
    #[arg(long, default_value_t = 50)]
    students: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    compliance: Option<f64>,
    #[arg(long)]
    bias_strength: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Pool file from `ingest`; defaults to the built-in pool for `--seed`.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Where to write the reports JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write each session's event log into this directory.
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report files written by `simulate` (a JSON array or a single report).
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Where to write the analysis JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    log: PathBuf,
    /// Where to write the report JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn resolve_task(args: &TaskArgs) -> Result<TaskSpec, CliError> {
    match &args.task_config {
        Some(path) => Ok(TaskSpec::from_file(path)?),
        None => TaskSpec::builtin(&args.task).ok_or_else(|| invalid(format!("unknown task `{}`", args.task))),
    }
}

fn load_pool(path: &Path) -> Result<ProfilePool, CliError> {
    let pool: ProfilePool =
        serde_json::from_str(&read_text(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    pool.validate()?;
    Ok(pool)
}

fn ingest(args: IngestArgs) -> Result<(), CliError> {
    let task = resolve_task(&args.task)?;
    let profiles = load_csv(&args.csv, &task)?;
    let pool = sample_pool(&profiles, &task, args.seed)?;
    let (privileged, unprivileged) = pool.group_sizes();
    eprintln!(
        "{} rows valid; pool of {} ({privileged} privileged, {unprivileged} unprivileged)",
        profiles.len(),
        pool.profiles.len()
    );
    emit(args.out.as_deref(), &to_json(&pool))
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let mut pools = Vec::new();
    for task in [TaskSpec::income(), TaskSpec::credit()] {
        pools.push(default_pool(&task, args.seed).map_err(invalid)?);
    }
    for path in &args.pool {
        let pool = load_pool(path)?;
        pools.retain(|p| p.task.task_id != pool.task.task_id);
        pools.push(pool);
    }
    let store = EventStore::open(&args.data_dir)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let service = Service::new(store, pools, GuidanceConfig::default(), args.seed);
        let resumed = service.recover().map_err(|e| invalid(e.message))?;
        let addr = SocketAddr::from(([0, 0, 0, 0], args.port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Io(format!("{addr}: {e}")))?;
        eprintln!("listening on {addr}; {resumed} stored session(s) loaded");
        axum::serve(listener, router(service))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Io(e.to_string()))
    })
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let task = resolve_task(&args.task)?;
    let pool = match &args.pool {
        Some(path) => load_pool(path)?,
        None => default_pool(&task, args.seed).map_err(invalid)?,
    };
    let defaults = SimulationSpec::default();
    let spec = SimulationSpec {
        task_id: pool.task.task_id.clone(),
        condition: args.condition,
        n_students: args.students,
        compliance: args.compliance.unwrap_or(defaults.compliance),
        bias_strength: args.bias_strength.unwrap_or(defaults.bias_strength),
        jitter: args.jitter.unwrap_or(defaults.jitter),
        decision_noise: args.noise.unwrap_or(defaults.decision_noise),
        eta: args.eta.unwrap_or(defaults.eta),
        seed: args.seed,
        guidance: defaults.guidance,
    };
    let sessions = run_simulation_sessions(&spec, &pool).map_err(invalid)?;
    if let Some(dir) = &args.log_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for s in &sessions {
            write_log(&dir.join(format!("{}.jsonl", s.report.session_id)), &s.events)?;
        }
    }
    let reports: Vec<&SessionReport> = sessions.iter().map(|s| &s.report).collect();
    let excluded = reports.iter().filter(|r| r.excluded.is_some()).count();
    eprintln!("{} session(s) simulated, {excluded} excluded", reports.len());
    emit(args.out.as_deref(), &to_json(&reports))
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for path in &args.files {
        let text = read_text(path)?;
        let parsed: Vec<SessionReport> = serde_json::from_str(&text)
            .or_else(|_| serde_json::from_str::<SessionReport>(&text).map(|r| vec![r]))
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        reports.extend(parsed);
    }
    let analysis = analyze(&reports);
    print!("{}", analysis.pooled);
    for scope in &analysis.per_task {
        print!("{scope}");
    }
    match &args.out {
        Some(path) => emit(Some(path), &to_json(&analysis)),
        None => Ok(()),
    }
}

fn replay(args: ReplayArgs) -> Result<(), CliError> {
    let events = read_log(&args.log, false)?;
    let state = SessionState::replay_verified(&events).map_err(invalid)?;
    emit(args.out.as_deref(), &to_json(&state.finalize()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Ingest(a) => ingest(a),
        Cmd::Serve(a) => serve(a),
        Cmd::Simulate(a) => simulate(a),
        Cmd::Report(a) => report(a),
        Cmd::Replay(a) => replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
