mod report;

use std::fs;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use embagg_core::audit::{self, AuditError, SuiteOptions};
use embagg_core::bench::{self, BenchError, SweepSpec};
use embagg_core::config::{ConfigErrors, DeploymentConfig, TransportKind};
use embagg_core::demo::{self, DemoError, DemoReport};
use embagg_core::protocol::{Deployment, SessionError};
use embagg_core::transport::tcp::{self, TcpError, TcpOptions};

use report::{ClientReport, RunReport, ServerReport};

#[derive(Parser)]
#[command(name = "embagg", version, about = "Private aggregation of entity embeddings through a relay server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a whole deployment in one process and print results and metrics as JSON.
    Run(RunArgs),
    /// Reproduce the three-client worked example and check every step.
    Demo(DemoArgs),
    /// Sweep (N, T, d, M) in the simulator and write CSV.
    Bench(BenchArgs),
    /// Run the privacy property suite and print a JSON report.
    Audit(AuditArgs),
    /// Act as the relay server of a TCP deployment.
    Serve(ServeArgs),
    /// Act as one client of a TCP deployment.
    Client(ClientArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Deployment config, JSON or TOML (by extension).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the config seed and EMBAGG_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config schedule seed and EMBAGG_SCHEDULE_SEED.
    #[arg(long)]
    schedule_seed: Option<u64>,
}

#[derive(Args)]
struct Output {
    /// Write the report here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Sim,
    Tcp,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// `tcp` runs every party over loopback sockets in this process.
    #[arg(long, value_enum)]
    transport: Option<TransportArg>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct DemoArgs {
    /// Print the JSON report instead of the text summary.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct BenchArgs {
    /// Sweep spec, JSON or TOML. Defaults to a small built-in sweep.
    #[arg(short, long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sabotage {
    /// Clients upload unmasked shares. Needs the `sabotage` feature.
    LeakRawShares,
}

#[derive(Args)]
struct AuditArgs {
    /// Negative control: the suite must fail.
    #[arg(long, value_enum)]
    sabotage: Option<Sabotage>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Overrides the config listen address and EMBAGG_LISTEN_ADDR.
    #[arg(long)]
    listen: Option<String>,
    /// Seconds to wait for any connection or frame.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ClientArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Client id, 1..=N.
    #[arg(long)]
    id: u16,
    /// Overrides the config server address and EMBAGG_SERVER_ADDR.
    #[arg(long)]
    server: Option<String>,
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Abort(String),
    Audit(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Abort(_) => 3,
            Failure::Audit(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Abort(m) | Failure::Audit(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ConfigErrors> for Failure {
    fn from(e: ConfigErrors) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        Failure::Abort(e.to_string())
    }
}

impl From<TcpError> for Failure {
    fn from(e: TcpError) -> Self {
        Failure::Abort(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Demo(a) => demo(a),
        Command::Bench(a) => bench(a),
        Command::Audit(a) => audit(a),
        Command::Serve(a) => serve(a),
        Command::Client(a) => client(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("embagg: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

/// File, then environment, then flags.
fn load(args: &ConfigArgs) -> Result<DeploymentConfig, Failure> {
    let mut cfg = DeploymentConfig::load(&args.config)?;
    cfg.apply_env(|k| std::env::var(k).ok())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.schedule_seed {
        cfg.schedule_seed = s;
    }
    Ok(cfg)
}

fn emit(output: &Output, text: &str) -> Result<(), Failure> {
    match &output.out {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn emit_json(output: &Output, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    text.push('\n');
    emit(output, &text)
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let mut cfg = load(&a.config)?;
    match a.transport {
        Some(TransportArg::Sim) => cfg.transport = TransportKind::Sim,
        Some(TransportArg::Tcp) => cfg.transport = TransportKind::Tcp,
        None => {}
    }
    let dep = cfg.deployment()?;
    let (name, outcome) = match cfg.transport {
        TransportKind::Sim => ("sim", dep.run_simulated(cfg.schedule())?),
        TransportKind::Tcp => ("tcp", dep.run_loopback(TcpOptions::default())?),
    };
    let report = RunReport::new(&cfg, &dep, name, &outcome);
    emit_json(&a.output, &report)?;
    if report.matches_oracle {
        Ok(())
    } else {
        Err(Failure::Abort("recovered embeddings differ from the plaintext oracle".into()))
    }
}

fn demo_text(r: &DemoReport) -> String {
    let mut s = String::new();
    s.push_str("frames (type round from->to slot bytes):\n");
    for f in &r.transcript {
        let local = if f.local { " local" } else { "" };
        s.push_str(&format!(
            "  {:<22} {} {}->{} {} {}{}\n",
            f.msg_type, f.round, f.from, f.to, f.slot, f.bytes, local
        ));
    }
    s.push_str(&format!("transcript digest {}\n\nchecks:\n", r.transcript_digest));
    for c in &r.checks {
        let mark = if c.ok { "ok  " } else { "FAIL" };
        s.push_str(&format!("  {mark} {}: {}", c.name, c.actual));
        if !c.ok {
            s.push_str(&format!(" (expected {})", c.expected));
        }
        s.push('\n');
    }
    s
}

fn demo(a: DemoArgs) -> Result<(), Failure> {
    let report = demo::run_demo().map_err(|e| match e {
        DemoError::Config(c) => Failure::from(c),
        DemoError::Session(s) => Failure::from(s),
    })?;
    if a.json {
        emit_json(&a.output, &report)?;
    } else {
        emit(&a.output, &demo_text(&report))?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Audit("worked example check failed".into()))
    }
}

fn load_spec(path: &Path) -> Result<SweepSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    let spec = match &a.spec {
        Some(p) => load_spec(p)?,
        None => SweepSpec::default(),
    };
    let sweep = bench::run_sweep(&spec).map_err(|e| match e {
        BenchError::Spec(_) | BenchError::Config { .. } => Failure::Config(e.to_string()),
        BenchError::Session { .. } => Failure::Abort(e.to_string()),
    })?;
    for (n, t) in &sweep.skipped {
        eprintln!("embagg: skipping N={n}, T={t}: needs T < N/2");
    }
    let mut buf = Vec::new();
    bench::write_csv(&sweep.rows, &mut buf).map_err(|e| Failure::Io(e.to_string()))?;
    emit(&a.output, &String::from_utf8_lossy(&buf))
}

fn audit(a: AuditArgs) -> Result<(), Failure> {
    let opts = SuiteOptions {
        leak_raw_shares: matches!(a.sabotage, Some(Sabotage::LeakRawShares)),
    };
    let report = audit::run_suite(&opts).map_err(|e| match e {
        AuditError::SabotageUnavailable => Failure::Config(e.to_string()),
        e => Failure::Audit(e.to_string()),
    })?;
    emit_json(&a.output, &report)?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<_> = report
            .properties
            .iter()
            .filter(|p| p.verdict != audit::Verdict::Pass)
            .map(|p| p.name.as_str())
            .collect();
        Err(Failure::Audit(format!("failed properties: {}", failed.join(", "))))
    }
}

fn options(timeout: u64) -> TcpOptions {
    TcpOptions {
        timeout: Duration::from_secs(timeout.max(1)),
    }
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    let mut cfg = load(&a.config)?;
    if let Some(l) = a.listen {
        cfg.listen_addr = l;
    }
    let dep: Deployment = cfg.deployment()?;
    let listener = TcpListener::bind(&cfg.listen_addr)
        .map_err(|e| Failure::Config(format!("listen_addr: cannot bind {}: {e}", cfg.listen_addr)))?;
    eprintln!("embagg: serving {} clients on {}", dep.ctx.n, listener.local_addr()?);
    let mut server = dep.server();
    let run = tcp::serve(listener, &mut server, dep.ctx.n, options(a.timeout))?;
    let union = server.union().iter().map(|e| e.raw.clone()).collect();
    emit_json(&a.output, &ServerReport::new(&dep, union, &run.transcript))
}

fn client(a: ClientArgs) -> Result<(), Failure> {
    let mut cfg = load(&a.config)?;
    if let Some(s) = a.server {
        cfg.server_addr = s;
    }
    let dep = cfg.deployment()?;
    if a.id == 0 || usize::from(a.id) > dep.ctx.n {
        return Err(Failure::Config(format!("id: must be in 1..={}, got {}", dep.ctx.n, a.id)));
    }
    let mut c = dep.client(a.id).map_err(|e| Failure::Abort(e.to_string()))?;
    let run = tcp::run_client(&cfg.server_addr, &mut c, options(a.timeout))?;
    emit_json(&a.output, &ClientReport::new(&dep, a.id, &c, &run.transcript))
}
