use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hitl_cli::commands::{self, CliError, ReplayOptions};
use hitl_cli::server::Server;
use hitl_cli::sim_client::{run_session, SimOptions};
use hitl_core::agents::AgentKind;
use hitl_core::teacher::TeacherKind;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "hitl", version, about = "Human-in-the-loop RL experiment server and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the websocket session endpoint for the projects in a config file.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, env = "HITL_PORT", default_value_t = 5000, value_parser = clap::value_parser!(u16).range(1..))]
        port: u16,
        #[arg(long, env = "HITL_DATA_DIR", default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "info")]
        log_level: String,
    },
    /// Run a simulated participant against a live server.
    Simulate {
        #[arg(long)]
        url: String,
        #[arg(long)]
        project: String,
        #[arg(long, value_parser = parse_teacher)]
        teacher: TeacherKind,
        #[arg(long, default_value_t = 10)]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sim")]
        user: String,
        /// Write the session report here as JSON; stdout otherwise.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Connect with debug=true, which exposes observations on frames.
        #[arg(long)]
        debug: bool,
    },
    /// Print a trial log as a per-event trace.
    Replay {
        log: PathBuf,
        /// Playback speed relative to the recording; 0 prints at full speed.
        #[arg(long, default_value_t = 0.0)]
        speed: f64,
        /// Re-render every frame as a PNG into this directory.
        #[arg(long)]
        frames_dir: Option<PathBuf>,
    },
    /// Train an agent from a trial log and write its snapshot.
    TrainOffline {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_parser = parse_agent)]
        agent: AgentKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config file and report every problem found.
    ValidateConfig { config: PathBuf },
}

fn parse_teacher(s: &str) -> Result<TeacherKind, String> {
    s.parse()
}

fn parse_agent(s: &str) -> Result<AgentKind, String> {
    s.parse::<AgentKind>().map_err(|e| e.to_string())
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new("runtime", e.to_string()))
}

fn serve(config: PathBuf, bind: String, port: u16, data_dir: PathBuf, log_level: String) -> Result<(), CliError> {
    let filter = EnvFilter::try_new(&log_level).map_err(|e| CliError::new("usage", format!("log level: {e}")))?;
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    let catalog = commands::load_config(&config)?;
    let ids = catalog.ids().collect::<Vec<_>>().join(",");
    runtime()?.block_on(async move {
        let addr = format!("{bind}:{port}");
        let server = Server::start(catalog, &addr, data_dir)
            .await
            .map_err(|e| CliError::new(e.class(), e.to_string()))?;
        println!("ready listening={} projects={ids}", server.local_addr());
        let _ = std::io::stdout().flush();
        let _ = tokio::signal::ctrl_c().await;
        let open = server.shutdown().await;
        println!("shutdown finalized={open}");
        Ok(())
    })
}

fn simulate(opts: SimOptions, report: Option<PathBuf>) -> Result<(), CliError> {
    let result = runtime()?
        .block_on(run_session(opts))
        .map_err(|e| CliError::new(e.class(), e.to_string()))?;
    let json = serde_json::to_string_pretty(&result).map_err(|e| CliError::new("io", e.to_string()))?;
    match report {
        Some(path) => std::fs::write(&path, json).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?,
        None => println!("{json}"),
    }
    if result.protocol_errors > 0 {
        return Err(CliError::new("protocol", format!("{} protocol errors", result.protocol_errors)));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Serve {
            config,
            bind,
            port,
            data_dir,
            log_level,
        } => {
            drop(stdout);
            serve(config, bind, port, data_dir, log_level)
        }
        Command::Simulate {
            url,
            project,
            teacher,
            episodes,
            seed,
            user,
            report,
            debug,
        } => {
            drop(stdout);
            let mut opts = SimOptions::new(url, project, teacher, episodes);
            opts.seed = seed;
            opts.user_id = user;
            opts.debug = debug;
            simulate(opts, report)
        }
        Command::Replay { log, speed, frames_dir } => {
            let opts = ReplayOptions {
                speed,
                frames_dir,
                ..ReplayOptions::default()
            };
            commands::replay(&log, &opts, &mut stdout).map(|_| ())
        }
        Command::TrainOffline { log, agent, out } => {
            let env = commands::train_offline_cli(&log, agent, &out)?;
            writeln!(stdout, "ok agent={agent} env={env} out={}", out.display()).map_err(|e| CliError::new("io", e.to_string()))
        }
        Command::ValidateConfig { config } => commands::validate(&config, &mut stdout).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
