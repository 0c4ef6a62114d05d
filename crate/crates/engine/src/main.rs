use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use huddle::bench;
use huddle::config::Config;
use huddle::engine::EngineError;
use huddle::fixtures::{self, FixtureError, World};
use huddle::service::{MessageResponse, Service, ServiceError};
use huddle_core::store::ResultTable;

const EXIT_FAILURE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_FIXTURE: u8 = 3;

#[derive(Parser)]
#[command(name = "huddle", version, about = "Ask questions about NFL players, teams and games")]
struct Cli {
    /// TOML configuration file; HUDDLE_* variables override it.
    #[arg(long, global = true, env = "HUDDLE_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP gateway.
    Serve {
        /// Overrides `bind` from the configuration.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Ask one question, or start an interactive session when no prompt is given.
    Ask {
        prompt: Option<String>,
        /// Continue an existing conversation.
        #[arg(long)]
        conversation: Option<String>,
        /// Print the full response as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Validate a JSONL file and add it to a collection.
    Ingest { collection: String, file: PathBuf },
    /// Golden-suite benchmarking.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
    /// Print the active grammar as JSON.
    DumpGrammar,
}

#[derive(Subcommand)]
enum BenchAction {
    /// Score a golden case file or directory and record the run.
    Run {
        suite: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Show the last run and the latency histograms.
    Report {
        #[arg(long)]
        json: bool,
    },
}

enum Failure {
    Parse(String),
    Fixture(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => EXIT_PARSE,
            Failure::Fixture(_) => EXIT_FIXTURE,
            Failure::Other(_) => EXIT_FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Parse(m) | Failure::Fixture(m) | Failure::Other(m) => m,
        }
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Unparseable { .. } => {
                let mut msg = e.to_string();
                for h in e.hints() {
                    msg.push_str(&format!("\n  try: {}", h.example));
                }
                Failure::Parse(msg)
            }
            ServiceError::Engine(EngineError::Fixture(f)) => Failure::Fixture(f.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<FixtureError> for Failure {
    fn from(e: FixtureError) -> Self {
        Failure::Fixture(e.to_string())
    }
}

impl From<bench::BenchError> for Failure {
    fn from(e: bench::BenchError) -> Self {
        match e {
            bench::BenchError::Fixture(f) => Failure::Fixture(f.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

fn print_table(out: &mut impl Write, table: &ResultTable) -> std::io::Result<()> {
    let cells: Vec<Vec<String>> = table.rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect();
    let widths: Vec<usize> = table
        .columns
        .iter()
        .enumerate()
        .map(|(i, h)| cells.iter().filter_map(|r| r.get(i)).map(String::len).chain([h.len()]).max().unwrap_or(0))
        .collect();
    let line = |row: &[String]| row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ");
    writeln!(out, "  {}", line(&table.columns))?;
    for row in &cells {
        writeln!(out, "  {}", line(row))?;
    }
    Ok(())
}

fn print_response(r: &MessageResponse, json: bool) -> std::io::Result<()> {
    let mut out = std::io::stdout().lock();
    if json {
        return writeln!(out, "{}", serde_json::to_string_pretty(r).expect("response serializes"));
    }
    writeln!(out, "{}", r.answer.text)?;
    for table in &r.answer.tables {
        writeln!(out)?;
        print_table(&mut out, table)?;
    }
    for link in &r.answer.media_links {
        writeln!(out, "  {} {}", link.play_id, link.url)?;
    }
    writeln!(out, "[{}; trace {}]", r.message_id, r.trace_id)
}

fn ask(config: Config, prompt: Option<String>, conversation: Option<String>, json: bool) -> Result<(), Failure> {
    let service = Service::open(config)?;
    let conversation = match conversation {
        Some(id) => {
            service.conversation(&id)?;
            id
        }
        None => service.create_conversation()?,
    };
    if let Some(prompt) = prompt {
        let r = service.post_message(&conversation, &prompt)?;
        return print_response(&r, json).map_err(|e| Failure::Other(e.to_string()));
    }
    eprintln!("conversation {conversation}; empty line or EOF to quit");
    let stdin = std::io::stdin();
    loop {
        eprint!("> ");
        let _ = std::io::stderr().flush();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).map_err(|e| Failure::Other(e.to_string()))? == 0 {
            break;
        }
        let prompt = line.trim();
        if prompt.is_empty() {
            break;
        }
        match service.post_message(&conversation, prompt) {
            Ok(r) => print_response(&r, json).map_err(|e| Failure::Other(e.to_string()))?,
            Err(e) => eprintln!("{}", Failure::from(e).message()),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = Config::load(cli.config.as_deref()).map_err(|e| Failure::Other(e.to_string()))?;
    match cli.command {
        Command::Serve { bind } => {
            let bind = bind.unwrap_or_else(|| config.bind.clone());
            let service = Arc::new(Service::open(config)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Other(e.to_string()))?;
            rt.block_on(huddle::http::serve(service, &bind)).map_err(|e| Failure::Other(e.to_string()))
        }
        Command::Ask { prompt, conversation, json } => ask(config, prompt, conversation, json),
        Command::Ingest { collection, file } => {
            let n = fixtures::ingest_file(&config.fixtures_dir, &config.state_dir, &collection, &file)?;
            println!("ingested {n} records into {collection}");
            Ok(())
        }
        Command::Bench { action: BenchAction::Run { suite, json } } => {
            let cases = bench::load_suite(&suite)?;
            let engine = huddle::Engine::from_config(&config).map_err(|e| match e {
                EngineError::Fixture(f) => Failure::Fixture(f.to_string()),
                other => Failure::Other(other.to_string()),
            })?;
            let run = bench::run_suite(&engine, &cases)?;
            bench::save_run(&config, &run)?;
            let report = bench::report(&config)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", bench::summary(&report));
            }
            Ok(())
        }
        Command::Bench { action: BenchAction::Report { json } } => {
            let report = bench::report(&config)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", bench::summary(&report));
            }
            Ok(())
        }
        Command::DumpGrammar => {
            let world = World::load(&config.fixtures_dir, None)?;
            println!("{}", serde_json::to_string_pretty(&world.grammar).expect("grammar serializes"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("HUDDLE_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
