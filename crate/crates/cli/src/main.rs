//! `foodbot` operator tool: ingestion, corpus generation, serving, demo
//! seeding and clock-stepped simulation.
//!
//! Failures print one line, `error: <kind>: <message>`, and exit 1 (2 for
//! usage errors).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use foodbot_core::clock::ClockMode;
use foodbot_core::corpus::{self, CorpusSpec};
use foodbot_core::graph::KnowledgeGraph;
use foodbot_core::jit::SchedulerConfig;
use foodbot_core::sim::{parse_script, Simulation, DEFAULT_START};
use foodbot_core::users::parse_tz_offset;
use foodbot_server::config::{parse_clock, Config};
use foodbot_server::ServerError;

#[derive(Parser, Debug)]
#[command(
    name = "foodbot",
    version,
    about = "Healthy-eating chatbot server and operator tools"
)]
struct Cli {
    /// TOML config file (also FOODBOT_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// State directory; overrides config and FOODBOT_DATA_DIR.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest a corpus into the data directory's knowledge graph.
    Ingest {
        corpus: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Write a deterministic synthetic corpus.
    GenCorpus {
        #[arg(long, default_value_t = 1000)]
        n_foods: usize,
        #[arg(long, default_value_t = 50)]
        n_restaurants: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output file; stdout if absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP/websocket server.
    Serve(ServeArgs),
    /// Create a demo user and print a session token.
    SeedDemo {
        name: String,
        /// UTC offset such as +08:00.
        #[arg(long, default_value = "+08:00", allow_hyphen_values = true)]
        tz: String,
        #[arg(long)]
        no_goals: bool,
    },
    /// Run a simulation script and write the prompt log and final state.
    Simulate {
        script: PathBuf,
        /// Corpus file; otherwise a synthetic corpus from --corpus-seed.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        corpus_seed: u64,
        #[arg(long)]
        policies: Option<PathBuf>,
        /// Directory for prompts.jsonl and final_state.json.
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    policies: Option<PathBuf>,
    /// realtime or simulated.
    #[arg(long)]
    clock: Option<String>,
    #[arg(long)]
    tick_seconds: Option<u64>,
}

const SIM_CORPUS_FOODS: usize = 500;
const SIM_CORPUS_RESTAURANTS: usize = 20;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    let serving = matches!(cli.command, Command::Serve(_));
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(if serving { "info" } else { "warn" })),
        )
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = kind(&e);
            let msg = format!("{e:#}").replace('\n', " ");
            let msg = msg.strip_prefix(&format!("{kind}: ")).unwrap_or(&msg);
            eprintln!("error: {kind}: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(s) = cause.downcast_ref::<ServerError>() {
            return s.kind();
        }
        if let Some(c) = cause.downcast_ref::<foodbot_core::Error>() {
            return c.kind();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "error"
}

/// Defaults < TOML file < environment < flags.
fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("FOODBOT_CONFIG").map(PathBuf::from));
    let mut config = match path {
        Some(p) => Config::load(&p)?,
        None => Config::default(),
    };
    config.apply_env(std::env::vars())?;
    if let Some(d) = &cli.data_dir {
        config.data_dir = d.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Ingest { corpus, lexicon } => ingest(&config, &corpus, lexicon.as_deref()),
        Command::GenCorpus {
            n_foods,
            n_restaurants,
            seed,
            out,
        } => {
            let text = corpus::generate(&CorpusSpec {
                n_foods,
                n_restaurants,
                seed,
            })?;
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Serve(args) => {
            if let Some(l) = args.listen {
                config.listen = l;
            }
            if let Some(c) = args.corpus {
                config.corpus = Some(c);
            }
            if let Some(p) = args.policies {
                config.policies = Some(p);
            }
            if let Some(c) = args.clock {
                config.clock = parse_clock(&c)
                    .ok_or_else(|| ServerError::Config(format!("bad clock `{c}`; expected realtime or simulated")))?;
            }
            if let Some(t) = args.tick_seconds {
                config.tick_seconds = t;
            }
            config.validate()?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(foodbot_server::serve(config))?;
            Ok(())
        }
        Command::SeedDemo { name, tz, no_goals } => seed_demo(&config, &name, &tz, !no_goals),
        Command::Simulate {
            script,
            corpus,
            corpus_seed,
            policies,
            out,
        } => simulate(&script, corpus.as_deref(), corpus_seed, policies.as_deref(), &out),
    }
}

fn ingest(config: &Config, corpus: &Path, lexicon: Option<&Path>) -> anyhow::Result<()> {
    std::fs::create_dir_all(&config.data_dir)?;
    let path = config.graph_path();
    let text = std::fs::read_to_string(corpus).with_context(|| format!("reading {}", corpus.display()))?;
    let mut graph = if path.exists() {
        if lexicon.is_some() {
            bail!(ServerError::Config(
                "graph already exists; its lexicon cannot be replaced".into()
            ));
        }
        KnowledgeGraph::load(&path)?
    } else {
        match lexicon {
            Some(l) => KnowledgeGraph::new(foodbot_core::graph::Lexicon::load(l)?),
            None => KnowledgeGraph::new(foodbot_core::graph::Lexicon::shipped()),
        }
    };
    let report = graph.ingest_jsonl(&text);
    graph.save(&path)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn slug(name: &str) -> String {
    let s: String = name
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    let s = s.trim_matches('-').to_string();
    if s.is_empty() {
        "user".into()
    } else {
        s.chars().take(40).collect()
    }
}

fn seed_demo(config: &Config, name: &str, tz: &str, defaults: bool) -> anyhow::Result<()> {
    let tz_minutes = parse_tz_offset(tz)?;
    let config = Config {
        clock: ClockMode::Realtime,
        ..config.clone()
    };
    let (engine, _) = foodbot_server::boot(&config)?;
    let base = slug(name);
    let mut n = 1;
    let user = loop {
        let id = if n == 1 { base.clone() } else { format!("{base}-{n}") };
        match engine.user(&foodbot_core::types::UserId::new(id.as_str())) {
            Ok(_) => n += 1,
            Err(foodbot_core::Error::NotFound(_)) => break engine.create_user(&id, name, tz_minutes, defaults)?,
            Err(e) => return Err(e.into()),
        }
    };
    let session = engine.open_session(&user.user_id)?;
    println!(
        "{}",
        serde_json::json!({ "user_id": user.user_id, "session_id": session.session_id, "token": session.token })
    );
    Ok(())
}

fn simulate(
    script: &Path,
    corpus: Option<&Path>,
    seed: u64,
    policies: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(script).with_context(|| format!("reading {}", script.display()))?;
    let steps = parse_script(&text)?;
    let graph = match corpus {
        Some(p) => foodbot_server::ingest_file(p, None)?.0,
        None => {
            let mut g = KnowledgeGraph::new(foodbot_core::graph::Lexicon::shipped());
            g.ingest_jsonl(&corpus::generate(&CorpusSpec {
                n_foods: SIM_CORPUS_FOODS,
                n_restaurants: SIM_CORPUS_RESTAURANTS,
                seed,
            })?);
            g
        }
    };
    let scheduler = match policies {
        Some(p) => SchedulerConfig::load(p)?,
        None => SchedulerConfig::shipped(),
    };
    let start = match steps.first() {
        Some((_, foodbot_core::sim::Step::Start(t))) => *t,
        _ => DEFAULT_START.parse().expect("valid default start"),
    };
    let graph = Arc::new(graph);
    let mut sim = Simulation::with_parts(start, |store, clock| {
        let mut parts = foodbot_core::engine::EngineParts::shipped(store, graph, clock);
        parts.scheduler = scheduler;
        parts
    })?;
    sim.run(&steps)?;
    let report = sim.report()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("prompts.jsonl"), report.prompt_log_text())?;
    std::fs::write(
        out.join("final_state.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    println!(
        "{}",
        serde_json::json!({ "prompts": report.prompt_log.len(), "turns": report.transcript.len(), "failures": report.failures.len() })
    );
    if !report.failures.is_empty() {
        bail!(foodbot_core::Error::validation(format!(
            "expectations failed: {}",
            report.failures.join("; ")
        )));
    }
    Ok(())
}
