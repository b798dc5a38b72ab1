use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;

use revisit_core::bench::bench_location;
use revisit_core::config::Config;
use revisit_core::eval::{evaluate_files, Tolerances};
use revisit_core::narration::Scheduler;
use revisit_core::qa::{answer, parse_query, Query, Tools};
use revisit_core::session::{replay, Engine, ReplayOptions};
use revisit_core::synth::scenes::standard_benchmark;
use revisit_core::Error;

#[derive(Parser)]
#[command(name = "revisit", version, about = "Change-aware memory for revisited scenes")]
struct Cli {
    /// Threshold overrides as `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic three-location benchmark.
    Gen {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a location's visits through the change pipeline.
    Replay {
        #[arg(long)]
        location: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// `oracle` or `extern:URL`.
        #[arg(long, default_value = "oracle")]
        detector: String,
        /// Also produce live scene descriptions.
        #[arg(long)]
        live: bool,
        /// Print narrations as they are spoken.
        #[arg(long)]
        echo: bool,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Fail when precision falls below this value.
        #[arg(long)]
        min_precision: Option<f64>,
        /// Fail when recall falls below this value.
        #[arg(long)]
        min_recall: Option<f64>,
    },
    /// Replay a location repeatedly and record latency and memory growth.
    Bench {
        #[arg(long)]
        location: PathBuf,
        #[arg(long, default_value_t = 10)]
        repeat: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ask questions about a store.
    Repl {
        #[arg(long)]
        store: PathBuf,
    },
    /// Manage stored visits.
    Visits {
        #[command(subcommand)]
        action: VisitAction,
    },
}

#[derive(Subcommand)]
enum VisitAction {
    List {
        #[arg(long)]
        store: PathBuf,
    },
    Rename {
        #[arg(long)]
        store: PathBuf,
        old: String,
        new: String,
    },
    Delete {
        #[arg(long)]
        store: PathBuf,
        visit: String,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<Config> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce() -> String) -> anyhow::Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        println!("{}", human());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let json = cli.json;
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Gen { seed, out } => {
            let mut written = Vec::new();
            for script in standard_benchmark(seed) {
                let dir = out.join(&script.location_id);
                script
                    .write_location(&dir)
                    .with_context(|| format!("writing {}", dir.display()))?;
                written.push(dir);
            }
            emit(json, &written, || {
                written
                    .iter()
                    .map(|d| format!("wrote {}", d.display()))
                    .collect::<Vec<_>>()
                    .join("\n")
            })?;
        }
        Command::Replay {
            location,
            store,
            detector,
            live,
            echo,
        } => {
            let options = ReplayOptions {
                detector: detector.parse()?,
                live,
                echo: echo && !json,
            };
            let summary = replay(&location, &store, config, &options)?;
            emit(json, &summary, || {
                format!(
                    "{}: {} visits, {} frames, {} events, {} narrations",
                    summary.location_id, summary.visits, summary.frames, summary.events, summary.narrations
                )
            })?;
        }
        Command::Eval {
            pred,
            gt,
            report,
            min_precision,
            min_recall,
        } => {
            let r = evaluate_files(&pred, &gt, &Tolerances::default())?;
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_vec_pretty(&r)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            emit(json, &r, || {
                format!(
                    "tp {} fp {} fn {} repetitive {}\nprecision {:.3} recall {:.3} f1 {:.3}\nclock error {:.3} h (sd {:.3}), distance error {:.3} ft (sd {:.3})",
                    r.tp, r.fp, r.fn_, r.repetitive, r.precision, r.recall, r.f1,
                    r.clock_error_mean, r.clock_error_sd, r.distance_error_mean, r.distance_error_sd
                )
            })?;
            let failed = min_precision.is_some_and(|m| r.precision < m) || min_recall.is_some_and(|m| r.recall < m);
            if failed {
                eprintln!("evaluation below requested thresholds");
                return Ok(ExitCode::from(1));
            }
        }
        Command::Bench { location, repeat, out } => {
            let s = bench_location(&location, &out, &config, repeat)?;
            emit(json, &s, || {
                format!(
                    "{}: {} visits, reference matching median {:.2e}s early vs {:.2e}s late (x{:.2}), footprint R² {:.4}",
                    s.location_id,
                    s.visits,
                    s.early_reference_median,
                    s.late_reference_median,
                    s.reference_ratio,
                    s.footprint_r2
                )
            })?;
        }
        Command::Repl { store } => repl(&store, config)?,
        Command::Visits { action } => visits(action, json)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn repl(store: &Path, config: Config) -> anyhow::Result<()> {
    let engine = Engine::open(store, Some(config))?;
    let latest = engine.esm.recent_frames(1).first().map(|r| (r.frame.pose, r.ingest_time));
    let tools = Tools {
        esm: &engine.esm,
        otm: &engine.otm,
        pose: latest.map(|l| l.0),
    };
    let now = latest.map_or(0.0, |l| l.1);
    let mut scheduler = Scheduler::new(engine.config().staleness_s, engine.config().buffer_n);
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_query(&line) {
            Ok(Query::Quit) => break,
            Ok(q) => match answer(&q, &tools, engine.config().qa_n, now) {
                Ok(item) => scheduler.push(item),
                Err(e) => eprintln!("{e}"),
            },
            Err(e) => eprintln!("{e}"),
        }
        while let Some(item) = scheduler.next(now) {
            writeln!(out, "{}", item.text)?;
        }
        out.flush()?;
    }
    Ok(())
}

fn visits(action: VisitAction, json: bool) -> anyhow::Result<()> {
    match action {
        VisitAction::List { store } => {
            let engine = Engine::open(&store, None)?;
            let list = engine.esm.visits();
            emit(json, &list, || {
                list.iter()
                    .map(|v| {
                        format!(
                            "{}\tindex {}\tstart {}\tframes {}{}",
                            v.visit_id,
                            v.visit_index,
                            v.start_time,
                            v.frames_ingested,
                            if v.closed { "" } else { "\topen" }
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            })?;
        }
        VisitAction::Rename { store, old, new } => {
            let mut engine = Engine::open(&store, None)?;
            engine.esm.rename_visit(&old, &new)?;
            engine.otm.rename_visit(&old, &new);
            engine.save(&store)?;
            emit(json, &serde_json::json!({"renamed": old, "to": new}), || format!("renamed {old} to {new}"))?;
        }
        VisitAction::Delete { store, visit } => {
            let mut engine = Engine::open(&store, None)?;
            let removed = engine.esm.delete_visit(&visit)?;
            engine.save(&store)?;
            emit(json, &serde_json::json!({"deleted": visit, "records": removed}), || {
                format!("deleted {visit} ({removed} records)")
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Usage(_)) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
