use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use lookalike::api;
use lookalike::config::Config;
use lookalike::engine::Engine;
use lookalike::error::ServiceError;
use lookalike::eval::{self, Dataset, EvalRecord, LabeledScore};
use lookalike_core::benignity::{fit_rule_weights, FitParams, Label, RuleOutcome};
use lookalike_core::registry::RegistryId;
use serde::{Deserialize, Serialize};

const DEFAULT_CONFIG: &str = "lookalike.toml";

#[derive(Debug, Parser)]
#[command(name = "lookalike", version, about = "Package-confusion scanner")]
struct Cli {
    /// Configuration file (TOML). Defaults to ./lookalike.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a line-delimited metadata dump as the registry's new snapshot.
    Ingest {
        #[arg(long)]
        registry: RegistryId,
        #[arg(long)]
        dump: PathBuf,
        /// Snapshot time (RFC 3339); defaults to now.
        #[arg(long)]
        at: Option<DateTime<Utc>>,
    },
    /// Train the name embedding model on stored names or a corpus file.
    Train {
        /// One name per line.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Build and save search indexes (every ingested registry by default).
    Index {
        #[arg(long)]
        registry: Vec<RegistryId>,
    },
    /// Scan one package and print the draft with its benignity reports.
    Scan {
        #[arg(long)]
        registry: RegistryId,
        #[arg(long)]
        package: String,
    },
    /// Scan every package of a registry and persist new alerts.
    ScanAll {
        #[arg(long)]
        registry: Vec<RegistryId>,
    },
    /// Metrics over labeled pairs or over raw count rows.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Include per-record verdicts in the output.
        #[arg(long)]
        records: bool,
    },
    /// Best F1 threshold over labeled similarity scores.
    Gridsearch {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Fit rule weights by cross-validated logistic regression.
    FitWeights {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Write the fitted weights here (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    code: &'a str,
    message: String,
}

fn print_error(code: &str, message: String) {
    let line = serde_json::to_string(&ErrorLine { code, message }).expect("error line serializes");
    eprintln!("{line}");
}

fn emit<T: Serialize>(value: &T) -> Result<(), ServiceError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ServiceError::Io(e.into()))?;
    println!("{text}");
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<Config, ServiceError> {
    match path {
        Some(p) => Config::load(p),
        None if Path::new(DEFAULT_CONFIG).exists() => Config::load(DEFAULT_CONFIG),
        None => Ok(Config::default()),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, ServiceError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| ServiceError::InvalidRequest(format!("{}: {e}", path.display())))
}

fn jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ServiceError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| ServiceError::InvalidRequest(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    if out.is_empty() {
        return Err(ServiceError::EmptyDataset);
    }
    Ok(out)
}

/// A fit row: precomputed outcomes with a binary label, or a labeled pair.
#[derive(Deserialize)]
#[serde(untagged)]
enum FitRow {
    Outcomes { outcomes: RuleOutcome, label: Label },
    Record(EvalRecord),
}

fn fit_rows(engine: &Engine, path: &Path) -> Result<Vec<(RuleOutcome, Label)>, ServiceError> {
    let rows: Vec<FitRow> = jsonl(path)?;
    let mut labeled = Vec::new();
    let mut records = Vec::new();
    for r in rows {
        match r {
            FitRow::Outcomes { outcomes, label } => labeled.push((outcomes, label)),
            FitRow::Record(rec) => records.push(rec),
        }
    }
    if !records.is_empty() {
        let (pairs, now) = eval::record_pairs(engine, &records)?;
        for (rec, pair) in records.iter().zip(&pairs) {
            let label = if rec.label.is_threat() { Label::Threat } else { Label::Benign };
            labeled.push((engine.filter.outcomes(pair, &engine.store, now), label));
        }
    }
    Ok(labeled)
}

fn run(cli: Cli) -> Result<(), ServiceError> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { registry, dump, at } => {
            let mut engine = Engine::open(config)?;
            let info = engine.ingest(registry, open(&dump)?, at.unwrap_or_else(Utc::now))?;
            emit(&info)
        }
        Command::Train { corpus } => {
            let mut engine = Engine::open(config)?;
            let names = match corpus {
                Some(p) => Some(
                    open(&p)?
                        .lines()
                        .collect::<Result<Vec<_>, _>>()?
                        .into_iter()
                        .filter(|l| !l.trim().is_empty())
                        .collect(),
                ),
                None => None,
            };
            emit(&engine.train(names)?)
        }
        Command::Index { registry } => {
            let mut engine = Engine::open(config)?;
            let targets: Vec<RegistryId> = if registry.is_empty() {
                engine.store.registries().collect()
            } else {
                registry
            };
            let mut built = std::collections::BTreeMap::new();
            for r in targets {
                built.insert(r, engine.build_index(r)?);
            }
            emit(&serde_json::json!({ "trusted_indexed": built }))
        }
        Command::Scan { registry, package } => {
            let engine = Engine::open(config)?;
            emit(&engine.scan_package(registry, &package)?)
        }
        Command::ScanAll { registry } => {
            let mut engine = Engine::open(config)?;
            let targets: Vec<RegistryId> = if registry.is_empty() {
                engine.indexes.keys().copied().collect()
            } else {
                registry
            };
            if targets.is_empty() {
                return Err(ServiceError::MissingInfrastructure(vec!["index for any registry".into()]));
            }
            let mut summaries = Vec::new();
            for r in targets {
                summaries.push(engine.run_full_scan(r)?);
            }
            emit(&summaries)
        }
        Command::Eval { dataset, records } => match eval::read_dataset(open(&dataset)?)? {
            Dataset::Counts(rows) => emit(&eval::evaluate_counts(&rows)?),
            Dataset::Records(recs) => {
                let engine = Engine::open(config)?;
                let result = eval::evaluate(&engine, &recs)?;
                if records {
                    emit(&result)
                } else {
                    emit(&result.table)
                }
            }
        },
        Command::Gridsearch { scores } => {
            let scores: Vec<LabeledScore> = jsonl(&scores)?;
            emit(&eval::grid_search_threshold(&scores)?)
        }
        Command::FitWeights { labeled, folds, out } => {
            let engine = Engine::open(config)?;
            let rows = fit_rows(&engine, &labeled)?;
            let report = fit_rule_weights(&rows, folds, &FitParams::default())?;
            if let Some(out) = out {
                let text = serde_json::to_string_pretty(&report.weights).map_err(|e| ServiceError::Io(e.into()))?;
                std::fs::write(out, text)?;
            }
            emit(&report)
        }
        Command::Serve { bind } => {
            let addr = bind.unwrap_or_else(|| config.server.bind.clone());
            let engine = Arc::new(RwLock::new(Engine::open(config)?));
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(api::serve(engine, &addr))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            print_error("usage", e.to_string().lines().next().unwrap_or_default().to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            print_error(e.code(), e.to_string());
            ExitCode::from(1)
        }
    }
}
