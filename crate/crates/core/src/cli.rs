//! Command-line front end: `run`, `sweep` and `costs`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cost::{
    algorithm_comm_per_round, algorithm_comm_per_client_round, compute_total, cost_report, ComputeBreakdown, CostReport,
};
use crate::error::{Error, Result};
use crate::protocol::{cost_inputs, run_experiment, Algorithm, DataSource, ExperimentConfig, RunHistory};
use crate::sweep::{sweep, SweepAxis, BUDGET_FRACTIONS, TARGET_THRESHOLDS, TEACHER_PRESETS};

#[derive(Debug, Parser)]
#[command(name = "fedkd", version, about = "Federated knowledge distillation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration and write history, summary and manifest.
    Run(RunArgs),
    /// Run a budget, target or teacher-architecture sweep.
    Sweep(SweepArgs),
    /// Print the closed-form communication and computation costs.
    Costs(CostsArgs),
}

/// Configuration sources, applied in order: defaults, `--config` file,
/// `--set` entries, then the dedicated flags.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file, or a manifest written by a previous run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alg: Option<Algorithm>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub temp: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub proxy_size: Option<usize>,
    #[arg(long)]
    pub bits: Option<u32>,
    /// `synthetic` or `csv:<path>`.
    #[arg(long)]
    pub data: Option<DataSource>,
    /// The CSV source has a header row.
    #[arg(long)]
    pub csv_header: bool,
    /// Run client phases concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Override any config key, e.g. `--set noise_scale=0.8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub axis: SweepAxis,
    /// Comma-separated sweep values; defaults depend on the axis.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "bifedkd,fedmd,fedavg")]
    pub algs: Vec<Algorithm>,
    /// Run independent cells concurrently.
    #[arg(long)]
    pub parallel_cells: bool,
    #[arg(long, default_value = "sweep-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CostsArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Print JSON instead of key-value lines.
    #[arg(long)]
    pub json: bool,
}

/// A run's resolved configuration and where its results went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub history: String,
    pub summary: String,
    pub config: ExperimentConfig,
}

pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.toml";

fn parse_set(entry: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got {entry:?}")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

/// Read a config file; a manifest contributes its `config` table.
pub fn read_config_table(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    match table.remove("config") {
        Some(toml::Value::Table(inner)) => Ok(inner),
        Some(_) => Err(Error::config(format!("{}: `config` must be a table", path.display()))),
        None => Ok(table),
    }
}

impl ConfigArgs {
    /// Resolve and validate the configuration.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut table = toml::Table::try_from(ExperimentConfig::default())
            .map_err(|e| Error::config(format!("default config: {e}")))?;
        if let Some(path) = &self.config {
            table.extend(read_config_table(path)?);
        }
        for entry in &self.set {
            let (k, v) = parse_set(entry)?;
            table.insert(k, v);
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::config(e.to_string()))?;
        if let Some(a) = self.alg {
            cfg.algorithm = a;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.rounds {
            cfg.rounds = r;
        }
        if let Some(t) = self.temp {
            cfg.temperature = t;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(p) = self.proxy_size {
            cfg.proxy_size = p;
        }
        if let Some(b) = self.bits {
            cfg.payload_bits = b;
        }
        if let Some(d) = &self.data {
            cfg.data = d.clone();
        }
        if self.csv_header {
            cfg.csv_header = true;
        }
        if self.parallel {
            cfg.parallel_clients = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Closed-form costs of a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticCosts {
    pub algorithm: Algorithm,
    pub bits_per_client_round: u128,
    pub bits_per_round: u128,
    pub bits_total: u128,
    pub compute: ComputeBreakdown,
}

pub fn analytic_costs(cfg: &ExperimentConfig) -> Result<AnalyticCosts> {
    let inputs = cost_inputs(cfg)?;
    let per_round = algorithm_comm_per_round(&inputs);
    Ok(AnalyticCosts {
        algorithm: cfg.algorithm,
        bits_per_client_round: algorithm_comm_per_client_round(&inputs),
        bits_per_round: per_round,
        bits_total: per_round * cfg.rounds as u128,
        compute: compute_total(&inputs)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredCosts {
    pub uplink_bits: u128,
    pub downlink_bits: u128,
    pub flops: u128,
}

/// Final and peak metrics plus analytic and measured costs of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rounds: usize,
    pub num_clients: usize,
    pub final_mean_accuracy: f64,
    pub final_mean_macro_f1: f64,
    pub final_client_accuracy: Vec<f64>,
    pub final_client_macro_f1: Vec<f64>,
    pub peak_mean_macro_f1: f64,
    pub peak_round: usize,
    pub peak_mean_accuracy: f64,
    pub analytic: AnalyticCosts,
    pub measured: MeasuredCosts,
    pub deltas: CostReport,
    pub exact: bool,
}

pub fn summarize_run(cfg: &ExperimentConfig, history: &RunHistory) -> Result<RunSummary> {
    let last = history.final_record();
    let peak = history
        .records
        .iter()
        .fold(&history.records[0], |best, r| if r.mean_macro_f1 > best.mean_macro_f1 { r } else { best });
    let inputs = &history.cost_inputs;
    let per_round = algorithm_comm_per_round(inputs);
    let deltas = cost_report(&history.ledger, inputs)?;
    Ok(RunSummary {
        algorithm: history.algorithm,
        seed: cfg.seed,
        rounds: cfg.rounds,
        num_clients: inputs.num_clients,
        final_mean_accuracy: last.mean_accuracy,
        final_mean_macro_f1: last.mean_macro_f1,
        final_client_accuracy: last.client_accuracy.clone(),
        final_client_macro_f1: last.client_macro_f1.clone(),
        peak_mean_macro_f1: peak.mean_macro_f1,
        peak_round: peak.round,
        peak_mean_accuracy: peak.mean_accuracy,
        analytic: AnalyticCosts {
            algorithm: history.algorithm,
            bits_per_client_round: algorithm_comm_per_client_round(inputs),
            bits_per_round: per_round,
            bits_total: per_round * cfg.rounds as u128,
            compute: compute_total(inputs)?,
        },
        measured: MeasuredCosts {
            uplink_bits: history.ledger.uplink_bits(),
            downlink_bits: history.ledger.downlink_bits(),
            flops: history.ledger.flops(),
        },
        exact: deltas.is_exact(),
        deltas,
    })
}

#[derive(Serialize)]
struct HistoryRow {
    round: usize,
    client_id: usize,
    accuracy: f64,
    macro_f1: f64,
    cum_uplink_bits: String,
    cum_downlink_bits: String,
    cum_flops: String,
}

pub fn write_history_csv(history: &RunHistory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in &history.records {
        for (k, (&accuracy, &macro_f1)) in r.client_accuracy.iter().zip(&r.client_macro_f1).enumerate() {
            w.serialize(HistoryRow {
                round: r.round,
                client_id: k,
                accuracy,
                macro_f1,
                cum_uplink_bits: r.cum_uplink_bits.to_string(),
                cum_downlink_bits: r.cum_downlink_bits.to_string(),
                cum_flops: r.cum_flops.to_string(),
            })
            .map_err(|e| Error::io(path, e.into()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Write history, summary and manifest for a finished run into `out`.
pub fn write_run_outputs(cfg: &ExperimentConfig, history: &RunHistory, out: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_history_csv(history, &out.join(HISTORY_FILE))?;
    let summary = summarize_run(cfg, history)?;
    write_json(&summary, &out.join(SUMMARY_FILE))?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        history: HISTORY_FILE.into(),
        summary: SUMMARY_FILE.into(),
        config: cfg.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::config(e.to_string()))?;
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    Ok(summary)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let history = run_experiment(&cfg)?;
    let summary = write_run_outputs(&cfg, &history, &args.out)?;
    println!(
        "{} seed {}: final accuracy {:.4}, macro-F1 {:.4} after {} rounds; results in {}",
        cfg.algorithm,
        cfg.seed,
        summary.final_mean_accuracy,
        summary.final_mean_macro_f1,
        cfg.rounds,
        args.out.display()
    );
    summary.deltas.verify()
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let values: Vec<String> = if args.values.is_empty() {
        match args.axis {
            SweepAxis::RoundsBudget => BUDGET_FRACTIONS.iter().map(f64::to_string).collect(),
            SweepAxis::TargetMacroF1 => TARGET_THRESHOLDS.iter().map(f64::to_string).collect(),
            SweepAxis::TeacherArch => TEACHER_PRESETS.iter().map(|(n, _)| n.to_string()).collect(),
        }
    } else {
        args.values.clone()
    };
    let report = sweep(&cfg, args.axis, &values, &args.seeds, &args.algs, args.parallel_cells)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let csv_path = args.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::io(&csv_path, e.into()))?;
    for row in &report.rows {
        w.write_record([
            row.axis.clone(),
            row.value.clone(),
            row.algorithm.clone(),
            row.seed.to_string(),
            opt(row.rounds_used),
            opt(row.cum_bits),
            opt(row.cum_flops),
            opt(row.accuracy),
            opt(row.macro_f1),
            opt(row.teacher_round_flops),
        ])
        .map_err(|e| Error::io(&csv_path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    write_json(&report, &args.out.join("sweep.json"))?;
    for s in &report.summary {
        println!(
            "{} {} {}: macro-F1 {} ({} of {} seeds)",
            args.axis,
            s.value,
            s.algorithm,
            s.mean_macro_f1.map_or("unreached".into(), |v| format!("{v:.4}")),
            s.reached,
            s.seeds
        );
    }
    Ok(())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn cmd_costs(args: &CostsArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let costs = analytic_costs(&cfg)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&costs).map_err(|e| Error::config(e.to_string()))?);
        return Ok(());
    }
    println!("algorithm = {}", costs.algorithm);
    println!("bits_per_client_round = {}", costs.bits_per_client_round);
    println!("bits_per_round = {}", costs.bits_per_round);
    println!("bits_total = {}", costs.bits_total);
    for (term, v) in &costs.compute.terms {
        println!("flops.{} = {v}", term.name());
    }
    println!("flops_client_round = {}", costs.compute.client_round);
    println!("flops_server_round = {}", costs.compute.server_round);
    println!("flops_total = {}", costs.compute.total);
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Costs(a) => cmd_costs(a),
    }
}

/// Parse `args` (including the program name) and execute.
pub fn main_with<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            Ok(())
        }
        Err(e) => Err(Error::config(e.to_string())),
    }
}
