//! `maker` command line. Every subcommand prints one line: the path of the
//! file or directory it produced. Exit status 0 on success, 2 for usage and
//! configuration errors, 1 for failures while running.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::ExperimentConfig;
use super::report::stratified_evaluate;
use super::run::{ablation_matrix, checkpoint_path, evaluate_run, load_dataset, train_run, SplitName};
use crate::data::store::save_store;
use crate::data::{parse_ais_csv, segment_trajectories, synth_trajectory, Dialect, IntervalModel, SynthKind};
use crate::error::{Error, Result};
use crate::forecaster::{Maker, Variant};

#[derive(Debug, Parser)]
#[command(name = "maker", version, about = "Vessel trajectory prediction experiments")]
pub struct Cli {
    /// Experiment configuration (flat `key = value` file).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an AIS CSV export into the canonical trajectory store.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// `us_coast` or `danish`; defaults to the configured dialect.
        #[arg(long)]
        dialect: Option<String>,
    },
    /// Generate synthetic trajectories into the canonical store.
    Synth {
        #[arg(long, default_value = "mixed")]
        kind: String,
        /// Records per trajectory.
        #[arg(long, default_value_t = 96)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Gaussian position noise, degrees.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// `regular:<s>`, `jittered:<s>:<sigma>` or `bursty:<s>`.
        #[arg(long, default_value = "regular:60")]
        interval: String,
    },
    /// Train one configuration into a run directory.
    Train,
    /// Evaluate a checkpoint of a run directory (`--out`).
    Evaluate(EvalArgs),
    /// Train and evaluate each variant under the same seed and data.
    Ablate {
        /// Comma-separated variants; all six by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Complexity/irregularity-stratified MAE of a checkpoint.
    Stratify(EvalArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `best`, `final` or a checkpoint path.
    #[arg(long, default_value = "final")]
    pub checkpoint: String,
    #[arg(long, default_value = "test")]
    pub split: String,
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn experiment(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn store_path(out: &Path) -> PathBuf {
    if out.extension().is_some() {
        out.to_path_buf()
    } else {
        out.join("trajectories.ndjson")
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

/// Runs a parsed command and returns the path to report.
pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let cfg = experiment(cli)?;
    match &cli.command {
        Command::Ingest { input, dialect } => {
            let dialect = match dialect {
                Some(d) => d.parse::<Dialect>()?,
                None => cfg.dialect,
            };
            let mut records = parse_ais_csv(input, dialect)?.records;
            records.sort_by(|a, b| (&a.vessel_id, a.timestamp).cmp(&(&b.vessel_id, b.timestamp)));
            let trajs = segment_trajectories(&records, cfg.min_interval, cfg.max_gap)?;
            let path = store_path(&out_dir(cli, "."));
            create_parent(&path)?;
            save_store(&path, &trajs)?;
            Ok(path)
        }
        Command::Synth {
            kind,
            n,
            count,
            noise,
            interval,
        } => {
            let kind: SynthKind = kind.parse()?;
            let interval = IntervalModel::parse(interval)?;
            let trajs = (0..*count)
                .map(|i| synth_trajectory(kind, *n, *noise, cfg.train.seed.wrapping_add(i as u64), interval))
                .collect::<Result<Vec<_>>>()?;
            let path = store_path(&out_dir(cli, "."));
            create_parent(&path)?;
            save_store(&path, &trajs)?;
            Ok(path)
        }
        Command::Train => {
            let dir = out_dir(cli, &format!("runs/{}", &cfg.hash()[..12]));
            Ok(train_run(&cfg, &dir)?.dir)
        }
        Command::Evaluate(args) => {
            let dir = out_dir(cli, ".");
            let split: SplitName = args.split.parse()?;
            Ok(evaluate_run(&cfg, &dir, &args.checkpoint, split)?.1)
        }
        Command::Ablate { variants } => {
            let variants = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.iter().map(|v| v.parse()).collect::<Result<Vec<Variant>>>()?
            };
            let dir = out_dir(cli, &format!("runs/{}-ablation", &cfg.hash()[..12]));
            Ok(ablation_matrix(&cfg, &variants, &dir)?.1)
        }
        Command::Stratify(args) => {
            let dir = out_dir(cli, ".");
            let split: SplitName = args.split.parse()?;
            let (model, header, _) = Maker::load(&checkpoint_path(&dir, &args.checkpoint))?;
            let mut data_cfg = cfg.clone();
            data_cfg.model = header.model.clone();
            data_cfg.dataset_name = header.dataset_name.clone();
            let data = load_dataset(&data_cfg, model.lm().as_ref())?;
            let cells = stratified_evaluate(&model, data.split(split), cfg.eval_batch)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(format!("stratify_{}.json", split.as_str()));
            let text = serde_json::to_string_pretty(&cells).expect("cells serialize");
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            let mut csv = String::from("axis,level,count,mae_deg,mae_norm\n");
            let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            for c in &cells {
                csv.push_str(&format!("{},{},{},{},{}\n", c.axis, c.level.name(), c.count, opt(c.mae_deg), opt(c.mae_norm)));
            }
            let csv_path = path.with_extension("csv");
            std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
            Ok(path)
        }
    }
}

/// Parses `args` (program name first), runs, prints the result path or the
/// error, and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(path) => {
            println!("{}", path.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                2
            } else {
                1
            }
        }
    }
}
