//! Command-line workflow: prepare -> train -> eval/transfer, plus the
//! sensitivity sweep, the ablation grid and report plotting. Each command
//! writes a self-describing output directory (config copy, versions, seed).

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneVariant;
use crate::config::RunConfig;
use crate::data::{
    interpolate_missing, make_windows, parse_load_csv, split_series, HouseholdSeries, SplitSpec,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_conventional, zero_shot_transfer, EvalReport, Scale};
use crate::model::{ForecastModel, TaskMode};
use crate::plot::{write_household_charts, write_sensitivity_chart};
use crate::prompt::SimilarityMetric;
use crate::store::WindowSet;
use crate::train::{
    ablation_run, sensitivity_sweep, train, write_ablation_csv, write_curve_csv, write_sweep_csv,
    SweepRow,
};

#[derive(Parser, Debug)]
#[command(name = "loadcast", version, about = "Household load forecasting with a frozen language-model backbone")]
pub struct Cli {
    /// TOML run configuration; missing file falls back to defaults
    #[arg(long, global = true, default_value = "loadcast.toml")]
    pub config: PathBuf,
    /// override [data].csv
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    /// override [output].dir
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// override [train].seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// override [train].lambda
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// override [train].lr
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// override [train].max_epochs
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// override [train].batch_size
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// override [train].task_mode (mtl | single)
    #[arg(long, global = true)]
    pub task_mode: Option<String>,
    /// override [prompt].metric (cosine | euclidean)
    #[arg(long, global = true)]
    pub metric: Option<String>,
    /// override [prompt].m_prefix
    #[arg(long, global = true)]
    pub m_prefix: Option<usize>,
    /// override [backbone].variant (toy | pretrained)
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// override [backbone].weights
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse the raw CSV, repair gaps, split and persist window datasets
    Prepare,
    /// Train on the training household's train/val windows
    Train,
    /// Conventional test-set evaluation on the training household
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Zero-shot transfer across the remaining households
    Transfer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train + transfer once per lambda on the grid
    Sensitivity {
        /// comma-separated lambda values
        #[arg(long, default_value = "0.0,0.01,0.05,0.1,1.0")]
        grid: String,
    },
    /// 2x2 task-mode x similarity-metric ablation
    Ablation,
    /// Re-plot charts from a persisted report and/or sweep table
    Plot {
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
}

/// Artifact listing written by `prepare`; everything needed to re-derive the
/// datasets deterministically.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub selection_seed: u64,
    pub household_ids: Vec<u64>,
    pub training_household: u64,
    pub split: SplitSpec,
    /// (train, val, test) lengths of the training household, in steps
    pub split_lengths: (usize, usize, usize),
    /// trailing-segment length used for every transfer household
    pub transfer_segment_len: usize,
    pub excluded: Vec<(u64, String)>,
}

impl Cli {
    /// Load the config file (defaults if absent) and apply flag overrides.
    pub fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = if self.config.exists() {
            RunConfig::load(&self.config)?
        } else {
            RunConfig::default()
        };
        if let Some(v) = &self.csv {
            cfg.data.csv = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.output.dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.lambda {
            cfg.train.lambda = v;
        }
        if let Some(v) = self.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = self.batch {
            cfg.train.batch_size = v;
        }
        if let Some(v) = &self.task_mode {
            cfg.train.task_mode = match v.as_str() {
                "mtl" => TaskMode::Mtl,
                "single" => TaskMode::Single,
                other => return Err(Error::Config(format!("unknown task mode {other:?}"))),
            };
        }
        if let Some(v) = &self.metric {
            cfg.prompt.metric = v
                .parse::<SimilarityMetric>()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(v) = self.m_prefix {
            cfg.prompt.m_prefix = v;
        }
        if let Some(v) = &self.variant {
            cfg.backbone.variant = match v.as_str() {
                "toy" => BackboneVariant::Toy,
                "pretrained" => BackboneVariant::Pretrained,
                other => return Err(Error::Config(format!("unknown backbone variant {other:?}"))),
            };
        }
        if let Some(v) = &self.weights {
            cfg.backbone.weights = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_dir(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.out_root().join(command);
    std::fs::create_dir_all(&dir)?;
    cfg.save(&dir.join("config.toml"))?;
    let versions = serde_json::json!({
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.train.seed,
    });
    std::fs::write(dir.join("versions.json"), serde_json::to_vec_pretty(&versions).unwrap())?;
    Ok(dir)
}

fn prepared_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_root().join("prepare")
}

fn build_model(cfg: &RunConfig) -> Result<ForecastModel> {
    match cfg.backbone.variant {
        BackboneVariant::Toy => ForecastModel::new_toy(cfg.model_config()),
        BackboneVariant::Pretrained => {
            let weights = cfg
                .backbone
                .weights
                .as_ref()
                .ok_or_else(|| Error::Config("pretrained backbone requires a weights path".into()))?;
            ForecastModel::new_pretrained(cfg.model_config(), weights)
        }
    }
}

pub fn cmd_prepare(cfg: &RunConfig) -> Result<Manifest> {
    let dir = run_dir(cfg, "prepare")?;
    let parsed = parse_load_csv(&cfg.data.csv, &cfg.channel_map())?;
    let mut excluded: Vec<(u64, String)> = parsed
        .warnings
        .excluded_households
        .iter()
        .map(|(id, ch)| (*id, format!("missing channel {ch}")))
        .collect();

    let mut series = parsed.series;
    if series.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if series.len() > cfg.data.n_households {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.data.selection_seed);
        let mut idx: Vec<usize> = (0..series.len()).collect();
        idx.shuffle(&mut rng);
        let mut keep: Vec<usize> = idx[..cfg.data.n_households].to_vec();
        keep.sort_unstable();
        series = keep.into_iter().map(|i| series[i].clone()).collect();
    }

    let w = &cfg.window;
    let training = interpolate_missing(&series[0])?;
    let (tr, va, te) = split_series(&training, &cfg.data.split, w.input_len, w.horizon)?;
    let split_lengths = (tr.len(), va.len(), te.len());
    let transfer_segment_len = te.len();

    for (name, part) in [("train", &tr), ("val", &va), ("test", &te)] {
        let windows = make_windows(part, w.input_len, w.horizon, w.stride)?;
        WindowSet::new(w.input_len, w.horizon, w.stride, windows)
            .save(&dir.join(format!("{name}.lwd")))?;
    }

    let mut ids = vec![training.household_id];
    for s in &series[1..] {
        let repaired = match interpolate_missing(s) {
            Ok(r) => r,
            Err(e) => {
                excluded.push((s.household_id, e.to_string()));
                continue;
            }
        };
        if repaired.len() < transfer_segment_len {
            excluded.push((
                s.household_id,
                format!("series shorter than transfer segment ({} < {transfer_segment_len})", repaired.len()),
            ));
            continue;
        }
        let seg: HouseholdSeries =
            repaired.slice(repaired.len() - transfer_segment_len, repaired.len());
        let windows = make_windows(&seg, w.input_len, w.horizon, w.stride)?;
        WindowSet::new(w.input_len, w.horizon, w.stride, windows)
            .save(&dir.join(format!("transfer_{}.lwd", s.household_id)))?;
        ids.push(s.household_id);
    }

    let manifest = Manifest {
        selection_seed: cfg.data.selection_seed,
        household_ids: ids,
        training_household: training.household_id,
        split: cfg.data.split,
        split_lengths,
        transfer_segment_len,
        excluded,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?,
    )?;
    Ok(manifest)
}

fn load_split(cfg: &RunConfig, name: &str) -> Result<WindowSet> {
    let path = prepared_dir(cfg).join(format!("{name}.lwd"));
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run `loadcast prepare` first",
            path.display()
        )));
    }
    WindowSet::load(&path)
}

fn load_transfer_sets(cfg: &RunConfig) -> Result<Vec<(u64, Vec<crate::data::WindowPair>)>> {
    let dir = prepared_dir(cfg);
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run `loadcast prepare` first",
            manifest_path.display()
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(&manifest_path)?)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    for &hid in &manifest.household_ids {
        if hid == manifest.training_household {
            continue;
        }
        let set = WindowSet::load(&dir.join(format!("transfer_{hid}.lwd")))?;
        out.push((hid, set.windows));
    }
    Ok(out)
}

fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    cfg.out_root().join("train").join("checkpoint.json")
}

fn load_checkpoint(cfg: &RunConfig, explicit: &Option<PathBuf>) -> Result<ForecastModel> {
    let path = explicit.clone().unwrap_or_else(|| default_checkpoint(cfg));
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} not found", path.display())));
    }
    ForecastModel::load(&path)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = run_dir(cfg, "train")?;
    let train_set = load_split(cfg, "train")?;
    let val_set = load_split(cfg, "val")?;
    let mut model = build_model(cfg)?;
    let outcome = train(&mut model, &train_set.windows, &val_set.windows, &cfg.train_config())?;
    let ck_path = dir.join("checkpoint.json");
    let run_id = format!("train-seed{}-lambda{}", cfg.train.seed, cfg.train.lambda);
    model.save(&ck_path, &run_id)?;
    write_curve_csv(&dir.join("curve.csv"), &outcome.curve)?;
    println!(
        "trained {} epochs, best val loss {:.6} at epoch {}",
        outcome.curve.len(),
        outcome.best_val_loss,
        outcome.best_epoch
    );
    Ok(ck_path)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<(f64, f64)> {
    let dir = run_dir(cfg, "eval")?;
    let model = load_checkpoint(cfg, checkpoint)?;
    let test_set = load_split(cfg, "test")?;
    let (mse, mae) = evaluate_conventional(&model, &test_set.windows, Scale::Normalized)?;
    let result = serde_json::json!({ "mse": mse, "mae": mae, "scale": "normalized", "windows": test_set.windows.len() });
    std::fs::write(dir.join("eval.json"), serde_json::to_vec_pretty(&result).unwrap())?;
    println!("test MSE {mse:.6}, MAE {mae:.6} (normalized scale)");
    Ok((mse, mae))
}

pub fn cmd_transfer(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<EvalReport> {
    let dir = run_dir(cfg, "transfer")?;
    let model = load_checkpoint(cfg, checkpoint)?;
    let transfer = load_transfer_sets(cfg)?;
    let report = zero_shot_transfer(&model, &model.cfg, &transfer, Scale::Normalized)?;
    report.save(&dir.join("report.json"))?;
    write_household_charts(&dir, &report)?;
    println!(
        "zero-shot transfer over {} households: Sum_MSE {:.6}, Sum_MAE {:.6}",
        report.per_household.len(),
        report.sum_mse,
        report.sum_mae
    );
    Ok(report)
}

fn parse_grid(grid: &str) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        grid.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|_| Error::Config(format!("bad lambda grid {grid:?}")))?;
    if vals.is_empty() || vals.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Config(format!("bad lambda grid {grid:?}")));
    }
    Ok(vals)
}

pub fn cmd_sensitivity(cfg: &RunConfig, grid: &str) -> Result<Vec<SweepRow>> {
    let dir = run_dir(cfg, "sensitivity")?;
    let grid = parse_grid(grid)?;
    let train_set = load_split(cfg, "train")?;
    let val_set = load_split(cfg, "val")?;
    let transfer = load_transfer_sets(cfg)?;
    let rows = sensitivity_sweep(
        || build_model(cfg),
        &train_set.windows,
        &val_set.windows,
        &transfer,
        &cfg.train_config(),
        &grid,
        Scale::Normalized,
    )?;
    write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
    write_sensitivity_chart(&dir, &rows)?;
    for r in &rows {
        println!("lambda {:>6}: Sum_MSE {:.6}, Sum_MAE {:.6}", r.lambda, r.sum_mse, r.sum_mae);
    }
    Ok(rows)
}

pub fn cmd_ablation(cfg: &RunConfig) -> Result<()> {
    let dir = run_dir(cfg, "ablation")?;
    if cfg.backbone.variant != BackboneVariant::Toy {
        return Err(Error::Config("the ablation harness runs on the toy backbone".into()));
    }
    let train_set = load_split(cfg, "train")?;
    let val_set = load_split(cfg, "val")?;
    let test_set = load_split(cfg, "test")?;
    let cells = ablation_run(
        &cfg.model_config(),
        &train_set.windows,
        &val_set.windows,
        &test_set.windows,
        &cfg.train_config(),
        Scale::Normalized,
    )?;
    write_ablation_csv(&dir.join("ablation.csv"), &cells)?;
    for c in &cells {
        println!("{:?}/{}: MSE {:.6}, MAE {:.6}", c.task_mode, c.metric, c.mse, c.mae);
    }
    Ok(())
}

pub fn cmd_plot(cfg: &RunConfig, report: &Option<PathBuf>, sweep: &Option<PathBuf>) -> Result<()> {
    let dir = run_dir(cfg, "plot")?;
    if report.is_none() && sweep.is_none() {
        return Err(Error::Config("plot needs --report and/or --sweep".into()));
    }
    if let Some(path) = report {
        let report = EvalReport::load(path)?;
        report.validate()?;
        write_household_charts(&dir, &report)?;
    }
    if let Some(path) = sweep {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(SweepRow {
                lambda: rec[0].parse().map_err(|_| Error::Config("bad sweep csv".into()))?,
                sum_mse: rec[1].parse().map_err(|_| Error::Config("bad sweep csv".into()))?,
                sum_mae: rec[2].parse().map_err(|_| Error::Config("bad sweep csv".into()))?,
            });
        }
        write_sensitivity_chart(&dir, &rows)?;
    }
    println!("plots written to {}", dir.display());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.effective_config()?;
    match &cli.cmd {
        Command::Prepare => {
            let manifest = cmd_prepare(&cfg)?;
            println!(
                "prepared {} households (training household {})",
                manifest.household_ids.len(),
                manifest.training_household
            );
            Ok(())
        }
        Command::Train => cmd_train(&cfg).map(|_| ()),
        Command::Eval { checkpoint } => cmd_eval(&cfg, checkpoint).map(|_| ()),
        Command::Transfer { checkpoint } => cmd_transfer(&cfg, checkpoint).map(|_| ()),
        Command::Sensitivity { grid } => cmd_sensitivity(&cfg, grid).map(|_| ()),
        Command::Ablation => cmd_ablation(&cfg),
        Command::Plot { report, sweep } => cmd_plot(&cfg, report, sweep),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.0,0.1").unwrap(), vec![0.0, 0.1]);
        assert_eq!(parse_grid("0.0, 0.01 ,0.05,0.1,1.0").unwrap().len(), 5);
        assert!(parse_grid("").is_err());
        assert!(parse_grid("a,b").is_err());
        assert!(parse_grid("-0.5").is_err());
    }

    #[test]
    fn cli_parses_subcommands() {
        let cli = Cli::try_parse_from(["loadcast", "sensitivity", "--grid", "0.0,0.1"]).unwrap();
        match &cli.cmd {
            Command::Sensitivity { grid } => assert_eq!(grid, "0.0,0.1"),
            other => panic!("unexpected {other:?}"),
        }
        let cli = Cli::try_parse_from(["loadcast", "--lambda", "0.5", "train"]).unwrap();
        assert_eq!(cli.lambda, Some(0.5));
    }

    #[test]
    fn flag_overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let mut file_cfg = RunConfig::default();
        file_cfg.train.lambda = 0.7;
        file_cfg.save(&path).unwrap();
        let cli = Cli::try_parse_from([
            "loadcast",
            "--config",
            path.to_str().unwrap(),
            "--lambda",
            "0.2",
            "train",
        ])
        .unwrap();
        let cfg = cli.effective_config().unwrap();
        assert_eq!(cfg.train.lambda, 0.2);
        // file value survives where no flag is given
        let cli = Cli::try_parse_from(["loadcast", "--config", path.to_str().unwrap(), "train"]).unwrap();
        assert_eq!(cli.effective_config().unwrap().train.lambda, 0.7);
    }

    #[test]
    fn missing_checkpoint_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.output.dir = dir.path().to_path_buf();
        let err = load_checkpoint(&cfg, &None).err().unwrap();
        assert!(matches!(err, Error::Config(_)));
    }
}
