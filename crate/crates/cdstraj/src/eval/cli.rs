//! Command-line interface for the full pipeline.
//!
//! Exit codes: 0 on success, 1 when an internal contract is violated (a
//! panic), 2 on I/O, config, data-format, or usage errors.

use std::ffi::OsString;
use std::io::Write as _;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::Config;
use crate::data::{generate_dataset, load_scene_json, load_split_dir, save_split_dir, split_hash, split_windows, DatasetSplit};
use crate::error::{CdsError, Result};
use crate::eval::{ablation_run, evaluate_windows, report_csv, svg::emit_plot};
use crate::model::{Model, ModelFlags};
use crate::train::{metrics_csv, resume_training, train_two_stage, Checkpoint, EpochRow, TrainOutcome};

#[derive(Parser)]
#[command(
    name = "cdstraj",
    version,
    about = "Multi-modal vehicle trajectory prediction: synthetic highway data, \
             diffusion-refined interaction encoding, two-stage training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset and write train/val/test splits.
    Synth {
        /// Pipeline config JSON (`{}` selects every default).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for train.jsonl, val.jsonl, test.jsonl, meta.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run two-stage training and write a checkpoint plus a metric log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Data directory; defaults to `train.data_dir` from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Metric CSV path; defaults to the checkpoint path with a
        /// `.metrics.csv` extension.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Resume from this checkpoint instead of initializing fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Ablation tag A-E disabling one component (F trains the full model).
        #[arg(long)]
        ablation: Option<char>,
    },
    /// Compute RMSE by horizon on the test split, with kinematic references.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Data directory holding the splits.
        #[arg(long)]
        data: PathBuf,
        /// Report CSV output path.
        #[arg(long)]
        report: PathBuf,
    },
    /// Render one scenario's multi-modal prediction as an SVG.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// Single-scenario JSON file.
        #[arg(long)]
        scene: PathBuf,
        /// SVG output path.
        #[arg(long)]
        svg: PathBuf,
    },
    /// Train and evaluate all six component configurations on identical data.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Report CSV output path.
        #[arg(long)]
        report: PathBuf,
        /// Data directory; defaults to `train.data_dir`, or to an in-memory
        /// dataset generated from the config when the directory is absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// Entry point used by `main`; maps panics and errors to exit codes.
pub fn cli_main() -> i32 {
    cli_run(std::env::args_os())
}

/// Testable entry point over explicit arguments.
pub fn cli_run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match std::panic::catch_unwind(AssertUnwindSafe(|| run(cli.cmd))) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            2
        }
        // The default panic hook has already printed the message.
        Err(_) => 1,
    }
}

/// `CDSTRAJ_SEED` overrides the config seed when set.
fn apply_seed_env(cfg: &mut Config) -> Result<()> {
    if let Ok(v) = std::env::var("CDSTRAJ_SEED") {
        cfg.train.seed = v
            .parse::<u64>()
            .map_err(|_| CdsError::Config(format!("CDSTRAJ_SEED must be a u64, got {v:?}")))?;
    }
    Ok(())
}

fn synth_split(cfg: &Config) -> DatasetSplit {
    let windows = generate_dataset(&cfg.data, cfg.train.seed);
    split_windows(windows, cfg.data.train_frac, cfg.data.val_frac, cfg.train.seed)
}

/// Writes the metric log; appends rows (header-free) when resuming onto an
/// existing log so the file reads as one continuous run.
fn write_metrics(path: &Path, rows: &[EpochRow], append: bool) -> Result<()> {
    let full = metrics_csv(rows);
    if append && path.exists() {
        let body = full.split_once('\n').map(|(_, b)| b).unwrap_or("");
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| CdsError::io(path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| CdsError::io(path, e))
    } else {
        std::fs::write(path, full).map_err(|e| CdsError::io(path, e))
    }
}

/// Table row name for a component configuration: its ablation tag, or
/// "custom" for flag combinations outside the grid.
fn flags_tag(flags: &ModelFlags) -> String {
    ModelFlags::TAGS
        .iter()
        .find(|t| ModelFlags::ablation(**t) == *flags)
        .map(|t| t.to_string())
        .unwrap_or_else(|| "custom".to_string())
}

fn parse_ablation_tag(tag: char) -> Result<ModelFlags> {
    let tag = tag.to_ascii_uppercase();
    if !ModelFlags::TAGS.contains(&tag) {
        return Err(CdsError::Config(format!(
            "unknown ablation tag {tag:?} (expected one of A-F)"
        )));
    }
    Ok(ModelFlags::ablation(tag))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { config, out } => {
            let mut cfg = Config::load(&config)?;
            apply_seed_env(&mut cfg)?;
            let split = synth_split(&cfg);
            save_split_dir(&out, &split)?;
            println!(
                "wrote {} train / {} val / {} test windows to {} (hash {})",
                split.train.len(),
                split.val.len(),
                split.test.len(),
                out.display(),
                split_hash(&split)
            );
            Ok(())
        }
        Cmd::Train { config, out, data, metrics, resume, ablation } => {
            let mut cfg = Config::load(&config)?;
            apply_seed_env(&mut cfg)?;
            let data_dir = data.unwrap_or_else(|| PathBuf::from(&cfg.train.data_dir));
            let split = load_split_dir(&data_dir)?;
            let outcome: TrainOutcome = match &resume {
                Some(path) => resume_training(Checkpoint::load(path)?, &split)?,
                None => {
                    let flags = match ablation {
                        Some(tag) => parse_ablation_tag(tag)?,
                        None => ModelFlags::full(),
                    };
                    train_two_stage(&cfg, flags, &split)?
                }
            };
            let metrics_path = metrics.unwrap_or_else(|| out.with_extension("metrics.csv"));
            write_metrics(&metrics_path, &outcome.rows, resume.is_some())?;
            outcome.checkpoint.save(&out)?;
            println!(
                "checkpoint {} at epoch {} ({}); metrics {}",
                out.display(),
                outcome.checkpoint.epoch,
                outcome.checkpoint.stage,
                metrics_path.display()
            );
            Ok(())
        }
        Cmd::Evaluate { ckpt, data, report } => {
            let mut cp = Checkpoint::load(&ckpt)?;
            apply_seed_env(&mut cp.config)?;
            let split = load_split_dir(&data)?;
            let model = Model::new(&cp.config, cp.flags);
            let reports = evaluate_windows(
                &model,
                &cp.params,
                &split.test,
                "test",
                &flags_tag(&cp.flags),
                cp.config.train.seed,
            )?;
            std::fs::write(&report, report_csv(&reports)).map_err(|e| CdsError::io(&report, e))?;
            for r in &reports {
                println!("{}: 5s rmse {:.3} m over {} samples", r.model, r.rmse_m[4], r.n_samples);
            }
            println!("report {}", report.display());
            Ok(())
        }
        Cmd::Predict { ckpt, scene, svg } => {
            let mut cp = Checkpoint::load(&ckpt)?;
            apply_seed_env(&mut cp.config)?;
            let w = load_scene_json(&scene)?;
            if w.n_max != cp.config.data.n_max {
                return Err(CdsError::Config(format!(
                    "scene neighbor capacity {} does not match the model's {}",
                    w.n_max, cp.config.data.n_max
                )));
            }
            let model = Model::new(&cp.config, cp.flags);
            let pred = model.predict(&cp.params, &w, cp.config.train.seed);
            emit_plot(&w, &pred, &svg)?;
            println!("svg {}", svg.display());
            Ok(())
        }
        Cmd::Ablate { config, report, data } => {
            let mut cfg = Config::load(&config)?;
            apply_seed_env(&mut cfg)?;
            let data_dir = data.unwrap_or_else(|| PathBuf::from(&cfg.train.data_dir));
            let split = if data_dir.join("meta.json").exists() {
                load_split_dir(&data_dir)?
            } else {
                eprintln!(
                    "note: {} has no dataset; generating one from the config",
                    data_dir.display()
                );
                synth_split(&cfg)
            };
            let outcomes = ablation_run(&cfg, &split)?;
            let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
            std::fs::write(&report, report_csv(&reports)).map_err(|e| CdsError::io(&report, e))?;
            for o in &outcomes {
                println!(
                    "{}: final val mse {:.4}, 5s rmse {:.3} m",
                    o.tag, o.final_val_mse, o.report.rmse_m[4]
                );
            }
            println!("report {}", report.display());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::tiny_config;

    #[test]
    fn flag_sets_map_back_to_their_table_tags() {
        for tag in ModelFlags::TAGS {
            assert_eq!(flags_tag(&ModelFlags::ablation(tag)), tag.to_string());
        }
        assert_eq!(flags_tag(&ModelFlags::full()), "F");
        let custom = ModelFlags {
            diffusion: false,
            temporal: false,
            spatial: true,
            fusion: true,
            conditioning: true,
        };
        assert_eq!(flags_tag(&custom), "custom");
    }

    #[test]
    fn ablation_tags_are_case_insensitive_and_validated() {
        assert_eq!(parse_ablation_tag('c').unwrap(), ModelFlags::ablation('C'));
        assert!(parse_ablation_tag('Z').is_err());
    }

    #[test]
    fn unknown_flags_and_missing_args_are_usage_errors() {
        assert_eq!(cli_run(["cdstraj", "--bogus"]), 2);
        assert_eq!(cli_run(["cdstraj", "synth"]), 2);
        assert_eq!(cli_run(["cdstraj", "train", "--config"]), 2);
        assert_eq!(cli_run(["cdstraj"]), 2);
        assert_eq!(cli_run(["cdstraj", "--help"]), 0);
    }

    #[test]
    fn missing_files_are_io_errors_not_panics() {
        assert_eq!(cli_run(["cdstraj", "synth", "--config", "/nonexistent.json", "--out", "/tmp/x"]), 2);
        assert_eq!(
            cli_run(["cdstraj", "evaluate", "--ckpt", "/nonexistent.ckpt", "--data", "/tmp", "--report", "/tmp/r.csv"]),
            2
        );
    }

    #[test]
    fn in_process_pipeline_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("config.json");
        let data_dir = dir.path().join("data");
        let ckpt = dir.path().join("model.ckpt");
        let report = dir.path().join("report.csv");
        let scene = dir.path().join("scene.json");
        let svg = dir.path().join("plot.svg");

        let mut cfg = tiny_config();
        cfg.train.stage1_epochs = 1;
        cfg.train.stage2_epochs = 1;
        cfg.train.batch_size = 4;
        cfg.data.n_scenes = 20;
        std::fs::write(&cfg_path, cfg.to_json()).unwrap();

        let arg = |p: &PathBuf| p.to_str().unwrap().to_string();
        assert_eq!(cli_run(["cdstraj", "synth", "--config", &arg(&cfg_path), "--out", &arg(&data_dir)]), 0);
        assert!(data_dir.join("train.jsonl").exists() && data_dir.join("meta.json").exists());

        assert_eq!(
            cli_run([
                "cdstraj", "train",
                "--config", &arg(&cfg_path),
                "--out", &arg(&ckpt),
                "--data", &arg(&data_dir),
            ]),
            0
        );
        let metrics = ckpt.with_extension("metrics.csv");
        assert!(ckpt.exists() && metrics.exists());
        let log = std::fs::read_to_string(&metrics).unwrap();
        assert!(log.starts_with("epoch,stage,train_loss,val_mse,val_nll,val_ce\n"));

        assert_eq!(
            cli_run([
                "cdstraj", "evaluate",
                "--ckpt", &arg(&ckpt),
                "--data", &arg(&data_dir),
                "--report", &arg(&report),
            ]),
            0
        );
        let csv = std::fs::read_to_string(&report).unwrap();
        assert!(csv.contains("model,horizon_s,rmse_m,n_samples,dataset,data_hash"));
        assert!(csv.contains("zero_velocity") && csv.contains("const_velocity"));

        let split = load_split_dir(&data_dir).unwrap();
        std::fs::write(&scene, serde_json::to_string(&split.test[0]).unwrap()).unwrap();
        assert_eq!(
            cli_run([
                "cdstraj", "predict",
                "--ckpt", &arg(&ckpt),
                "--scene", &arg(&scene),
                "--svg", &arg(&svg),
            ]),
            0
        );
        let doc = std::fs::read_to_string(&svg).unwrap();
        assert_eq!(doc.matches("class=\"mode\"").count(), 6);
    }

    #[test]
    fn resume_appends_rows_without_a_second_header() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("config.json");
        let data_dir = dir.path().join("data");
        let first = dir.path().join("first.ckpt");
        let full = dir.path().join("full.ckpt");

        let mut cfg = tiny_config();
        cfg.train.stage1_epochs = 1;
        cfg.train.stage2_epochs = 1;
        cfg.train.batch_size = 4;
        cfg.data.n_scenes = 20;
        std::fs::write(&cfg_path, cfg.to_json()).unwrap();
        let arg = |p: &PathBuf| p.to_str().unwrap().to_string();
        assert_eq!(cli_run(["cdstraj", "synth", "--config", &arg(&cfg_path), "--out", &arg(&data_dir)]), 0);

        // Interrupted run: stage 1 only, by shrinking the budget.
        let mut cfg_short = cfg.clone();
        cfg_short.train.stage2_epochs = 0;
        let cfg_short_path = dir.path().join("short.json");
        std::fs::write(&cfg_short_path, cfg_short.to_json()).unwrap();
        assert_eq!(
            cli_run(["cdstraj", "train", "--config", &arg(&cfg_short_path), "--out", &arg(&first), "--data", &arg(&data_dir)]),
            0
        );

        // Hand-edit the saved config back to the full budget, then resume.
        let mut cp = Checkpoint::load(&first).unwrap();
        cp.config.train.stage2_epochs = 1;
        cp.save(&first).unwrap();
        let resumed_metrics = first.with_extension("metrics.csv");
        assert_eq!(
            cli_run([
                "cdstraj", "train",
                "--config", &arg(&cfg_path),
                "--out", &arg(&full),
                "--data", &arg(&data_dir),
                "--resume", &arg(&first),
                "--metrics", &arg(&resumed_metrics),
            ]),
            0
        );
        let log = std::fs::read_to_string(&resumed_metrics).unwrap();
        assert_eq!(log.matches("epoch,stage").count(), 1, "{log}");
        assert_eq!(log.lines().count(), 1 + 3, "{log}"); // header + epochs 0,1,2
    }
}
