use std::path::{Path, PathBuf};

use mesti_core::train::{train_loso, LosoOptions};
use mesti_core::{EvalReport, PipelineConfig, TrainConfig};
use serde::Serialize;

use super::{load_manifest, write_json};
use crate::args::{Preset, Protocol, TrainArgs};
use crate::config::{merge, FileConfig};
use crate::error::{CliError, CliResult};

/// Command-line context stored next to the report's own configuration.
#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'static str,
    manifest: &'a Path,
    protocol: Protocol,
    preset: Preset,
    jobs: usize,
    out_dir: &'a Path,
    checkpoints: PathBuf,
    config_file: Option<&'a Path>,
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    run: RunInfo<'a>,
}

pub fn run(args: &TrainArgs, file: &FileConfig) -> CliResult {
    let manifest = load_manifest(&args.manifest)?;
    let mut base = args.model.preset.model();
    base.num_classes = manifest.num_classes();
    let model = args.model.apply(merge(&base, file.model.as_ref(), "model")?);
    let train = args.train.apply(merge(&TrainConfig::default(), file.train.as_ref(), "train")?);
    let mut pipeline = args.pipeline.apply(merge(&PipelineConfig::default(), file.pipeline.as_ref(), "pipeline")?);
    if let Some(e) = args.encoder {
        pipeline.encoder = e.into();
    }
    let jobs = file.jobs(args.jobs);
    let out = file.out_dir(args.out.as_deref(), "train-run");
    let checkpoints = out.join("checkpoints");

    log::info!(
        "training {} ({} blocks, {}x{} input) on {} clips of {} subjects",
        model.ablation_label(),
        model.num_blocks,
        model.input_size.0,
        model.input_size.1,
        manifest.rows.len(),
        manifest.subjects().len()
    );
    let options = LosoOptions { jobs, checkpoint_dir: Some(checkpoints.clone()) };
    let report = match args.protocol {
        Protocol::Loso => train_loso(&manifest, &model, &pipeline, &train, &options).map_err(CliError::classify)?,
    };

    let output = TrainOutput {
        report: &report,
        run: RunInfo {
            command: "train",
            manifest: &args.manifest,
            protocol: args.protocol,
            preset: args.model.preset,
            jobs,
            out_dir: &out,
            checkpoints,
            config_file: file.path.as_deref(),
        },
    };
    write_json(&out.join("report.json"), &output)?;
    report.save_csv(&out.join("predictions.csv")).map_err(CliError::data)?;
    let m = report.metrics;
    println!(
        "ACC {:.4}  UF1 {:.4}  UAR {:.4}  ({} folds, {:.1}s)",
        m.acc,
        m.uf1,
        m.uar,
        report.per_fold.len(),
        report.wall_clock_secs
    );
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}
