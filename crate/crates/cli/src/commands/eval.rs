use mesti_core::checkpoint;
use mesti_core::model::argmax;
use mesti_core::pipeline::EncodedClip;
use mesti_core::train::{predict_images, ConfusionMatrix, Prediction};
use mesti_core::PipelineConfig;
use rayon::prelude::*;
use serde_json::json;

use super::{load_manifest, thread_pool, write_json};
use crate::args::EvalArgs;
use crate::config::FileConfig;
use crate::error::{CliError, CliResult};

pub fn run(args: &EvalArgs, file: &FileConfig) -> CliResult {
    if !args.checkpoint.is_dir() {
        return Err(CliError::usage(format!("checkpoint {} not found", args.checkpoint.display())));
    }
    let net = checkpoint::load(&args.checkpoint).map_err(CliError::usage)?;
    let pipeline_path = args.checkpoint.join("pipeline.json");
    let pipeline: PipelineConfig = if pipeline_path.exists() {
        checkpoint::read_json(&pipeline_path).map_err(CliError::usage)?
    } else {
        log::warn!("{} absent, using the default pipeline", pipeline_path.display());
        PipelineConfig::default()
    };
    let manifest = load_manifest(&args.manifest)?;
    if manifest.num_classes() != net.config.num_classes {
        return Err(CliError::usage(format!(
            "manifest has {} classes, checkpoint was trained for {}",
            manifest.num_classes(),
            net.config.num_classes
        )));
    }
    if args.batch_size == 0 {
        return Err(CliError::usage("--batch-size must be at least 1"));
    }
    let jobs = file.jobs(args.jobs);
    let out = file.out_dir(args.out.as_deref(), "eval-run");

    let (h, w, _) = net.config.input_size;
    let encoded: Vec<Result<EncodedClip, String>> = thread_pool(jobs)?.install(|| {
        manifest
            .rows
            .par_iter()
            .map(|row| {
                pipeline
                    .encode_row(&manifest, row, (h, w))
                    .map_err(|e| format!("{}/{}: {e}", row.subject, row.clip_dir))
            })
            .collect()
    });
    let (clips, failures): (Vec<_>, Vec<_>) = encoded.into_iter().partition(Result::is_ok);
    let clips: Vec<EncodedClip> = clips.into_iter().map(Result::unwrap).collect();
    let failures: Vec<String> = failures.into_iter().map(|r| r.unwrap_err()).collect();
    for f in &failures {
        eprintln!("failed: {f}");
    }
    if clips.is_empty() {
        return Err(CliError::data("no clip could be encoded"));
    }

    let images: Vec<_> = clips.iter().map(|c| &c.image).collect();
    let probs = predict_images(&net, &images, args.batch_size).map_err(CliError::classify)?;
    let mut confusion = ConfusionMatrix::new(net.config.num_classes);
    let predictions: Vec<Prediction> = clips
        .iter()
        .zip(probs)
        .map(|(c, p)| {
            let predicted = argmax(&p);
            confusion.record(c.label, predicted);
            Prediction { subject: c.subject.clone(), clip: c.clip.clone(), truth: c.label, predicted, probs: p }
        })
        .collect();
    let metrics = confusion.metrics().map_err(CliError::data)?;

    let report = json!({
        "config": {
            "command": "eval",
            "manifest": args.manifest,
            "checkpoint": args.checkpoint,
            "model": net.config,
            "pipeline": pipeline,
            "batch_size": args.batch_size,
            "jobs": jobs,
            "out_dir": out,
            "config_file": file.path,
        },
        "class_names": manifest.class_names,
        "confusion": confusion,
        "metrics": metrics,
        "predictions": predictions,
        "failures": failures,
    });
    write_json(&out.join("eval.json"), &report)?;
    println!("ACC {:.4}  UF1 {:.4}  UAR {:.4}  ({} clips)", metrics.acc, metrics.uf1, metrics.uar, clips.len());
    println!("confusion (rows truth, columns predicted):");
    for row in &confusion.counts {
        println!("  {}", row.iter().map(u64::to_string).collect::<Vec<_>>().join(" "));
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::data(format!("{} of {} clips failed", failures.len(), manifest.rows.len())))
    }
}
