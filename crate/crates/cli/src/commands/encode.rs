use std::fs;
use std::path::{Path, PathBuf};

use mesti_core::data::{list_frames, save_png};
use mesti_core::{EncoderKind, PipelineConfig};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{load_manifest, thread_pool, write_json};
use crate::args::EncodeArgs;
use crate::config::{merge, FileConfig};
use crate::error::{CliError, CliResult};

struct Job {
    subject: String,
    clip: String,
    dir: PathBuf,
    onset: usize,
    offset: Option<usize>,
    apex: Option<usize>,
}

#[derive(Serialize)]
struct Effective<'a> {
    command: &'static str,
    input: &'a Path,
    encoders: Vec<EncoderKind>,
    apex_fallback: crate::args::ApexFallback,
    pipeline: &'a PipelineConfig,
    size: Option<usize>,
    out_dir: &'a Path,
    jobs: usize,
    config_file: Option<&'a Path>,
}

pub fn run(args: &EncodeArgs, file: &FileConfig) -> CliResult {
    let pipeline = args.pipeline.apply(merge(&PipelineConfig::default(), file.pipeline.as_ref(), "pipeline")?);
    let out = file.out_dir(args.out.as_deref(), "encoded");
    let jobs = file.jobs(args.jobs);
    let (input, work) = match (&args.manifest, &args.clip_dir) {
        (Some(path), _) => {
            let m = load_manifest(path)?;
            let work: Vec<Job> = m
                .rows
                .iter()
                .map(|r| Job {
                    subject: r.subject.clone(),
                    clip: clip_name(&r.clip_dir),
                    dir: m.clip_path(r),
                    onset: r.onset,
                    offset: Some(r.offset),
                    apex: r.apex,
                })
                .collect();
            (path.as_path(), work)
        }
        (None, Some(dir)) => {
            let job = Job {
                subject: args.subject.clone(),
                clip: clip_name(&dir.to_string_lossy()),
                dir: dir.clone(),
                onset: args.onset.unwrap_or(1),
                offset: args.offset,
                apex: args.apex,
            };
            (dir.as_path(), vec![job])
        }
        (None, None) => return Err(CliError::usage("one of --manifest or --clip-dir is required")),
    };
    let effective = Effective {
        command: "encode",
        input,
        encoders: args.encoder.kinds(),
        apex_fallback: args.apex_fallback,
        pipeline: &pipeline,
        size: args.size,
        out_dir: &out,
        jobs,
        config_file: file.path.as_deref(),
    };
    let config = serde_json::to_value(&effective).map_err(CliError::usage)?;

    let tasks: Vec<(&Job, EncoderKind)> =
        work.iter().flat_map(|j| effective.encoders.iter().map(move |&k| (j, k))).collect();
    let results: Vec<Result<PathBuf, String>> = thread_pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(job, kind)| {
                encode_one(job, kind, &pipeline, args.size, &out, &config)
                    .map_err(|e| format!("{}/{} ({}): {e}", job.subject, job.clip, kind.as_str()))
            })
            .collect()
    });

    let failures: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    let written = results.len() - failures.len();
    println!("encoded {written} of {} images into {}", results.len(), out.display());
    if failures.is_empty() {
        return Ok(());
    }
    for f in &failures {
        eprintln!("failed: {f}");
    }
    Err(CliError::data(format!("{} of {} encodings failed", failures.len(), results.len())))
}

fn clip_name(clip_dir: &str) -> String {
    Path::new(clip_dir)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| clip_dir.replace(['/', '\\'], "_"))
}

fn encode_one(
    job: &Job,
    kind: EncoderKind,
    pipeline: &PipelineConfig,
    size: Option<usize>,
    out: &Path,
    config: &serde_json::Value,
) -> Result<PathBuf, String> {
    let offset = match job.offset {
        Some(o) => o,
        None => match list_frames(&job.dir).map_err(|e| e.to_string())?.len() {
            0 => return Err(format!("{}: no frames found", job.dir.display())),
            n => n,
        },
    };
    let p = PipelineConfig { encoder: kind, ..pipeline.clone() };
    let (mesti, view) =
        p.encode_clip(&job.dir, job.onset, offset, job.apex, size.map(|s| (s, s))).map_err(|e| e.to_string())?;

    let stem = format!("{}_{}_{}", job.subject, job.clip, kind.as_str());
    fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let png = out.join(format!("{stem}.png"));
    save_png(&png, &view).map_err(|e| e.to_string())?;
    let raw: Vec<u8> = mesti.raw.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    let raw_path = out.join(format!("{stem}.raw"));
    fs::write(&raw_path, raw).map_err(|e| format!("{}: {e}", raw_path.display()))?;
    let (h, w, c) = mesti.raw.dims();
    let annotated = job.apex.is_some() && !pipeline.ignore_apex;
    let sidecar = json!({
        "H": h,
        "W": w,
        "C": c,
        "T": mesti.meta.frames,
        "a": mesti.meta.apex,
        "apex_source": if annotated { "annotated" } else { "middle" },
        "raw_dtype": "f32-le",
        "raw_layout": "HWC",
        "view_size": view.dims(),
        "subject": job.subject,
        "clip": job.clip,
        "clip_dir": job.dir,
        "onset": job.onset,
        "offset": offset,
        "encoder": kind,
        "config": config,
    });
    write_json(&out.join(format!("{stem}.json")), &sidecar).map_err(|e| e.message)?;
    Ok(png)
}
