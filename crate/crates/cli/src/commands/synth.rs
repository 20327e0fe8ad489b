use std::fs;

use mesti_core::data::{generate_synthetic, SynthSpec};

use crate::args::SynthArgs;
use crate::config::{merge, FileConfig};
use crate::error::{CliError, CliResult};

pub fn run(args: &SynthArgs, file: &FileConfig) -> CliResult {
    let mut spec = merge(&SynthSpec::default(), file.synth.as_ref(), "synth")?;
    if let Some(path) = &args.spec {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let overlay: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        spec = merge(&spec, Some(&overlay), &path.display().to_string())?;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(CliError::usage)?;
    let out = file.out_dir(args.out.as_deref(), "synth-data");
    let manifest = generate_synthetic(&spec, &out).map_err(CliError::classify)?;
    println!(
        "generated {} clips of {} subjects in {} classes under {}",
        manifest.rows.len(),
        spec.num_subjects,
        spec.num_classes,
        out.display()
    );
    Ok(())
}
