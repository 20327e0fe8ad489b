use mesti_core::checkpoint;
use mesti_core::data::{load_image, resize_u8, save_png};
use mesti_core::image::{Image, ImageU8};
use mesti_core::layers::Session;
use mesti_core::mesti::normalize_view;
use mesti_core::pipeline::images_to_tensor;
use mesti_core::{MegaNet, MegaNetConfig};
use serde_json::json;

use super::write_json;
use crate::args::AttentionArgs;
use crate::config::{merge, FileConfig};
use crate::error::{CliError, CliResult};

pub fn run(args: &AttentionArgs, file: &FileConfig) -> CliResult {
    let net = match &args.checkpoint {
        Some(dir) => checkpoint::load(dir).map_err(CliError::usage)?,
        None => {
            let mut cfg = merge(&MegaNetConfig::default(), file.model.as_ref(), "model")?;
            if let Some(r) = args.resolution {
                cfg = cfg.with_resolution(r);
            }
            MegaNet::build(cfg, args.seed).map_err(CliError::usage)?
        }
    };
    let gab = net.gab.as_ref().ok_or_else(|| CliError::usage("the model has no gradient attention block"))?;

    let input = load_image(&args.image).map_err(CliError::usage)?;
    let (h, w, c) = net.config.input_size;
    let image = match_channels(&input, c)?;
    let image = if (image.height(), image.width()) == (h, w) {
        image
    } else {
        resize_u8(&image, h, w).map_err(CliError::usage)?
    };

    let x = images_to_tensor(&[&image]).map_err(CliError::usage)?;
    let mut s = Session::eval(&net.store);
    let xv = s.graph.constant(x);
    let (_, attn) = gab.forward(&mut s, xv).map_err(CliError::usage)?;
    let values = s.graph.value(attn).data().to_vec();
    let map = Image::from_vec(h, w, 1, values).map_err(CliError::data)?;
    save_png(&args.out, &normalize_view(&map)).map_err(CliError::data)?;

    let data = map.data();
    let (min, max) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    let sidecar = json!({
        "image": args.image,
        "input_dims": input.dims(),
        "map_size": [h, w],
        "attention": {"min": min, "max": max, "mean": mean},
        "config": {
            "command": "attention-map",
            "checkpoint": args.checkpoint,
            "seed": args.seed,
            "model": net.config,
            "config_file": file.path,
        },
    });
    write_json(&args.out.with_extension("json"), &sidecar)?;
    println!(
        "attention map {}x{} (min {min:.4}, max {max:.4}, mean {mean:.4}) written to {}",
        h,
        w,
        args.out.display()
    );
    Ok(())
}

/// Replicate gray to RGB or average RGB to gray to match the model input.
fn match_channels(image: &ImageU8, channels: usize) -> CliResult<ImageU8> {
    let (h, w, c) = image.dims();
    match (c, channels) {
        (a, b) if a == b => Ok(image.clone()),
        (1, n) => Ok(Image::from_fn(h, w, n, |y, x, _| image.get(y, x, 0))),
        (n, 1) => Ok(Image::from_fn(h, w, 1, |y, x, _| {
            let sum: u32 = (0..n).map(|k| image.get(y, x, k) as u32).sum();
            ((sum + n as u32 / 2) / n as u32) as u8
        })),
        (a, b) => Err(CliError::usage(format!("cannot feed a {a}-channel image to a {b}-channel model"))),
    }
}
