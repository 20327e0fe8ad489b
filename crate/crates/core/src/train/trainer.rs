//! Training loop and the leave-one-subject-out evaluation driver.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, write_json};
use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::image::ImageU8;
use crate::layers::{apply_bn_updates, Session};
use crate::model::{argmax, MegaNet, MegaNetConfig};
use crate::pipeline::{images_to_tensor, PipelineConfig};

use super::augment::augment;
use super::loso::loso_folds;
use super::metrics::{ConfusionMatrix, Metrics};
use super::optim::{Adam, AdamConfig};

/// Optimizer identifier written into every report.
pub const OPTIMIZER: &str = "adam-l2-coupled";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub focal_gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Expand every training image into its flip and rotation variants.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 20,
            focal_gamma: 2.0,
            batch_size: 8,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return bad(format!("focal_gamma {} must be >= 0", self.focal_gamma));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

/// Train a freshly initialized network on `samples` (image, label).
/// Returns the network and the mean loss of every epoch.
pub fn train_model(
    model: &MegaNetConfig,
    train: &TrainConfig,
    samples: &[(&ImageU8, usize)],
    seed: u64,
) -> Result<(MegaNet, Vec<f64>)> {
    train.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    let mut net = MegaNet::build(model.clone(), seed)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(2);
    let mut adam = Adam::new(train.adam());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(train.batch_size) {
            let images: Vec<&ImageU8> = batch.iter().map(|&i| samples[i].0).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| samples[i].1).collect();
            let x = images_to_tensor(&images)?;
            let (grads, updates, loss) = {
                let mut s = Session::train(&net.store, &mut dropout_rng);
                let xv = s.graph.constant(x);
                let out = net.forward(&mut s, xv)?;
                let loss = s.graph.focal_loss(out.probs, &targets, train.focal_gamma)?;
                let (mut graph, updates) = s.into_parts();
                let value = graph.value(loss).data()[0];
                (graph.backward(loss)?, updates, value)
            };
            if !loss.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite loss in epoch {}", epoch + 1)));
            }
            let grads: Vec<_> = grads.params().collect();
            adam.step(&mut net.store, grads.iter().map(|(id, g)| (*id, g.as_ref())));
            apply_bn_updates(&mut net.store, &updates);
            total += loss * batch.len() as f64;
        }
        let mean = total / samples.len() as f64;
        log::debug!("epoch {}/{}: loss {mean:.5}", epoch + 1, train.epochs);
        losses.push(mean);
    }
    Ok((net, losses))
}

/// Eval-mode class probabilities for every image, `batch` images at a time.
pub fn predict_images(net: &MegaNet, images: &[&ImageU8], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        out.extend(net.predict_proba(&images_to_tensor(chunk)?)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject: String,
    pub clip: String,
    pub truth: usize,
    pub predicted: usize,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub held_out_subject: String,
    /// Subjects whose clips the fold's model was trained on.
    pub train_subjects: Vec<String>,
    pub train_samples: usize,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<Prediction>,
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: MegaNetConfig,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub ablation: String,
    pub optimizer: String,
    pub class_names: Vec<String>,
    pub per_fold: Vec<FoldReport>,
    pub aggregate: ConfusionMatrix,
    pub metrics: Metrics,
    pub wall_clock_secs: f64,
}

impl EvalReport {
    /// The report without its timing field, for reproducibility comparisons.
    pub fn without_timing(&self) -> EvalReport {
        EvalReport { wall_clock_secs: 0.0, ..self.clone() }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// One `fold,subject,clip,true,predicted` line per test prediction.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["fold", "subject", "clip", "true", "predicted"]).map_err(csv_err)?;
        for f in &self.per_fold {
            for p in &f.predictions {
                w.write_record([
                    f.fold.to_string(),
                    p.subject.clone(),
                    p.clip.clone(),
                    self.class_names[p.truth].clone(),
                    self.class_names[p.predicted].clone(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Execution settings that do not influence results.
#[derive(Clone, Debug, Default)]
pub struct LosoOptions {
    /// Worker threads for encoding and folds; 0 uses rayon's default.
    pub jobs: usize,
    /// When set, each fold's network is written to `<dir>/fold_<subject>`.
    pub checkpoint_dir: Option<PathBuf>,
}

struct Clip {
    subject: String,
    clip: String,
    label: usize,
    variants: Vec<ImageU8>,
}

/// Seed of fold `index`: the run seed combined with the fold index.
pub fn fold_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// Full leave-one-subject-out run: encode every clip once, expand training
/// images, train one network per held-out subject and pool the confusions.
pub fn train_loso(
    manifest: &DatasetManifest,
    model: &MegaNetConfig,
    pipeline: &PipelineConfig,
    train: &TrainConfig,
    options: &LosoOptions,
) -> Result<EvalReport> {
    let started = Instant::now();
    model.validate()?;
    train.validate()?;
    if manifest.num_classes() != model.num_classes {
        return Err(Error::Config(format!(
            "manifest has {} classes, model is configured for {}",
            manifest.num_classes(),
            model.num_classes
        )));
    }
    let subjects: Vec<&str> = manifest.rows.iter().map(|r| r.subject.as_str()).collect();
    let folds = loso_folds(&subjects)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let (h, w, _) = model.input_size;

    let clips: Vec<Clip> = pool.install(|| {
        manifest
            .rows
            .par_iter()
            .map(|row| {
                let enc = pipeline.encode_row(manifest, row, (h, w)).map_err(|e| Error::fold(&row.subject, e))?;
                let variants = if train.augment { augment(&enc.image) } else { vec![enc.image.clone()] };
                Ok(Clip { subject: enc.subject, clip: enc.clip, label: enc.label, variants })
            })
            .collect::<Result<_>>()
    })?;
    if let Some(c) = clips.iter().find(|c| c.variants[0].channels() != model.input_size.2) {
        return Err(Error::Config(format!(
            "clip '{}' has {} channels, model expects {}",
            c.clip,
            c.variants[0].channels(),
            model.input_size.2
        )));
    }

    let per_fold: Vec<FoldReport> = pool.install(|| {
        folds
            .par_iter()
            .enumerate()
            .map(|(index, fold)| {
                let run = || -> Result<FoldReport> {
                    let samples: Vec<(&ImageU8, usize)> = fold
                        .train
                        .iter()
                        .flat_map(|&i| {
                            let clip = &clips[i];
                            clip.variants.iter().map(move |v| (v, clip.label))
                        })
                        .collect();
                    let mut train_subjects: Vec<String> =
                        fold.train.iter().map(|&i| clips[i].subject.clone()).collect();
                    train_subjects.sort();
                    train_subjects.dedup();
                    let fold_start = Instant::now();
                    let (net, epoch_losses) = train_model(model, train, &samples, fold_seed(train.seed, index))?;
                    let test_images: Vec<&ImageU8> = fold.test.iter().map(|&i| &clips[i].variants[0]).collect();
                    let probs = predict_images(&net, &test_images, train.batch_size)?;
                    let mut confusion = ConfusionMatrix::new(model.num_classes);
                    let predictions: Vec<Prediction> = fold
                        .test
                        .iter()
                        .zip(probs)
                        .map(|(&i, p)| {
                            let predicted = argmax(&p);
                            confusion.record(clips[i].label, predicted);
                            Prediction {
                                subject: clips[i].subject.clone(),
                                clip: clips[i].clip.clone(),
                                truth: clips[i].label,
                                predicted,
                                probs: p,
                            }
                        })
                        .collect();
                    if let Some(dir) = &options.checkpoint_dir {
                        checkpoint::save(
                            &net,
                            &dir.join(format!("fold_{}", fold.held_out)),
                            &[
                                ("pipeline.json", serde_json::to_value(pipeline).expect("serializable")),
                                ("train.json", serde_json::to_value(train).expect("serializable")),
                            ],
                        )?;
                    }
                    let correct = predictions.iter().filter(|p| p.truth == p.predicted).count();
                    log::info!(
                        "fold {} ({}): {correct}/{} correct, final loss {:.4}, {:.1}s",
                        index + 1,
                        fold.held_out,
                        predictions.len(),
                        epoch_losses.last().copied().unwrap_or(f64::NAN),
                        fold_start.elapsed().as_secs_f64()
                    );
                    Ok(FoldReport {
                        fold: index,
                        held_out_subject: fold.held_out.clone(),
                        train_subjects,
                        train_samples: samples.len(),
                        confusion,
                        predictions,
                        epoch_losses,
                    })
                };
                run().map_err(|e| match e {
                    e @ Error::Fold { .. } => e,
                    e => Error::fold(&fold.held_out, e),
                })
            })
            .collect::<Result<_>>()
    })?;

    let mut aggregate = ConfusionMatrix::new(model.num_classes);
    for f in &per_fold {
        aggregate.merge(&f.confusion);
    }
    let metrics = aggregate.metrics()?;
    Ok(EvalReport {
        model: model.clone(),
        train: train.clone(),
        pipeline: pipeline.clone(),
        ablation: model.ablation_label(),
        optimizer: OPTIMIZER.into(),
        class_names: manifest.class_names.clone(),
        per_fold,
        aggregate,
        metrics,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { focal_gamma: -1.0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn fold_seeds_differ_per_fold() {
        assert_ne!(fold_seed(5, 0), fold_seed(5, 1));
        assert_eq!(fold_seed(5, 0), 5);
    }
}
