use std::collections::BTreeSet;

use mesti_core::data::{generate_synthetic, DatasetManifest, SynthSpec};
use mesti_core::pipeline::{images_to_tensor, PipelineConfig};
use mesti_core::train::{train_loso, LosoOptions};
use mesti_core::{checkpoint, Error, EvalReport, MegaNetConfig, TrainConfig};

fn dataset(root: &std::path::Path) -> DatasetManifest {
    let spec = SynthSpec {
        num_subjects: 3,
        clips_per_subject: 3,
        frame_count: (5, 6),
        max_padding_frames: 1,
        image_size: (32, 32),
        ..SynthSpec::default()
    };
    generate_synthetic(&spec, root).unwrap()
}

fn model() -> MegaNetConfig {
    MegaNetConfig::default().with_resolution(32).scaled_width(8)
}

fn train_cfg() -> TrainConfig {
    TrainConfig { epochs: 1, seed: 11, ..TrainConfig::default() }
}

fn run(m: &DatasetManifest, jobs: usize, ckpt: Option<&std::path::Path>) -> EvalReport {
    let options = LosoOptions { jobs, checkpoint_dir: ckpt.map(|p| p.to_path_buf()) };
    train_loso(m, &model(), &PipelineConfig::default(), &train_cfg(), &options).unwrap()
}

#[test]
fn folds_never_train_on_the_held_out_subject() {
    let tmp = tempfile::tempdir().unwrap();
    let m = dataset(tmp.path());
    let ckpt = tmp.path().join("ckpt");
    let report = run(&m, 1, Some(&ckpt));

    let subjects = m.subjects();
    assert_eq!(report.per_fold.len(), subjects.len());
    for (fold, subject) in report.per_fold.iter().zip(&subjects) {
        assert_eq!(&fold.held_out_subject, subject);
        assert!(!fold.train_subjects.contains(subject));
        let expected: BTreeSet<&String> = subjects.iter().filter(|s| *s != subject).collect();
        assert_eq!(fold.train_subjects.iter().collect::<BTreeSet<_>>(), expected);
        assert_eq!(fold.train_samples, 6 * 6);
        assert_eq!(fold.predictions.len(), 3);
        assert!(fold.predictions.iter().all(|p| &p.subject == subject));
        assert_eq!(fold.confusion.total(), 3);
        assert_eq!(fold.epoch_losses.len(), 1);
    }
    assert_eq!(report.aggregate.total(), m.rows.len() as u64);
    assert_eq!(report.optimizer, "adam-l2-coupled");
    assert_eq!(report.ablation, "gab+res+sa");
}

#[test]
fn fold_checkpoints_reproduce_reported_probabilities() {
    let tmp = tempfile::tempdir().unwrap();
    let m = dataset(tmp.path());
    let ckpt = tmp.path().join("ckpt");
    let report = run(&m, 1, Some(&ckpt));
    let fold = &report.per_fold[1];
    let net = checkpoint::load(&ckpt.join(format!("fold_{}", fold.held_out_subject))).unwrap();
    let pipeline = PipelineConfig::default();
    for p in &fold.predictions {
        let row = m.rows.iter().find(|r| r.clip_dir == p.clip).unwrap();
        let enc = pipeline.encode_row(&m, row, (32, 32)).unwrap();
        let probs = net.predict_proba(&images_to_tensor(&[&enc.image]).unwrap()).unwrap();
        assert_eq!(probs[0], p.probs);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let m = dataset(tmp.path());
    let a = run(&m, 1, None);
    let b = run(&m, 3, None);
    assert_eq!(a.without_timing(), b.without_timing());
}

#[test]
fn class_count_mismatch_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let m = dataset(tmp.path());
    let cfg = MegaNetConfig { num_classes: 5, ..model() };
    let err = train_loso(&m, &cfg, &PipelineConfig::default(), &train_cfg(), &LosoOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn unreadable_clip_reports_its_subject() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = dataset(tmp.path());
    m.rows[4].clip_dir = "frames/missing".into();
    let subject = m.rows[4].subject.clone();
    let err = train_loso(&m, &model(), &PipelineConfig::default(), &train_cfg(), &LosoOptions::default()).unwrap_err();
    match err {
        Error::Fold { subject: s, .. } => assert_eq!(s, subject),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn report_files_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let m = dataset(tmp.path());
    let report = run(&m, 1, None);
    let path = tmp.path().join("report.json");
    report.save_json(&path).unwrap();
    let back: EvalReport = checkpoint::read_json(&path).unwrap();
    assert_eq!(back, report);
    let csv = tmp.path().join("predictions.csv");
    report.save_csv(&csv).unwrap();
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + m.rows.len());
    assert_eq!(back.aggregate.metrics().unwrap(), report.metrics);
}
