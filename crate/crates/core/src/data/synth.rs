//! Synthetic micro-motion clips: a face-like pattern per subject, warped by
//! a class-specific local displacement whose strength rises to an apex and
//! falls back.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_json;
use crate::error::{Error, Result};
use crate::image::{to_u8, ImageU8};

use super::image_io::save_png;
use super::manifest::{DatasetManifest, ManifestRow};

/// Names of the motion archetypes, in label order.
pub const ARCHETYPES: [&str; 5] = ["negative", "positive", "surprise", "brow_lower", "lip_depress"];

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_NO_APEX_FILE: &str = "manifest_noapex.csv";
pub const SPEC_FILE: &str = "spec.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Envelope {
    /// Piecewise linear, zero at onset and offset, one at the apex.
    Triangular,
    /// Raised-cosine version of the triangular profile.
    Smooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_subjects: usize,
    pub clips_per_subject: usize,
    pub num_classes: usize,
    /// Inclusive range of onset-to-offset frame counts.
    pub frame_count: (usize, usize),
    /// Up to this many static frames are added before onset and after offset.
    pub max_padding_frames: usize,
    /// `(height, width)`.
    pub image_size: (usize, usize),
    /// Peak displacement in pixels.
    pub amplitude: f64,
    /// Standard deviation of additive pixel noise on the `[0, 1]` scale.
    pub noise_sigma: f64,
    pub envelope: Envelope,
    /// Apex position range as fractions of the clip length.
    pub apex_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_subjects: 10,
            clips_per_subject: 6,
            num_classes: 3,
            frame_count: (10, 20),
            max_padding_frames: 3,
            image_size: (112, 112),
            amplitude: 2.0,
            noise_sigma: 0.01,
            envelope: Envelope::Triangular,
            apex_range: (0.3, 0.7),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.num_subjects == 0 {
            return bad("num_subjects", "must be at least 1".into());
        }
        if self.clips_per_subject == 0 {
            return bad("clips_per_subject", "must be at least 1".into());
        }
        if !(2..=ARCHETYPES.len()).contains(&self.num_classes) {
            return bad("num_classes", format!("{} not in 2..={}", self.num_classes, ARCHETYPES.len()));
        }
        let (lo, hi) = self.frame_count;
        if lo < 3 || hi < lo {
            return bad("frame_count", format!("range {lo}..={hi} must satisfy 3 <= min <= max"));
        }
        let (h, w) = self.image_size;
        if h < 32 || w < 32 {
            return bad("image_size", format!("{h}x{w} is smaller than 32x32"));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return bad("amplitude", format!("{} must be finite and >= 0", self.amplitude));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", format!("{} must be finite and >= 0", self.noise_sigma));
        }
        let (a0, a1) = self.apex_range;
        if !(0.0..=1.0).contains(&a0) || !(0.0..=1.0).contains(&a1) || a1 < a0 {
            return bad("apex_range", format!("({a0}, {a1}) must be ordered fractions in [0, 1]"));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        ARCHETYPES[..self.num_classes].iter().map(|s| s.to_string()).collect()
    }
}

/// Motion strength of frames `1..=len` peaking at the 1-based `apex`.
pub fn envelope(kind: Envelope, len: usize, apex: usize) -> Vec<f64> {
    (1..=len)
        .map(|t| {
            let tri = if t <= apex {
                if apex == 1 {
                    1.0
                } else {
                    (t - 1) as f64 / (apex - 1) as f64
                }
            } else {
                (len - t) as f64 / (len - apex) as f64
            };
            match kind {
                Envelope::Triangular => tri,
                Envelope::Smooth => 0.5 - 0.5 * (std::f64::consts::PI * tri).cos(),
            }
        })
        .collect()
}

/// Soft elliptical blob: 1 inside, 0 outside, smooth over the boundary.
fn blob(u: f64, v: f64, cu: f64, cv: f64, hu: f64, hv: f64) -> f64 {
    let r = (((u - cu) / hu).powi(2) + ((v - cv) / hv).powi(2)).sqrt();
    let t = ((r - 0.6) / 0.8).clamp(0.0, 1.0);
    1.0 - t * t * (3.0 - 2.0 * t)
}

/// One moving region of an archetype.
#[derive(Clone, Copy, Debug)]
struct Region {
    /// `(u, v)` centre in face units.
    centre: (f64, f64),
    /// Gaussian width in face units.
    width: f64,
    /// Unit direction `(dy, dx)` in pixels.
    direction: (f64, f64),
}

/// Per-subject appearance, sampled once from the subject's stream.
#[derive(Clone, Debug)]
struct Face {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    background: [f64; 3],
    skin: [f64; 3],
    /// Offsets of the brow/eye row, nose row and mouth row in face units.
    rows: [f64; 3],
    eye_spread: f64,
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Face {
    fn sample(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let (hf, wf) = (h as f64, w as f64);
        let scale = rng.random_range(0.92..1.05);
        let mut waves = Vec::new();
        for _ in 0..3 {
            let wavelength = rng.random_range(8.0..25.0);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / wavelength;
            waves.push((k * angle.cos(), k * angle.sin(), phase, rng.random_range(0.02..0.05)));
        }
        Face {
            cy: hf * 0.52 + rng.random_range(-0.03..0.03) * hf,
            cx: wf * 0.5 + rng.random_range(-0.03..0.03) * wf,
            ry: hf * 0.40 * scale,
            rx: wf * 0.32 * scale,
            background: [rng.random_range(0.15..0.4), rng.random_range(0.15..0.4), rng.random_range(0.15..0.4)],
            skin: [rng.random_range(0.72..0.9), rng.random_range(0.52..0.7), rng.random_range(0.42..0.6)],
            rows: [rng.random_range(-0.04..0.04), rng.random_range(-0.03..0.03), rng.random_range(-0.04..0.04)],
            eye_spread: rng.random_range(0.34..0.42),
            waves,
        }
    }

    fn to_face(&self, y: f64, x: f64) -> (f64, f64) {
        ((x - self.cx) / self.rx, (y - self.cy) / self.ry)
    }

    /// Colour of the undisplaced pattern at real pixel coordinates.
    fn color(&self, y: f64, x: f64) -> [f64; 3] {
        let (u, v) = self.to_face(y, x);
        let [eye_row, nose_row, mouth_row] = self.rows;
        let e = self.eye_spread;
        let face = blob(u, v, 0.0, 0.0, 1.0, 1.0);
        let texture: f64 = self.waves.iter().map(|&(kx, ky, phase, a)| a * (kx * x + ky * y + phase).sin()).sum();
        let mut dark = 0.0;
        let mut red = 0.0;
        for side in [-1.0, 1.0] {
            dark += 0.5 * blob(u, v, side * e, -0.40 + eye_row, 0.22, 0.05);
            dark += 0.55 * blob(u, v, side * e, -0.20 + eye_row, 0.13, 0.06);
            dark += 0.45 * blob(u, v, side * 0.12, 0.25 + nose_row, 0.07, 0.04);
            dark += 0.3 * blob(u, v, side * 0.2, 0.16 + nose_row, 0.035, 0.1);
        }
        dark += 0.12 * blob(u, v, 0.0, 0.03 + nose_row, 0.05, 0.22);
        let mouth = blob(u, v, 0.0, 0.55 + mouth_row, 0.33, 0.07);
        dark += 0.35 * mouth;
        red += 0.25 * mouth;
        let dark = dark.min(0.9);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let tint = if c == 0 { 1.0 } else { 1.0 - red };
            let skin = self.skin[c] * (1.0 + texture) * (1.0 - dark) * tint;
            out[c] = (face * skin + (1.0 - face) * self.background[c]).clamp(0.0, 1.0);
        }
        out
    }

    /// Moving regions of one archetype.
    fn regions(&self, class: usize) -> Vec<Region> {
        let [eye_row, nose_row, mouth_row] = self.rows;
        let e = self.eye_spread;
        let mut out = Vec::new();
        for side in [-1.0f64, 1.0] {
            let region = match class {
                0 => ((side * 0.2, 0.18 + nose_row), 0.14, (-0.85, -side * 0.53)),
                1 => ((side * 0.33, 0.55 + mouth_row), 0.14, (-0.6, side * 0.8)),
                2 => ((side * e, -0.40 + eye_row), 0.16, (-1.0, 0.0)),
                3 => ((side * (e - 0.12), -0.38 + eye_row), 0.14, (0.8, -side * 0.6)),
                4 => ((side * 0.33, 0.55 + mouth_row), 0.14, (0.98, side * 0.2)),
                _ => unreachable!("class validated against the archetype list"),
            };
            out.push(Region { centre: region.0, width: region.1, direction: region.2 });
        }
        out
    }

    /// Displacement `(dy, dx)` in pixels at unit strength, and the
    /// Gaussian window weight used for masks.
    fn displacement(&self, class: usize, y: f64, x: f64) -> ((f64, f64), f64) {
        let (mut dy, mut dx, mut weight) = (0.0, 0.0, 0.0f64);
        for Region { centre: (cu, cv), width, direction: (ddy, ddx) } in self.regions(class) {
            let py = self.cy + cv * self.ry;
            let px = self.cx + cu * self.rx;
            let sigma = width * self.rx;
            let g = (-((y - py).powi(2) + (x - px).powi(2)) / (2.0 * sigma * sigma)).exp();
            dy += g * ddy;
            dx += g * ddx;
            weight = weight.max(g);
        }
        ((dy, dx), weight)
    }
}

/// Layout of one generated clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthClip {
    pub subject: String,
    pub clip: String,
    pub label: usize,
    pub lead: usize,
    pub len: usize,
    pub trail: usize,
    /// 1-based within `onset..=offset`.
    pub apex: usize,
    pub envelope: Vec<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Frames of one clip as 8-bit RGB images, lead and trail frames included.
fn render_clip(spec: &SynthSpec, face: &Face, info: &SynthClip, rng: &mut ChaCha8Rng) -> Vec<ImageU8> {
    let (h, w) = spec.image_size;
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma is finite");
    let fields: Vec<(f64, f64)> =
        (0..h * w).map(|i| face.displacement(info.label, (i / w) as f64, (i % w) as f64).0).collect();
    let base: Vec<[f64; 3]> = (0..h * w).map(|i| face.color((i / w) as f64, (i % w) as f64)).collect();
    let total = info.lead + info.len + info.trail;
    (0..total)
        .map(|f| {
            let strength = if f >= info.lead && f < info.lead + info.len {
                info.envelope[f - info.lead] * spec.amplitude
            } else {
                0.0
            };
            let mut data = Vec::with_capacity(h * w * 3);
            for (i, &(dy, dx)) in fields.iter().enumerate() {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                let px = if strength == 0.0 { base[i] } else { face.color(y - strength * dy, x - strength * dx) };
                for v in px {
                    let n = if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                    data.push(to_u8((v + n) * 255.0));
                }
            }
            ImageU8::from_vec(h, w, 3, data).expect("extent matches")
        })
        .collect()
}

/// Binary `0/255` map of the pixels an archetype moves for one subject.
fn motion_mask(spec: &SynthSpec, face: &Face, class: usize) -> ImageU8 {
    let (h, w) = spec.image_size;
    ImageU8::from_fn(h, w, 1, |y, x, _| if face.displacement(class, y as f64, x as f64).1 > 0.3 { 255 } else { 0 })
}

/// Per-clip layout derived from the spec alone, without rendering.
pub fn plan_clips(spec: &SynthSpec) -> Result<Vec<SynthClip>> {
    spec.validate()?;
    let mut clips = Vec::with_capacity(spec.num_subjects * spec.clips_per_subject);
    for s in 0..spec.num_subjects {
        for j in 0..spec.clips_per_subject {
            let mut rng = stream_rng(spec.seed, ((s as u64 + 1) << 32) | (j as u64 + 1));
            let len = rng.random_range(spec.frame_count.0..=spec.frame_count.1);
            let lo = ((spec.apex_range.0 * len as f64).ceil() as usize).clamp(1, len);
            let hi = ((spec.apex_range.1 * len as f64).floor() as usize).clamp(lo, len);
            let apex = rng.random_range(lo..=hi);
            let lead = rng.random_range(0..=spec.max_padding_frames);
            let trail = rng.random_range(0..=spec.max_padding_frames);
            clips.push(SynthClip {
                subject: format!("s{:02}", s + 1),
                clip: format!("c{:02}", j + 1),
                label: j % spec.num_classes,
                lead,
                len,
                trail,
                apex,
                envelope: envelope(spec.envelope, len, apex),
            });
        }
    }
    Ok(clips)
}

/// Write the dataset under `root`: frames, masks, both manifests, the
/// class list and the effective spec. Returns the apex-annotated manifest.
pub fn generate_synthetic(spec: &SynthSpec, root: &Path) -> Result<DatasetManifest> {
    let clips = plan_clips(spec)?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let (h, w) = spec.image_size;
    let mut rows = Vec::with_capacity(clips.len());
    for s in 0..spec.num_subjects {
        let face = Face::sample(&mut stream_rng(spec.seed, (s as u64 + 1) << 32), h, w);
        for class in 0..spec.num_classes {
            let name = format!("s{:02}_{}.png", s + 1, ARCHETYPES[class]);
            save_png(&root.join("masks").join(name), &motion_mask(spec, &face, class))?;
        }
        for (j, info) in clips[s * spec.clips_per_subject..(s + 1) * spec.clips_per_subject].iter().enumerate() {
            let mut rng = stream_rng(spec.seed ^ 0x9e37_79b9_7f4a_7c15, ((s as u64 + 1) << 32) | (j as u64 + 1));
            let rel = format!("frames/{}/{}", info.subject, info.clip);
            let dir = root.join(&rel);
            for (f, frame) in render_clip(spec, &face, info, &mut rng).iter().enumerate() {
                save_png(&dir.join(format!("{:06}.png", f + 1)), frame)?;
            }
            rows.push(ManifestRow {
                subject: info.subject.clone(),
                clip_dir: rel,
                onset: info.lead + 1,
                apex: Some(info.lead + info.apex),
                offset: info.lead + info.len,
                label: info.label,
            });
        }
    }
    let manifest =
        DatasetManifest { root: root.to_path_buf(), rows, class_names: spec.class_names(), warnings: Vec::new() };
    manifest.save(&root.join(MANIFEST_FILE))?;
    manifest.without_apex().save(&root.join(MANIFEST_NO_APEX_FILE))?;
    write_json(&root.join(SPEC_FILE), spec)?;
    Ok(manifest)
}

/// Path of the motion mask of `class` for `subject` inside a generated dataset.
pub fn mask_path(root: &Path, subject: &str, class: usize) -> std::path::PathBuf {
    root.join("masks").join(format!("{subject}_{}.png", ARCHETYPES[class]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_peaks_at_apex_and_decays() {
        for kind in [Envelope::Triangular, Envelope::Smooth] {
            for len in 3..15 {
                for apex in 1..=len {
                    let e = envelope(kind, len, apex);
                    assert_eq!(e[apex - 1], 1.0);
                    for t in 1..apex {
                        assert!(e[t - 1] <= e[t]);
                    }
                    for t in apex..len {
                        assert!(e[t] <= e[t - 1]);
                    }
                    assert!(e.iter().enumerate().all(|(i, &v)| i + 1 == apex || v < 1.0));
                }
            }
        }
    }

    #[test]
    fn triangular_values() {
        assert_eq!(envelope(Envelope::Triangular, 5, 3), vec![0.0, 0.5, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn plan_is_balanced_and_in_range() {
        let spec = SynthSpec::default();
        let clips = plan_clips(&spec).unwrap();
        assert_eq!(clips.len(), 60);
        for k in 0..3 {
            assert_eq!(clips.iter().filter(|c| c.label == k).count(), 20);
        }
        for c in &clips {
            assert!((10..=20).contains(&c.len));
            assert!(c.apex as f64 >= 0.3 * c.len as f64 && c.apex as f64 <= 0.7 * c.len as f64);
        }
    }

    #[test]
    fn archetype_regions_are_distinct() {
        let face = Face::sample(&mut stream_rng(0, 1), 112, 112);
        let centres: Vec<_> = (0..5).map(|k| face.regions(k)[0].centre).collect();
        for a in 0..5 {
            for b in a + 1..5 {
                let (ra, rb) = (face.regions(a)[0], face.regions(b)[0]);
                let same_place =
                    (centres[a].0 - centres[b].0).abs() < 1e-9 && (centres[a].1 - centres[b].1).abs() < 1e-9;
                let same_dir =
                    (ra.direction.0 - rb.direction.0).abs() < 1e-9 && (ra.direction.1 - rb.direction.1).abs() < 1e-9;
                assert!(!(same_place && same_dir), "archetypes {a} and {b} coincide");
            }
        }
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let spec = SynthSpec { num_classes: 7, ..SynthSpec::default() };
        assert!(spec.validate().unwrap_err().to_string().contains("num_classes"));
        let spec = SynthSpec { amplitude: -1.0, ..SynthSpec::default() };
        assert!(spec.validate().unwrap_err().to_string().contains("amplitude"));
    }

    #[test]
    fn motion_changes_pixels_only_near_regions() {
        let spec = SynthSpec { noise_sigma: 0.0, image_size: (64, 64), ..SynthSpec::default() };
        let face = Face::sample(&mut stream_rng(3, 1 << 32), 64, 64);
        let info = SynthClip {
            subject: "s".into(),
            clip: "c".into(),
            label: 1,
            lead: 0,
            len: 5,
            trail: 0,
            apex: 3,
            envelope: envelope(Envelope::Triangular, 5, 3),
        };
        let frames = render_clip(&spec, &face, &info, &mut stream_rng(0, 0));
        let mask = motion_mask(&spec, &face, 1);
        let (mut inside, mut outside) = (0u64, 0u64);
        for (i, (a, b)) in frames[0].data().iter().zip(frames[2].data()).enumerate() {
            let d = (*a as i32 - *b as i32).unsigned_abs() as u64;
            if mask.data()[i / 3] > 0 {
                inside += d;
            } else {
                outside += d;
            }
        }
        assert!(inside > 0);
        assert!(inside > 3 * outside, "inside {inside} outside {outside}");
    }
}
