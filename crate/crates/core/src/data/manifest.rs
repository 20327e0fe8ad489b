//! Dataset manifests: one CSV row per clip, `subject,clip_dir,onset,apex,offset,label`.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesti::FrameSequence;

use super::image_io::load_clip;

pub const COLUMNS: [&str; 6] = ["subject", "clip_dir", "onset", "apex", "offset", "label"];
pub const CLASSES_FILE: &str = "classes.txt";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject: String,
    /// Clip directory relative to the manifest's directory.
    pub clip_dir: String,
    /// 1-based positions in the clip's numerically sorted frame list.
    pub onset: usize,
    pub apex: Option<usize>,
    pub offset: usize,
    /// Index into [`DatasetManifest::class_names`].
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
    pub class_names: Vec<String>,
    /// Non-fatal findings such as duplicate clip directories.
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct RawRow {
    subject: String,
    clip_dir: String,
    onset: String,
    apex: String,
    offset: String,
    label: String,
}

fn parse_index(field: &str, name: &str, row: usize) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::ManifestRow { row, message: format!("{name} '{field}' is not a non-negative integer") })
}

impl DatasetManifest {
    /// Parse and validate a manifest; class names come from a sibling
    /// `classes.txt` when present, otherwise from the sorted distinct labels.
    pub fn load(path: &Path) -> Result<Self> {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
        let headers = reader.headers().map_err(csv_err)?.clone();
        let missing: Vec<&str> = COLUMNS.iter().copied().filter(|c| !headers.iter().any(|h| h == *c)).collect();
        if !missing.is_empty() {
            return Err(Error::ManifestRow { row: 0, message: format!("missing column(s): {}", missing.join(", ")) });
        }
        let mut raw = Vec::new();
        for (i, rec) in reader.deserialize::<RawRow>().enumerate() {
            let row = i + 1;
            raw.push(rec.map_err(|e| Error::ManifestRow { row, message: e.to_string() })?);
        }

        let classes_path = root.join(CLASSES_FILE);
        let class_names: Vec<String> = if classes_path.is_file() {
            fs::read_to_string(&classes_path)
                .map_err(|e| Error::io(&classes_path, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect()
        } else {
            raw.iter().map(|r| r.label.clone()).collect::<BTreeSet<_>>().into_iter().collect()
        };

        let mut rows = Vec::with_capacity(raw.len());
        let mut warnings = Vec::new();
        let mut seen = HashSet::new();
        for (i, r) in raw.into_iter().enumerate() {
            let row = i + 1;
            let onset = parse_index(&r.onset, "onset", row)?;
            let offset = parse_index(&r.offset, "offset", row)?;
            let apex = if r.apex.trim().is_empty() { None } else { Some(parse_index(&r.apex, "apex", row)?) };
            let bad = |message: String| Err(Error::ManifestRow { row, message });
            if onset < 1 {
                return bad(format!("onset {onset} must be >= 1"));
            }
            if offset < onset {
                return bad(format!("offset {offset} precedes onset {onset}"));
            }
            if let Some(a) = apex {
                if a < onset || a > offset {
                    return bad(format!("apex {a} outside onset..offset = {onset}..{offset}"));
                }
            }
            if r.subject.is_empty() || r.clip_dir.is_empty() {
                return bad("subject and clip_dir must be non-empty".into());
            }
            let Some(label) = class_names.iter().position(|c| *c == r.label) else {
                return bad(format!("unknown label '{}'", r.label));
            };
            if !seen.insert(r.clip_dir.clone()) {
                let msg = format!("row {row}: clip_dir '{}' listed more than once", r.clip_dir);
                log::warn!("{}: {msg}", path.display());
                warnings.push(msg);
            }
            rows.push(ManifestRow { subject: r.subject, clip_dir: r.clip_dir, onset, apex, offset, label });
        }
        Ok(DatasetManifest { root, rows, class_names, warnings })
    }

    /// Write the CSV to `path` and the class list to a sibling `classes.txt`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(COLUMNS).map_err(csv_err)?;
        for r in &self.rows {
            let apex = r.apex.map(|a| a.to_string()).unwrap_or_default();
            w.write_record([
                r.subject.as_str(),
                r.clip_dir.as_str(),
                &r.onset.to_string(),
                &apex,
                &r.offset.to_string(),
                &self.class_names[r.label],
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let classes = path.with_file_name(CLASSES_FILE);
        fs::write(&classes, self.class_names.join("\n") + "\n").map_err(|e| Error::io(&classes, e))
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn clip_path(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.clip_dir)
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.subject.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Same rows with every apex annotation removed.
    pub fn without_apex(&self) -> Self {
        let mut m = self.clone();
        m.rows.iter_mut().for_each(|r| r.apex = None);
        m
    }

    /// Load the frames of `row` with subject, clip and label attached.
    pub fn load_row(&self, row: &ManifestRow) -> Result<FrameSequence> {
        let mut seq = load_clip(&self.clip_path(row), row.onset, row.offset, row.apex)?;
        seq.subject_id = row.subject.clone();
        seq.clip_id = row.clip_dir.clone();
        seq.label = row.label;
        Ok(seq)
    }
}
