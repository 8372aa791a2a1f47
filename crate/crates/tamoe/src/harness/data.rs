//! Dataset manifests, binary feature files, and activity-disjoint splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    SeenTest,
    UnseenTest,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::SeenTest => "seen-test",
            Split::UnseenTest => "unseen-test",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "seen-test" => Ok(Split::SeenTest),
            "unseen-test" => Ok(Split::UnseenTest),
            other => Err(Error::Usage(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub video_id: String,
    pub activity_label: String,
    pub captions: Vec<String>,
    /// Relative to the manifest's directory unless absolute.
    pub feature_path: String,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: PathBuf) -> Self {
        DatasetManifest { records, base_dir }
    }

    /// One JSON record per line.
    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: display.clone(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            records.push(rec);
        }
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(DatasetManifest { records, base_dir })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        for rec in &self.records {
            serde_json::to_writer(&mut f, rec)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn feature_file(&self, rec: &ManifestRecord) -> PathBuf {
        let p = Path::new(&rec.feature_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split_records(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn labels_of(&self, split: Split) -> BTreeSet<&str> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.activity_label.as_str())
            .collect()
    }

    /// Enforce the split contract: train/val/unseen-test labels pairwise
    /// disjoint, seen-test labels a subset of train labels, every record
    /// carrying at least one caption. With `check_features`, every feature
    /// file must exist and parse. Returns warnings (e.g. empty labels).
    pub fn validate(&self, check_features: bool) -> Result<Vec<String>> {
        let train = self.labels_of(Split::Train);
        let val = self.labels_of(Split::Val);
        let unseen = self.labels_of(Split::UnseenTest);
        let seen = self.labels_of(Split::SeenTest);

        for (a, b, names) in [
            (&train, &val, "train/val"),
            (&train, &unseen, "train/unseen-test"),
            (&val, &unseen, "val/unseen-test"),
        ] {
            let overlap: Vec<&&str> = a.intersection(b).collect();
            if !overlap.is_empty() {
                return Err(Error::Contract(format!(
                    "{names} splits share activity labels: {overlap:?}"
                )));
            }
        }
        if let Some(bad) = seen.iter().find(|l| !train.contains(*l)) {
            return Err(Error::Contract(format!(
                "seen-test label '{bad}' does not appear in training"
            )));
        }
        for rec in &self.records {
            if rec.captions.is_empty() {
                return Err(Error::Contract(format!(
                    "video '{}' has no reference captions",
                    rec.video_id
                )));
            }
        }
        let mut warnings = Vec::new();
        if check_features {
            for rec in &self.records {
                let path = self.feature_file(rec);
                read_features(&path)?;
            }
        }
        let mut by_label: BTreeMap<&str, usize> = BTreeMap::new();
        for rec in &self.records {
            *by_label.entry(rec.activity_label.as_str()).or_insert(0) += 1;
        }
        for (label, n) in by_label {
            if n == 0 {
                warnings.push(format!("label '{label}' has zero videos"));
            }
        }
        Ok(warnings)
    }
}

pub const FEATURE_MAGIC: &[u8; 4] = b"TAMF";

/// Write an [m, d] feature matrix: magic "TAMF", u32 segment count, u32
/// feature dim, then m*d little-endian f32 values, row-major.
pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    if !features.is_matrix() {
        return Err(Error::Dim {
            op: "write_features",
            lhs: features.shape().to_vec(),
            rhs: vec![],
        });
    }
    let mut f = File::create(path)?;
    f.write_all(FEATURE_MAGIC)?;
    f.write_all(&(features.rows() as u32).to_le_bytes())?;
    f.write_all(&(features.cols() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(features.len() * 4);
    for &x in features.data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

/// Read a feature file back as an [m, d] f64 tensor.
pub fn read_features(path: &Path) -> Result<Tensor> {
    let display = path.display().to_string();
    let mut f = File::open(path).map_err(|e| Error::Format {
        path: display.clone(),
        msg: format!("cannot open feature file: {e}"),
    })?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[0..4] != FEATURE_MAGIC {
        return Err(Error::Format {
            path: display,
            msg: "missing TAMF magic".into(),
        });
    }
    let m = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 4 * m * d;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: display,
            msg: format!("expected {expected} bytes for {m}x{d}, found {}", bytes.len()),
        });
    }
    let mut data = Vec::with_capacity(m * d);
    for chunk in bytes[12..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    Tensor::from_vec(vec![m, d], data)
}

/// Uniform-stride subsampling that preserves temporal order, applied when a
/// sequence exceeds the model's feature cap.
pub fn subsample_features(features: Tensor, max: usize) -> Tensor {
    let m = features.rows();
    if m <= max {
        return features;
    }
    let d = features.cols();
    let mut data = Vec::with_capacity(max * d);
    for k in 0..max {
        let j = k * m / max;
        data.extend_from_slice(features.row(j));
    }
    Tensor::from_vec(vec![max, d], data).expect("subsample shape")
}

/// Assign split tags from disjoint label lists, carving a seeded fraction of
/// training-label videos into the seen test set.
pub fn build_split(
    mut records: Vec<ManifestRecord>,
    train_labels: &[String],
    val_labels: &[String],
    unseen_labels: &[String],
    seen_ratio: f64,
    seed: u64,
) -> Result<Vec<ManifestRecord>> {
    let train: BTreeSet<&str> = train_labels.iter().map(|s| s.as_str()).collect();
    let val: BTreeSet<&str> = val_labels.iter().map(|s| s.as_str()).collect();
    let unseen: BTreeSet<&str> = unseen_labels.iter().map(|s| s.as_str()).collect();
    for (a, b, names) in [
        (&train, &val, "train/val"),
        (&train, &unseen, "train/unseen"),
        (&val, &unseen, "val/unseen"),
    ] {
        let overlap: Vec<&&str> = a.intersection(b).collect();
        if !overlap.is_empty() {
            return Err(Error::Contract(format!(
                "{names} label lists overlap: {overlap:?}"
            )));
        }
    }
    for rec in &mut records {
        let label = rec.activity_label.as_str();
        rec.split = if train.contains(label) {
            Split::Train
        } else if val.contains(label) {
            Split::Val
        } else if unseen.contains(label) {
            Split::UnseenTest
        } else {
            return Err(Error::Contract(format!(
                "video '{}' label '{label}' is in no split list",
                rec.video_id
            )));
        };
    }

    // seen-test carve: per training label, a seeded fraction of its videos
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in &train {
        let mut idxs: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.activity_label == **label)
            .map(|(i, _)| i)
            .collect();
        idxs.sort_by(|&a, &b| records[a].video_id.cmp(&records[b].video_id));
        idxs.shuffle(&mut rng);
        let n = idxs.len();
        let k = ((n as f64 * seen_ratio).round() as usize).min(n.saturating_sub(1));
        for &i in idxs.iter().take(k) {
            records[i].split = Split::SeenTest;
        }
    }
    Ok(records)
}
