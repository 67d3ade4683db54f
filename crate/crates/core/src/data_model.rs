//! Dataset representation shared by every pipeline stage.
//!
//! A dataset on disk is one `manifest.json` plus PNG frames, PNG masks
//! (single channel, {0,255}) and optional per-sequence pose text files.
//! Manifests are immutable after load and safe to share across workers.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST_VERSION: u32 = 1;

/// Binary ego-hand mask, row-major `(height, width)`, values in {0,1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask(pub Array2<u8>);

impl Mask {
    pub fn zeros(width: u32, height: u32) -> Self {
        Mask(Array2::zeros((height as usize, width as usize)))
    }

    pub fn width(&self) -> u32 {
        self.0.ncols() as u32
    }

    pub fn height(&self) -> u32 {
        self.0.nrows() as u32
    }

    pub fn foreground_area(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0).count()
    }

    /// Intersection over union; 1.0 when both masks are empty.
    pub fn iou(&self, other: &Mask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            let a = *a != 0;
            let b = *b != 0;
            if a && b {
                inter += 1;
            }
            if a || b {
                union += 1;
            }
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn from_gray(img: &image::GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let mut data = Array2::zeros((h as usize, w as usize));
        for (x, y, p) in img.enumerate_pixels() {
            data[[y as usize, x as usize]] = u8::from(p.0[0] >= 128);
        }
        Mask(data)
    }

    pub fn to_gray(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width(), self.height(), |x, y| {
            image::Luma([self.0[[y as usize, x as usize]] * 255])
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        Ok(Mask::from_gray(&img))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray().save(path)?;
        Ok(())
    }
}

/// 6DOF camera/head pose. Stored metadata only; never a network input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6DOF {
    /// Position in meters.
    pub position: [f64; 3],
    /// Unit quaternion (w, x, y, z).
    pub orientation: [f64; 4],
}

impl Pose6DOF {
    pub fn identity() -> Self {
        Pose6DOF {
            position: [0.0; 3],
            orientation: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let norm = self.orientation.iter().map(|q| q * q).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::SchemaError(format!(
                "quaternion norm {norm} deviates from 1.0 by more than 1e-6"
            )));
        }
        Ok(())
    }
}

/// One RGB frame with its mask, label and metadata.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub image: RgbImage,
    pub mask: Option<Mask>,
    pub gesture_id: usize,
    pub user_id: String,
    pub sequence_id: String,
    pub frame_index: usize,
    pub pose: Option<Pose6DOF>,
}

impl FrameSample {
    pub fn validate(&self) -> Result<()> {
        if let Some(mask) = &self.mask {
            if (mask.width(), mask.height()) != self.image.dimensions() {
                return Err(Error::SizeMismatch(format!(
                    "sequence {} frame {}: mask {}x{} vs image {}x{}",
                    self.sequence_id,
                    self.frame_index,
                    mask.width(),
                    mask.height(),
                    self.image.width(),
                    self.image.height()
                )));
            }
        }
        if let Some(pose) = &self.pose {
            pose.validate()?;
        }
        Ok(())
    }
}

/// Ordered, variable-length list of frames sharing one label.
#[derive(Debug, Clone)]
pub struct GestureSequence {
    pub frames: Vec<FrameSample>,
    pub label: usize,
}

impl GestureSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        let first = &self.frames[0];
        for (i, frame) in self.frames.iter().enumerate() {
            frame.validate()?;
            if frame.sequence_id != first.sequence_id || frame.user_id != first.user_id {
                return Err(Error::SchemaError(format!(
                    "sequence {}: frame {} has inconsistent ids",
                    first.sequence_id, i
                )));
            }
            if frame.gesture_id != self.label {
                return Err(Error::SchemaError(format!(
                    "sequence {}: frame {} label {} != sequence label {}",
                    first.sequence_id, i, frame.gesture_id, self.label
                )));
            }
            if frame.frame_index != i {
                return Err(Error::SchemaError(format!(
                    "sequence {}: frame_index {} at position {}",
                    first.sequence_id, frame.frame_index, i
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Raw,
    Augmented,
}

/// Augmentation mode recorded in augmented manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugMode {
    Frame,
    Sequence,
}

/// One sequence entry of the manifest. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub sequence_id: String,
    pub label: usize,
    pub user_id: String,
    pub frames: Vec<String>,
    #[serde(default)]
    pub masks: Option<Vec<String>>,
    #[serde(default)]
    pub pose: Option<String>,
}

/// Index of sequences, splits and provenance for one dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub n_gestures: usize,
    pub seed: u64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aug_mode: Option<AugMode>,
    pub sequences: Vec<SequenceRecord>,
    pub splits: BTreeMap<String, Split>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn split_of(&self, sequence_id: &str) -> Split {
        self.splits.get(sequence_id).copied().unwrap_or(Split::Train)
    }

    pub fn sequences_in(&self, split: Split) -> Vec<&SequenceRecord> {
        self.sequences
            .iter()
            .filter(|s| self.split_of(&s.sequence_id) == split)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for record in &self.sequences {
            if record.frames.is_empty() {
                return Err(Error::SchemaError(format!(
                    "sequence {} has no frames",
                    record.sequence_id
                )));
            }
            if record.label >= self.n_gestures {
                return Err(Error::LabelRange {
                    gesture_id: record.label,
                    n_gestures: self.n_gestures,
                });
            }
            if let Some(masks) = &record.masks {
                if masks.len() != record.frames.len() {
                    return Err(Error::SchemaError(format!(
                        "sequence {}: {} masks for {} frames",
                        record.sequence_id,
                        masks.len(),
                        record.frames.len()
                    )));
                }
            }
            for rel in record
                .frames
                .iter()
                .chain(record.masks.iter().flatten())
                .chain(record.pose.iter())
            {
                let path = self.resolve(rel);
                if !path.is_file() {
                    return Err(Error::MissingFile(path));
                }
            }
        }
        for key in self.splits.keys() {
            if !self.sequences.iter().any(|s| &s.sequence_id == key) {
                return Err(Error::SchemaError(format!(
                    "split entry for unknown sequence {key}"
                )));
            }
        }
        Ok(())
    }

    /// Load, materialize and validate one sequence.
    pub fn load_sequence(&self, record: &SequenceRecord) -> Result<GestureSequence> {
        let poses = match &record.pose {
            Some(rel) => Some(load_pose_file(&self.resolve(rel), record.frames.len())?),
            None => None,
        };
        let mut frames = Vec::with_capacity(record.frames.len());
        for (i, rel) in record.frames.iter().enumerate() {
            let image = load_frame_png(&self.resolve(rel))?;
            let mask = match &record.masks {
                Some(masks) => Some(Mask::load_png(&self.resolve(&masks[i]))?),
                None => None,
            };
            frames.push(FrameSample {
                image,
                mask,
                gesture_id: record.label,
                user_id: record.user_id.clone(),
                sequence_id: record.sequence_id.clone(),
                frame_index: i,
                pose: poses.as_ref().map(|p| p[i]),
            });
        }
        let sequence = GestureSequence {
            frames,
            label: record.label,
        };
        sequence.validate()?;
        Ok(sequence)
    }
}

pub fn load_frame_png(path: &Path) -> Result<RgbImage> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?.to_rgb8())
}

pub fn save_frame_png(image: &RgbImage, path: &Path) -> Result<()> {
    image.save(path)?;
    Ok(())
}

/// Parse a manifest file and verify all invariants.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::SchemaError(e.to_string()))?;
    manifest.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    manifest.validate()?;
    Ok(manifest)
}

/// Write a manifest beside its data. `base_dir` is updated to match.
pub fn save_manifest(manifest: &mut DatasetManifest, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
        manifest.base_dir = parent.to_path_buf();
    }
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, manifest)?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Reassign train/val splits over the non-test sequences.
///
/// The assignment is a pure function of the set of sequence ids and the
/// seed; whole sequences move, never individual frames. The train count is
/// `round(ratio * n)`, which rounds toward train at the halfway point.
pub fn split_dataset(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<DatasetManifest> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratio {ratio} outside (0, 1)"
        )));
    }
    let mut ids: Vec<&str> = manifest
        .sequences
        .iter()
        .map(|s| s.sequence_id.as_str())
        .filter(|id| manifest.split_of(id) != Split::Test)
        .collect();
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ids.sort_unstable();
    let mut stream = rng::derive_indexed(seed, "split", &[]);
    ids.shuffle(&mut stream);
    let n_train = ((ratio * ids.len() as f64).round() as usize).min(ids.len());

    let mut out = manifest.clone();
    for (i, id) in ids.iter().enumerate() {
        let split = if i < n_train { Split::Train } else { Split::Val };
        out.splits.insert((*id).to_string(), split);
    }
    Ok(out)
}

/// Pose file: one line per frame, `frame_index,px,py,pz,qw,qx,qy,qz`.
pub fn load_pose_file(path: &Path, n_frames: usize) -> Result<Vec<Pose6DOF>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let mut poses = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| {
                Error::SchemaError(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        if fields.len() != 8 {
            return Err(Error::SchemaError(format!(
                "{}:{}: expected 8 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        if fields[0] as usize != poses.len() {
            return Err(Error::SchemaError(format!(
                "{}:{}: frame_index {} not consecutive",
                path.display(),
                lineno + 1,
                fields[0]
            )));
        }
        let pose = Pose6DOF {
            position: [fields[1], fields[2], fields[3]],
            orientation: [fields[4], fields[5], fields[6], fields[7]],
        };
        pose.validate()?;
        poses.push(pose);
    }
    if poses.len() != n_frames {
        return Err(Error::SchemaError(format!(
            "{}: {} pose rows for {} frames",
            path.display(),
            poses.len(),
            n_frames
        )));
    }
    Ok(poses)
}

pub fn save_pose_file(poses: &[Pose6DOF], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for (i, pose) in poses.iter().enumerate() {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{}",
            i,
            pose.position[0],
            pose.position[1],
            pose.position[2],
            pose.orientation[0],
            pose.orientation[1],
            pose.orientation[2],
            pose.orientation[3]
        )?;
    }
    Ok(())
}
