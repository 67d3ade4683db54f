//! Compositing-based data augmentation.
//!
//! Masked hands are pasted onto backgrounds drawn from a pool, seeded
//! noise is applied to the composite, and images are standardized to the
//! network input size. Every draw comes from a stream derived from
//! (seed, sequence id, frame index, replica index), so the augmented
//! dataset is a pure function of the raw dataset and the config.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::RgbImage;
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data_model::{
    save_frame_png, save_manifest, AugMode, DatasetManifest, FrameSample, GestureSequence, Mask,
    SequenceRecord, Split,
};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Poisson,
    Gaussian,
    SaltPepper,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseKind::None),
            "poisson" => Ok(NoiseKind::Poisson),
            "gaussian" => Ok(NoiseKind::Gaussian),
            "salt_pepper" | "salt&pepper" => Ok(NoiseKind::SaltPepper),
            other => Err(Error::UnknownNoiseKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Replicas generated per captured frame (N_i).
    pub n_backgrounds_per_image: usize,
    /// Image files standing in for a large background dataset.
    pub background_pool: Vec<PathBuf>,
    /// Noise kinds drawn from uniformly, one per replica.
    pub noise_kinds: Vec<NoiseKind>,
    /// Standard deviation of the gaussian noise, intensity units.
    pub gaussian_sigma: f64,
    /// Fraction of pixels hit by salt & pepper noise.
    pub salt_pepper_density: f64,
    pub seed: u64,
    /// Network input size (width, height).
    pub target_size: (u32, u32),
    /// Per-channel normalization mean, applied after scaling to [0, 1].
    pub normalization_mean: [f64; 3],
    /// Per-channel normalization standard deviation.
    pub normalization_std: [f64; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            n_backgrounds_per_image: 5,
            background_pool: Vec::new(),
            noise_kinds: vec![
                NoiseKind::None,
                NoiseKind::Poisson,
                NoiseKind::Gaussian,
                NoiseKind::SaltPepper,
            ],
            gaussian_sigma: 8.0,
            salt_pepper_density: 0.05,
            seed: 0,
            target_size: (224, 126),
            normalization_mean: [0.485, 0.456, 0.406],
            normalization_std: [0.229, 0.224, 0.225],
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_backgrounds_per_image < 1 {
            return Err(Error::InvalidConfig(
                "n_backgrounds_per_image must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.salt_pepper_density) {
            return Err(Error::InvalidConfig(format!(
                "salt_pepper_density {} outside [0, 1]",
                self.salt_pepper_density
            )));
        }
        if self.noise_kinds.is_empty() {
            return Err(Error::InvalidConfig("noise_kinds must be non-empty".into()));
        }
        if self.normalization_std.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidConfig("normalization std must be > 0".into()));
        }
        Ok(())
    }
}

/// Backgrounds loaded once and cropped/resized per frame size on demand.
pub struct BackgroundPool {
    images: Vec<RgbImage>,
}

impl BackgroundPool {
    pub fn load(paths: &[PathBuf]) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::EmptyBackgroundPool);
        }
        let images = paths
            .iter()
            .map(|p| crate::data_model::load_frame_png(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(BackgroundPool { images })
    }

    pub fn from_images(images: Vec<RgbImage>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyBackgroundPool);
        }
        Ok(BackgroundPool { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Background `idx` center-cropped to the target aspect ratio and
    /// resized to exactly (w, h).
    pub fn prepared(&self, idx: usize, w: u32, h: u32) -> RgbImage {
        prepare_background(&self.images[idx], w, h)
    }
}

/// Center-crop to the target aspect ratio, then resize.
pub fn prepare_background(bg: &RgbImage, w: u32, h: u32) -> RgbImage {
    if bg.dimensions() == (w, h) {
        return bg.clone();
    }
    let (bw, bh) = bg.dimensions();
    // widest crop of the source with the target aspect ratio
    let crop_w = (bw as u64).min(bh as u64 * w as u64 / h as u64).max(1) as u32;
    let crop_h = (bh as u64).min(bw as u64 * h as u64 / w as u64).max(1) as u32;
    let x0 = (bw - crop_w) / 2;
    let y0 = (bh - crop_h) / 2;
    let cropped = image::imageops::crop_imm(bg, x0, y0, crop_w, crop_h).to_image();
    image::imageops::resize(&cropped, w, h, FilterType::Triangle)
}

/// Per-pixel selection: frame where the mask is set, background elsewhere.
pub fn composite(frame: &RgbImage, mask: &Mask, background: &RgbImage) -> Result<RgbImage> {
    if frame.dimensions() != (mask.width(), mask.height()) {
        return Err(Error::SizeMismatch(format!(
            "frame {:?} vs mask {:?}",
            frame.dimensions(),
            (mask.width(), mask.height())
        )));
    }
    if frame.dimensions() != background.dimensions() {
        return Err(Error::SizeMismatch(format!(
            "frame {:?} vs background {:?}",
            frame.dimensions(),
            background.dimensions()
        )));
    }
    let mut out = frame.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if mask.0[[y as usize, x as usize]] == 0 {
            *p = *background.get_pixel(x, y);
        }
    }
    Ok(out)
}

/// Apply one noise kind; a deterministic function of (image, kind, params, seed).
pub fn add_noise(image: &RgbImage, kind: NoiseKind, config: &AugmentConfig, seed: u64) -> RgbImage {
    let mut stream = rng::derive_indexed(seed, "noise", &[]);
    match kind {
        NoiseKind::None => image.clone(),
        NoiseKind::Gaussian => {
            let normal = Normal::new(0.0, config.gaussian_sigma.max(f64::MIN_POSITIVE)).unwrap();
            let mut out = image.clone();
            for p in out.pixels_mut() {
                for c in 0..3 {
                    let v = p.0[c] as f64 + normal.sample(&mut stream);
                    p.0[c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
            out
        }
        NoiseKind::SaltPepper => {
            let mut out = image.clone();
            for p in out.pixels_mut() {
                let hit = stream.gen::<f64>() < config.salt_pepper_density;
                let salt = stream.gen::<f64>() < 0.5;
                if hit {
                    p.0 = if salt { [255, 255, 255] } else { [0, 0, 0] };
                }
            }
            out
        }
        NoiseKind::Poisson => {
            // shot noise: each channel drawn with rate equal to its intensity
            let mut out = image.clone();
            for p in out.pixels_mut() {
                for c in 0..3 {
                    let v = p.0[c] as f64;
                    p.0[c] = if v <= 0.0 {
                        0
                    } else {
                        let draw: f64 = Poisson::new(v).unwrap().sample(&mut stream);
                        draw.round().clamp(0.0, 255.0) as u8
                    };
                }
            }
            out
        }
    }
}

fn draw_background_indices(pool_len: usize, count: usize, stream: &mut Stream) -> Result<Vec<usize>> {
    if pool_len == 0 {
        return Err(Error::EmptyBackgroundPool);
    }
    if count > pool_len {
        return Err(Error::InvalidConfig(format!(
            "background pool of {pool_len} cannot supply {count} distinct backgrounds"
        )));
    }
    let mut indices: Vec<usize> = (0..pool_len).collect();
    indices.shuffle(stream);
    indices.truncate(count);
    Ok(indices)
}

/// Produce N_i augmented replicas of one frame. Mask, label and pose are
/// passed through untouched; each replica gets a distinct background and
/// an independently drawn noise kind.
pub fn augment_frame(
    sample: &FrameSample,
    config: &AugmentConfig,
    pool: &BackgroundPool,
) -> Result<Vec<FrameSample>> {
    config.validate()?;
    let mask = sample
        .mask
        .as_ref()
        .ok_or_else(|| Error::MissingMask(format!("{}:{}", sample.sequence_id, sample.frame_index)))?;
    let (w, h) = sample.image.dimensions();
    let mut bg_stream = rng::derive_stream(
        config.seed,
        &["frame-aug-bgs", &sample.sequence_id, &sample.frame_index.to_string()],
    );
    let bg_indices =
        draw_background_indices(pool.len(), config.n_backgrounds_per_image, &mut bg_stream)?;

    let mut out = Vec::with_capacity(config.n_backgrounds_per_image);
    for (replica, &bg_idx) in bg_indices.iter().enumerate() {
        let mut stream = rng::derive_stream(
            config.seed,
            &[
                "frame-aug",
                &sample.sequence_id,
                &sample.frame_index.to_string(),
                &replica.to_string(),
            ],
        );
        let kind = *config.noise_kinds.choose(&mut stream).unwrap();
        let noise_seed: u64 = stream.gen();
        let background = pool.prepared(bg_idx, w, h);
        let composited = composite(&sample.image, mask, &background)?;
        let noisy = add_noise(&composited, kind, config, noise_seed);
        out.push(FrameSample {
            image: noisy,
            ..sample.clone()
        });
    }
    Ok(out)
}

/// Augment a whole sequence with one background and one noise kind, as
/// the final training phase requires. The noise realization is drawn per
/// frame; kind and parameters are shared across the sequence.
pub fn augment_sequence(
    sequence: &GestureSequence,
    config: &AugmentConfig,
    seed: u64,
    pool: &BackgroundPool,
) -> Result<GestureSequence> {
    config.validate()?;
    if sequence.frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    if pool.is_empty() {
        return Err(Error::EmptyBackgroundPool);
    }
    let mut stream = rng::derive_indexed(seed, "sequence-aug", &[]);
    let bg_idx = stream.gen_range(0..pool.len());
    let kind = *config.noise_kinds.choose(&mut stream).unwrap();

    let mut frames = Vec::with_capacity(sequence.frames.len());
    for sample in &sequence.frames {
        let mask = sample.mask.as_ref().ok_or_else(|| {
            Error::MissingMask(format!("{}:{}", sample.sequence_id, sample.frame_index))
        })?;
        let (w, h) = sample.image.dimensions();
        let background = pool.prepared(bg_idx, w, h);
        let composited = composite(&sample.image, mask, &background)?;
        let noise_seed = rng::derive_indexed(seed, "sequence-noise", &[sample.frame_index as u64])
            .gen::<u64>();
        let noisy = add_noise(&composited, kind, config, noise_seed);
        frames.push(FrameSample {
            image: noisy,
            ..sample.clone()
        });
    }
    Ok(GestureSequence {
        frames,
        label: sequence.label,
    })
}

/// Resize to the target size and normalize each channel as
/// `(value/255 - mean) / std`. Output layout is `(channel, height, width)`.
pub fn standardize(image: &RgbImage, config: &AugmentConfig) -> Array3<f64> {
    let (tw, th) = config.target_size;
    let resized = if image.dimensions() == (tw, th) {
        image.clone()
    } else {
        image::imageops::resize(image, tw, th, FilterType::Triangle)
    };
    let mut out = Array3::zeros((3, th as usize, tw as usize));
    for (x, y, p) in resized.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = (p.0[c] as f64 / 255.0
                - config.normalization_mean[c])
                / config.normalization_std[c];
        }
    }
    out
}

/// Resize a mask to the target size with nearest-neighbor so it stays binary.
pub fn standardize_mask(mask: &Mask, target_size: (u32, u32)) -> Mask {
    let (tw, th) = target_size;
    if (mask.width(), mask.height()) == (tw, th) {
        return mask.clone();
    }
    let gray = mask.to_gray();
    let resized = image::imageops::resize(&gray, tw, th, FilterType::Nearest);
    Mask::from_gray(&resized)
}

/// Run frame- or sequence-mode augmentation over the train/val sequences
/// of a manifest, writing images, masks and a new manifest to `out_dir`.
pub fn augment_dataset(
    manifest: &DatasetManifest,
    config: &AugmentConfig,
    mode: AugMode,
    out_dir: &Path,
    workers: usize,
) -> Result<DatasetManifest> {
    config.validate()?;
    let pool = BackgroundPool::load(&config.background_pool)?;
    fs::create_dir_all(out_dir.join("frames"))?;
    fs::create_dir_all(out_dir.join("masks"))?;

    let sources: Vec<&SequenceRecord> = manifest
        .sequences
        .iter()
        .filter(|s| manifest.split_of(&s.sequence_id) != Split::Test)
        .collect();
    if sources.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let process = |record: &SequenceRecord| -> Result<Vec<(SequenceRecord, Split)>> {
        let sequence = manifest.load_sequence(record)?;
        let split = manifest.split_of(&record.sequence_id);

        // frame mode: replica j of the sequence takes the j-th output of
        // augment_frame for every frame (per-frame independent draws)
        let mut frame_mode_replicas: Vec<Vec<FrameSample>> = Vec::new();
        if mode == AugMode::Frame {
            frame_mode_replicas =
                vec![Vec::with_capacity(sequence.frames.len()); config.n_backgrounds_per_image];
            for sample in &sequence.frames {
                let replicas = augment_frame(sample, config, &pool)?;
                for (j, replica) in replicas.into_iter().enumerate() {
                    frame_mode_replicas[j].push(replica);
                }
            }
        }

        let mut out = Vec::new();
        for replica in 0..config.n_backgrounds_per_image {
            let (suffix, augmented) = match mode {
                AugMode::Frame => (
                    format!("f{replica}"),
                    GestureSequence {
                        frames: std::mem::take(&mut frame_mode_replicas[replica]),
                        label: sequence.label,
                    },
                ),
                AugMode::Sequence => {
                    let seed = rng::derive_stream(
                        config.seed,
                        &["sequence-replica", &record.sequence_id, &replica.to_string()],
                    )
                    .gen::<u64>();
                    (
                        format!("s{replica}"),
                        augment_sequence(&sequence, config, seed, &pool)?,
                    )
                }
            };
            let new_id = format!("{}-{}", record.sequence_id, suffix);
            let mut frame_paths = Vec::new();
            let mut mask_paths = Vec::new();
            for frame in &augmented.frames {
                let frame_rel = format!("frames/{new_id}_{:04}.png", frame.frame_index);
                let mask_rel = format!("masks/{new_id}_{:04}.png", frame.frame_index);
                save_frame_png(&frame.image, &out_dir.join(&frame_rel))?;
                frame
                    .mask
                    .as_ref()
                    .expect("augmented frames keep their masks")
                    .save_png(&out_dir.join(&mask_rel))?;
                frame_paths.push(frame_rel);
                mask_paths.push(mask_rel);
            }
            out.push((
                SequenceRecord {
                    sequence_id: new_id,
                    label: record.label,
                    user_id: record.user_id.clone(),
                    frames: frame_paths,
                    masks: Some(mask_paths),
                    pose: None,
                },
                split,
            ));
        }
        Ok(out)
    };

    let results: Vec<Result<Vec<(SequenceRecord, Split)>>> = if workers > 1 {
        let pool_builder = rayon::ThreadPoolBuilder::new().num_threads(workers);
        let thread_pool = pool_builder
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        thread_pool.install(|| {
            use rayon::prelude::*;
            sources.par_iter().map(|r| process(r)).collect()
        })
    } else {
        sources.iter().map(|r| process(r)).collect()
    };

    let mut sequences = Vec::new();
    let mut splits = std::collections::BTreeMap::new();
    for result in results {
        for (record, split) in result? {
            splits.insert(record.sequence_id.clone(), split);
            sequences.push(record);
        }
    }

    let mut out_manifest = DatasetManifest {
        version: crate::data_model::MANIFEST_VERSION,
        n_gestures: manifest.n_gestures,
        seed: config.seed,
        provenance: crate::data_model::Provenance::Augmented,
        aug_mode: Some(mode),
        sequences,
        splits,
        base_dir: out_dir.to_path_buf(),
    };
    save_manifest(&mut out_manifest, &out_dir.join("manifest.json"))?;
    Ok(out_manifest)
}
