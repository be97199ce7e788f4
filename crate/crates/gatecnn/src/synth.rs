//! Deterministic synthetic micro-Doppler frames with class-dependent
//! time-frequency patterns, plus the frame file format.
//!
//! Each class traces a center-Doppler trajectory across the time axis; a
//! Gaussian ridge is rendered around it, i.i.d. Gaussian noise is added,
//! and values are clamped to `[0, 1]`. The signatures are analytic, not
//! radar physics: they only need controllable class separability.
//!
//! # Frame file layout
//!
//! Magic `b"MDFR"`, `u16` version (1), `u32` frame count, three `u32`
//! extents `(channels, doppler_bins, time_steps)`, then per frame one
//! `u8` label followed by the row-major little-endian `f64` payload.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// One labeled input map.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroDopplerFrame<T> {
    /// `(channels, doppler_bins, time_steps)`, values in `[0, 1]`.
    pub data: Tensor<T>,
    pub label: usize,
    /// Generator provenance; absent on frames loaded from a file.
    pub meta: Option<FrameMeta>,
}

/// How a generated frame was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub class_name: String,
    pub sample_index: usize,
}

/// Center-Doppler trajectory of one class, over normalized time
/// `tau in [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    /// Fixed bin for every time step.
    Constant { bin: f64 },
    /// Linear sweep from `start` to `end`.
    LinearChirp { start: f64, end: f64 },
    /// `center + swing * sin(2 pi cycles tau)`.
    Sinusoidal { center: f64, swing: f64, cycles: f64 },
}

impl Trajectory {
    /// Center bin at time step `t` of `w` total steps.
    pub fn center(&self, t: usize, w: usize) -> f64 {
        let tau = if w > 1 { t as f64 / (w - 1) as f64 } else { 0.0 };
        match self {
            Trajectory::Constant { bin } => *bin,
            Trajectory::LinearChirp { start, end } => start + (end - start) * tau,
            Trajectory::Sinusoidal { center, swing, cycles } => {
                center + swing * (2.0 * std::f64::consts::PI * cycles * tau).sin()
            }
        }
    }

    /// Lowest and highest bin the trajectory can reach.
    pub fn extrema(&self) -> (f64, f64) {
        match self {
            Trajectory::Constant { bin } => (*bin, *bin),
            Trajectory::LinearChirp { start, end } => (start.min(*end), start.max(*end)),
            Trajectory::Sinusoidal { center, swing, .. } => {
                (center - swing.abs(), center + swing.abs())
            }
        }
    }
}

/// Signature template of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub name: String,
    pub trajectory: Trajectory,
    /// Gaussian ridge width in bins.
    pub bandwidth: f64,
    /// Ridge peak value before noise and clamping.
    pub amplitude: f64,
}

/// Generator parameters for a full labeled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub doppler_bins: usize,
    pub time_steps: usize,
    pub classes: Vec<ClassSignature>,
    pub noise_std: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Three well-separated classes on the default frame extents: a
    /// steady tone, a linear sweep, and an oscillating signature.
    fn default() -> Self {
        Self {
            doppler_bins: 30,
            time_steps: 28,
            classes: vec![
                ClassSignature {
                    name: "steady".into(),
                    trajectory: Trajectory::Constant { bin: 7.0 },
                    bandwidth: 1.2,
                    amplitude: 1.0,
                },
                ClassSignature {
                    name: "sweep".into(),
                    trajectory: Trajectory::LinearChirp { start: 4.0, end: 25.0 },
                    bandwidth: 1.5,
                    amplitude: 1.0,
                },
                ClassSignature {
                    name: "oscillate".into(),
                    trajectory: Trajectory::Sinusoidal { center: 15.0, swing: 8.0, cycles: 2.0 },
                    bandwidth: 1.5,
                    amplitude: 1.0,
                },
            ],
            noise_std: 0.05,
            samples_per_class: 40,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.doppler_bins == 0 || self.time_steps == 0 {
            return Err(Error::Config("frame extents must be >= 1".into()));
        }
        if self.classes.len() < 2 {
            return Err(Error::Config(format!(
                "need >= 2 classes for classification, got {}",
                self.classes.len()
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be >= 1".into()));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::Config(format!("noise_std must be finite and >= 0, got {}", self.noise_std)));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if !(c.bandwidth.is_finite() && c.bandwidth > 0.0) {
                return Err(Error::Config(format!("class {i} ({}): bandwidth must be > 0", c.name)));
            }
            if !(c.amplitude.is_finite() && c.amplitude > 0.0) {
                return Err(Error::Config(format!("class {i} ({}): amplitude must be > 0", c.name)));
            }
            let (lo, hi) = c.trajectory.extrema();
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi >= self.doppler_bins as f64 {
                return Err(Error::Config(format!(
                    "class {i} ({}): trajectory spans [{lo}, {hi}], outside the {} Doppler bins",
                    c.name, self.doppler_bins
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Renders the full dataset: classes in order, `samples_per_class` frames
/// each, labels equal to the class position. Deterministic given the seed.
pub fn generate<T: Real>(spec: &SynthSpec) -> Result<Vec<MicroDopplerFrame<T>>> {
    spec.validate()?;
    let h = spec.doppler_bins;
    let w = spec.time_steps;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = if spec.noise_std > 0.0 {
        Some(Normal::new(0.0, spec.noise_std).expect("validated std"))
    } else {
        None
    };

    let mut frames = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);
    let mut centers = vec![0.0f64; w];
    for (label, class) in spec.classes.iter().enumerate() {
        for sample_index in 0..spec.samples_per_class {
            for (t, c) in centers.iter_mut().enumerate() {
                *c = class.trajectory.center(t, w);
            }
            let mut data = Vec::with_capacity(h * w);
            for b in 0..h {
                for &center in centers.iter() {
                    let dev = (b as f64 - center) / class.bandwidth;
                    let mut val = class.amplitude * (-0.5 * dev * dev).exp();
                    if let Some(n) = &noise {
                        val += n.sample(&mut rng);
                    }
                    data.push(T::from_f64_lossy(val.clamp(0.0, 1.0)));
                }
            }
            frames.push(MicroDopplerFrame {
                data: Tensor::new(vec![1, h, w], data)?,
                label,
                meta: Some(FrameMeta { class_name: class.name.clone(), sample_index }),
            });
        }
    }
    Ok(frames)
}

/// Deterministic stratified split. Per label, a seeded shuffle sends
/// `round(n * holdout_fraction)` frames to the test side; a fraction that
/// would empty either side of any class is an error.
pub fn split<T: Real>(
    frames: &[MicroDopplerFrame<T>],
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<MicroDopplerFrame<T>>, Vec<MicroDopplerFrame<T>>)> {
    if frames.is_empty() {
        return Err(Error::EmptyData("frames to split"));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout_fraction must be in (0, 1), got {holdout_fraction}"
        )));
    }
    let mut labels: Vec<usize> = frames.iter().map(|f| f.label).collect();
    labels.sort_unstable();
    labels.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in labels {
        let mut idx: Vec<usize> =
            (0..frames.len()).filter(|&i| frames[i].label == label).collect();
        idx.shuffle(&mut rng);
        let holdout = (idx.len() as f64 * holdout_fraction).round() as usize;
        if holdout == 0 || holdout == idx.len() {
            return Err(Error::Config(format!(
                "holdout_fraction {holdout_fraction} empties one side of class {label} ({} frames)",
                idx.len()
            )));
        }
        for (k, &i) in idx.iter().enumerate() {
            if k < holdout {
                test.push(frames[i].clone());
            } else {
                train.push(frames[i].clone());
            }
        }
    }
    Ok((train, test))
}

const MAGIC: &[u8; 4] = b"MDFR";
const VERSION: u16 = 1;

/// Serializes frames; all must share one shape and labels must fit a byte.
pub fn frames_to_bytes<T: Real>(frames: &[MicroDopplerFrame<T>]) -> Result<Vec<u8>> {
    if frames.is_empty() {
        return Err(Error::EmptyData("frames to serialize"));
    }
    let shape = frames[0].data.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("frames", format!("frame rank must be 3, got {}", shape.len())));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for &e in &shape {
        let v = u32::try_from(e).map_err(|_| Error::Format(format!("extent {e} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, f) in frames.iter().enumerate() {
        if f.data.shape() != shape.as_slice() {
            return Err(Error::shape(
                "frames",
                format!("frame {i} has shape {:?}, expected {shape:?}", f.data.shape()),
            ));
        }
        let label = u8::try_from(f.label)
            .map_err(|_| Error::Format(format!("frame {i} label {} exceeds u8", f.label)))?;
        out.push(label);
        for x in f.data.data() {
            out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a frame file. Loaded frames carry no generator meta.
pub fn frames_from_bytes<T: Real>(bytes: &[u8]) -> Result<Vec<MicroDopplerFrame<T>>> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Format(format!("truncated file: needed {n} bytes at offset {pos}")));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    let magic = take(&mut pos, 4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported frame file version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    if count == 0 {
        return Err(Error::EmptyData("frame file"));
    }
    let mut shape = [0usize; 3];
    for e in &mut shape {
        *e = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    }
    let len: usize = shape.iter().product();
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let label = take(&mut pos, 1)?[0] as usize;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let v = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format(format!("frame {i} holds a non-finite value")));
            }
            data.push(T::from_f64_lossy(v));
        }
        frames.push(MicroDopplerFrame { data: Tensor::new(shape.to_vec(), data)?, label, meta: None });
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(frames)
}

pub fn save_frames<T: Real>(path: &Path, frames: &[MicroDopplerFrame<T>]) -> Result<()> {
    fs::write(path, frames_to_bytes(frames)?)?;
    Ok(())
}

pub fn load_frames<T: Real>(path: &Path) -> Result<Vec<MicroDopplerFrame<T>>> {
    frames_from_bytes(&fs::read(path)?)
}
