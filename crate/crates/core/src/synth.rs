//! Synthetic labeled thermal sequences: smooth cloud layers advected rigidly
//! over a cold sky, with optional appearance of extra layers mid-sequence.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{self, Frame, Grid, ImagingError, SegmentationMask};

/// Blob centres are snapped to this grid so integer velocities shift the
/// rendered field exactly.
const CENTER_GRID: f64 = 256.0;
/// Coverage above which a layer is opaque.
const COVERAGE_THRESHOLD: f64 = 0.5;
/// Largest velocity component the default flow window can recover.
pub const MAX_SPEED: f64 = 8.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("failed to write {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Temperature of the layer's thinnest opaque parts (K).
    pub base_temp: f64,
    /// Temperature range spanned by the layer's texture above `base_temp` (K).
    pub amplitude: f64,
    pub blob_count: usize,
    /// Standard deviation of each Gaussian bump (pixels).
    pub blob_scale: f64,
    /// Displacement per frame, `(u, v)` = (columns, rows).
    pub velocity: (f64, f64),
    /// Number of small bumps forming the layer's fine texture.
    #[serde(default)]
    pub detail_count: usize,
    /// Standard deviation of each fine-texture bump (pixels).
    #[serde(default = "default_detail_scale")]
    pub detail_scale: f64,
    /// Share of `amplitude` modulated by the fine texture, in `[0, 1]`.
    #[serde(default)]
    pub detail_fraction: f64,
    /// Steepness of the coverage-to-temperature profile.
    #[serde(default = "default_ramp")]
    pub ramp: f64,
}

fn default_detail_scale() -> f64 {
    2.5
}

fn default_ramp() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub layers: Vec<LayerSpec>,
    pub sky_temp: f64,
    pub noise_sigma: f64,
    /// Frames before this index show only the first layer.
    pub change_point: Option<usize>,
    pub seed: u64,
}

impl LayerSpec {
    /// Layer with the default texture: blobs of scale 7 carrying fine detail.
    pub fn new(base_temp: f64, amplitude: f64, blob_count: usize, velocity: (f64, f64)) -> Self {
        Self {
            base_temp,
            amplitude,
            blob_count,
            blob_scale: 7.0,
            velocity,
            detail_count: 120,
            detail_scale: default_detail_scale(),
            detail_fraction: 0.5,
            ramp: 4.0,
        }
    }
}

impl SynthSpec {
    /// A single layer drifting right.
    pub fn one_layer(seed: u64) -> Self {
        Self {
            height: 60,
            width: 80,
            frames: 31,
            layers: vec![LayerSpec::new(262.0, 8.0, 9, (1.0, 0.0))],
            sky_temp: 235.0,
            noise_sigma: 0.05,
            change_point: None,
            seed,
        }
    }

    /// A warm low layer and a cool high layer moving in opposite directions.
    /// The warm band starts exactly `4 * noise_sigma` above the cool band.
    pub fn two_layer(seed: u64) -> Self {
        let mut spec = Self::one_layer(seed);
        let (cool_base, amplitude) = (262.0, 8.0);
        spec.layers = vec![
            LayerSpec::new(cool_base + amplitude + 4.0 * spec.noise_sigma, amplitude, 6, (1.0, 0.0)),
            LayerSpec::new(cool_base, amplitude, 8, (-1.0, 0.0)),
        ];
        spec
    }

    /// Two-layer spec whose second layer appears at `change_point`.
    pub fn change_point(seed: u64, change_point: usize) -> Self {
        let mut spec = Self::two_layer(seed);
        spec.change_point = Some(change_point);
        spec
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Invalid(m));
        if self.layers.is_empty() || self.layers.len() > 2 {
            return fail(format!("need 1 or 2 layers, got {}", self.layers.len()));
        }
        if self.frames < 2 {
            return fail(format!("need at least 2 frames, got {}", self.frames));
        }
        if self.height < 2 || self.width < 2 {
            return fail(format!("frame shape {}x{} is too small", self.height, self.width));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.sky_temp > 0.0) {
            return fail(format!("sky temperature must be positive, got {}", self.sky_temp));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.blob_count == 0 || !(l.blob_scale > 0.0) || !(l.amplitude >= 0.0) {
                return fail(format!("layer {k} needs blobs, a positive scale and a non-negative amplitude"));
            }
            if !(l.detail_scale > 0.0 && (0.0..=1.0).contains(&l.detail_fraction) && l.ramp > 0.0) {
                return fail(format!("layer {k} needs a positive detail scale and ramp and a detail fraction in [0, 1]"));
            }
            if l.velocity.0.abs() > MAX_SPEED || l.velocity.1.abs() > MAX_SPEED {
                return fail(format!("layer {k} velocity {:?} exceeds {MAX_SPEED} px/frame", l.velocity));
            }
            if l.base_temp - self.sky_temp <= 4.0 * self.noise_sigma {
                return fail(format!("layer {k} is not separated from the sky by 4x the noise"));
            }
        }
        if let [a, b] = self.layers.as_slice() {
            let (warm, cool) = if a.base_temp >= b.base_temp { (a, b) } else { (b, a) };
            let gap = warm.base_temp - (cool.base_temp + cool.amplitude);
            if gap < 4.0 * self.noise_sigma - 1e-9 || gap <= 0.0 {
                return fail(format!(
                    "temperature bands must be separated by at least 4x the noise ({}), got {gap}",
                    4.0 * self.noise_sigma
                ));
            }
        }
        if let Some(cp) = self.change_point {
            if cp == 0 || cp >= self.frames || self.layers.len() < 2 {
                return fail(format!("change point {cp} needs two layers and must lie inside the sequence"));
            }
        }
        Ok(())
    }

    /// Number of layers present in frame `t`.
    pub fn layers_at(&self, t: usize) -> usize {
        match self.change_point {
            Some(cp) if t < cp => 1,
            _ => self.layers.len(),
        }
    }
}

/// One generated frame with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub frame: Frame,
    pub mask: SegmentationMask,
    /// Number of layers present.
    pub layers: usize,
    /// Per-pixel labels: 0 sky, 1 warmest visible layer, 2 cooler layer.
    pub labels: Vec<u8>,
}

struct Blob {
    row: f64,
    col: f64,
    weight: f64,
}

fn snap(x: f64) -> f64 {
    (x * CENTER_GRID).round() / CENTER_GRID
}

/// Signed minimum-image difference on a ring of length `period`.
fn wrap(d: f64, period: f64) -> f64 {
    (d + 0.5 * period).rem_euclid(period) - 0.5 * period
}

fn coverage(blobs: &[Blob], scale: f64, shift: (f64, f64), i: usize, j: usize, rows: f64, cols: f64) -> f64 {
    let denom = 2.0 * scale * scale;
    blobs
        .iter()
        .map(|b| {
            let dr = wrap(i as f64 - (b.row + shift.1), rows);
            let dc = wrap(j as f64 - (b.col + shift.0), cols);
            b.weight * (-(dr * dr + dc * dc) / denom).exp()
        })
        .sum()
}

/// Texture profile mapping coverage above the threshold into `[0, 1)`.
fn texture(c: f64, ramp: f64) -> f64 {
    1.0 - (-ramp * (c - COVERAGE_THRESHOLD)).exp()
}

/// Relative temperature in `[0, 1)` of an opaque pixel with coverage `c` and
/// fine-texture density `fine`.
fn profile(layer: &LayerSpec, c: f64, fine: f64) -> f64 {
    let detail = 1.0 - (-fine).exp();
    texture(c, layer.ramp) * (1.0 - layer.detail_fraction + layer.detail_fraction * detail)
}

/// Render the whole sequence.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthFrame>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (rows, cols) = (spec.height as f64, spec.width as f64);
    let blobs: Vec<Vec<Blob>> = spec
        .layers
        .iter()
        .map(|l| {
            (0..l.blob_count)
                .map(|_| Blob {
                    row: snap(rng.random_range(0.0..rows)),
                    col: snap(rng.random_range(0.0..cols)),
                    weight: snap(rng.random_range(0.8..1.2)),
                })
                .collect()
        })
        .collect();
    let details: Vec<Vec<Blob>> = spec
        .layers
        .iter()
        .map(|l| {
            (0..l.detail_count)
                .map(|_| Blob {
                    row: snap(rng.random_range(0.0..rows)),
                    col: snap(rng.random_range(0.0..cols)),
                    weight: snap(rng.random_range(0.5..1.5)),
                })
                .collect()
        })
        .collect();
    // Warmest layer first: it is lowest and occludes the others.
    let mut order: Vec<usize> = (0..spec.layers.len()).collect();
    order.sort_by(|&a, &b| spec.layers[b].base_temp.total_cmp(&spec.layers[a].base_temp));
    let min_base = spec.layers.iter().map(|l| l.base_temp).fold(f64::INFINITY, f64::min);
    let threshold = 0.5 * (spec.sky_temp + min_base);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated noise sigma");

    let mut out = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let present = spec.layers_at(t);
        let mut temps = Vec::with_capacity(spec.height * spec.width);
        let mut labels = Vec::with_capacity(spec.height * spec.width);
        for i in 0..spec.height {
            for j in 0..spec.width {
                let mut value = spec.sky_temp;
                let mut label = 0u8;
                let mut rank = 0u8;
                for &k in &order {
                    if k >= present {
                        continue;
                    }
                    rank += 1;
                    let layer = &spec.layers[k];
                    let shift = (layer.velocity.0 * t as f64, layer.velocity.1 * t as f64);
                    let c = coverage(&blobs[k], layer.blob_scale, shift, i, j, rows, cols);
                    if c > COVERAGE_THRESHOLD {
                        let fine = coverage(&details[k], layer.detail_scale, shift, i, j, rows, cols);
                        value = layer.base_temp + layer.amplitude * profile(layer, c, fine);
                        label = rank;
                        break;
                    }
                }
                if spec.noise_sigma > 0.0 {
                    value += noise.sample(&mut rng);
                }
                temps.push(value);
                labels.push(label);
            }
        }
        let grid = Grid::new(spec.height, spec.width, temps)?;
        let mask = SegmentationMask::from_fn(spec.height, spec.width, |i, j| grid.get(i, j) > threshold);
        let frame = Frame::new(t, grid)?;
        out.push(SynthFrame {
            frame,
            mask,
            layers: present,
            labels,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub t: usize,
    pub layers: usize,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frames: Vec<TruthEntry>,
}

impl GroundTruth {
    pub fn layers_at(&self, t: usize) -> Option<usize> {
        self.frames.iter().find(|e| e.t == t).map(|e| e.layers)
    }
}

pub fn labels_file_name(t: usize) -> String {
    format!("labels_{t:04}.csv")
}

fn write(path: &Path, text: &str) -> Result<(), SynthError> {
    fs::write(path, text).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write frames, masks, manifest, per-pixel labels and `truth.json` into
/// `dir`. Returns the manifest path.
pub fn write_sequence(dir: &Path, spec: &SynthSpec, frames: &[SynthFrame]) -> Result<PathBuf, SynthError> {
    let pairs: Vec<(Frame, SegmentationMask)> = frames.iter().map(|f| (f.frame.clone(), f.mask.clone())).collect();
    let manifest = imaging::write_sequence(dir, &pairs)?;
    let mut truth = GroundTruth { frames: Vec::new() };
    for f in frames {
        let t = f.frame.index;
        let mut csv = String::with_capacity(f.labels.len() * 2);
        for (k, l) in f.labels.iter().enumerate() {
            if k % spec.width > 0 {
                csv.push(',');
            }
            csv.push(char::from(b'0' + l));
            if k % spec.width == spec.width - 1 {
                csv.push('\n');
            }
        }
        let name = labels_file_name(t);
        write(&dir.join(&name), &csv)?;
        truth.frames.push(TruthEntry {
            t,
            layers: f.layers,
            labels: name,
        });
    }
    let json = serde_json::to_string_pretty(&truth).expect("truth serializes");
    write(&dir.join("truth.json"), &json)?;
    let spec_json = serde_json::to_string_pretty(spec).expect("spec serializes");
    write(&dir.join("spec.json"), &spec_json)?;
    Ok(manifest)
}

pub fn read_truth(path: &Path) -> Result<GroundTruth, SynthError> {
    let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| SynthError::Invalid(format!("{}: {e}", path.display())))
}
