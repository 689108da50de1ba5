//! Frames, segmentation masks, feature normalization and the CSV/manifest
//! sequence format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default clamp used by both temperature normalizers.
pub const DEFAULT_NORMALIZE_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("{what}: expected {expected_rows}x{expected_cols}, found {rows}x{cols}")]
    ShapeMismatch {
        what: String,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("mask has no cloud pixels")]
    EmptyMask,
    #[error("masked temperatures are constant ({value}); cannot normalize")]
    Degenerate { value: f64 },
    #[error("temperature {value} at ({row}, {col}) is not a finite positive Kelvin value")]
    InvalidTemperature { row: usize, col: usize, value: f64 },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("failed to read {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("frame indices must be strictly increasing: {previous} followed by {next}")]
    NonMonotone { previous: usize, next: usize },
    #[error("invalid manifest {}: {message}", .path.display())]
    Manifest { path: PathBuf, message: String },
}

/// Dense row-major grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if data.len() != rows * cols {
            return Err(ImagingError::ShapeMismatch {
                what: "grid data".into(),
                expected_rows: rows,
                expected_cols: cols,
                rows: data.len() / cols.max(1),
                cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// One temperature image in Kelvin.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    temperatures: Grid,
}

impl Frame {
    pub fn new(index: usize, temperatures: Grid) -> Result<Self, ImagingError> {
        for i in 0..temperatures.rows() {
            for j in 0..temperatures.cols() {
                let value = temperatures.get(i, j);
                if !(value.is_finite() && value > 0.0) {
                    return Err(ImagingError::InvalidTemperature { row: i, col: j, value });
                }
            }
        }
        Ok(Self { index, temperatures })
    }

    pub fn temperatures(&self) -> &Grid {
        &self.temperatures
    }

    pub fn shape(&self) -> (usize, usize) {
        self.temperatures.shape()
    }

    pub fn height(&self) -> usize {
        self.temperatures.rows()
    }

    pub fn width(&self) -> usize {
        self.temperatures.cols()
    }
}

/// Boolean cloud mask; `true` marks a cloud pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl SegmentationMask {
    pub fn new(rows: usize, cols: usize, cells: Vec<bool>) -> Result<Self, ImagingError> {
        if cells.len() != rows * cols {
            return Err(ImagingError::ShapeMismatch {
                what: "mask data".into(),
                expected_rows: rows,
                expected_cols: cols,
                rows: cells.len() / cols.max(1),
                cols,
            });
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                cells.push(f(i, j));
            }
        }
        Self { rows, cols, cells }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.cols + j]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Row-major `(i, j)` coordinates of every cloud pixel.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.count());
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.cells
    }
}

/// Per-pixel feature record for a masked pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub i: usize,
    pub j: usize,
    /// Raw temperature (K).
    pub temperature: f64,
    /// Temperature normalized into (0, 1).
    pub beta_normalized: f64,
    /// Temperature shifted so its minimum is `eps`.
    pub shift_normalized: f64,
    pub u: f64,
    pub v: f64,
    pub magnitude: f64,
    pub angle: f64,
}

impl FeatureVector {
    pub fn new(
        (i, j): (usize, usize),
        temperature: f64,
        beta_normalized: f64,
        shift_normalized: f64,
        (u, v): (f64, f64),
    ) -> Self {
        Self {
            i,
            j,
            temperature,
            beta_normalized,
            shift_normalized,
            u,
            v,
            magnitude: u.hypot(v),
            angle: u.atan2(v),
        }
    }
}

fn check_same_shape(frame: &Frame, mask: &SegmentationMask) -> Result<(), ImagingError> {
    let (rows, cols) = mask.shape();
    if frame.shape() != (rows, cols) {
        return Err(ImagingError::ShapeMismatch {
            what: format!("mask for frame {}", frame.index),
            expected_rows: frame.height(),
            expected_cols: frame.width(),
            rows,
            cols,
        });
    }
    Ok(())
}

/// Masked temperatures in row-major order.
pub fn masked_temperatures(
    frame: &Frame,
    mask: &SegmentationMask,
) -> Result<Vec<f64>, ImagingError> {
    check_same_shape(frame, mask)?;
    Ok(frame
        .temperatures()
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .filter(|(_, &m)| m)
        .map(|(&t, _)| t)
        .collect())
}

fn masked_range(values: &[f64]) -> Result<(f64, f64), ImagingError> {
    if values.is_empty() {
        return Err(ImagingError::EmptyMask);
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        return Err(ImagingError::Degenerate { value: lo });
    }
    Ok((lo, hi))
}

/// Min–max normalize masked temperatures into `[eps, 1 − eps]`.
pub fn normalize_beta(
    frame: &Frame,
    mask: &SegmentationMask,
    eps: f64,
) -> Result<Vec<f64>, ImagingError> {
    let temps = masked_temperatures(frame, mask)?;
    let (lo, hi) = masked_range(&temps)?;
    let span = hi - lo;
    Ok(temps
        .iter()
        .map(|&t| ((t - lo) / span).clamp(eps, 1.0 - eps))
        .collect())
}

/// Shift masked temperatures so the coldest cloud pixel sits at `eps`.
pub fn normalize_gamma(
    frame: &Frame,
    mask: &SegmentationMask,
    eps: f64,
) -> Result<Vec<f64>, ImagingError> {
    let temps = masked_temperatures(frame, mask)?;
    let (lo, _) = masked_range(&temps)?;
    Ok(temps.iter().map(|&t| t - lo + eps).collect())
}

// ---------------------------------------------------------------------------
// CSV + manifest format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub t: usize,
    pub frame: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub height: usize,
    pub width: usize,
    pub frames: Vec<ManifestEntry>,
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:04}.csv")
}

pub fn mask_file_name(t: usize) -> String {
    format!("mask_{t:04}.csv")
}

fn read_text(path: &Path) -> Result<String, ImagingError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ImagingError::MissingFile(path.to_path_buf())
        } else {
            ImagingError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), ImagingError> {
    fs::write(path, text).map_err(|source| ImagingError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse a rectangular CSV of reals, checking the expected shape.
pub fn read_csv_grid(path: &Path, rows: usize, cols: usize) -> Result<Grid, ImagingError> {
    let text = read_text(path)?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut found_rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        found_rows += 1;
        let before = data.len();
        for field in line.split(',') {
            let value: f64 = field.trim().parse().map_err(|_| ImagingError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("not a number: {:?}", field.trim()),
            })?;
            data.push(value);
        }
        let width = data.len() - before;
        if width != cols {
            return Err(ImagingError::ShapeMismatch {
                what: format!("{} (line {})", path.display(), lineno + 1),
                expected_rows: rows,
                expected_cols: cols,
                rows: found_rows,
                cols: width,
            });
        }
    }
    if found_rows != rows {
        return Err(ImagingError::ShapeMismatch {
            what: path.display().to_string(),
            expected_rows: rows,
            expected_cols: cols,
            rows: found_rows,
            cols,
        });
    }
    Grid::new(rows, cols, data)
}

pub fn grid_to_csv(grid: &Grid) -> String {
    let mut out = String::with_capacity(grid.rows() * grid.cols() * 12);
    for i in 0..grid.rows() {
        for j in 0..grid.cols() {
            if j > 0 {
                out.push(',');
            }
            // `Display` for f64 is the shortest string that parses back exactly.
            out.push_str(&grid.get(i, j).to_string());
        }
        out.push('\n');
    }
    out
}

pub fn mask_to_csv(mask: &SegmentationMask) -> String {
    let (rows, cols) = mask.shape();
    let mut out = String::with_capacity(rows * cols * 2);
    for i in 0..rows {
        for j in 0..cols {
            if j > 0 {
                out.push(',');
            }
            out.push(if mask.get(i, j) { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}

fn read_mask(path: &Path, rows: usize, cols: usize) -> Result<SegmentationMask, ImagingError> {
    let grid = read_csv_grid(path, rows, cols)?;
    let mut cells = Vec::with_capacity(rows * cols);
    for (k, &v) in grid.as_slice().iter().enumerate() {
        let cell = match v {
            v if v == 0.0 => false,
            v if v == 1.0 => true,
            other => {
                return Err(ImagingError::Parse {
                    path: path.to_path_buf(),
                    line: k / cols + 1,
                    message: format!("mask values must be 0 or 1, found {other}"),
                })
            }
        };
        cells.push(cell);
    }
    SegmentationMask::new(rows, cols, cells)
}

/// Load every frame/mask pair listed in a manifest, in index order.
pub fn load_sequence(
    manifest_path: &Path,
) -> Result<Vec<(Frame, SegmentationMask)>, ImagingError> {
    let text = read_text(manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| ImagingError::Manifest {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::with_capacity(manifest.frames.len());
    let mut previous: Option<usize> = None;
    for entry in &manifest.frames {
        if let Some(prev) = previous {
            if entry.t <= prev {
                return Err(ImagingError::NonMonotone {
                    previous: prev,
                    next: entry.t,
                });
            }
        }
        previous = Some(entry.t);
        let grid = read_csv_grid(&base.join(&entry.frame), manifest.height, manifest.width)?;
        let frame = Frame::new(entry.t, grid)?;
        let mask = read_mask(&base.join(&entry.mask), manifest.height, manifest.width)?;
        out.push((frame, mask));
    }
    Ok(out)
}

/// Write a sequence as `frame_{t:04}.csv`, `mask_{t:04}.csv` and
/// `manifest.json` into `dir`. Returns the manifest path.
pub fn write_sequence(
    dir: &Path,
    sequence: &[(Frame, SegmentationMask)],
) -> Result<PathBuf, ImagingError> {
    fs::create_dir_all(dir).map_err(|source| ImagingError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let (height, width) = sequence.first().map(|(f, _)| f.shape()).unwrap_or((0, 0));
    let mut frames = Vec::with_capacity(sequence.len());
    for (frame, mask) in sequence {
        check_same_shape(frame, mask)?;
        if frame.shape() != (height, width) {
            return Err(ImagingError::ShapeMismatch {
                what: format!("frame {}", frame.index),
                expected_rows: height,
                expected_cols: width,
                rows: frame.height(),
                cols: frame.width(),
            });
        }
        let entry = ManifestEntry {
            t: frame.index,
            frame: frame_file_name(frame.index),
            mask: mask_file_name(frame.index),
        };
        write_text(&dir.join(&entry.frame), &grid_to_csv(frame.temperatures()))?;
        write_text(&dir.join(&entry.mask), &mask_to_csv(mask))?;
        frames.push(entry);
    }
    let manifest = Manifest {
        height,
        width,
        frames,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&path, &json)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_frame(temps: &[f64]) -> (Frame, SegmentationMask) {
        let grid = Grid::new(1, temps.len(), temps.to_vec()).unwrap();
        (Frame::new(0, grid).unwrap(), SegmentationMask::full(1, temps.len()))
    }

    #[test]
    fn beta_normalization_endpoints() {
        let (f, m) = row_frame(&[280.0, 290.0, 300.0]);
        let out = normalize_beta(&f, &m, 1e-6).unwrap();
        assert_eq!(out, vec![1e-6, 0.5, 1.0 - 1e-6]);
        let (f, m) = row_frame(&[280.0, 285.0, 300.0]);
        let out = normalize_beta(&f, &m, 1e-6).unwrap();
        assert_eq!(out, vec![1e-6, 0.25, 1.0 - 1e-6]);
    }

    #[test]
    fn beta_normalization_degenerate() {
        let (f, m) = row_frame(&[280.0, 280.0]);
        assert!(matches!(normalize_beta(&f, &m, 1e-6), Err(ImagingError::Degenerate { .. })));
        let (f, _) = row_frame(&[280.0, 281.0]);
        let empty = SegmentationMask::new(1, 2, vec![false, false]).unwrap();
        assert!(matches!(normalize_beta(&f, &empty, 1e-6), Err(ImagingError::EmptyMask)));
    }

    #[test]
    fn gamma_normalization() {
        let (f, m) = row_frame(&[280.0, 290.0]);
        assert_eq!(normalize_gamma(&f, &m, 1e-6).unwrap(), vec![1e-6, 10.0 + 1e-6]);
        let (f, m) = row_frame(&[270.0, 275.0, 280.0]);
        assert_eq!(
            normalize_gamma(&f, &m, 1e-6).unwrap(),
            vec![1e-6, 5.0 + 1e-6, 10.0 + 1e-6]
        );
        let (f, m) = row_frame(&[250.0, 250.0, 250.0]);
        assert!(normalize_gamma(&f, &m, 1e-6).is_err());
    }

    #[test]
    fn normalization_uses_masked_pixels_only() {
        let grid = Grid::new(1, 4, vec![100.0, 280.0, 290.0, 500.0]).unwrap();
        let frame = Frame::new(0, grid).unwrap();
        let mask = SegmentationMask::new(1, 4, vec![false, true, true, false]).unwrap();
        assert_eq!(normalize_beta(&frame, &mask, 1e-6).unwrap(), vec![1e-6, 1.0 - 1e-6]);
    }

    #[test]
    fn frame_rejects_nonpositive_kelvin() {
        let grid = Grid::new(1, 2, vec![280.0, -1.0]).unwrap();
        assert!(Frame::new(0, grid).is_err());
        let grid = Grid::new(1, 2, vec![280.0, f64::NAN]).unwrap();
        assert!(Frame::new(0, grid).is_err());
    }

    #[test]
    fn feature_vector_polar_convention() {
        let f = FeatureVector::new((0, 0), 280.0, 0.5, 1.0, (3.0, 4.0));
        assert_eq!(f.magnitude, 5.0);
        assert_eq!(f.angle, 3.0f64.atan2(4.0));
    }
}
