//! Voxel grids and their on-disk container.
//!
//! A `.vol` file is laid out as
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"REBAVOL\0"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      4     reserved, zero
//! 16      ..    JSON header line {"shape":[D,H,W],"dtype":"f32le"|"i32le"} terminated by '\n'
//! ..      ..    D*H*W little-endian samples, D-major, W fastest
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"REBAVOL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: not a volume container (bad magic)")]
    BadMagic(String),
    #[error("{path}: unsupported container version {version}")]
    UnsupportedVersion { path: String, version: u32 },
    #[error("{path}: malformed header: {reason}")]
    Header { path: String, reason: String },
    #[error("expected dtype {expected}, found {found}")]
    Dtype { expected: &'static str, found: String },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Shape, found: Shape },
    #[error("voxel count {found} does not match shape {shape:?}")]
    Length { shape: Shape, found: usize },
    #[error("non-finite voxel at index {0}")]
    NonFinite(usize),
    #[error("invalid atlas: {0}")]
    InvalidAtlas(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeError + '_ {
    move |source| VolumeError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Grid extent `(D, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Shape {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl From<[usize; 3]> for Shape {
    fn from([d, h, w]: [usize; 3]) -> Self {
        Shape { d, h, w }
    }
}

impl From<Shape> for [usize; 3] {
    fn from(s: Shape) -> Self {
        [s.d, s.h, s.w]
    }
}

impl Shape {
    pub fn new(d: usize, h: usize, w: usize) -> Self {
        Shape { d, h, w }
    }

    pub fn cube(n: usize) -> Self {
        Shape::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.h + j) * self.w + k
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.w;
        let j = (idx / self.w) % self.h;
        let i = idx / (self.w * self.h);
        (i, j, k)
    }

    /// Indices of the face (6-connected) neighbours of `idx`.
    pub fn face_neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j, k) = self.coords(idx);
        let (i, j, k) = (i as isize, j as isize, k as isize);
        [
            (-1, 0, 0),
            (1, 0, 0),
            (0, -1, 0),
            (0, 1, 0),
            (0, 0, -1),
            (0, 0, 1),
        ]
        .into_iter()
        .filter_map(move |(di, dj, dk)| {
            let (a, b, c) = (i + di, j + dj, k + dk);
            if a < 0
                || b < 0
                || c < 0
                || a >= self.d as isize
                || b >= self.h as isize
                || c >= self.w as isize
            {
                None
            } else {
                Some(self.index(a as usize, b as usize, c as usize))
            }
        })
    }
}

/// Scalar intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    shape: Shape,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self, VolumeError> {
        if data.len() != shape.len() {
            return Err(VolumeError::Length {
                shape,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Volume { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Volume {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn write(&self, path: &Path) -> Result<(), VolumeError> {
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_container(path, self.shape, "f32le", &bytes)
    }

    pub fn read(path: &Path) -> Result<Self, VolumeError> {
        let (shape, payload) = read_container(path, "f32le")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Volume::new(shape, data)
    }
}

/// Integer region labelling; 0 is background, `1..=n_regions` are regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atlas {
    shape: Shape,
    labels: Vec<i32>,
    n_regions: usize,
}

impl Atlas {
    /// Validates that every label lies in `0..=n_regions` and that every
    /// region owns at least one voxel.
    pub fn new(shape: Shape, labels: Vec<i32>, n_regions: usize) -> Result<Self, VolumeError> {
        if labels.len() != shape.len() {
            return Err(VolumeError::Length {
                shape,
                found: labels.len(),
            });
        }
        let mut counts = vec![0usize; n_regions + 1];
        for (i, &l) in labels.iter().enumerate() {
            if l < 0 || l as usize > n_regions {
                return Err(VolumeError::InvalidAtlas(format!(
                    "label {l} at voxel {i} outside [0, {n_regions}]"
                )));
            }
            counts[l as usize] += 1;
        }
        if let Some(r) = (1..=n_regions).find(|&r| counts[r] == 0) {
            return Err(VolumeError::InvalidAtlas(format!("region {r} owns no voxel")));
        }
        Ok(Atlas {
            shape,
            labels,
            n_regions,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    /// Voxel count per label, index 0 being background.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_regions + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn write(&self, path: &Path) -> Result<(), VolumeError> {
        let bytes: Vec<u8> = self.labels.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_container(path, self.shape, "i32le", &bytes)
    }

    pub fn read(path: &Path, n_regions: usize) -> Result<Self, VolumeError> {
        let (shape, payload) = read_container(path, "i32le")?;
        let labels = payload
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Atlas::new(shape, labels, n_regions)
    }
}

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    shape: [usize; 3],
    dtype: String,
}

fn write_container(path: &Path, shape: Shape, dtype: &str, payload: &[u8]) -> Result<(), VolumeError> {
    let header = serde_json::to_string(&ContainerHeader {
        shape: shape.into(),
        dtype: dtype.to_string(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 1 + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(payload);
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))
}

fn read_container(path: &Path, expected: &'static str) -> Result<(Shape, Vec<u8>), VolumeError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(f);
    let mut fixed = [0u8; 16];
    r.read_exact(&mut fixed).map_err(io_err(path))?;
    if &fixed[..8] != MAGIC {
        return Err(VolumeError::BadMagic(path.display().to_string()));
    }
    let version = u32::from_le_bytes([fixed[8], fixed[9], fixed[10], fixed[11]]);
    if version != FORMAT_VERSION {
        return Err(VolumeError::UnsupportedVersion {
            path: path.display().to_string(),
            version,
        });
    }
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line).map_err(io_err(path))?;
    if line.last() != Some(&b'\n') {
        return Err(VolumeError::Header {
            path: path.display().to_string(),
            reason: "unterminated header line".into(),
        });
    }
    line.pop();
    let header: ContainerHeader =
        serde_json::from_slice(&line).map_err(|e| VolumeError::Header {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    if header.dtype != expected {
        return Err(VolumeError::Dtype {
            expected,
            found: header.dtype,
        });
    }
    let shape = Shape::from(header.shape);
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io_err(path))?;
    if payload.len() != shape.len() * 4 {
        return Err(VolumeError::Length {
            shape,
            found: payload.len() / 4,
        });
    }
    Ok((shape, payload))
}
