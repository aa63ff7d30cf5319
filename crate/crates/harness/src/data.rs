//! IDX image/label files and synthetic Gaussian blobs.

use std::path::Path;
use std::str::FromStr;

use gradpack_core::{Targets, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Fraction of samples held out for validation.
pub const VAL_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { file: String, expected: u32, found: u32 },
    #[error("{file}: truncated, expected {expected} bytes but found {found}")]
    Truncated { file: String, expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("invalid data spec: {0}")]
    Spec(String),
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

/// Samples with integer labels plus a fixed train/validation split.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// `[N × …]` inputs, one row per sample.
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Dataset {
    /// Splits with a seeded shuffle; the last `⌈fraction·N⌉` go to validation.
    pub fn new(x: Tensor, labels: Vec<usize>, classes: usize, split_seed: u64) -> Result<Self, DataError> {
        let n = labels.len();
        if x.shape().first() != Some(&n) {
            return Err(DataError::CountMismatch {
                images: x.shape().first().copied().unwrap_or(0),
                labels: n,
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Label { label, classes });
        }
        if n < 2 {
            return Err(DataError::Spec(format!("need at least 2 samples, found {n}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
        let n_val = ((n as f64 * VAL_FRACTION).ceil() as usize).clamp(1, n - 1);
        let val = order.split_off(n - n_val);
        Ok(Dataset {
            x,
            labels,
            classes,
            train: order,
            val,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample input shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.x.shape()[1..]
    }

    pub fn batch(&self, rows: &[usize]) -> (Tensor, Targets) {
        (
            self.x.select_rows(rows),
            Targets::Labels(rows.iter().map(|&r| self.labels[r]).collect()),
        )
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn header(file: &str, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, DataError> {
    let head = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(DataError::Truncated {
            file: file.into(),
            expected: head,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DataError::BadMagic {
            file: file.into(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < head {
        return Err(DataError::Truncated {
            file: file.into(),
            expected: head,
            found: bytes.len(),
        });
    }
    let sizes: Vec<usize> = (0..dims).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    let expected = head + sizes.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            file: file.into(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(sizes)
}

/// Parses an IDX3 image file into `[n, 1, rows, cols]` with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(file: &str, bytes: &[u8]) -> Result<Tensor, DataError> {
    let sizes = header(file, bytes, IMAGE_MAGIC, 3)?;
    let (n, r, c) = (sizes[0], sizes[1], sizes[2]);
    let data = bytes[16..16 + n * r * c].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Tensor::new(&[n, 1, r, c], data).expect("sizes match the header"))
}

pub fn parse_idx_labels(file: &str, bytes: &[u8]) -> Result<Vec<usize>, DataError> {
    let sizes = header(file, bytes, LABEL_MAGIC, 1)?;
    Ok(bytes[8..8 + sizes[0]].iter().map(|&b| usize::from(b)).collect())
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        file: path.display().to_string(),
        source,
    })
}

/// Loads an IDX image/label pair. The class count is `max label + 1`.
pub fn load_idx(images: &Path, labels: &Path, split_seed: u64) -> Result<Dataset, DataError> {
    let x = parse_idx_images(&images.display().to_string(), &read(images)?)?;
    let y = parse_idx_labels(&labels.display().to_string(), &read(labels)?)?;
    if x.shape()[0] != y.len() {
        return Err(DataError::CountMismatch {
            images: x.shape()[0],
            labels: y.len(),
        });
    }
    let classes = y.iter().max().map_or(0, |m| m + 1);
    Dataset::new(x, y, classes, split_seed)
}

/// Distance of every blob center from the origin.
pub const BLOB_SEPARATION: f64 = 4.0;

/// `per_class` unit-variance Gaussian samples around each of `classes`
/// centers `separation · e_c` (vertices of a scaled simplex), needing `dims ≥ classes`.
pub fn synth_blobs_with(
    classes: usize,
    dims: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if per_class == 0 {
        return Err(DataError::Spec("samples per class must be at least 1".into()));
    }
    if classes < 2 {
        return Err(DataError::Spec(format!("need at least 2 classes, found {classes}")));
    }
    if dims < classes {
        return Err(DataError::Spec(format!(
            "{classes} simplex centers need at least {classes} dimensions, found {dims}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        for _ in 0..per_class {
            for d in 0..dims {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(if d == c { separation + z } else { z });
            }
            labels.push(c);
        }
    }
    let x = Tensor::new(&[n, dims], data).expect("sizes match");
    Dataset::new(x, labels, classes, seed ^ 0x5eed_0f_5b11)
}

pub fn synth_blobs(classes: usize, dims: usize, per_class: usize, seed: u64) -> Result<Dataset, DataError> {
    synth_blobs_with(classes, dims, per_class, BLOB_SEPARATION, seed)
}

/// `idx:<images>,<labels>` or `blobs:<C>,<d>,<k>`.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Idx { images: String, labels: String },
    Blobs { classes: usize, dims: usize, per_class: usize },
}

impl DataSpec {
    pub fn load(&self, seed: u64) -> Result<Dataset, DataError> {
        match self {
            DataSpec::Idx { images, labels } => load_idx(Path::new(images), Path::new(labels), seed),
            DataSpec::Blobs {
                classes,
                dims,
                per_class,
            } => synth_blobs(*classes, *dims, *per_class, seed),
        }
    }
}

impl FromStr for DataSpec {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DataError::Spec(format!("`{s}`: expected idx:<images>,<labels> or blobs:<C>,<d>,<k>"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
        match (kind, parts.as_slice()) {
            ("idx", [img, lbl]) => Ok(DataSpec::Idx {
                images: img.to_string(),
                labels: lbl.to_string(),
            }),
            ("blobs", [c, d, k]) => {
                let num = |v: &str| v.parse::<usize>().map_err(|_| bad());
                Ok(DataSpec::Blobs {
                    classes: num(c)?,
                    dims: num(d)?,
                    per_class: num(k)?,
                })
            }
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for DataSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataSpec::Idx { images, labels } => write!(f, "idx:{images},{labels}"),
            DataSpec::Blobs {
                classes,
                dims,
                per_class,
            } => write!(f, "blobs:{classes},{dims},{per_class}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, r: u32, c: u32, payload: usize) -> Vec<u8> {
        let mut b = IMAGE_MAGIC.to_be_bytes().to_vec();
        for v in [n, r, c] {
            b.extend(v.to_be_bytes());
        }
        b.extend((0..payload).map(|i| (i % 256) as u8));
        b
    }

    #[test]
    fn images_parse_and_scale() {
        let x = parse_idx_images("t", &idx_images(2, 2, 3, 12)).unwrap();
        assert_eq!(x.shape(), [2, 1, 2, 3]);
        assert_eq!(x.data()[5], 5.0 / 255.0);
    }

    #[test]
    fn errors_are_distinct() {
        let mut bad = idx_images(1, 2, 2, 4);
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images("t", &bad), Err(DataError::BadMagic { .. })));
        assert!(matches!(
            parse_idx_images("t", &idx_images(2, 2, 2, 7)),
            Err(DataError::Truncated { expected: 24, found: 23, .. })
        ));
        assert!(matches!(parse_idx_images("t", &[0, 0]), Err(DataError::Truncated { .. })));
    }

    #[test]
    fn spec_round_trip() {
        for s in ["idx:a.idx,b.idx", "blobs:3,5,10"] {
            assert_eq!(s.parse::<DataSpec>().unwrap().to_string(), s);
        }
        assert!("blobs:3,5".parse::<DataSpec>().is_err());
        assert!("csv:x".parse::<DataSpec>().is_err());
    }

    #[test]
    fn blobs_shape_split_and_errors() {
        let d = synth_blobs(3, 4, 10, 1).unwrap();
        assert_eq!(d.x.shape(), [30, 4]);
        assert_eq!(d.val.len(), 6);
        let mut all: Vec<usize> = d.train.iter().chain(&d.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
        assert!(synth_blobs(3, 4, 0, 1).is_err());
        assert!(synth_blobs(5, 4, 3, 1).is_err());
        assert_eq!(synth_blobs(3, 4, 10, 1).unwrap().x, d.x);
    }
}
