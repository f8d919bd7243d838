use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3072;

/// Parameters of a synthetic Gaussian-mixture dataset.
///
/// Each class `c` has mean `mu_c ~ U[mean_low, mean_high]^d` and covariance
/// `std^2 I + latent_scale^2 B_c B_c^T` where `B_c` is a `d x latent_rank`
/// standard-normal matrix. Samples are clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmSpec {
    pub classes: usize,
    pub d: usize,
    pub per_class: usize,
    pub seed: u64,
    #[serde(default = "GmmSpec::default_std")]
    pub std: f64,
    #[serde(default = "GmmSpec::default_mean_low")]
    pub mean_low: f64,
    #[serde(default = "GmmSpec::default_mean_high")]
    pub mean_high: f64,
    #[serde(default = "GmmSpec::default_latent_rank")]
    pub latent_rank: usize,
    #[serde(default = "GmmSpec::default_latent_scale")]
    pub latent_scale: f64,
}

impl GmmSpec {
    fn default_std() -> f64 {
        0.05
    }
    fn default_mean_low() -> f64 {
        0.15
    }
    fn default_mean_high() -> f64 {
        0.85
    }
    fn default_latent_rank() -> usize {
        2
    }
    fn default_latent_scale() -> f64 {
        0.1
    }

    pub fn new(classes: usize, d: usize, per_class: usize, seed: u64) -> Self {
        Self {
            classes,
            d,
            per_class,
            seed,
            std: Self::default_std(),
            mean_low: Self::default_mean_low(),
            mean_high: Self::default_mean_high(),
            latent_rank: Self::default_latent_rank(),
            latent_scale: Self::default_latent_scale(),
        }
    }
}

/// A dataset source as written in the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// IDX ubyte image + label files (MNIST / FashionMNIST layout).
    Idx { images: PathBuf, labels: PathBuf },
    /// One or more CIFAR-10 binary batch files.
    Cifar10 { files: Vec<PathBuf> },
    SyntheticGmm(GmmSpec),
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Idx { images, labels } => load_idx(images, labels),
        DataSource::Cifar10 { files } => load_cifar10(files),
        DataSource::SyntheticGmm(spec) => synthetic_gmm(spec),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated header: need 4 bytes at offset {offset}"),
        })
}

/// Decode an IDX file with the given magic number. Returns the declared
/// dimensions and the payload bytes.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<(Vec<usize>, &[u8])> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != expected_magic {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic number {magic:#010x}, expected {expected_magic:#010x}"),
        });
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|k| read_be_u32(bytes, 4 + 4 * k).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndims;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        let offset = header + payload.len().min(expected);
        return Err(Error::Format {
            offset: offset as u64,
            message: format!(
                "declared dimensions {dims:?} need {expected} payload bytes, file has {}",
                payload.len()
            ),
        });
    }
    Ok((dims, payload))
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let image_bytes = read_file(images)?;
    let label_bytes = read_file(labels)?;
    let (dims, pixels) = parse_idx(&image_bytes, IDX_IMAGES_MAGIC)?;
    let (ldims, raw_labels) = parse_idx(&label_bytes, IDX_LABELS_MAGIC)?;
    if ldims[0] != dims[0] {
        return Err(Error::Format {
            offset: 4,
            message: format!("{} images but {} labels", dims[0], ldims[0]),
        });
    }
    let d = dims[1] * dims[2];
    let points = Matrix::from_vec(dims[0], d, pixels.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| usize::from(l)).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(
        images.file_name().map_or_else(|| "idx".into(), |n| n.to_string_lossy().into_owned()),
        points,
        labels,
        n_classes,
    )
}

pub fn load_cifar10(files: &[PathBuf]) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in files {
        let bytes = read_file(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
            return Err(Error::Format {
                offset: whole as u64,
                message: format!(
                    "{}: {} bytes is not a whole number of {CIFAR_RECORD}-byte records",
                    path.display(),
                    bytes.len()
                ),
            });
        }
        for (r, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            let label = usize::from(record[0]);
            if label >= 10 {
                return Err(Error::Format {
                    offset: (r * CIFAR_RECORD) as u64,
                    message: format!("label byte {label} out of range"),
                });
            }
            labels.push(label);
            data.extend(record[1..].iter().map(|&p| f64::from(p) / 255.0));
        }
    }
    let n = labels.len();
    Dataset::new("cifar10", Matrix::from_vec(n, 3072, data)?, labels, 10)
}

pub fn synthetic_gmm(spec: &GmmSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.d == 0 || spec.per_class == 0 {
        return Err(Error::arg("synthetic-gmm needs classes, d and per_class >= 1"));
    }
    if !(spec.std >= 0.0 && spec.latent_scale >= 0.0 && spec.mean_low <= spec.mean_high) {
        return Err(Error::arg("synthetic-gmm scale parameters are invalid"));
    }
    let mut rng = rng::stream(spec.seed, &[rng::label("synthetic-gmm")]);
    let (d, rank) = (spec.d, spec.latent_rank);
    let mut points = Matrix::zeros(0, d);
    let mut labels = Vec::with_capacity(spec.classes * spec.per_class);
    let mut row = vec![0.0; d];
    for c in 0..spec.classes {
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(spec.mean_low..=spec.mean_high)).collect();
        let basis: Vec<f64> = (0..d * rank).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..spec.per_class {
            let z: Vec<f64> = (0..rank).map(|_| rng.sample(StandardNormal)).collect();
            for (k, x) in row.iter_mut().enumerate() {
                let latent: f64 = (0..rank).map(|r| basis[k * rank + r] * z[r]).sum();
                let noise: f64 = rng.sample(StandardNormal);
                *x = (mean[k] + spec.latent_scale * latent + spec.std * noise).clamp(0.0, 1.0);
            }
            points.push_row(&row)?;
            labels.push(c);
        }
    }
    Dataset::new("synthetic-gmm", points, labels, spec.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend(d.to_be_bytes());
        }
        b.extend(payload);
        b
    }

    #[test]
    fn synthetic_is_balanced_and_bounded() {
        let ds = synthetic_gmm(&GmmSpec::new(4, 16, 50, 7)).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.dim(), 16);
        assert_eq!(ds.class_counts(), vec![50; 4]);
        assert!(ds.points.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ds, synthetic_gmm(&GmmSpec::new(4, 16, 50, 7)).unwrap());
    }

    #[test]
    fn idx_wrong_magic_is_a_format_error() {
        let b = idx_bytes(0x0000_0802, &[1, 1, 1], &[0]);
        match parse_idx(&b, IDX_IMAGES_MAGIC) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn idx_truncated_payload_reports_offset() {
        let b = idx_bytes(IDX_IMAGES_MAGIC, &[2, 2, 2], &[0; 5]);
        match parse_idx(&b, IDX_IMAGES_MAGIC) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16 + 5),
            other => panic!("unexpected {other:?}"),
        }
        // header itself truncated
        let b = idx_bytes(IDX_IMAGES_MAGIC, &[2], &[]);
        assert!(matches!(parse_idx(&b, IDX_IMAGES_MAGIC), Err(Error::Format { .. })));
    }

    #[test]
    fn idx_rejects_trailing_bytes() {
        let b = idx_bytes(IDX_LABELS_MAGIC, &[2], &[1, 2, 3]);
        assert!(matches!(parse_idx(&b, IDX_LABELS_MAGIC), Err(Error::Format { .. })));
    }

    #[test]
    fn idx_roundtrip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("img");
        let labels = dir.path().join("lbl");
        std::fs::write(&images, idx_bytes(IDX_IMAGES_MAGIC, &[2, 2, 2], &[0, 255, 51, 0, 0, 0, 0, 255])).unwrap();
        std::fs::write(&labels, idx_bytes(IDX_LABELS_MAGIC, &[2], &[3, 9])).unwrap();
        let ds = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.points.row(0), &[0.0, 1.0, 0.2, 0.0]);
        assert_eq!(ds.labels().for_evaluation(), &[3, 9]);
        assert_eq!(ds.n_classes, 10);
    }

    #[test]
    fn cifar_record_length_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("batch.bin");
        let mut bytes = vec![0u8; CIFAR_RECORD * 2];
        bytes[CIFAR_RECORD] = 7;
        bytes[1] = 255;
        std::fs::write(&f, &bytes).unwrap();
        let ds = load_cifar10(std::slice::from_ref(&f)).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 3072);
        assert_eq!(ds.labels().for_evaluation(), &[0, 7]);
        assert_eq!(ds.points.get(0, 0), 1.0);

        bytes.push(0);
        std::fs::write(&f, &bytes).unwrap();
        match load_cifar10(&[f]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, (CIFAR_RECORD * 2) as u64),
            other => panic!("unexpected {other:?}"),
        }
    }
}
