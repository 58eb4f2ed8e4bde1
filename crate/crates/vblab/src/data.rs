//! Datasets: synthetic Gaussian blobs, IDX image ingestion, stratified
//! splitting, and feature standardization.
//!
//! The blob generator is the workhorse benchmark: class difficulty is a
//! single knob (`separation`, in units of the within-class standard
//! deviation), so experiments can dial cleanly separable problems where any
//! accuracy loss is attributable to label noise. The IDX loader ingests the
//! classic big-endian byte format used by small image archives.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::{stream, StreamPurpose};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: bad magic 0x{got:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        got: u32,
        expected: u32,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("class {class} has {count} samples; stratified splitting needs at least 2")]
    ClassTooSmall { class: usize, count: usize },
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error(
        "could not place {k} blob means pairwise at least {min_gap} apart after \
         {attempts} attempts; lower K or raise the dimension"
    )]
    MeanPlacement {
        k: usize,
        min_gap: f64,
        attempts: usize,
    },
    #[error("{path}:{line}: {msg}")]
    CsvParse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
}

/// Feature matrix, class labels, class count, and a human-readable origin
/// tag. Fields are public for ergonomic access; [`LabeledDataset::new`]
/// checks the invariants (nonempty, finite features, labels within range),
/// and everything in this crate goes through it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub k: usize,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        k: usize,
        name: String,
    ) -> Result<Self, DataError> {
        let ds = Self {
            features,
            labels,
            k,
            name,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.features.nrows() == 0 || self.features.ncols() == 0 {
            return Err(DataError::InvalidDataset("empty feature matrix".into()));
        }
        if self.labels.len() != self.features.nrows() {
            return Err(DataError::InvalidDataset(format!(
                "{} feature rows but {} labels",
                self.features.nrows(),
                self.labels.len()
            )));
        }
        if self.k < 2 {
            return Err(DataError::InvalidDataset(format!(
                "needs at least 2 classes, got {}",
                self.k
            )));
        }
        if let Some((i, &label)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &label)| label >= self.k)
        {
            return Err(DataError::InvalidDataset(format!(
                "label {label} at row {i} out of range for {} classes",
                self.k
            )));
        }
        if let Some(i) = self
            .features
            .rows()
            .into_iter()
            .position(|row| row.iter().any(|x| !x.is_finite()))
        {
            return Err(DataError::InvalidDataset(format!(
                "non-finite feature at row {i}"
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Samples per class, indexed by class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// New dataset from the given rows, keeping their given order.
    pub fn select(&self, indices: &[usize], name: String) -> Self {
        let features = ndarray::stack(
            ndarray::Axis(0),
            &indices
                .iter()
                .map(|&i| self.features.row(i))
                .collect::<Vec<_>>(),
        )
        .expect("selected rows share a shape");
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self {
            features,
            labels,
            k: self.k,
            name,
        }
    }
}

/// `K` isotropic unit-variance Gaussian clusters in `d` dimensions with
/// `per_class` points each, labels in class-contiguous blocks. Cluster
/// means sit at distance `separation` from the origin along random unit
/// directions, rejection-sampled until pairwise distances reach
/// `separation/2`; with unit within-class variance the classes are nearly
/// separable once `separation` exceeds a few units.
pub fn gen_gaussian_blobs(
    k: usize,
    per_class: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    if k < 2 {
        return Err(DataError::InvalidParameter(format!(
            "need at least 2 classes, got {k}"
        )));
    }
    if per_class == 0 {
        return Err(DataError::InvalidParameter("per_class must be positive".into()));
    }
    if d < 2 {
        return Err(DataError::InvalidParameter(format!(
            "need dimension at least 2, got {d}"
        )));
    }
    if !separation.is_finite() || separation <= 0.0 {
        return Err(DataError::InvalidParameter(format!(
            "separation must be positive, got {separation}"
        )));
    }

    let min_gap = separation / 2.0;
    let max_attempts = 1000 * k;
    let mut mean_rng = stream(seed, StreamPurpose::DatasetMeans, 0);
    let mut means: Vec<Array1<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while means.len() < k {
        attempts += 1;
        if attempts > max_attempts {
            return Err(DataError::MeanPlacement {
                k,
                min_gap,
                attempts: max_attempts,
            });
        }
        let mut direction =
            Array1::from_shape_simple_fn(d, || mean_rng.sample::<f64, _>(StandardNormal));
        let norm = direction.dot(&direction).sqrt();
        if norm < 1e-12 {
            continue;
        }
        direction.mapv_inplace(|x| x * separation / norm);
        let far_enough = means.iter().all(|m| {
            let gap2: f64 = direction
                .iter()
                .zip(m.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            gap2.sqrt() >= min_gap
        });
        if far_enough {
            means.push(direction);
        }
    }

    let n = k * per_class;
    let mut point_rng = stream(seed, StreamPurpose::DatasetPoints, 0);
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for row in 0..per_class {
            let i = class * per_class + row;
            for (slot, &m) in features.row_mut(i).iter_mut().zip(mean.iter()) {
                *slot = m + point_rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(
        features,
        labels,
        k,
        format!("blobs(k={k},per_class={per_class},d={d},sep={separation})"),
    )
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a paired IDX image file (magic `0x00000803`, dimensions
/// count×rows×cols, unsigned-byte pixels) and label file (magic
/// `0x00000801`). Pixels land in `[0,1]` as `byte/255`, flattened
/// row-major; the class count is the largest label plus one.
pub fn load_idx_images(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset, DataError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let mut images = BufReader::new(File::open(images_path)?);
    expect_magic(&mut images, IDX_IMAGES_MAGIC, images_path)?;
    let n_images = read_be_u32(&mut images)? as usize;
    let rows = read_be_u32(&mut images)? as usize;
    let cols = read_be_u32(&mut images)? as usize;
    let d = rows * cols;
    let mut pixels = vec![0u8; n_images * d];
    images.read_exact(&mut pixels)?;

    let mut labels_file = BufReader::new(File::open(labels_path)?);
    expect_magic(&mut labels_file, IDX_LABELS_MAGIC, labels_path)?;
    let n_labels = read_be_u32(&mut labels_file)? as usize;
    if n_labels != n_images {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let mut label_bytes = vec![0u8; n_labels];
    labels_file.read_exact(&mut label_bytes)?;

    let features = Array2::from_shape_vec(
        (n_images, d),
        pixels.into_iter().map(|b| b as f64 / 255.0).collect(),
    )
    .expect("shape matches byte count");
    let labels: Vec<usize> = label_bytes.into_iter().map(usize::from).collect();
    let k = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    let name = images_path
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    LabeledDataset::new(features, labels, k, name)
}

fn expect_magic(
    reader: &mut impl Read,
    expected: u32,
    path: &Path,
) -> Result<(), DataError> {
    let got = read_be_u32(reader)?;
    if got != expected {
        return Err(DataError::BadMagic {
            path: path.display().to_string(),
            got,
            expected,
        });
    }
    Ok(())
}

fn read_be_u32(reader: &mut impl Read) -> Result<u32, std::io::Error> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Stratified shuffle split. Each class contributes
/// `round(test_fraction·count)` samples to the test side, clamped so both
/// sides keep at least one; within each split, samples keep their original
/// dataset order. Class `c` shuffles on stream `(seed, Split, c)`.
pub fn split_train_test(
    ds: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    if !test_fraction.is_finite() || test_fraction <= 0.0 || test_fraction >= 1.0 {
        return Err(DataError::BadFraction(test_fraction));
    }
    ds.validate()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.k];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, indices) in by_class.iter_mut().enumerate() {
        let count = indices.len();
        if count < 2 {
            return Err(DataError::ClassTooSmall { class, count });
        }
        let n_test = ((test_fraction * count as f64).round() as usize).clamp(1, count - 1);
        let mut rng = stream(seed, StreamPurpose::Split, class as u64);
        indices.shuffle(&mut rng);
        test_idx.extend_from_slice(&indices[..n_test]);
        train_idx.extend_from_slice(&indices[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let train = ds.select(&train_idx, format!("{}[train]", ds.name));
    let test = ds.select(&test_idx, format!("{}[test]", ds.name));
    Ok((train, test))
}

/// Per-dimension affine normalization fitted on one dataset (mean zero,
/// unit population variance) and applied unchanged to others, so test
/// features never leak into the statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

/// Dimensions whose spread falls below this keep a unit-ish divisor via
/// the floor, mapping constant features to zero instead of blowing up.
const STD_FLOOR: f64 = 1e-12;

impl Standardizer {
    pub fn fit(features: &Array2<f64>) -> Self {
        let n = features.nrows() as f64;
        let mean = features.sum_axis(ndarray::Axis(0)) / n;
        let mut var = Array1::zeros(features.ncols());
        for row in features.rows() {
            for (slot, (&x, &m)) in var.iter_mut().zip(row.iter().zip(mean.iter())) {
                *slot += (x - m) * (x - m);
            }
        }
        var /= n;
        let std = var.mapv(|v| v.sqrt().max(STD_FLOOR));
        Self { mean, std }
    }

    pub fn transform(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.clone();
        for mut row in out.rows_mut() {
            for (slot, (&m, &s)) in row.iter_mut().zip(self.mean.iter().zip(self.std.iter())) {
                *slot = (*slot - m) / s;
            }
        }
        out
    }

    /// Transforms the dataset's features in place of the originals.
    pub fn apply(&self, ds: &LabeledDataset) -> LabeledDataset {
        LabeledDataset {
            features: self.transform(&ds.features),
            labels: ds.labels.clone(),
            k: ds.k,
            name: ds.name.clone(),
        }
    }
}

/// Writes `f0,…,f{d-1},label` rows. Floats use Rust's shortest round-trip
/// formatting, so save → load reproduces every value bit for bit.
pub fn save_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    ds.validate()?;
    let mut out = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..ds.d())
        .map(|j| format!("f{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (row, &label) in ds.features.rows().into_iter().zip(&ds.labels) {
        for x in row.iter() {
            write!(out, "{x},")?;
        }
        writeln!(out, "{label}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_csv`] (or any CSV with that header
/// shape). The class count is the largest label plus one.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset, DataError> {
    let path = path.as_ref();
    let parse_err = |line: usize, msg: String| DataError::CsvParse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    let header = header?;
    let columns: Vec<&str> = header.split(',').collect();
    let d = columns.len().saturating_sub(1);
    if d == 0 || columns.last() != Some(&"label") {
        return Err(parse_err(
            1,
            format!("expected header f0,…,f{{d-1}},label, got {header:?}"),
        ));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(parse_err(
                i + 1,
                format!("expected {} fields, got {}", d + 1, fields.len()),
            ));
        }
        for field in &fields[..d] {
            let x: f64 = field
                .parse()
                .map_err(|e| parse_err(i + 1, format!("bad feature {field:?}: {e}")))?;
            values.push(x);
        }
        let label: usize = fields[d]
            .parse()
            .map_err(|e| parse_err(i + 1, format!("bad label {:?}: {e}", fields[d])))?;
        labels.push(label);
    }
    let n = labels.len();
    if n == 0 {
        return Err(parse_err(2, "no data rows".into()));
    }
    let features = Array2::from_shape_vec((n, d), values).expect("field count checked per row");
    let k = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    LabeledDataset::new(features, labels, k, name)
}

// ====== Tests ======

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_have_contiguous_label_blocks() {
        let ds = gen_gaussian_blobs(2, 3, 2, 4.0, 1).unwrap();
        assert_eq!(ds.n(), 6);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.labels, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(ds.k, 2);
    }

    #[test]
    fn blobs_are_deterministic() {
        let a = gen_gaussian_blobs(4, 50, 8, 6.0, 99).unwrap();
        let b = gen_gaussian_blobs(4, 50, 8, 6.0, 99).unwrap();
        assert_eq!(a, b);
        let c = gen_gaussian_blobs(4, 50, 8, 6.0, 100).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn blob_means_respect_the_pairwise_gap() {
        let sep = 7.0;
        let ds = gen_gaussian_blobs(6, 200, 5, sep, 3).unwrap();
        // Class centroids estimate the true means to within ~0.2 at this
        // sample size, far tighter than the sep/2 = 3.5 placement gap.
        let centroids = class_centroids(&ds);
        for i in 0..6 {
            for j in 0..i {
                let gap: f64 = centroids
                    .row(i)
                    .iter()
                    .zip(centroids.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(gap > sep / 2.0 - 1.0, "classes {i},{j} only {gap} apart");
            }
        }
    }

    #[test]
    fn well_separated_blobs_are_centroid_classifiable() {
        let ds = gen_gaussian_blobs(10, 1000, 20, 10.0, 7).unwrap();
        let (train, test) = split_train_test(&ds, 0.2, 7).unwrap();
        let centroids = class_centroids(&train);
        let mut correct = 0;
        for (row, &y) in test.features.rows().into_iter().zip(&test.labels) {
            let (best, _) = (0..test.k)
                .map(|c| {
                    let d2: f64 = row
                        .iter()
                        .zip(centroids.row(c))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (c, d2)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            correct += usize::from(best == y);
        }
        let accuracy = correct as f64 / test.n() as f64;
        assert!(accuracy >= 0.99, "centroid accuracy {accuracy}");
    }

    fn class_centroids(ds: &LabeledDataset) -> Array2<f64> {
        let mut sums = Array2::zeros((ds.k, ds.d()));
        let counts = ds.class_counts();
        for (row, &y) in ds.features.rows().into_iter().zip(&ds.labels) {
            let mut target = sums.row_mut(y);
            target += &row;
        }
        for (mut row, &count) in sums.rows_mut().into_iter().zip(&counts) {
            row /= count as f64;
        }
        sums
    }

    #[test]
    fn blob_parameter_validation() {
        assert!(gen_gaussian_blobs(1, 10, 2, 4.0, 0).is_err());
        assert!(gen_gaussian_blobs(3, 0, 2, 4.0, 0).is_err());
        assert!(gen_gaussian_blobs(3, 10, 1, 4.0, 0).is_err());
        assert!(gen_gaussian_blobs(3, 10, 2, 0.0, 0).is_err());
        assert!(gen_gaussian_blobs(3, 10, 2, f64::NAN, 0).is_err());
    }

    fn write_idx_pair(
        dir: &std::path::Path,
        images: &[u8],
        labels: &[u8],
        shape: (u32, u32, u32),
        labels_count: u32,
        images_magic: u32,
        labels_magic: u32,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let images_path = dir.join("fixture-images.idx");
        let labels_path = dir.join("fixture-labels.idx");
        let mut buf = Vec::new();
        buf.extend_from_slice(&images_magic.to_be_bytes());
        buf.extend_from_slice(&shape.0.to_be_bytes());
        buf.extend_from_slice(&shape.1.to_be_bytes());
        buf.extend_from_slice(&shape.2.to_be_bytes());
        buf.extend_from_slice(images);
        std::fs::write(&images_path, buf).unwrap();
        let mut buf = Vec::new();
        buf.extend_from_slice(&labels_magic.to_be_bytes());
        buf.extend_from_slice(&labels_count.to_be_bytes());
        buf.extend_from_slice(labels);
        std::fs::write(&labels_path, buf).unwrap();
        (images_path, labels_path)
    }

    #[test]
    fn idx_fixture_scales_bytes_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = [0u8, 255, 128, 64, 255, 0, 0, 1];
        let (images, labels) = write_idx_pair(
            dir.path(),
            &pixels,
            &[1, 0],
            (2, 2, 2),
            2,
            IDX_IMAGES_MAGIC,
            IDX_LABELS_MAGIC,
        );
        let ds = load_idx_images(&images, &labels).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.d(), 4);
        assert_eq!(ds.labels, vec![1, 0]);
        let expected: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
        assert_eq!(ds.features.as_slice().unwrap(), &expected[..]);
        assert_eq!(ds.features[[0, 0]], 0.0);
        assert_eq!(ds.features[[0, 1]], 1.0);
    }

    #[test]
    fn idx_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        // Labels file carries the image magic.
        let (images, labels) = write_idx_pair(
            dir.path(),
            &[0; 8],
            &[0, 1],
            (2, 2, 2),
            2,
            IDX_IMAGES_MAGIC,
            IDX_IMAGES_MAGIC,
        );
        match load_idx_images(&images, &labels) {
            Err(DataError::BadMagic { got, expected, .. }) => {
                assert_eq!(got, IDX_IMAGES_MAGIC);
                assert_eq!(expected, IDX_LABELS_MAGIC);
            }
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn idx_rejects_count_mismatch_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_idx_pair(
            dir.path(),
            &[0; 12],
            &[0, 1],
            (3, 2, 2),
            2,
            IDX_IMAGES_MAGIC,
            IDX_LABELS_MAGIC,
        );
        assert!(matches!(
            load_idx_images(&images, &labels),
            Err(DataError::CountMismatch {
                images: 3,
                labels: 2
            })
        ));

        // Header promises 3 images but the payload holds 2.
        let (images, labels) = write_idx_pair(
            dir.path(),
            &[0; 8],
            &[0, 1, 0],
            (3, 2, 2),
            3,
            IDX_IMAGES_MAGIC,
            IDX_LABELS_MAGIC,
        );
        assert!(matches!(
            load_idx_images(&images, &labels),
            Err(DataError::Io(_))
        ));
    }

    #[test]
    fn split_is_stratified_and_partitions() {
        let ds = gen_gaussian_blobs(2, 50, 3, 5.0, 11).unwrap();
        let (train, test) = split_train_test(&ds, 0.2, 4).unwrap();
        assert_eq!(test.n(), 20);
        assert_eq!(train.n(), 80);
        assert_eq!(test.class_counts(), vec![10, 10]);
        assert_eq!(train.class_counts(), vec![40, 40]);

        // Every input row lands in exactly one side.
        let mut seen: Vec<Vec<f64>> = train
            .features
            .rows()
            .into_iter()
            .chain(test.features.rows())
            .map(|r| r.to_vec())
            .collect();
        let mut original: Vec<Vec<f64>> =
            ds.features.rows().into_iter().map(|r| r.to_vec()).collect();
        let byte_order = |a: &Vec<f64>, b: &Vec<f64>| {
            a.iter()
                .map(|x| x.to_bits())
                .cmp(b.iter().map(|x| x.to_bits()))
        };
        seen.sort_by(byte_order);
        original.sort_by(byte_order);
        assert_eq!(seen, original);
    }

    #[test]
    fn split_is_deterministic_and_validates() {
        let ds = gen_gaussian_blobs(3, 20, 2, 5.0, 12).unwrap();
        let (train_a, test_a) = split_train_test(&ds, 0.25, 8).unwrap();
        let (train_b, test_b) = split_train_test(&ds, 0.25, 8).unwrap();
        assert_eq!(train_a, train_b);
        assert_eq!(test_a, test_b);
        let (_, test_c) = split_train_test(&ds, 0.25, 9).unwrap();
        assert_ne!(test_a.features, test_c.features);

        assert!(matches!(
            split_train_test(&ds, 0.0, 0),
            Err(DataError::BadFraction(_))
        ));
        assert!(matches!(
            split_train_test(&ds, 1.0, 0),
            Err(DataError::BadFraction(_))
        ));

        let tiny = LabeledDataset::new(
            Array2::zeros((3, 2)),
            vec![0, 0, 1],
            2,
            "tiny".into(),
        )
        .unwrap();
        assert!(matches!(
            split_train_test(&tiny, 0.5, 0),
            Err(DataError::ClassTooSmall { class: 1, count: 1 })
        ));
    }

    #[test]
    fn tiny_class_always_keeps_a_foot_on_each_side() {
        // round(0.1 * 2) = 0 would starve the test side without the clamp.
        let ds = LabeledDataset::new(
            ndarray::array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 3.0]],
            vec![0, 0, 1, 1],
            2,
            "four".into(),
        )
        .unwrap();
        let (train, test) = split_train_test(&ds, 0.1, 0).unwrap();
        assert_eq!(train.class_counts(), vec![1, 1]);
        assert_eq!(test.class_counts(), vec![1, 1]);
    }

    #[test]
    fn standardizer_normalizes_fit_split_only() {
        let ds = gen_gaussian_blobs(3, 300, 4, 6.0, 21).unwrap();
        let (train, test) = split_train_test(&ds, 0.3, 5).unwrap();
        let standardizer = Standardizer::fit(&train.features);
        let train_std = standardizer.apply(&train);
        let test_std = standardizer.apply(&test);

        let n = train_std.n() as f64;
        for j in 0..train_std.d() {
            let col = train_std.features.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "dim {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "dim {j} variance {var}");
        }
        // The same affine map applies to test: its statistics move close to
        // (0,1) but are not exactly normalized.
        let test_mean = test_std.features.column(0).sum() / test_std.n() as f64;
        assert!(test_mean.abs() < 0.5);
        assert_ne!(test_std.features, standardizer.apply(&test_std).features);
    }

    #[test]
    fn standardizer_floors_constant_dimensions() {
        let features = ndarray::array![[1.0, 5.0], [1.0, 7.0], [1.0, 9.0]];
        let standardizer = Standardizer::fit(&features);
        let out = standardizer.transform(&features);
        // Constant column maps to zero rather than dividing by zero.
        assert!(out.column(0).iter().all(|&x| x == 0.0));
        assert!(out.column(1).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blobs.csv");
        let ds = gen_gaussian_blobs(3, 10, 4, 5.0, 33).unwrap();
        save_csv(&ds, &path).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(loaded.features, ds.features);
        assert_eq!(loaded.labels, ds.labels);
        assert_eq!(loaded.k, ds.k);

        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "f0,f1,f2,f3,label");
    }

    #[test]
    fn csv_loader_reports_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f0,f1,label\n1.0,2.0,0\n3.0,oops,1\n").unwrap();
        match load_csv(&path) {
            Err(DataError::CsvParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected CsvParse, got {other:?}"),
        }
        std::fs::write(&path, "a,b\n1.0,2.0\n").unwrap();
        assert!(matches!(load_csv(&path), Err(DataError::CsvParse { .. })));
    }
}
