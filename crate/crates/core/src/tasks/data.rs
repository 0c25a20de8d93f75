//! IDX and CIFAR-10 binary loaders plus stratified subsampling.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TdcaError};
use crate::nn::{one_hot, Batch};

pub const CLASS_COUNT: usize = 10;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 3073;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetId {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl DatasetId {
    pub fn name(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::FashionMnist => "fashion-mnist",
            DatasetId::Cifar10 => "cifar-10",
        }
    }

    pub fn input_dim(self) -> usize {
        match self {
            DatasetId::Mnist | DatasetId::FashionMnist => 784,
            DatasetId::Cifar10 => 3072,
        }
    }

    /// Subdirectory of the data root holding this dataset.
    pub fn directory(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::FashionMnist => "fashion-mnist",
            DatasetId::Cifar10 => "cifar-10-batches-bin",
        }
    }

    /// Files a loader needs, relative to the data root.
    pub fn files(self, split: Split) -> Vec<PathBuf> {
        let dir = PathBuf::from(self.directory());
        match (self, split) {
            (DatasetId::Cifar10, Split::Train) => (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .collect(),
            (DatasetId::Cifar10, Split::Test) => vec![dir.join("test_batch.bin")],
            (_, Split::Train) => vec![
                dir.join("train-images-idx3-ubyte"),
                dir.join("train-labels-idx1-ubyte"),
            ],
            (_, Split::Test) => vec![
                dir.join("t10k-images-idx3-ubyte"),
                dir.join("t10k-labels-idx1-ubyte"),
            ],
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetId {
    type Err = TdcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "mnist" => Ok(DatasetId::Mnist),
            "fashion-mnist" | "fashionmnist" | "fashion" => Ok(DatasetId::FashionMnist),
            "cifar-10" | "cifar10" => Ok(DatasetId::Cifar10),
            other => Err(TdcaError::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images scaled to `[0, 1]` with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub id: DatasetId,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, id: DatasetId, split: Split) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(TdcaError::Dimension(format!(
                "{} images but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= CLASS_COUNT) {
            return Err(TdcaError::Format {
                path: PathBuf::new(),
                msg: format!("label {bad} outside 0..=9"),
            });
        }
        Ok(Self {
            inputs,
            labels,
            id,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn targets(&self) -> Array2<f64> {
        one_hot(&self.labels, CLASS_COUNT).expect("labels validated")
    }

    pub fn batch(&self) -> Result<Batch> {
        Batch::new(self.inputs.clone(), self.targets())
    }

    pub fn class_counts(&self) -> [usize; CLASS_COUNT] {
        let mut counts = [0; CLASS_COUNT];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            id: self.id,
            split: self.split,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| TdcaError::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
        .ok_or_else(|| TdcaError::Truncated {
            path: path.into(),
            expected: at + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], path: &Path, expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(TdcaError::Format {
            path: path.into(),
            msg: format!("bad magic: expected {expected:#010x}, found {found:#010x}"),
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], path: &Path, expected: usize) -> Result<()> {
    if bytes.len() != expected {
        return Err(TdcaError::Truncated {
            path: path.into(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Parses an IDX image file and its label file.
pub fn load_idx(images_path: &Path, labels_path: &Path, id: DatasetId, split: Split) -> Result<Dataset> {
    let images = read(images_path)?;
    check_magic(&images, images_path, IDX_IMAGES_MAGIC)?;
    let count = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let dim = rows * cols;
    check_len(&images, images_path, 16 + count * dim)?;

    let labels = read(labels_path)?;
    check_magic(&labels, labels_path, IDX_LABELS_MAGIC)?;
    let label_count = be_u32(&labels, 4, labels_path)? as usize;
    check_len(&labels, labels_path, 8 + label_count)?;
    if label_count != count {
        return Err(TdcaError::Format {
            path: labels_path.into(),
            msg: format!("{label_count} labels for {count} images"),
        });
    }
    let inputs = Array2::from_shape_vec(
        (count, dim),
        images[16..].iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .expect("length checked");
    let labels = labels[8..].iter().map(|&b| b as usize).collect();
    Dataset::new(inputs, labels, id, split).map_err(|e| relabel(e, labels_path))
}

fn relabel(e: TdcaError, path: &Path) -> TdcaError {
    match e {
        TdcaError::Format { msg, .. } => TdcaError::Format {
            path: path.into(),
            msg,
        },
        other => other,
    }
}

/// Concatenates CIFAR-10 binary batches (1 label byte + 3072 pixel bytes
/// per record).
pub fn load_cifar10(batch_paths: &[PathBuf], split: Split) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let bytes = read(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(TdcaError::Format {
                path: path.clone(),
                msg: format!("{} bytes is not a multiple of {CIFAR_RECORD}", bytes.len()),
            });
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            if record[0] > 9 {
                return Err(TdcaError::Format {
                    path: path.clone(),
                    msg: format!("label byte {} exceeds 9", record[0]),
                });
            }
            labels.push(record[0] as usize);
            pixels.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    let inputs = Array2::from_shape_vec((labels.len(), CIFAR_RECORD - 1), pixels)
        .expect("whole records");
    Dataset::new(inputs, labels, DatasetId::Cifar10, split)
}

/// Loads `id`/`split` from the standard layout under `root`.
pub fn load_dataset(root: &Path, id: DatasetId, split: Split) -> Result<Dataset> {
    let files: Vec<PathBuf> = id.files(split).into_iter().map(|f| root.join(f)).collect();
    if let Some(missing) = files.iter().find(|f| !f.exists()) {
        return Err(TdcaError::Missing(format!(
            "{} (run scripts/fetch_data.sh or pass --data-dir)",
            missing.display()
        )));
    }
    match id {
        DatasetId::Cifar10 => load_cifar10(&files, split),
        _ => load_idx(&files[0], &files[1], id, split),
    }
}

pub fn dataset_available(root: &Path, id: DatasetId) -> bool {
    [Split::Train, Split::Test]
        .iter()
        .flat_map(|&s| id.files(s))
        .all(|f| root.join(f).exists())
}

/// Class-stratified sample of `n` rows: `n / 10` per class, the remainder
/// going one each to classes picked by the seed. Rows come back in their
/// original order.
pub fn subsample(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > dataset.len() {
        return Err(TdcaError::Config(format!(
            "cannot draw {n} examples from {}",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASS_COUNT];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let mut order: Vec<usize> = (0..CLASS_COUNT).collect();
    order.shuffle(&mut rng);

    let mut quota = vec![n / CLASS_COUNT; CLASS_COUNT];
    for &c in order.iter().take(n % CLASS_COUNT) {
        quota[c] += 1;
    }
    // Classes too small to fill their quota hand the rest to others.
    let mut deficit = 0;
    for c in 0..CLASS_COUNT {
        if quota[c] > by_class[c].len() {
            deficit += quota[c] - by_class[c].len();
            quota[c] = by_class[c].len();
        }
    }
    while deficit > 0 {
        let before = deficit;
        for &c in &order {
            if deficit > 0 && quota[c] < by_class[c].len() {
                quota[c] += 1;
                deficit -= 1;
            }
        }
        debug_assert!(deficit < before, "n <= len guarantees progress");
    }
    let mut chosen: Vec<usize> = by_class
        .iter()
        .zip(&quota)
        .flat_map(|(members, &q)| members[..q].iter().copied())
        .collect();
    chosen.sort_unstable();
    Ok(dataset.select(&chosen))
}

/// Writes an IDX image file (magic 0x803, count, rows, cols, bytes).
pub fn write_idx_images(path: &Path, images: &[u8], count: usize, rows: usize, cols: usize) -> Result<()> {
    assert_eq!(images.len(), count * rows * cols, "image byte count");
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(images);
    write_file(path, &out)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_file(path, &out)
}

/// Writes CIFAR-10 style records; `pixels` holds 3072 bytes per label.
pub fn write_cifar_batch(path: &Path, labels: &[u8], pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), labels.len() * (CIFAR_RECORD - 1), "pixel byte count");
    let mut out = Vec::with_capacity(labels.len() * CIFAR_RECORD);
    for (l, px) in labels.iter().zip(pixels.chunks_exact(CIFAR_RECORD - 1)) {
        out.push(*l);
        out.extend_from_slice(px);
    }
    write_file(path, &out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| TdcaError::io(path, e))?;
    f.write_all(bytes).map_err(|e| TdcaError::io(path, e))
}
