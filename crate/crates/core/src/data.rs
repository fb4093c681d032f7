//! Datasets: the synthetic noisy sine task and MNIST in IDX format.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::Batch;
use crate::rng::Rng;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const MNIST_CLASSES: usize = 10;

/// Canonical file names looked up inside an MNIST directory.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub kind: TaskKind,
    pub seed: u64,
    samples: Batch,
}

impl Dataset {
    pub fn new(name: impl Into<String>, kind: TaskKind, seed: u64, samples: Batch) -> Result<Self> {
        let targets = samples.targets();
        match kind {
            TaskKind::Regression => {
                if !targets.is_finite() {
                    return Err(Error::NonFinite("regression targets"));
                }
            }
            TaskKind::Classification => {
                for i in 0..targets.rows() {
                    let row = targets.row(i);
                    let ones = row.iter().filter(|&&v| v == 1.0).count();
                    let zeros = row.iter().filter(|&&v| v == 0.0).count();
                    if ones != 1 || zeros != row.len() - 1 {
                        return Err(Error::InvalidRange(format!("target row {i} is not one-hot")));
                    }
                }
            }
        }
        Ok(Self {
            name: name.into(),
            kind,
            seed,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &Batch {
        &self.samples
    }

    pub fn inputs(&self) -> &Matrix {
        self.samples.inputs()
    }

    pub fn targets(&self) -> &Matrix {
        self.samples.targets()
    }

    /// Class index of every sample; `None` for regression data.
    pub fn labels(&self) -> Option<Vec<usize>> {
        if self.kind != TaskKind::Classification {
            return None;
        }
        let t = self.targets();
        Some(
            (0..t.rows())
                .map(|i| t.row(i).iter().position(|&v| v == 1.0).unwrap_or(0))
                .collect(),
        )
    }

    fn with_rows(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            name: self.name.clone(),
            kind: self.kind,
            seed: self.seed,
            samples: self.samples.select(rows)?,
        })
    }
}

/// `n` points with `x ~ U[lo, hi)` and `y = sin(x) + σ·ε`. Each sample draws
/// its `x` and then its `ε` from one seeded stream.
pub fn gen_sine(n: usize, lo: f64, hi: f64, sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidRange("sine dataset needs at least one sample".into()));
    }
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidRange(format!("x range [{lo}, {hi}]")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidRange(format!("noise sigma {sigma}")));
    }
    let mut rng = Rng::new(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.uniform(lo, hi);
        let eps = rng.normal();
        xs.push(x);
        ys.push(x.sin() + sigma * eps);
    }
    let samples = Batch::new(Matrix::new(n, 1, xs)?, Matrix::new(n, 1, ys)?)?;
    Dataset::new("sine", TaskKind::Regression, seed, samples)
}

/// Writes a single-input regression dataset as `x,y` CSV with 17 significant
/// digits, enough to round-trip every value.
pub fn write_sine_csv(ds: &Dataset, path: &Path) -> Result<()> {
    if ds.inputs().cols() != 1 || ds.targets().cols() != 1 {
        return Err(Error::ShapeMismatch("sine CSV needs one input and one target".into()));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "x,y")?;
    for i in 0..ds.len() {
        writeln!(w, "{:.16e},{:.16e}", ds.inputs()[(i, 0)], ds.targets()[(i, 0)])?;
    }
    w.flush()?;
    Ok(())
}

/// Raw IDX image file contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count · rows · cols` bytes, image-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedFile(path.to_path_buf()))
}

fn check_magic(bytes: &[u8], path: &Path, expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = fs::read(path)?;
    check_magic(&bytes, path, IMAGE_MAGIC)?;
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let len = count * rows * cols;
    let pixels = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::TruncatedFile(path.to_path_buf()))?
        .to_vec();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    check_magic(&bytes, path, LABEL_MAGIC)?;
    let count = be_u32(&bytes, 4, path)? as usize;
    Ok(bytes
        .get(8..8 + count)
        .ok_or_else(|| Error::TruncatedFile(path.to_path_buf()))?
        .to_vec())
}

pub fn write_idx_images(path: &Path, images: &IdxImages) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in [IMAGE_MAGIC, images.count() as u32, images.rows as u32, images.cols as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    w.write_all(&images.pixels)?;
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

/// Loads an IDX image/label pair: pixels scaled by 1/255, labels one-hot over
/// ten classes.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    let n = images.count();
    if n != labels.len() {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::TruncatedFile(images_path.to_path_buf()));
    }
    let d = images.rows * images.cols;
    let inputs: Vec<f64> = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let mut targets = vec![0.0; n * MNIST_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= MNIST_CLASSES {
            return Err(Error::InvalidRange(format!("label {l} at index {i}")));
        }
        targets[i * MNIST_CLASSES + l] = 1.0;
    }
    let samples = Batch::new(Matrix::new(n, d, inputs)?, Matrix::new(n, MNIST_CLASSES, targets)?)?;
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mnist".into());
    Dataset::new(name, TaskKind::Classification, 0, samples)
}

/// Loads the train and test splits from a directory holding [`MNIST_FILES`].
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let p = |i: usize| dir.join(MNIST_FILES[i]);
    Ok((load_mnist_idx(&p(0), &p(1))?, load_mnist_idx(&p(2), &p(3))?))
}

/// `n` samples chosen by seed. Classification subsets draw classes round-robin
/// so per-class counts differ by at most one while every class has samples
/// left; the result is then shuffled.
pub fn subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > ds.len() {
        return Err(Error::SubsetTooLarge {
            requested: n,
            available: ds.len(),
        });
    }
    let mut rng = Rng::new(seed);
    let mut rows = match ds.labels() {
        None => {
            let mut all: Vec<usize> = (0..ds.len()).collect();
            rng.shuffle(&mut all);
            all.truncate(n);
            all
        }
        Some(labels) => {
            let classes = ds.targets().cols();
            let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for (i, &l) in labels.iter().enumerate() {
                pools[l].push(i);
            }
            for pool in &mut pools {
                rng.shuffle(pool);
                pool.reverse();
            }
            let mut picked = Vec::with_capacity(n);
            while picked.len() < n {
                for pool in &mut pools {
                    if picked.len() == n {
                        break;
                    }
                    if let Some(i) = pool.pop() {
                        picked.push(i);
                    }
                }
            }
            picked
        }
    };
    rng.shuffle(&mut rows);
    let mut out = ds.with_rows(&rows)?;
    out.seed = seed;
    Ok(out)
}

/// Splits the dataset into consecutive batches of a seeded permutation; the
/// last batch may be short.
pub fn batches(ds: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidRange("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    Rng::new(epoch_seed).shuffle(&mut order);
    order.chunks(batch_size).map(|rows| ds.samples().select(rows)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_classification(n: usize, classes: usize) -> Dataset {
        let inputs = Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let mut targets = Matrix::zeros(n, classes);
        for i in 0..n {
            targets[(i, i % classes)] = 1.0;
        }
        Dataset::new("tiny", TaskKind::Classification, 0, Batch::new(inputs, targets).unwrap()).unwrap()
    }

    #[test]
    fn noiseless_sine_is_exact() {
        let ds = gen_sine(50, -1.0, 1.0, 0.0, 4).unwrap();
        for i in 0..50 {
            assert_eq!(ds.targets()[(i, 0)], ds.inputs()[(i, 0)].sin());
        }
    }

    #[test]
    fn sine_is_deterministic_and_in_range() {
        let a = gen_sine(100, -3.0, 2.0, 0.1, 8).unwrap();
        let b = gen_sine(100, -3.0, 2.0, 0.1, 8).unwrap();
        assert_eq!(a, b);
        assert!(a.inputs().data().iter().all(|x| (-3.0..2.0).contains(x)));
        assert_ne!(a, gen_sine(100, -3.0, 2.0, 0.1, 9).unwrap());
    }

    #[test]
    fn sine_rejects_bad_arguments() {
        assert!(matches!(gen_sine(10, 1.0, 1.0, 0.1, 0), Err(Error::InvalidRange(_))));
        assert!(matches!(gen_sine(10, 0.0, 1.0, -0.1, 0), Err(Error::InvalidRange(_))));
        assert!(matches!(gen_sine(0, 0.0, 1.0, 0.1, 0), Err(Error::InvalidRange(_))));
    }

    #[test]
    fn regression_subset_is_seeded_prefix() {
        let ds = gen_sine(30, 0.0, 1.0, 0.0, 1).unwrap();
        let s = subset(&ds, 30, 2).unwrap();
        let mut a: Vec<f64> = s.inputs().data().to_vec();
        let mut b: Vec<f64> = ds.inputs().data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        assert_eq!(subset(&ds, 10, 2).unwrap(), subset(&ds, 10, 2).unwrap());
        assert!(matches!(subset(&ds, 31, 2), Err(Error::SubsetTooLarge { .. })));
    }

    #[test]
    fn stratified_subset_balances_classes() {
        let ds = tiny_classification(1000, 10);
        for n in [100, 37, 1000] {
            let s = subset(&ds, n, 3).unwrap();
            let mut counts = [0usize; 10];
            for l in s.labels().unwrap() {
                counts[l] += 1;
            }
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{counts:?}");
            assert_eq!(counts.iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn batches_partition_the_dataset() {
        let ds = tiny_classification(23, 2);
        let bs = batches(&ds, 5, 7).unwrap();
        assert_eq!(bs.iter().map(Batch::len).collect::<Vec<_>>(), vec![5, 5, 5, 5, 3]);
        let mut seen: Vec<usize> = bs
            .iter()
            .flat_map(|b| b.inputs().data().iter().map(|&x| x as usize))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        assert_eq!(bs, batches(&ds, 5, 7).unwrap());
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images = IdxImages {
            rows: 2,
            cols: 3,
            pixels: vec![0, 1, 2, 3, 4, 255, 128, 7, 9, 10, 11, 12],
        };
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        write_idx_images(&ip, &images).unwrap();
        write_idx_labels(&lp, &[3, 9]).unwrap();
        assert_eq!(read_idx_images(&ip).unwrap(), images);
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.inputs()[(0, 5)], 1.0);
        assert_eq!(ds.inputs()[(1, 0)], 128.0 / 255.0);
        assert_eq!(ds.labels().unwrap(), vec![3, 9]);
        for i in 0..2 {
            assert_eq!(ds.targets().row(i).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn idx_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        let images = IdxImages {
            rows: 1,
            cols: 2,
            pixels: vec![1, 2, 3, 4],
        };
        write_idx_images(&ip, &images).unwrap();
        write_idx_labels(&lp, &[1, 2, 3]).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(Error::CountMismatch { images: 2, labels: 3 })));
        assert!(matches!(load_mnist_idx(&lp, &ip), Err(Error::BadMagic { found: 2049, .. })));
        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_idx_images(&ip), Err(Error::TruncatedFile(_))));
        fs::write(&ip, [0u8, 0]).unwrap();
        assert!(matches!(read_idx_images(&ip), Err(Error::TruncatedFile(_))));
    }

    #[test]
    fn sine_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.csv");
        let ds = gen_sine(20, -6.0, 6.0, 0.1, 42).unwrap();
        write_sine_csv(&ds, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y"));
        for (i, line) in lines.enumerate() {
            let (x, y) = line.split_once(',').unwrap();
            assert_eq!(x.parse::<f64>().unwrap(), ds.inputs()[(i, 0)]);
            assert_eq!(y.parse::<f64>().unwrap(), ds.targets()[(i, 0)]);
        }
    }
}
