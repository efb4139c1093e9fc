//! Dataset container and loaders: MNIST IDX, CIFAR-10 binary, and the
//! synthetic Gaussian-blob generator used by the oracle tests.
//!
//! Image loaders produce pixels in `[0, 1]`; attacks operate in this raw
//! space and nothing here applies mean/std normalization.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::rng::{salt, stream};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 3073;

/// Labeled image collection. Images are `[n, channels, height, width]`.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    name: String,
    images: Tensor<T>,
    labels: Vec<usize>,
    class_count: usize,
}

impl<T: Scalar> Dataset<T> {
    /// Build a dataset, checking the label range and the image/label count
    /// agreement. Pixel-range checking is a separate step because the
    /// synthetic blob substrate is deliberately unbounded.
    pub fn new(
        name: impl Into<String>,
        images: Tensor<T>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::ShapeMismatch {
                context: "Dataset images",
                expected: vec![4],
                got: images.shape().to_vec(),
            });
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::Data("class count must be positive".into()));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= class_count) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            name: name.into(),
            images,
            labels,
            class_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    /// Copy of sample `index` as a `[channels, height, width]` tensor.
    pub fn image(&self, index: usize) -> Tensor<T> {
        let shape = self.sample_shape();
        let volume: usize = shape.iter().product();
        let slice = &self.images.data()[index * volume..(index + 1) * volume];
        Tensor::from_vec(&shape, slice.to_vec()).expect("sample volume matches")
    }

    /// New dataset holding the given samples, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let shape = self.sample_shape();
        let volume: usize = shape.iter().product();
        let mut data = Vec::with_capacity(indices.len() * volume);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!(
                    "subset index {i} out of range for {} samples",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.images.data()[i * volume..(i + 1) * volume]);
            labels.push(self.labels[i]);
        }
        let images = Tensor::from_vec(&[indices.len(), shape[0], shape[1], shape[2]], data)?;
        Dataset::new(self.name.clone(), images, labels, self.class_count)
    }

    /// Every pixel must lie in `[0, 1]`; loaders enforce this on load.
    pub fn check_pixel_range(&self) -> Result<()> {
        let ok = self
            .images
            .data()
            .iter()
            .all(|v| *v >= T::zero() && *v <= T::one());
        if ok {
            Ok(())
        } else {
            Err(Error::Data("pixel outside [0, 1]".into()))
        }
    }
}

struct BigEndianReader<'a> {
    buf: &'a [u8],
    offset: usize,
    what: &'static str,
}

impl<'a> BigEndianReader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        BigEndianReader { buf, offset: 0, what }
    }

    fn read_u32(&mut self) -> Result<u32> {
        let bytes = self.take(4)?;
        Ok(u32::from_be_bytes(bytes.try_into().unwrap()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.buf.len() as u64,
                message: format!(
                    "{} truncated: expected {} bytes at offset {}, file has {}",
                    self.what,
                    n,
                    self.offset,
                    self.buf.len()
                ),
            });
        }
        let slice = &self.buf[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }
}

/// Parse the big-endian IDX pair of image and label files. Pixels are
/// scaled from `[0, 255]` bytes into `[0, 1]`.
pub fn load_mnist_idx<T: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset<T>> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;
    parse_mnist_idx(&image_bytes, &label_bytes)
}

/// Parse IDX content already in memory; see [`load_mnist_idx`].
pub fn parse_mnist_idx<T: Scalar>(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset<T>> {
    let mut ir = BigEndianReader::new(image_bytes, "IDX image file");
    let magic = ir.read_u32()?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        });
    }
    let n = ir.read_u32()? as usize;
    let rows = ir.read_u32()? as usize;
    let cols = ir.read_u32()? as usize;
    let payload = ir.take(n * rows * cols)?;
    if ir.offset != image_bytes.len() {
        return Err(Error::Format {
            offset: ir.offset as u64,
            message: format!(
                "image payload of {} bytes does not match header {n}x{rows}x{cols}",
                image_bytes.len() - 16
            ),
        });
    }

    let mut lr = BigEndianReader::new(label_bytes, "IDX label file");
    let lmagic = lr.read_u32()?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("label magic {lmagic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"),
        });
    }
    let ln = lr.read_u32()? as usize;
    if ln != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("{n} images but {ln} labels"),
        });
    }
    let label_payload = lr.take(ln)?;
    if lr.offset != label_bytes.len() {
        return Err(Error::Format {
            offset: lr.offset as u64,
            message: "label file has trailing bytes".into(),
        });
    }

    let scale = lit::<T>(1.0 / 255.0);
    let data: Vec<T> = payload
        .iter()
        .map(|b| lit::<T>(f64::from(*b)) * scale)
        .collect();
    let images = Tensor::from_vec(&[n, 1, rows, cols], data)?;
    let labels: Vec<usize> = label_payload.iter().map(|b| *b as usize).collect();
    let ds = Dataset::new("mnist", images, labels, 10)?;
    ds.check_pixel_range()?;
    Ok(ds)
}

/// Re-encode a loaded dataset back into IDX bytes. Loading then encoding
/// reproduces the input files bit for bit.
pub fn encode_mnist_idx<T: Scalar>(ds: &Dataset<T>) -> Result<(Vec<u8>, Vec<u8>)> {
    let [c, rows, cols] = ds.sample_shape();
    if c != 1 {
        return Err(Error::Data(format!(
            "IDX encoding expects single-channel images, got {c} channels"
        )));
    }
    let n = ds.len();
    let mut images = Vec::with_capacity(16 + n * rows * cols);
    images.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    for v in ds.images().data() {
        let byte = (v.to_f64().unwrap_or(0.0) * 255.0).round();
        images.push(byte.clamp(0.0, 255.0) as u8);
    }

    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    labels.extend(ds.labels().iter().map(|l| *l as u8));
    Ok((images, labels))
}

/// Load one or more CIFAR-10 binary batches. Each 3073-byte record is a
/// label byte followed by channel-major R, G, B planes of a 32x32 image.
pub fn load_cifar10_bin<T: Scalar>(batch_paths: &[impl AsRef<Path>]) -> Result<Dataset<T>> {
    if batch_paths.is_empty() {
        return Err(Error::Data("no CIFAR-10 batch files given".into()));
    }
    let mut data: Vec<T> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let scale = lit::<T>(1.0 / 255.0);
    for path in batch_paths {
        let bytes = fs::read(path.as_ref())?;
        let remainder = bytes.len() % CIFAR_RECORD_BYTES;
        if remainder != 0 {
            return Err(Error::Format {
                offset: (bytes.len() - remainder) as u64,
                message: format!(
                    "file length {} is not a multiple of {CIFAR_RECORD_BYTES}: remainder {remainder}",
                    bytes.len()
                ),
            });
        }
        for (r, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
            let label = record[0];
            if label > 9 {
                return Err(Error::Data(format!(
                    "label byte {label} > 9 in record {r} of {}",
                    path.as_ref().display()
                )));
            }
            labels.push(label as usize);
            data.extend(record[1..].iter().map(|b| lit::<T>(f64::from(*b)) * scale));
        }
    }
    let n = labels.len();
    let images = Tensor::from_vec(&[n, 3, 32, 32], data)?;
    let ds = Dataset::new("cifar10", images, labels, 10)?;
    ds.check_pixel_range()?;
    Ok(ds)
}

/// Gaussian blobs at distinct centers plus the exact affine classifier whose
/// decision boundaries bisect every center pair. The classifier scores
/// `f_k(x) = c_k . x - |c_k|^2 / 2`, the affine form of nearest-center
/// classification.
///
/// Classes `2j` and `2j + 1` sit at `-(s/2) e_j` and `+(s/2) e_j`; with two
/// classes that is the `+/- s/2` pair on axis 0. Points are drawn from unit
/// Gaussians around the centers, deterministically per seed.
pub fn synthetic_blobs<T: Scalar>(
    seed: u64,
    class_count: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
) -> (Dataset<T>, Model<T>) {
    assert!(class_count >= 2, "need at least two classes");
    assert!(dim >= 2, "need at least two dimensions");
    assert!(separation > 0.0, "separation must be positive");
    assert!(
        class_count <= 2 * dim,
        "axis-pair layout supports at most 2 * dim classes"
    );

    let mut centers = vec![vec![0.0f64; dim]; class_count];
    for (k, center) in centers.iter_mut().enumerate() {
        let axis = k / 2;
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        center[axis] = sign * separation / 2.0;
    }

    let mut rng = stream(seed, salt::BLOBS);
    let n = class_count * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for c in center {
                let noise: f64 = rng.sample(StandardNormal);
                data.push(lit::<T>(c + noise));
            }
            labels.push(k);
        }
    }
    let images = Tensor::from_vec(&[n, 1, 1, dim], data).expect("blob volume");
    let dataset = Dataset::new("blobs", images, labels, class_count).expect("valid blob dataset");

    let weights = Tensor::from_fn(&[class_count, dim], |i| {
        lit::<T>(centers[i / dim][i % dim])
    });
    let biases = Tensor::from_fn(&[class_count], |k| {
        let sq: f64 = centers[k].iter().map(|c| c * c).sum();
        lit::<T>(-sq / 2.0)
    });
    let oracle = Model::affine(weights, biases).expect("oracle classifier");
    (dataset, oracle)
}
