//! Dense row-major tensors plus the probability-vector types derived from
//! classifier outputs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense numeric array with row-major layout. Carries images, gradients,
/// perturbations, and model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    /// Build from a flat buffer; the buffer length must equal the product of
    /// the extents.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "Tensor::from_vec",
                expected: vec![expected],
                got: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterpret the buffer under a new shape of equal volume.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }

    pub fn l2_norm(&self) -> T {
        self.data.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a * *b)
            .sum()
    }

    /// `self += factor * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Self, factor: T) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * *b;
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context: "Tensor::sub",
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a - *b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scaled(&self, factor: T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| *v * factor).collect(),
        }
    }

    /// Clamp every element into `[0, 1]`.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            if *v < T::zero() {
                *v = T::zero();
            } else if *v > T::one() {
                *v = T::one();
            }
        }
    }

    /// Convert elementwise into another working precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().expect("scalar to f64")).expect("f64 to scalar"))
                .collect(),
        }
    }
}

/// Pre-softmax class activations, one per class.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits<T> {
    values: Tensor<T>,
}

impl<T: Scalar> Logits<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.shape().len() != 1 {
            return Err(Error::ShapeMismatch {
                context: "Logits::new",
                expected: vec![1],
                got: vec![values.shape().len()],
            });
        }
        Ok(Logits { values })
    }

    pub fn class_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        self.values.data()
    }

    pub fn get(&self, class: usize) -> Result<T> {
        self.values
            .data()
            .get(class)
            .copied()
            .ok_or(Error::ClassIndex {
                index: class,
                class_count: self.class_count(),
            })
    }

    /// Index of the largest activation; ties go to the lowest class index.
    pub fn argmax(&self) -> usize {
        argmax(self.values.data())
    }
}

/// First index of the maximum value. Ties break to the lowest index because
/// the scan only replaces on a strictly greater value.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax output: entries in `[0, 1]` summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector<T> {
    probabilities: Tensor<T>,
}

impl<T: Scalar> ProbVector<T> {
    pub fn probabilities(&self) -> &[T] {
        self.probabilities.data()
    }

    pub fn get(&self, class: usize) -> Result<T> {
        self.probabilities
            .data()
            .get(class)
            .copied()
            .ok_or(Error::ClassIndex {
                index: class,
                class_count: self.probabilities.len(),
            })
    }
}

/// Numerically stable (max-subtracted) softmax.
pub fn softmax<T: Scalar>(logits: &Logits<T>) -> ProbVector<T> {
    let values = softmax_slice(logits.values(), T::one());
    ProbVector {
        probabilities: Tensor {
            shape: vec![values.len()],
            data: values,
        },
    }
}

/// Max-subtracted softmax of `values / temperature`.
pub fn softmax_slice<T: Scalar>(values: &[T], temperature: T) -> Vec<T> {
    debug_assert!(temperature > T::zero());
    let mut max = values[0] / temperature;
    for v in &values[1..] {
        let scaled = *v / temperature;
        if scaled > max {
            max = scaled;
        }
    }
    let mut out: Vec<T> = values
        .iter()
        .map(|v| (*v / temperature - max).exp())
        .collect();
    let total: T = out.iter().copied().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Softmax probability of a single class, accumulated at the working
/// precision and returned as `f64`.
pub fn softmax_probability<T: Scalar>(logits: &Logits<T>, class: usize) -> Result<f64> {
    let probs = softmax(logits);
    let p = probs.get(class)?;
    Ok(p.to_f64().unwrap_or(f64::NAN))
}
