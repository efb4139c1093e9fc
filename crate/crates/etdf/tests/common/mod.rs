//! Shared helpers for the integration suites.

use std::path::PathBuf;

use etdf::data::{load_mnist_idx, Dataset};
use etdf::tensor::Tensor;

/// Locate the MNIST IDX files: `ETDF_MNIST_DIR`, then `data/mnist` at the
/// workspace root. Returns `None` when the files are not available, in
/// which case data-dependent tests skip with a message.
pub fn mnist_dir() -> Option<PathBuf> {
    let mut candidates: Vec<PathBuf> = Vec::new();
    if let Ok(dir) = std::env::var("ETDF_MNIST_DIR") {
        candidates.push(PathBuf::from(dir));
    }
    candidates.push(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    candidates.push(PathBuf::from("data/mnist"));
    candidates
        .into_iter()
        .find(|dir| dir.join("train-images-idx3-ubyte").exists())
}

pub fn load_mnist_train(dir: &std::path::Path) -> Dataset<f32> {
    load_mnist_idx(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )
    .expect("parse MNIST train pair")
}

pub fn load_mnist_test(dir: &std::path::Path) -> Dataset<f32> {
    load_mnist_idx(
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )
    .expect("parse MNIST test pair")
}

/// Brute-force sliding-window SSIM with explicit 2-D Gaussian weights and
/// centered variance sums; the independent route against the module's
/// separable uncentered implementation.
pub fn reference_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (channels, height, width) = match a.shape() {
        [h, w] => (1, *h, *w),
        [c, h, w] => (*c, *h, *w),
        other => panic!("unexpected shape {other:?}"),
    };
    let plane = height * width;
    let mut sum = 0.0;
    for c in 0..channels {
        sum += reference_channel_ssim(
            &a.data()[c * plane..(c + 1) * plane],
            &b.data()[c * plane..(c + 1) * plane],
            height,
            width,
        );
    }
    sum / channels as f64
}

fn gaussian_2d(window: usize, sigma: f64) -> Vec<Vec<f64>> {
    let center = (window as f64 - 1.0) / 2.0;
    let mut weights = vec![vec![0.0; window]; window];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let dy = i as f64 - center;
            let dx = j as f64 - center;
            *w = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            total += *w;
        }
    }
    for row in &mut weights {
        for w in row {
            *w /= total;
        }
    }
    weights
}

fn reference_channel_ssim(a: &[f64], b: &[f64], height: usize, width: usize) -> f64 {
    let window = 11usize.min(height).min(width);
    let weights = gaussian_2d(window, 1.5);
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);

    let mut total = 0.0;
    let mut positions = 0usize;
    for oy in 0..=(height - window) {
        for ox in 0..=(width - window) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for i in 0..window {
                for j in 0..window {
                    let idx = (oy + i) * width + (ox + j);
                    mu_a += weights[i][j] * a[idx];
                    mu_b += weights[i][j] * b[idx];
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for i in 0..window {
                for j in 0..window {
                    let idx = (oy + i) * width + (ox + j);
                    let da = a[idx] - mu_a;
                    let db = b[idx] - mu_b;
                    var_a += weights[i][j] * da * da;
                    var_b += weights[i][j] * db * db;
                    cov += weights[i][j] * da * db;
                }
            }
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            positions += 1;
        }
    }
    total / positions as f64
}
