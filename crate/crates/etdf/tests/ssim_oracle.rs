//! Brute-force sliding-window SSIM reference. The module computes windowed
//! moments by separable filtering with uncentered variances; this reference
//! builds the full 2-D Gaussian window per position and uses centered
//! variance sums, so agreement is a genuine two-route check.

use etdf::metrics::ssim;
use etdf::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

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

fn reference_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
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

fn random_pair(shape: &[usize], rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>) {
    let a = Tensor::from_fn(shape, |_| rng.gen::<f64>());
    // Mix of independent noise and perturbed copies, like attack outputs.
    let perturb: bool = rng.gen();
    let b = if perturb {
        Tensor::from_fn(shape, |i| {
            (a.data()[i] + 0.05 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0)
        })
    } else {
        Tensor::from_fn(shape, |_| rng.gen::<f64>())
    };
    (a, b)
}

#[test]
fn module_ssim_agrees_with_the_brute_force_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let shapes: [&[usize]; 4] = [&[1, 28, 28], &[3, 16, 16], &[1, 11, 17], &[2, 12, 20]];
    for trial in 0..16 {
        let shape = shapes[trial % shapes.len()];
        let (a, b) = random_pair(shape, &mut rng);
        let got = ssim(&a, &b).unwrap().value;
        let expected = reference_ssim(&a, &b);
        assert!(
            (got - expected).abs() <= 1e-6,
            "trial {trial}: module {got} vs reference {expected}"
        );
    }
}

#[test]
fn shrunken_windows_also_agree_with_the_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(809);
    for shape in [&[1usize, 7, 15] as &[usize], &[1, 5, 5], &[2, 9, 9]] {
        let (a, b) = random_pair(shape, &mut rng);
        let out = ssim(&a, &b).unwrap();
        assert!(out.shrunk);
        let expected = reference_ssim(&a, &b);
        assert!((out.value - expected).abs() <= 1e-6);
    }
}

#[test]
fn identity_ssim_is_exactly_one_even_for_noisy_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(810);
    for _ in 0..5 {
        let x = Tensor::from_fn(&[1, 20, 20], |_| rng.gen::<f64>());
        let out = ssim(&x, &x).unwrap();
        assert!((out.value - 1.0).abs() < 1e-9);
    }
}
