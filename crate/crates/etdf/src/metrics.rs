//! Evaluation metrics: target-class confidence, perturbation percentage,
//! SSIM, and their aggregation into summary rows.
//!
//! Metric arithmetic always accumulates in `f64`, whatever precision the
//! tensors carry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::scalar::Scalar;
use crate::tensor::{softmax_probability, Tensor};

/// Softmax probability of class `t` on input `x`.
pub fn confidence<T: Scalar>(model: &Model<T>, x: &Tensor<T>, t: usize) -> Result<f64> {
    let logits = model.forward(x)?;
    softmax_probability(&logits, t)
}

/// L2 perturbation as a percentage of the maximum L2 distance between two
/// points of the `[0, 1]^D` pixel hypercube: `100 * |perturbed - original|_2
/// / sqrt(D)`.
pub fn perturbation_pct<T: Scalar>(original: &Tensor<T>, perturbed: &Tensor<T>) -> Result<f64> {
    if original.shape() != perturbed.shape() {
        return Err(Error::ShapeMismatch {
            context: "perturbation_pct",
            expected: original.shape().to_vec(),
            got: perturbed.shape().to_vec(),
        });
    }
    let mut sum = 0.0f64;
    for (a, b) in original.data().iter().zip(perturbed.data()) {
        let d = b.to_f64().unwrap_or(f64::NAN) - a.to_f64().unwrap_or(f64::NAN);
        sum += d * d;
    }
    let dim = original.len() as f64;
    Ok(100.0 * sum.sqrt() / dim.sqrt())
}

/// SSIM stability constants for dynamic range L = 1.
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimOutcome {
    pub value: f64,
    /// Window edge actually used; 11 unless the image is smaller.
    pub window: usize,
    /// Set when the window had to shrink to fit the image.
    pub shrunk: bool,
}

/// Mean local SSIM over a Gaussian-weighted sliding window (11x11, sigma
/// 1.5, valid positions only). Multi-channel images average the per-channel
/// SSIM values. Images smaller than the window shrink it to the shortest
/// edge and flag the result.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<SsimOutcome> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: "ssim",
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    let (channels, height, width) = match a.shape() {
        [h, w] => (1, *h, *w),
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::ShapeMismatch {
                context: "ssim expects [h, w] or [c, h, w]",
                expected: vec![3],
                got: other.to_vec(),
            })
        }
    };
    if height == 0 || width == 0 {
        return Err(Error::Data("ssim on an empty image".into()));
    }
    let window = SSIM_WINDOW.min(height).min(width);
    let weights = gaussian_window(window, SSIM_SIGMA);

    let plane = height * width;
    let mut channel_sum = 0.0f64;
    for c in 0..channels {
        let pa: Vec<f64> = a.data()[c * plane..(c + 1) * plane]
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect();
        let pb: Vec<f64> = b.data()[c * plane..(c + 1) * plane]
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect();
        channel_sum += channel_ssim(&pa, &pb, height, width, &weights);
    }
    Ok(SsimOutcome {
        value: channel_sum / channels as f64,
        window,
        shrunk: window < SSIM_WINDOW,
    })
}

/// Normalized 1-D Gaussian taps centered on `(n - 1) / 2`.
fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let center = (n as f64 - 1.0) / 2.0;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    taps
}

/// Separable valid-mode filtering: horizontal pass, then vertical.
fn filter_valid(img: &[f64], height: usize, width: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let wo = width - n + 1;
    let ho = height - n + 1;
    let mut horizontal = vec![0.0f64; height * wo];
    for y in 0..height {
        let row = &img[y * width..(y + 1) * width];
        let out = &mut horizontal[y * wo..(y + 1) * wo];
        for (k, t) in taps.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&row[k..k + wo]) {
                *o += t * v;
            }
        }
    }
    let mut out = vec![0.0f64; ho * wo];
    for (k, t) in taps.iter().enumerate() {
        for oy in 0..ho {
            let src = &horizontal[(oy + k) * wo..(oy + k + 1) * wo];
            let dst = &mut out[oy * wo..(oy + 1) * wo];
            for (o, v) in dst.iter_mut().zip(src) {
                *o += t * v;
            }
        }
    }
    out
}

fn channel_ssim(a: &[f64], b: &[f64], height: usize, width: usize, taps: &[f64]) -> f64 {
    let sq_a: Vec<f64> = a.iter().map(|v| v * v).collect();
    let sq_b: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(a, height, width, taps);
    let mu_b = filter_valid(b, height, width, taps);
    let m_aa = filter_valid(&sq_a, height, width, taps);
    let m_bb = filter_valid(&sq_b, height, width, taps);
    let m_ab = filter_valid(&ab, height, width, taps);

    let mut sum = 0.0f64;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = m_aa[i] - ma * ma;
        let var_b = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let numerator = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let denominator = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
        sum += numerator / denominator;
    }
    sum / mu_a.len() as f64
}

/// One attacked sample, as recorded by a campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Index of the image in the source dataset.
    pub sample_index: usize,
    pub original_label: usize,
    pub target_label: Option<usize>,
    pub final_label: usize,
    pub confidence: f64,
    pub perturbation_pct: f64,
    pub ssim: f64,
    pub iterations: usize,
    pub elapsed_s: f64,
    pub success: bool,
    /// Numeric abort, when the attack could not finish cleanly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Identifiers attached to a summary row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowKey {
    pub model_name: String,
    pub dataset_name: String,
    pub attack_name: String,
    /// Confidence gate in effect; `None` when the gate is disabled or the
    /// attack has no gate.
    pub c_min: Option<f64>,
}

/// Which samples contribute to the metric means. `success_rate` is always
/// computed over all attempted samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanPopulation {
    AllSamples,
    SuccessesOnly,
}

/// Mean metrics in the shape of one results-table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model_name: String,
    pub dataset_name: String,
    pub attack_name: String,
    pub c_min: Option<f64>,
    pub confidence_mean: f64,
    pub perturbation_pct_mean: f64,
    pub ssim_mean: f64,
    pub iterations_mean: f64,
    pub success_rate: f64,
    pub time_mean_s: f64,
    pub n_samples: usize,
}

/// Aggregate per-sample records into a summary row. Means run over the
/// chosen population in a single deterministic 64-bit pass; an empty
/// success population yields zero means.
pub fn aggregate(
    records: &[SampleRecord],
    key: &RowKey,
    population: MeanPopulation,
) -> Result<MetricRow> {
    if records.is_empty() {
        return Err(Error::Data("cannot aggregate zero records".into()));
    }
    let successes = records.iter().filter(|r| r.success).count();
    let pool: Vec<&SampleRecord> = match population {
        MeanPopulation::AllSamples => records.iter().collect(),
        MeanPopulation::SuccessesOnly => records.iter().filter(|r| r.success).collect(),
    };
    let mut confidence = 0.0f64;
    let mut perturbation = 0.0f64;
    let mut ssim_sum = 0.0f64;
    let mut iterations = 0.0f64;
    let mut time = 0.0f64;
    for r in &pool {
        confidence += r.confidence;
        perturbation += r.perturbation_pct;
        ssim_sum += r.ssim;
        iterations += r.iterations as f64;
        time += r.elapsed_s;
    }
    let denom = if pool.is_empty() { 1.0 } else { pool.len() as f64 };
    Ok(MetricRow {
        model_name: key.model_name.clone(),
        dataset_name: key.dataset_name.clone(),
        attack_name: key.attack_name.clone(),
        c_min: key.c_min,
        confidence_mean: confidence / denom,
        perturbation_pct_mean: perturbation / denom,
        ssim_mean: ssim_sum / denom,
        iterations_mean: iterations / denom,
        success_rate: successes as f64 / records.len() as f64,
        time_mean_s: time / denom,
        n_samples: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(shape: &[usize], f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(shape, f)
    }

    #[test]
    fn confidence_is_uniform_for_a_constant_model() {
        let model = Model::affine(
            Tensor::<f64>::zeros(&[10, 4]),
            Tensor::<f64>::zeros(&[10]),
        )
        .unwrap();
        let x = Tensor::from_vec(&[1, 1, 4], vec![0.3, 0.6, 0.1, 0.9]).unwrap();
        for t in 0..10 {
            let c = confidence(&model, &x, t).unwrap();
            assert!((c - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn confidence_matches_the_logistic_closed_form() {
        // Logits [10, 0, ..., 0] over ten classes: class 0 confidence is
        // 1 / (1 + 9 e^{-10}).
        let mut bias = vec![0.0f64; 10];
        bias[0] = 10.0;
        let model = Model::affine(
            Tensor::<f64>::zeros(&[10, 2]),
            Tensor::from_vec(&[10], bias).unwrap(),
        )
        .unwrap();
        let x = Tensor::from_vec(&[1, 1, 2], vec![0.0, 0.0]).unwrap();
        let expected = 1.0 / (1.0 + 9.0 * (-10.0f64).exp());
        assert!((confidence(&model, &x, 0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn perturbation_pct_identity_is_zero() {
        let x = image(&[1, 8, 8], |i| (i as f64 * 0.01).fract());
        assert_eq!(perturbation_pct(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn perturbation_pct_across_the_hypercube_diagonal_is_100() {
        let zeros = Tensor::<f64>::zeros(&[3, 4, 4]);
        let ones = image(&[3, 4, 4], |_| 1.0);
        let pct = perturbation_pct(&zeros, &ones).unwrap();
        assert!((pct - 100.0).abs() < 1e-12);
    }

    #[test]
    fn perturbation_pct_single_pixel_hand_arithmetic() {
        // One pixel moved by 0.5 in a 28x28 image: 100 * 0.5 / 28.
        let original = Tensor::<f64>::zeros(&[1, 28, 28]);
        let mut perturbed = original.clone();
        perturbed.data_mut()[100] = 0.5;
        let pct = perturbation_pct(&original, &perturbed).unwrap();
        assert!((pct - 100.0 * 0.5 / 28.0).abs() < 1e-12);
        assert!((pct - 1.7857142857142858).abs() < 1e-10);
    }

    #[test]
    fn perturbation_pct_rejects_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[1, 4, 4]);
        let b = Tensor::<f64>::zeros(&[1, 4, 5]);
        assert!(matches!(
            perturbation_pct(&a, &b),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn ssim_of_an_image_with_itself_is_one() {
        let x = image(&[1, 16, 16], |i| ((i * 2654435761) % 997) as f64 / 997.0);
        let out = ssim(&x, &x).unwrap();
        assert!((out.value - 1.0).abs() < 1e-9);
        assert_eq!(out.window, 11);
        assert!(!out.shrunk);
    }

    #[test]
    fn ssim_constant_zero_versus_constant_one_closed_form() {
        // Zero variances: value reduces to C1 / (1 + C1).
        let zeros = Tensor::<f64>::zeros(&[1, 16, 16]);
        let ones = image(&[1, 16, 16], |_| 1.0);
        let expected = 1e-4 / 1.0001;
        let out = ssim(&zeros, &ones).unwrap();
        assert!((out.value - expected).abs() < 1e-12, "got {}", out.value);
    }

    #[test]
    fn ssim_shrinks_the_window_on_small_images_and_flags_it() {
        let a = image(&[1, 7, 20], |i| (i % 13) as f64 / 13.0);
        let b = image(&[1, 7, 20], |i| (i % 7) as f64 / 7.0);
        let out = ssim(&a, &b).unwrap();
        assert_eq!(out.window, 7);
        assert!(out.shrunk);
        assert!(out.value <= 1.0);
    }

    #[test]
    fn ssim_multi_channel_averages_per_channel_values() {
        let a = image(&[3, 12, 12], |i| (i % 11) as f64 / 11.0);
        let b = image(&[3, 12, 12], |i| (i % 5) as f64 / 5.0);
        let whole = ssim(&a, &b).unwrap().value;
        let mut per_channel = 0.0;
        for c in 0..3 {
            let plane = 144;
            let pa = Tensor::from_vec(
                &[12, 12],
                a.data()[c * plane..(c + 1) * plane].to_vec(),
            )
            .unwrap();
            let pb = Tensor::from_vec(
                &[12, 12],
                b.data()[c * plane..(c + 1) * plane].to_vec(),
            )
            .unwrap();
            per_channel += ssim(&pa, &pb).unwrap().value;
        }
        assert!((whole - per_channel / 3.0).abs() < 1e-12);
    }

    fn record(success: bool, confidence: f64, iterations: usize) -> SampleRecord {
        SampleRecord {
            sample_index: 0,
            original_label: 1,
            target_label: Some(2),
            final_label: 2,
            confidence,
            perturbation_pct: 1.5,
            ssim: 0.9,
            iterations,
            elapsed_s: 0.25,
            success,
            error: None,
        }
    }

    fn key() -> RowKey {
        RowKey {
            model_name: "m".into(),
            dataset_name: "d".into(),
            attack_name: "targeted-enhanced".into(),
            c_min: Some(0.95),
        }
    }

    #[test]
    fn aggregate_single_record_echoes_it() {
        let rows = [record(true, 0.97, 8)];
        let summary = aggregate(&rows, &key(), MeanPopulation::AllSamples).unwrap();
        assert_eq!(summary.confidence_mean, 0.97);
        assert_eq!(summary.iterations_mean, 8.0);
        assert_eq!(summary.success_rate, 1.0);
        assert_eq!(summary.n_samples, 1);
    }

    #[test]
    fn aggregate_mixed_successes_rate_is_half() {
        let rows = [record(true, 0.95, 5), record(false, 0.40, 100)];
        let summary = aggregate(&rows, &key(), MeanPopulation::AllSamples).unwrap();
        assert_eq!(summary.success_rate, 0.5);
        assert_eq!(summary.iterations_mean, 52.5);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let rows: Vec<SampleRecord> = (0..40)
            .map(|i| record(i % 3 != 0, 0.5 + (i as f64) * 0.01, i))
            .collect();
        let forward = aggregate(&rows, &key(), MeanPopulation::AllSamples).unwrap();
        let mut reversed = rows.clone();
        reversed.reverse();
        let backward = aggregate(&reversed, &key(), MeanPopulation::AllSamples).unwrap();
        assert!((forward.confidence_mean - backward.confidence_mean).abs() < 1e-12);
        assert_eq!(forward.success_rate, backward.success_rate);
    }

    #[test]
    fn aggregate_successes_only_filters_the_means() {
        let rows = [record(true, 1.0, 2), record(false, 0.0, 100)];
        let summary = aggregate(&rows, &key(), MeanPopulation::SuccessesOnly).unwrap();
        assert_eq!(summary.confidence_mean, 1.0);
        assert_eq!(summary.iterations_mean, 2.0);
        // success_rate still counts every attempt.
        assert_eq!(summary.success_rate, 0.5);
    }

    #[test]
    fn aggregate_empty_input_is_an_error() {
        assert!(matches!(
            aggregate(&[], &key(), MeanPopulation::AllSamples),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn aggregate_matches_a_compensated_reference_sum() {
        let rows: Vec<SampleRecord> = (0..500)
            .map(|i| record(true, (i as f64 * 0.718281828).sin().abs(), i % 97))
            .collect();
        let summary = aggregate(&rows, &key(), MeanPopulation::AllSamples).unwrap();
        // Kahan-compensated reference.
        let mut sum = 0.0f64;
        let mut c = 0.0f64;
        for r in &rows {
            let y = r.confidence - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        let reference = sum / rows.len() as f64;
        let rel = (summary.confidence_mean - reference).abs() / reference.abs();
        assert!(rel < 1e-9, "relative error {rel}");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn perturbation_pct_is_absolutely_homogeneous(
                base in proptest::collection::vec(0.0f64..1.0, 16),
                delta in proptest::collection::vec(-0.5f64..0.5, 16),
                alpha in 0.0f64..4.0,
            ) {
                let original = Tensor::from_vec(&[1, 4, 4], base.clone()).unwrap();
                let perturbed = Tensor::from_vec(
                    &[1, 4, 4],
                    base.iter().zip(&delta).map(|(b, d)| b + d).collect(),
                ).unwrap();
                let scaled = Tensor::from_vec(
                    &[1, 4, 4],
                    base.iter().zip(&delta).map(|(b, d)| b + alpha * d).collect(),
                ).unwrap();
                let p1 = perturbation_pct(&original, &perturbed).unwrap();
                let p2 = perturbation_pct(&original, &scaled).unwrap();
                prop_assert!((p2 - alpha * p1).abs() < 1e-9 * (1.0 + alpha * p1));
            }

            #[test]
            fn ssim_is_symmetric_and_at_most_one(
                a in proptest::collection::vec(0.0f64..1.0, 144),
                b in proptest::collection::vec(0.0f64..1.0, 144),
            ) {
                let ta = Tensor::from_vec(&[1, 12, 12], a).unwrap();
                let tb = Tensor::from_vec(&[1, 12, 12], b).unwrap();
                let ab = ssim(&ta, &tb).unwrap().value;
                let ba = ssim(&tb, &ta).unwrap().value;
                prop_assert!((ab - ba).abs() < 1e-9);
                prop_assert!(ab <= 1.0 + 1e-12);
            }
        }
    }
}
