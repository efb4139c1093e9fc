//! The attack procedures: untargeted DeepFool, basic targeted DeepFool, the
//! enhanced targeted variant with a minimum-confidence gate, and the
//! recursive targeted variant.
//!
//! All four share the same geometric step: project the current iterate onto
//! the linearized decision boundary between a pair of classes, then push
//! slightly past it by the overshoot factor. Attacks never mutate the model
//! and may run concurrently against a shared instance.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ForwardTrace, Model};
use crate::scalar::{lit, Scalar};
use crate::tensor::{softmax_probability, Tensor};

/// Pair-gradient norms at or below this are treated as degenerate: the
/// projection step divides by the squared norm.
pub const DEGENERACY_FLOOR: f64 = 1e-12;

/// Which class anchors the gradient difference in the enhanced attack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Anchor {
    /// The label predicted for the unperturbed image, fixed at entry.
    Original,
    /// Ablation variant: the current top class each iteration (falls back
    /// to the runner-up when the top class is the target itself).
    Current,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Overshoot eta: each iterate applies `x + (1 + eta) * r`.
    pub overshoot: f64,
    /// Iteration budget N.
    pub max_iter: usize,
    /// Confidence gate c_min for the enhanced attack.
    pub min_confidence: f64,
    /// Total-perturbation budget for the basic targeted attack: iteration
    /// continues only while the accumulated L2 norm is strictly below this.
    pub max_total_perturbation: Option<f64>,
    /// Pass budget R for the recursive attack.
    pub recursion_depth: usize,
    /// Clamp each iterate into the `[0, 1]` pixel box.
    pub clip_pixels: bool,
    pub anchor: Anchor,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            overshoot: 0.02,
            max_iter: 100,
            min_confidence: 0.95,
            max_total_perturbation: None,
            recursion_depth: 5,
            clip_pixels: false,
            anchor: Anchor::Original,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overshoot >= 0.0) {
            return Err(Error::Config("overshoot must be non-negative".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::Config("min_confidence must lie in [0, 1]".into()));
        }
        if let Some(budget) = self.max_total_perturbation {
            if !(budget >= 0.0) {
                return Err(Error::Config(
                    "max_total_perturbation must be non-negative".into(),
                ));
            }
        }
        if self.recursion_depth == 0 {
            return Err(Error::Config("recursion_depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Why an attack stopped early without a usable step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackAbort {
    DegenerateGradient,
    NonFinite,
}

impl std::fmt::Display for AttackAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackAbort::DegenerateGradient => write!(f, "degenerate gradient"),
            AttackAbort::NonFinite => write!(f, "non-finite iterate"),
        }
    }
}

/// Outcome of one attack run.
#[derive(Clone, Debug)]
pub struct AttackResult<T> {
    /// Accumulated perturbation; always equals `perturbed_image - input`.
    pub perturbation: Tensor<T>,
    pub perturbed_image: Tensor<T>,
    /// Completed iterations (applied steps).
    pub iterations: usize,
    /// Logit-gradient evaluations performed inside the iterate loop.
    pub gradient_evals: usize,
    /// Label predicted for the unperturbed input.
    pub original_label: usize,
    /// Label predicted for `perturbed_image`.
    pub final_label: usize,
    /// Softmax probability on `perturbed_image` of the target class for
    /// targeted attacks, of `final_label` for the untargeted attack.
    pub final_confidence: f64,
    pub success: bool,
    /// Wall-clock time around the iterate loop.
    pub elapsed: Duration,
}

/// An attack result together with an optional numeric abort. The result
/// fields always describe the last finite iterate, so campaigns can record
/// failures with real metrics instead of discarding the run.
#[derive(Clone, Debug)]
pub struct AttackOutcome<T> {
    pub result: AttackResult<T>,
    pub abort: Option<AttackAbort>,
}

impl<T> AttackOutcome<T> {
    fn into_result(self) -> Result<AttackResult<T>> {
        match self.abort {
            None => Ok(self.result),
            Some(AttackAbort::DegenerateGradient) => {
                Err(Error::DegenerateGradient { norm: 0.0 })
            }
            Some(AttackAbort::NonFinite) => Err(Error::NonFinite("attack iterate")),
        }
    }
}

/// Minimal step onto the linearized boundary: `(|f'| / |w'|^2) * w'`.
pub fn linearized_step<T: Scalar>(f_diff: T, w_diff: &Tensor<T>) -> Result<Tensor<T>> {
    let norm = w_diff.l2_norm();
    let norm_f64 = norm.to_f64().unwrap_or(0.0);
    if !(norm_f64 > DEGENERACY_FLOOR) {
        return Err(Error::DegenerateGradient { norm: norm_f64 });
    }
    let scale = f_diff.abs() / (norm * norm);
    Ok(w_diff.scaled(scale))
}

/// Attack selector used by campaigns and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Deepfool,
    TargetedBasic,
    TargetedEnhanced,
    TargetedRecursive,
}

impl AttackKind {
    pub fn is_targeted(self) -> bool {
        !matches!(self, AttackKind::Deepfool)
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Deepfool => "deepfool",
            AttackKind::TargetedBasic => "targeted-basic",
            AttackKind::TargetedEnhanced => "targeted-enhanced",
            AttackKind::TargetedRecursive => "targeted-recursive",
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deepfool" => Ok(AttackKind::Deepfool),
            "targeted-basic" => Ok(AttackKind::TargetedBasic),
            "targeted-enhanced" => Ok(AttackKind::TargetedEnhanced),
            "targeted-recursive" => Ok(AttackKind::TargetedRecursive),
            other => Err(Error::Config(format!(
                "unknown attack {other:?}; expected deepfool, targeted-basic, targeted-enhanced, or targeted-recursive"
            ))),
        }
    }
}

/// Dispatch entry point. Targeted kinds require `target`.
pub fn run_attack<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    kind: AttackKind,
    target: Option<usize>,
    cfg: &AttackConfig,
) -> Result<AttackOutcome<T>> {
    match kind {
        AttackKind::Deepfool => deepfool_untargeted_outcome(model, x, cfg),
        targeted => {
            let t = target.ok_or_else(|| {
                Error::Config(format!("attack {targeted} requires a target class"))
            })?;
            match targeted {
                AttackKind::TargetedBasic => targeted_basic_outcome(model, x, t, cfg),
                AttackKind::TargetedEnhanced => targeted_enhanced_outcome(model, x, t, cfg),
                AttackKind::TargetedRecursive => targeted_recursive_outcome(model, x, t, cfg),
                AttackKind::Deepfool => unreachable!(),
            }
        }
    }
}

struct Loop<'a, T: Scalar> {
    model: &'a Model<T>,
    input: &'a Tensor<T>,
    current: Tensor<T>,
    trace: ForwardTrace<T>,
    one_plus_overshoot: T,
    clip: bool,
    iterations: usize,
    gradient_evals: usize,
    abort: Option<AttackAbort>,
}

impl<'a, T: Scalar> Loop<'a, T> {
    fn start(model: &'a Model<T>, input: &'a Tensor<T>, cfg: &AttackConfig) -> Result<Self> {
        cfg.validate()?;
        if model.class_count() < 2 {
            return Err(Error::Config(
                "attacks need a classifier with at least two classes".into(),
            ));
        }
        let trace = model.forward_trace(input)?;
        Ok(Loop {
            model,
            input,
            current: input.clone(),
            trace,
            one_plus_overshoot: lit::<T>(1.0 + cfg.overshoot),
            clip: cfg.clip_pixels,
            iterations: 0,
            gradient_evals: 0,
            abort: None,
        })
    }

    fn grad(&mut self, class: usize) -> Result<Tensor<T>> {
        self.gradient_evals += 1;
        self.model.backward_logit(&self.trace, class)
    }

    /// Apply one projection step. Returns false (and records the abort)
    /// when the step is degenerate or produces a non-finite iterate.
    fn advance(&mut self, f_diff: T, w_diff: &Tensor<T>) -> Result<bool> {
        let step = match linearized_step(f_diff, w_diff) {
            Ok(step) => step,
            Err(Error::DegenerateGradient { .. }) => {
                self.abort = Some(AttackAbort::DegenerateGradient);
                return Ok(false);
            }
            Err(other) => return Err(other),
        };
        let mut candidate = self.current.clone();
        candidate.add_scaled(&step, self.one_plus_overshoot);
        if self.clip {
            candidate.clamp_unit();
        }
        if !candidate.is_finite() {
            self.abort = Some(AttackAbort::NonFinite);
            return Ok(false);
        }
        self.current = candidate;
        self.trace = self.model.forward_trace(&self.current)?;
        self.iterations += 1;
        Ok(true)
    }

    fn perturbation_norm(&self) -> Result<f64> {
        let diff = self.current.sub(self.input)?;
        Ok(diff.l2_norm().to_f64().unwrap_or(f64::INFINITY))
    }

    fn finish(
        self,
        started: Instant,
        final_label: usize,
        final_confidence: f64,
        success: bool,
    ) -> Result<AttackOutcome<T>> {
        let original_label = self.model.forward(self.input)?.argmax();
        let perturbation = self.current.sub(self.input)?;
        Ok(AttackOutcome {
            result: AttackResult {
                perturbation,
                perturbed_image: self.current,
                iterations: self.iterations,
                gradient_evals: self.gradient_evals,
                original_label,
                final_label,
                final_confidence,
                success: success && self.abort.is_none(),
                elapsed: started.elapsed(),
            },
            abort: self.abort,
        })
    }
}

/// Untargeted DeepFool: per iteration, gradients of the original class and
/// of every other class pick the nearest linearized boundary (ties to the
/// lowest class index), and the iterate crosses it with overshoot. Runs
/// until the argmax label changes or the iteration budget is exhausted.
pub fn deepfool_untargeted<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    cfg: &AttackConfig,
) -> Result<AttackResult<T>> {
    deepfool_untargeted_outcome(model, x, cfg)?.into_result()
}

pub fn deepfool_untargeted_outcome<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    cfg: &AttackConfig,
) -> Result<AttackOutcome<T>> {
    let started = Instant::now();
    let mut lp = Loop::start(model, x, cfg)?;
    let original = lp.trace.logits().argmax();

    while lp.iterations < cfg.max_iter {
        let logits = lp.trace.logits();
        if logits.argmax() != original {
            break;
        }
        let f_orig = logits.get(original)?;
        let g_orig = lp.grad(original)?;

        // Nearest boundary per |f'_k| / |w'_k|; degenerate pairs are
        // unreachable and skipped.
        let mut best: Option<(f64, Tensor<T>, T)> = None;
        for k in 0..model.class_count() {
            if k == original {
                continue;
            }
            let g_k = lp.grad(k)?;
            let w = g_k.sub(&g_orig)?;
            let f = logits.get(k)? - f_orig;
            let norm = w.l2_norm().to_f64().unwrap_or(0.0);
            if !(norm > DEGENERACY_FLOOR) {
                continue;
            }
            let score = f.abs().to_f64().unwrap_or(f64::INFINITY) / norm;
            if best.as_ref().map_or(true, |(s, _, _)| score < *s) {
                best = Some((score, w, f));
            }
        }
        let Some((_, w, f)) = best else {
            lp.abort = Some(AttackAbort::DegenerateGradient);
            break;
        };
        if !lp.advance(f, &w)? {
            break;
        }
    }

    let logits = lp.trace.logits();
    let final_label = logits.argmax();
    let final_confidence = softmax_probability(&logits, final_label)?;
    let success = final_label != original;
    lp.finish(started, final_label, final_confidence, success)
}

/// Basic targeted DeepFool: one projection per iteration toward the target,
/// against the current top class, until the argmax reaches the target, the
/// iteration budget runs out, or the accumulated perturbation norm leaves
/// the configured budget.
pub fn targeted_basic<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    target: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult<T>> {
    targeted_basic_outcome(model, x, target, cfg)?.into_result()
}

pub fn targeted_basic_outcome<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    target: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome<T>> {
    check_target(model, target)?;
    let started = Instant::now();
    let mut lp = Loop::start(model, x, cfg)?;

    while lp.iterations < cfg.max_iter {
        let logits = lp.trace.logits();
        let top = logits.argmax();
        if top == target {
            break;
        }
        if let Some(budget) = cfg.max_total_perturbation {
            // Continue only while strictly inside the budget, so a zero
            // budget stops before the first step.
            if lp.perturbation_norm()? >= budget {
                break;
            }
        }
        let f = logits.get(target)? - logits.get(top)?;
        let g_t = lp.grad(target)?;
        let g_top = lp.grad(top)?;
        let w = g_t.sub(&g_top)?;
        if !lp.advance(f, &w)? {
            break;
        }
    }

    let logits = lp.trace.logits();
    let final_label = logits.argmax();
    let final_confidence = softmax_probability(&logits, target)?;
    let success = final_label == target;
    lp.finish(started, final_label, final_confidence, success)
}

/// Enhanced targeted DeepFool: the gradient difference is anchored at the
/// original label (fixed at entry), and the loop continues until the argmax
/// equals the target AND its softmax confidence clears `min_confidence`, or
/// the iteration budget is exhausted. Two gradient evaluations per
/// iteration regardless of the class count.
pub fn targeted_enhanced<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    target: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult<T>> {
    targeted_enhanced_outcome(model, x, target, cfg)?.into_result()
}

pub fn targeted_enhanced_outcome<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    target: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome<T>> {
    check_target(model, target)?;
    let started = Instant::now();
    let mut lp = Loop::start(model, x, cfg)?;
    let original = lp.trace.logits().argmax();

    let (final_label, final_confidence) = loop {
        let logits = lp.trace.logits();
        let label = logits.argmax();
        let confidence = softmax_probability(&logits, target)?;
        let goal_met = label == target && confidence >= cfg.min_confidence;
        if goal_met || lp.iterations >= cfg.max_iter {
            break (label, confidence);
        }
        let anchor = match cfg.anchor {
            Anchor::Original => original,
            Anchor::Current => {
                if label != target {
                    label
                } else {
                    runner_up(logits.values(), target)
                }
            }
        };
        let f = logits.get(target)? - logits.get(anchor)?;
        let g_t = lp.grad(target)?;
        let g_a = lp.grad(anchor)?;
        let w = g_t.sub(&g_a)?;
        if !lp.advance(f, &w)? {
            let logits = lp.trace.logits();
            break (logits.argmax(), softmax_probability(&logits, target)?);
        }
    };

    let success = final_label == target && final_confidence >= cfg.min_confidence;
    lp.finish(started, final_label, final_confidence, success)
}

/// Recursive targeted DeepFool: run the basic attack for up to N iterations
/// per pass; on failure, restart from the current perturbed image, up to R
/// passes. Iterations and gradient evaluations accumulate across passes.
pub fn targeted_recursive<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    target: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult<T>> {
    targeted_recursive_outcome(model, x, target, cfg)?.into_result()
}

pub fn targeted_recursive_outcome<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    target: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome<T>> {
    check_target(model, target)?;
    cfg.validate()?;
    let started = Instant::now();
    let original_label = model.forward(x)?.argmax();

    let mut state = x.clone();
    let mut iterations = 0;
    let mut gradient_evals = 0;
    let mut last: Option<AttackOutcome<T>> = None;
    for _pass in 0..cfg.recursion_depth {
        let outcome = targeted_basic_outcome(model, &state, target, cfg)?;
        iterations += outcome.result.iterations;
        gradient_evals += outcome.result.gradient_evals;
        state = outcome.result.perturbed_image.clone();
        let done = outcome.result.success || outcome.abort.is_some();
        last = Some(outcome);
        if done {
            break;
        }
    }
    let last = last.expect("recursion_depth >= 1 runs at least one pass");

    let perturbation = state.sub(x)?;
    Ok(AttackOutcome {
        result: AttackResult {
            perturbation,
            perturbed_image: state,
            iterations,
            gradient_evals,
            original_label,
            final_label: last.result.final_label,
            final_confidence: last.result.final_confidence,
            success: last.result.success,
            elapsed: started.elapsed(),
        },
        abort: last.abort,
    })
}

fn check_target<T: Scalar>(model: &Model<T>, target: usize) -> Result<()> {
    if target >= model.class_count() {
        return Err(Error::ClassIndex {
            index: target,
            class_count: model.class_count(),
        });
    }
    Ok(())
}

/// Highest-scoring class other than `excluded`; ties to the lowest index.
fn runner_up<T: Scalar>(values: &[T], excluded: usize) -> usize {
    let mut best = usize::MAX;
    for (i, v) in values.iter().enumerate() {
        if i == excluded {
            continue;
        }
        if best == usize::MAX || *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Model;

    fn affine(weights: Vec<f64>, bias: Vec<f64>, dim: usize) -> Model<f64> {
        let classes = bias.len();
        Model::affine(
            Tensor::from_vec(&[classes, dim], weights).unwrap(),
            Tensor::from_vec(&[classes], bias).unwrap(),
        )
        .unwrap()
    }

    fn point(values: Vec<f64>) -> Tensor<f64> {
        let dim = values.len();
        Tensor::from_vec(&[1, 1, dim], values).unwrap()
    }

    fn eta_zero() -> AttackConfig {
        AttackConfig {
            overshoot: 0.0,
            ..AttackConfig::default()
        }
    }

    #[test]
    fn linearized_step_on_the_boundary_is_zero() {
        let w = Tensor::from_vec(&[3], vec![0.3, -0.4, 1.0]).unwrap();
        let step = linearized_step(0.0, &w).unwrap();
        assert!(step.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linearized_step_with_unit_gradient_has_norm_f_diff() {
        let w = Tensor::from_vec(&[2], vec![1.0f64, 0.0]).unwrap();
        let step = linearized_step(2.0, &w).unwrap();
        assert!((step.l2_norm() - 2.0).abs() < 1e-15);
        assert_eq!(step.data(), &[2.0, 0.0]);
    }

    #[test]
    fn linearized_step_rejects_degenerate_gradients() {
        let w = Tensor::from_vec(&[2], vec![1e-13, 0.0]).unwrap();
        assert!(matches!(
            linearized_step(1.0, &w),
            Err(Error::DegenerateGradient { .. })
        ));
    }

    #[test]
    fn step_lands_exactly_on_the_affine_pair_boundary() {
        // After the projection step the pair difference f_t - f_k is zero
        // for an affine model, up to rounding.
        let model = affine(
            vec![0.9, -0.3, 0.1, 0.4, 0.2, -0.8, -0.5, 0.7, 0.3, 0.6, -0.2, 0.5],
            vec![0.1, -0.4, 0.3],
            4,
        );
        let x = point(vec![0.2, -0.7, 0.4, 0.9]);
        let logits = model.forward(&x).unwrap();
        let (from, to) = (logits.argmax(), (logits.argmax() + 1) % 3);
        let g_from = model.grad_logit(&x, from).unwrap();
        let g_to = model.grad_logit(&x, to).unwrap();
        let w = g_to.sub(&g_from).unwrap();
        let f = logits.get(to).unwrap() - logits.get(from).unwrap();
        let step = linearized_step(f, &w).unwrap();
        let mut moved = x.clone();
        moved.add_scaled(&step, 1.0);
        let after = model.forward(&moved).unwrap();
        let diff = after.get(to).unwrap() - after.get(from).unwrap();
        assert!(diff.abs() < 1e-12, "pair difference {diff}");
    }

    #[test]
    fn untargeted_honors_the_iteration_budget() {
        // With zero overshoot the dyadic step lands exactly on the boundary,
        // where the argmax tie keeps the original class: one iteration, no
        // label flip.
        let model = affine(vec![1.0, 0.0, 0.0, 1.0], vec![4.0, 0.0], 2);
        let x = point(vec![0.0, 0.0]);
        let cfg = AttackConfig {
            max_iter: 1,
            overshoot: 0.0,
            ..AttackConfig::default()
        };
        let outcome = deepfool_untargeted_outcome(&model, &x, &cfg).unwrap();
        let res = &outcome.result;
        assert_eq!(res.iterations, 1);
        assert!(!res.success);
        // r-hat is exactly the single applied step.
        let diff = res.perturbed_image.sub(&x).unwrap();
        assert_eq!(diff.data(), res.perturbation.data());
        assert!(res.perturbation.l2_norm() > 0.0);
    }

    #[test]
    fn untargeted_on_a_dyadic_affine_instance_terminates_in_one_iteration() {
        // All arithmetic is exact in binary floating point: weights and
        // biases are dyadic and the pair-gradient norms are 1. Class 2 is
        // predicted; boundaries to classes 0 and 1 are equidistant (0.5),
        // the argmin tie breaks to class 0, and the step lands exactly on
        // the boundary where the argmax tie breaks to class 0 != 2.
        let model = affine(
            vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.5],
            2,
        );
        let x = point(vec![0.0, 0.0]);
        let result = deepfool_untargeted(&model, &x, &eta_zero()).unwrap();
        assert_eq!(result.original_label, 2);
        assert_eq!(result.iterations, 1);
        assert_eq!(result.final_label, 0);
        assert!(result.success);
        assert_eq!(result.perturbation.data(), &[0.5, 0.0]);
        // Gradient accounting: C = 3 evaluations per iteration.
        assert_eq!(result.gradient_evals, 3);
    }

    #[test]
    fn targeted_basic_with_vacuous_goal_returns_immediately() {
        let model = affine(vec![1.0, 0.0, 0.0, 1.0], vec![5.0, 0.0], 2);
        let x = point(vec![0.0, 0.0]);
        let result = targeted_basic(&model, &x, 0, &AttackConfig::default()).unwrap();
        assert!(result.success);
        assert_eq!(result.iterations, 0);
        assert_eq!(result.gradient_evals, 0);
        assert_eq!(result.perturbation.l2_norm(), 0.0);
    }

    #[test]
    fn targeted_basic_zero_budget_stops_before_any_step() {
        let model = affine(vec![1.0, 0.0, 0.0, 1.0], vec![5.0, 0.0], 2);
        let x = point(vec![0.0, 0.0]);
        let cfg = AttackConfig {
            max_total_perturbation: Some(0.0),
            ..AttackConfig::default()
        };
        let result = targeted_basic(&model, &x, 1, &cfg).unwrap();
        assert!(!result.success);
        assert_eq!(result.iterations, 0);
        assert_eq!(result.perturbation.l2_norm(), 0.0);
    }

    #[test]
    fn targeted_basic_lands_on_the_pair_bisector_with_zero_overshoot() {
        // Dyadic two-class instance: distance to the bisector is exactly
        // 2.5 along axis 0. With eta = 0 the iterate reaches the boundary
        // and stalls there; the accumulated norm equals the closed form.
        let model = affine(vec![1.0, 0.0, -1.0, 0.0], vec![0.0, -5.0], 2);
        let x = point(vec![0.0, 0.0]);
        let cfg = AttackConfig {
            overshoot: 0.0,
            max_iter: 8,
            ..AttackConfig::default()
        };
        let result = targeted_basic(&model, &x, 1, &cfg).unwrap();
        let closed_form = 5.0 / 2.0; // |f_t - f_k| / |w_t - w_k| = 5 / 2
        assert!((result.perturbation.l2_norm() - closed_form).abs() < 1e-6);
    }

    #[test]
    fn targeted_enhanced_with_goal_met_at_entry_is_a_no_op() {
        let model = affine(vec![1.0, 0.0, 0.0, 1.0], vec![8.0, 0.0], 2);
        let x = point(vec![0.0, 0.0]);
        let result = targeted_enhanced(&model, &x, 0, &AttackConfig::default()).unwrap();
        assert!(result.success);
        assert_eq!(result.iterations, 0);
        assert_eq!(result.gradient_evals, 0);
        assert_eq!(result.perturbation.l2_norm(), 0.0);
        assert!(result.final_confidence >= 0.95);
    }

    #[test]
    fn targeted_enhanced_pushes_past_the_boundary_until_the_gate_clears() {
        let model = affine(vec![1.0, 0.0, -1.0, 0.0], vec![0.0, -4.0], 2);
        let x = point(vec![0.0, 0.0]);
        let cfg = AttackConfig {
            overshoot: 0.02,
            min_confidence: 0.9,
            ..AttackConfig::default()
        };
        let result = targeted_enhanced(&model, &x, 1, &cfg).unwrap();
        assert!(result.success, "gate never cleared: {result:?}");
        assert_eq!(result.final_label, 1);
        assert!(result.final_confidence >= 0.9);
        assert_eq!(result.gradient_evals, 2 * result.iterations);
        // Success is self-certifying: an independent forward pass agrees.
        let logits = model.forward(&result.perturbed_image).unwrap();
        assert_eq!(logits.argmax(), 1);
        assert!(softmax_probability(&logits, 1).unwrap() >= 0.9);
    }

    #[test]
    fn recursive_with_single_pass_matches_basic() {
        let model = affine(
            vec![0.6, -0.2, 0.1, 0.5, -0.7, 0.4],
            vec![0.9, 0.0, -0.3],
            2,
        );
        let x = point(vec![0.3, -0.5]);
        let cfg = AttackConfig {
            recursion_depth: 1,
            max_iter: 6,
            ..AttackConfig::default()
        };
        let rec = targeted_recursive(&model, &x, 2, &cfg).unwrap();
        let basic = targeted_basic(&model, &x, 2, &cfg).unwrap();
        assert_eq!(rec.iterations, basic.iterations);
        assert_eq!(rec.gradient_evals, basic.gradient_evals);
        assert_eq!(rec.original_label, basic.original_label);
        assert_eq!(rec.final_label, basic.final_label);
        assert_eq!(rec.success, basic.success);
        assert_eq!(rec.perturbation.data(), basic.perturbation.data());
        assert_eq!(rec.final_confidence, basic.final_confidence);
    }

    #[test]
    fn recursive_gradient_evals_stay_within_two_r_n() {
        let model = affine(vec![1.0, 0.0, 0.0, 1.0], vec![30.0, 0.0], 2);
        let x = point(vec![0.0, 0.0]);
        let cfg = AttackConfig {
            max_iter: 4,
            recursion_depth: 3,
            overshoot: 0.0, // stalls on the boundary, exercising every pass
            ..AttackConfig::default()
        };
        let result = targeted_recursive(&model, &x, 1, &cfg).unwrap();
        assert!(result.gradient_evals <= 2 * cfg.recursion_depth * cfg.max_iter);
        assert_eq!(result.iterations, cfg.recursion_depth * cfg.max_iter);
    }

    #[test]
    fn targeted_attacks_reject_out_of_range_targets() {
        let model = affine(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2);
        let x = point(vec![0.1, 0.2]);
        for kind in [
            AttackKind::TargetedBasic,
            AttackKind::TargetedEnhanced,
            AttackKind::TargetedRecursive,
        ] {
            let err = run_attack(&model, &x, kind, Some(7), &AttackConfig::default());
            assert!(matches!(err, Err(Error::ClassIndex { .. })));
            let err = run_attack(&model, &x, kind, None, &AttackConfig::default());
            assert!(matches!(err, Err(Error::Config(_))));
        }
    }

    #[test]
    fn perturbation_accounting_holds_with_and_without_clipping() {
        let model = affine(vec![1.0, 0.5, -1.0, 0.25], vec![0.0, -2.0], 2);
        for clip in [false, true] {
            let x = point(vec![0.5, 0.5]);
            let cfg = AttackConfig {
                clip_pixels: clip,
                min_confidence: 0.8,
                ..AttackConfig::default()
            };
            let outcome = targeted_enhanced_outcome(&model, &x, 1, &cfg).unwrap();
            let res = outcome.result;
            let replay = res.perturbed_image.sub(&x).unwrap();
            for (a, b) in replay.data().iter().zip(res.perturbation.data()) {
                assert!((a - b).abs() < 1e-6);
            }
            if clip {
                assert!(res
                    .perturbed_image
                    .data()
                    .iter()
                    .all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
