//! Loss functions and pixel-level segmentation metrics.
//!
//! The losses exist in two forms: graph builders (differentiable, used by the
//! trainer) and plain evaluators (used for validation metrics and tests).
//! Both share the same formulas; the evaluators are the reference the graph
//! versions are tested against.

use crate::error::{HorizonError, Result};
use crate::tensor::{Graph, Scalar, Tensor4, Var};

/// Weights and stability constants of the composite objective.
#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    /// Weight of the cross-entropy term.
    pub alpha: f64,
    /// Weight of the overlap term.
    pub beta: f64,
    pub dice_eps: f64,
    /// Predictions are clamped to `[prob_clamp, 1 − prob_clamp]` before logs.
    pub prob_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            beta: 0.5,
            dice_eps: 1e-6,
            prob_clamp: 1e-7,
        }
    }
}

impl LossConfig {
    /// Pure overlap loss (the cross-entropy term switched off).
    pub fn dice_only() -> Self {
        LossConfig {
            alpha: 0.0,
            beta: 1.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.alpha + self.beta <= 0.0 {
            return Err(HorizonError::Argument(format!(
                "loss weights must be non-negative with positive sum, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if self.dice_eps <= 0.0 {
            return Err(HorizonError::Argument("dice_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Pixel confusion counts between two binary maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn check_target<S: Scalar>(target: &Tensor4<S>) -> Result<()> {
    if target
        .data()
        .iter()
        .any(|&v| v != S::zero() && v != S::one())
    {
        return Err(HorizonError::Argument(
            "target mask must contain only 0 and 1".into(),
        ));
    }
    Ok(())
}

fn check_shapes<S: Scalar>(pred: &Tensor4<S>, target: &Tensor4<S>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(HorizonError::Shape(format!(
            "prediction {} vs target {}",
            pred.shape(),
            target.shape()
        )));
    }
    check_target(target)
}

// ── Graph builders ───────────────────────────────────────────────────

/// Mean binary cross-entropy node: `−mean(y·ln ŷ + (1−y)·ln(1−ŷ))` with ŷ
/// clamped away from {0, 1}.
pub fn bce_loss_var<S: Scalar>(
    g: &mut Graph<S>,
    pred: Var,
    target: &Tensor4<S>,
    prob_clamp: f64,
) -> Result<Var> {
    check_shapes(g.value(pred), target)?;
    let n = target.shape().len() as f64;
    let y = g.leaf(target.clone(), false);
    let p = g.clamp(pred, prob_clamp, 1.0 - prob_clamp);
    let ln_p = g.ln(p);
    let t1 = g.mul(y, ln_p)?;
    let one_minus_y = {
        let neg = g.scale(y, -1.0);
        g.add_const(neg, 1.0)
    };
    let one_minus_p = {
        let neg = g.scale(p, -1.0);
        g.add_const(neg, 1.0)
    };
    let ln_q = g.ln(one_minus_p);
    let t2 = g.mul(one_minus_y, ln_q)?;
    let s = g.add(t1, t2)?;
    let total = g.sum(s);
    Ok(g.scale(total, -1.0 / n))
}

/// Overlap loss node: `1 − (2Σyŷ + ε)/(Σy² + Σŷ² + ε)`.
pub fn dice_loss_var<S: Scalar>(
    g: &mut Graph<S>,
    pred: Var,
    target: &Tensor4<S>,
    dice_eps: f64,
) -> Result<Var> {
    check_shapes(g.value(pred), target)?;
    let y = g.leaf(target.clone(), false);
    let yp = g.mul(y, pred)?;
    let inter = g.sum(yp);
    let num = {
        let d = g.scale(inter, 2.0);
        g.add_const(d, dice_eps)
    };
    let yy = g.mul(y, y)?;
    let pp = g.mul(pred, pred)?;
    let sy = g.sum(yy);
    let sp = g.sum(pp);
    let den = {
        let s = g.add(sy, sp)?;
        g.add_const(s, dice_eps)
    };
    let ratio = g.div_scalar(num, den)?;
    let neg = g.scale(ratio, -1.0);
    Ok(g.add_const(neg, 1.0))
}

/// `alpha·bce + beta·dice`.
pub fn composite_loss_var<S: Scalar>(
    g: &mut Graph<S>,
    pred: Var,
    target: &Tensor4<S>,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let bce = bce_loss_var(g, pred, target, cfg.prob_clamp)?;
    let dice = dice_loss_var(g, pred, target, cfg.dice_eps)?;
    let a = g.scale(bce, cfg.alpha);
    let b = g.scale(dice, cfg.beta);
    g.add(a, b)
}

// ── Plain evaluators ─────────────────────────────────────────────────

pub fn bce_loss<S: Scalar>(pred: &Tensor4<S>, target: &Tensor4<S>, prob_clamp: f64) -> Result<f64> {
    check_shapes(pred, target)?;
    let lo = prob_clamp;
    let hi = 1.0 - prob_clamp;
    let mut acc = 0.0f64;
    for (&p, &y) in pred.data().iter().zip(target.data()) {
        let p = p.as_f64().clamp(lo, hi);
        let y = y.as_f64();
        acc -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(acc / pred.shape().len() as f64)
}

pub fn dice_loss<S: Scalar>(pred: &Tensor4<S>, target: &Tensor4<S>, dice_eps: f64) -> Result<f64> {
    check_shapes(pred, target)?;
    let mut inter = 0.0f64;
    let mut sy = 0.0f64;
    let mut sp = 0.0f64;
    for (&p, &y) in pred.data().iter().zip(target.data()) {
        let (p, y) = (p.as_f64(), y.as_f64());
        inter += y * p;
        sy += y * y;
        sp += p * p;
    }
    Ok(1.0 - (2.0 * inter + dice_eps) / (sy + sp + dice_eps))
}

pub fn composite_loss<S: Scalar>(
    pred: &Tensor4<S>,
    target: &Tensor4<S>,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    Ok(cfg.alpha * bce_loss(pred, target, cfg.prob_clamp)?
        + cfg.beta * dice_loss(pred, target, cfg.dice_eps)?)
}

/// Binarization threshold applied to probability maps before counting.
pub const BINARIZE_THRESHOLD: f64 = 0.5;

pub fn binarize<S: Scalar>(pred: &Tensor4<S>, threshold: f64) -> Vec<bool> {
    pred.data()
        .iter()
        .map(|&v| v.as_f64() > threshold)
        .collect()
}

pub fn confusion(pred: &[bool], target: &[bool]) -> ConfusionCounts {
    assert_eq!(pred.len(), target.len(), "confusion: length mismatch");
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (&p, &t) in pred.iter().zip(target) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Jaccard index `TP/(TP+FP+FN)`; two empty masks count as perfect overlap.
pub fn iou(pred: &[bool], target: &[bool]) -> f64 {
    let c = confusion(pred, target);
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        c.tp as f64 / denom as f64
    }
}

pub fn pixel_accuracy(pred: &[bool], target: &[bool]) -> f64 {
    let c = confusion(pred, target);
    (c.tp + c.tn) as f64 / c.total() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: Shape4, data: Vec<f64>) -> Tensor4<f64> {
        Tensor4::new(shape, data).unwrap()
    }

    fn random_pred(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(0.02..0.98)).collect()
    }

    fn random_mask(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len)
            .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
            .collect()
    }

    // ── bce ──────────────────────────────────────────────────────────

    #[test]
    fn bce_perfect_prediction_is_near_zero() {
        let shape = Shape4::new(1, 1, 2, 2);
        let y = t(shape, vec![1.0, 1.0, 1.0, 1.0]);
        let p = t(shape, vec![1.0, 1.0, 1.0, 1.0]);
        let v = bce_loss(&p, &y, 1e-7).unwrap();
        assert!(v >= 0.0 && v <= 1e-6, "got {v}");
    }

    #[test]
    fn bce_half_probability_is_ln2() {
        let shape = Shape4::new(1, 1, 1, 1);
        let y = t(shape, vec![1.0]);
        let p = t(shape, vec![0.5]);
        let v = bce_loss(&p, &y, 1e-7).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_non_binary_target() {
        let shape = Shape4::new(1, 1, 1, 2);
        let y = t(shape, vec![0.5, 1.0]);
        let p = t(shape, vec![0.5, 0.5]);
        assert!(matches!(
            bce_loss(&p, &y, 1e-7),
            Err(HorizonError::Argument(_))
        ));
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let shape = Shape4::new(1, 1, 4, 4);
        let pred = t(shape, random_pred(16, &mut rng));
        let target = t(shape, random_mask(16, &mut rng));
        let err = crate::tensor::finite_diff::finite_diff_check(
            move |g, vars| bce_loss_var(g, vars[0], &target, 1e-7).unwrap(),
            &[pred],
            1e-6,
        );
        assert!(err < 1e-5, "bce gradient error {err}");
    }

    // ── dice ─────────────────────────────────────────────────────────

    #[test]
    fn dice_perfect_overlap_is_near_zero() {
        let shape = Shape4::new(1, 1, 2, 2);
        let y = t(shape, vec![1.0, 0.0, 1.0, 0.0]);
        let v = dice_loss(&y.clone(), &y, 1e-6).unwrap();
        assert!(v.abs() < 1e-6);
    }

    #[test]
    fn dice_disjoint_masks_is_near_one() {
        let shape = Shape4::new(1, 1, 2, 2);
        let y = t(shape, vec![1.0, 0.0, 1.0, 0.0]);
        let p = t(shape, vec![0.0, 1.0, 0.0, 1.0]);
        let v = dice_loss(&p, &y, 1e-6).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dice_empty_empty_is_zero() {
        let shape = Shape4::new(1, 1, 2, 2);
        let y = t(shape, vec![0.0; 4]);
        let p = t(shape, vec![0.0; 4]);
        assert_eq!(dice_loss(&p, &y, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn dice_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let shape = Shape4::new(1, 1, 4, 4);
            let p = t(shape, random_pred(16, &mut rng));
            let y = t(shape, random_mask(16, &mut rng));
            let v = dice_loss(&p, &y, 1e-6).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn dice_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let shape = Shape4::new(1, 1, 4, 4);
        let pred = t(shape, random_pred(16, &mut rng));
        let target = t(shape, random_mask(16, &mut rng));
        let err = crate::tensor::finite_diff::finite_diff_check(
            move |g, vars| dice_loss_var(g, vars[0], &target, 1e-6).unwrap(),
            &[pred],
            1e-6,
        );
        assert!(err < 1e-5, "dice gradient error {err}");
    }

    // ── composite ────────────────────────────────────────────────────

    #[test]
    fn composite_reduces_to_each_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let shape = Shape4::new(1, 1, 4, 4);
        let p = t(shape, random_pred(16, &mut rng));
        let y = t(shape, random_mask(16, &mut rng));
        let bce_only = LossConfig {
            alpha: 1.0,
            beta: 0.0,
            ..Default::default()
        };
        let dice_only = LossConfig::dice_only();
        assert_eq!(
            composite_loss(&p, &y, &bce_only).unwrap(),
            bce_loss(&p, &y, bce_only.prob_clamp).unwrap()
        );
        assert_eq!(
            composite_loss(&p, &y, &dice_only).unwrap(),
            dice_loss(&p, &y, dice_only.dice_eps).unwrap()
        );
    }

    #[test]
    fn composite_is_exact_half_half_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..20 {
            let shape = Shape4::new(1, 1, 4, 4);
            let p = t(shape, random_pred(16, &mut rng));
            let y = t(shape, random_mask(16, &mut rng));
            let cfg = LossConfig::default();
            let lhs = composite_loss(&p, &y, &cfg).unwrap();
            let rhs = 0.5 * bce_loss(&p, &y, cfg.prob_clamp).unwrap()
                + 0.5 * dice_loss(&p, &y, cfg.dice_eps).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let shape = Shape4::new(1, 1, 4, 4);
        let pred = t(shape, random_pred(16, &mut rng));
        let target = t(shape, random_mask(16, &mut rng));
        let cfg = LossConfig::default();
        let err = crate::tensor::finite_diff::finite_diff_check(
            move |g, vars| composite_loss_var(g, vars[0], &target, &cfg).unwrap(),
            &[pred],
            1e-6,
        );
        assert!(err < 1e-5, "composite gradient error {err}");
    }

    #[test]
    fn graph_losses_agree_with_evaluators() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let shape = Shape4::new(2, 1, 4, 4);
        let p = t(shape, random_pred(32, &mut rng));
        let y = t(shape, random_mask(32, &mut rng));
        let cfg = LossConfig::default();

        let mut g = Graph::new();
        let pv = g.leaf(p.clone(), false);
        let loss = composite_loss_var(&mut g, pv, &y, &cfg).unwrap();
        let graph_val = g.value(loss).scalar_value();
        let plain_val = composite_loss(&p, &y, &cfg).unwrap();
        assert!((graph_val - plain_val).abs() < 1e-12);
    }

    #[test]
    fn losses_decrease_toward_target() {
        // Moving one coordinate toward its label lowers both losses.
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let shape = Shape4::new(1, 1, 4, 4);
        let p0 = random_pred(16, &mut rng);
        let y = random_mask(16, &mut rng);
        let yt = t(shape, y.clone());
        for j in 0..16 {
            let mut p1 = p0.clone();
            p1[j] += if y[j] == 1.0 { 0.01 } else { -0.01 };
            let before_b = bce_loss(&t(shape, p0.clone()), &yt, 1e-7).unwrap();
            let after_b = bce_loss(&t(shape, p1.clone()), &yt, 1e-7).unwrap();
            assert!(after_b < before_b, "bce not monotone at {j}");
            let before_d = dice_loss(&t(shape, p0.clone()), &yt, 1e-6).unwrap();
            let after_d = dice_loss(&t(shape, p1), &yt, 1e-6).unwrap();
            assert!(after_d < before_d, "dice not monotone at {j}");
        }
    }

    // ── iou / accuracy ───────────────────────────────────────────────

    #[test]
    fn iou_identical_masks() {
        let m = vec![true, false, true, true];
        assert_eq!(iou(&m, &m), 1.0);
    }

    #[test]
    fn iou_disjoint_masks() {
        let a = vec![true, false, true, false];
        let b = vec![false, true, false, true];
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_one_third_case() {
        // |Y|=2, |Ŷ|=2, overlap 1 → TP=1, FP=1, FN=1.
        let pred = vec![true, true, false, false];
        let target = vec![true, false, true, false];
        let c = confusion(&pred, &target);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 1));
        assert!((iou(&pred, &target) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_empty_empty_is_one() {
        let z = vec![false; 8];
        assert_eq!(iou(&z, &z), 1.0);
    }

    #[test]
    fn iou_matches_brute_force_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..100 {
            let n = rng.gen_range(1..64);
            let a: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            let b: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            let mut tp = 0usize;
            let mut union = 0usize;
            for i in 0..n {
                if a[i] && b[i] {
                    tp += 1;
                }
                if a[i] || b[i] {
                    union += 1;
                }
            }
            let expect = if union == 0 {
                1.0
            } else {
                tp as f64 / union as f64
            };
            assert_eq!(iou(&a, &b), expect);
        }
    }

    #[test]
    fn accuracy_cases() {
        let a = vec![true, false, true, false];
        assert_eq!(pixel_accuracy(&a, &a), 1.0);
        let b: Vec<bool> = a.iter().map(|v| !v).collect();
        assert_eq!(pixel_accuracy(&a, &b), 0.0);
        // all-background prediction vs k foreground pixels of n
        let n = 10;
        let k = 3;
        let pred = vec![false; n];
        let mut target = vec![false; n];
        target[..k].fill(true);
        assert!((pixel_accuracy(&pred, &target) - (n - k) as f64 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn iou_one_implies_identical_nonempty_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..50 {
            let n = rng.gen_range(1..32);
            let a: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let b: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            if a.iter().any(|&v| v) && iou(&a, &b) == 1.0 {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn confusion_counts_partition_all_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 57;
        let a: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let b: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        assert_eq!(confusion(&a, &b).total(), n);
    }
}
