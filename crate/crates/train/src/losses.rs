//! Loss terms over batched `[N, C, H, W]` probability maps.
//!
//! Every function is pure and returns the scalar loss (as `f64`) together
//! with gradients for the trainable inputs only. Targets that must not
//! receive gradient (stabilization targets, pseudo-labels, the real branch
//! of feature matching) simply have no gradient output.

use serde::{Deserialize, Serialize};
use warpseg_core::{CoreError, Scalar, Tensor};

use crate::error::{Result, TrainError};

/// Label value excluded from the supervised loss and from evaluation.
pub const IGNORE_LABEL: u8 = 255;

/// Probabilities are floored here before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Consistency weight.
    pub lambda1: f64,
    /// Stabilization weight.
    pub lambda2: f64,
    /// Adversarial weight.
    pub lambda3: f64,
    pub lambda_fm: f64,
    pub lambda_st: f64,
    /// Confidence threshold for stable pixels.
    pub xi: f64,
    /// Discriminator score needed to open the self-training gate.
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 10.0,
            lambda2: 1.0,
            lambda3: 100.0,
            lambda_fm: 0.1,
            lambda_st: 1.0,
            xi: 0.6,
            gamma: 0.6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda_fm", self.lambda_fm),
            ("lambda_st", self.lambda_st),
        ];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        for (name, v) in [("xi", self.xi), ("gamma", self.gamma)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(TrainError::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-student loss components of one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub ce: f64,
    pub cons: f64,
    pub sta: f64,
    pub d: f64,
    pub fm: f64,
    pub st: f64,
}

impl LossTerms {
    pub fn adversarial(&self, cfg: &LossConfig) -> f64 {
        cfg.lambda_fm * self.fm + self.d + cfg.lambda_st * self.st
    }

    pub fn student_total(&self, cfg: &LossConfig) -> f64 {
        self.ce + cfg.lambda1 * self.cons + cfg.lambda2 * self.sta + cfg.lambda3 * self.adversarial(cfg)
    }
}

/// Sum of both students' weighted objectives. Bookkeeping only: the D term
/// is optimized by the discriminators, everything else by the students.
pub fn total_loss(a: &LossTerms, b: &LossTerms, cfg: &LossConfig) -> f64 {
    a.student_total(cfg) + b.student_total(cfg)
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<[usize; 4]> {
    let dims = a.dims4(op)?;
    if a.shape() != b.shape() {
        return Err(CoreError::ShapeMismatch {
            op,
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        }
        .into());
    }
    Ok(dims)
}

fn floor<T: Scalar>(p: T) -> f64 {
    p.to_f64_lossy().max(PROB_FLOOR)
}

/// Pixel-mean negative log-likelihood of the labelled class. Pixels labelled
/// [`IGNORE_LABEL`] are skipped and do not count towards the mean.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[u8]) -> Result<(f64, Tensor<T>)> {
    let [n, c, h, w] = probs.dims4("cross_entropy")?;
    let plane = h * w;
    if labels.len() != n * plane {
        return Err(CoreError::ShapeMismatch {
            op: "cross_entropy",
            expected: vec![n, h, w],
            actual: vec![labels.len()],
        }
        .into());
    }
    let mut valid = 0usize;
    for &l in labels {
        if l == IGNORE_LABEL {
            continue;
        }
        if l as usize >= c {
            return Err(CoreError::invalid("cross_entropy", format!("label {l} outside 0..{c}")).into());
        }
        valid += 1;
    }
    let mut grad = Tensor::zeros(probs.shape());
    if valid == 0 {
        return Ok((0.0, grad));
    }
    let p = probs.data();
    let g = grad.data_mut();
    let mut total = 0.0;
    for b in 0..n {
        for q in 0..plane {
            let l = labels[b * plane + q];
            if l == IGNORE_LABEL {
                continue;
            }
            let i = (b * c + l as usize) * plane + q;
            let pv = floor(p[i]);
            total -= pv.ln();
            g[i] = T::from_f64_lossy(-1.0 / (pv * valid as f64));
        }
    }
    Ok((total / valid as f64, grad))
}

/// ε per pixel: squared difference summed over channels, shape `[N, H, W]`.
pub fn consistency_error<T: Scalar>(pred_of_warped: &Tensor<T>, warped_pred: &Tensor<T>) -> Result<Vec<f64>> {
    let [n, c, h, w] = same_shape(pred_of_warped, warped_pred, "consistency_error")?;
    let plane = h * w;
    let (a, b) = (pred_of_warped.data(), warped_pred.data());
    let mut eps = vec![0.0; n * plane];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            for q in 0..plane {
                let d = (a[base + q] - b[base + q]).to_f64_lossy();
                eps[s * plane + q] += d * d;
            }
        }
    }
    Ok(eps)
}

#[derive(Debug, Clone)]
pub struct ConsistencyLoss<T: Scalar> {
    pub loss: f64,
    pub eps: Vec<f64>,
    pub grad_pred_of_warped: Tensor<T>,
    pub grad_warped_pred: Tensor<T>,
}

/// Mean of ε over all pixels; the gradient reaches both inputs.
pub fn consistency_loss<T: Scalar>(pred_of_warped: &Tensor<T>, warped_pred: &Tensor<T>) -> Result<ConsistencyLoss<T>> {
    let eps = consistency_error(pred_of_warped, warped_pred)?;
    let pixels = eps.len() as f64;
    let loss = eps.iter().sum::<f64>() / pixels;
    let scale = T::from_f64_lossy(2.0 / pixels);
    let grad_a = pred_of_warped.zip_map(warped_pred, "consistency_loss", |a, b| scale * (a - b))?;
    let grad_b = grad_a.scale(-T::one());
    Ok(ConsistencyLoss {
        loss,
        eps,
        grad_pred_of_warped: grad_a,
        grad_warped_pred: grad_b,
    })
}

/// Index of the largest channel at pixel `q` of sample `s`; ties go to the
/// lowest index.
fn argmax_at<T: Scalar>(data: &[T], c: usize, plane: usize, s: usize, q: usize) -> (usize, T) {
    let mut best = (0, data[s * c * plane + q]);
    for ch in 1..c {
        let v = data[(s * c + ch) * plane + q];
        if v > best.1 {
            best = (ch, v);
        }
    }
    best
}

/// Stable pixels: both maps agree on the argmax class and at least one of
/// them is more confident than `xi`. Returns `{0, 1}` per pixel, `[N, H, W]`.
pub fn stable_mask<T: Scalar>(pred_of_warped: &Tensor<T>, warped_pred: &Tensor<T>, xi: f64) -> Result<Vec<u8>> {
    let [n, c, h, w] = same_shape(pred_of_warped, warped_pred, "stable_mask")?;
    let plane = h * w;
    let (a, b) = (pred_of_warped.data(), warped_pred.data());
    let mut r = vec![0u8; n * plane];
    for s in 0..n {
        for q in 0..plane {
            let (ka, va) = argmax_at(a, c, plane, s, q);
            let (kb, vb) = argmax_at(b, c, plane, s, q);
            let confident = va.to_f64_lossy() > xi || vb.to_f64_lossy() > xi;
            r[s * plane + q] = (ka == kb && confident) as u8;
        }
    }
    Ok(r)
}

/// Stability scores and consistency errors of both students on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StableMask {
    pub r_a: Vec<u8>,
    pub r_b: Vec<u8>,
    pub eps_a: Vec<f64>,
    pub eps_b: Vec<f64>,
}

impl StableMask {
    /// `pw_*` is a student's prediction of the warped batch, `wp_*` the warp
    /// of its prediction of the original batch.
    pub fn compute<T: Scalar>(
        pw_a: &Tensor<T>,
        wp_a: &Tensor<T>,
        pw_b: &Tensor<T>,
        wp_b: &Tensor<T>,
        xi: f64,
    ) -> Result<Self> {
        same_shape(pw_a, pw_b, "stable_mask")?;
        Ok(StableMask {
            r_a: stable_mask(pw_a, wp_a, xi)?,
            r_b: stable_mask(pw_b, wp_b, xi)?,
            eps_a: consistency_error(pw_a, wp_a)?,
            eps_b: consistency_error(pw_b, wp_b)?,
        })
    }

    pub fn len(&self) -> usize {
        self.r_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_a.is_empty()
    }

    /// Whether student A learns from B at pixel `i`.
    pub fn a_learns(&self, i: usize) -> bool {
        match (self.r_a[i], self.r_b[i]) {
            (0, 1) => true,
            (1, 1) => !(self.eps_a[i] < self.eps_b[i]),
            _ => false,
        }
    }

    /// Whether student B learns from A at pixel `i`.
    pub fn b_learns(&self, i: usize) -> bool {
        match (self.r_a[i], self.r_b[i]) {
            (1, 0) => true,
            (1, 1) => !(self.eps_b[i] < self.eps_a[i]),
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StabilizationLoss<T: Scalar> {
    pub loss_a: f64,
    pub loss_b: f64,
    /// Gradient of `loss_a` with respect to student A's map (B detached).
    pub grad_a: Tensor<T>,
    /// Gradient of `loss_b` with respect to student B's map (A detached).
    pub grad_b: Tensor<T>,
}

/// Cross-student squared error on stable pixels; the less stable student
/// learns from the more stable one, whose map is a constant target.
pub fn stabilization_loss<T: Scalar>(
    student_a: &Tensor<T>,
    student_b: &Tensor<T>,
    mask: &StableMask,
) -> Result<StabilizationLoss<T>> {
    let [n, c, h, w] = same_shape(student_a, student_b, "stabilization_loss")?;
    let plane = h * w;
    let pixels = n * plane;
    for len in [mask.r_b.len(), mask.eps_a.len(), mask.eps_b.len(), mask.len()] {
        if len != pixels {
            return Err(CoreError::ShapeMismatch {
                op: "stabilization_loss",
                expected: vec![n, h, w],
                actual: vec![len],
            }
            .into());
        }
    }
    let (a, b) = (student_a.data(), student_b.data());
    let mut grad_a = Tensor::zeros(student_a.shape());
    let mut grad_b = Tensor::zeros(student_b.shape());
    let (mut sum_a, mut sum_b) = (0.0, 0.0);
    let scale = 2.0 / pixels as f64;
    for s in 0..n {
        for q in 0..plane {
            let i = s * plane + q;
            let (la, lb) = (mask.a_learns(i), mask.b_learns(i));
            if !la && !lb {
                continue;
            }
            let mut mse = 0.0;
            for ch in 0..c {
                let k = (s * c + ch) * plane + q;
                let d = (a[k] - b[k]).to_f64_lossy();
                mse += d * d;
                if la {
                    grad_a.data_mut()[k] = T::from_f64_lossy(scale * d);
                }
                if lb {
                    grad_b.data_mut()[k] = T::from_f64_lossy(-scale * d);
                }
            }
            if la {
                sum_a += mse;
            }
            if lb {
                sum_b += mse;
            }
        }
    }
    Ok(StabilizationLoss {
        loss_a: sum_a / pixels as f64,
        loss_b: sum_b / pixels as f64,
        grad_a,
        grad_b,
    })
}

fn check_score(s: f64, what: &str) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(CoreError::invalid("discriminator_loss", format!("{what} score {s} outside (0, 1)")).into());
    }
    Ok(())
}

/// `−mean[ln real] − mean[ln(1 − fake)]` over the batch, with gradients with
/// respect to each score.
pub fn discriminator_loss(real: &[f64], fake: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if real.is_empty() || fake.is_empty() {
        return Err(CoreError::invalid("discriminator_loss", "empty score batch").into());
    }
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    let mut loss = 0.0;
    let mut g_real = Vec::with_capacity(real.len());
    for &s in real {
        check_score(s, "real")?;
        loss -= s.ln() / nr;
        g_real.push(-1.0 / (s * nr));
    }
    let mut g_fake = Vec::with_capacity(fake.len());
    for &s in fake {
        check_score(s, "fake")?;
        loss -= (1.0 - s).ln() / nf;
        g_fake.push(1.0 / ((1.0 - s) * nf));
    }
    Ok((loss, g_real, g_fake))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Same objective as [`discriminator_loss`] evaluated from pre-sigmoid
/// logits, which stays finite when a score saturates in single precision.
pub fn discriminator_loss_logits(real: &[f64], fake: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if real.is_empty() || fake.is_empty() {
        return Err(CoreError::invalid("discriminator_loss", "empty score batch").into());
    }
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    let mut loss = 0.0;
    let g_real = real
        .iter()
        .map(|&z| {
            loss += softplus(-z) / nr;
            -(1.0 - sigmoid(z)) / nr
        })
        .collect();
    let g_fake = fake
        .iter()
        .map(|&z| {
            loss += softplus(z) / nf;
            sigmoid(z) / nf
        })
        .collect();
    if !loss.is_finite() {
        return Err(CoreError::NonFinite("discriminator loss".into()).into());
    }
    Ok((loss, g_real, g_fake))
}

/// L1 distance between batch-mean features, averaged over feature elements.
/// Only the fake branch receives a gradient.
pub fn feature_matching_loss<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if real.rank() < 1 || fake.rank() < 1 || real.shape()[1..] != fake.shape()[1..] {
        return Err(CoreError::ShapeMismatch {
            op: "feature_matching_loss",
            expected: real.shape().to_vec(),
            actual: fake.shape().to_vec(),
        }
        .into());
    }
    let (nr, nf) = (real.shape()[0], fake.shape()[0]);
    if nr == 0 || nf == 0 {
        return Err(CoreError::invalid("feature_matching_loss", "empty feature batch").into());
    }
    let e = real.numel() / nr;
    let mean = |t: &Tensor<T>, n: usize| -> Vec<f64> {
        let mut m = vec![0.0; e];
        for row in t.data().chunks_exact(e) {
            for (acc, v) in m.iter_mut().zip(row) {
                *acc += v.to_f64_lossy();
            }
        }
        m.iter_mut().for_each(|v| *v /= n as f64);
        m
    };
    let (mr, mf) = (mean(real, nr), mean(fake, nf));
    let loss = mr.iter().zip(&mf).map(|(r, f)| (r - f).abs()).sum::<f64>() / e as f64;
    let row: Vec<T> = mr
        .iter()
        .zip(&mf)
        .map(|(r, f)| {
            let sign = if f > r {
                1.0
            } else if f < r {
                -1.0
            } else {
                0.0
            };
            T::from_f64_lossy(sign / (e * nf) as f64)
        })
        .collect();
    let mut grad = Tensor::zeros(fake.shape());
    for chunk in grad.data_mut().chunks_exact_mut(e) {
        chunk.copy_from_slice(&row);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct SelfTrainingLoss<T: Scalar> {
    pub loss: f64,
    pub grad: Tensor<T>,
    /// Fraction of images whose gate opened.
    pub gate_open: f64,
}

/// Cross-entropy against the map's own argmax for every image whose
/// discriminator score reaches `gamma`; closed images contribute zero.
/// Each image is normalized by its full pixel count, then averaged.
pub fn self_training_loss<T: Scalar>(probs: &Tensor<T>, scores: &[f64], gamma: f64) -> Result<SelfTrainingLoss<T>> {
    let [n, c, h, w] = probs.dims4("self_training_loss")?;
    if scores.len() != n {
        return Err(CoreError::ShapeMismatch {
            op: "self_training_loss",
            expected: vec![n],
            actual: vec![scores.len()],
        }
        .into());
    }
    let plane = h * w;
    let p = probs.data();
    let mut grad = Tensor::zeros(probs.shape());
    let mut total = 0.0;
    let mut open = 0usize;
    let norm = (plane * n) as f64;
    for (s, &score) in scores.iter().enumerate() {
        if !(score >= gamma) {
            continue;
        }
        open += 1;
        for q in 0..plane {
            let (k, v) = argmax_at(p, c, plane, s, q);
            let pv = floor(v);
            total -= pv.ln();
            grad.data_mut()[(s * c + k) * plane + q] = T::from_f64_lossy(-1.0 / (pv * norm));
        }
    }
    Ok(SelfTrainingLoss {
        loss: total / norm,
        grad,
        gate_open: open as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(c: usize, values: &[f64]) -> Tensor<f64> {
        let hw = values.len() / c;
        Tensor::new(&[1, c, 1, hw], values.to_vec()).unwrap()
    }

    #[test]
    fn weighted_total_with_unit_components() {
        let unit = LossTerms {
            ce: 1.0,
            cons: 1.0,
            sta: 1.0,
            d: 1.0,
            fm: 1.0,
            st: 1.0,
        };
        let cfg = LossConfig::default();
        assert!((unit.student_total(&cfg) - 222.0).abs() < 1e-12);
        assert!((total_loss(&unit, &unit, &cfg) - 444.0).abs() < 1e-12);
        assert_eq!(total_loss(&LossTerms::default(), &LossTerms::default(), &cfg), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            xi: 1.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossConfig {
            lambda2: -1.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cross_entropy_perfect_and_uniform() {
        let p = map(2, &[1.0 - 1e-9, 1e-9, 1e-9, 1.0 - 1e-9]);
        let (loss, _) = cross_entropy(&p, &[0, 1]).unwrap();
        assert!(loss < 1e-8);
        let u = Tensor::<f64>::full(&[2, 4, 3, 3], 0.25);
        let labels: Vec<u8> = (0..18).map(|i| (i * 7 % 4) as u8).collect();
        let (loss, _) = cross_entropy(&u, &labels).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_ignores_marked_pixels_and_rejects_bad_labels() {
        let p = map(2, &[0.5, 0.9, 0.5, 0.1]);
        let (loss, grad) = cross_entropy(&p, &[IGNORE_LABEL, 0]).unwrap();
        assert!((loss + 0.9f64.ln()).abs() < 1e-15);
        assert_eq!(grad.data()[0], 0.0);
        assert!(cross_entropy(&p, &[2, 0]).is_err());
        let (loss, _) = cross_entropy(&p, &[IGNORE_LABEL, IGNORE_LABEL]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn consistency_single_entry() {
        let a = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        let mut b = a.clone();
        b.data_mut()[4 + 3] = 0.5;
        let eps = consistency_error(&a, &b).unwrap();
        assert_eq!(eps, vec![0.0, 0.0, 0.0, 0.25]);
        let l = consistency_loss(&a, &b).unwrap();
        assert!((l.loss - 0.25 / 4.0).abs() < 1e-15);
        let same = consistency_loss(&a, &a).unwrap();
        assert_eq!(same.loss, 0.0);
        assert!(same.grad_pred_of_warped.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stable_mask_cases() {
        let confident = map(2, &[0.9, 0.1]);
        assert_eq!(stable_mask(&confident, &confident, 0.6).unwrap(), vec![1]);
        let flipped = map(2, &[0.1, 0.9]);
        assert_eq!(stable_mask(&confident, &flipped, 0.6).unwrap(), vec![0]);
        let weak = map(3, &[0.4, 0.3, 0.3]);
        assert_eq!(stable_mask(&weak, &weak, 0.6).unwrap(), vec![0]);
    }

    #[test]
    fn one_sided_stability() {
        let a = map(2, &[0.9, 0.2, 0.1, 0.8]);
        let b = map(2, &[0.7, 0.5, 0.3, 0.5]);
        let mask = StableMask {
            r_a: vec![1, 1],
            r_b: vec![0, 0],
            eps_a: vec![0.0; 2],
            eps_b: vec![0.0; 2],
        };
        let l = stabilization_loss(&a, &b, &mask).unwrap();
        assert_eq!(l.loss_a, 0.0);
        let expected = ((0.2f64.powi(2) + 0.2f64.powi(2)) + (0.3f64.powi(2) + 0.3f64.powi(2))) / 2.0;
        assert!((l.loss_b - expected).abs() < 1e-15);
        assert!(l.grad_a.data().iter().all(|v| *v == 0.0));
        let same = stabilization_loss(&a, &a, &mask).unwrap();
        assert_eq!((same.loss_a, same.loss_b), (0.0, 0.0));
    }

    #[test]
    fn discriminator_loss_reference_points() {
        let (l, gr, gf) = discriminator_loss(&[0.5], &[0.5]).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!((gr[0], gf[0]), (-2.0, 2.0));
        let (l, _, _) = discriminator_loss(&[1.0 - 1e-12], &[1e-12]).unwrap();
        assert!(l < 1e-11);
        assert!(discriminator_loss(&[1.0], &[0.5]).is_err());
        assert!(discriminator_loss(&[0.5], &[0.0]).is_err());
        let (ll, _, _) = discriminator_loss_logits(&[0.3, -1.0], &[2.0]).unwrap();
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (lp, _, _) = discriminator_loss(&[s(0.3), s(-1.0)], &[s(2.0)]).unwrap();
        assert!((ll - lp).abs() < 1e-14);
    }

    #[test]
    fn feature_matching_shift() {
        let real = Tensor::<f64>::from_fn(&[3, 2, 2, 2], |i| (i as f64).sin());
        let fake = real.map(|v| v - 0.75);
        let (l, _) = feature_matching_loss(&real, &fake).unwrap();
        assert!((l - 0.75).abs() < 1e-14);
        let (l, g) = feature_matching_loss(&real, &real).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn self_training_gate() {
        let p = map(2, &[0.7, 0.2, 0.3, 0.8]);
        let closed = self_training_loss(&p, &[0.5], 0.6).unwrap();
        assert_eq!(closed.loss, 0.0);
        assert_eq!(closed.gate_open, 0.0);
        assert!(closed.grad.data().iter().all(|v| *v == 0.0));
        let open = self_training_loss(&p, &[0.6], 0.6).unwrap();
        assert!((open.loss + (0.7f64.ln() + 0.8f64.ln()) / 2.0).abs() < 1e-15);
        assert_eq!(open.gate_open, 1.0);
        let sharp = map(2, &[1.0 - 1e-10, 1e-10, 1e-10, 1.0 - 1e-10]);
        assert!(self_training_loss(&sharp, &[0.9], 0.6).unwrap().loss < 1e-8);
    }
}
