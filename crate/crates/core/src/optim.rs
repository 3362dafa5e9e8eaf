//! SGD with momentum, Adam and the polynomial learning-rate schedule.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `base_lr · (1 − iter / max_iter)^power`
pub fn poly_lr(base_lr: f64, iter: usize, max_iter: usize, power: f64) -> Result<f64> {
    if max_iter == 0 {
        return Err(CoreError::invalid("poly_lr", "max_iter must be positive"));
    }
    if iter > max_iter {
        return Err(CoreError::invalid(
            "poly_lr",
            format!("iteration {iter} past schedule end {max_iter}"),
        ));
    }
    Ok(base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone)]
pub struct Optimizer<T: Scalar> {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    pub weight_decay: f64,
    step: u64,
    /// Momentum buffer (SGD) or first moment (Adam), one per parameter.
    first: Vec<Vec<T>>,
    /// Second moment (Adam only).
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn sgd(base_lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::SgdMomentum { momentum },
            base_lr,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn adam(base_lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam {
                beta1,
                beta2,
                eps: 1e-8,
            },
            base_lr,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn ensure_state(&mut self, params: &[&mut Tensor<T>]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
            return Ok(());
        }
        if self.first.len() != params.len() {
            return Err(CoreError::invalid(
                "optimizer_step",
                format!("state tracks {} parameters, got {}", self.first.len(), params.len()),
            ));
        }
        for (i, (buf, p)) in self.first.iter().zip(params).enumerate() {
            if buf.len() != p.numel() {
                return Err(CoreError::invalid(
                    "optimizer_step",
                    format!(
                        "state buffer {i} has {} elements, parameter has {}",
                        buf.len(),
                        p.numel()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Applies one update with learning rate `lr` using each parameter's
    /// gradient buffer. Parameters without a gradient are treated as zero-grad.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], lr: f64) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(CoreError::NonFinite(format!("gradient of parameter {i}")));
                }
            }
        }
        self.ensure_state(params)?;
        self.step += 1;
        let wd = T::from_f64_lossy(self.weight_decay);
        let lr_t = T::from_f64_lossy(lr);
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                let m = T::from_f64_lossy(momentum);
                for (p, v) in params.iter_mut().zip(self.first.iter_mut()) {
                    let g = p.grad().map(|g| g.to_vec());
                    let data = p.data_mut();
                    for (j, (w, vel)) in data.iter_mut().zip(v.iter_mut()).enumerate() {
                        let gj = g.as_ref().map_or(T::zero(), |g| g[j]);
                        *vel = m * *vel + gj + wd * *w;
                        *w = *w - lr_t * *vel;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
                let eps = T::from_f64_lossy(eps);
                let bc1 = T::from_f64_lossy(1.0 - beta1.powi(self.step as i32));
                let bc2 = T::from_f64_lossy(1.0 - beta2.powi(self.step as i32));
                for ((p, m1), m2) in params.iter_mut().zip(self.first.iter_mut()).zip(self.second.iter_mut()) {
                    let g = p.grad().map(|g| g.to_vec());
                    let data = p.data_mut();
                    for (j, w) in data.iter_mut().enumerate() {
                        let gj = g.as_ref().map_or(T::zero(), |g| g[j]) + wd * *w;
                        m1[j] = b1 * m1[j] + (T::one() - b1) * gj;
                        m2[j] = b2 * m2[j] + (T::one() - b2) * gj * gj;
                        let mhat = m1[j] / bc1;
                        let vhat = m2[j] / bc2;
                        *w = *w - lr_t * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// State buffers as flat tensors, in parameter order (first moments, then
    /// second moments), plus the step counter.
    pub fn state(&self) -> (Vec<Tensor<T>>, u64) {
        let tensors = self
            .first
            .iter()
            .chain(self.second.iter())
            .map(|b| Tensor::new(&[b.len()], b.clone()).expect("flat buffer"))
            .collect();
        (tensors, self.step)
    }

    pub fn load_state(&mut self, buffers: Vec<Tensor<T>>, step: u64) -> Result<()> {
        let per = match self.kind {
            OptimizerKind::SgdMomentum { .. } => 1,
            OptimizerKind::Adam { .. } => 2,
        };
        if buffers.len() % per != 0 {
            return Err(CoreError::Format(format!(
                "optimizer state has {} buffers, expected a multiple of {per}",
                buffers.len()
            )));
        }
        let mut flat: Vec<Vec<T>> = buffers.into_iter().map(Tensor::into_data).collect();
        let n = flat.len() / per;
        self.second = flat.split_off(n);
        self.first = flat;
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Tensor<f64> {
        let mut p = Tensor::new(&[1], vec![v]).unwrap();
        p.grad_mut()[0] = g;
        p
    }

    #[test]
    fn plain_sgd_step() {
        let mut opt = Optimizer::<f64>::sgd(0.1, 0.0, 0.0);
        let mut p = param(1.0, 2.0);
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        let mut opt = Optimizer::<f64>::sgd(1.0, 0.9, 0.0);
        let mut p = param(0.0, 1.0);
        opt.step(&mut [&mut p], 1.0).unwrap();
        opt.step(&mut [&mut p], 1.0).unwrap();
        // v1 = 1, v2 = 0.9 + 1 = 1.9 → p2 = −(1 + 1.9)
        assert!((p.data()[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        for g in [0.05, -0.5, 3.0, 1e4] {
            let mut opt = Optimizer::<f64>::adam(1e-3, 0.9, 0.999, 0.0);
            let mut p = param(0.3, g);
            opt.step(&mut [&mut p], 1e-3).unwrap();
            assert!(((p.data()[0] - 0.3).abs() - 1e-3).abs() < 1e-9, "g = {g}");
        }
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut opt = Optimizer::<f64>::sgd(0.1, 0.9, 0.0);
        let mut p = param(1.0, f64::NAN);
        assert!(matches!(opt.step(&mut [&mut p], 0.1), Err(CoreError::NonFinite(_))));
    }

    #[test]
    fn state_shape_mismatch_is_rejected() {
        let mut opt = Optimizer::<f64>::sgd(0.1, 0.9, 0.0);
        let mut p = param(1.0, 1.0);
        opt.step(&mut [&mut p], 0.1).unwrap();
        let mut q = Tensor::<f64>::zeros(&[3]);
        assert!(opt.step(&mut [&mut q], 0.1).is_err());
    }

    #[test]
    fn poly_schedule() {
        assert_eq!(poly_lr(2.5e-4, 0, 100, 0.9).unwrap(), 2.5e-4);
        assert_eq!(poly_lr(2.5e-4, 100, 100, 0.9).unwrap(), 0.0);
        let mid = poly_lr(2.5e-4, 50, 100, 0.9).unwrap();
        assert!((mid - 2.5e-4 * 0.5f64.powf(0.9)).abs() < 1e-18);
        assert!(poly_lr(1.0, 0, 0, 0.9).is_err());
    }

    #[test]
    fn state_round_trip() {
        let mut opt = Optimizer::<f64>::adam(1e-3, 0.9, 0.999, 0.0);
        let mut p = param(0.3, 0.7);
        opt.step(&mut [&mut p], 1e-3).unwrap();
        let (bufs, step) = opt.state();
        let mut fresh = Optimizer::<f64>::adam(1e-3, 0.9, 0.999, 0.0);
        fresh.load_state(bufs, step).unwrap();
        let mut p2 = p.clone();
        opt.step(&mut [&mut p], 1e-3).unwrap();
        fresh.step(&mut [&mut p2], 1e-3).unwrap();
        assert_eq!(p.data(), p2.data());
    }
}
