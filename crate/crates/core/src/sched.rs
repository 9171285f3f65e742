//! Adam, the poly learning-rate decay, the Gaussian ramp-up of the
//! consistency weight and the EMA teacher update.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ParamVector;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub lr_init: f64,
    pub poly_power: f64,
    pub epochs_total: usize,
    /// Final consistency weight.
    pub gamma: f64,
    /// Index of the last optimization step.
    pub t_max: usize,
    pub ema_alpha: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lr_init: 1e-4,
            poly_power: 0.9,
            epochs_total: 100,
            gamma: 200.0,
            t_max: 0,
            ema_alpha: 0.99,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::InvalidConfig("ema alpha must lie in [0, 1)"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidConfig("gamma must be positive"));
        }
        if !(self.poly_power > 0.0) {
            return Err(Error::InvalidConfig("poly power must be positive"));
        }
        if !(self.lr_init > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive"));
        }
        if self.epochs_total == 0 {
            return Err(Error::InvalidConfig("epochs must be positive"));
        }
        Ok(())
    }
}

/// `lr_init * (1 - epoch / epochs_total)^power`, zero from `epochs_total` on.
pub fn poly_lr(epoch: usize, cfg: &ScheduleConfig) -> f64 {
    let remaining = 1.0 - epoch as f64 / cfg.epochs_total as f64;
    cfg.lr_init * libm::pow(remaining.max(0.0), cfg.poly_power)
}

/// `gamma * exp(-5 (1 - t / t_max)^2)`, held at `gamma` from `t_max` on.
pub fn ramp_lambda(t: usize, cfg: &ScheduleConfig) -> f64 {
    if t >= cfg.t_max {
        return cfg.gamma;
    }
    let phase = 1.0 - t as f64 / cfg.t_max as f64;
    cfg.gamma * libm::exp(-5.0 * phase * phase)
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    for len in [grads.len(), state.m.len(), state.v.len()] {
        if len != params.len() {
            return Err(Error::SizeMismatch {
                expected: params.len(),
                actual: len,
            });
        }
    }
    state.t += 1;
    let bc1 = 1.0 - libm::pow(ADAM_BETA1, state.t as f64);
    let bc2 = 1.0 - libm::pow(ADAM_BETA2, state.t as f64);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (libm::sqrt(v_hat) + ADAM_EPS);
    }
    Ok(())
}

/// `teacher <- alpha * teacher + (1 - alpha) * student`, element-wise.
///
/// Evaluated as `teacher + (1 - alpha) * (student - teacher)` so a shared
/// value is an exact fixed point.
pub fn ema_update(teacher: &mut ParamVector, student: &ParamVector, alpha: f64) -> Result<()> {
    teacher.check_layout(student)?;
    for (t, &s) in teacher.values_mut().iter_mut().zip(student.values()) {
        *t += (1.0 - alpha) * (s - *t);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layout;

    fn cfg(epochs: usize, t_max: usize) -> ScheduleConfig {
        ScheduleConfig {
            epochs_total: epochs,
            t_max,
            ..Default::default()
        }
    }

    #[test]
    fn poly_lr_values() {
        let c = cfg(100, 0);
        assert_eq!(poly_lr(0, &c), 1e-4);
        assert_eq!(poly_lr(100, &c), 0.0);
        assert!((poly_lr(50, &c) - 5.358867312681466e-5).abs() < 1e-15);
        assert!((poly_lr(50, &c) - 1e-4 * libm::pow(0.5, 0.9)).abs() < 1e-18);
        for e in 0..100 {
            assert!(poly_lr(e + 1, &c) < poly_lr(e, &c));
            assert!(poly_lr(e, &c) <= c.lr_init);
        }
    }

    #[test]
    fn ramp_values() {
        let c = cfg(10, 1000);
        assert_eq!(ramp_lambda(1000, &c), 200.0);
        assert!((ramp_lambda(0, &c) / 200.0 - 0.006737946999085467).abs() < 1e-12);
        assert!((ramp_lambda(500, &c) - 200.0 * libm::exp(-1.25)).abs() < 1e-12);
        let mut prev = 0.0;
        for t in 0..=1000 {
            let l = ramp_lambda(t, &c);
            assert!(l >= prev && l <= 200.0 && l >= 0.0);
            prev = l;
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(10, 10).validate().is_ok());
        assert!(ScheduleConfig { ema_alpha: 1.0, ..cfg(10, 10) }.validate().is_err());
        assert!(ScheduleConfig { gamma: 0.0, ..cfg(10, 10) }.validate().is_err());
        assert!(cfg(0, 10).validate().is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 1e-2).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = vec![0.0; 4];
        let g = [0.3, -7.0, 1e-3, 250.0];
        let mut s = AdamState::new(4);
        adam_step(&mut p, &g, &mut s, 1e-4).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
            let expected = -1e-4 * gi / (gi.abs() + ADAM_EPS);
            assert!((pi - expected).abs() < 1e-18);
            assert!((pi.abs() - 1e-4).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_matches_scalar_reference() {
        // Scalar Adam on f(x) = (x - 3)^2, written out independently.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.05f64);
        let (mut x, mut m, mut v) = (-1.0f64, 0.0f64, 0.0f64);
        let mut p = vec![-1.0];
        let mut s = AdamState::new(1);
        for t in 1..=100 {
            let g = 2.0 * (x - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);

            let g = [2.0 * (p[0] - 3.0)];
            adam_step(&mut p, &g, &mut s, lr).unwrap();
            assert!((p[0] - x).abs() < 1e-10, "step {t}");
        }
    }

    #[test]
    fn adam_rejects_length_mismatch() {
        let mut p = vec![0.0; 3];
        assert!(adam_step(&mut p, &[0.0; 2], &mut AdamState::new(3), 0.1).is_err());
        assert!(adam_step(&mut p, &[0.0; 3], &mut AdamState::new(2), 0.1).is_err());
    }

    fn pv(values: Vec<f64>) -> ParamVector {
        ParamVector::from_values(Layout::new(1, 2), values).unwrap()
    }

    #[test]
    fn ema_fixed_point_and_alpha_zero() {
        let n = Layout::new(1, 2).len();
        let s = pv((0..n).map(|i| i as f64 * 0.1).collect());
        let mut t = s.clone();
        ema_update(&mut t, &s, 0.99).unwrap();
        assert_eq!(t, s);

        let mut t = pv(vec![5.0; n]);
        ema_update(&mut t, &s, 0.0).unwrap();
        for (a, b) in t.values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn ema_contracts_geometrically() {
        let n = Layout::new(1, 2).len();
        let student = pv((0..n).map(|i| libm::sin(i as f64)).collect());
        let mut teacher = pv((0..n).map(|i| libm::cos(i as f64) * 3.0).collect());
        let dist = |a: &ParamVector| {
            libm::sqrt(a.values().iter().zip(student.values()).map(|(x, y)| (x - y) * (x - y)).sum())
        };
        let d0 = dist(&teacher);
        for k in 1..=10 {
            ema_update(&mut teacher, &student, 0.99).unwrap();
            let expected = libm::pow(0.99, k as f64) * d0;
            assert!((dist(&teacher) - expected).abs() / expected < 1e-6);
        }
    }

    #[test]
    fn ema_rejects_layout_mismatch() {
        let mut t = ParamVector::zeros(Layout::new(1, 2));
        assert!(ema_update(&mut t, &ParamVector::zeros(Layout::new(2, 2)), 0.5).is_err());
    }
}
