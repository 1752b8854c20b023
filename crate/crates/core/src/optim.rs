//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    /// Adaptive moments with decoupled weight decay.
    AdamW,
    /// Plain gradient descent on the loss.
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// When set, the learning rate decays linearly to zero over this many steps.
    pub decay_steps: Option<u64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimizerKind::AdamW,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decay_steps: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }

    /// Learning rate for the step numbered `step` (0-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.decay_steps {
            Some(n) if n > 0 => self.lr * (1.0 - step.min(n) as f64 / n as f64),
            _ => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimState {
    pub fn new(n_params: usize) -> Self {
        OptimState {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// Applies one descent step on `params` given the loss gradient.
///
/// The update is computed in full before any parameter changes, so a
/// non-finite update leaves both `params` and `state` untouched.
pub fn step(
    cfg: &OptimConfig,
    state: &mut OptimState,
    params: &mut [f64],
    grad: &[f64],
) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Input(format!(
            "gradient of length {} for {} parameters",
            grad.len(),
            params.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training("non-finite gradient".into()));
    }
    let lr = cfg.lr_at(state.step);
    let t = (state.step + 1) as i32;
    let (m, v, delta): (Vec<f64>, Vec<f64>, Vec<f64>) = match cfg.kind {
        OptimizerKind::Sgd => (
            state.m.clone(),
            state.v.clone(),
            grad.iter().map(|g| -lr * g).collect(),
        ),
        OptimizerKind::AdamW => {
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let mut m = Vec::with_capacity(grad.len());
            let mut v = Vec::with_capacity(grad.len());
            let mut delta = Vec::with_capacity(grad.len());
            for i in 0..grad.len() {
                let mi = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
                let vi = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                let adam = (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
                delta.push(-lr * (adam + cfg.weight_decay * params[i]));
                m.push(mi);
                v.push(vi);
            }
            (m, v, delta)
        }
    };
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(Error::Training("non-finite parameter update".into()));
    }
    for (p, d) in params.iter_mut().zip(&delta) {
        *p += d;
    }
    state.m = m;
    state.v = v;
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_or_zero_lr_leaves_params() {
        for kind in [OptimizerKind::AdamW, OptimizerKind::Sgd] {
            let cfg = OptimConfig {
                kind,
                ..Default::default()
            };
            let mut p = vec![0.5, -1.0];
            let mut s = OptimState::new(2);
            step(&cfg, &mut s, &mut p, &[0.0, 0.0]).unwrap();
            assert_eq!(p, vec![0.5, -1.0]);

            let cfg = OptimConfig { lr: 0.0, ..cfg };
            step(&cfg, &mut s, &mut p, &[3.0, -2.0]).unwrap();
            assert_eq!(p, vec![0.5, -1.0]);
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let cfg = OptimConfig::default();
        let mut p = vec![0.0, 0.0];
        let mut s = OptimState::new(2);
        step(&cfg, &mut s, &mut p, &[2.0, -0.5]).unwrap();
        assert!((p[0] + 1e-2).abs() < 1e-9);
        assert!((p[1] - 1e-2).abs() < 1e-9);
    }

    #[test]
    fn linear_decay_reaches_zero() {
        let cfg = OptimConfig {
            decay_steps: Some(10),
            ..Default::default()
        };
        assert_eq!(cfg.lr_at(0), 1e-2);
        assert!((cfg.lr_at(5) - 5e-3).abs() < 1e-15);
        assert_eq!(cfg.lr_at(10), 0.0);
        assert_eq!(cfg.lr_at(50), 0.0);
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let cfg = OptimConfig::default();
        let mut p = vec![1.0];
        let mut s = OptimState::new(1);
        let err = step(&cfg, &mut s, &mut p, &[f64::NAN]).unwrap_err();
        assert_eq!(err.kind(), "training");
        assert_eq!(p, vec![1.0]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn sgd_descends_a_quadratic() {
        let cfg = OptimConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.1,
            ..Default::default()
        };
        let mut p = vec![4.0];
        let mut s = OptimState::new(1);
        for _ in 0..200 {
            let g = vec![2.0 * p[0]];
            step(&cfg, &mut s, &mut p, &g).unwrap();
        }
        assert!(p[0].abs() < 1e-6);
    }
}
