use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

/// Adam hyperparameters and a log-linear learning-rate schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr_start: 1e-3, lr_end: 1e-5, epochs: 30, beta1: 0.9, beta2: 0.999, eps: 1e-8, batch_size: 64 }
    }
}

impl AdamConfig {
    /// `lr_start * (lr_end / lr_start)^(epoch / (epochs - 1))`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_start > 0.0
            && self.lr_end > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First/second moment accumulators for one parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self { m: zeros(), v: zeros(), step: 0 }
    }

    /// One bias-corrected Adam update with learning rate `lr`.
    pub fn step(&mut self, cfg: &AdamConfig, lr: f64, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let one = T::one();
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = T::lit(lr);
        let eps = T::lit(cfg.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape(format!("adam: parameter {i} shape {:?} vs grad {:?}", p.shape(), g.shape())));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = AdamConfig::default();
        assert!((cfg.learning_rate(0) - 1e-3).abs() < 1e-18);
        assert!((cfg.learning_rate(29) - 1e-5).abs() < 1e-18);
        // log-midpoint
        let mid = AdamConfig { epochs: 3, ..cfg };
        assert!((mid.learning_rate(1) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_no_change() {
        let mut p = Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5f64]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&[&p]);
        st.step(&AdamConfig::default(), 1e-3, &mut [&mut p], &[Tensor::zeros(vec![3])]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn unit_gradient_moves_by_lr() {
        let mut p = Tensor::from_vec(vec![1], vec![0.0f64]).unwrap();
        let mut st = AdamState::new(&[&p]);
        let cfg = AdamConfig::default();
        st.step(&cfg, 1e-3, &mut [&mut p], &[Tensor::filled(vec![1], 1.0)]).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        assert!((p.data()[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = Tensor::<f64>::zeros(vec![2]);
        let mut st = AdamState::new(&[&p]);
        assert!(st.step(&AdamConfig::default(), 1e-3, &mut [&mut p], &[Tensor::zeros(vec![3])]).is_err());
    }
}
