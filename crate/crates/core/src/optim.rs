//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Adam { config, m, v, step: 0 }
    }

    /// Apply one update in place.
    pub fn update(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam over {} moments got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch(format!(
                    "adam slot {i}: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for j in 0..p.len() {
                let gj = g.data()[j].as_f64();
                let mj = beta1 * m[j].as_f64() + (1.0 - beta1) * gj;
                let vj = beta2 * v[j].as_f64() + (1.0 - beta2) * gj * gj;
                m[j] = T::lit(mj);
                v[j] = T::lit(vj);
                let m_hat = mj / c1;
                let v_hat = vj / c2;
                p[j] = T::lit(p[j].as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::default(), [&p]);
        opt.update(vec![&mut p], &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::<f64>::new(vec![2], vec![0.0, 0.0]).unwrap();
        let g = Tensor::new(vec![2], vec![3.0, -0.25]).unwrap();
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg, [&p]);
        opt.update(vec![&mut p], std::slice::from_ref(&g)).unwrap();
        // m̂ = g, v̂ = g², so Δ = -lr · g / (|g| + ε)
        for (pj, gj) in p.data().iter().zip(g.data()) {
            let expected = -cfg.lr * gj / (gj.abs() + cfg.eps);
            assert!((pj - expected).abs() < 1e-15);
            assert!((pj.abs() - cfg.lr).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = Tensor::<f32>::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
            let mut opt = Adam::new(AdamConfig::default(), [&p]);
            for k in 0..20 {
                let g = p.map(|x| x * x - 0.01 * k as f32);
                opt.update(vec![&mut p], &[g]).unwrap();
            }
            p
        };
        assert_eq!(run().data(), run().data());
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let mut opt = Adam::new(AdamConfig::default(), [&p]);
        assert!(opt.update(vec![&mut p], &[Tensor::zeros(&[3])]).is_err());
        assert_eq!(opt.step, 0);
    }
}
