use lumafix_autograd::Tensor;

use crate::error::{Error, Result};
use crate::nn::{ParamGrads, ParamStore};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every parameter in store order.
    pub fn update(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        if grads.grads.len() != store.len() {
            return Err(Error::Invalid(format!(
                "{} gradients for {} parameters",
                grads.grads.len(),
                store.len()
            )));
        }
        if self.m.is_empty() {
            self.m = grads.grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in store.values_mut().zip(&grads.grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return Err(Error::Invalid(format!(
                    "gradient shape {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (pd, gd, md, vd) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
                vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
                pd[i] -= lr * (md[i] / bc1) / ((vd[i] / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        store
            .insert("w", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        let grads = ParamGrads {
            grads: vec![Tensor::from_vec(&[3], vec![0.5, -4.0, 0.0]).unwrap()],
        };
        let mut opt = Adam::new(0.1);
        opt.update(&mut store, &grads).unwrap();
        let w = store.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] - 2.1).abs() < 1e-6);
        assert_eq!(w[2], 3.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        store
            .insert("x", Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap())
            .unwrap();
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let g = store.get("x").unwrap().scale(2.0);
            opt.update(&mut store, &ParamGrads { grads: vec![g] }).unwrap();
        }
        assert!(store.get("x").unwrap().norm() < 1e-3);
    }
}
