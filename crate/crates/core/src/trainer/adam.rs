use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn mirrors(&self, params: &[Tensor<T>]) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape())
    }

    /// One bias-corrected Adam step applied in place.
    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], hp: &AdamParams) -> Result<()> {
        if params.len() != grads.len() || !self.mirrors(params) {
            return shape_err("Adam state, parameters and gradients disagree");
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - hp.beta1), T::lit(1.0 - hp.beta2));
        let c1 = T::lit(1.0 - hp.beta1.powi(t));
        let c2 = T::lit(1.0 - hp.beta2.powi(t));
        let (lr, eps) = (T::lit(hp.lr), T::lit(hp.eps));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() {
                return shape_err(format!("gradient shape {:?} for parameter {:?}", g.shape(), p.shape()));
            }
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub(crate) fn storage_round(&mut self) {
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.data_mut().iter_mut().for_each(|x| *x = x.storage_round());
        }
    }
}
