use crate::{ParamSet, Result, Scalar, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment buffers and step counter of an Adam optimizer, indexed like the
/// parameter set they were created for.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamSet<S>, config: AdamConfig) -> Self {
        let zeros = |p: &ParamSet<S>| p.iter().map(|(_, t)| vec![S::zero(); t.len()]).collect();
        AdamState { config, t: 0, m: zeros(params), v: zeros(params) }
    }

    /// One bias-corrected Adam update. Every parameter must carry a gradient.
    pub fn step(&mut self, params: &mut ParamSet<S>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(TensorError::invalid("adam", "state does not match parameter set"));
        }
        for (name, t) in params.iter() {
            if t.grad().is_none() {
                return Err(TensorError::MissingGrad(name.to_string()));
            }
        }
        self.t += 1;
        let c = self.config;
        let b1 = S::from_f64(c.beta1);
        let b2 = S::from_f64(c.beta2);
        let one = S::one();
        let bc1 = S::from_f64(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = S::from_f64(1.0 - c.beta2.powi(self.t as i32));
        let lr = S::from_f64(c.lr);
        let eps = S::from_f64(c.eps);
        for i in 0..params.len() {
            let (_, t) = params.by_index_mut(i);
            let g = t.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &gi), mi), vi) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
