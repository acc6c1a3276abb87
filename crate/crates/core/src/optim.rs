//! Adaptive-moment optimizer with decoupled weight decay and per-group
//! learning rates.

use avloc_tensor::{Float, Tensor};

use crate::params::{Group, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<F> {
    pub lr_head: f64,
    pub lr_rest: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Updates applied so far (shared bias-correction clock).
    pub step: u64,
    pub first: Vec<Tensor<F>>,
    pub second: Vec<Tensor<F>>,
}

impl<F: Float> AdamW<F> {
    pub fn new(store: &ParamStore<F>, lr_head: f64, lr_rest: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let zeros = || store.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        Self { lr_head, lr_rest, beta1, beta2, eps: 1e-8, weight_decay, step: 0, first: zeros(), second: zeros() }
    }

    /// One update from `(param, gradient)` pairs. Parameters without a
    /// gradient this step are left alone. Weight decay skips vectors
    /// (biases, normalization affines, scalar rates).
    pub fn update(&mut self, store: &mut ParamStore<F>, grads: &[(ParamId, Tensor<F>)]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (F::from_f64(self.beta1), F::from_f64(self.beta2));
        let (ob1, ob2) = (F::one() - b1, F::one() - b2);
        for (id, grad) in grads {
            let i = id.0;
            let param = store.get_mut(*id);
            let lr = match param.group {
                Group::Head => self.lr_head,
                Group::Rest => self.lr_rest,
            };
            let decay = if param.value.ndim() > 1 { F::from_f64(1.0 - lr * self.weight_decay) } else { F::one() };
            let step = F::from_f64(lr / c1);
            let inv_c2 = F::from_f64(1.0 / c2);
            let eps = F::from_f64(self.eps);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &g), m), v) in param.value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                *w = *w * decay - step * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
    }
}
