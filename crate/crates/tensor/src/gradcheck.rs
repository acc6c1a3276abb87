//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Comparison of analytic and numeric gradients for one input.
#[derive(Clone, Debug)]
pub struct GradCheck<F> {
    pub analytic: Tensor<F>,
    pub numeric: Tensor<F>,
}

impl<F: Float> GradCheck<F> {
    /// Largest elementwise discrepancy, relative to the largest gradient
    /// magnitude of either estimate. Exact zeros on both sides give 0.
    pub fn relative_error(&self) -> F {
        let scale = self
            .analytic
            .data()
            .iter()
            .chain(self.numeric.data())
            .fold(F::zero(), |m, &e| m.max(e.abs()));
        let diff = self.analytic.max_abs_diff(&self.numeric);
        if scale == F::zero() {
            diff
        } else {
            diff / scale
        }
    }
}

/// Reverse-pass gradient of the scalar function `f` at `x`.
pub fn analytic_gradient<F, Func>(f: Func, x: &Tensor<F>) -> Result<Tensor<F>>
where
    F: Float,
    Func: Fn(&mut Graph<F>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    scalar_of(&g, out)?;
    Ok(g.backward(out)?.get_or_zeros(v, x.shape()))
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn numeric_gradient<F, Func>(f: Func, x: &Tensor<F>, step: F) -> Result<Tensor<F>>
where
    F: Float,
    Func: Fn(&mut Graph<F>, Var) -> Result<Var>,
{
    let eval = |point: Tensor<F>| -> Result<F> {
        let mut g = Graph::inference();
        let v = g.constant(point);
        let out = f(&mut g, v)?;
        scalar_of(&g, out)
    };
    let mut numeric = Tensor::zeros(x.shape());
    let two = F::from_f64(2.0);
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        numeric.data_mut()[i] = (eval(plus)? - eval(minus)?) / (two * step);
    }
    Ok(numeric)
}

/// Gradients of `f` at `x`, analytic and by central differences with `step`.
pub fn grad_compare<F, Func>(f: Func, x: &Tensor<F>, step: F) -> Result<GradCheck<F>>
where
    F: Float,
    Func: Fn(&mut Graph<F>, Var) -> Result<Var>,
{
    Ok(GradCheck { analytic: analytic_gradient(&f, x)?, numeric: numeric_gradient(&f, x, step)? })
}

/// Maximum relative error between analytic and finite-difference gradients
/// of the scalar function `f` at `x`.
pub fn grad_check<F, Func>(f: Func, x: &Tensor<F>, step: F) -> Result<F>
where
    F: Float,
    Func: Fn(&mut Graph<F>, Var) -> Result<Var>,
{
    Ok(grad_compare(f, x, step)?.relative_error())
}

fn scalar_of<F: Float>(g: &Graph<F>, v: Var) -> Result<F> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(TensorError::Usage(format!("gradient check needs a scalar function, got {:?}", t.shape())));
    }
    Ok(t.item())
}
