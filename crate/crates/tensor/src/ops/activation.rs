use crate::error::{shape_err, Result};
use crate::float::Float;
use crate::graph::{GradSink, Graph, Var};
use crate::ops::Op;
use crate::tensor::Tensor;

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    /// Tanh approximation of the Gaussian error linear unit.
    Gelu,
    Sigmoid,
    Tanh,
    Softplus,
}

const GELU_C: f64 = 0.044_715;

impl Activation {
    pub fn apply<F: Float>(self, x: F) -> F {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(F::zero()),
            Activation::Gelu => {
                let k = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
                let inner = k * (x + F::from_f64(GELU_C) * x * x * x);
                F::from_f64(0.5) * x * (F::one() + tanh_by_exp(inner))
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => {
                // log(1 + e^x) without overflow
                x.max(F::zero()) + (-x.abs()).exp().ln_1p()
            }
        }
    }

    /// Derivative at `x` given the forward output `y`.
    fn derivative<F: Float>(self, x: F, y: F) -> F {
        match self {
            Activation::Identity => F::one(),
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Gelu => {
                let k = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
                let c = F::from_f64(GELU_C);
                let t = tanh_by_exp(k * (x + c * x * x * x));
                let half = F::from_f64(0.5);
                half * (F::one() + t) + half * x * (F::one() - t * t) * k * (F::one() + F::from_f64(3.0) * c * x * x)
            }
            Activation::Sigmoid => y * (F::one() - y),
            Activation::Tanh => F::one() - y * y,
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// One `exp` instead of libm's `tanh`, which dominates GELU-heavy profiles.
fn tanh_by_exp<F: Float>(z: F) -> F {
    let e = (F::from_f64(-2.0) * z.abs()).exp();
    let t = (F::one() - e) / (F::one() + e);
    if z < F::zero() {
        -t
    } else {
        t
    }
}

fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl<F: Float> Graph<F> {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        if kind == Activation::Identity {
            return Ok(x);
        }
        let v = self.value(x).map(|e| kind.apply(e));
        self.push("activation", v, Op::Activation { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    /// Softmax over consecutive groups of `group` elements.
    pub fn softmax_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let t = self.value(x);
        if group == 0 || !t.numel().is_multiple_of(group) {
            return shape_err("softmax", format!("{} elements do not split into groups of {group}", t.numel()));
        }
        let mut out = Vec::with_capacity(t.numel());
        for chunk in t.data().chunks(group) {
            let m = chunk.iter().copied().fold(F::neg_infinity(), F::max);
            let start = out.len();
            out.extend(chunk.iter().map(|&e| (e - m).exp()));
            let z: F = out[start..].iter().copied().sum();
            for e in &mut out[start..] {
                *e /= z;
            }
        }
        let v = Tensor::new(t.shape(), out)?;
        self.push("softmax", v, Op::SoftmaxGroups { x, group })
    }

    /// Softmax over all entries of each `h x w` map (last two axes).
    pub fn softmax_spatial(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 {
            return shape_err("softmax", format!("need a map, got {s:?}"));
        }
        let group = s[s.len() - 2] * s[s.len() - 1];
        self.softmax_groups(x, group)
    }
}

pub(super) fn backward<F: Float>(
    graph: &Graph<F>,
    op: &Op<F>,
    out: &Tensor<F>,
    g: &Tensor<F>,
    sink: &mut GradSink<'_, F>,
) {
    match *op {
        Op::Activation { x, kind } => {
            let xv = graph.value(x).data();
            let data = xv
                .iter()
                .zip(out.data())
                .zip(g.data())
                .map(|((&xi, &yi), &gi)| gi * kind.derivative(xi, yi))
                .collect();
            sink.add_data(x, data);
        }
        Op::SoftmaxGroups { x, group } => {
            let mut data = Vec::with_capacity(out.numel());
            for (y, gy) in out.data().chunks(group).zip(g.data().chunks(group)) {
                let dot: F = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                data.extend(y.iter().zip(gy).map(|(&yi, &gi)| yi * (gi - dot)));
            }
            sink.add_data(x, data);
        }
        _ => unreachable!("not an activation"),
    }
}
