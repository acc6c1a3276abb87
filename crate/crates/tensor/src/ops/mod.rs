//! Differentiable operations. Each submodule adds forward methods to
//! [`Graph`](crate::Graph) and provides the matching reverse rule.

mod activation;
mod attention;
mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod pool;

pub use activation::Activation;
pub use attention::FLAT_RANGE;
pub use conv::ConvGeom;
pub use loss::CrossEntropyOut;
pub use norm::{cosine_sim, BatchNormStats};
pub use pool::{bilinear_resize_plain, PoolResize};

use crate::float::Float;
use crate::graph::{GradSink, Graph, Var};
use crate::tensor::Tensor;

pub(crate) enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: F },
    MulScalar { x: Var, s: Var },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Transpose(Var),
    Matmul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Resize { x: Var },
    Activation { x: Var, kind: Activation },
    SoftmaxGroups { x: Var, group: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, inv_std: Vec<F>, training: bool },
    NormalizeRows { x: Var, norms: Vec<F>, eps: F },
    SimilarityMap { q: Var, f: Var, q_norm: Vec<F>, f_norm: Vec<F>, eps: F },
    MinMax { x: Var, group: usize, extrema: Vec<Option<(usize, usize)>> },
    AttendPool { s: Var, f: Var },
    GlobalAvgPool(Var),
    ExpandSpatial { x: Var },
    ConcatChannels(Var, Var),
    CrossEntropy { logits: Var, probs: Vec<F>, targets: Vec<usize>, active: Vec<bool>, scale: F },
}

impl<F> Op<F> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Matmul(a, b) | ConcatChannels(a, b) => vec![*a, *b],
            Affine { x, .. }
            | Reshape(x)
            | Sum(x)
            | Mean(x)
            | RowSum(x)
            | Transpose(x)
            | MaxPool2 { x, .. }
            | Resize { x }
            | Activation { x, .. }
            | SoftmaxGroups { x, .. }
            | NormalizeRows { x, .. }
            | MinMax { x, .. }
            | GlobalAvgPool(x)
            | ExpandSpatial { x }
            | CrossEntropy { logits: x, .. } => vec![*x],
            MulScalar { x, s } => vec![*x, *s],
            Linear { x, w, b } | Conv2d { x, w, b, .. } | ConvTranspose2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            SimilarityMap { q, f, .. } => vec![*q, *f],
            AttendPool { s, f } => vec![*s, *f],
        }
    }
}

pub(crate) fn backward_op<F: Float>(
    graph: &Graph<F>,
    op: &Op<F>,
    out: &Tensor<F>,
    g: &Tensor<F>,
    sink: &mut GradSink<'_, F>,
) {
    use Op::*;
    match op {
        Leaf => {}
        Add(..) | Sub(..) | Mul(..) | Affine { .. } | MulScalar { .. } | Reshape(..) | Sum(..) | Mean(..)
        | RowSum(..) | ExpandSpatial { .. } | ConcatChannels(..) => elementwise::backward(graph, op, g, sink),
        Transpose(..) | Matmul(..) | Linear { .. } => linalg::backward(graph, op, g, sink),
        Conv2d { .. } | ConvTranspose2d { .. } => conv::backward(graph, op, g, sink),
        MaxPool2 { .. } | Resize { .. } | GlobalAvgPool(..) => pool::backward(graph, op, g, sink),
        Activation { .. } | SoftmaxGroups { .. } => activation::backward(graph, op, out, g, sink),
        BatchNorm { .. } | NormalizeRows { .. } => norm::backward(graph, op, out, g, sink),
        SimilarityMap { .. } | MinMax { .. } | AttendPool { .. } => attention::backward(graph, op, out, g, sink),
        CrossEntropy { .. } => loss::backward(graph, op, g, sink),
    }
}
