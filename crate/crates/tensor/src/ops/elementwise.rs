use crate::error::{shape_err, Result};
use crate::float::Float;
use crate::graph::{GradSink, Graph, Var};
use crate::ops::Op;
use crate::tensor::Tensor;

fn same_shape<F: Float>(g: &Graph<F>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return shape_err(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b)));
    }
    Ok(())
}

fn zip_with<F: Float>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

impl<F: Float> Graph<F> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let v = zip_with(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let v = zip_with(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let v = zip_with(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: F, shift: F) -> Result<Var> {
        let v = self.value(x).map(|e| scale * e + shift);
        self.push("affine", v, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, scale: F) -> Result<Var> {
        self.affine(x, scale, F::zero())
    }

    /// Multiply every element of `x` by the single element of `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return shape_err("mul_scalar", format!("scalar operand has shape {:?}", self.shape(s)));
        }
        let k = self.value(s).item();
        let v = self.value(x).map(|e| e * k);
        self.push("mul_scalar", v, Op::MulScalar { x, s })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        self.push("reshape", v, Op::Reshape(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push("sum", v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / F::from_f64(t.numel() as f64));
        self.push("mean", v, Op::Mean(x))
    }

    /// Sum over the last axis: `[.., d] -> [..]` (a 1-D input gives `[1]`).
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let d = *t.shape().last().unwrap_or(&1);
        let mut shape = t.shape()[..t.ndim().saturating_sub(1)].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let data = t.data().chunks(d.max(1)).map(|c| c.iter().copied().sum()).collect();
        let v = Tensor::new(&shape, data)?;
        self.push("row_sum", v, Op::RowSum(x))
    }

    /// Broadcast `[b, c]` to `[b, c, h, w]`.
    pub fn expand_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let t = self.value(x);
        if t.ndim() != 2 {
            return shape_err("expand_spatial", format!("expected [b, c], got {:?}", t.shape()));
        }
        let (b, c) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(b * c * h * w);
        for &e in t.data() {
            data.extend(std::iter::repeat_n(e, h * w));
        }
        let v = Tensor::new(&[b, c, h, w], data)?;
        self.push("expand_spatial", v, Op::ExpandSpatial { x })
    }

    /// Concatenate two `[b, c_i, h, w]` maps along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return shape_err("concat_channels", format!("{sa:?} vs {sb:?}"));
        }
        let (n, hw) = (sa[0], sa[2] * sa[3]);
        let (ca, cb) = (sa[1] * hw, sb[1] * hw);
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(&ta[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&tb[i * cb..(i + 1) * cb]);
        }
        let v = Tensor::new(&[n, sa[1] + sb[1], sa[2], sa[3]], data)?;
        self.push("concat_channels", v, Op::ConcatChannels(a, b))
    }
}

pub(super) fn backward<F: Float>(graph: &Graph<F>, op: &Op<F>, g: &Tensor<F>, sink: &mut GradSink<'_, F>) {
    match *op {
        Op::Add(a, b) => {
            sink.add(a, g.clone());
            sink.add(b, g.clone());
        }
        Op::Sub(a, b) => {
            sink.add(a, g.clone());
            if sink.wants(b) {
                sink.add(b, g.map(|e| -e));
            }
        }
        Op::Mul(a, b) => {
            if sink.wants(a) {
                sink.add(a, zip_with(g, graph.value(b), |x, y| x * y));
            }
            if sink.wants(b) {
                sink.add(b, zip_with(g, graph.value(a), |x, y| x * y));
            }
        }
        Op::Affine { x, scale } => sink.add(x, g.map(|e| e * scale)),
        Op::MulScalar { x, s } => {
            let k = graph.value(s).item();
            if sink.wants(x) {
                sink.add(x, g.map(|e| e * k));
            }
            if sink.wants(s) {
                sink.add(s, Tensor::scalar(g.dot(graph.value(x))));
            }
        }
        Op::Reshape(x) => sink.add_data(x, g.data().to_vec()),
        Op::Sum(x) => {
            let shape = graph.shape(x).to_vec();
            sink.add(x, Tensor::full(&shape, g.item()));
        }
        Op::Mean(x) => {
            let shape = graph.shape(x).to_vec();
            let n = F::from_f64(graph.value(x).numel() as f64);
            sink.add(x, Tensor::full(&shape, g.item() / n));
        }
        Op::RowSum(x) => {
            let d = *graph.shape(x).last().unwrap_or(&1);
            let data = g.data().iter().flat_map(|&e| std::iter::repeat_n(e, d)).collect();
            sink.add_data(x, data);
        }
        Op::ExpandSpatial { x } => {
            let s = graph.shape(x);
            let hw = g.numel() / (s[0] * s[1]);
            let data = g.data().chunks(hw).map(|c| c.iter().copied().sum()).collect();
            sink.add_data(x, data);
        }
        Op::ConcatChannels(a, b) => {
            let (sa, sb) = (graph.shape(a), graph.shape(b));
            let hw = sa[2] * sa[3];
            let (ca, cb) = (sa[1] * hw, sb[1] * hw);
            let mut ga = Vec::with_capacity(sa[0] * ca);
            let mut gb = Vec::with_capacity(sa[0] * cb);
            for chunk in g.data().chunks(ca + cb) {
                ga.extend_from_slice(&chunk[..ca]);
                gb.extend_from_slice(&chunk[ca..]);
            }
            sink.add_data(a, ga);
            sink.add_data(b, gb);
        }
        _ => unreachable!("not an elementwise op"),
    }
}
