use crate::error::{shape_err, Result};
use crate::float::Float;
use crate::graph::{GradSink, Graph, Var};
use crate::ops::Op;
use crate::tensor::Tensor;

/// Spatial down/up-sampling modes over the last two axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolResize {
    /// 2x2 max pooling with stride 2.
    MaxPool2,
    /// Bilinear interpolation, half-pixel sample centers (no corner alignment).
    Bilinear { height: usize, width: usize },
}

fn spatial(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize)> {
    if s.len() < 2 {
        return shape_err(op, format!("need at least two axes, got {s:?}"));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    Ok((s.iter().product::<usize>() / (h * w).max(1), h, w))
}

/// Interpolation taps along one axis: `(lo, hi, weight_of_hi)`.
fn taps<F: Float>(n_in: usize, n_out: usize) -> Vec<(usize, usize, F)> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, F::from_f64(src - lo as f64))
        })
        .collect()
}

/// Bilinear resize of a single `h x w` plane outside any graph.
pub fn bilinear_resize_plain<F: Float>(plane: &[F], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<F> {
    let (ty, tx) = (taps::<F>(h, out_h), taps::<F>(w, out_w));
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, ly) in &ty {
        for &(x0, x1, lx) in &tx {
            let top = plane[y0 * w + x0] * (F::one() - lx) + plane[y0 * w + x1] * lx;
            let bot = plane[y1 * w + x0] * (F::one() - lx) + plane[y1 * w + x1] * lx;
            out.push(top * (F::one() - ly) + bot * ly);
        }
    }
    out
}

impl<F: Float> Graph<F> {
    pub fn pool_resize(&mut self, x: Var, mode: PoolResize) -> Result<Var> {
        match mode {
            PoolResize::MaxPool2 => self.max_pool2(x),
            PoolResize::Bilinear { height, width } => self.resize_bilinear(x, height, width),
        }
    }

    /// 2x2 / stride-2 max pooling over the last two axes (which must be even).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (planes, h, w) = spatial("max_pool2", self.shape(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err("max_pool2", format!("spatial dims {h}x{w} must be even"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i0 = base + 2 * oy * w + 2 * ox;
                    let mut best = i0;
                    for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let mut shape = self.shape(x).to_vec();
        let n = shape.len();
        shape[n - 2] = oh;
        shape[n - 1] = ow;
        let v = Tensor::new(&shape, out)?;
        self.push("max_pool2", v, Op::MaxPool2 { x, argmax })
    }

    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (planes, h, w) = spatial("resize_bilinear", self.shape(x))?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return shape_err("resize_bilinear", "empty extent");
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(planes * out_h * out_w);
        for p in 0..planes {
            out.extend(bilinear_resize_plain(&src[p * h * w..(p + 1) * h * w], h, w, out_h, out_w));
        }
        let mut shape = self.shape(x).to_vec();
        let n = shape.len();
        shape[n - 2] = out_h;
        shape[n - 1] = out_w;
        let v = Tensor::new(&shape, out)?;
        self.push("resize_bilinear", v, Op::Resize { x })
    }

    /// Mean over the spatial axes: `[b, c, h, w] -> [b, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return shape_err("global_avg_pool", format!("expected [b, c, h, w], got {s:?}"));
        }
        let hw = s[2] * s[3];
        let inv = F::from_f64(1.0 / hw as f64);
        let data = self.value(x).data().chunks(hw).map(|c| c.iter().copied().sum::<F>() * inv).collect();
        let v = Tensor::new(&s[..2], data)?;
        self.push("global_avg_pool", v, Op::GlobalAvgPool(x))
    }
}

pub(super) fn backward<F: Float>(graph: &Graph<F>, op: &Op<F>, g: &Tensor<F>, sink: &mut GradSink<'_, F>) {
    match op {
        Op::MaxPool2 { x, argmax } => {
            let mut gx = vec![F::zero(); graph.value(*x).numel()];
            for (&idx, &e) in argmax.iter().zip(g.data()) {
                gx[idx as usize] += e;
            }
            sink.add_data(*x, gx);
        }
        Op::Resize { x } => {
            let (planes, h, w) = spatial("resize_bilinear", graph.shape(*x)).expect("validated");
            let (oh, ow) = (g.shape()[g.ndim() - 2], g.shape()[g.ndim() - 1]);
            let (ty, tx) = (taps::<F>(h, oh), taps::<F>(w, ow));
            let mut gx = vec![F::zero(); planes * h * w];
            for p in 0..planes {
                let gp = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                        let e = gp[oy * ow + ox];
                        let (top, bot) = (e * (F::one() - ly), e * ly);
                        dst[y0 * w + x0] += top * (F::one() - lx);
                        dst[y0 * w + x1] += top * lx;
                        dst[y1 * w + x0] += bot * (F::one() - lx);
                        dst[y1 * w + x1] += bot * lx;
                    }
                }
            }
            sink.add_data(*x, gx);
        }
        Op::GlobalAvgPool(x) => {
            let s = graph.shape(*x);
            let hw = s[2] * s[3];
            let inv = F::from_f64(1.0 / hw as f64);
            let data = g.data().iter().flat_map(|&e| std::iter::repeat_n(e * inv, hw)).collect();
            sink.add_data(*x, data);
        }
        _ => unreachable!("not a pooling op"),
    }
}
