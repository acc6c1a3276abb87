//! 2-D cross-correlation and its adjoint (transposed convolution).
//!
//! Both are lowered to one GEMM per sample over an im2col buffer of
//! `channels * k * k` rows by `out_h * out_w` columns.

use crate::error::{shape_err, Result};
use crate::float::Float;
use crate::graph::{GradSink, Graph, Var};
use crate::ops::Op;
use crate::tensor::Tensor;

/// Stride/padding of a convolution. `output_padding` only applies to the
/// transposed form, where it adds rows/columns at the far edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding, output_padding: 0 }
    }

    pub fn with_output_padding(mut self, output_padding: usize) -> Self {
        self.output_padding = output_padding;
        self
    }
}

/// Per-sample image block geometry shared by im2col/col2im.
#[derive(Clone, Copy)]
struct Frame {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Frame {
    fn rows(&self) -> usize {
        self.out_h * self.out_w
    }

    fn cols(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Output columns `ox` whose input column `ox * stride + kx - pad` lies in `0..w`.
fn valid_span(out: usize, w: usize, kx: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    let hi = if w + pad <= kx { 0 } else { ((w + pad - kx - 1) / stride + 1).min(out) };
    (lo, hi.max(lo))
}

/// Fills `cols` as `[channels * k * k, out_h * out_w]` for one sample, so
/// each kernel tap is a contiguous run of output positions.
fn im2col<F: Float>(x: &[F], f: Frame, cols: &mut [F]) {
    let n = f.rows();
    cols.fill(F::zero());
    let plane = f.plane();
    for c in 0..f.channels {
        let xc = &x[c * plane..(c + 1) * plane];
        for ky in 0..f.k {
            for kx in 0..f.k {
                let j = (c * f.k + ky) * f.k + kx;
                let dst = &mut cols[j * n..(j + 1) * n];
                let (lo, hi) = valid_span(f.out_w, f.w, kx, f.stride, f.pad);
                for oy in 0..f.out_h {
                    let iy = (oy * f.stride + ky) as isize - f.pad as isize;
                    if iy < 0 || iy >= f.h as isize {
                        continue;
                    }
                    let src = &xc[iy as usize * f.w..(iy as usize + 1) * f.w];
                    let row = &mut dst[oy * f.out_w..(oy + 1) * f.out_w];
                    if f.stride == 1 {
                        let ix = lo + kx - f.pad;
                        row[lo..hi].copy_from_slice(&src[ix..ix + hi - lo]);
                    } else {
                        for ox in lo..hi {
                            row[ox] = src[ox * f.stride + kx - f.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds one sample's column buffer into `x`.
fn col2im<F: Float>(cols: &[F], f: Frame, x: &mut [F]) {
    let n = f.rows();
    let plane = f.plane();
    for c in 0..f.channels {
        let xc = &mut x[c * plane..(c + 1) * plane];
        for ky in 0..f.k {
            for kx in 0..f.k {
                let j = (c * f.k + ky) * f.k + kx;
                let src = &cols[j * n..(j + 1) * n];
                let (lo, hi) = valid_span(f.out_w, f.w, kx, f.stride, f.pad);
                for oy in 0..f.out_h {
                    let iy = (oy * f.stride + ky) as isize - f.pad as isize;
                    if iy < 0 || iy >= f.h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * f.w..(iy as usize + 1) * f.w];
                    let row = &src[oy * f.out_w..(oy + 1) * f.out_w];
                    if f.stride == 1 {
                        let ix = lo + kx - f.pad;
                        for (d, &s) in dst[ix..ix + hi - lo].iter_mut().zip(&row[lo..hi]) {
                            *d += s;
                        }
                    } else {
                        for ox in lo..hi {
                            dst[ox * f.stride + kx - f.pad] += row[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Accepts `[c, h, w]` (batch of one) or `[b, c, h, w]`.
fn batch_dims(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *s {
        [c, h, w] => Ok((1, c, h, w)),
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => shape_err(op, format!("expected [c, h, w] or [b, c, h, w], got {s:?}")),
    }
}

fn kernel_dims(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize)> {
    match *s {
        [a, b, kh, kw] if kh == kw => Ok((a, b, kh)),
        _ => shape_err(op, format!("expected a square kernel [a, b, k, k], got {s:?}")),
    }
}

fn out_shape(batched: bool, b: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if batched {
        vec![b, c, h, w]
    } else {
        vec![c, h, w]
    }
}

fn add_bias<F: Float>(y: &mut [F], bias: &[F], hw: usize) {
    let c = bias.len();
    for (i, plane) in y.chunks_mut(hw).enumerate() {
        let bv = bias[i % c];
        for e in plane {
            *e += bv;
        }
    }
}

fn bias_grad<F: Float>(g: &[F], c: usize, hw: usize) -> Vec<F> {
    let mut gb = vec![F::zero(); c];
    for (i, plane) in g.chunks(hw).enumerate() {
        gb[i % c] += plane.iter().copied().sum::<F>();
    }
    gb
}

fn check_bias<F: Float>(g: &Graph<F>, op: &'static str, b: Option<Var>, c: usize) -> Result<()> {
    if let Some(b) = b {
        if g.shape(b) != [c] {
            return shape_err(op, format!("bias shape {:?}, expected [{c}]", g.shape(b)));
        }
    }
    Ok(())
}

impl<F: Float> Graph<F> {
    /// Cross-correlation of `x` with `kernels [c_out, c_in, k, k]`.
    pub fn conv2d(&mut self, x: Var, kernels: Var, bias: Option<Var>, geom: ConvGeom) -> Result<Var> {
        const OP: &str = "conv2d";
        let batched = self.value(x).ndim() == 4;
        let (b, ci, h, w) = batch_dims(OP, self.shape(x))?;
        let (co, ci2, k) = kernel_dims(OP, self.shape(kernels))?;
        if ci != ci2 {
            return shape_err(OP, format!("input has {ci} channels, kernels expect {ci2}"));
        }
        if geom.stride == 0 {
            return shape_err(OP, "stride must be positive");
        }
        check_bias(self, OP, bias, co)?;
        let span = |n: usize| -> Result<usize> {
            let padded = n + 2 * geom.padding;
            if padded < k || !(padded - k).is_multiple_of(geom.stride) {
                return shape_err(OP, format!("extent {n} with padding {} and stride {} does not tile kernel {k}", geom.padding, geom.stride));
            }
            Ok((padded - k) / geom.stride + 1)
        };
        let (ho, wo) = (span(h)?, span(w)?);
        let frame = Frame { channels: ci, h, w, k, stride: geom.stride, pad: geom.padding, out_h: ho, out_w: wo };
        let (n, kk) = (frame.rows(), frame.cols());
        let mut cols = vec![F::zero(); n * kk];
        let mut y = vec![F::zero(); b * co * n];
        let (xv, kv) = (self.value(x).data(), self.value(kernels).data());
        for (xb, yb) in xv.chunks(ci * frame.plane()).zip(y.chunks_mut(co * n)) {
            im2col(xb, frame, &mut cols);
            F::gemm(co, kk, n, kv, kk, 1, &cols, n, 1, F::zero(), yb, n, 1);
        }
        if let Some(bv) = bias {
            add_bias(&mut y, self.value(bv).data(), ho * wo);
        }
        let v = Tensor::new(&out_shape(batched, b, co, ho, wo), y)?;
        self.push(OP, v, Op::Conv2d { x, w: kernels, b: bias, geom })
    }

    /// Adjoint of [`conv2d`](Self::conv2d) with respect to its input, with
    /// `kernels [c_in, c_out, k, k]` laid out exactly as the forward
    /// convolution's kernels. Output extent is
    /// `(n - 1) * stride - 2 * padding + k + output_padding`.
    pub fn conv_transpose2d(&mut self, x: Var, kernels: Var, bias: Option<Var>, geom: ConvGeom) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let batched = self.value(x).ndim() == 4;
        let (b, ci, hi, wi) = batch_dims(OP, self.shape(x))?;
        let (ci2, co, k) = kernel_dims(OP, self.shape(kernels))?;
        if ci != ci2 {
            return shape_err(OP, format!("input has {ci} channels, kernels expect {ci2}"));
        }
        if geom.stride == 0 || geom.output_padding >= geom.stride {
            return shape_err(OP, "output padding must be smaller than a positive stride");
        }
        check_bias(self, OP, bias, co)?;
        let span = |n: usize| -> Result<usize> {
            let full = (n - 1) * geom.stride + k + geom.output_padding;
            if n == 0 || full <= 2 * geom.padding {
                return shape_err(OP, format!("extent {n} collapses under padding {}", geom.padding));
            }
            Ok(full - 2 * geom.padding)
        };
        let (ho, wo) = (span(hi)?, span(wi)?);
        let frame = Frame { channels: co, h: ho, w: wo, k, stride: geom.stride, pad: geom.padding, out_h: hi, out_w: wi };
        let (n, kk) = (frame.rows(), frame.cols());
        let mut cols = vec![F::zero(); n * kk];
        let mut y = vec![F::zero(); b * co * frame.plane()];
        let (xv, kv) = (self.value(x).data(), self.value(kernels).data());
        for (xb, yb) in xv.chunks(ci * n).zip(y.chunks_mut(co * frame.plane())) {
            F::gemm(kk, ci, n, kv, 1, kk, xb, n, 1, F::zero(), &mut cols, n, 1);
            col2im(&cols, frame, yb);
        }
        if let Some(bv) = bias {
            add_bias(&mut y, self.value(bv).data(), ho * wo);
        }
        let v = Tensor::new(&out_shape(batched, b, co, ho, wo), y)?;
        self.push(OP, v, Op::ConvTranspose2d { x, w: kernels, b: bias, geom })
    }
}

pub(super) fn backward<F: Float>(graph: &Graph<F>, op: &Op<F>, g: &Tensor<F>, sink: &mut GradSink<'_, F>) {
    match *op {
        Op::Conv2d { x, w, b, geom } => {
            let (_, ci, h, wd) = batch_dims("conv2d", graph.shape(x)).expect("validated");
            let (co, _, k) = kernel_dims("conv2d", graph.shape(w)).expect("validated");
            let (ho, wo) = (g.shape()[g.ndim() - 2], g.shape()[g.ndim() - 1]);
            let frame = Frame { channels: ci, h, w: wd, k, stride: geom.stride, pad: geom.padding, out_h: ho, out_w: wo };
            let (n, kk) = (frame.rows(), frame.cols());
            let (want_w, want_x) = (sink.wants(w), sink.wants(x));
            if want_w || want_x {
                let (xv, kv) = (graph.value(x).data(), graph.value(w).data());
                let mut cols = vec![F::zero(); n * kk];
                let mut gw = vec![F::zero(); if want_w { co * kk } else { 0 }];
                let mut gx = vec![F::zero(); if want_x { xv.len() } else { 0 }];
                let xp = ci * frame.plane();
                for (bi, gb) in g.data().chunks(co * n).enumerate() {
                    if want_w {
                        im2col(&xv[bi * xp..(bi + 1) * xp], frame, &mut cols);
                        F::gemm(co, n, kk, gb, n, 1, &cols, 1, n, F::one(), &mut gw, kk, 1);
                    }
                    if want_x {
                        F::gemm(kk, co, n, kv, 1, kk, gb, n, 1, F::zero(), &mut cols, n, 1);
                        col2im(&cols, frame, &mut gx[bi * xp..(bi + 1) * xp]);
                    }
                }
                if want_w {
                    sink.add_data(w, gw);
                }
                if want_x {
                    sink.add_data(x, gx);
                }
            }
            if let Some(b) = b {
                if sink.wants(b) {
                    sink.add_data(b, bias_grad(g.data(), co, ho * wo));
                }
            }
        }
        Op::ConvTranspose2d { x, w, b, geom } => {
            let (_, ci, hi, wi) = batch_dims("conv_transpose2d", graph.shape(x)).expect("validated");
            let (_, co, k) = kernel_dims("conv_transpose2d", graph.shape(w)).expect("validated");
            let (ho, wo) = (g.shape()[g.ndim() - 2], g.shape()[g.ndim() - 1]);
            let frame = Frame { channels: co, h: ho, w: wo, k, stride: geom.stride, pad: geom.padding, out_h: hi, out_w: wi };
            let (n, kk) = (frame.rows(), frame.cols());
            let (want_w, want_x) = (sink.wants(w), sink.wants(x));
            if want_w || want_x {
                let (xv, kv) = (graph.value(x).data(), graph.value(w).data());
                let mut dcols = vec![F::zero(); n * kk];
                let mut gw = vec![F::zero(); if want_w { ci * kk } else { 0 }];
                let mut gx = vec![F::zero(); if want_x { xv.len() } else { 0 }];
                let gp = co * frame.plane();
                for (bi, gb) in g.data().chunks(gp).enumerate() {
                    im2col(gb, frame, &mut dcols);
                    let xb = &xv[bi * ci * n..(bi + 1) * ci * n];
                    if want_x {
                        F::gemm(ci, kk, n, kv, kk, 1, &dcols, n, 1, F::zero(), &mut gx[bi * ci * n..(bi + 1) * ci * n], n, 1);
                    }
                    if want_w {
                        F::gemm(ci, n, kk, xb, n, 1, &dcols, 1, n, F::one(), &mut gw, kk, 1);
                    }
                }
                if want_w {
                    sink.add_data(w, gw);
                }
                if want_x {
                    sink.add_data(x, gx);
                }
            }
            if let Some(b) = b {
                if sink.wants(b) {
                    sink.add_data(b, bias_grad(g.data(), co, ho * wo));
                }
            }
        }
        _ => unreachable!("not a convolution"),
    }
}
