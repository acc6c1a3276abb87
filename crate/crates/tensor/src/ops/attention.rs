use crate::error::{shape_err, Result};
use crate::float::Float;
use crate::graph::{GradSink, Graph, Var};
use crate::ops::Op;
use crate::tensor::Tensor;

/// Ranges below this count as a constant map in [`Graph::minmax_scale`].
pub const FLAT_RANGE: f64 = 1e-8;

fn map_dims(s: &[usize]) -> Result<(usize, usize, usize)> {
    if s.len() != 4 {
        return shape_err("attention", format!("feature map must be [B, C, H, W], got {s:?}"));
    }
    Ok((s[0], s[1], s[2] * s[3]))
}

impl<F: Float> Graph<F> {
    /// Cosine similarity between each query vector `q[b]` and every spatial
    /// feature `f[b, :, i, j]`. Output is `[B, H, W]`.
    pub fn similarity_map(&mut self, q: Var, f: Var, eps: F) -> Result<Var> {
        let fs = self.shape(f).to_vec();
        let (b, c, hw) = map_dims(&fs)?;
        if self.shape(q) != [b, c] {
            return shape_err("similarity_map", format!("query {:?} does not match map {fs:?}", self.shape(q)));
        }
        let (qv, fv) = (self.value(q).data(), self.value(f).data());
        let q_norm: Vec<F> = qv.chunks(c).map(|r| r.iter().map(|&e| e * e).sum::<F>().sqrt()).collect();
        let mut f_norm = vec![F::zero(); b * hw];
        let mut out = vec![F::zero(); b * hw];
        for bi in 0..b {
            for ch in 0..c {
                let qe = qv[bi * c + ch];
                let plane = &fv[(bi * c + ch) * hw..][..hw];
                for (p, &e) in plane.iter().enumerate() {
                    f_norm[bi * hw + p] += e * e;
                    out[bi * hw + p] += qe * e;
                }
            }
            for p in 0..hw {
                let n = f_norm[bi * hw + p].sqrt();
                f_norm[bi * hw + p] = n;
                out[bi * hw + p] /= (q_norm[bi] + eps) * (n + eps);
            }
        }
        let value = Tensor::new(&[b, fs[2], fs[3]], out)?;
        self.push("similarity_map", value, Op::SimilarityMap { q, f, q_norm, f_norm, eps })
    }

    /// Rescale each group of `group` consecutive entries to `[0, 1]`.
    /// A group whose range is below [`FLAT_RANGE`] maps to 0.5 everywhere.
    pub fn minmax_scale(&mut self, x: Var, group: usize) -> Result<Var> {
        let t = self.value(x);
        if group == 0 || !t.numel().is_multiple_of(group) {
            return shape_err("minmax_scale", format!("{} elements do not split into groups of {group}", t.numel()));
        }
        let mut out = Vec::with_capacity(t.numel());
        let mut extrema = Vec::with_capacity(t.numel() / group);
        for chunk in t.data().chunks(group) {
            let (mut lo, mut hi) = (0, 0);
            for (i, &e) in chunk.iter().enumerate() {
                if e < chunk[lo] {
                    lo = i;
                }
                if e > chunk[hi] {
                    hi = i;
                }
            }
            let (m, r) = (chunk[lo], chunk[hi] - chunk[lo]);
            if r.as_f64() < FLAT_RANGE {
                out.extend(std::iter::repeat_n(F::from_f64(0.5), group));
                extrema.push(None);
            } else {
                out.extend(chunk.iter().map(|&e| (e - m) / r));
                extrema.push(Some((lo, hi)));
            }
        }
        let value = Tensor::new(t.shape(), out)?;
        self.push("minmax_scale", value, Op::MinMax { x, group, extrema })
    }

    /// Attention-weighted sum of spatial features:
    /// `out[b, c] = sum_ij weights[b, i, j] * f[b, c, i, j]`.
    pub fn attend_pool(&mut self, weights: Var, f: Var) -> Result<Var> {
        let fs = self.shape(f).to_vec();
        let (b, c, hw) = map_dims(&fs)?;
        if self.shape(weights) != [b, fs[2], fs[3]] {
            return shape_err("attend_pool", format!("weights {:?} do not match map {fs:?}", self.shape(weights)));
        }
        let (sv, fv) = (self.value(weights).data(), self.value(f).data());
        let mut out = vec![F::zero(); b * c];
        for bi in 0..b {
            let w = &sv[bi * hw..][..hw];
            for ch in 0..c {
                let plane = &fv[(bi * c + ch) * hw..][..hw];
                out[bi * c + ch] = w.iter().zip(plane).map(|(&a, &e)| a * e).sum();
            }
        }
        let value = Tensor::new(&[b, c], out)?;
        self.push("attend_pool", value, Op::AttendPool { s: weights, f })
    }
}

pub(super) fn backward<F: Float>(
    graph: &Graph<F>,
    op: &Op<F>,
    out: &Tensor<F>,
    g: &Tensor<F>,
    sink: &mut GradSink<'_, F>,
) {
    match op {
        Op::SimilarityMap { q, f, q_norm, f_norm, eps } => {
            let (b, c, hw) = map_dims(graph.shape(*f)).expect("validated in forward");
            let (qv, fv, gd, sv) = (graph.value(*q).data(), graph.value(*f).data(), g.data(), out.data());
            // S = qh . fh with qh = q / (|q| + eps), fh = f / (|f| + eps).
            // Through u -> u / (|u| + eps): du = (gh - u (u . gh) / (|u| (|u| + eps))) / (|u| + eps),
            // where u . gh reduces to sum_p g_p S_p (|u| + eps).
            let mut dq = vec![F::zero(); b * c];
            let mut df = vec![F::zero(); fv.len()];
            for bi in 0..b {
                let qd = q_norm[bi] + *eps;
                let qh = |ch: usize| qv[bi * c + ch] / qd;
                let gs: F = (0..hw).map(|p| gd[bi * hw + p] * sv[bi * hw + p]).sum();
                for ch in 0..c {
                    // gradient w.r.t. qh
                    let mut gqh = F::zero();
                    for p in 0..hw {
                        let fn_ = f_norm[bi * hw + p] + *eps;
                        gqh += gd[bi * hw + p] * fv[(bi * c + ch) * hw + p] / fn_;
                    }
                    let proj = if q_norm[bi] > F::zero() { qv[bi * c + ch] * gs / q_norm[bi] } else { F::zero() };
                    dq[bi * c + ch] = (gqh - proj) / qd;
                }
                if sink.wants(*f) {
                    for p in 0..hw {
                        let n = f_norm[bi * hw + p];
                        let fd = n + *eps;
                        let gp = gd[bi * hw + p];
                        // f . gfh = g_p * S_p * (|f| + eps)
                        let along = if n > F::zero() { gp * sv[bi * hw + p] / n } else { F::zero() };
                        for ch in 0..c {
                            let fe = fv[(bi * c + ch) * hw + p];
                            df[(bi * c + ch) * hw + p] = (gp * qh(ch) - fe * along) / fd;
                        }
                    }
                }
            }
            sink.add_data(*q, dq);
            sink.add_data(*f, df);
        }
        Op::MinMax { x, group, extrema } => {
            let xv = graph.value(*x).data();
            let mut dx = vec![F::zero(); xv.len()];
            for (gi, ext) in extrema.iter().enumerate() {
                let Some((lo, hi)) = *ext else { continue };
                let base = gi * group;
                let r = xv[base + hi] - xv[base + lo];
                let (mut to_lo, mut to_hi) = (F::zero(), F::zero());
                for i in 0..*group {
                    let (gv, y) = (g.data()[base + i], out.data()[base + i]);
                    dx[base + i] += gv / r;
                    to_lo += gv * (y - F::one()) / r;
                    to_hi -= gv * y / r;
                }
                dx[base + lo] += to_lo;
                dx[base + hi] += to_hi;
            }
            sink.add_data(*x, dx);
        }
        Op::AttendPool { s, f } => {
            let (b, c, hw) = map_dims(graph.shape(*f)).expect("validated in forward");
            let (sv, fv, gd) = (graph.value(*s).data(), graph.value(*f).data(), g.data());
            if sink.wants(*s) {
                let mut ds = vec![F::zero(); b * hw];
                for bi in 0..b {
                    for ch in 0..c {
                        let gv = gd[bi * c + ch];
                        for p in 0..hw {
                            ds[bi * hw + p] += gv * fv[(bi * c + ch) * hw + p];
                        }
                    }
                }
                sink.add_data(*s, ds);
            }
            if sink.wants(*f) {
                let mut df = vec![F::zero(); fv.len()];
                for bi in 0..b {
                    for ch in 0..c {
                        let gv = gd[bi * c + ch];
                        for p in 0..hw {
                            df[(bi * c + ch) * hw + p] = gv * sv[bi * hw + p];
                        }
                    }
                }
                sink.add_data(*f, df);
            }
        }
        _ => unreachable!("not an attention op"),
    }
}
