use crate::error::{shape_err, Result, TensorError};
use crate::float::Float;
use crate::graph::{GradSink, Graph, Var};
use crate::ops::Op;
use crate::tensor::Tensor;

/// Running per-channel statistics of a batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    pub momentum: F,
    pub eps: F,
}

impl<F: Float> BatchNormStats<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![F::zero(); channels],
            var: vec![F::one(); channels],
            momentum: F::from_f64(0.1),
            eps: F::from_f64(1e-5),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// `(batch, channels, spatial)` for a `[B, C]` or `[B, C, ...]` tensor.
fn channel_dims(s: &[usize]) -> Result<(usize, usize, usize)> {
    if s.len() < 2 {
        return shape_err("batch_norm", format!("need [batch, channels, ...], got {s:?}"));
    }
    Ok((s[0], s[1], s[2..].iter().product()))
}

impl<F: Float> Graph<F> {
    /// Batch normalization over axis 1.
    ///
    /// In training mode the batch statistics normalize the input and are
    /// folded into `stats` with its momentum (unbiased variance). Otherwise
    /// the running statistics are used as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<F>,
        training: bool,
    ) -> Result<Var> {
        let (b, c, hw) = channel_dims(self.shape(x))?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return shape_err("batch_norm", format!("{name} shape {:?}, expected [{c}]", self.shape(v)));
            }
        }
        if stats.channels() != c {
            return shape_err("batch_norm", format!("statistics cover {} channels, input has {c}", stats.channels()));
        }
        let n = b * hw;
        if training && n < 2 {
            return Err(TensorError::Config {
                op: "batch_norm",
                detail: "training mode needs more than one value per channel".into(),
            });
        }
        let xv = self.value(x).data();
        let (mut mean, mut var) = (vec![F::zero(); c], vec![F::zero(); c]);
        if training {
            let nf = F::from_f64(n as f64);
            for bi in 0..b {
                for ch in 0..c {
                    let base = (bi * c + ch) * hw;
                    mean[ch] += xv[base..base + hw].iter().copied().sum::<F>();
                }
            }
            for m in &mut mean {
                *m /= nf;
            }
            for bi in 0..b {
                for ch in 0..c {
                    let base = (bi * c + ch) * hw;
                    var[ch] += xv[base..base + hw].iter().map(|&e| (e - mean[ch]) * (e - mean[ch])).sum::<F>();
                }
            }
            let mo = stats.momentum;
            for ch in 0..c {
                let unbiased = var[ch] / F::from_f64((n - 1) as f64);
                var[ch] /= nf;
                stats.mean[ch] = (F::one() - mo) * stats.mean[ch] + mo * mean[ch];
                stats.var[ch] = (F::one() - mo) * stats.var[ch] + mo * unbiased;
            }
        } else {
            mean.copy_from_slice(&stats.mean);
            var.copy_from_slice(&stats.var);
        }
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + stats.eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * hw;
                for &e in &xv[base..base + hw] {
                    let h = (e - mean[ch]) * inv_std[ch];
                    xhat.push(h);
                    out.push(gv[ch] * h + bv[ch]);
                }
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        self.push("batch_norm", value, Op::BatchNorm { x, gamma, beta, xhat, inv_std, training })
    }

    /// Each row of a `[B, D]` matrix divided by `norm + eps`.
    pub fn normalize_rows(&mut self, x: Var, eps: F) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return shape_err("normalize_rows", format!("need [rows, dim], got {s:?}"));
        }
        let d = s[1];
        let xv = self.value(x).data();
        let mut norms = Vec::with_capacity(s[0]);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(d.max(1)) {
            let n = row.iter().map(|&e| e * e).sum::<F>().sqrt();
            norms.push(n);
            out.extend(row.iter().map(|&e| e / (n + eps)));
        }
        let value = Tensor::new(&s, out)?;
        self.push("normalize_rows", value, Op::NormalizeRows { x, norms, eps })
    }

    /// Row-wise cosine similarity of two `[B, D]` matrices, shape `[B]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var, eps: F) -> Result<Var> {
        let an = self.normalize_rows(a, eps)?;
        let bn = self.normalize_rows(b, eps)?;
        let prod = self.mul(an, bn)?;
        self.row_sum(prod)
    }
}

/// Cosine similarity of two vectors with `eps` added to each norm.
pub fn cosine_sim<F: Float>(u: &[F], v: &[F], eps: F) -> F {
    let norm = |w: &[F]| w.iter().map(|&e| e * e).sum::<F>().sqrt();
    let dot: F = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
    dot / ((norm(u) + eps) * (norm(v) + eps))
}

pub(super) fn backward<F: Float>(
    graph: &Graph<F>,
    op: &Op<F>,
    _out: &Tensor<F>,
    g: &Tensor<F>,
    sink: &mut GradSink<'_, F>,
) {
    match op {
        Op::BatchNorm { x, gamma, beta, xhat, inv_std, training } => {
            let (b, c, hw) = channel_dims(graph.shape(*x)).expect("validated in forward");
            let gd = g.data();
            let (mut dgamma, mut dbeta) = (vec![F::zero(); c], vec![F::zero(); c]);
            for bi in 0..b {
                for ch in 0..c {
                    let base = (bi * c + ch) * hw;
                    for i in base..base + hw {
                        dgamma[ch] += gd[i] * xhat[i];
                        dbeta[ch] += gd[i];
                    }
                }
            }
            if sink.wants(*x) {
                let gam = graph.value(*gamma).data();
                let nf = F::from_f64((b * hw) as f64);
                let mut dx = vec![F::zero(); gd.len()];
                for bi in 0..b {
                    for ch in 0..c {
                        let base = (bi * c + ch) * hw;
                        for i in base..base + hw {
                            dx[i] = if *training {
                                // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
                                gam[ch] * inv_std[ch] * (gd[i] - (dbeta[ch] + xhat[i] * dgamma[ch]) / nf)
                            } else {
                                gam[ch] * inv_std[ch] * gd[i]
                            };
                        }
                    }
                }
                sink.add_data(*x, dx);
            }
            sink.add_data(*gamma, dgamma);
            sink.add_data(*beta, dbeta);
        }
        Op::NormalizeRows { x, norms, eps } => {
            let xv = graph.value(*x).data();
            let d = graph.shape(*x)[1].max(1);
            let mut dx = Vec::with_capacity(xv.len());
            for ((u, gr), &n) in xv.chunks(d).zip(g.data().chunks(d)).zip(norms) {
                let denom = n + *eps;
                if n == F::zero() {
                    dx.extend(gr.iter().map(|&gi| gi / denom));
                    continue;
                }
                let ug: F = u.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                let k = ug / (n * denom * denom);
                dx.extend(u.iter().zip(gr).map(|(&ui, &gi)| gi / denom - ui * k));
            }
            sink.add_data(*x, dx);
        }
        _ => unreachable!("not a normalization"),
    }
}
