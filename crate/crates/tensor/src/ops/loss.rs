use crate::error::{shape_err, Result};
use crate::float::Float;
use crate::graph::{GradSink, Graph, Var};
use crate::ops::Op;
use crate::tensor::Tensor;

/// Outcome of [`Graph::masked_cross_entropy`].
#[derive(Clone, Copy, Debug)]
pub struct CrossEntropyOut {
    pub loss: Var,
    /// Rows skipped because only the target entry was allowed.
    pub skipped: usize,
}

impl<F: Float> Graph<F> {
    /// Mean over rows of `-log softmax(logits[r])[targets[r]]`, where the
    /// softmax only runs over entries with `allowed[r * m + j]`. The target
    /// entry is always allowed. Rows with no other allowed entry carry no
    /// contrast and are skipped; if every row is skipped the loss is 0.
    pub fn masked_cross_entropy(&mut self, logits: Var, targets: &[usize], allowed: &[bool]) -> Result<CrossEntropyOut> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || targets.len() != s[0] || allowed.len() != s[0] * s[1] {
            return shape_err(
                "cross_entropy",
                format!("logits {s:?} with {} targets and {} mask entries", targets.len(), allowed.len()),
            );
        }
        let (n, m) = (s[0], s[1]);
        if let Some(&t) = targets.iter().find(|&&t| t >= m) {
            return shape_err("cross_entropy", format!("target {t} out of range for {m} classes"));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![F::zero(); n * m];
        let mut active = vec![false; n];
        let mut total = F::zero();
        for r in 0..n {
            let ok = |j: usize| j == targets[r] || allowed[r * m + j];
            if !(0..m).any(|j| j != targets[r] && ok(j)) {
                continue;
            }
            active[r] = true;
            let row = &lv[r * m..][..m];
            let mx = (0..m).filter(|&j| ok(j)).map(|j| row[j]).fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for j in (0..m).filter(|&j| ok(j)) {
                let e = (row[j] - mx).exp();
                probs[r * m + j] = e;
                z += e;
            }
            for j in 0..m {
                probs[r * m + j] /= z;
            }
            total += mx + z.ln() - row[targets[r]];
        }
        let count = active.iter().filter(|&&a| a).count();
        let scale = if count == 0 { F::zero() } else { F::one() / F::from_f64(count as f64) };
        let value = Tensor::scalar(total * scale);
        let loss = self.push(
            "cross_entropy",
            value,
            Op::CrossEntropy { logits, probs, targets: targets.to_vec(), active, scale },
        )?;
        Ok(CrossEntropyOut { loss, skipped: n - count })
    }
}

pub(super) fn backward<F: Float>(graph: &Graph<F>, op: &Op<F>, g: &Tensor<F>, sink: &mut GradSink<'_, F>) {
    let Op::CrossEntropy { logits, probs, targets, active, scale } = op else { unreachable!("not a loss") };
    let m = graph.shape(*logits)[1];
    let k = g.item() * *scale;
    let mut d = vec![F::zero(); probs.len()];
    for (r, &on) in active.iter().enumerate() {
        if !on {
            continue;
        }
        for j in 0..m {
            d[r * m + j] = k * probs[r * m + j];
        }
        d[r * m + targets[r]] -= k;
    }
    sink.add_data(*logits, d);
}
