//! Training objectives and the embedding collapse diagnostic.

use avloc_tensor::{Float, Result, Tensor, TensorError, Var};

use crate::params::Session;

pub const COS_EPS: f64 = 1e-8;

/// Negative mean cosine similarity between paired rows.
pub fn neg_cosine<F: Float>(s: &mut Session<'_, F>, pred: Var, target: Var) -> Result<Var> {
    let c = s.g.cosine_rows(pred, target, F::from_f64(COS_EPS))?;
    let m = s.g.mean(c)?;
    s.g.scale(m, -F::one())
}

#[derive(Clone, Copy, Debug)]
pub struct SsplLoss {
    pub total: Var,
    /// Prediction from view 1 against the projection of view 2.
    pub forward: Var,
    /// Prediction from view 2 against the projection of view 1.
    pub backward: Var,
}

/// Symmetric predictor-to-projection loss between two views. With
/// `stop_gradient` the projection side is a constant target.
pub fn sspl_loss<F: Float>(
    s: &mut Session<'_, F>,
    pred1: Var,
    pred2: Var,
    proj1: Var,
    proj2: Var,
    stop_gradient: bool,
) -> Result<SsplLoss> {
    let (t1, t2) = if stop_gradient { (s.g.stop_gradient(proj1), s.g.stop_gradient(proj2)) } else { (proj1, proj2) };
    let forward = neg_cosine(s, pred1, t2)?;
    let backward = neg_cosine(s, pred2, t1)?;
    let sum = s.g.add(forward, backward)?;
    let total = s.g.scale(sum, F::from_f64(0.5))?;
    Ok(SsplLoss { total, forward, backward })
}

/// Mean over dimensions of the per-dimension standard deviation of the
/// L2-normalized rows of `z [B, D]`. Zero for collapsed embeddings; about
/// `1/sqrt(D)` for well spread ones.
pub fn collapse_metric<F: Float>(z: &Tensor<F>) -> Result<f64> {
    let shape = z.shape();
    if shape.len() != 2 || shape[0] < 2 {
        return Err(TensorError::Config {
            op: "collapse_metric",
            detail: format!("need [B, D] with B >= 2, got {shape:?}"),
        });
    }
    let (b, d) = (shape[0], shape[1]);
    let mut rows = vec![0.0f64; b * d];
    for (i, row) in z.data().chunks(d).enumerate() {
        let norm = row.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt() + COS_EPS;
        for (o, v) in rows[i * d..][..d].iter_mut().zip(row) {
            *o = v.as_f64() / norm;
        }
    }
    let mut total = 0.0;
    for j in 0..d {
        let col = (0..b).map(|i| rows[i * d + j]);
        let mean = col.clone().sum::<f64>() / b as f64;
        let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / b as f64;
        total += var.sqrt();
    }
    Ok(total / d as f64)
}

#[derive(Clone, Copy, Debug)]
pub struct InfoNceLoss {
    pub loss: Var,
    /// Cross-entropy rows without any negative (both directions counted).
    pub skipped: usize,
}

/// Symmetric contrastive loss between paired visual and audio embeddings.
/// Every other pair in the batch is a negative unless `classes` is given,
/// in which case pairs sharing a class are excluded as negatives.
pub fn infonce<F: Float>(
    s: &mut Session<'_, F>,
    visual: Var,
    audio: Var,
    temperature: f64,
    classes: Option<&[u16]>,
) -> Result<InfoNceLoss> {
    let b = s.g.shape(visual)[0];
    if s.g.shape(audio)[0] != b || classes.is_some_and(|c| c.len() != b) {
        return Err(TensorError::Config { op: "infonce", detail: "batch sizes disagree".into() });
    }
    let eps = F::from_f64(COS_EPS);
    let v = s.g.normalize_rows(visual, eps)?;
    let a = s.g.normalize_rows(audio, eps)?;
    let at = s.g.transpose(a)?;
    let sim = s.g.matmul(v, at)?;
    let logits = s.g.scale(sim, F::from_f64(1.0 / temperature))?;
    let logits_t = s.g.transpose(logits)?;
    let targets: Vec<usize> = (0..b).collect();
    let allowed: Vec<bool> =
        (0..b * b).map(|k| classes.is_none_or(|c| c[k / b] != c[k % b])).collect();
    let va = s.g.masked_cross_entropy(logits, &targets, &allowed)?;
    let av = s.g.masked_cross_entropy(logits_t, &targets, &allowed)?;
    let sum = s.g.add(va.loss, av.loss)?;
    let loss = s.g.scale(sum, F::from_f64(0.5))?;
    Ok(InfoNceLoss { loss, skipped: va.skipped + av.skipped })
}
