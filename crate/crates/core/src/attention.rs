//! Audio-visual similarity, map scaling, attention pooling and the fusion
//! baselines.

use avloc_tensor::{Activation, Float, Result, Var};

use crate::config::{Fusion, Scaling};
use crate::layers::Conv;
use crate::params::{Group, ParamStore, Session};
use crate::rng::Rng;

pub const NORM_EPS: f64 = 1e-8;

/// Cosine similarity between `query [B, C]` and every location of
/// `features [B, C, h, w]`, giving `[B, h, w]`.
pub fn similarity_map<F: Float>(s: &mut Session<'_, F>, query: Var, features: Var) -> Result<Var> {
    s.g.similarity_map(query, features, F::from_f64(NORM_EPS))
}

/// Turn raw similarities `[B, h, w]` into non-negative pooling weights.
pub fn scale_map<F: Float>(s: &mut Session<'_, F>, map: Var, method: Scaling) -> Result<Var> {
    let shape = s.g.shape(map).to_vec();
    let area = shape[shape.len() - 2] * shape[shape.len() - 1];
    match method {
        Scaling::MinMax => s.g.minmax_scale(map, area),
        Scaling::Relu => s.g.activation(map, Activation::Relu),
        Scaling::Sigmoid => s.g.activation(map, Activation::Sigmoid),
        Scaling::Softmax => s.g.softmax_groups(map, area),
        Scaling::ReluSoftmax => {
            let r = s.g.activation(map, Activation::Relu)?;
            s.g.softmax_groups(r, area)
        }
    }
}

/// `f_av[b, c] = sum_ij weights[b, i, j] * features[b, c, i, j]`.
pub fn attend_pool<F: Float>(s: &mut Session<'_, F>, weights: Var, features: Var) -> Result<Var> {
    s.g.attend_pool(weights, features)
}

/// Learned 1x1 reduction used by the concatenation baseline.
#[derive(Clone, Debug)]
pub struct ConcatReducer {
    pub conv: Conv,
}

impl ConcatReducer {
    pub fn new<F: Float>(store: &mut ParamStore<F>, visual_dim: usize, rng: &mut Rng) -> Self {
        Self { conv: Conv::new(store, "fusion.reduce", 2 * visual_dim, visual_dim, 1, false, Group::Rest, rng) }
    }
}

/// Multi-modal vector `[B, C]` from visual features and the transformed
/// audio query. Returns it together with the raw similarity map, which is
/// the localization output for every mode.
pub fn fuse<F: Float>(
    s: &mut Session<'_, F>,
    mode: Fusion,
    scaling: Scaling,
    features: Var,
    query: Var,
    reducer: Option<&ConcatReducer>,
) -> Result<(Var, Var)> {
    let map = similarity_map(s, query, features)?;
    let fs = s.g.shape(features).to_vec();
    let fused = match mode {
        Fusion::Attention => {
            let w = scale_map(s, map, scaling)?;
            attend_pool(s, w, features)?
        }
        Fusion::Add | Fusion::Multiply => {
            let q = s.g.expand_spatial(query, fs[2], fs[3])?;
            let m = if mode == Fusion::Add { s.g.add(features, q)? } else { s.g.mul(features, q)? };
            s.g.global_avg_pool(m)?
        }
        Fusion::Concat => {
            let reducer = reducer.ok_or_else(|| avloc_tensor::TensorError::Config {
                op: "fuse",
                detail: "concat fusion needs its reduction layer".into(),
            })?;
            let q = s.g.expand_spatial(query, fs[2], fs[3])?;
            let cat = s.g.concat_channels(features, q)?;
            let reduced = reducer.conv.forward(s, cat)?;
            s.g.global_avg_pool(reduced)?
        }
    };
    Ok((fused, map))
}
