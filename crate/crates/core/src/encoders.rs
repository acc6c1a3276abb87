//! Visual and audio feature extractors, the audio transform, and the
//! projection/prediction heads.

use avloc_tensor::{Activation, Float, Result, TensorError, Var};

use crate::layers::{ConvBlock, Linear, Norm};
use crate::params::{Group, ParamStore, Session};
use crate::rng::Rng;

/// Three conv blocks: `[B, 3, H, W] -> [B, c_v, H/8, W/8]`.
#[derive(Clone, Debug)]
pub struct VisualEncoder {
    pub blocks: Vec<ConvBlock>,
}

impl VisualEncoder {
    pub fn new<F: Float>(store: &mut ParamStore<F>, channels: &[usize], rng: &mut Rng) -> Self {
        let mut prev = 3;
        let blocks = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let b = ConvBlock::new(store, &format!("visual.block{i}"), prev, c, rng);
                prev = c;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn forward<F: Float>(&self, s: &mut Session<'_, F>, image: Var) -> Result<Var> {
        let shape = s.g.shape(image).to_vec();
        let scale = 1 << self.blocks.len();
        if shape.len() != 4 || shape[1] != 3 || !shape[2].is_multiple_of(scale) || !shape[3].is_multiple_of(scale) {
            return Err(TensorError::Shape {
                op: "encode_image",
                detail: format!("expected [B, 3, H, W] with H, W divisible by {scale}, got {shape:?}"),
            });
        }
        self.blocks.iter().try_fold(image, |x, b| b.forward(s, x))
    }
}

/// Conv blocks on the spectrogram, global average pooling, one dense layer.
#[derive(Clone, Debug)]
pub struct AudioEncoder {
    pub blocks: Vec<ConvBlock>,
    pub fc: Linear,
    pub bins: usize,
    pub frames: usize,
}

impl AudioEncoder {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        channels: &[usize],
        out_dim: usize,
        bins: usize,
        frames: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut prev = 1;
        let blocks = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let b = ConvBlock::new(store, &format!("audio.block{i}"), prev, c, rng);
                prev = c;
                b
            })
            .collect();
        let fc = Linear::new(store, "audio.fc", prev, out_dim, Group::Rest, rng);
        Self { blocks, fc, bins, frames }
    }

    /// `[B, bins, frames] -> [B, c_a]`.
    pub fn forward<F: Float>(&self, s: &mut Session<'_, F>, spec: Var) -> Result<Var> {
        let shape = s.g.shape(spec).to_vec();
        if shape.len() != 3 || shape[1] != self.bins || shape[2] != self.frames {
            return Err(TensorError::Shape {
                op: "encode_audio",
                detail: format!("expected [B, {}, {}], got {shape:?}", self.bins, self.frames),
            });
        }
        let x = s.g.reshape(spec, &[shape[0], 1, self.bins, self.frames])?;
        let x = self.blocks.iter().try_fold(x, |x, b| b.forward(s, x))?;
        let x = s.g.global_avg_pool(x)?;
        self.fc.forward(s, x)
    }
}

/// Dense -> ReLU -> dense map from audio space to visual channel space.
#[derive(Clone, Debug)]
pub struct AudioTransform {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl AudioTransform {
    pub fn new<F: Float>(store: &mut ParamStore<F>, audio_dim: usize, hidden: usize, visual_dim: usize, rng: &mut Rng) -> Self {
        Self {
            fc1: Linear::new(store, "transform.fc1", audio_dim, hidden, Group::Rest, rng),
            fc2: Linear::new(store, "transform.fc2", hidden, visual_dim, Group::Rest, rng),
        }
    }

    pub fn forward<F: Float>(&self, s: &mut Session<'_, F>, fa: Var) -> Result<Var> {
        let h = self.fc1.forward(s, fa)?;
        let h = s.g.activation(h, Activation::Relu)?;
        self.fc2.forward(s, h)
    }
}

/// Dense -> batch norm -> ReLU -> dense (-> batch norm).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub bn1: Norm,
    pub fc2: Linear,
    pub bn2: Option<Norm>,
}

impl Mlp {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        name: &str,
        dims: (usize, usize, usize),
        output_norm: bool,
        rng: &mut Rng,
    ) -> Self {
        let (i, h, o) = dims;
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), i, h, Group::Head, rng),
            bn1: Norm::new(store, &format!("{name}.bn1"), h, Group::Head),
            fc2: Linear::new(store, &format!("{name}.fc2"), h, o, Group::Head, rng),
            bn2: output_norm.then(|| Norm::new(store, &format!("{name}.bn2"), o, Group::Head)),
        }
    }

    pub fn forward<F: Float>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(s, x)?;
        let h = self.bn1.forward(s, h)?;
        let h = s.g.activation(h, Activation::Relu)?;
        let y = self.fc2.forward(s, h)?;
        match &self.bn2 {
            Some(bn) => bn.forward(s, y),
            None => Ok(y),
        }
    }
}

/// Projection head (normalized output) and bottleneck predictor.
#[derive(Clone, Debug)]
pub struct Heads {
    pub projector: Mlp,
    pub predictor: Mlp,
}

impl Heads {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        visual_dim: usize,
        hidden: usize,
        embed: usize,
        bottleneck: usize,
        rng: &mut Rng,
    ) -> Self {
        Self {
            projector: Mlp::new(store, "projector", (visual_dim, hidden, embed), true, rng),
            predictor: Mlp::new(store, "predictor", (embed, bottleneck, embed), false, rng),
        }
    }

    pub fn project<F: Float>(&self, s: &mut Session<'_, F>, fav: Var) -> Result<Var> {
        self.projector.forward(s, fav)
    }

    pub fn predict<F: Float>(&self, s: &mut Session<'_, F>, z: Var) -> Result<Var> {
        self.predictor.forward(s, z)
    }
}
