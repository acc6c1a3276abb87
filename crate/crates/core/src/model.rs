//! The full localization network: encoders, optional predictive coding,
//! audio-guided fusion and the projection/prediction heads.

use avloc_tensor::{Float, Result, Tensor, Var};

use crate::attention::{fuse, ConcatReducer};
use crate::config::{Config, Fusion, Scaling};
use crate::encoders::{AudioEncoder, AudioTransform, Heads, VisualEncoder};
use crate::params::{ParamStore, Session};
use crate::pcm::{Pcm, PcmConfig};
use crate::rng::{stream, Purpose, Rng};

#[derive(Clone, Debug)]
pub struct Model {
    pub visual: VisualEncoder,
    pub audio: AudioEncoder,
    pub transform: AudioTransform,
    pub pcm: Option<Pcm>,
    pub reducer: Option<ConcatReducer>,
    pub heads: Heads,
    pub scaling: Scaling,
    pub fusion: Fusion,
    pub image_size: usize,
}

/// Everything computed for one batch of views.
#[derive(Clone, Debug)]
pub struct ViewOutput {
    /// Raw similarity map `[B, h, w]` between the aligned features and the
    /// transformed audio feature.
    pub map: Var,
    /// Maps after each PCM cycle (only when traced).
    pub step_maps: Vec<Var>,
    pub fused: Var,
    pub projection: Var,
    pub prediction: Var,
}

impl Model {
    /// Build a model and register its parameters. Initialization draws from
    /// the `Init` stream of `cfg.seed`.
    pub fn new<F: Float>(cfg: &Config, store: &mut ParamStore<F>) -> crate::Result<Self> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, Purpose::Init, 0);
        Self::with_rng(cfg, store, &mut rng)
    }

    pub fn with_rng<F: Float>(cfg: &Config, store: &mut ParamStore<F>, rng: &mut Rng) -> crate::Result<Self> {
        let visual_dim = *cfg.visual_channels.last().expect("validated");
        let visual = VisualEncoder::new(store, &cfg.visual_channels, rng);
        let audio = AudioEncoder::new(store, &cfg.audio_channels, cfg.audio_dim, cfg.spec_bins, cfg.spec_frames, rng);
        let transform = AudioTransform::new(store, cfg.audio_dim, cfg.transform_hidden, visual_dim, rng);
        let pcm = if cfg.use_pcm {
            let pc = PcmConfig::new(cfg.pcm_layers, cfg.pcm_steps, visual_dim, cfg.audio_dim, cfg.image_size / 8);
            Some(Pcm::new(store, pc, rng).map_err(crate::Error::Config)?)
        } else {
            None
        };
        let reducer = (cfg.fusion == Fusion::Concat).then(|| ConcatReducer::new(store, visual_dim, rng));
        let heads = Heads::new(store, visual_dim, cfg.proj_hidden, cfg.embed_dim, cfg.pred_hidden, rng);
        Ok(Self {
            visual,
            audio,
            transform,
            pcm,
            reducer,
            heads,
            scaling: cfg.scaling,
            fusion: cfg.fusion,
            image_size: cfg.image_size,
        })
    }

    pub fn encode_audio<F: Float>(&self, s: &mut Session<'_, F>, spec: Var) -> Result<Var> {
        self.audio.forward(s, spec)
    }

    /// Forward one batch of images against already-encoded audio.
    /// `steps` overrides the PCM cycle count; `trace` keeps per-cycle maps.
    pub fn forward_view<F: Float>(
        &self,
        s: &mut Session<'_, F>,
        image: Var,
        audio: Var,
        query: Var,
        steps: Option<usize>,
        trace: bool,
    ) -> Result<ViewOutput> {
        let fv = self.visual.forward(s, image)?;
        let mut step_maps = Vec::new();
        let aligned = match &self.pcm {
            Some(pcm) => {
                let out = pcm.run(s, fv, audio, steps.unwrap_or(pcm.cfg.steps), trace)?;
                for &v in &out.per_step {
                    step_maps.push(crate::attention::similarity_map(s, query, v)?);
                }
                out.aligned
            }
            None => fv,
        };
        let (fused, map) = fuse(s, self.fusion, self.scaling, aligned, query, self.reducer.as_ref())?;
        let projection = self.heads.project(s, fused)?;
        let prediction = self.heads.predict(s, projection)?;
        Ok(ViewOutput { map, step_maps, fused, projection, prediction })
    }

    /// Audio embedding for the contrastive baseline: the projector applied
    /// to the transformed audio feature.
    pub fn audio_embedding<F: Float>(&self, s: &mut Session<'_, F>, query: Var) -> Result<Var> {
        self.heads.project(s, query)
    }

    /// Convenience forward from plain tensors; returns the audio query too.
    pub fn forward<F: Float>(
        &self,
        s: &mut Session<'_, F>,
        images: Tensor<F>,
        specs: Tensor<F>,
        steps: Option<usize>,
        trace: bool,
    ) -> Result<ViewOutput> {
        let image = s.g.constant(images);
        let spec = s.g.constant(specs);
        let audio = self.encode_audio(s, spec)?;
        let query = self.transform.forward(s, audio)?;
        self.forward_view(s, image, audio, query, steps, trace)
    }
}
