//! Predictive coding module: iterative alignment of visual features to the
//! audio feature by alternating top-down prediction and bottom-up error
//! correction over a small stack of representation layers.
//!
//! Layer `l` in `1..=L` holds a representation `r_l`; `r_0` is the audio
//! feature lifted to a map and the top prediction `p_L` is the visual
//! feature. Feedback convolutions (with pooling) predict each layer from the
//! one above; feedforward transposed convolutions (after upsampling) push
//! prediction errors back up.

use avloc_tensor::{Activation, Float, Result, Tensor, TensorError, Var};

use crate::layers::Conv;
use crate::params::{Group, ParamId, ParamStore, Session, StatsId};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct PcmConfig {
    pub layers: usize,
    /// Cycles run during training; also the number of per-step statistics.
    pub steps: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    /// Spatial side of the top layer (the visual feature map).
    pub top_size: usize,
    /// Halve the spatial side per layer going down (pool / upsample).
    pub resample: bool,
    pub kernel: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl PcmConfig {
    pub fn new(layers: usize, steps: usize, visual_dim: usize, audio_dim: usize, top_size: usize) -> Self {
        Self {
            layers,
            steps,
            visual_dim,
            audio_dim,
            top_size,
            resample: true,
            kernel: 3,
            activation: Activation::Gelu,
            batch_norm: true,
        }
    }

    /// Channels of `r_l`: the audio width at layer 0, the visual width above.
    pub fn channels(&self, l: usize) -> usize {
        if l == 0 {
            self.audio_dim
        } else {
            self.visual_dim
        }
    }

    /// Spatial side of `r_l`.
    pub fn size(&self, l: usize) -> usize {
        if self.resample {
            self.top_size >> (self.layers - l)
        } else {
            self.top_size
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.layers == 0 || self.steps == 0 {
            return Err("layers and steps must be positive".into());
        }
        if self.resample && (self.size(0) == 0 || self.size(0) << self.layers != self.top_size) {
            return Err(format!("{} layers do not halve evenly from side {}", self.layers, self.top_size));
        }
        if self.kernel.is_multiple_of(2) {
            return Err("kernel must be odd".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Pathway {
    conv: Conv,
    gamma: ParamId,
    beta: ParamId,
    /// Running statistics per time step.
    stats: Vec<StatsId>,
}

#[derive(Clone, Debug)]
pub struct Pcm {
    pub cfg: PcmConfig,
    /// `feedback[l - 1]` predicts layer `l - 1` from `r_l`.
    feedback: Vec<Pathway>,
    /// `feedforward[l - 1]` lifts errors of layer `l - 1` into `r_l`.
    feedforward: Vec<Pathway>,
    pub rate_a: Vec<ParamId>,
    pub rate_b: Vec<ParamId>,
    pub output: Conv,
}

/// Representations, predictions and errors at one point of the iteration.
/// Index `l` of each vector refers to layer `l`.
#[derive(Clone, Debug)]
pub struct PcmState {
    pub r: Vec<Var>,
    pub p: Vec<Option<Var>>,
    pub e: Vec<Option<Var>>,
}

pub struct PcmOutput {
    pub aligned: Var,
    /// Projected top representation after each cycle, when traced.
    pub per_step: Vec<Var>,
    pub state: PcmState,
}

fn inv_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

impl Pcm {
    pub fn new<F: Float>(store: &mut ParamStore<F>, cfg: PcmConfig, rng: &mut Rng) -> std::result::Result<Self, String> {
        cfg.validate()?;
        let k = cfg.kernel;
        let mut feedback = Vec::new();
        let mut feedforward = Vec::new();
        for l in 1..=cfg.layers {
            let (lo, hi) = (cfg.channels(l - 1), cfg.channels(l));
            let name = format!("pcm.feedback{l}");
            let conv = Conv::new(store, &name, hi, lo, k, false, Group::Rest, rng);
            let gamma = store.add(format!("{name}.bn.gamma"), Tensor::ones(&[hi]), Group::Rest);
            let beta = store.add(format!("{name}.bn.beta"), Tensor::zeros(&[hi]), Group::Rest);
            let stats = (1..=cfg.steps).map(|t| store.add_stats(format!("{name}.bn.t{t}"), hi)).collect();
            feedback.push(Pathway { conv, gamma, beta, stats });

            let name = format!("pcm.feedforward{l}");
            let conv = Conv::new(store, &name, lo, hi, k, true, Group::Rest, rng);
            let gamma = store.add(format!("{name}.bn.gamma"), Tensor::ones(&[hi]), Group::Rest);
            let beta = store.add(format!("{name}.bn.beta"), Tensor::zeros(&[hi]), Group::Rest);
            let stats = (0..=cfg.steps).map(|t| store.add_stats(format!("{name}.bn.t{t}"), hi)).collect();
            feedforward.push(Pathway { conv, gamma, beta, stats });
        }
        let rate_a = (1..=cfg.layers)
            .map(|l| store.add(format!("pcm.rate_a{l}"), Tensor::scalar(F::from_f64(inv_softplus(0.1))), Group::Rest))
            .collect();
        let rate_b =
            (1..=cfg.layers).map(|l| store.add(format!("pcm.rate_b{l}"), Tensor::scalar(F::zero()), Group::Rest)).collect();
        let output = Conv::new(store, "pcm.output", cfg.visual_dim, cfg.visual_dim, 1, false, Group::Rest, rng);
        Ok(Self { cfg, feedback, feedforward, rate_a, rate_b, output })
    }

    fn norm<F: Float>(&self, s: &mut Session<'_, F>, path: &Pathway, x: Var, t: usize) -> Result<Var> {
        if !self.cfg.batch_norm {
            return Ok(x);
        }
        // steps beyond the trained horizon reuse the last step's statistics
        let slot = path.stats[t.min(path.stats.len() - 1)];
        s.batch_norm(x, path.gamma, path.beta, slot)
    }

    fn phi<F: Float>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var> {
        s.g.activation(x, self.cfg.activation)
    }

    /// `W_{l,l-1}` applied to `r_l`: convolution then pooling.
    fn predict_below<F: Float>(&self, s: &mut Session<'_, F>, l: usize, r: Var) -> Result<Var> {
        let y = self.feedback[l - 1].conv.forward(s, r)?;
        if self.cfg.resample {
            s.g.max_pool2(y)
        } else {
            Ok(y)
        }
    }

    /// `W_{l-1,l}` applied to an error of layer `l - 1`: upsampling then
    /// transposed convolution.
    fn lift<F: Float>(&self, s: &mut Session<'_, F>, l: usize, x: Var) -> Result<Var> {
        let x = if self.cfg.resample {
            let side = self.cfg.size(l);
            s.g.resize_bilinear(x, side, side)?
        } else {
            x
        };
        self.feedforward[l - 1].conv.forward(s, x)
    }

    fn check_inputs<F: Float>(&self, s: &Session<'_, F>, fv: Var, fa: Var) -> Result<usize> {
        let (vs, as_) = (s.g.shape(fv), s.g.shape(fa));
        let side = self.cfg.top_size;
        if vs.len() != 4 || vs[1] != self.cfg.visual_dim || vs[2] != side || vs[3] != side {
            return Err(TensorError::Config {
                op: "pcm",
                detail: format!("visual feature {vs:?} does not match [B, {}, {side}, {side}]", self.cfg.visual_dim),
            });
        }
        if as_ != [vs[0], self.cfg.audio_dim] {
            return Err(TensorError::Config {
                op: "pcm",
                detail: format!("audio feature {as_:?} does not match [{}, {}]", vs[0], self.cfg.audio_dim),
            });
        }
        Ok(vs[0])
    }

    /// Representations from one bottom-up sweep of the feedforward
    /// pathway starting at the audio feature.
    pub fn init_state<F: Float>(&self, s: &mut Session<'_, F>, fv: Var, fa: Var) -> Result<PcmState> {
        self.check_inputs(s, fv, fa)?;
        let side0 = self.cfg.size(0);
        let r0 = s.g.expand_spatial(fa, side0, side0)?;
        let mut r = vec![r0];
        for l in 1..=self.cfg.layers {
            let x = self.lift(s, l, r[l - 1])?;
            let x = self.norm(s, &self.feedforward[l - 1], x, 0)?;
            r.push(self.phi(s, x)?);
        }
        let n = self.cfg.layers;
        let mut p = vec![None; n + 1];
        p[n] = Some(fv);
        Ok(PcmState { r, p, e: vec![None; n] })
    }

    /// Top-down pass at step `t`: each layer moves toward the prediction
    /// from the layer above by rate `b_l`.
    pub fn feedback_sweep<F: Float>(&self, s: &mut Session<'_, F>, state: &mut PcmState, t: usize) -> Result<()> {
        let n = self.cfg.layers;
        for l in (1..=n).rev() {
            let p = if l == n {
                state.p[n].expect("top prediction is the visual feature")
            } else {
                self.predict_below(s, l + 1, state.r[l + 1])?
            };
            state.p[l] = Some(p);
            let braw = s.param(self.rate_b[l - 1]);
            let b = s.g.sigmoid(braw)?;
            let keep = s.g.affine(b, -F::one(), F::one())?;
            let old = s.g.mul_scalar(state.r[l], keep)?;
            let new = s.g.mul_scalar(p, b)?;
            let mix = s.g.add(old, new)?;
            let mix = self.norm(s, &self.feedback[l - 1], mix, t - 1)?;
            state.r[l] = self.phi(s, mix)?;
        }
        Ok(())
    }

    /// Bottom-up pass at step `t`: errors against the predictions correct
    /// each layer by rate `a_l`.
    pub fn feedforward_sweep<F: Float>(&self, s: &mut Session<'_, F>, state: &mut PcmState, t: usize) -> Result<()> {
        let n = self.cfg.layers;
        let p0 = self.predict_below(s, 1, state.r[1])?;
        let p0 = self.phi(s, p0)?;
        state.p[0] = Some(p0);
        for l in 1..=n {
            let below = l - 1;
            let pred = state.p[below].expect("prediction set by the preceding sweep");
            let err = s.g.sub(state.r[below], pred)?;
            state.e[below] = Some(err);
            let lifted = self.lift(s, l, err)?;
            let araw = s.param(self.rate_a[l - 1]);
            let a = s.g.activation(araw, Activation::Softplus)?;
            let step = s.g.mul_scalar(lifted, a)?;
            let moved = s.g.add(state.r[l], step)?;
            let moved = self.norm(s, &self.feedforward[l - 1], moved, t)?;
            state.r[l] = self.phi(s, moved)?;
        }
        Ok(())
    }

    /// Recompute every prediction and error from the current representations
    /// without changing them.
    pub fn refresh<F: Float>(&self, s: &mut Session<'_, F>, state: &mut PcmState) -> Result<()> {
        let n = self.cfg.layers;
        for l in 0..n {
            let p = self.predict_below(s, l + 1, state.r[l + 1])?;
            let p = if l == 0 { self.phi(s, p)? } else { p };
            state.p[l] = Some(p);
            state.e[l] = Some(s.g.sub(state.r[l], p)?);
        }
        Ok(())
    }

    pub fn project<F: Float>(&self, s: &mut Session<'_, F>, state: &PcmState) -> Result<Var> {
        self.output.forward(s, state.r[self.cfg.layers])
    }

    /// `steps` feedback/feedforward cycles, then a 1x1 projection of the top
    /// representation. The result has the shape of `fv`.
    pub fn run<F: Float>(&self, s: &mut Session<'_, F>, fv: Var, fa: Var, steps: usize, trace: bool) -> Result<PcmOutput> {
        let mut state = self.init_state(s, fv, fa)?;
        let mut per_step = Vec::new();
        for t in 1..=steps {
            self.feedback_sweep(s, &mut state, t)?;
            self.feedforward_sweep(s, &mut state, t)?;
            if trace {
                per_step.push(self.project(s, &state)?);
            }
        }
        let aligned = match per_step.last() {
            Some(&v) => v,
            None => self.project(s, &state)?,
        };
        Ok(PcmOutput { aligned, per_step, state })
    }
}

fn half_sq_dist<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>() / 2.0
}

/// Per-layer `1/2 |r_{l-1} - p_{l-1}|^2 + 1/2 |r_l - p_l|^2` (summed over the
/// batch) and their total. The state must have predictions for every layer,
/// as left by [`Pcm::refresh`].
pub fn diagnostic_loss<F: Float>(s: &Session<'_, F>, state: &PcmState) -> (Vec<f64>, f64) {
    let n = state.r.len() - 1;
    let term = |l: usize| {
        let p = state.p[l].expect("prediction present");
        half_sq_dist(s.g.value(state.r[l]), s.g.value(p))
    };
    let per_layer: Vec<f64> = (1..=n).map(|l| term(l - 1) + term(l)).collect();
    let total = per_layer.iter().sum();
    (per_layer, total)
}
