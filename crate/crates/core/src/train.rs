//! Training loop, evaluation and localization maps.

use std::fmt;

use avloc_tensor::{bilinear_resize_plain, Float, Tensor, Var, FLAT_RANGE};
use rand::seq::SliceRandom;

use crate::config::{Config, Objective};
use crate::error::{Error, Result};
use crate::metrics::{binarize, box_mask, ciou, EvalReport};
use crate::model::Model;
use crate::objective::{collapse_metric, infonce, sspl_loss};
use crate::optim::AdamW;
use crate::params::{ParamStore, Session};
use crate::rng::{stream, Purpose, Rng};
use crate::synth::{center_view, draw_view, enlarge, render_view, AugmentConfig, Dataset, Scene};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub collapse: f64,
    pub val_success: Option<f64>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch {} steps {} loss {:.6} collapse {:.6}", self.epoch, self.steps, self.loss, self.collapse)?;
        if let Some(v) = self.val_success {
            write!(f, " val_success {v:.4}")?;
        }
        Ok(())
    }
}

/// A trained model with its parameters, optimizer state and history.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    pub store: ParamStore<f32>,
    pub optimizer: AdamW<f32>,
    pub history: Vec<EpochLog>,
    /// Epoch whose parameters were kept (the best validation epoch).
    pub kept_epoch: usize,
    /// Epochs actually run.
    pub epochs_run: usize,
}

impl Trained {
    pub fn final_collapse(&self) -> f64 {
        self.history.iter().rev().find(|h| h.epoch == self.kept_epoch).map_or(f64::NAN, |h| h.collapse)
    }
}

/// Check that a dataset fits the model the config describes.
pub fn check_dims(cfg: &Config, data: &Dataset) -> Result<()> {
    let d = data.dims;
    if d.height != cfg.image_size || d.width != cfg.image_size || d.bins != cfg.spec_bins || d.frames != cfg.spec_frames {
        return Err(Error::Config(format!(
            "dataset is {}x{} images with {}x{} spectrograms, config expects {}x{} and {}x{}",
            d.height, d.width, d.bins, d.frames, cfg.image_size, cfg.image_size, cfg.spec_bins, cfg.spec_frames
        )));
    }
    Ok(())
}

/// Images prepared for view rendering (enlarged once when cropping).
struct ViewSource<'a> {
    scenes: Vec<&'a Scene>,
    sources: Vec<Vec<f32>>,
    side: usize,
    aug: AugmentConfig,
}

impl<'a> ViewSource<'a> {
    fn new(scenes: Vec<&'a Scene>, side: usize, aug: AugmentConfig) -> Self {
        let sources =
            if aug.crop { scenes.iter().map(|s| enlarge(&s.image, side)).collect() } else { Vec::new() };
        Self { scenes, sources, side, aug }
    }

    fn source(&self, i: usize) -> &[f32] {
        if self.aug.crop {
            &self.sources[i]
        } else {
            &self.scenes[i].image
        }
    }

    fn views(&self, idx: &[usize], rng: &mut Rng) -> Tensor<f32> {
        let n = 3 * self.side * self.side;
        let mut data = vec![0.0f32; idx.len() * n];
        for (k, &i) in idx.iter().enumerate() {
            let geom = draw_view(&self.aug, self.side, self.scenes[i].gt_box, rng);
            render_view(self.source(i), self.side, &self.aug, geom, &mut data[k * n..][..n]);
        }
        Tensor::new(&[idx.len(), 3, self.side, self.side], data).expect("sized above")
    }
}

fn spectrograms(scenes: &[&Scene], idx: &[usize], bins: usize, frames: usize) -> Tensor<f32> {
    let data = idx.iter().flat_map(|&i| scenes[i].spectrogram.iter().copied()).collect();
    Tensor::new(&[idx.len(), bins, frames], data).expect("dataset dims checked")
}

/// Sizes of the held-out validation split and the training remainder.
pub fn split_sizes(len: usize, val_fraction: f64) -> (usize, usize) {
    let val = (len as f64 * val_fraction).floor() as usize;
    (len - val, val)
}

/// Consecutive batches; a trailing batch is kept when it has at least two
/// samples (batch normalization needs two).
pub fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    order.chunks(batch_size).filter(|b| b.len() >= 2).collect()
}

pub struct Trainer<'a> {
    pub cfg: Config,
    data: &'a Dataset,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: Config, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        check_dims(&cfg, data)?;
        Ok(Self { cfg, data })
    }

    /// Run training. `log` receives one line per epoch.
    pub fn run(&self, log: &mut dyn FnMut(&str)) -> Result<Trained> {
        let cfg = &self.cfg;
        let mut store = ParamStore::<f32>::new();
        let model = Model::new(cfg, &mut store)?;
        let mut optimizer = AdamW::new(&store, cfg.lr_heads, cfg.lr_rest, cfg.beta1, cfg.beta2, cfg.weight_decay);
        let (n_train, n_val) = split_sizes(self.data.len(), cfg.val_fraction);
        let scenes: Vec<&Scene> = self.data.scenes.iter().collect();
        let train_src = ViewSource::new(scenes[..n_train].to_vec(), cfg.image_size, AugmentConfig::from_config(cfg));
        let val_scenes = &scenes[n_train..];

        let mut history = Vec::new();
        let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
        let mut stale = 0;
        let mut epochs_run = 0usize;
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..n_train).collect();
            order.shuffle(&mut stream(cfg.seed, Purpose::Shuffle, epoch as u64));
            let mut aug_rng = stream(cfg.seed, Purpose::Augment, epoch as u64);
            let (mut loss_sum, mut collapse_sum, mut steps) = (0.0, 0.0, 0);
            for (b, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
                let view1 = train_src.views(idx, &mut aug_rng);
                let view2 = train_src.views(idx, &mut aug_rng);
                let specs = spectrograms(&train_src.scenes, idx, cfg.spec_bins, cfg.spec_frames);
                let classes: Vec<u16> = idx.iter().map(|&i| train_src.scenes[i].class).collect();
                let (loss, collapse) =
                    train_step(cfg, &model, &mut store, &mut optimizer, [view1, view2], specs, &classes)
                        .map_err(|e| nan_context(e, epoch, b, cfg.seed))?;
                loss_sum += loss;
                collapse_sum += collapse;
                steps += 1;
            }
            epochs_run += 1;
            let val_success = if n_val > 0 {
                Some(evaluate_scenes(cfg, &model, &mut store, val_scenes, None)?.ciou_at_half)
            } else {
                None
            };
            let entry = EpochLog {
                epoch,
                steps,
                loss: loss_sum / steps.max(1) as f64,
                collapse: collapse_sum / steps.max(1) as f64,
                val_success,
            };
            log(&entry.to_string());
            history.push(entry);
            if let Some(v) = val_success {
                if best.as_ref().is_none_or(|(bv, _, _)| v > *bv) {
                    best = Some((v, epoch, store.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        log(&format!("early stop after epoch {epoch}"));
                        break;
                    }
                }
            }
        }
        let kept_epoch = match best {
            Some((_, e, kept)) => {
                store = kept;
                e
            }
            None => epochs_run.saturating_sub(1),
        };
        Ok(Trained { model, store, optimizer, history, kept_epoch, epochs_run })
    }
}

fn nan_context(e: Error, epoch: usize, batch: usize, seed: u64) -> Error {
    match e {
        Error::NonFinite { detail, .. } => Error::NonFinite { epoch, batch, seed, detail },
        Error::Tensor(avloc_tensor::TensorError::NonFinite { op, index }) => {
            Error::NonFinite { epoch, batch, seed, detail: format!("{op} produced a non-finite value at {index}") }
        }
        other => other,
    }
}

/// One optimizer step on a batch; returns the loss and the collapse
/// metric of the first view's projections.
/// Builds the configured training objective for one batch of two views.
/// Returns the scalar loss and the first view's projection.
pub fn objective_loss<F: Float>(
    cfg: &Config,
    model: &Model,
    s: &mut Session<'_, F>,
    views: [Tensor<F>; 2],
    specs: Tensor<F>,
    classes: &[u16],
) -> Result<(Var, Var)> {
    let spec = s.g.constant(specs);
    let audio = model.encode_audio(s, spec)?;
    let query = model.transform.forward(s, audio)?;
    let [v1, v2] = views;
    let img1 = s.g.constant(v1);
    let out1 = model.forward_view(s, img1, audio, query, None, false)?;
    let loss = match cfg.objective {
        Objective::Sspl => {
            let img2 = s.g.constant(v2);
            let out2 = model.forward_view(s, img2, audio, query, None, false)?;
            sspl_loss(s, out1.prediction, out2.prediction, out1.projection, out2.projection, cfg.stop_gradient)?.total
        }
        Objective::InfoNce | Objective::InfoNceMasked => {
            let za = model.audio_embedding(s, query)?;
            let mask = (cfg.objective == Objective::InfoNceMasked).then_some(classes);
            infonce(s, out1.projection, za, cfg.temperature, mask)?.loss
        }
    };
    Ok((loss, out1.projection))
}

pub fn train_step(
    cfg: &Config,
    model: &Model,
    store: &mut ParamStore<f32>,
    optimizer: &mut AdamW<f32>,
    views: [Tensor<f32>; 2],
    specs: Tensor<f32>,
    classes: &[u16],
) -> Result<(f64, f64)> {
    let mut s = Session::train(store);
    let (loss, projection) = objective_loss(cfg, model, &mut s, views, specs, classes)?;
    let value = s.g.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite { epoch: 0, batch: 0, seed: 0, detail: format!("loss is {value}") });
    }
    let collapse = collapse_metric(s.g.value(projection))?;
    let grads = s.g.backward(loss)?;
    let updates: Vec<_> = s
        .bindings()
        .into_iter()
        .filter_map(|(id, v)| grads.get(v).map(|g| (id, g.clone())))
        .collect();
    for (_, g) in &updates {
        g.check_finite("gradient")?;
    }
    drop(s);
    optimizer.update(store, &updates);
    Ok((value, collapse))
}

/// Per-map min-max scaling; flat maps become 0.5.
pub fn minmax(map: &[f32]) -> Vec<f32> {
    let lo = map.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if ((hi - lo) as f64) < FLAT_RANGE {
        return vec![0.5; map.len()];
    }
    map.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Localization output for one sample of the center view.
#[derive(Clone, Debug)]
pub struct SampleMaps {
    /// Min-max scaled map at image resolution.
    pub map: Vec<f32>,
    /// Per-cycle maps at image resolution (PCM models, when traced).
    pub steps: Vec<Vec<f32>>,
    /// Ground-truth box in view coordinates.
    pub gt_box: [f32; 4],
    /// The center view itself.
    pub view: Vec<f32>,
}

fn to_image_scale(raw: &[f32], h: usize, w: usize, side: usize) -> Vec<f32> {
    bilinear_resize_plain(&minmax(raw), h, w, side, side)
}

/// Localization maps of the deterministic center view of each scene.
pub fn localize(
    cfg: &Config,
    model: &Model,
    store: &mut ParamStore<f32>,
    scenes: &[&Scene],
    steps: Option<usize>,
    trace: bool,
) -> Result<Vec<SampleMaps>> {
    let side = cfg.image_size;
    let mut out = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(cfg.batch_size.max(1)) {
        let views: Vec<_> = chunk.iter().map(|s| center_view(s, side, cfg.aug_crop)).collect();
        let n = 3 * side * side;
        let mut images = Vec::with_capacity(chunk.len() * n);
        for (v, _) in &views {
            images.extend_from_slice(v);
        }
        let images = Tensor::new(&[chunk.len(), 3, side, side], images)?;
        let idx: Vec<usize> = (0..chunk.len()).collect();
        let specs = spectrograms(chunk, &idx, cfg.spec_bins, cfg.spec_frames);
        let mut s = Session::eval(store);
        let o = model.forward(&mut s, images, specs, steps, trace)?;
        let shape = s.g.shape(o.map).to_vec();
        let (h, w) = (shape[1], shape[2]);
        let plane = h * w;
        let raw = s.g.value(o.map).data();
        for (k, (view, gt_box)) in views.into_iter().enumerate() {
            let steps = o
                .step_maps
                .iter()
                .map(|&m| to_image_scale(&s.g.value(m).data()[k * plane..][..plane], h, w, side))
                .collect();
            out.push(SampleMaps { map: to_image_scale(&raw[k * plane..][..plane], h, w, side), steps, gt_box, view });
        }
    }
    Ok(out)
}

pub fn evaluate_scenes(
    cfg: &Config,
    model: &Model,
    store: &mut ParamStore<f32>,
    scenes: &[&Scene],
    steps: Option<usize>,
) -> Result<EvalReport> {
    let maps = localize(cfg, model, store, scenes, steps, false)?;
    let cious = maps
        .iter()
        .map(|m| ciou(&binarize(&m.map), &box_mask(m.gt_box, cfg.image_size)))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_cious(cious)
}

/// Score a model on a dataset; `steps` overrides the PCM cycle count.
pub fn evaluate(
    cfg: &Config,
    model: &Model,
    store: &mut ParamStore<f32>,
    data: &Dataset,
    steps: Option<usize>,
) -> Result<EvalReport> {
    check_dims(cfg, data)?;
    let scenes: Vec<&Scene> = data.scenes.iter().collect();
    evaluate_scenes(cfg, model, store, &scenes, steps)
}

/// Untrained model for a config (parameters from the init stream).
pub fn untrained(cfg: &Config) -> Result<(Model, ParamStore<f32>)> {
    let mut store = ParamStore::new();
    let model = Model::new(cfg, &mut store)?;
    Ok((model, store))
}

