//! Finite-difference checks of the full two-view self-supervised loss on a
//! miniature model, with and without the recurrent refinement module.
//!
//! The stop-gradient is switched off here: with it on, the analytic adjoint is
//! deliberately not the derivative of the loss value. Its blocking is checked
//! bitwise elsewhere.

use std::time::Instant;

use avloc::config::Config;
use avloc::train::objective_loss;
use avloc::{Model, ParamStore, Session};
use avloc_tensor::{Float, Tensor};
use rand::{Rng, SeedableRng};
use rand_xorshift::XorShiftRng;

const SEEDS: u64 = 20;
const PROBES: usize = 24;
const BATCH: usize = 3;
const STEP: f64 = 1e-7;
/// Probes whose central differences at two step sizes disagree by more than
/// this fraction sit on a ReLU/max-pool/min-max kink and are skipped.
const KINK: f64 = 1e-6;

pub fn miniature(pcm: bool) -> Config {
    let mut c = Config::default();
    c.image_size = 32;
    c.spec_bins = 16;
    c.spec_frames = 16;
    c.visual_channels = vec![3, 4, 5];
    c.audio_channels = vec![3];
    c.audio_dim = 4;
    c.transform_hidden = 6;
    c.proj_hidden = 6;
    c.embed_dim = 4;
    c.pred_hidden = 3;
    c.pcm_layers = 2;
    c.pcm_steps = 2;
    c.use_pcm = pcm;
    c.stop_gradient = false;
    c.batch_size = BATCH;
    c.validate().unwrap();
    c
}

pub struct Batch {
    views: [Vec<f64>; 2],
    specs: Vec<f64>,
}

pub fn batch(cfg: &Config, rng: &mut XorShiftRng) -> Batch {
    let img = BATCH * 3 * cfg.image_size * cfg.image_size;
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<f64>>();
    Batch { views: [draw(img), draw(img)], specs: draw(BATCH * cfg.spec_bins * cfg.spec_frames) }
}

pub fn tensors<F: Float>(cfg: &Config, b: &Batch) -> ([Tensor<F>; 2], Tensor<F>) {
    let s = cfg.image_size;
    let cast = |v: &[f64]| v.iter().map(|&x| F::from_f64(x)).collect::<Vec<F>>();
    let view = |v: &[f64]| Tensor::new(&[BATCH, 3, s, s], cast(v)).unwrap();
    let spec = Tensor::new(&[BATCH, cfg.spec_bins, cfg.spec_frames], cast(&b.specs)).unwrap();
    ([view(&b.views[0]), view(&b.views[1])], spec)
}

pub fn loss<F: Float>(cfg: &Config, model: &Model, store: &mut ParamStore<F>, b: &Batch) -> f64 {
    let (views, specs) = tensors::<F>(cfg, b);
    let mut s = Session::train(store);
    let (l, _) = objective_loss(cfg, model, &mut s, views, specs, &[0; BATCH]).unwrap();
    s.g.value(l).item().as_f64()
}

/// Analytic gradient entries at `(param index, flat offset)` coordinates.
pub fn analytic<F: Float>(cfg: &Config, model: &Model, store: &mut ParamStore<F>, b: &Batch, coords: &[(usize, usize)]) -> Vec<f64> {
    let (views, specs) = tensors::<F>(cfg, b);
    let mut s = Session::train(store);
    let (l, _) = objective_loss(cfg, model, &mut s, views, specs, &[0; BATCH]).unwrap();
    let grads = s.g.backward(l).unwrap();
    let bound = s.bindings();
    let ids: Vec<_> = s.store().ids().collect();
    coords
        .iter()
        .map(|&(p, i)| {
            bound
                .iter()
                .find(|(id, _)| *id == ids[p])
                .and_then(|(_, v)| grads.get(*v))
                .map_or(0.0, |g| g.data()[i].as_f64())
        })
        .collect()
}

pub fn numeric(cfg: &Config, model: &Model, store: &ParamStore<f64>, b: &Batch, coords: &[(usize, usize)], step: f64) -> Vec<f64> {
    coords
        .iter()
        .map(|&(p, i)| {
            let at = |delta: f64| {
                let mut st = store.clone();
                let id = st.ids().nth(p).unwrap();
                let v = st.get_mut(id).value.data_mut();
                v[i] += delta;
                loss(cfg, model, &mut st, b)
            };
            (at(step) - at(-step)) / (2.0 * step)
        })
        .collect()
}

pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(n).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn coords(store: &ParamStore<f64>, rng: &mut XorShiftRng) -> Vec<(usize, usize)> {
    let sizes: Vec<usize> = store.ids().map(|id| store.get(id).value.numel()).collect();
    let total: usize = sizes.iter().sum();
    (0..PROBES)
        .map(|_| {
            let mut k = rng.random_range(0..total);
            let mut p = 0;
            while k >= sizes[p] {
                k -= sizes[p];
                p += 1;
            }
            (p, k)
        })
        .collect()
}

/// Worst 64-bit and 32-bit relative errors and skipped kink probes.
pub fn check(pcm: bool) -> (f64, f64, usize) {
    let start = Instant::now();
    let cfg = miniature(pcm);
    let (mut worst64, mut worst32, mut kinks) = (0.0f64, 0.0f64, 0usize);
    for seed in 0..SEEDS {
        let mut c = cfg.clone();
        c.seed = seed;
        let mut store = ParamStore::<f64>::new();
        let model = Model::new(&c, &mut store).unwrap();
        let mut rng = XorShiftRng::seed_from_u64(seed + 100);
        let b = batch(&c, &mut rng);
        let probe = coords(&store, &mut rng);

        let n_half = numeric(&c, &model, &store, &b, &probe, STEP / 2.0);
        let n_full = numeric(&c, &model, &store, &b, &probe, STEP);
        let scale = n_full.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let smooth: Vec<usize> = (0..PROBES).filter(|&k| (n_full[k] - n_half[k]).abs() <= KINK * scale).collect();
        assert!(smooth.len() >= PROBES - 3, "pcm={pcm} seed {seed}: {} of {PROBES} probes straddle a kink", PROBES - smooth.len());
        kinks += PROBES - smooth.len();
        let keep = |v: &[f64]| smooth.iter().map(|&k| v[k]).collect::<Vec<f64>>();
        let reference = keep(&n_full);

        let a64 = keep(&analytic(&c, &model, &mut store.clone(), &b, &probe));
        let e64 = rel_err(&a64, &reference);
        assert!(e64 < 1e-6, "pcm={pcm} seed {seed}: 64-bit relative error {e64:e}");

        // The 32-bit adjoint is compared against the 64-bit reference at the
        // same (rounded) parameters.
        let mut store32: ParamStore<f32> = store.cast();
        let rounded: ParamStore<f64> = store32.cast();
        let reference32 = keep(&numeric(&c, &model, &rounded, &b, &probe, STEP));
        let a32 = keep(&analytic(&c, &model, &mut store32, &b, &probe));
        let e32 = rel_err(&a32, &reference32);
        assert!(e32 < 1e-3, "pcm={pcm} seed {seed}: 32-bit relative error {e32:e}");
        worst64 = worst64.max(e64);
        worst32 = worst32.max(e32);
    }
    println!("composed loss pcm={pcm}: worst 64-bit {worst64:.2e}, worst 32-bit {worst32:.2e}, {kinks} probes skipped at kinks, {:?}", start.elapsed());
    (worst64, worst32, kinks)
}

