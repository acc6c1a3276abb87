//! Stop-gradient blocking on a miniature two-branch model.

use avloc::objective::sspl_loss;
use avloc::params::{Group, ParamStore, Session};
use avloc::rng::{stream, Purpose};
use avloc_tensor::{Tensor, Var};
use rand::Rng;

/// Miniature two-branch model where each target projection has its own
/// weights, so those weights are reachable only through the stop-gradient.
pub struct Mini {
    pub online: [avloc::params::ParamId; 2],
    pub predictor: avloc::params::ParamId,
    pub target: [avloc::params::ParamId; 2],
}

pub fn mini(store: &mut ParamStore<f64>, seed: u64) -> Mini {
    let mut rng = stream(seed, Purpose::Init, 0);
    let mut add = |name: &str, store: &mut ParamStore<f64>| store.add_uniform(name, &[4, 5], 5, Group::Rest, &mut rng);
    Mini {
        online: [add("online1", store), add("online2", store)],
        predictor: {
            let mut r = stream(seed, Purpose::Init, 1);
            store.add_uniform("predictor", &[4, 4], 4, Group::Head, &mut r)
        },
        target: [add("target1", store), add("target2", store)],
    }
}

pub fn views(s: &mut Session<'_, f64>, seed: u64) -> [Var; 2] {
    let mut rng = stream(seed, Purpose::Probe, 0);
    let mut v = || Tensor::from_fn(&[3, 5], |_| rng.random_range(-1.0..1.0));
    let (a, b) = (v(), v());
    [s.g.constant(a), s.g.constant(b)]
}

/// Gradients of each directed term with respect to every parameter.
pub fn directed_gradients(seed: u64, stop: bool) -> Vec<(String, String, Tensor<f64>)> {
    let mut store = ParamStore::new();
    let m = mini(&mut store, seed);
    let mut out = Vec::new();
    for term in ["forward", "backward"] {
        let mut s = Session::train(&mut store);
        let x = views(&mut s, seed);
        let (wp, wo1, wo2, wt1, wt2) =
            (s.param(m.predictor), s.param(m.online[0]), s.param(m.online[1]), s.param(m.target[0]), s.param(m.target[1]));
        let h1 = s.g.linear(x[0], wo1, None).unwrap();
        let h2 = s.g.linear(x[1], wo2, None).unwrap();
        let p1 = s.g.linear(h1, wp, None).unwrap();
        let p2 = s.g.linear(h2, wp, None).unwrap();
        let z1 = s.g.linear(x[0], wt1, None).unwrap();
        let z2 = s.g.linear(x[1], wt2, None).unwrap();
        let l = sspl_loss(&mut s, p1, p2, z1, z2, stop).unwrap();
        let loss = if term == "forward" { l.forward } else { l.backward };
        let grads = s.g.backward(loss).unwrap();
        for (id, v) in s.bindings() {
            let name = s.store().get(id).name.clone();
            out.push((term.to_string(), name, grads.get_or_zeros(v, s.g.shape(v))));
        }
    }
    out
}

/// Adjoints of parameters reachable only through the stop-gradient branch
/// of each directed term are exactly zero.
pub fn stop_gradient_zeroes_target_only_parameters_bitwise(seeds: u64) {
    for seed in 0..seeds {
        for (term, name, g) in directed_gradients(seed, true) {
            let blocked = (term == "forward" && name == "target2") || (term == "backward" && name == "target1");
            if blocked {
                assert!(g.data().iter().all(|v| v.to_bits() == 0), "{term}/{name} leaked {:?}", g.data());
            }
        }
    }
}

