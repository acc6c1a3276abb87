//! Named parameters, running statistics, and per-step binding into a graph.

use avloc_tensor::{BatchNormStats, Float, Graph, Result, Tensor, Var};

use crate::rng::Rng;
use rand::Rng as _;

/// Optimizer group: the projection/prediction heads train at their own rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Head,
    Rest,
}

#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub group: Group,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(pub(crate) usize);

/// Every learnable tensor and batch-norm statistic of a model, in
/// registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    pub params: Vec<Param<F>>,
    pub stats: Vec<(String, BatchNormStats<F>)>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new(), stats: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, group: Group) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param { name, value, group });
        ParamId(self.params.len() - 1)
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the usual default for dense and
    /// convolutional layers.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, group: Group, rng: &mut Rng) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let value = Tensor::from_fn(shape, |_| F::from_f64(rng.random_range(-bound..bound)));
        self.add(name, value, group)
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> StatsId {
        self.stats.push((name.into(), BatchNormStats::new(channels)));
        StatsId(self.stats.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn stats(&self, id: StatsId) -> &BatchNormStats<F> {
        &self.stats[id.0].1
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Same model in another precision.
    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), group: p.group })
                .collect(),
            stats: self
                .stats
                .iter()
                .map(|(n, s)| {
                    let c = |v: &Vec<F>| v.iter().map(|&x| G::from_f64(x.as_f64())).collect();
                    (
                        n.clone(),
                        BatchNormStats {
                            mean: c(&s.mean),
                            var: c(&s.var),
                            momentum: G::from_f64(s.momentum.as_f64()),
                            eps: G::from_f64(s.eps.as_f64()),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// One forward computation over a store. Parameters are bound into the
/// graph on first use; running statistics update in training mode.
pub struct Session<'s, F: Float> {
    pub g: Graph<F>,
    store: &'s mut ParamStore<F>,
    bound: Vec<Option<Var>>,
    pub training: bool,
}

impl<'s, F: Float> Session<'s, F> {
    /// Differentiable session (records the reverse pass).
    pub fn train(store: &'s mut ParamStore<F>) -> Self {
        let n = store.params.len();
        Self { g: Graph::new(), store, bound: vec![None; n], training: true }
    }

    /// Value-only session using running statistics.
    pub fn eval(store: &'s mut ParamStore<F>) -> Self {
        let n = store.params.len();
        Self { g: Graph::inference(), store, bound: vec![None; n], training: false }
    }

    /// Custom mode: gradients recorded or not, batch statistics or running.
    pub fn with_mode(store: &'s mut ParamStore<F>, record: bool, training: bool) -> Self {
        let n = store.params.len();
        let g = if record { Graph::new() } else { Graph::inference() };
        Self { g, store, bound: vec![None; n], training }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.g.param(self.store.params[id.0].value.clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn batch_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, stats: StatsId) -> Result<Var> {
        let (gv, bv) = (self.param(gamma), self.param(beta));
        let training = self.training;
        self.g.batch_norm(x, gv, bv, &mut self.store.stats[stats.0].1, training)
    }

    /// Graph variables of every bound parameter, by id.
    pub fn bindings(&self) -> Vec<(ParamId, Var)> {
        self.bound.iter().enumerate().filter_map(|(i, v)| v.map(|v| (ParamId(i), v))).collect()
    }

    pub fn store(&self) -> &ParamStore<F> {
        self.store
    }
}
