//! Parameterized building blocks.

use avloc_tensor::{Activation, ConvGeom, Float, Result, Var};

use crate::params::{Group, ParamId, ParamStore, Session, StatsId};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<F: Float>(store: &mut ParamStore<F>, name: &str, inputs: usize, outputs: usize, group: Group, rng: &mut Rng) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[outputs, inputs], inputs, group, rng);
        let bias = store.add_uniform(format!("{name}.bias"), &[outputs], inputs, group, rng);
        Self { weight, bias }
    }

    pub fn forward<F: Float>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.g.linear(x, w, Some(b))
    }
}

/// Learnable affine plus running statistics.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
}

impl Norm {
    pub fn new<F: Float>(store: &mut ParamStore<F>, name: &str, channels: usize, group: Group) -> Self {
        let gamma = store.add(format!("{name}.gamma"), avloc_tensor::Tensor::ones(&[channels]), group);
        let beta = store.add(format!("{name}.beta"), avloc_tensor::Tensor::zeros(&[channels]), group);
        let stats = store.add_stats(name, channels);
        Self { gamma, beta, stats }
    }

    pub fn forward<F: Float>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var> {
        s.batch_norm(x, self.gamma, self.beta, self.stats)
    }
}

/// Square-kernel convolution. With `transposed`, weights are laid out as
/// `[in, out, k, k]` and the layer applies the adjoint convolution.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub transposed: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        transposed: bool,
        group: Group,
        rng: &mut Rng,
    ) -> Self {
        let (shape, fan_in) = if transposed {
            ([inputs, outputs, kernel, kernel], outputs * kernel * kernel)
        } else {
            ([outputs, inputs, kernel, kernel], inputs * kernel * kernel)
        };
        let weight = store.add_uniform(format!("{name}.weight"), &shape, fan_in, group, rng);
        let bias = store.add_uniform(format!("{name}.bias"), &[outputs], fan_in, group, rng);
        Self { weight, bias, geom: ConvGeom::new(1, kernel / 2), transposed }
    }

    pub fn forward<F: Float>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        if self.transposed {
            s.g.conv_transpose2d(x, w, Some(b), self.geom)
        } else {
            s.g.conv2d(x, w, Some(b), self.geom)
        }
    }
}

/// conv3x3 -> batch norm -> GELU -> 2x2 max pool.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv,
    pub norm: Norm,
}

impl ConvBlock {
    pub fn new<F: Float>(store: &mut ParamStore<F>, name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let conv = Conv::new(store, &format!("{name}.conv"), inputs, outputs, 3, false, Group::Rest, rng);
        let norm = Norm::new(store, &format!("{name}.bn"), outputs, Group::Rest);
        Self { conv, norm }
    }

    pub fn forward<F: Float>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        let y = self.norm.forward(s, y)?;
        let y = s.g.activation(y, Activation::Gelu)?;
        s.g.max_pool2(y)
    }
}
