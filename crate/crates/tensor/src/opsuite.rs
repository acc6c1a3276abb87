//! Catalogue of finite-difference cases covering every differentiable
//! operation, shared by the test suite and the acceptance harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::float::Float;
use crate::gradcheck::{analytic_gradient, numeric_gradient, GradCheck};
use crate::graph::{Graph, Var};
use crate::ops::{Activation, BatchNormStats, ConvGeom};
use crate::tensor::Tensor;

pub type Build<F> = Box<dyn Fn(&mut Graph<F>, Var) -> Result<Var>>;

/// One differentiable operation reduced to a scalar of a single input.
pub struct OpCase<F: Float> {
    pub name: &'static str,
    pub input: Tensor<F>,
    pub build: Build<F>,
}

fn rand_t<F: Float>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::from_fn(shape, |_| F::from_f64(rng.gen_range(-1.0..1.0)))
}

/// Values bounded away from zero so relu-style kinks stay out of reach of the
/// finite-difference stencil.
fn off_zero<F: Float>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        F::from_f64(if rng.gen_bool(0.5) { m } else { -m })
    })
}

/// Reduce to a scalar through fixed random weights so every output element
/// contributes a distinct adjoint.
fn probe<F: Float>(g: &mut Graph<F>, y: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w = g.constant(rand_t(g.shape(y), &mut rng));
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Every differentiable operation, with inputs drawn from `seed`.
pub fn op_cases<F: Float>(seed: u64) -> Vec<OpCase<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut out: Vec<OpCase<F>> = Vec::new();
    let ps = seed.wrapping_mul(7919);
    macro_rules! case {
        ($name:expr, $input:expr, $body:expr) => {
            out.push(OpCase { name: $name, input: $input, build: Box::new($body) });
        };
    }

    let other = rand_t::<F>(&[3, 4], rng);
    let o = other.clone();
    case!("add", rand_t(&[3, 4], rng), move |g, x| {
        let c = g.constant(o.clone());
        let y = g.add(x, c)?;
        probe(g, y, ps)
    });
    let o = other.clone();
    case!("sub", rand_t(&[3, 4], rng), move |g, x| {
        let c = g.constant(o.clone());
        let y = g.sub(c, x)?;
        probe(g, y, ps)
    });
    case!("mul_self", rand_t(&[3, 4], rng), move |g, x| {
        let y = g.mul(x, x)?;
        probe(g, y, ps)
    });
    case!("affine", rand_t(&[5], rng), move |g, x| {
        let y = g.affine(x, F::from_f64(-1.5), F::from_f64(0.25))?;
        probe(g, y, ps)
    });
    let o = other.clone();
    case!("mul_scalar", rand_t(&[1], rng), move |g, s| {
        let c = g.constant(o.clone());
        let y = g.mul_scalar(c, s)?;
        probe(g, y, ps)
    });
    case!("mean", rand_t(&[2, 3], rng), move |g, x| {
        let sq = g.mul(x, x)?;
        g.mean(sq)
    });
    case!("row_sum", rand_t(&[3, 4], rng), move |g, x| {
        let y = g.row_sum(x)?;
        probe(g, y, ps)
    });
    case!("transpose", rand_t(&[3, 4], rng), move |g, x| {
        let y = g.transpose(x)?;
        probe(g, y, ps)
    });
    let rhs = rand_t::<F>(&[4, 2], rng);
    case!("matmul_left", rand_t(&[3, 4], rng), move |g, x| {
        let c = g.constant(rhs.clone());
        let y = g.matmul(x, c)?;
        probe(g, y, ps)
    });
    let lhs = rand_t::<F>(&[2, 3], rng);
    case!("matmul_right", rand_t(&[3, 4], rng), move |g, x| {
        let c = g.constant(lhs.clone());
        let y = g.matmul(c, x)?;
        probe(g, y, ps)
    });
    let (w, b) = (rand_t::<F>(&[3, 4], rng), rand_t::<F>(&[3], rng));
    case!("linear_input", rand_t(&[2, 4], rng), move |g, x| {
        let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
        let y = g.linear(x, wv, Some(bv))?;
        probe(g, y, ps)
    });
    let xin = rand_t::<F>(&[2, 4], rng);
    case!("linear_weight", rand_t(&[3, 4], rng), move |g, w| {
        let xv = g.constant(xin.clone());
        let y = g.linear(xv, w, None)?;
        probe(g, y, ps)
    });
    let xin = rand_t::<F>(&[2, 4], rng);
    case!("linear_bias", rand_t(&[3], rng), move |g, b| {
        let xv = g.constant(xin.clone());
        let wv = g.constant(Tensor::ones(&[3, 4]));
        let y = g.linear(xv, wv, Some(b))?;
        probe(g, y, ps)
    });

    let k = rand_t::<F>(&[3, 2, 3, 3], rng);
    case!("conv2d_input", rand_t(&[2, 2, 4, 4], rng), move |g, x| {
        let kv = g.constant(k.clone());
        let y = g.conv2d(x, kv, None, ConvGeom::new(1, 1))?;
        probe(g, y, ps)
    });
    let xin = rand_t::<F>(&[2, 2, 5, 5], rng);
    case!("conv2d_kernel_strided", rand_t(&[3, 2, 3, 3], rng), move |g, k| {
        let xv = g.constant(xin.clone());
        let y = g.conv2d(xv, k, None, ConvGeom::new(2, 1))?;
        probe(g, y, ps)
    });
    let xin = rand_t::<F>(&[2, 2, 4, 4], rng);
    case!("conv2d_bias", rand_t(&[3], rng), move |g, b| {
        let xv = g.constant(xin.clone());
        let kv = g.constant(Tensor::ones(&[3, 2, 3, 3]));
        let y = g.conv2d(xv, kv, Some(b), ConvGeom::new(1, 1))?;
        probe(g, y, ps)
    });
    let k = rand_t::<F>(&[2, 3, 3, 3], rng);
    case!("conv_transpose_input", rand_t(&[2, 2, 3, 3], rng), move |g, x| {
        let kv = g.constant(k.clone());
        let y = g.conv_transpose2d(x, kv, None, ConvGeom::new(2, 1).with_output_padding(1))?;
        probe(g, y, ps)
    });
    let xin = rand_t::<F>(&[2, 2, 3, 3], rng);
    case!("conv_transpose_kernel", rand_t(&[2, 3, 3, 3], rng), move |g, k| {
        let xv = g.constant(xin.clone());
        let y = g.conv_transpose2d(xv, k, None, ConvGeom::new(1, 1))?;
        probe(g, y, ps)
    });
    let xin = rand_t::<F>(&[2, 2, 3, 3], rng);
    case!("conv_transpose_bias", rand_t(&[3], rng), move |g, b| {
        let xv = g.constant(xin.clone());
        let kv = g.constant(Tensor::ones(&[2, 3, 3, 3]));
        let y = g.conv_transpose2d(xv, kv, Some(b), ConvGeom::new(1, 1))?;
        probe(g, y, ps)
    });

    case!("max_pool2", rand_t(&[2, 2, 4, 4], rng), move |g, x| {
        let y = g.max_pool2(x)?;
        probe(g, y, ps)
    });
    case!("resize_up", rand_t(&[2, 1, 2, 3], rng), move |g, x| {
        let y = g.resize_bilinear(x, 5, 4)?;
        probe(g, y, ps)
    });
    case!("resize_down", rand_t(&[1, 2, 6, 6], rng), move |g, x| {
        let y = g.resize_bilinear(x, 4, 3)?;
        probe(g, y, ps)
    });
    case!("global_avg_pool", rand_t(&[2, 3, 2, 2], rng), move |g, x| {
        let y = g.global_avg_pool(x)?;
        probe(g, y, ps)
    });
    case!("expand_spatial", rand_t(&[2, 3], rng), move |g, x| {
        let y = g.expand_spatial(x, 2, 3)?;
        probe(g, y, ps)
    });
    let o = rand_t::<F>(&[2, 1, 2, 2], rng);
    case!("concat_channels", rand_t(&[2, 3, 2, 2], rng), move |g, x| {
        let c = g.constant(o.clone());
        let y = g.concat_channels(c, x)?;
        probe(g, y, ps)
    });

    for kind in [Activation::Relu, Activation::Gelu, Activation::Sigmoid, Activation::Tanh, Activation::Softplus] {
        let name = match kind {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            _ => "softplus",
        };
        case!(name, off_zero(&[3, 4], rng), move |g, x| {
            let y = g.activation(x, kind)?;
            probe(g, y, ps)
        });
    }
    case!("softmax_spatial", rand_t(&[2, 3, 3], rng), move |g, x| {
        let y = g.softmax_spatial(x)?;
        probe(g, y, ps)
    });

    let (gamma, beta) = (rand_t::<F>(&[2], rng), rand_t::<F>(&[2], rng));
    case!("batch_norm_train", rand_t(&[4, 2, 2, 2], rng), move |g, x| {
        let (gv, bv) = (g.constant(gamma.clone()), g.constant(beta.clone()));
        let y = g.batch_norm(x, gv, bv, &mut BatchNormStats::new(2), true)?;
        probe(g, y, ps)
    });
    let xin = rand_t::<F>(&[4, 2, 2, 2], rng);
    case!("batch_norm_gamma", rand_t(&[2], rng), move |g, gamma| {
        let xv = g.constant(xin.clone());
        let bv = g.constant(Tensor::zeros(&[2]));
        let y = g.batch_norm(xv, gamma, bv, &mut BatchNormStats::new(2), true)?;
        probe(g, y, ps)
    });
    case!("batch_norm_eval", rand_t(&[3, 2], rng), move |g, x| {
        let gv = g.constant(Tensor::full(&[2], F::from_f64(1.3)));
        let bv = g.constant(Tensor::zeros(&[2]));
        let mut stats = BatchNormStats::new(2);
        stats.mean = vec![F::from_f64(0.2), F::from_f64(-0.1)];
        stats.var = vec![F::from_f64(0.5), F::from_f64(2.0)];
        let y = g.batch_norm(x, gv, bv, &mut stats, false)?;
        probe(g, y, ps)
    });
    case!("normalize_rows", rand_t(&[3, 4], rng), move |g, x| {
        let y = g.normalize_rows(x, F::from_f64(1e-8))?;
        probe(g, y, ps)
    });
    let fmap = rand_t::<F>(&[2, 3, 2, 2], rng);
    case!("similarity_query", rand_t(&[2, 3], rng), move |g, q| {
        let fv = g.constant(fmap.clone());
        let y = g.similarity_map(q, fv, F::from_f64(1e-8))?;
        probe(g, y, ps)
    });
    let query = rand_t::<F>(&[2, 3], rng);
    case!("similarity_features", rand_t(&[2, 3, 2, 2], rng), move |g, f| {
        let qv = g.constant(query.clone());
        let y = g.similarity_map(qv, f, F::from_f64(1e-8))?;
        probe(g, y, ps)
    });
    case!("minmax_scale", rand_t(&[2, 2, 3], rng), move |g, x| {
        let y = g.minmax_scale(x, 6)?;
        probe(g, y, ps)
    });
    let fmap = rand_t::<F>(&[2, 3, 2, 2], rng);
    case!("attend_pool_weights", rand_t(&[2, 2, 2], rng), move |g, s| {
        let fv = g.constant(fmap.clone());
        let y = g.attend_pool(s, fv)?;
        probe(g, y, ps)
    });
    let weights = rand_t::<F>(&[2, 2, 2], rng);
    case!("attend_pool_features", rand_t(&[2, 3, 2, 2], rng), move |g, f| {
        let sv = g.constant(weights.clone());
        let y = g.attend_pool(sv, f)?;
        probe(g, y, ps)
    });
    case!("masked_cross_entropy", rand_t(&[3, 3], rng), move |g, x| {
        let allowed = [true, false, true, true, true, true, false, false, true];
        Ok(g.masked_cross_entropy(x, &[0, 1, 2], &allowed)?.loss)
    });
    case!("stop_gradient_product", rand_t(&[4], rng), move |g, x| {
        let s = g.stop_gradient(x);
        let y = g.mul(s, x)?;
        probe(g, y, ps)
    });
    out
}

/// The stop-gradient case is deliberately not the derivative of its forward
/// value; its reverse pass must give exactly half the numeric slope.
fn error_of(name: &str, cmp: &GradCheck<f64>) -> f64 {
    if name == "stop_gradient_product" {
        cmp.analytic.max_abs_diff(&cmp.numeric.map(|v| v * 0.5))
    } else {
        cmp.relative_error()
    }
}

fn record(worst: &mut Vec<(&'static str, f64)>, name: &'static str, err: f64) {
    match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(entry) => entry.1 = entry.1.max(err),
        None => worst.push((name, err)),
    }
}

/// Worst relative error per operation over `seeds`, 64-bit, step 1e-5.
pub fn worst_errors_f64(seeds: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut worst = Vec::new();
    for seed in 0..seeds {
        for case in op_cases::<f64>(seed) {
            let analytic = analytic_gradient(&case.build, &case.input)?;
            let numeric = numeric_gradient(&case.build, &case.input, 1e-5)?;
            record(&mut worst, case.name, error_of(case.name, &GradCheck { analytic, numeric }));
        }
    }
    Ok(worst)
}

/// Worst relative error per operation over `seeds` for 32-bit reverse
/// passes, against central differences of the same function evaluated in
/// 64-bit at the 32-bit step 1e-3 (a 32-bit forward pass alone rounds at
/// about the size of the tolerance).
pub fn worst_errors_f32(seeds: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut worst = Vec::new();
    for seed in 0..seeds {
        for (c32, c64) in op_cases::<f32>(seed).into_iter().zip(op_cases::<f64>(seed)) {
            let analytic = analytic_gradient(&c32.build, &c32.input)?.cast::<f64>();
            let numeric = numeric_gradient(&c64.build, &c32.input.cast::<f64>(), 1e-3)?;
            record(&mut worst, c32.name, error_of(c32.name, &GradCheck { analytic, numeric }));
        }
    }
    Ok(worst)
}
