use avloc::attention::{attend_pool, fuse, scale_map, similarity_map, ConcatReducer};
use avloc::config::{Fusion, Scaling};
use avloc::rng::{stream, Purpose};
use avloc::{ParamStore, Session};
use avloc_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xorshift::XorShiftRng;

fn random(shape: &[usize], rng: &mut XorShiftRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "entry {i}: {x} vs {y}");
    }
}

fn sim(q: &Tensor<f64>, f: &Tensor<f64>) -> Vec<f64> {
    let mut store = ParamStore::<f64>::new();
    let mut s = Session::eval(&mut store);
    let (qv, fv) = (s.g.constant(q.clone()), s.g.constant(f.clone()));
    let m = similarity_map(&mut s, qv, fv).unwrap();
    s.g.value(m).data().to_vec()
}

fn scaled(map: &[f64], side: usize, method: Scaling) -> Vec<f64> {
    let mut store = ParamStore::<f64>::new();
    let mut s = Session::eval(&mut store);
    let m = s.g.constant(Tensor::new(&[map.len() / (side * side), side, side], map.to_vec()).unwrap());
    let y = scale_map(&mut s, m, method).unwrap();
    s.g.value(y).data().to_vec()
}

#[test]
fn similarity_matches_per_location_cosine() {
    let mut rng = XorShiftRng::seed_from_u64(3);
    let q = random(&[1, 4], &mut rng);
    let f = random(&[1, 4, 2, 2], &mut rng);
    let got = sim(&q, &f);
    for loc in 0..4 {
        let col: Vec<f64> = (0..4).map(|c| f.data()[c * 4 + loc]).collect();
        let dot: f64 = col.iter().zip(q.data()).map(|(a, b)| a * b).sum();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let want = dot / (norm(&col) * norm(q.data()));
        assert!((got[loc] - want).abs() < 1e-6);
    }
}

#[test]
fn parallel_and_orthogonal_columns() {
    let q = Tensor::new(&[1, 2], vec![0.6, 0.8]).unwrap();
    let par = Tensor::new(&[1, 2, 1, 2], vec![0.6, 1.2, 0.8, 1.6]).unwrap();
    close(&sim(&q, &par), &[1.0, 1.0], 1e-6);
    let orth = Tensor::new(&[1, 2, 1, 2], vec![-0.8, 1.6, 0.6, -1.2]).unwrap();
    close(&sim(&q, &orth), &[0.0, 0.0], 1e-6);
}

#[test]
fn channel_mismatch_is_rejected() {
    let mut store = ParamStore::<f64>::new();
    let mut s = Session::eval(&mut store);
    let q = s.g.constant(Tensor::zeros(&[1, 3]));
    let f = s.g.constant(Tensor::zeros(&[1, 4, 2, 2]));
    assert!(similarity_map(&mut s, q, f).is_err());
}

#[test]
fn scaling_examples() {
    close(&scaled(&[0.2, 0.6, 0.4, 1.0], 2, Scaling::MinMax), &[0.0, 0.5, 0.25, 1.0], 1e-12);
    close(&scaled(&[0.3; 4], 2, Scaling::MinMax), &[0.5; 4], 0.0);
    close(&scaled(&[0.3; 4], 2, Scaling::Softmax), &[0.25; 4], 1e-12);
    close(&scaled(&[-0.5, 0.0, 0.5, 1.0], 2, Scaling::Relu), &[0.0, 0.0, 0.5, 1.0], 0.0);
    let s = scaled(&[-0.5, 0.0, 0.5, 1.0], 2, Scaling::Sigmoid);
    close(&s, &[-0.5f64, 0.0, 0.5, 1.0].map(|x| 1.0 / (1.0 + (-x).exp())), 1e-12);
    let rs = scaled(&[-0.5, -0.2, 0.0, 1.0], 2, Scaling::ReluSoftmax);
    let e = 1f64.exp();
    close(&rs, &[1.0 / (3.0 + e), 1.0 / (3.0 + e), 1.0 / (3.0 + e), e / (3.0 + e)], 1e-12);
}

#[test]
fn minmax_is_per_map() {
    let two = [0.0, 1.0, 2.0, 3.0, 5.0, 5.0, 5.0, 5.0];
    close(&scaled(&two, 2, Scaling::MinMax), &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 0.5, 0.5, 0.5, 0.5], 1e-12);
}

fn pool(w: &Tensor<f64>, f: &Tensor<f64>) -> Vec<f64> {
    let mut store = ParamStore::<f64>::new();
    let mut s = Session::eval(&mut store);
    let (wv, fv) = (s.g.constant(w.clone()), s.g.constant(f.clone()));
    let y = attend_pool(&mut s, wv, fv).unwrap();
    s.g.value(y).data().to_vec()
}

#[test]
fn attend_pool_matches_triple_loop() {
    let mut rng = XorShiftRng::seed_from_u64(9);
    let (b, c, h, w) = (2, 3, 2, 3);
    let wt = random(&[b, h, w], &mut rng);
    let f = random(&[b, c, h, w], &mut rng);
    let mut want = vec![0.0; b * c];
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    want[bi * c + ci] += wt.data()[(bi * h + i) * w + j] * f.data()[((bi * c + ci) * h + i) * w + j];
                }
            }
        }
    }
    close(&pool(&wt, &f), &want, 1e-6);
}

#[test]
fn attend_pool_selection_and_sum() {
    let mut rng = XorShiftRng::seed_from_u64(10);
    let f = random(&[1, 3, 2, 2], &mut rng);
    let onehot = Tensor::new(&[1, 2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    let col: Vec<f64> = (0..3).map(|c| f.data()[c * 4 + 2]).collect();
    close(&pool(&onehot, &f), &col, 0.0);
    let sums: Vec<f64> = (0..3).map(|c| f.data()[c * 4..c * 4 + 4].iter().sum()).collect();
    close(&pool(&Tensor::new(&[1, 2, 2], vec![1.0; 4]).unwrap(), &f), &sums, 1e-12);
    let bad = Tensor::<f64>::zeros(&[1, 3, 2]);
    let mut store = ParamStore::<f64>::new();
    let mut s = Session::eval(&mut store);
    let (wv, fv) = (s.g.constant(bad), s.g.constant(f));
    assert!(attend_pool(&mut s, wv, fv).is_err());
}

fn fused(mode: Fusion, f: &Tensor<f64>, q: &Tensor<f64>) -> Vec<f64> {
    let mut store = ParamStore::<f64>::new();
    let reducer = ConcatReducer::new(&mut store, f.shape()[1], &mut stream(0, Purpose::Init, 0));
    let mut s = Session::eval(&mut store);
    let (fv, qv) = (s.g.constant(f.clone()), s.g.constant(q.clone()));
    let (out, _) = fuse(&mut s, mode, Scaling::MinMax, fv, qv, Some(&reducer)).unwrap();
    s.g.value(out).data().to_vec()
}

#[test]
fn fusion_identities() {
    let mut rng = XorShiftRng::seed_from_u64(11);
    let f = random(&[2, 3, 2, 2], &mut rng);
    let zero = Tensor::zeros(&[2, 3]);
    let ones = Tensor::new(&[2, 3], vec![1.0; 6]).unwrap();
    let means: Vec<f64> = f.data().chunks(4).map(|p| p.iter().sum::<f64>() / 4.0).collect();
    close(&fused(Fusion::Add, &f, &zero), &means, 1e-12);
    close(&fused(Fusion::Multiply, &f, &ones), &fused(Fusion::Add, &f, &zero), 1e-12);
    assert_eq!(fused(Fusion::Concat, &f, &ones).len(), 6);

    let q = random(&[2, 3], &mut rng);
    let map = sim(&q, &f);
    let w = Tensor::new(&[2, 2, 2], scaled(&map, 2, Scaling::MinMax)).unwrap();
    assert_eq!(fused(Fusion::Attention, &f, &q), pool(&w, &f));
}

#[test]
fn concat_without_reducer_is_a_config_error() {
    let mut store = ParamStore::<f64>::new();
    let mut s = Session::eval(&mut store);
    let f = s.g.constant(Tensor::zeros(&[1, 2, 2, 2]));
    let q = s.g.constant(Tensor::zeros(&[1, 2]));
    assert!(fuse(&mut s, Fusion::Concat, Scaling::MinMax, f, q, None).is_err());
}

proptest! {
    #[test]
    fn similarity_ignores_query_scale(seed in 0u64..1000, alpha in 0.01f64..100.0) {
        let mut rng = XorShiftRng::seed_from_u64(seed);
        let q = random(&[2, 5], &mut rng);
        let f = random(&[2, 5, 3, 3], &mut rng);
        let qa = Tensor::new(&[2, 5], q.data().iter().map(|x| alpha * x).collect()).unwrap();
        close(&sim(&qa, &f), &sim(&q, &f), 1e-6);
        prop_assert!(sim(&q, &f).iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn minmax_ignores_positive_affine_maps(seed in 0u64..1000, a in 0.01f64..50.0, b in -5.0f64..5.0) {
        let mut rng = XorShiftRng::seed_from_u64(seed);
        let m = random(&[2, 3, 3], &mut rng);
        let moved: Vec<f64> = m.data().iter().map(|x| a * x + b).collect();
        let base = scaled(m.data(), 3, Scaling::MinMax);
        close(&scaled(&moved, 3, Scaling::MinMax), &base, 1e-6);
        for map in base.chunks(9) {
            prop_assert_eq!(map.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
            prop_assert_eq!(map.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
    }

    #[test]
    fn monotone_scalers_keep_the_argmax(seed in 0u64..1000) {
        let mut rng = XorShiftRng::seed_from_u64(seed);
        let mut m = random(&[1, 3, 3], &mut rng).data().to_vec();
        m[4] = 1.5;
        for method in [Scaling::MinMax, Scaling::Relu, Scaling::Sigmoid, Scaling::Softmax] {
            let s = scaled(&m, 3, method);
            let arg = (0..9).max_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap();
            prop_assert_eq!(arg, 4);
        }
    }

    #[test]
    fn attend_pool_is_bilinear(seed in 0u64..1000, k in -3.0f64..3.0) {
        let mut rng = XorShiftRng::seed_from_u64(seed);
        let (w1, w2) = (random(&[1, 2, 2], &mut rng), random(&[1, 2, 2], &mut rng));
        let f = random(&[1, 3, 2, 2], &mut rng);
        let comb = Tensor::new(&[1, 2, 2], w1.data().iter().zip(w2.data()).map(|(a, b)| a + k * b).collect()).unwrap();
        let want: Vec<f64> = pool(&w1, &f).iter().zip(pool(&w2, &f)).map(|(a, b)| a + k * b).collect();
        close(&pool(&comb, &f), &want, 1e-9);
        let g = random(&[1, 3, 2, 2], &mut rng);
        let fg = Tensor::new(&[1, 3, 2, 2], f.data().iter().zip(g.data()).map(|(a, b)| a + k * b).collect()).unwrap();
        let want: Vec<f64> = pool(&w1, &f).iter().zip(pool(&w1, &g)).map(|(a, b)| a + k * b).collect();
        close(&pool(&w1, &fg), &want, 1e-9);
    }
}
