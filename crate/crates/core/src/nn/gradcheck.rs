//! Central finite-difference checks of the hand-written backward passes.
//!
//! Each check builds a small random instance, takes the scalar
//! `L = Σ out ⊙ R` for a fixed random `R`, and compares analytic gradients
//! of every parameter and of the input against `(L(θ+h) − L(θ−h)) / 2h`.
//! The result is the largest elementwise relative error
//! `|a − n| / max(|a|, |n|, REL_FLOOR)`.

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{batch, Adjacency, GraphBatch, RegressionGraph};
use crate::volume::Sex;

pub const STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn randn(rng: &mut impl Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

fn probe_loss(out: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (out * r).sum()
}

/// Compare `analytic` against central differences of `loss` as each entry
/// of the tensor behind `get` is perturbed.
fn compare<T>(
    target: &mut T,
    len: usize,
    analytic: &[f64],
    mut entry: impl FnMut(&mut T, usize) -> &mut f64,
    mut loss: impl FnMut(&mut T) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..len {
        let orig = *entry(target, i);
        *entry(target, i) = orig + STEP;
        let up = loss(target);
        *entry(target, i) = orig - STEP;
        let down = loss(target);
        *entry(target, i) = orig;
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

fn param_entry(p: &mut Parameter, i: usize) -> &mut f64 {
    let cols = p.value.ncols();
    &mut p.value[[i / cols, i % cols]]
}

/// Check all parameters of a model by perturbing through `params_mut`.
pub fn check_model<M: Model>(model: &mut M, input: &M::Input, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.zero_grad();
    let out = model.forward(input).expect("forward");
    let r = randn(&mut rng, out.dim());
    model.backward(&r).expect("backward");
    let grads: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.iter().copied().collect()).collect();
    let mut worst = 0.0f64;
    for (pi, analytic) in grads.iter().enumerate() {
        let len = analytic.len();
        worst = worst.max(compare(
            model,
            len,
            analytic,
            |m, i| param_entry(m.params_mut().swap_remove(pi), i),
            |m| probe_loss(&m.forward(input).expect("forward"), &r),
        ));
    }
    worst
}

fn input_check(x: &mut Array2<f64>, analytic: &Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> f64) -> f64 {
    let cols = x.ncols();
    let a: Vec<f64> = analytic.iter().copied().collect();
    compare(x, a.len(), &a, |x, i| &mut x[[i / cols, i % cols]], |x| f(x))
}

pub fn check_linear(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Linear::new(4, 3, &mut rng);
    let mut x = randn(&mut rng, (5, 4));
    let r = randn(&mut rng, (5, 3));
    layer.forward(&x).unwrap();
    let gx = layer.backward(&r).unwrap();
    let mut worst = input_check(&mut x, &gx, |x| probe_loss(&layer.apply(x).unwrap(), &r));
    let x0 = x.clone();
    for (pi, analytic) in [layer.w.grad.clone(), layer.b.grad.clone()].iter().enumerate() {
        let a: Vec<f64> = analytic.iter().copied().collect();
        worst = worst.max(compare(
            &mut layer,
            a.len(),
            &a,
            |l, i| param_entry(l.params_mut().swap_remove(pi), i),
            |l| probe_loss(&l.apply(&x0).unwrap(), &r),
        ));
    }
    worst
}

pub fn check_relu(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut relu = Relu::default();
    // Keep entries away from the kink.
    let mut x = randn(&mut rng, (6, 4)).mapv(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let r = randn(&mut rng, (6, 4));
    relu.forward(&x);
    let gx = relu.backward(&r).unwrap();
    input_check(&mut x, &gx, |x| probe_loss(&x.mapv(|v| v.max(0.0)), &r))
}

fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> Vec<[u32; 2]> {
    let mut edges = Vec::new();
    for a in 0..n as u32 {
        for b in a + 1..n as u32 {
            if rng.random_bool(p) {
                edges.push([a, b]);
            }
        }
    }
    edges
}

pub fn check_sage(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 7;
    let adj = Adjacency::from_edges(n, &random_graph(&mut rng, n, 0.4));
    let mut worst = 0.0f64;
    for act in [Activation::Identity, Activation::Relu] {
        let mut layer = SageLayer::new(3, 4, act, &mut rng);
        let mut x = randn(&mut rng, (n, 3));
        let r = randn(&mut rng, (n, 4));
        layer.forward(&x, &adj).unwrap();
        let gx = layer.backward(&r).unwrap();
        let mut probe = layer.clone();
        worst = worst.max(input_check(&mut x, &gx, |x| probe_loss(&probe.forward(x, &adj).unwrap(), &r)));
        let x0 = x.clone();
        for (pi, analytic) in [layer.lin.w.grad.clone(), layer.lin.b.grad.clone()].iter().enumerate() {
            let a: Vec<f64> = analytic.iter().copied().collect();
            worst = worst.max(compare(
                &mut layer,
                a.len(),
                &a,
                |l, i| param_entry(l.params_mut().swap_remove(pi), i),
                |l| probe_loss(&l.forward(&x0, &adj).unwrap(), &r),
            ));
        }
    }
    worst
}

pub fn check_batchnorm(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for training in [true, false] {
        let mut bn = BatchNorm1d::new(3);
        bn.gamma.value = randn(&mut rng, (1, 3));
        bn.beta.value = randn(&mut rng, (1, 3));
        bn.running_mean = ndarray::Array1::from_shape_simple_fn(3, || rng.random_range(-1.0..1.0));
        bn.running_var = ndarray::Array1::from_shape_simple_fn(3, || rng.random_range(0.5..2.0));
        bn.training = training;
        let mut x = randn(&mut rng, (6, 3));
        let r = randn(&mut rng, (6, 3));
        bn.forward(&x).unwrap();
        let gx = bn.backward(&r).unwrap();
        let mut probe = bn.clone();
        worst = worst.max(input_check(&mut x, &gx, |x| probe_loss(&probe.forward(x).unwrap(), &r)));
        let x0 = x.clone();
        for (pi, analytic) in [bn.gamma.grad.clone(), bn.beta.grad.clone()].iter().enumerate() {
            let a: Vec<f64> = analytic.iter().copied().collect();
            worst = worst.max(compare(
                &mut bn,
                a.len(),
                &a,
                |l, i| param_entry(l.params_mut().swap_remove(pi), i),
                |l| probe_loss(&l.forward(&x0).unwrap(), &r),
            ));
        }
    }
    worst
}

pub fn check_max_pool(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = GlobalMaxPool::default();
    let offsets = [0, 3, 7, 8];
    let mut x = randn(&mut rng, (8, 4));
    let r = randn(&mut rng, (3, 4));
    pool.forward(&x, &offsets).unwrap();
    let gx = pool.backward(&r).unwrap();
    let mut probe = pool.clone();
    input_check(&mut x, &gx, |x| probe_loss(&probe.forward(x, &offsets).unwrap(), &r))
}

pub fn check_mlp(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mlp = Mlp::new(&[4, 6, 3, 2], &mut rng);
    let mut x = randn(&mut rng, (5, 4));
    let r = randn(&mut rng, (5, 2));
    mlp.forward(&x).unwrap();
    let gx = mlp.backward(&r).unwrap();
    let mut probe = mlp.clone();
    let mut worst = input_check(&mut x, &gx, |x| probe_loss(&probe.forward(x).unwrap(), &r));
    let x0 = x.clone();
    let grads: Vec<Vec<f64>> = mlp.params().iter().map(|p| p.grad.iter().copied().collect()).collect();
    for (pi, a) in grads.iter().enumerate() {
        worst = worst.max(compare(
            &mut mlp,
            a.len(),
            a,
            |l, i| param_entry(l.params_mut().swap_remove(pi), i),
            |l| probe_loss(&l.forward(&x0).unwrap(), &r),
        ));
    }
    worst
}

pub fn check_conv2d(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for (stride, padding) in [(1, 0), (2, 1)] {
        let mut conv = Conv2d::new(2, 3, 3, stride, padding, &mut rng);
        let x = Array4::from_shape_simple_fn((2, 2, 6, 5), || rng.random_range(-1.0..1.0));
        let out = conv.forward(&x).unwrap();
        let r = Array4::from_shape_simple_fn(out.raw_dim(), || rng.random_range(-1.0..1.0));
        let gx = conv.backward(&r).unwrap();
        let loss = |c: &mut Conv2d, x: &Array4<f64>| (&c.forward(x).unwrap() * &r).sum();
        let a: Vec<f64> = gx.iter().copied().collect();
        let mut xs = x.clone();
        let mut probe = conv.clone();
        let shape = x.dim();
        worst = worst.max(compare(
            &mut xs,
            a.len(),
            &a,
            |x, i| {
                let (_, c, h, w) = shape;
                &mut x[[i / (c * h * w), (i / (h * w)) % c, (i / w) % h, i % w]]
            },
            |x| loss(&mut probe, x),
        ));
        for (pi, analytic) in [conv.w.grad.clone(), conv.b.grad.clone()].iter().enumerate() {
            let a: Vec<f64> = analytic.iter().copied().collect();
            worst = worst.max(compare(
                &mut conv,
                a.len(),
                &a,
                |l, i| param_entry(l.params_mut().swap_remove(pi), i),
                |l| loss(l, &x),
            ));
        }
    }
    worst
}

/// A random connected-ish batch of `graphs` graphs with `nodes` nodes each.
pub fn random_batch(rng: &mut impl Rng, graphs: usize, nodes: usize) -> GraphBatch {
    let gs: Vec<RegressionGraph> = (0..graphs)
        .map(|g| {
            let mut edges = random_graph(rng, nodes, 0.5);
            for v in 1..nodes as u32 {
                edges.push([v - 1, v]);
            }
            edges.sort_unstable();
            edges.dedup();
            let x = randn(rng, (nodes, 3));
            RegressionGraph::new(x, edges, [1.0, 2.0], format!("G{g}"), Sex::F).expect("valid graph")
        })
        .collect();
    batch(&gs).expect("non-empty")
}

/// Full GNN (training-mode batch norm) on a single 6-node graph, h = 8.
pub fn check_gnn(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = random_batch(&mut rng, 1, 6);
    let mut model = GnnModel::new(GnnConfig { hidden: 8, seed });
    check_model(&mut model, &b, seed)
}

/// Full CNN at a reduced input size so every weight can be checked.
pub fn check_cnn(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = CnnConfig {
        input: [15, 15],
        channels: [3, 4, 5],
        hidden: [6, 4],
        seed,
        ..CnnConfig::default()
    };
    let mut model = CnnModel::new(cfg).expect("valid geometry");
    let x = Array4::from_shape_simple_fn((2, 2, 15, 15), || rng.random_range(0.0..1.0));
    check_model(&mut model, &x, seed)
}
