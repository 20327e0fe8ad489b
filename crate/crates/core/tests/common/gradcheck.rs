//! Central finite-difference checks of every differentiable operation.

use mesti_core::attention::{BlockOptions, GradientAttentionParams, ResidualAttentionParams};
use mesti_core::autodiff::{Axis, Graph, Mode, Var};
use mesti_core::layers::{vector_shape, Session};
use mesti_core::params::{ParamId, ParamStore};
use mesti_core::tensor::{Shape, Tensor};
use mesti_core::Result;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric gradients.
pub const TOLERANCE: f64 = 1e-4;
/// Random configurations per case.
pub const CONFIGS: u64 = 20;

/// `|a - n| / max(|a|, |n|)` over whole gradient vectors; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform values with magnitude at least `0.05`, far from the kinks of
/// `relu` and `|.|` relative to the step.
pub fn off_kink(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Shuffled values on a grid of spacing `0.01`, so no two elements tie.
pub fn distinct(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.numel();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.01).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v).unwrap()
}

type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

fn weighted_sum(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn loss_value(inputs: &[Tensor], weights: &Tensor, build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let loss = weighted_sum(&mut g, out, weights).unwrap();
    g.value(loss).data()[0]
}

/// Compare `d/d inputs sum(R * build(inputs))` for a random fixed `R`;
/// returns the largest relative error over the inputs.
pub fn check_graph(inputs: &[Tensor], rng: &mut ChaCha8Rng, build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let weights = uniform(g.shape(out), -1.0, 1.0, rng);
    let loss = weighted_sum(&mut g, out, &weights).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).unwrap().to_vec();
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            *slot = (loss_value(&plus, &weights, build) - loss_value(&minus, &weights, build)) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

type Forward<'a> = dyn Fn(&mut Session, Var) -> Result<Var> + 'a;

fn session_loss(store: &ParamStore, x: &Tensor, weights: &Tensor, dropout_seed: u64, forward: &Forward) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let mut s = Session::train(store, &mut rng);
    let xv = s.graph.constant(x.clone());
    let out = forward(&mut s, xv).unwrap();
    let loss = weighted_sum(&mut s.graph, out, weights).unwrap();
    s.graph.value(loss).data()[0]
}

/// Finite-difference check of a layer in training mode with respect to its
/// input and every listed parameter. Dropout masks are replayed from
/// `dropout_seed` on every evaluation.
pub fn check_layer(
    store: &mut ParamStore,
    ids: &[ParamId],
    x: &Tensor,
    rng: &mut ChaCha8Rng,
    dropout_seed: u64,
    forward: &Forward,
) -> f64 {
    let mut drop_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let mut s = Session::train(store, &mut drop_rng);
    let xv = s.graph.variable(x.clone());
    let out = forward(&mut s, xv).unwrap();
    let weights = uniform(s.graph.shape(out), -1.0, 1.0, rng);
    let loss = weighted_sum(&mut s.graph, out, &weights).unwrap();
    let (mut graph, _) = s.into_parts();
    let grads = graph.backward(loss).unwrap();

    let mut numeric = vec![0.0; x.len()];
    for (j, slot) in numeric.iter_mut().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[j] += STEP;
        let mut minus = x.clone();
        minus.data_mut()[j] -= STEP;
        *slot = (session_loss(store, &plus, &weights, dropout_seed, forward)
            - session_loss(store, &minus, &weights, dropout_seed, forward))
            / (2.0 * STEP);
    }
    let mut worst = relative_error(grads.wrt(xv).unwrap(), &numeric);

    for &id in ids {
        let analytic = grads.param(id).unwrap();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = store.get(id).tensor.data()[j];
            store.values_mut(id)[j] = orig + STEP;
            let up = session_loss(store, x, &weights, dropout_seed, forward);
            store.values_mut(id)[j] = orig - STEP;
            let down = session_loss(store, x, &weights, dropout_seed, forward);
            store.values_mut(id)[j] = orig;
            *slot = (up - down) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

fn small_shape(rng: &mut ChaCha8Rng) -> Shape {
    Shape::new(rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(2..=6), rng.random_range(2..=6))
}

/// One named finite-difference case; `run(seed)` returns the largest
/// relative error for that random configuration.
pub struct Case {
    pub name: &'static str,
    pub run: fn(u64) -> f64,
}

fn conv_case(seed: u64, with_bias: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel = *[1usize, 3].choose(&mut rng).unwrap();
    let stride = rng.random_range(1..=2);
    let padding = rng.random_range(0..=kernel / 2);
    let (b, c, o) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
    let (h, w) = (rng.random_range(kernel..=6), rng.random_range(kernel..=6));
    let x = uniform(Shape::new(b, c, h, w), -1.0, 1.0, &mut rng);
    let wt = uniform(Shape::new(o, c, kernel, kernel), -1.0, 1.0, &mut rng);
    let mut inputs = vec![x, wt];
    if with_bias {
        inputs.push(uniform(vector_shape(o), -1.0, 1.0, &mut rng));
    }
    check_graph(&inputs, &mut rng, &move |g, v| g.conv2d(v[0], v[1], v.get(2).copied(), stride, padding))
}

fn batch_norm_case(seed: u64, mode: Mode) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = small_shape(&mut rng);
    shape.batch = shape.batch.max(2);
    let c = shape.channels;
    let x = uniform(shape, -2.0, 2.0, &mut rng);
    let gamma = uniform(vector_shape(c), 0.5, 1.5, &mut rng);
    let beta = uniform(vector_shape(c), -0.5, 0.5, &mut rng);
    let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
    check_graph(&[x, gamma, beta], &mut rng, &move |g, v| {
        g.batch_norm(v[0], v[1], v[2], &mean, &var, mode).map(|(y, _)| y)
    })
}

fn unary_case(seed: u64, op: fn(&mut Graph, Var) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = small_shape(&mut rng);
    let x = off_kink(shape, &mut rng);
    check_graph(&[x], &mut rng, &move |g, v| Ok(op(g, v[0])))
}

fn binary_case(seed: u64, op: fn(&mut Graph, Var, Var) -> Result<Var>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = small_shape(&mut rng);
    let a = uniform(shape, -1.0, 1.0, &mut rng);
    let b = Tensor::from_fn(shape, |i| {
        let gap = rng.random_range(0.05..1.0);
        if rng.random::<bool>() {
            a.data()[i] + gap
        } else {
            a.data()[i] - gap
        }
    });
    check_graph(&[a, b], &mut rng, &move |g, v| op(g, v[0], v[1]))
}

fn shift_case(seed: u64, axis: Axis) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = distinct(small_shape(&mut rng), &mut rng);
    check_graph(&[x], &mut rng, &move |g, v| Ok(g.shift_abs_diff(v[0], axis)))
}

fn maxpool_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=3);
    let stride = rng.random_range(1..=2);
    let padding = rng.random_range(0..k);
    let mut shape = small_shape(&mut rng);
    shape.height = shape.height.max(k);
    shape.width = shape.width.max(k);
    let x = distinct(shape, &mut rng);
    check_graph(&[x], &mut rng, &move |g, v| g.maxpool2d(v[0], k, stride, padding))
}

fn global_avg_pool_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(small_shape(&mut rng), -1.0, 1.0, &mut rng);
    check_graph(&[x], &mut rng, &|g, v| Ok(g.global_avg_pool(v[0])))
}

fn linear_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = small_shape(&mut rng);
    let k = rng.random_range(1..=5);
    let x = uniform(shape, -1.0, 1.0, &mut rng);
    let w = uniform(Shape::new(k, shape.item_len(), 1, 1), -1.0, 1.0, &mut rng);
    let b = uniform(vector_shape(k), -1.0, 1.0, &mut rng);
    check_graph(&[x, w, b], &mut rng, &|g, v| g.linear(v[0], v[1], v[2]))
}

fn dropout_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(small_shape(&mut rng), -1.0, 1.0, &mut rng);
    let rate = rng.random_range(0.1..0.6);
    check_graph(&[x], &mut rng, &move |g, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd50);
        g.dropout(v[0], rate, Mode::Train, &mut mask_rng)
    })
}

fn gate_mul_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = small_shape(&mut rng);
    let x = uniform(shape, -1.0, 1.0, &mut rng);
    let gate = uniform(Shape::new(shape.batch, 1, shape.height, shape.width), 0.0, 1.0, &mut rng);
    check_graph(&[x, gate], &mut rng, &|g, v| g.gate_mul(v[0], v[1]))
}

fn scale_by_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(small_shape(&mut rng), -1.0, 1.0, &mut rng);
    let s = uniform(Shape::scalar(), -2.0, 2.0, &mut rng);
    check_graph(&[x, s], &mut rng, &|g, v| g.scale_by(v[0], v[1]))
}

fn softmax_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(small_shape(&mut rng), -3.0, 3.0, &mut rng);
    check_graph(&[x], &mut rng, &|g, v| Ok(g.softmax_rows(v[0])))
}

fn bmm_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, m, k, n) =
        (rng.random_range(1..=3), rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(1..=5));
    let (tl, tr) = (rng.random::<bool>(), rng.random::<bool>());
    let lhs = if tl { Shape::new(b, 1, k, m) } else { Shape::new(b, 1, m, k) };
    let rhs = if tr { Shape::new(b, 1, n, k) } else { Shape::new(b, 1, k, n) };
    let l = uniform(lhs, -1.0, 1.0, &mut rng);
    let r = uniform(rhs, -1.0, 1.0, &mut rng);
    check_graph(&[l, r], &mut rng, &move |g, v| g.bmm(v[0], v[1], tl, tr))
}

fn spatial_attention_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d, c) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=3));
    let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let q = uniform(Shape::new(b, d, h, w), -1.5, 1.5, &mut rng);
    let k = uniform(Shape::new(b, d, h, w), -1.5, 1.5, &mut rng);
    let v = uniform(Shape::new(b, c, h, w), -1.0, 1.0, &mut rng);
    check_graph(&[q, k, v], &mut rng, &|g, v| g.spatial_attention(v[0], v[1], v[2]))
}

fn reshape_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = small_shape(&mut rng);
    let x = uniform(shape, -1.0, 1.0, &mut rng);
    let target = Shape::new(1, 1, shape.batch * shape.channels, shape.plane());
    check_graph(&[x], &mut rng, &move |g, v| g.reshape(v[0], target))
}

fn sum_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(small_shape(&mut rng), -1.0, 1.0, &mut rng);
    check_graph(&[x], &mut rng, &|g, v| Ok(g.sum(v[0])))
}

fn focal_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, k) = (rng.random_range(1..=4), rng.random_range(2..=5));
    let probs = uniform(Shape::new(b, 1, 1, k), 0.05, 0.95, &mut rng);
    let targets: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
    let gamma = *[0.0, 0.5, 1.0, 2.0, 3.0].choose(&mut rng).unwrap();
    check_graph(&[probs], &mut rng, &move |g, v| g.focal_loss(v[0], &targets, gamma))
}

fn gradient_attention_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = small_shape(&mut rng);
    shape.height += 1;
    shape.width += 1;
    let mut store = ParamStore::new();
    let gab = GradientAttentionParams::new(&mut store, "gab", shape.channels, &mut rng).unwrap();
    store.values_mut(gab.bias)[0] = rng.random_range(-1.0..1.0);
    let x = distinct(shape, &mut rng);
    let ids = [gab.weight, gab.bias];
    check_layer(&mut store, &ids, &x, &mut rng, seed, &|s, x| gab.forward(s, x).map(|(y, _)| y))
}

fn residual_attention_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c_in = rng.random_range(1..=4);
    let c_out = 8;
    let stride = rng.random_range(1..=2);
    let options = BlockOptions {
        self_attention: true,
        residual: rng.random(),
        strict_literal: rng.random(),
        dropout: *[0.0, 0.3].choose(&mut rng).unwrap(),
    };
    let mut store = ParamStore::new();
    let block = ResidualAttentionParams::new(&mut store, "block", c_in, c_out, stride, options, &mut rng).unwrap();
    let gamma = block.attention.as_ref().unwrap().gamma;
    store.values_mut(gamma)[0] = rng.random_range(0.5..1.5);
    let x = uniform(Shape::new(2, c_in, rng.random_range(3..=5), rng.random_range(3..=5)), -1.0, 1.0, &mut rng);
    let ids: Vec<ParamId> = store.trainable_ids();
    check_layer(&mut store, &ids, &x, &mut rng, seed, &|s, x| block.forward(s, x))
}

/// Every differentiable operation plus both attention blocks.
pub fn cases() -> Vec<Case> {
    vec![
        Case { name: "conv2d", run: |s| conv_case(s, true) },
        Case { name: "conv2d_no_bias", run: |s| conv_case(s, false) },
        Case { name: "batch_norm_train", run: |s| batch_norm_case(s, Mode::Train) },
        Case { name: "batch_norm_eval", run: |s| batch_norm_case(s, Mode::Eval) },
        Case { name: "relu", run: |s| unary_case(s, Graph::relu) },
        Case { name: "sigmoid", run: |s| unary_case(s, Graph::sigmoid) },
        Case { name: "maxpool2d", run: maxpool_case },
        Case { name: "global_avg_pool", run: global_avg_pool_case },
        Case { name: "linear", run: linear_case },
        Case { name: "dropout", run: dropout_case },
        Case { name: "add", run: |s| binary_case(s, Graph::add) },
        Case { name: "mul", run: |s| binary_case(s, Graph::mul) },
        Case { name: "abs_diff", run: |s| binary_case(s, Graph::abs_diff) },
        Case { name: "shift_abs_diff_horizontal", run: |s| shift_case(s, Axis::Horizontal) },
        Case { name: "shift_abs_diff_vertical", run: |s| shift_case(s, Axis::Vertical) },
        Case { name: "gate_mul", run: gate_mul_case },
        Case { name: "scale_by", run: scale_by_case },
        Case { name: "softmax_rows", run: softmax_case },
        Case { name: "bmm", run: bmm_case },
        Case { name: "spatial_attention", run: spatial_attention_case },
        Case { name: "reshape", run: reshape_case },
        Case { name: "sum", run: sum_case },
        Case { name: "focal_loss", run: focal_case },
        Case { name: "gradient_attention_block", run: gradient_attention_case },
        Case { name: "residual_attention_block", run: residual_attention_case },
    ]
}

/// Worst relative error of `case` over its random configurations.
pub fn worst_error(case: &Case) -> f64 {
    (0..CONFIGS).map(|seed| (case.run)(seed)).fold(0.0, f64::max)
}
