use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mesti_core::autodiff::Graph;
use mesti_core::image::Image;
use mesti_core::layers::Session;
use mesti_core::{encode_mesti, FrameSequence, MegaNet, MegaNetConfig, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pattern(shape: Shape, salt: usize) -> Tensor {
    Tensor::from_fn(shape, |i| ((i * 31 + salt * 17) % 101) as f64 / 101.0 - 0.5)
}

fn encoder(c: &mut Criterion) {
    let frames: Vec<Image<f32>> = (0..15)
        .map(|t| Image::from_fn(112, 112, 3, |y, x, ch| ((y * 3 + x * 7 + ch + t * 5) % 251) as f32 / 250.0))
        .collect();
    let seq = FrameSequence::new(frames, Some(9));
    c.bench_function("encode_mesti 15 x 112x112x3", |b| b.iter(|| encode_mesti(black_box(&seq)).unwrap()));
}

fn conv(c: &mut Criterion) {
    let x = pattern(Shape::new(8, 16, 28, 28), 1);
    let w = pattern(Shape::new(16, 16, 3, 3), 2);
    c.bench_function("conv2d 3x3 16->16 at 28x28, batch 8, forward+backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xv = g.variable(x.clone());
            let wv = g.variable(w.clone());
            let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
            let loss = g.sum(y);
            black_box(g.backward(loss).unwrap());
        })
    });
}

fn attention(c: &mut Criterion) {
    let q = pattern(Shape::new(8, 2, 28, 28), 3);
    let k = pattern(Shape::new(8, 2, 28, 28), 4);
    let v = pattern(Shape::new(8, 16, 28, 28), 5);
    c.bench_function("spatial_attention N=784, batch 8, forward+backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let (qv, kv, vv) = (g.variable(q.clone()), g.variable(k.clone()), g.variable(v.clone()));
            let y = g.spatial_attention(qv, kv, vv).unwrap();
            let loss = g.sum(y);
            black_box(g.backward(loss).unwrap());
        })
    });
}

fn training_step(c: &mut Criterion) {
    let net = MegaNet::build(MegaNetConfig::desk(), 0).unwrap();
    let x = Tensor::from_fn(net.input_shape(8), |i| ((i * 31) % 101) as f64 / 101.0);
    let targets = [0, 1, 2, 0, 1, 2, 0, 1];
    let mut group = c.benchmark_group("desk model");
    group.sample_size(10);
    group.bench_function("training step, batch 8 at 112x112", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.iter(|| {
            let mut s = Session::train(&net.store, &mut rng);
            let xv = s.graph.constant(x.clone());
            let out = net.forward(&mut s, xv).unwrap();
            let loss = s.graph.focal_loss(out.probs, &targets, 2.0).unwrap();
            let (mut g, _) = s.into_parts();
            black_box(g.backward(loss).unwrap());
        })
    });
    group.finish();
}

criterion_group!(benches, encoder, conv, attention, training_step);
criterion_main!(benches);
