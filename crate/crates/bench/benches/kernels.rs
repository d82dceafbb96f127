use bipath_bench::{frame_pair, random_tensor};
use bipath_core::flow::{dis_flow, encode_flow, frame_difference, DisParams, FlowMode};
use bipath_core::model::{BiPathModel, ModelConfig};
use bipath_core::tensor::kernels::{conv2d, ConvGeometry};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn conv(c: &mut Criterion) {
    let x = random_tensor(&[1, 16, 64, 64], 1);
    let w = random_tensor(&[16, 16, 3, 3], 2);
    let b = random_tensor(&[16], 3);
    c.bench_function("conv2d 16x64x64 3x3", |bn| {
        bn.iter(|| conv2d(black_box(&x), &w, &b, ConvGeometry::new(1, 1, 1)).unwrap())
    });
    c.bench_function("conv2d 16x64x64 3x3 dilation 2", |bn| {
        bn.iter(|| conv2d(black_box(&x), &w, &b, ConvGeometry::new(1, 2, 2)).unwrap())
    });
}

fn flow(c: &mut Criterion) {
    let (a, b) = frame_pair(128);
    let (la, lb) = (a.luminance(), b.luminance());
    let params = DisParams::default();
    c.bench_function("dis_flow 128x128", |bn| bn.iter(|| dis_flow(black_box(&la), &lb, &params).unwrap()));
}

fn forward(c: &mut Criterion) {
    let (a, b) = frame_pair(128);
    let f = dis_flow(&a.luminance(), &b.luminance(), &DisParams::default()).unwrap();
    let fi = encode_flow(&f, &frame_difference(&a, &b).unwrap(), FlowMode::Polar).unwrap();
    let model = BiPathModel::<f32>::new(ModelConfig::with_width(1.0 / 16.0), 0).unwrap();
    c.bench_function("bipath forward w=1/16 128x128", |bn| {
        bn.iter(|| model.predict(black_box(&a), Some(&fi)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv, flow, forward
}
criterion_main!(benches);
