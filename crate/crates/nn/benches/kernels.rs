use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sareo_nn::conv::Needs;
use sareo_nn::{exec, init, Conv2d, Layer, Mode, PadMode, Sequential, Tensor};

fn residual_stack(width: usize) -> Sequential {
    let mut layers = Vec::new();
    for i in 0..3 {
        let mut a = Conv2d::new(width, width, 3, 1, 1, PadMode::Reflect);
        let mut b = Conv2d::new(width, width, 3, 1, 1, PadMode::Reflect);
        init::normal(&mut a.weight, 0.02, i);
        init::normal(&mut b.weight, 0.02, 100 + i);
        layers.push(Layer::Residual(Sequential::new(vec![
            Layer::Conv(a),
            Layer::InstanceNorm,
            Layer::Relu,
            Layer::Conv(b),
            Layer::InstanceNorm,
        ])));
    }
    Sequential::new(layers)
}

fn input(shape: [usize; 4]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    init::normal(t.data_mut(), 1.0, 7);
    t
}

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv7x7_forward_backward");
    let mut conv = Conv2d::new(6, 16, 7, 1, 3, PadMode::Reflect);
    init::normal(&mut conv.weight, 0.02, 1);
    let x = input([4, 6, 64, 64]);
    let g = input([4, 16, 64, 64]);
    for (label, sequential) in [("parallel", false), ("sequential", true)] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &sequential, |b, &seq| {
            exec::set_sequential(seq);
            b.iter(|| {
                let y = conv.forward(&x).unwrap();
                let grads = conv.backward(&x, &g, Needs::ALL).unwrap();
                (y, grads)
            });
            exec::set_sequential(false);
        });
    }
    group.finish();
}

fn bench_residual(c: &mut Criterion) {
    let mut group = c.benchmark_group("residual_blocks_train_step");
    let net = residual_stack(32);
    let x = input([4, 32, 16, 16]);
    let g = input([4, 32, 16, 16]);
    for (label, sequential) in [("parallel", false), ("sequential", true)] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &sequential, |b, &seq| {
            exec::set_sequential(seq);
            b.iter(|| {
                let (_, caches) = net.forward(&x, Mode::train(3)).unwrap();
                net.backward(&caches, &g, Needs::ALL).unwrap()
            });
            exec::set_sequential(false);
        });
    }
    group.finish();
}

criterion_group!(benches, bench_conv, bench_residual);
criterion_main!(benches);
