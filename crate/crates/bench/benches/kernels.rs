use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rawscale_bench::{half, pattern};
use rawscale_core::ops::{conv2d, pixel_shuffle, pixel_unshuffle};
use rawscale_core::tensor::ConvSpec;
use rawscale_core::{
    dwt_pyramid, generate_synthetic_pair, interpolate_resample, isp_render, model_downscale, parse_scale, psnr, ssim,
    HaarConvention, IspConfig, Model, ModelConfig, ResampleKernel, SynthOptions, TrainConfig, TrainState, Trainer,
};

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    for (ch, k) in [(16, 3), (16, 1), (64, 1)] {
        let spec = ConvSpec::new(ch, ch, k, 1).unwrap();
        let x = pattern(ch, 64, 64);
        let w = pattern(ch, ch, k * k).map(|v| v - 0.5);
        let b = pattern(ch, 1, 1);
        group.bench_with_input(BenchmarkId::new(format!("c{ch}"), format!("k{k}")), &k, |bn, _| {
            bn.iter(|| conv2d(black_box(&x), &spec, &w, Some(&b)).unwrap())
        });
    }
    group.finish();
}

fn bench_shuffle(c: &mut Criterion) {
    let x = pattern(16, 130, 130);
    c.bench_function("pixel_unshuffle r13", |b| b.iter(|| pixel_unshuffle(black_box(&x), 13).unwrap()));
    let y = pixel_unshuffle(&x, 13).unwrap();
    c.bench_function("pixel_shuffle r13", |b| b.iter(|| pixel_shuffle(black_box(&y), 13).unwrap()));
}

fn bench_dwt(c: &mut Criterion) {
    let x = pattern(4, 256, 256);
    c.bench_function("dwt_pyramid 4x256x256 K4", |b| {
        b.iter(|| dwt_pyramid(black_box(&x), 4, HaarConvention::Orthonormal).unwrap())
    });
}

fn bench_resample(c: &mut Criterion) {
    let x = pattern(4, 208, 208);
    let s13 = parse_scale("1.3").unwrap();
    let mut group = c.benchmark_group("resample 1.3");
    for k in ResampleKernel::BASELINES {
        group.bench_function(k.name(), |b| b.iter(|| interpolate_resample(black_box(&x), s13, k).unwrap()));
    }
    group.finish();
}

fn bench_isp_metrics(c: &mut Criterion) {
    let x = pattern(4, 128, 128);
    let y = x.map(|v| v * 0.98 + 0.01);
    c.bench_function("isp_render 128", |b| b.iter(|| isp_render(black_box(&x), &IspConfig::default()).unwrap()));
    c.bench_function("psnr 128", |b| b.iter(|| psnr(black_box(&x), &y).unwrap()));
    c.bench_function("ssim 128", |b| b.iter(|| ssim(black_box(&x), &y).unwrap()));
}

fn bench_model(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    let model = Model::new(ModelConfig::tiny(3, 8), &[half()]).unwrap();
    let params = model.init_params::<f32>(1);
    let x = pattern(4, 64, 64);
    group.bench_function("forward K3 c8 64", |b| {
        b.iter(|| model_downscale(&model, &params, black_box(&x), half()).unwrap())
    });
    let data = vec![generate_synthetic_pair(3, (64, 64), half(), &SynthOptions::default()).unwrap()];
    let cfg = TrainConfig { batch_size: 1, ..TrainConfig::default() };
    let trainer = Trainer::new(&model, &cfg, &data).unwrap();
    let state = TrainState::fresh(&model, 1);
    group.bench_function("train step K3 c8 64", |b| {
        b.iter_batched(|| state.clone(), |mut st| trainer.step(&mut st).unwrap(), criterion::BatchSize::LargeInput)
    });
    group.finish();
}

criterion_group!(kernels, bench_conv, bench_shuffle, bench_dwt, bench_resample, bench_isp_metrics);
criterion_group!(model, bench_model);
criterion_main!(kernels, model);
