use std::hint::black_box;

use audiopred::dsp::{mel_spectrogram, AudioClip, DspConfig, FRAME_COLUMNS, SAMPLE_RATE};
use audiopred::tensor::{conv2d, Tensor};
use audiopred::{ModelConfig, PredNetModel};
use criterion::{criterion_group, criterion_main, Criterion};

fn ramp(n: usize) -> Vec<f32> {
    (0..n).map(|i| ((i * 7919) % 255) as f32 / 255.0).collect()
}

fn bench_conv(c: &mut Criterion) {
    let x = Tensor::new(vec![2, 128, FRAME_COLUMNS], ramp(2 * 128 * FRAME_COLUMNS)).unwrap();
    let w = Tensor::new(vec![64, 2, 3, 3], ramp(64 * 2 * 9)).unwrap();
    c.bench_function("conv2d 2->64 128x44", |b| b.iter(|| conv2d(black_box(&x), &w, None).unwrap()));
}

fn bench_model(c: &mut Criterion) {
    let model: PredNetModel<f32> = PredNetModel::init(ModelConfig::desk(), 0).unwrap();
    let frames: Vec<Vec<f32>> = (0..10).map(|t| ramp(128 * FRAME_COLUMNS + t)[t..].to_vec()).collect();
    let refs: Vec<&[f32]> = frames.iter().map(|f| f.as_slice()).collect();
    let mut g = c.benchmark_group("desk model, 10 frames");
    g.sample_size(10);
    g.bench_function("forward", |b| b.iter(|| model.forward_sequence(black_box(&refs)).unwrap()));
    g.bench_function("forward+backward", |b| b.iter(|| model.sequence_gradients(black_box(&refs)).unwrap()));
    g.finish();
}

fn bench_mel(c: &mut Criterion) {
    let sr = SAMPLE_RATE as f32;
    let samples: Vec<f32> = (0..131_072).map(|i| (2.0 * std::f32::consts::PI * 440.0 * i as f32 / sr).sin() * 0.5).collect();
    let clip = AudioClip::new(samples, SAMPLE_RATE).unwrap();
    let cfg = DspConfig::default();
    c.bench_function("mel spectrogram 3 s", |b| b.iter(|| mel_spectrogram(black_box(&clip), &cfg, "b").unwrap()));
}

criterion_group!(benches, bench_conv, bench_model, bench_mel);
criterion_main!(benches);
