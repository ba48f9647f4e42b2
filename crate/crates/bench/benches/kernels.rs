use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use busvision::regression::{build_design, ols_fit, BandEncoding};
use busvision::synth::{render, SceneGeometry, SceneState};
use busvision::vit::{forward_patches, loss_and_gradients, patchify, ViTConfig, ViTParameters};
use busvision::Direction;
use busvision_bench::{random_examples, random_trips};

fn vit(c: &mut Criterion) {
    let config = ViTConfig::tiny(48, 8);
    let params = ViTParameters::init(&config, 1);
    let batch = random_examples(&config, 32, 2);
    c.bench_function("vit/forward tiny 48px", |b| {
        b.iter(|| forward_patches(black_box(&batch[0].patches), &params, &config))
    });
    c.bench_function("vit/loss_and_gradients batch 32", |b| {
        b.iter(|| loss_and_gradients(black_box(&batch), &params, &config, Some(3)).unwrap())
    });
}

fn frames(c: &mut Criterion) {
    let geometry = SceneGeometry { width: 256, height: 256 };
    let state = SceneState {
        vehicle_count_inbound: 12,
        vehicle_count_outbound: 20,
        ambient_level: 0.8,
        noise_seed: 5,
    };
    c.bench_function("synth/render 256x256", |b| b.iter(|| render(black_box(&state), geometry).unwrap()));
    let frame = render(&state, geometry).unwrap();
    let config = ViTConfig::tiny(256, 16);
    c.bench_function("vit/patchify 256x256 P16", |b| b.iter(|| patchify(black_box(&frame), &config).unwrap()));
}

fn regression(c: &mut Criterion) {
    let trips = random_trips(2731, 4);
    c.bench_function("regression/OLS+ 2731 trips", |b| {
        b.iter(|| {
            let design = build_design(black_box(&trips), Some(BandEncoding::SumToZero), Direction::Outbound).unwrap();
            ols_fit(&design).unwrap()
        })
    });
}

criterion_group!(benches, vit, frames, regression);
criterion_main!(benches);
