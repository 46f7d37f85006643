use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use sharc_core::am::{Cue, HopfieldMemory, ModernHopfieldMemory, PcnMemory, PcnSchedule};
use sharc_core::model::{Activation, Head, HeadSpec};
use sharc_core::replay::gem_project;
use sharc_core::saliency::{channel_saliency, mask_feature_map};
use sharc_core::{RngStream, Tensor3};

fn normals(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn partial_cue(pattern: &[f64], rng: &mut RngStream, hidden: f64) -> Cue {
    let observed: Vec<bool> = pattern.iter().map(|_| rng.uniform() >= hidden).collect();
    let values = pattern
        .iter()
        .zip(&observed)
        .map(|(v, &o)| if o { *v } else { 0.0 })
        .collect();
    Cue::new(values, observed).unwrap()
}

fn saliency(c: &mut Criterion) {
    let mut rng = RngStream::new(1);
    let head = Head::from_spec((4, 4, 16), 10, &HeadSpec::default());
    let map = Tensor3::from_vec(4, 4, 16, normals(&mut rng, 256)).unwrap();
    c.bench_function("saliency_and_mask_4x4x16", |b| {
        b.iter(|| {
            let s = channel_saliency(&head, black_box(&map), 3).unwrap();
            mask_feature_map(&map, &s, 0.5, 3, 1).unwrap()
        })
    });
    let tanh = Head::from_spec(
        (4, 4, 16),
        10,
        &HeadSpec {
            activation: Activation::Tanh,
            ..HeadSpec::default()
        },
    );
    c.bench_function("head_input_gradient_tanh", |b| {
        b.iter(|| tanh.class_score_input_grad(black_box(&map), 0).unwrap())
    });
}

fn memories(c: &mut Criterion) {
    let mut rng = RngStream::new(2);
    let d = 256;
    let bipolar: Vec<Vec<f64>> = (0..10)
        .map(|_| {
            (0..d)
                .map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
                .collect()
        })
        .collect();
    let mut hop = HopfieldMemory::new(d);
    hop.write(&bipolar).unwrap();
    let hop_cue = partial_cue(&bipolar[0], &mut rng, 0.2);
    c.bench_function("hopfield_read_d256_n10", |b| {
        b.iter(|| hop.read(black_box(&hop_cue), 20))
    });

    let pats: Vec<Vec<f64>> = (0..50).map(|_| normals(&mut rng, d)).collect();
    let mut mhn = ModernHopfieldMemory::new(d, 32.0).unwrap();
    mhn.write(&pats).unwrap();
    let cue = partial_cue(&pats[0], &mut rng, 0.5);
    c.bench_function("mhn_read_d256_n50", |b| {
        b.iter(|| mhn.read(black_box(&cue), 3, false))
    });

    let mut pcn = PcnMemory::new(d, &[64, 32], 1.0, 0).unwrap();
    let schedule = PcnSchedule {
        write_steps: 20,
        ..PcnSchedule::default()
    };
    pcn.write(&pats[..10], &schedule).unwrap();
    let cue = partial_cue(&pats[0], &mut rng, 0.3);
    c.bench_function("pcn_read_d256", |b| {
        b.iter(|| pcn.read(black_box(&cue), 200, 0.5, true))
    });
}

fn projection(c: &mut Criterion) {
    let mut rng = RngStream::new(3);
    let dim = 16_000;
    let g = normals(&mut rng, dim);
    let refs: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            normals(&mut rng, dim)
                .iter()
                .zip(&g)
                .map(|(r, gi)| r - gi)
                .collect()
        })
        .collect();
    c.bench_function("gem_project_4_refs_16k", |b| {
        b.iter(|| gem_project(black_box(&g), &refs, 0.0).unwrap())
    });
}

criterion_group!(benches, saliency, memories, projection);
criterion_main!(benches);
