//! Encoder throughput, and sequential against rayon-parallel execution of the
//! batch-level loops (training steps and scene evaluation).

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tcbp::dataio::{synthesize, Scene, SynthConfig};
use tcbp::encoder::{EncoderModel, EncodingMethod, ModelConfig};
use tcbp::sketch::{cbp_encode, tcbp_encode, SketchMode, SketchParams};
use tcbp::trainer::{evaluate, sample_batch, train_step, EvalConfig, OptimizerState, TrainConfig};
use tcbp::{Exec, FeatureMap, Modality};

const MODS: [(Modality, usize); 2] = [(Modality::A, 16), (Modality::I, 48)];

fn model(method: EncodingMethod) -> EncoderModel {
    let mut cfg = ModelConfig::new(method, &MODS);
    cfg.reduce_dim = 128;
    cfg.sketch_dim = 1024;
    cfg.hidden_dim = 256;
    cfg.out_dim = 64;
    EncoderModel::new(cfg).unwrap()
}

fn scenes(n: usize) -> Vec<Scene> {
    synthesize(&SynthConfig { n_train: n, n_val: 0, n_test: 0, modalities: MODS.to_vec(), ..SynthConfig::default() })
        .unwrap()
}

fn sketch_encoders(c: &mut Criterion) {
    let mut group = c.benchmark_group("sketch");
    let (ch, d) = (512, 4096);
    for t in [1, 3, 6] {
        let x = FeatureMap::from_fn(ch, t, |i, s| ((i * 7 + s * 3) % 11) as f64 - 5.0).unwrap();
        let cbp = SketchParams::new(ch, t, d, 0, SketchMode::Cbp).unwrap();
        let tcbp = SketchParams::new(ch, t, d, 0, SketchMode::Tcbp).unwrap();
        group.bench_with_input(BenchmarkId::new("cbp", t), &x, |b, x| b.iter(|| cbp_encode(black_box(x), &cbp)));
        group.bench_with_input(BenchmarkId::new("tcbp", t), &x, |b, x| b.iter(|| tcbp_encode(black_box(x), &tcbp)));
        group.bench_with_input(BenchmarkId::new("meanpool", t), &x, |b, x| b.iter(|| black_box(x).mean_pool()));
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let data = scenes(200);
    let cfg = TrainConfig { lr: 0.01, use_negatives: true, ..TrainConfig::default() };
    let mut group = c.benchmark_group("train_step");
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        group.bench_function(name, |b| {
            let mut m = model(EncodingMethod::Tcbp);
            let mut opt = OptimizerState::new(&m);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            b.iter(|| {
                let batch = sample_batch(&data, &cfg, &mut rng).unwrap();
                train_step(&mut m, &mut opt, &batch, &cfg, exec).unwrap()
            })
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let data = scenes(100);
    let m = model(EncodingMethod::Tcbp);
    let cfg = EvalConfig::default();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(20);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        group.bench_function(name, |b| b.iter(|| evaluate(&m, &data, &cfg, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, sketch_encoders, training_step, evaluation);
criterion_main!(benches);
