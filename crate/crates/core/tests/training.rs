use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tcbp::dataio::{synthesize, Scene, Split, SynthConfig};
use tcbp::encoder::{EncoderModel, EncodingMethod, ModelConfig};
use tcbp::trainer::{evaluate, sample_pair, EvalConfig, OptimizerState, TrainConfig, Trainer};
use tcbp::{Error, Exec, Modality};

const MODS: [(Modality, usize); 2] = [(Modality::A, 6), (Modality::I, 10)];

fn model(method: EncodingMethod, seed: u64) -> EncoderModel {
    sized_model(method, seed, [12, 32, 24, 12])
}

fn sized_model(method: EncodingMethod, seed: u64, [reduce, d, hidden, out]: [usize; 4]) -> EncoderModel {
    let mut cfg = ModelConfig::new(method, &MODS);
    cfg.reduce_dim = reduce;
    cfg.sketch_dim = d;
    cfg.hidden_dim = hidden;
    cfg.out_dim = out;
    cfg.seed = seed;
    EncoderModel::new(cfg).unwrap()
}

fn data(n: usize, signal: f64, sizes: Vec<(usize, f64)>, seed: u64) -> Vec<Scene> {
    synthesize(&SynthConfig {
        n_train: n,
        n_val: 0,
        n_test: 0,
        sizes,
        modalities: MODS.to_vec(),
        signal_strength: signal,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn pair_sampling_is_uniform_over_forward_pairs() {
    const DRAWS: usize = 60_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for _ in 0..DRAWS {
        *counts.entry(sample_pair(4, &mut rng).unwrap()).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    let expected = DRAWS as f64 / 6.0;
    let chi2: f64 = counts.values().map(|&n| (n as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-square with 5 degrees of freedom.
    assert!(chi2 < 20.52, "chi2 = {chi2}");
}

#[test]
fn training_is_reproducible_and_thread_independent() {
    let scenes = data(60, 5.0, SynthConfig::default().sizes, 2);
    let cfg = TrainConfig { iterations: 15, lr: 0.02, use_negatives: true, seed: 5, ..TrainConfig::default() };
    let run = |exec| {
        let mut tr = Trainer::new(model(EncodingMethod::Tcbp, 1), cfg.clone(), exec).unwrap();
        let history = tr.train(&scenes, |_, _| Ok(())).unwrap();
        (history, tr.model.to_checkpoint_bytes(), tr.opt)
    };
    let a = run(Exec::Sequential);
    assert_eq!(a, run(Exec::Sequential));
    assert_eq!(a, run(Exec::Parallel));
}

#[test]
fn sketch_parameters_are_not_trained() {
    let scenes = data(30, 5.0, SynthConfig::default().sizes, 3);
    let m = model(EncodingMethod::Tcbp, 4);
    let sketch = m.sketch().unwrap().clone();
    let before = m.params().to_vec();
    let mut tr =
        Trainer::new(m, TrainConfig { iterations: 10, lr: 0.05, ..TrainConfig::default() }, Exec::Parallel).unwrap();
    tr.train(&scenes, |_, _| Ok(())).unwrap();
    assert_eq!(tr.model.sketch().unwrap(), &sketch);
    assert_eq!(tr.model.sketch().unwrap().to_bytes(), sketch.to_bytes());
    assert_ne!(tr.model.params(), &before[..]);
}

#[test]
fn untrained_model_scores_half_on_pairs() {
    let scenes = data(2000, 5.0, vec![(2, 1.0)], 6);
    let report = evaluate(&model(EncodingMethod::Tcbp, 9), &scenes, &EvalConfig::default(), Exec::Parallel).unwrap();
    assert_eq!(report.chance, 0.5);
    let sigma = (0.25f64 / scenes.len() as f64).sqrt();
    assert!((report.accuracy - 0.5).abs() < 3.0 * sigma, "{}", report.accuracy);
}

#[test]
fn pair_scenes_become_separable() {
    let train = data(400, 5.0, vec![(2, 1.0)], 7);
    let test = data(300, 5.0, vec![(2, 1.0)], 8);
    let mut tr = Trainer::new(
        sized_model(EncodingMethod::Tcbp, 2, [32, 128, 64, 32]),
        TrainConfig { iterations: 1000, lr: 0.05, ..TrainConfig::default() },
        Exec::Parallel,
    )
    .unwrap();
    tr.train(&train, |_, _| Ok(())).unwrap();
    let report = evaluate(&tr.model, &test, &EvalConfig::default(), Exec::Parallel).unwrap();
    assert!(report.accuracy > 0.95, "{}", report.accuracy);
}

#[test]
fn early_loss_decreases_under_smoothing() {
    let scenes = data(400, 5.0, SynthConfig::default().sizes, 10);
    let mut tr = Trainer::new(
        model(EncodingMethod::Tcbp, 3),
        TrainConfig { iterations: 100, lr: 0.01, batch_size: 512, ..TrainConfig::default() },
        Exec::Parallel,
    )
    .unwrap();
    let losses: Vec<f64> = tr.train(&scenes, |_, _| Ok(())).unwrap().iter().map(|s| s.loss).collect();
    let block_means: Vec<f64> = losses.chunks(10).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for w in block_means.windows(2) {
        assert!(w[1] <= w[0], "{block_means:?}");
    }
}

#[test]
fn checkpoint_and_optimizer_state_round_trip() {
    let scenes = data(30, 5.0, SynthConfig::default().sizes, 12);
    let mut tr = Trainer::new(
        model(EncodingMethod::Cbp, 5),
        TrainConfig { iterations: 5, lr: 0.05, ..TrainConfig::default() },
        Exec::Sequential,
    )
    .unwrap();
    tr.train(&scenes, |_, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    tr.model.save(&path).unwrap();
    let back = EncoderModel::load(&path).unwrap();
    assert_eq!(back.to_checkpoint_bytes(), tr.model.to_checkpoint_bytes());
    let clip = &scenes[0].clips()[0];
    let (a, b) = (tr.model.encode_clip(clip, 0).unwrap(), back.encode_clip(clip, 0).unwrap());
    for (x, y) in a.phi.iter().zip(&b.phi) {
        assert!((x - y).abs() <= 1e-5 * x.abs().max(1e-3), "{x} vs {y}");
    }

    let json = serde_json::to_string(&tr.opt).unwrap();
    let opt: OptimizerState = serde_json::from_str(&json).unwrap();
    assert_eq!(opt, tr.opt);
    assert_eq!(opt.iteration, 5);
}

/// Finite features whose squared differences overflow.
#[test]
fn divergence_is_reported() {
    let scenes = data(30, 5.0, SynthConfig::default().sizes, 13);
    let mut m = model(EncodingMethod::Tcbp, 6);
    for p in m.params_mut().iter_mut().filter(|p| p.name.starts_with("w2")) {
        p.value.data.iter_mut().for_each(|v| *v *= 1e160);
    }
    let mut tr = Trainer::new(m, TrainConfig { iterations: 5, ..TrainConfig::default() }, Exec::Sequential).unwrap();
    match tr.train(&scenes, |_, _| Ok(())) {
        Err(Error::Diverged { iteration: 0, .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|h| h.len())),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let m = || model(EncodingMethod::Tcbp, 0);
    for bad in [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { alpha: 0.0, ..TrainConfig::default() },
        TrainConfig { lr: f64::NAN, ..TrainConfig::default() },
    ] {
        assert!(Trainer::new(m(), bad, Exec::Sequential).is_err());
    }
    let mut tr =
        Trainer::new(m(), TrainConfig { use_negatives: true, ..TrainConfig::default() }, Exec::Sequential).unwrap();
    let one = data(1, 5.0, SynthConfig::default().sizes, 0);
    assert!(tr.step(&one).is_err());
    assert!(tr.step(&[]).is_err());
    assert!(one.iter().all(|s| s.split == Split::Train));
}
