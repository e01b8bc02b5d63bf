use conrep_core::encoder::EncoderConfig;
use conrep_core::eval::StsExample;
use conrep_core::tensor::Tensor;
use conrep_core::trainer::{adam_step, sweep, train, AdamState, Checkpoint, TrainConfig};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent scalar Adam reference, written straight from the update rule.
struct ScalarAdamOracle {
    m: f64,
    v: f64,
    t: u32,
}

impl ScalarAdamOracle {
    fn new() -> Self {
        ScalarAdamOracle { m: 0.0, v: 0.0, t: 0 }
    }

    fn step(&mut self, theta: f64, g: f64, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let m_hat = self.m / (1.0 - b1.powi(self.t as i32));
        let v_hat = self.v / (1.0 - b2.powi(self.t as i32));
        theta - lr * m_hat / (v_hat.sqrt() + eps)
    }
}

#[test]
fn adam_zero_gradient_is_noop() {
    let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
    let grads = vec![Tensor::zeros(vec![3])];
    let mut state = AdamState::new(&params);
    let before = params[0].clone();
    adam_step(&mut params, &grads, &mut state, 1e-3).unwrap();
    assert_eq!(params[0], before);
}

#[test]
fn adam_first_step_hand_expanded() {
    // theta=0, g=1, lr=1e-3, fresh state: m_hat=1, v_hat=1,
    // theta' = -1e-3 / (1 + 1e-8)
    let mut params = vec![Tensor::new(vec![1], vec![0.0]).unwrap()];
    let grads = vec![Tensor::new(vec![1], vec![1.0]).unwrap()];
    let mut state = AdamState::new(&params);
    adam_step(&mut params, &grads, &mut state, 1e-3).unwrap();
    let expected = -1e-3 / (1.0 + 1e-8);
    assert!((params[0].data()[0] - expected).abs() < 1e-15);
}

#[test]
fn adam_two_constant_steps_match_oracle() {
    let mut params = vec![Tensor::new(vec![1], vec![0.0]).unwrap()];
    let mut state = AdamState::new(&params);
    let mut oracle = ScalarAdamOracle::new();
    let mut theta = 0.0;
    for _ in 0..2 {
        let grads = vec![Tensor::new(vec![1], vec![1.0]).unwrap()];
        adam_step(&mut params, &grads, &mut state, 1e-3).unwrap();
        theta = oracle.step(theta, 1.0, 1e-3);
    }
    assert!((params[0].data()[0] - theta).abs() < 1e-15);
}

#[test]
fn adam_matches_oracle_on_random_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let theta0: f64 = rng.gen_range(-2.0..2.0);
        let mut params = vec![Tensor::new(vec![1], vec![theta0]).unwrap()];
        let mut state = AdamState::new(&params);
        let mut oracle = ScalarAdamOracle::new();
        let mut theta = theta0;
        for _ in 0..5 {
            let g: f64 = rng.gen_range(-3.0..3.0);
            let grads = vec![Tensor::new(vec![1], vec![g]).unwrap()];
            adam_step(&mut params, &grads, &mut state, 1e-2).unwrap();
            theta = oracle.step(theta, g, 1e-2);
        }
        assert!((params[0].data()[0] - theta).abs() < 1e-12);
    }
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut params = vec![Tensor::zeros(vec![2])];
    let grads = vec![Tensor::zeros(vec![3])];
    let mut state = AdamState::new(&params);
    assert!(adam_step(&mut params, &grads, &mut state, 1e-3).is_err());
}

fn tiny_corpus(n: usize) -> Vec<String> {
    let words = ["red", "green", "blue", "stone", "river", "cloud", "iron", "leaf"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..n)
        .map(|_| {
            (0..5)
                .map(|_| words[rng.gen_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

fn tiny_dev() -> Vec<StsExample> {
    vec![
        StsExample { sentence_a: "red stone river".into(), sentence_b: "red stone cloud".into(), gold: 4.0 },
        StsExample { sentence_a: "green leaf".into(), sentence_b: "iron cloud".into(), gold: 1.0 },
        StsExample { sentence_a: "blue river".into(), sentence_b: "blue river".into(), gold: 5.0 },
        StsExample { sentence_a: "iron stone".into(), sentence_b: "green river leaf".into(), gold: 2.0 },
    ]
}

fn small_enc() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 256,
        embed_dim: 16,
        hidden_dim: 16,
        hidden_layers: 2,
        out_dim: 8,
        dropout_p: 0.1,
    }
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs: 2,
        dev_interval: 5,
        seed: 13,
        ..TrainConfig::default()
    }
}

#[test]
fn train_is_deterministic() {
    let corpus = tiny_corpus(32);
    let dev = tiny_dev();
    let a = train(&corpus, &dev, &small_enc(), &small_cfg()).unwrap();
    let b = train(&corpus, &dev, &small_enc(), &small_cfg()).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.best, b.best);
}

#[test]
fn train_loss_descends() {
    let corpus = tiny_corpus(64);
    let dev = tiny_dev();
    let mut cfg = small_cfg();
    cfg.epochs = 7; // ~56 steps over a 64-sentence corpus
    let outcome = train(&corpus, &dev, &small_enc(), &cfg).unwrap();
    assert!(outcome.trace.len() >= 50);
    let first = outcome.trace.first().unwrap().breakdown.total;
    let last = outcome.trace.last().unwrap().breakdown.total;
    assert!(last < first, "no descent: {first} -> {last}");
    assert!(outcome.trace.iter().all(|r| r.breakdown.total.is_finite()));
}

#[test]
fn checkpoint_score_is_argmax_and_reproducible() {
    let corpus = tiny_corpus(32);
    let dev = tiny_dev();
    let outcome = train(&corpus, &dev, &small_enc(), &small_cfg()).unwrap();
    let ckpt = &outcome.best;
    // stored score must equal a fresh dev evaluation of the stored params
    let rescore =
        conrep_core::eval::sts_evaluate(&ckpt.params, &ckpt.encoder_config, &dev).unwrap();
    assert_eq!(rescore, ckpt.dev_score);
}

#[test]
fn checkpoint_roundtrip_preserves_score() {
    let corpus = tiny_corpus(32);
    let dev = tiny_dev();
    let outcome = train(&corpus, &dev, &small_enc(), &small_cfg()).unwrap();
    let dir = std::env::temp_dir().join(format!("conrep-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("ckpt.json");
    outcome.best.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, outcome.best);
    let rescore =
        conrep_core::eval::sts_evaluate(&loaded.params, &loaded.encoder_config, &dev).unwrap();
    assert_eq!(rescore, loaded.dev_score);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_rejects_small_corpus() {
    let corpus = tiny_corpus(4);
    let dev = tiny_dev();
    assert!(train(&corpus, &dev, &small_enc(), &small_cfg()).is_err());
}

#[test]
fn reconstruction_pressure_shrinks_pair_distance() {
    use conrep_core::encoder::{make_positive_pair, tokenize};
    use conrep_core::objectives::reconstruction_penalty;

    let corpus = tiny_corpus(64);
    let dev = tiny_dev();
    let enc = small_enc();
    let mut cfg = small_cfg();
    cfg.epochs = 7;
    let outcome = train(&corpus, &dev, &enc, &cfg).unwrap();

    // held-out probe batch, fixed seed
    let probe: Vec<_> = tiny_corpus(80)[64..]
        .iter()
        .map(|s| tokenize(s, enc.vocab_size).unwrap())
        .collect();
    let penalty_of = |params: &conrep_core::encoder::EncoderParams| {
        let pair = make_positive_pair(params, &enc, &probe, 555).unwrap();
        reconstruction_penalty(&pair.z1, &pair.z2).unwrap()
    };
    let before = penalty_of(&outcome.initial_params);
    let after = penalty_of(&outcome.best.params);
    assert!(after <= before, "penalty grew: {before} -> {after}");
}

#[test]
fn sweep_singleton_equals_direct_train() {
    let corpus = tiny_corpus(32);
    let dev = tiny_dev();
    let base = small_cfg();
    let rows = sweep(
        &corpus,
        &dev,
        &small_enc(),
        &base,
        &[base.batch_size],
        &[base.learning_rate],
        &[base.lambda],
    )
    .unwrap();
    assert_eq!(rows.len(), 1);
    let direct = train(&corpus, &dev, &small_enc(), &base).unwrap();
    assert_eq!(rows[0].dev_score, direct.best.dev_score);
    assert_eq!(rows[0].best_step, direct.best.step);
}

#[test]
fn sweep_lambda_grid_finite() {
    let corpus = tiny_corpus(32);
    let dev = tiny_dev();
    let base = small_cfg();
    let rows = sweep(
        &corpus,
        &dev,
        &small_enc(),
        &base,
        &[base.batch_size],
        &[base.learning_rate],
        &[0.0, 0.4],
    )
    .unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.dev_score.is_finite()));
    // sorted best-first
    assert!(rows[0].dev_score >= rows[1].dev_score);
}

#[test]
fn sweep_rejects_empty_grid() {
    let corpus = tiny_corpus(32);
    let dev = tiny_dev();
    let base = small_cfg();
    assert!(sweep(&corpus, &dev, &small_enc(), &base, &[], &[1e-3], &[0.4]).is_err());
}
