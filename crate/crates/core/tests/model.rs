mod common;

use common::{random_digraph, random_matrix, rng};
use dcrnn::autodiff::{ParamStore, Tape};
use dcrnn::data::{make_windows, synth_diffusion, SynthConfig, WindowConfig, ZScore};
use dcrnn::dcgru::{stacked_step, DcgruState};
use dcrnn::dconv::{tap_row, ConvMode};
use dcrnn::seq2seq::{
    dataset_loss, record_masked_loss, train, Batch, Curriculum, LossKind, Model, ModelConfig, TemporalMode,
    TrainConfig,
};
use dcrnn::{DenseMatrix, Error, ForecastSample, WeightedDigraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph() -> WeightedDigraph {
    random_digraph(&mut rng(1), 5, 0.5)
}

fn config(history: usize, horizon: usize) -> ModelConfig {
    ModelConfig {
        history,
        horizon,
        layers: 2,
        units: 4,
        k_max: 2,
        ..ModelConfig::default()
    }
}

fn frames(seed: u64, count: usize, cols: usize) -> Vec<DenseMatrix> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| random_matrix(&mut r, 5, cols, -1.0, 1.0))
        .collect()
}

fn zero_model(cfg: ModelConfig) -> Model {
    let mut m = Model::new(cfg, &graph(), 0).unwrap();
    for p in m.params_mut().iter_mut() {
        p.value = DenseMatrix::zeros(p.value.n_rows(), p.value.n_cols());
    }
    m
}

#[test]
fn encode_one_frame_is_one_stacked_step() {
    let m = Model::new(config(1, 2), &graph(), 3).unwrap();
    let x = frames(2, 1, 1);
    let state = m.encode(&x).unwrap();
    let (enc, _) = m.recurrent_layers();
    let layers: Vec<_> = enc.iter().map(|l| l.snapshot(m.params())).collect();
    let shapes: Vec<_> = layers.iter().map(|l| l.shape).collect();
    let (_, expect) = stacked_step(&x[0], &DcgruState::zeros(5, &shapes), &layers, m.supports()).unwrap();
    assert_eq!(state, expect);
}

#[test]
fn zero_parameter_encoder_halves_each_step() {
    // with every weight zero, h' = h/2 + tanh(0)/2 = h/2 from a zero state,
    // so the state stays exactly zero
    let m = zero_model(config(4, 2));
    let state = m.encode(&frames(3, 4, 1)).unwrap();
    assert!(state
        .hidden
        .iter()
        .all(|h| h.as_slice().iter().all(|&v| v == 0.0)));
}

#[test]
fn encode_is_order_sensitive() {
    let m = Model::new(config(3, 2), &graph(), 4).unwrap();
    let x = frames(5, 3, 1);
    let mut rev = x.clone();
    rev.reverse();
    assert_ne!(m.encode(&x).unwrap(), m.encode(&rev).unwrap());
}

#[test]
fn encode_rejects_wrong_length() {
    let m = Model::new(config(3, 2), &graph(), 4).unwrap();
    assert!(m.encode(&frames(5, 2, 1)).is_err());
}

#[test]
fn decode_feedback_modes() {
    let m = Model::new(config(2, 4), &graph(), 6).unwrap();
    let state = m.encode(&frames(7, 2, 1)).unwrap();
    let t1 = frames(8, 4, 1);
    let t2 = frames(9, 4, 1);
    let mut r = ChaCha8Rng::seed_from_u64(0);

    let forced_a = m.decode(&state, Some(&t1), &[], 1.0, &mut r).unwrap();
    let forced_b = m.decode(&state, Some(&t2), &[], 1.0, &mut r).unwrap();
    assert_eq!(forced_a.len(), 4);
    assert_eq!(forced_a[0], forced_b[0]);
    assert_ne!(forced_a[1], forced_b[1]);

    let free_a = m.decode(&state, Some(&t1), &[], 0.0, &mut r).unwrap();
    let free_b = m.decode(&state, Some(&t2), &[], 0.0, &mut r).unwrap();
    let free_c = m.decode(&state, None, &[], 0.0, &mut r).unwrap();
    assert_eq!(free_a, free_b);
    assert_eq!(free_a, free_c);

    assert!(matches!(
        m.decode(&state, None, &[], 0.5, &mut r),
        Err(Error::InvalidParameter(_))
    ));
}

#[test]
fn decode_coin_replays_with_seed() {
    let m = Model::new(config(2, 6), &graph(), 6).unwrap();
    let state = m.encode(&frames(7, 2, 1)).unwrap();
    let t = frames(8, 6, 1);
    let run = |seed| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        m.decode(&state, Some(&t), &[], 0.5, &mut r).unwrap()
    };
    assert_eq!(run(11), run(11));
    let distinct = (0..20).map(run).collect::<Vec<_>>();
    assert!(distinct.windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn auxiliary_channels_pad_fed_back_predictions() {
    let cfg = ModelConfig {
        input_dim: 2,
        ..config(2, 3)
    };
    let m = Model::new(cfg, &graph(), 12).unwrap();
    let x = frames(13, 2, 2);
    let a1 = frames(14, 3, 1);
    let a2 = frames(15, 3, 1);
    let y1 = m.forecast(&x, &a1).unwrap();
    let y2 = m.forecast(&x, &a2).unwrap();
    assert_eq!(y1[0], y2[0]);
    assert_ne!(y1[1], y2[1]);
    assert!(m.forecast(&x, &[]).is_err());
}

#[test]
fn predict_is_deterministic_and_denormalized() {
    let m = Model::new(config(3, 5), &graph(), 16).unwrap();
    let sample = ForecastSample {
        start: 0,
        inputs: frames(17, 3, 1),
        targets: frames(18, 5, 1),
        target_mask: vec![DenseMatrix::filled(5, 1, 1.0); 5],
        target_aux: vec![DenseMatrix::zeros(5, 0); 5],
    };
    let z = ZScore::new(50.0, 10.0).unwrap();
    let a = m.predict(&sample, &z).unwrap();
    assert_eq!(a.len(), 5);
    assert_eq!(a, m.predict(&sample, &z).unwrap());
    let normalized = m.forecast(&sample.inputs, &[]).unwrap();
    for (p, q) in a.iter().zip(&normalized) {
        assert!(p.max_abs_diff(&z.invert_matrix(q)).unwrap() < 1e-12);
    }
}

#[test]
fn dcnn_identity_layer_passes_input_through() {
    let cfg = ModelConfig {
        history: 1,
        horizon: 4,
        layers: 1,
        temporal_mode: TemporalMode::Dcnn,
        ..config(1, 4)
    };
    let mut m = zero_model(cfg);
    let theta = m.params().find("dcnn.0.theta").unwrap();
    m.params_mut()
        .get_mut(theta)
        .value
        .set(tap_row(ConvMode::Bidirectional, 1, 0, 0, 0), 0, 1.0);
    let x = frames(19, 1, 1);
    assert_eq!(m.dcnn_forward(&x).unwrap(), x[0]);
    let rollout = m.forecast(&x, &[]).unwrap();
    assert_eq!(rollout.len(), 4);
    assert!(rollout.iter().all(|y| y == &x[0]));
}

fn synthetic_samples(history: usize, horizon: usize, steps: usize) -> Vec<ForecastSample> {
    let g = graph();
    let s = synth_diffusion(
        &g,
        &SynthConfig {
            steps,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let z = ZScore::new(45.0, 20.0).unwrap();
    let cfg = WindowConfig {
        history,
        horizon,
        time_of_day: false,
    };
    make_windows(&s, &z, &cfg, 0..steps)
}

#[test]
fn dataset_loss_is_invariant_to_batch_size() {
    let samples = synthetic_samples(3, 3, 150);
    for mode in [TemporalMode::Dcrnn, TemporalMode::Dcnn] {
        let cfg = ModelConfig {
            temporal_mode: mode,
            ..config(3, 3)
        };
        let m = Model::new(cfg, &graph(), 20).unwrap();
        let base = dataset_loss(&m, &samples, 1, LossKind::Mae).unwrap();
        for b in [16, 64] {
            let other = dataset_loss(&m, &samples, b, LossKind::Mae).unwrap();
            assert!(
                (base - other).abs() < 1e-10,
                "{mode}: {base} vs {other} at batch {b}"
            );
        }
    }
}

#[test]
fn fully_masked_sample_adds_no_loss_or_gradient() {
    let mut samples = synthetic_samples(2, 2, 40);
    let mut masked = samples[0].clone();
    for m in &mut masked.target_mask {
        *m = DenseMatrix::zeros(5, 1);
    }
    for t in &mut masked.targets {
        *t = t.map(|v| v + 100.0);
    }
    let m = Model::new(config(2, 2), &graph(), 21).unwrap();
    let grads = |batch: &[&ForecastSample]| {
        let batch = Batch::from_samples(batch).unwrap();
        let mut store: ParamStore = m.params().clone();
        let mut tape = Tape::new();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let out = m.record_forward(&mut tape, &batch, 1.0, &mut r, true).unwrap();
        let (sum, count) = record_masked_loss(&mut tape, &out, &batch, LossKind::Mae).unwrap();
        let total = tape.value(sum).get(0, 0);
        tape.backward(sum, &mut store).unwrap();
        (
            total,
            count,
            store.iter().map(|p| p.grad.clone()).collect::<Vec<_>>(),
        )
    };
    let only = grads(&[&masked]);
    assert_eq!(only.0, 0.0);
    assert_eq!(only.1, 0.0);
    assert!(only.2.iter().all(|g| g.max_abs() == 0.0));

    let clean = samples.remove(1);
    let with = grads(&[&clean, &masked]);
    let without = grads(&[&clean]);
    assert_eq!(with.1, without.1);
    assert!((with.0 - without.0).abs() < 1e-12);
    for (a, b) in with.2.iter().zip(&without.2) {
        assert!(a.max_abs_diff(b).unwrap() < 1e-12);
    }
}

#[test]
fn early_stopping_on_a_plateau() {
    let samples = synthetic_samples(2, 2, 60);
    let mut m = Model::new(config(2, 2), &graph(), 22).unwrap();
    let cfg = TrainConfig {
        lr: 0.0,
        epochs: 20,
        patience: 1,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let report = train(&mut m, &samples, &samples, &cfg, |_| {}).unwrap();
    assert!(report.stopped_early);
    assert_eq!(report.best_epoch, 0);
    assert!(report.epochs.len() <= 2);
}

#[test]
fn training_reduces_loss_and_keeps_best_weights() {
    let samples = synthetic_samples(3, 3, 200);
    let (train_set, val_set) = samples.split_at(150);
    let cfg = ModelConfig {
        curriculum: Curriculum::Scheduled,
        ..config(3, 3)
    };
    let mut m = Model::new(cfg, &graph(), 23).unwrap();
    let before = dataset_loss(&m, val_set, 64, LossKind::Mae).unwrap();
    let tc = TrainConfig {
        epochs: 8,
        batch_size: 16,
        tau: 20.0,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut seen = Vec::new();
    let report = train(&mut m, train_set, val_set, &tc, |e| seen.push(*e)).unwrap();
    assert_eq!(seen, report.epochs);
    let best = report.best_val_loss();
    assert!(best < before, "{best} !< {before}");
    assert!(report.epochs.iter().all(|e| e.val_loss >= best));
    let after = dataset_loss(&m, val_set, 16, LossKind::Mae).unwrap();
    assert_eq!(after, best);
    assert!(report.epochs.windows(2).all(|w| w[1].epsilon < w[0].epsilon));
}

#[test]
fn training_is_bit_reproducible() {
    let samples = synthetic_samples(2, 2, 80);
    let run = || {
        let mut m = Model::new(config(2, 2), &graph(), 24).unwrap();
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            tau: 5.0,
            seed: 9,
            ..TrainConfig::default()
        };
        let report = train(&mut m, &samples, &samples[..20], &tc, |_| {}).unwrap();
        let mut buf = Vec::new();
        report.write_trace(&mut buf).unwrap();
        (buf, m.params().clone())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn non_finite_loss_aborts() {
    let mut samples = synthetic_samples(2, 2, 30);
    samples[0].targets[0].set(0, 0, f64::INFINITY);
    let mut m = Model::new(config(2, 2), &graph(), 25).unwrap();
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 64,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&mut m, &samples, &[], &tc, |_| {}),
        Err(Error::NonFiniteLoss { epoch: 0, .. })
    ));
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let g = graph();
    let m = Model::new(config(2, 2), &g, 26).unwrap();
    let z = ZScore::new(45.0, 20.0).unwrap();
    let ck = m.to_checkpoint(Some(&z));
    let mut buf = Vec::new();
    ck.write(&mut buf).unwrap();
    let back = dcrnn::autodiff::Checkpoint::read(&buf[..]).unwrap();
    assert_eq!(back.metadata["zscore.mean"].parse::<f64>().unwrap(), 45.0);
    let restored = Model::from_checkpoint(&back, &g).unwrap();
    assert_eq!(restored.params(), m.params());
    assert_eq!(restored.config(), m.config());

    let mut wider = Model::new(
        ModelConfig {
            units: 5,
            ..config(2, 2)
        },
        &g,
        0,
    )
    .unwrap();
    match wider.load_checkpoint(&back) {
        Err(Error::CheckpointMismatch(msg)) => assert!(msg.contains("enc.0.theta_r"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let bigger = random_digraph(&mut rng(2), 6, 0.5);
    assert!(matches!(
        Model::from_checkpoint(&back, &bigger),
        Err(Error::CheckpointMismatch(_))
    ));
}
