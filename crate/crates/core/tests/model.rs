use cxr_core::metrics::wce_loss;
use cxr_core::model::*;
use cxr_core::rng;
use rand::Rng;

fn small_spec(num_classes: usize) -> NetworkSpec {
    pooled_spec(num_classes, HeadPool::default())
}

fn pooled_spec(num_classes: usize, head_pool: HeadPool) -> NetworkSpec {
    NetworkSpec {
        input: [3, 8, 8],
        block_widths: vec![4, 6],
        hidden: 10,
        num_classes,
        head_pool,
    }
}

fn random_batch(n: usize, len: usize, classes: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng::seeded(seed);
    let xs = (0..n).map(|_| (0..len).map(|_| r.random::<f64>()).collect()).collect();
    let ts = (0..n).map(|i| i % classes).collect();
    (xs, ts)
}

fn batch_loss(net: &Network, xs: &[Vec<f64>], ts: &[usize], w: &[f64]) -> f64 {
    let mut logits = Vec::new();
    for x in xs {
        logits.extend(net.logits(x).unwrap());
    }
    wce_loss(&logits, ts, w).unwrap().loss
}

/// Largest relative error between analytic and central-difference gradients.
fn max_relative_error(net: &Network, xs: &[Vec<f64>], ts: &[usize], w: &[f64]) -> f64 {
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let (_, grads, _) = net.loss_and_grad(&refs, ts, w).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (pi, g) in grads.0.iter().enumerate() {
        let Some(g) = g else { continue };
        for (j, &gj) in g.iter().enumerate() {
            let mut up = net.clone();
            up.params[pi].data[j] += h;
            let mut dn = net.clone();
            dn.params[pi].data[j] -= h;
            let fd = (batch_loss(&up, xs, ts, w) - batch_loss(&dn, xs, ts, w)) / (2.0 * h);
            let denom = fd.abs().max(gj.abs()).max(1e-6);
            worst = worst.max((fd - gj).abs() / denom);
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences_for_every_scheme() {
    for pool in [HeadPool::GlobalMax, HeadPool::Flatten] {
        for (classes, w) in [
            (2, vec![0.6, 2.5]),
            (3, vec![1.0, 3.0, 0.7]),
            (4, vec![0.5, 1.5, 1.0, 4.0]),
        ] {
            let net = Network::new(pooled_spec(classes, pool), 11).unwrap();
            let (xs, ts) = random_batch(8, 3 * 64, classes, 5);
            let err = max_relative_error(&net, &xs, &ts, &w);
            assert!(err <= 1e-4, "{pool:?}, {classes} classes: max relative error {err:e}");
        }
    }
}

#[test]
fn unit_weights_equal_plain_cross_entropy_gradients() {
    let net = Network::new(small_spec(3), 2).unwrap();
    let (xs, ts) = random_batch(4, 3 * 64, 3, 9);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let a = net.loss_and_grad(&refs, &ts, &[1.0; 3]).unwrap();
    let table = cxr_core::imbalance::class_weights(&[5, 5, 5], None).unwrap();
    let b = net.loss_and_grad(&refs, &ts, &table.weights).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn baseline_output_shapes() {
    let net = Network::baseline(4, 64, 64, 0).unwrap();
    let batch = Tensor::new(vec![2, 3, 64, 64], vec![0.5; 2 * 3 * 64 * 64]).unwrap();
    let out = net.forward(&batch).unwrap();
    assert_eq!(out.shape(), &[2, 4]);
    let blocks = net.spec().blocks();
    assert_eq!(blocks.len(), 5);
    for b in &blocks {
        assert_eq!(b.out_channels, b.conv_channels + b.in_channels);
    }
    assert_eq!(blocks[4].out_channels, 499);
    assert_eq!(net.spec().feature_len(), 499);
    let wrong = Tensor::new(vec![1, 3, 32, 32], vec![0.0; 3 * 32 * 32]).unwrap();
    assert!(matches!(net.forward(&wrong), Err(ModelError::ShapeMismatch(_))));
}

#[test]
fn full_size_baseline_is_well_formed() {
    let spec = NetworkSpec::baseline(2, 331, 331).unwrap();
    let last = *spec.blocks().last().unwrap();
    assert_eq!((last.out_height, last.out_width), (10, 10));
    assert_eq!(spec.param_shapes().last().unwrap().1, vec![2]);
    assert!(NetworkSpec::baseline(5, 64, 64).is_err());
}

#[test]
fn probabilities_are_normalised_and_batch_independent() {
    let net = Network::new(small_spec(3), 4).unwrap();
    let (xs, _) = random_batch(3, 3 * 64, 3, 1);
    let mut data = Vec::new();
    for x in [&xs[0], &xs[1], &xs[0], &xs[2]] {
        data.extend_from_slice(x);
    }
    let out = net.forward(&Tensor::new(vec![4, 3, 8, 8], data).unwrap()).unwrap();
    for i in 0..4 {
        let row = out.item(i);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
    }
    assert_eq!(out.item(0), out.item(2));
}

#[test]
fn zero_head_gives_uniform_probabilities() {
    let mut net = Network::new(small_spec(4), 4).unwrap();
    let last = net.params.len() - 2;
    net.params[last].data.iter_mut().for_each(|v| *v = 0.0);
    let p = net.predict_sample(&vec![0.3; 3 * 64]).unwrap();
    assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn instance_norm_outputs_are_standardised() {
    let net = Network::new(small_spec(2), 8).unwrap();
    // Inputs on the raw intensity scale keep the eps term negligible.
    let (xs, _) = random_batch(1, 3 * 64, 2, 3);
    let x: Vec<f64> = xs[0].iter().map(|v| v * 255.0).collect();
    let cache = net.forward_sample(&x).unwrap();
    let out = cache.block_output(0);
    for ch in out.chunks(16) {
        let mean = ch.iter().sum::<f64>() / 16.0;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6);
        // Channels with a constant pooled map normalise to zero.
        assert!((var - 1.0).abs() < 1e-4 || var < 1e-12, "variance {var}");
    }
}

#[test]
fn freezing_controls_gradients_and_updates() {
    let mut net = Network::new(small_spec(2), 3).unwrap();
    assert!(matches!(net.freeze(&["block9"]), Err(ModelError::UnknownLayer(_))));
    net.freeze_all_but(&["head"]).unwrap();
    assert!(net.is_frozen("block1.conv1") && !net.is_frozen("dense2"));
    let (xs, ts) = random_batch(4, 3 * 64, 2, 2);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let (_, grads, _) = net.loss_and_grad(&refs, &ts, &[1.0, 1.0]).unwrap();
    for (p, g) in net.params.iter().zip(&grads.0) {
        assert_eq!(g.is_some(), p.name.starts_with("dense"), "{}", p.name);
    }
    let before = net.clone();
    let mut state = AdamState::default();
    adam_step(&mut net, &grads, &mut state, &AdamConfig::default());
    for (a, b) in before.params.iter().zip(&net.params) {
        assert_eq!(a.data == b.data, !a.name.starts_with("dense"), "{}", a.name);
    }
}

#[test]
fn freeze_nothing_matches_plain_gradients() {
    let net = Network::new(small_spec(2), 3).unwrap();
    let mut frozen = net.clone();
    frozen.freeze(&[]).unwrap();
    let (xs, ts) = random_batch(2, 3 * 64, 2, 4);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    assert_eq!(
        net.loss_and_grad(&refs, &ts, &[1.0, 1.0]).unwrap().1,
        frozen.loss_and_grad(&refs, &ts, &[1.0, 1.0]).unwrap().1
    );
}

#[test]
fn adam_closed_form_first_step() {
    let mut net = Network::new(small_spec(2), 0).unwrap();
    net.params[0].data[2] = net.params[0].data[0];
    let before = net.clone();
    let mut grads = net.zero_grads();
    let g = grads.0[0].as_mut().unwrap();
    g[0] = 0.37;
    g[1] = -2.0;
    g[2] = 0.37;
    let cfg = AdamConfig::default();
    let mut state = AdamState::default();
    adam_step(&mut net, &grads, &mut state, &cfg);
    let d = |i: usize| net.params[0].data[i] - before.params[0].data[i];
    // At t = 1 the bias-corrected update is lr · g / (|g| + eps).
    assert!((d(0) + cfg.lr * 0.37 / (0.37 + cfg.eps)).abs() < 1e-15);
    assert!((d(1) - cfg.lr * 2.0 / (2.0 + cfg.eps)).abs() < 1e-15);
    assert_eq!(d(0), d(2));
    assert_eq!(d(3), 0.0);
    assert_eq!(net.params[1], before.params[1]);
}

#[test]
fn early_stopping_rules() {
    let mut es = EarlyStopping::new(1, 0.0);
    assert_eq!(es.observe(1, 0.5), StopDecision::Improved);
    assert_eq!(es.observe(2, 0.6), StopDecision::Stop);
    assert_eq!(es.best_epoch, 1);
    let mut es = EarlyStopping::new(3, 0.01);
    es.observe(1, 1.0);
    assert_eq!(es.observe(2, 0.995), StopDecision::NoImprovement);
    assert_eq!(es.observe(3, 0.9), StopDecision::Improved);
    assert_eq!(es.observe(4, f64::NAN), StopDecision::NoImprovement);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let mut net = Network::new(small_spec(2), 21).unwrap();
    net.freeze(&["block1"]).unwrap();
    save_checkpoint(&net, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, net);
    let x = vec![0.25; 3 * 64];
    let (a, b) = (net.predict_sample(&x).unwrap(), loaded.predict_sample(&x).unwrap());
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.len(), 2);

    let bytes = std::fs::read(&path).unwrap();
    for cut in [4, 10, 30, bytes.len() - 3] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(load_checkpoint(&path).is_err(), "truncated at {cut}");
    }
    let mut bumped = bytes.clone();
    bumped[8] = 9;
    std::fs::write(&path, &bumped).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(CheckpointError::FormatVersionMismatch { found: 9, .. })
    ));
}

fn tiny_dataset(n: usize, seed: u64) -> Samples {
    let mut r = rng::seeded(seed);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = i % 2;
        let level = if label == 1 { 0.8 } else { 0.2 };
        for _ in 0..3 * 64 {
            inputs.push(level + 0.05 * r.random::<f64>());
        }
        labels.push(label);
    }
    // Brighter quadrant for positives so the signal survives normalisation.
    for (i, &l) in labels.iter().enumerate() {
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    let v = &mut inputs[i * 192 + c * 64 + y * 8 + x];
                    *v = if l == 1 { 1.0 } else { 0.0 };
                }
            }
        }
    }
    Samples {
        input: [3, 8, 8],
        inputs,
        labels,
    }
}

#[test]
fn training_is_deterministic_and_tracks_metrics() {
    let net = Network::new(small_spec(2), 1).unwrap();
    let data = tiny_dataset(24, 3);
    let val = tiny_dataset(8, 4);
    let cfg = TrainConfig {
        batch_size: 4,
        max_epochs: 4,
        patience: 10,
        seed: 5,
        ..TrainConfig::default()
    };
    let (a, trace) = train(&net, &data, &val, &[1.0, 1.0], &cfg).unwrap();
    let (b, _) = train(&net, &data, &val, &[1.0, 1.0], &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(trace.rows.len(), 8);
    let csv = trace.to_csv();
    assert!(csv.starts_with(MetricTrace::CSV_HEADER));
    let val_losses: Vec<f64> = trace.split_rows("val").map(|r| r.loss).collect();
    let min = val_losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(a.best_val_loss, min);
    assert_eq!(val_losses[a.best_epoch - 1], min);
}

#[test]
fn freezing_everything_keeps_loss_constant() {
    let net = Network::new(small_spec(2), 1).unwrap();
    let data = tiny_dataset(8, 3);
    let cfg = TrainConfig {
        batch_size: 4,
        max_epochs: 3,
        frozen_layers: vec!["all".into()],
        ..TrainConfig::default()
    };
    let (model, trace) = train(&net, &data, &data, &[1.0, 1.0], &cfg).unwrap();
    let losses: Vec<f64> = trace.split_rows("val").map(|r| r.loss).collect();
    assert!(losses.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(model.network.params, net.params);
}

#[test]
fn empty_sets_are_rejected() {
    let net = Network::new(small_spec(2), 1).unwrap();
    let empty = Samples {
        input: [3, 8, 8],
        inputs: Vec::new(),
        labels: Vec::new(),
    };
    let data = tiny_dataset(4, 1);
    assert!(matches!(
        train(&net, &empty, &data, &[1.0, 1.0], &TrainConfig::default()),
        Err(ModelError::EmptyManifest(_))
    ));
}

#[test]
fn kfold_training_reports_each_fold_and_the_mean() {
    let net = Network::new(small_spec(2), 1).unwrap();
    let data = tiny_dataset(16, 2);
    let cfg = TrainConfig {
        batch_size: 4,
        max_epochs: 2,
        folds: 4,
        ..TrainConfig::default()
    };
    let result = kfold_train(&net, &data, None, &cfg).unwrap();
    assert_eq!(result.folds.len(), 4);
    let mean: f64 = result.folds.iter().map(|f| f.summary.accuracy).sum::<f64>() / 4.0;
    assert!((result.mean.accuracy - mean).abs() < 1e-12);
    let mut seen: Vec<usize> = result.folds.iter().flat_map(|f| f.val_indices.clone()).collect();
    seen.sort();
    assert_eq!(seen, (0..16).collect::<Vec<_>>());

    let two = kfold_train(
        &net,
        &tiny_dataset(4, 2),
        None,
        &TrainConfig {
            folds: 2,
            max_epochs: 1,
            ..cfg
        },
    )
    .unwrap();
    assert!(two.folds.iter().all(|f| f.val_indices.len() == 2));
}
