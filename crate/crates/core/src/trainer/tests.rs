use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{build_model, forward_eval, ArchId, ModelSpec};
use crate::synthetics::{generate, Interface, SynthSpec};
use crate::tensor::{Graph, Shape4, Tensor4};
use crate::volume::{extract_labeled_slices, horizon_to_mask, make_split, Direction, Image2};

use super::*;

fn small_spec(arch: ArchId) -> ModelSpec {
    ModelSpec {
        arch,
        levels: 4,
        base_channels: 4,
        input: (32, 32, 1),
    }
}

/// Tiny layered volume whose slices pad up to the 32×32 test patch.
fn mini_fixture(seed: u64) -> (crate::volume::Volume, crate::volume::HorizonGrid) {
    let spec = SynthSpec {
        n_il: 24,
        n_xl: 24,
        n_t: 32,
        dt_ms: 4.0,
        peak_hz: 40.0,
        interfaces: vec![Interface::flat(40.0, -0.6), Interface::flat(72.0, 1.0)],
        target_layer: 1,
        faults: vec![],
        noise_std: 0.02,
        seed,
    };
    generate(&spec).unwrap()
}

fn mini_patches(seed: u64) -> (Vec<Patch>, Vec<Patch>) {
    let (vol, truth) = mini_fixture(seed);
    let mask = horizon_to_mask(&truth, vol.dims(), vol.dt_ms, 3).unwrap();
    let plan = make_split(vol.n_il, Direction::Inline, 8).unwrap();
    let (train_slices, valid_slices) = extract_labeled_slices(&vol, &mask, &plan).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = extract_patches(&train_slices, 32, &mut rng, true);
    let valid = extract_patches(&valid_slices[..4], 32, &mut rng, false);
    (train, valid)
}

// ── adam ─────────────────────────────────────────────────────────────

#[test]
fn adam_first_step_magnitude_is_learning_rate() {
    let spec = small_spec(ArchId::Unet);
    let mut w = build_model(&spec, 1).unwrap();
    let before = w.get("enc1.conv1.kernel").unwrap().data.clone();
    let mut grads = std::collections::HashMap::new();
    for path in w.learnable_paths() {
        let len = w.get(&path).unwrap().data.len();
        grads.insert(path, vec![1.0f32; len]);
    }
    let mut state = AdamState::new();
    adam_step(&mut w, &grads, &mut state, 1e-3).unwrap();
    assert_eq!(state.t, 1);
    let after = &w.get("enc1.conv1.kernel").unwrap().data;
    for (b, a) in before.iter().zip(after) {
        let delta = (b - a) as f64;
        // lr·g/(|g|+eps) with g = 1, up to f32 parameter rounding.
        assert!((delta - 1e-3).abs() < 1e-3 * 1e-3, "step was {delta}");
    }
}

#[test]
fn adam_zero_gradients_leave_weights_unchanged() {
    let spec = small_spec(ArchId::Unet);
    let mut w = build_model(&spec, 2).unwrap();
    let snapshot = w.clone();
    let mut grads = std::collections::HashMap::new();
    for path in w.learnable_paths() {
        let len = w.get(&path).unwrap().data.len();
        grads.insert(path, vec![0.0f32; len]);
    }
    let mut state = AdamState::new();
    adam_step(&mut w, &grads, &mut state, 1e-2).unwrap();
    assert_eq!(state.t, 1);
    assert_eq!(w, snapshot);
}

#[test]
fn adam_missing_gradient_is_invariant_violation() {
    let spec = small_spec(ArchId::Unet);
    let mut w = build_model(&spec, 3).unwrap();
    let grads = std::collections::HashMap::new();
    let mut state = AdamState::new();
    assert!(matches!(
        adam_step(&mut w, &grads, &mut state, 1e-3),
        Err(crate::HorizonError::Invariant(_))
    ));
}

// ── configuration defaults ───────────────────────────────────────────

#[test]
fn default_configs_match_published_pairs() {
    let unet = default_config(ArchId::Unet);
    assert_eq!(unet.learning_rate, 1e-4);
    assert_eq!(unet.batch_size, 1);
    assert_eq!(unet.l2_factor, 0.0);

    let unetpp = default_config(ArchId::Unetpp);
    assert_eq!(unetpp.learning_rate, 5e-3);
    assert_eq!(unetpp.batch_size, 1);

    let compressed = default_config(ArchId::UnetCompressed);
    assert_eq!(compressed.learning_rate, 5e-4);
    assert_eq!(compressed.batch_size, 5);
    assert_eq!(compressed.l2_factor, 1e-4);

    let attn = default_config(ArchId::AttnUnet);
    assert_eq!(attn.learning_rate, 5e-4);
    assert_eq!(attn.batch_size, 1);

    for arch in [ArchId::CfaSUnet, ArchId::CfaUnet] {
        let cfg = default_config(arch);
        assert_eq!(cfg.learning_rate, 5e-4);
        assert_eq!(cfg.batch_size, 1);
        assert_eq!(cfg.l2_factor, 0.0);
    }

    for arch in ArchId::ALL {
        let cfg = default_config(arch);
        assert_eq!(cfg.max_epochs, 500);
        assert_eq!(cfg.patience, 30);
        assert_eq!(cfg.loss.alpha, 0.5);
        assert_eq!(cfg.loss.beta, 0.5);
    }
}

// ── early stopping ───────────────────────────────────────────────────

#[test]
fn early_stopper_patience_one_stops_after_two_epochs() {
    let mut s = EarlyStopper::new(1);
    assert_eq!(s.observe(0, 1.0), (true, false));
    assert_eq!(s.observe(1, 1.5), (false, true));
    assert_eq!(s.best_epoch, 0);
}

#[test]
fn early_stopper_counts_consecutive_epochs_only() {
    let mut s = EarlyStopper::new(2);
    assert_eq!(s.observe(0, 1.0), (true, false));
    assert_eq!(s.observe(1, 1.2), (false, false));
    assert_eq!(s.observe(2, 0.9), (true, false));
    assert_eq!(s.observe(3, 1.1), (false, false));
    assert_eq!(s.observe(4, 1.1), (false, true));
    assert_eq!(s.best_epoch, 2);
}

// ── training loop ────────────────────────────────────────────────────

#[test]
fn training_runs_and_best_epoch_minimizes_valid_loss() {
    let (train_p, valid_p) = mini_patches(10);
    let mut cfg = default_config(ArchId::UnetCompressed);
    cfg.max_epochs = 4;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-3;
    let spec = small_spec(ArchId::UnetCompressed);
    let history = train(&cfg, &spec, &train_p, &valid_p).unwrap().history;
    assert!(!history.epochs.is_empty());
    let best = history.best().unwrap().valid_loss;
    for r in &history.epochs {
        assert!(best <= r.valid_loss + 1e-12);
    }
}

#[test]
fn training_is_deterministic_for_a_fixed_seed() {
    let (train_p, valid_p) = mini_patches(11);
    let mut cfg = default_config(ArchId::Unet);
    cfg.max_epochs = 2;
    cfg.learning_rate = 1e-3;
    cfg.seed = 99;
    let spec = small_spec(ArchId::Unet);
    let r1 = train(&cfg, &spec, &train_p, &valid_p).unwrap();
    let r2 = train(&cfg, &spec, &train_p, &valid_p).unwrap();
    assert_eq!(r1.best, r2.best);
    assert_eq!(r1.last, r2.last);
    assert_eq!(r1.history.epochs, r2.history.epochs);
}

#[test]
fn training_aborts_on_non_finite_loss() {
    // Poisoned head bias makes the very first prediction non-finite.
    let (train_p, valid_p) = mini_patches(12);
    let mut cfg = default_config(ArchId::Unet);
    cfg.max_epochs = 2;
    let spec = small_spec(ArchId::Unet);
    let mut weights = build_model(&spec, cfg.seed).unwrap();
    weights.get_mut("head.bias").unwrap().data[0] = f32::NAN;
    match train_from(&cfg, weights, &train_p, &valid_p) {
        Err(crate::HorizonError::NanLoss { epoch, batch }) => {
            assert_eq!((epoch, batch), (0, 0));
        }
        Err(other) => panic!("expected NanLoss, got {other:?}"),
        Ok(_) => panic!("expected NanLoss, training finished"),
    }
}

#[test]
fn training_requires_non_empty_sets() {
    let (train_p, _) = mini_patches(13);
    let cfg = default_config(ArchId::Unet);
    let spec = small_spec(ArchId::Unet);
    assert!(train(&cfg, &spec, &train_p, &[]).is_err());
    assert!(train(&cfg, &spec, &[], &train_p).is_err());
}

#[test]
fn small_overfit_drives_loss_down() {
    let (train_p, _) = mini_patches(14);
    let single = vec![train_p[0].clone()];
    let mut cfg = default_config(ArchId::UnetCompressed);
    cfg.max_epochs = 60;
    cfg.patience = 60;
    cfg.learning_rate = 2e-3;
    cfg.batch_size = 1;
    let spec = small_spec(ArchId::UnetCompressed);
    let history = train(&cfg, &spec, &single, &single).unwrap().history;
    let final_loss = history.epochs.last().unwrap().train_loss;
    let first_loss = history.epochs.first().unwrap().train_loss;
    assert!(
        final_loss < first_loss * 0.5,
        "loss did not drop: {first_loss} -> {final_loss}"
    );
}

#[test]
fn history_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.csv");
    let h = History {
        epochs: vec![
            EpochRecord {
                epoch: 0,
                train_loss: 0.5,
                valid_loss: 0.6,
                train_iou: 0.1,
                valid_iou: 0.2,
                train_acc: 0.9,
                valid_acc: 0.91,
            },
            EpochRecord {
                epoch: 1,
                train_loss: 0.4,
                valid_loss: 0.45,
                train_iou: 0.3,
                valid_iou: 0.4,
                train_acc: 0.95,
                valid_acc: 0.96,
            },
        ],
        best_epoch: 1,
    };
    h.save_csv(&path).unwrap();
    let back = History::load_csv(&path).unwrap();
    assert_eq!(back.epochs, h.epochs);
    assert_eq!(back.best_epoch, 1);
}

// ── patch pipeline ───────────────────────────────────────────────────

#[test]
fn standardize_centers_and_scales() {
    let img = Image2 {
        h: 4,
        w: 4,
        data: (0..16).map(|i| i as f32).collect(),
    };
    let s = standardize(&img);
    let mean: f64 = s.data.iter().map(|&v| v as f64).sum::<f64>() / 16.0;
    let var: f64 = s.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 16.0;
    assert!(mean.abs() < 1e-6);
    assert!((var - 1.0).abs() < 1e-5);
}

#[test]
fn reflect_pad_mirrors_without_edge_repeat() {
    let img = Image2 {
        h: 3,
        w: 3,
        data: (0..9).map(|i| i as f32).collect(),
    };
    let p = reflect_pad(&img, 5, 5);
    assert_eq!((p.h, p.w), (5, 5));
    // Center holds the original.
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(p.at(i + 1, j + 1), img.at(i, j));
        }
    }
    // One step outside mirrors one step inside.
    assert_eq!(p.at(0, 1), img.at(1, 0));
    assert_eq!(p.at(1, 0), img.at(0, 1));
    assert_eq!(p.at(4, 1), img.at(1, 0));
}

#[test]
fn tile_starts_cover_with_half_overlap() {
    assert_eq!(tile_starts(128, 128), vec![0]);
    assert_eq!(tile_starts(192, 128), vec![0, 64]);
    assert_eq!(tile_starts(200, 128), vec![0, 64, 72]);
    for extent in [128usize, 150, 192, 250, 300] {
        let starts = tile_starts(extent, 128);
        assert_eq!(*starts.last().unwrap() + 128, extent.max(128));
        for w in starts.windows(2) {
            assert!(w[1] - w[0] <= 64);
        }
    }
}

#[test]
fn patch_extraction_balances_negatives() {
    // A band crossing only the upper half: tiles below it are negative.
    let mut image = Image2::zeros(64, 128);
    let mut label = Image2::zeros(64, 128);
    for j in 0..128 {
        label.set(8, j, 1.0);
    }
    for i in 0..64 {
        for j in 0..128 {
            image.set(i, j, (i * j % 17) as f32);
        }
    }
    let pairs = vec![crate::volume::SlicePair {
        line: 0,
        image,
        label,
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let balanced = extract_patches(&pairs, 32, &mut rng, true);
    let positives = balanced
        .iter()
        .filter(|p| p.label.data().iter().any(|&v| v > 0.5))
        .count();
    let negatives = balanced.len() - positives;
    assert!(positives > 0);
    assert_eq!(negatives, positives.min(negatives));

    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let all = extract_patches(&pairs, 32, &mut rng, false);
    assert!(all.len() >= balanced.len());
}

// ── inference ────────────────────────────────────────────────────────

/// Weights whose forward is the constant sigmoid(head bias).
fn constant_model(spec: &ModelSpec, head_bias: f32) -> crate::arch::Weights {
    let mut w = build_model(spec, 0).unwrap();
    let paths: Vec<String> = w.iter().map(|(p, _)| p.clone()).collect();
    for path in paths {
        if crate::arch::is_buffer_path(&path) {
            continue;
        }
        let p = w.get_mut(&path).unwrap();
        p.data.fill(0.0);
    }
    w.get_mut("head.bias").unwrap().data[0] = head_bias;
    w
}

#[test]
fn exact_patch_slice_is_one_forward_call() {
    let spec = small_spec(ArchId::Unet);
    let w = build_model(&spec, 20).unwrap();
    let rng = ChaCha8Rng::seed_from_u64(21);
    let (vol, _) = mini_fixture(21);
    let _ = rng;
    let slice = vol.slice(Direction::Inline, 0); // 24×32, pads to 32×32
    let full = {
        let padded = reflect_pad(&standardize(&slice), 32, 32);
        let input = Tensor4::from_fn(Shape4::new(1, 1, 32, 32), |_, _, i, j| padded.at(i, j));
        let mut g: Graph<f32> = Graph::new();
        let iv = g.leaf(input, false);
        let out = forward_eval(&w, &mut g, iv).unwrap();
        g.value(out).clone()
    };
    let predicted = predict_slice(&w, &slice).unwrap();
    // Single tile: the stitched map is the forward output cropped back.
    for i in 0..slice.h {
        for j in 0..slice.w {
            assert_eq!(predicted.at(i, j), full.at(0, 0, i + 4, j));
        }
    }
}

#[test]
fn constant_model_stitches_to_a_constant() {
    let spec = small_spec(ArchId::Unet);
    let w = constant_model(&spec, 0.0); // sigmoid(0) = 0.5
    let (vol, _) = mini_fixture(22);
    let slice = vol.slice(Direction::Inline, 3);
    let map = predict_slice(&w, &slice).unwrap();
    assert!(map.data.iter().all(|&v| (v - 0.5).abs() < 1e-6));
}

#[test]
fn overlap_band_is_the_mean_of_covering_tiles() {
    // 32×48 slice with a 32-patch model: two tiles along width overlapping
    // on columns 16..32.
    let spec = small_spec(ArchId::Unet);
    let w = build_model(&spec, 23).unwrap();
    let mut slice = Image2::zeros(32, 48);
    for i in 0..32 {
        for j in 0..48 {
            slice.set(i, j, ((i * 7 + j * 3) % 13) as f32 - 6.0);
        }
    }
    let padded = reflect_pad(&standardize(&slice), 32, 32);
    let tile = |j0: usize| {
        let input = Tensor4::from_fn(Shape4::new(1, 1, 32, 32), |_, _, i, j| padded.at(i, j0 + j));
        let mut g: Graph<f32> = Graph::new();
        let iv = g.leaf(input, false);
        let out = forward_eval(&w, &mut g, iv).unwrap();
        g.value(out).clone()
    };
    let t0 = tile(0);
    let t1 = tile(16);
    let map = predict_slice(&w, &slice).unwrap();
    for i in 0..32 {
        for j in 16..32 {
            let mean = (t0.at(0, 0, i, j) as f64 + t1.at(0, 0, i, j - 16) as f64) / 2.0;
            assert!((map.at(i, j) as f64 - mean).abs() < 1e-7, "({i},{j})");
        }
        // Outside the overlap each tile stands alone.
        assert_eq!(map.at(i, 2), t0.at(0, 0, i, 2));
        assert_eq!(map.at(i, 40), t1.at(0, 0, i, 24));
    }
}

#[test]
fn predict_volume_keeps_dims_and_slice_determinism() {
    let spec = small_spec(ArchId::Unet);
    let w = build_model(&spec, 24).unwrap();
    // Volume whose inline sections are all identical.
    let mut vol = crate::volume::Volume::zeros(6, 24, 32, 4.0);
    for il in 0..6 {
        for xl in 0..24 {
            for t in 0..32 {
                vol.set(il, xl, t, ((xl * 32 + t) % 11) as f32 - 5.0);
            }
        }
    }
    let prob = predict_volume(&w, &vol, Direction::Inline).unwrap();
    let pv = prob.as_volume();
    assert_eq!(pv.dims(), vol.dims());
    let first = pv.slice(Direction::Inline, 0);
    for il in 1..6 {
        assert_eq!(pv.slice(Direction::Inline, il), first);
    }
}

#[test]
fn inline_and_crossline_predictions_differ() {
    let spec = small_spec(ArchId::Unet);
    let w = build_model(&spec, 25).unwrap();
    let (vol, _) = mini_fixture(26);
    let a = predict_volume(&w, &vol, Direction::Inline).unwrap();
    let b = predict_volume(&w, &vol, Direction::Crossline).unwrap();
    assert_ne!(a.as_volume().data(), b.as_volume().data());
}
