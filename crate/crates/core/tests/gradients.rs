//! Finite-difference checks of every layer's backward pass, hand-unrolled
//! recurrent cells, and whole-network gradients.

mod common;

use common::*;
use ecg_arrhythmia::nn::layers::{softmax, softmax_cross_entropy};
use ecg_arrhythmia::nn::model::{ArchKind, ArchSpec, Example, ModelState};

#[test]
fn every_layer_type_matches_finite_differences() {
    for (name, err) in grad::layer_errors() {
        assert!(err < FD_TOL, "{name}: {err:e}");
    }
}

#[test]
fn confident_correct_prediction_has_tiny_gradient() {
    let (loss, g) = softmax_cross_entropy(&[0.0, 0.0, 60.0, 0.0, 0.0], 2);
    assert!(loss < 1e-20);
    assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-9);
}

#[test]
fn softmax_is_a_distribution() {
    let mut r = rng(21);
    for _ in 0..100 {
        let p = softmax(&uniform(5, 20.0, &mut r));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }
    let p = softmax(&[1000.0, 0.0, -1000.0, 0.0, 0.0]);
    assert!(p.iter().all(|v| v.is_finite()));
}

#[test]
fn recurrent_cells_match_unrolled_oracles() {
    assert!(grad::gru_oracle_error() < 1e-10);
    assert!(grad::lstm_oracle_error() < 1e-10);
}

fn tiny_arch(kind: ArchKind) -> ArchSpec {
    let arch = ArchSpec::new(kind).with_filters(3).with_units(&[4, 3, 4, 3]);
    let arch = if kind.is_image() {
        arch.with_input_len(16).with_input_height(8)
    } else {
        ArchSpec {
            in_channels: 2,
            ..arch.with_input_len(64)
        }
    };
    arch.with_aux_features(2)
}

fn tiny_batch(arch: &ArchSpec, n: usize, seed: u64) -> Vec<Example> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| Example {
            input: uniform(arch.input_size(), 1.0, &mut r),
            aux: uniform(arch.aux_features, 1.0, &mut r),
            label: i % 5,
        })
        .collect()
}

#[test]
fn network_gradients_every_architecture() {
    for kind in ArchKind::ALL {
        let arch = tiny_arch(kind);
        let state = ModelState::build(arch.clone(), 31).unwrap();
        let batch = tiny_batch(&arch, 3, 32);
        let (_, g) = state.loss_and_gradient(&batch).unwrap();
        let mut probe = state.clone();
        let n = numeric_grad(&state.params, |p| {
            probe.params.copy_from_slice(p);
            probe.evaluate(&batch).unwrap().loss
        });
        let e = max_rel_err(&g, &n);
        assert!(e < FD_TOL, "{}: {e:e}", kind.name());
    }
}

#[test]
fn duplicated_batch_has_same_mean_gradient() {
    let arch = tiny_arch(ArchKind::Cnn1dGru);
    let state = ModelState::build(arch.clone(), 41).unwrap();
    let batch = tiny_batch(&arch, 4, 42);
    let doubled: Vec<Example> = batch.iter().chain(&batch).cloned().collect();
    let (l1, g1) = state.loss_and_gradient(&batch).unwrap();
    let (l2, g2) = state.loss_and_gradient(&doubled).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}
