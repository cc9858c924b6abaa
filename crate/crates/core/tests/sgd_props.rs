mod common;

use evc_core::data::micro_dataset;
use evc_core::exec::NoClock;
use evc_core::model::{glorot_init, ArchitectureConfig};
use evc_core::sgd::*;
use proptest::prelude::*;

fn arch() -> ArchitectureConfig {
    ArchitectureConfig::shrunken()
}

proptest! {
    #[test]
    fn adam_first_step_ignores_gradient_scale(
        grads in prop::collection::vec(prop_oneof![-10.0f32..-0.01, 0.01f32..10.0], 1..40),
        scale in 0.1f32..100.0,
    ) {
        let lr = 1e-3f32;
        let start = vec![0.5f32; grads.len()];
        let mut a = start.clone();
        let mut b = start.clone();
        let scaled: Vec<f32> = grads.iter().map(|g| g * scale).collect();
        adam_step(&mut a, &grads, &mut AdamState::new(grads.len()), lr).unwrap();
        adam_step(&mut b, &scaled, &mut AdamState::new(grads.len()), lr).unwrap();
        for i in 0..grads.len() {
            let ua = a[i] - start[i];
            let ub = b[i] - start[i];
            prop_assert!((ua - ub).abs() < 1e-6);
            prop_assert!((ua.abs() - lr).abs() < 1e-6);
            prop_assert_eq!(ua < 0.0, grads[i] > 0.0);
        }
    }

    #[test]
    fn adam_second_moment_stays_nonnegative(
        steps in prop::collection::vec(prop::collection::vec(-5.0f32..5.0, 6), 1..20),
    ) {
        let mut p = vec![0.0f32; 6];
        let mut st = AdamState::new(6);
        for g in &steps {
            adam_step(&mut p, g, &mut st, 1e-2).unwrap();
            prop_assert!(st.v.iter().all(|&v| v >= 0.0));
        }
        prop_assert_eq!(st.t, steps.len() as u64);
    }

    #[test]
    fn decreasing_monitor_never_reduces(start in 1.0f64..10.0, n in 1usize..60) {
        let hist: Vec<f64> = (0..n).map(|i| start - i as f64 * 0.01).collect();
        let c = PlateauConfig::default();
        prop_assert_eq!(reduce_lr_on_plateau(&hist, &c, 1e-4), 1e-4);
    }
}

/// Step-by-step restatement of the plateau rule.
fn simulate_plateau(hist: &[f64], c: &PlateauConfig, mut lr: f64) -> f64 {
    let mut best = f64::INFINITY;
    let mut bad = 0;
    for &v in hist {
        if best - v >= c.threshold {
            best = v;
            bad = 0;
        } else {
            bad += 1;
            if bad == c.patience {
                lr = (lr * c.factor).max(c.min_lr);
                bad = 0;
            }
        }
    }
    lr
}

#[test]
fn plateau_dip_inside_window_resets_counter() {
    let c = PlateauConfig::default();
    let mut hist = vec![1.0; 9];
    hist.push(0.5);
    hist.extend(vec![0.5; 9]);
    assert_eq!(reduce_lr_on_plateau(&hist, &c, 1e-4), 1e-4);
    assert_eq!(simulate_plateau(&hist, &c, 1e-4), 1e-4);
    hist.push(0.5);
    assert_eq!(
        reduce_lr_on_plateau(&hist, &c, 1e-4),
        simulate_plateau(&hist, &c, 1e-4)
    );
    assert!((reduce_lr_on_plateau(&hist, &c, 1e-4) - 1e-5).abs() < 1e-18);
}

#[test]
fn plateau_matches_simulation_on_random_walks() {
    use rand::Rng;
    let mut r = common::rng(77);
    let c = PlateauConfig {
        patience: 3,
        ..Default::default()
    };
    for _ in 0..500 {
        let n = r.random_range(0..40);
        let hist: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64).collect();
        assert_eq!(
            reduce_lr_on_plateau(&hist, &c, 0.1),
            simulate_plateau(&hist, &c, 0.1)
        );
    }
}

#[test]
fn plateau_floor_is_min_lr() {
    let c = PlateauConfig::default();
    let hist = vec![1.0; 200];
    assert_eq!(reduce_lr_on_plateau(&hist, &c, 1e-4), 1e-7);
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let (train, test) = micro_dataset(1);
    let c = SgdConfig {
        epochs: 0,
        seed: 12,
        ..Default::default()
    };
    let (p, h) = train_sgd(&arch(), &c, &train, &test, &NoClock, |_| {}).unwrap();
    assert!(h.is_empty());
    assert_eq!(p, glorot_init(&arch(), 12).unwrap());
}

#[test]
fn zero_learning_rate_returns_initial_parameters() {
    let (train, test) = micro_dataset(1);
    for optimizer in [OptimizerKind::Sgd, OptimizerKind::Adam] {
        let c = SgdConfig {
            optimizer,
            learning_rate: 0.0,
            epochs: 3,
            seed: 12,
            ..Default::default()
        };
        let (p, h) = train_sgd(&arch(), &c, &train, &test, &NoClock, |_| {}).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(p, glorot_init(&arch(), 12).unwrap());
    }
}

#[test]
fn batch_gradient_is_mean_of_single_sample_gradients() {
    let (train, _) = micro_dataset(2);
    let p = glorot_init(&arch(), 3).unwrap();
    let mut scratch = evc_core::model::Scratch::new();
    let batch: Vec<_> = train.iter().take(5).collect();
    let (loss, g) = batch_gradient(&p, &batch, &mut scratch).unwrap();
    let mut sum = vec![0.0f64; p.len()];
    let mut lsum = 0.0;
    for s in &batch {
        let (l, gi) = batch_gradient(&p, &[*s], &mut scratch).unwrap();
        lsum += l;
        for (a, b) in sum.iter_mut().zip(&gi) {
            *a += *b as f64;
        }
    }
    assert!((loss - lsum / 5.0).abs() < 1e-6);
    for (a, b) in g.iter().zip(&sum) {
        assert!((*a as f64 - b / 5.0).abs() < 1e-6);
    }
}

#[test]
fn history_is_reproducible() {
    let (train, test) = micro_dataset(3);
    let c = SgdConfig {
        epochs: 5,
        batch_size: 7,
        seed: 4,
        learning_rate: 1e-3,
        ..Default::default()
    };
    let (pa, ha) = train_sgd(&arch(), &c, &train, &test, &NoClock, |_| {}).unwrap();
    let (pb, hb) = train_sgd(&arch(), &c, &train, &test, &NoClock, |_| {}).unwrap();
    assert_eq!(pa, pb);
    assert_eq!(ha, hb);
    assert!(ha.iter().all(|r| r.train_loss.is_finite()));
    assert!(ha.iter().enumerate().all(|(i, r)| r.epoch == i + 1));
}

#[test]
fn adam_fits_micro_dataset_within_100_epochs() {
    for seed in 0..3 {
        let (train, test) = micro_dataset(seed);
        let c = SgdConfig {
            epochs: 100,
            seed,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let (_, h) = train_sgd(&arch(), &c, &train, &test, &NoClock, |_| {}).unwrap();
        assert!(
            h.iter().any(|r| r.train_accuracy == 1.0),
            "seed {seed}: best train accuracy {}",
            h.iter().map(|r| r.train_accuracy).fold(0.0, f64::max)
        );
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let (train, test) = micro_dataset(1);
    let bad = [
        SgdConfig {
            batch_size: 0,
            ..Default::default()
        },
        SgdConfig {
            learning_rate: f64::NAN,
            ..Default::default()
        },
        SgdConfig {
            plateau: Some(PlateauConfig {
                factor: 1.0,
                ..Default::default()
            }),
            ..Default::default()
        },
    ];
    for c in bad {
        assert!(train_sgd(&arch(), &c, &train, &test, &NoClock, |_| {}).is_err());
    }
    assert!(train_sgd(&arch(), &SgdConfig::default(), &[], &test, &NoClock, |_| {}).is_err());
}
