//! Gradient-descent baselines on the same architecture: plain SGD and Adam,
//! mini-batch training on softmax cross-entropy, and reduce-on-plateau
//! learning-rate control.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::exec::Clock;
use crate::model::{glorot_init, ArchitectureConfig, ModelParams, Scratch};
use crate::rng::{stream, stream_rng};
use crate::tensor::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Minimum decrease of the monitored value that counts as improvement.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.1,
            patience: 10,
            min_lr: 1e-7,
            threshold: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// `None` keeps the learning rate fixed.
    pub plateau: Option<PlateauConfig>,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 100,
            plateau: Some(PlateauConfig::default()),
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!(
                "learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if let Some(p) = &self.plateau {
            if !(p.factor > 0.0 && p.factor < 1.0) {
                return Err(Error::arg(format!(
                    "plateau factor must lie in (0, 1), got {}",
                    p.factor
                )));
            }
            if p.patience == 0 {
                return Err(Error::arg("plateau patience must be at least 1"));
            }
        }
        Ok(())
    }
}

fn check_lengths(params: &[f32], grads: &[f32], op: &'static str) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim(
            op,
            format!("{} parameters but {} gradients", params.len(), grads.len()),
        ));
    }
    Ok(())
}

/// `params ← params − lr · grads`.
pub fn sgd_step(params: &mut [f32], grads: &[f32], lr: f32) -> Result<()> {
    check_lengths(params, grads, "sgd_step")?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction; increments `state.t`.
pub fn adam_step(params: &mut [f32], grads: &[f32], state: &mut AdamState, lr: f32) -> Result<()> {
    check_lengths(params, grads, "adam_step")?;
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim(
            "adam_step",
            format!(
                "moment vectors have {} entries, parameters {}",
                state.m.len(),
                params.len()
            ),
        ));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - libm::powf(b1, state.t as f32);
    let c2 = 1.0 - libm::powf(b2, state.t as f32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (libm::sqrtf(v_hat) + state.epsilon);
    }
    Ok(())
}

/// Stateful reduce-on-plateau rule over a monitored value (lower is better).
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    config: PlateauConfig,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(config: PlateauConfig) -> Self {
        PlateauScheduler {
            config,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Feeds one epoch's value; returns the learning rate for the next epoch.
    pub fn observe(&mut self, value: f64, lr: f64) -> f64 {
        if value < self.best - self.config.threshold {
            self.best = value;
            self.stale = 0;
            return lr;
        }
        self.stale += 1;
        if self.stale >= self.config.patience {
            self.stale = 0;
            return (lr * self.config.factor).max(self.config.min_lr);
        }
        lr
    }
}

/// Replays the plateau rule over `history` and returns the learning rate
/// that follows its last entry, starting from `current_lr`.
pub fn reduce_lr_on_plateau(history: &[f64], config: &PlateauConfig, current_lr: f64) -> f64 {
    let mut sched = PlateauScheduler::new(*config);
    let mut lr = current_lr;
    for &v in history {
        lr = sched.observe(v, lr);
    }
    lr
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub elapsed_seconds: f64,
}

/// Mean cross-entropy and accuracy of `params` over `samples`.
pub fn evaluate(params: &ModelParams, samples: &[LabeledSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty set"));
    }
    let layout = params.layout();
    let mut scratch = Scratch::new();
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for s in samples {
        layout.check_image(&s.image)?;
        let logits = layout.logits(params.flat(), s.image.data(), &mut scratch);
        let probs = softmax(logits);
        let (l, _) = crate::tensor::softmax_cross_entropy_slice(logits, s.label.index())?;
        loss += l as f64;
        if crate::model::argmax_first(&probs) == s.label {
            correct += 1;
        }
    }
    Ok((
        loss / samples.len() as f64,
        correct as f64 / samples.len() as f64,
    ))
}

/// Mean loss gradient over a batch, summed in batch order.
pub fn batch_gradient(
    params: &ModelParams,
    batch: &[&LabeledSample],
    scratch: &mut Scratch,
) -> Result<(f64, Vec<f32>)> {
    let layout = params.layout();
    let mut grad = vec![0.0f32; params.len()];
    let mut loss = 0.0f64;
    for s in batch {
        layout.check_image(&s.image)?;
        loss += layout.loss_and_grad(params.flat(), s.image.data(), s.label, scratch, &mut grad)?
            as f64;
    }
    let n = batch.len() as f32;
    for g in &mut grad {
        *g /= n;
    }
    Ok((loss / batch.len() as f64, grad))
}

/// Mini-batch training from the Glorot initialization for `config.seed`.
///
/// Each epoch shuffles the training set, steps once per batch (the last
/// partial batch included), then records train loss/accuracy and test
/// accuracy of the end-of-epoch parameters and applies the plateau rule to
/// the train loss.
pub fn train_sgd<C: Clock>(
    arch: &ArchitectureConfig,
    config: &SgdConfig,
    train: &[LabeledSample],
    test: &[LabeledSample],
    clock: &C,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, Vec<EpochRecord>)> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::arg("training and test sets must be nonempty"));
    }
    let mut params = glorot_init(arch, config.seed)?;
    let mut adam = AdamState::new(params.len());
    let mut sched = config.plateau.map(PlateauScheduler::new);
    let mut rng = stream_rng(config.seed, &[stream::SGD_SHUFFLE]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut scratch = Scratch::new();
    let mut lr = config.learning_rate;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LabeledSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (_, grad) = batch_gradient(&params, &batch, &mut scratch)?;
            match config.optimizer {
                OptimizerKind::Sgd => sgd_step(params.flat_mut(), &grad, lr as f32)?,
                OptimizerKind::Adam => adam_step(params.flat_mut(), &grad, &mut adam, lr as f32)?,
            }
        }
        if params.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite parameter in epoch {}",
                epoch
            )));
        }
        let (train_loss, train_accuracy) = evaluate(&params, train)?;
        let (_, test_accuracy) = evaluate(&params, test)?;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite train loss in epoch {}",
                epoch
            )));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            test_accuracy,
            lr,
            elapsed_seconds: clock.elapsed_seconds(),
        };
        on_epoch(&record);
        history.push(record);
        if let Some(s) = sched.as_mut() {
            lr = s.observe(train_loss, lr);
        }
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_examples() {
        let mut p = vec![1.0, 2.0];
        sgd_step(&mut p, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
        sgd_step(&mut p, &[1.0, -1.0], 0.5).unwrap();
        assert_eq!(p, vec![0.5, 2.5]);
        assert!(sgd_step(&mut p, &[1.0], 0.5).is_err());
    }

    #[test]
    fn sgd_two_small_steps_equal_one_big_for_constant_gradient() {
        let g = [0.25f32, -0.5, 1.0];
        let mut a = vec![1.0f32, 1.0, 1.0];
        let mut b = a.clone();
        sgd_step(&mut a, &g, 0.5).unwrap();
        sgd_step(&mut a, &g, 0.5).unwrap();
        sgd_step(&mut b, &g, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![0.3, -0.2];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, 1e-3).unwrap();
        assert_eq!(p, vec![0.3, -0.2]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let lr = 1e-3;
        let g = [0.4f32, -2.0, 7.5];
        let mut p = vec![0.0f32; 3];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &g, &mut st, lr).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            assert!((pi + lr * gi.signum()).abs() < 1e-6);
        }
        let mut q = vec![0.0f32; 3];
        let mut st = AdamState::new(3);
        let g10: Vec<f32> = g.iter().map(|v| v * 10.0).collect();
        adam_step(&mut q, &g10, &mut st, lr).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(st.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn plateau_rules() {
        let cfg = PlateauConfig {
            patience: 3,
            ..Default::default()
        };
        let falling: Vec<f64> = (0..20).map(|i| 1.0 - i as f64 * 0.01).collect();
        assert_eq!(reduce_lr_on_plateau(&falling, &cfg, 1e-4), 1e-4);
        let flat = [0.5; 4];
        assert!((reduce_lr_on_plateau(&flat, &cfg, 1e-4) - 1e-5).abs() < 1e-18);
        assert_eq!(reduce_lr_on_plateau(&flat[..3], &cfg, 1e-4), 1e-4);
        // dip inside the window resets the counter
        let dip = [0.5, 0.5, 0.5, 0.4, 0.4, 0.4];
        assert_eq!(reduce_lr_on_plateau(&dip, &cfg, 1e-4), 1e-4);
        // floor at min_lr
        let mut sched = PlateauScheduler::new(PlateauConfig {
            patience: 1,
            min_lr: 1e-6,
            ..Default::default()
        });
        let mut lr = 1e-5;
        for _ in 0..5 {
            lr = sched.observe(1.0, lr);
        }
        assert_eq!(lr, 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(SgdConfig::default().validate().is_ok());
        assert!(SgdConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let bad = SgdConfig {
            plateau: Some(PlateauConfig {
                factor: 1.0,
                ..Default::default()
            }),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
