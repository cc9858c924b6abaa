//! Deep neuroevolution: Gaussian mutation of a parent network, fitness as the
//! number of correctly classified training images, truncation selection of
//! the better half of the children, and incorporation of the mean selected
//! perturbation into the parent.
//!
//! Child perturbations depend only on `(master_seed, generation, child)` and
//! `sigma`. They are generated before any training data is looked at and can
//! be regenerated on demand, so a generation never stores more than one
//! perturbation per worker.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::exec::{Clock, Executor};
use crate::model::{argmax_first, glorot_init, ArchitectureConfig, Layout, ModelParams, Scratch};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::tensor::softmax;

#[derive(Debug, Clone, PartialEq)]
pub struct DneConfig {
    /// Children per generation; must be even.
    pub population_size: usize,
    /// Mutation standard deviation.
    pub sigma: f32,
    /// Incorporation step applied to the mean selected perturbation.
    pub eta: f32,
    pub generations: usize,
    pub master_seed: u64,
    /// Evaluate the test set every this many generations (and on the last).
    pub eval_test_every: usize,
}

impl Default for DneConfig {
    fn default() -> Self {
        DneConfig {
            population_size: 50,
            sigma: 0.02,
            eta: 1.0,
            generations: 400,
            master_seed: 0,
            eval_test_every: 1,
        }
    }
}

impl DneConfig {
    /// Checks for a full training run.
    pub fn validate(&self) -> Result<()> {
        self.validate_step()?;
        if self.sigma == 0.0 {
            return Err(Error::arg("sigma must be positive, got 0"));
        }
        if self.generations == 0 {
            return Err(Error::arg("generations must be at least 1"));
        }
        if self.eval_test_every == 0 {
            return Err(Error::arg("eval_test_every must be at least 1"));
        }
        Ok(())
    }

    /// Checks for a single generation, where `sigma = 0` is a no-op.
    pub fn validate_step(&self) -> Result<()> {
        if self.population_size < 2 || !self.population_size.is_multiple_of(2) {
            return Err(Error::arg(format!(
                "population_size must be even and at least 2, got {}",
                self.population_size
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::arg(format!(
                "sigma must be nonnegative, got {}",
                self.sigma
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::arg(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Seed of child `child` in generation `generation`.
pub fn child_seed(master_seed: u64, generation: usize, child: usize) -> u64 {
    derive_seed(master_seed, &[stream::DNE, generation as u64, child as u64])
}

/// Writes `sigma · ε` with `ε ~ N(0, I)` drawn from `child_seed` into `out`.
pub fn perturbation_into(sigma: f32, child_seed: u64, out: &mut [f32]) {
    let mut rng = rng_from_seed(child_seed);
    for v in out {
        let e: f32 = rng.sample(StandardNormal);
        *v = sigma * e;
    }
}

/// The perturbation a child applies to `parent`.
pub fn mutate(parent: &ModelParams, sigma: f32, child_seed: u64) -> Vec<f32> {
    let mut delta = vec![0.0; parent.len()];
    perturbation_into(sigma, child_seed, &mut delta);
    delta
}

/// Parent plus a perturbation.
pub fn apply_perturbation(parent: &ModelParams, delta: &[f32]) -> Result<ModelParams> {
    if delta.len() != parent.len() {
        return Err(Error::dim(
            "apply_perturbation",
            format!(
                "perturbation has {} entries, model {}",
                delta.len(),
                parent.len()
            ),
        ));
    }
    let flat = parent
        .flat()
        .iter()
        .zip(delta)
        .map(|(p, d)| p + d)
        .collect();
    ModelParams::with_layout(parent.layout().clone(), flat)
}

/// Number of samples classified correctly.
pub fn evaluate_fitness(params: &ModelParams, samples: &[LabeledSample]) -> Result<usize> {
    count_correct(params.layout(), params.flat(), samples)
}

pub(crate) fn count_correct(
    layout: &Layout,
    flat: &[f32],
    samples: &[LabeledSample],
) -> Result<usize> {
    if samples.is_empty() {
        return Err(Error::arg("fitness needs a nonempty sample set"));
    }
    for s in samples {
        layout.check_image(&s.image)?;
    }
    let mut scratch = Scratch::new();
    let images: Vec<&[f32]> = samples.iter().map(|s| s.image.data()).collect();
    let logits = layout.logits_batch(flat, &images, &mut scratch);
    let k = logits.len() / samples.len();
    Ok(samples
        .iter()
        .zip(logits.chunks_exact(k))
        .filter(|(s, l)| argmax_first(&softmax(l)) == s.label)
        .count())
}

/// Indices of the best half of `fitness`, ties to the lower index, returned
/// in ascending index order.
pub fn select_top_half(fitness: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].cmp(&fitness[a]).then(a.cmp(&b)));
    let mut chosen = order[..fitness.len() / 2].to_vec();
    chosen.sort_unstable();
    chosen
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    /// 1-based generation number.
    pub generation: usize,
    /// Parent's correct count on the training set after incorporation.
    pub train_correct: usize,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationState {
    /// Generations completed so far.
    pub generation_index: usize,
    pub parent: ModelParams,
    pub history: Vec<GenerationRecord>,
}

impl GenerationState {
    pub fn new(parent: ModelParams) -> Self {
        GenerationState {
            generation_index: 0,
            parent,
            history: Vec::new(),
        }
    }
}

/// What one generation did, before any bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationStep {
    pub parent: ModelParams,
    pub fitness: Vec<usize>,
    pub selected: Vec<usize>,
}

/// Runs one mutation–selection–incorporation round with an arbitrary
/// fitness function `fitness(child_params, child_index)`.
pub fn step_with<E, F>(
    parent: &ModelParams,
    config: &DneConfig,
    generation_index: usize,
    exec: &E,
    fitness: F,
) -> Result<GenerationStep>
where
    E: Executor,
    F: Fn(&ModelParams, usize) -> Result<usize> + Sync,
{
    config.validate_step()?;
    let n = config.population_size;
    let scores = exec.map(n, |child| {
        let seed = child_seed(config.master_seed, generation_index, child);
        let delta = mutate(parent, config.sigma, seed);
        let params = apply_perturbation(parent, &delta)?;
        fitness(&params, child)
    });
    let fitness: Vec<usize> = scores.into_iter().collect::<Result<_>>()?;
    let selected = select_top_half(&fitness);

    // Sum selected perturbations in ascending child order, then average.
    let mut acc = vec![0.0f32; parent.len()];
    let mut delta = vec![0.0f32; parent.len()];
    for &child in &selected {
        perturbation_into(
            config.sigma,
            child_seed(config.master_seed, generation_index, child),
            &mut delta,
        );
        for (a, d) in acc.iter_mut().zip(&delta) {
            *a += d;
        }
    }
    let k = selected.len() as f32;
    let flat: Vec<f32> = parent
        .flat()
        .iter()
        .zip(&acc)
        .map(|(&p, &a)| p + config.eta * (a / k))
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite parameter after generation {}",
            generation_index + 1
        )));
    }
    Ok(GenerationStep {
        parent: ModelParams::with_layout(parent.layout().clone(), flat)?,
        fitness,
        selected,
    })
}

/// Advances `state` by one generation using training-set fitness.
///
/// The test set, when given, is only used for the history record.
pub fn evolve_generation<E: Executor, C: Clock>(
    state: GenerationState,
    config: &DneConfig,
    train: &[LabeledSample],
    test: Option<&[LabeledSample]>,
    exec: &E,
    clock: &C,
) -> Result<GenerationState> {
    if train.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    let g = state.generation_index;
    let step = step_with(&state.parent, config, g, exec, |p, _| {
        evaluate_fitness(p, train)
    })?;
    let train_correct = evaluate_fitness(&step.parent, train)?;
    let generation = g + 1;
    let eval_test = generation.is_multiple_of(config.eval_test_every.max(1))
        || generation == config.generations;
    let test_accuracy = match test {
        Some(t) if eval_test => Some(evaluate_fitness(&step.parent, t)? as f64 / t.len() as f64),
        _ => None,
    };
    let mut history = state.history;
    history.push(GenerationRecord {
        generation,
        train_correct,
        train_accuracy: train_correct as f64 / train.len() as f64,
        test_accuracy,
        elapsed_seconds: clock.elapsed_seconds(),
    });
    Ok(GenerationState {
        generation_index: generation,
        parent: step.parent,
        history,
    })
}

/// Full training run from a Glorot initialization seeded by the master seed.
///
/// `on_generation` sees each record as soon as it is produced.
pub fn train_dne<E: Executor, C: Clock>(
    arch: &ArchitectureConfig,
    config: &DneConfig,
    train: &[LabeledSample],
    test: &[LabeledSample],
    exec: &E,
    clock: &C,
    mut on_generation: impl FnMut(&GenerationRecord),
) -> Result<(ModelParams, Vec<GenerationRecord>)> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::arg("training and test sets must be nonempty"));
    }
    let init = glorot_init(arch, config.master_seed)?;
    let mut state = GenerationState::new(init);
    for _ in 0..config.generations {
        state = evolve_generation(state, config, train, Some(test), exec, clock)?;
        if let Some(r) = state.history.last() {
            on_generation(r);
        }
    }
    Ok((state.parent, state.history))
}
