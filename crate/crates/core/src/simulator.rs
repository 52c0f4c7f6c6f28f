//! Seeded federation simulator.
//!
//! Collaborators hold private samples of a shared linear-regression task
//! `y = a·x + noise`. Each collaborator's inputs are drawn around its own
//! shifted mean, so silos are non-IID while the regression target stays
//! common. Every round selects a subset, trains it locally from the current
//! global parameters, aggregates and validates on a shared held-out set.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::aggregation::{
    AggregationWeights, Aggregator, CollaboratorUpdate, HarmonicMode, DEFAULT_EPSILON,
};
use crate::error::{Error, Result};
use crate::params::{CollaboratorId, ParameterVector};
use crate::recommender::{
    select_random, select_recommender, select_sliding_window, selection_count, window_permutation,
    MetricsStore, Observation, Policy, SelectionDecision, SelectionMode,
};
use crate::rng::{stream_rng, Stream};

/// Synthetic task parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TaskConfig {
    pub dimension: usize,
    pub samples_per_collaborator: usize,
    /// Relative spread of local dataset sizes: `N_c` is uniform in
    /// `[N·(1 − j), N·(1 + j)]`. Zero gives every collaborator `N` samples.
    pub sample_jitter: f64,
    /// Scale of the per-collaborator input mean shift; 0 is the IID limit.
    pub heterogeneity: f64,
    pub noise_std: f64,
    pub validation_size: usize,
    /// Every collaborator gets the same dataset (drawn from collaborator 0's stream).
    pub shared_client_data: bool,
    /// Simulated compute speeds, samples per second, drawn uniformly.
    pub min_speed: f64,
    pub max_speed: f64,
    /// Fixed communication cost added to every local round, in simulated seconds.
    pub comm_overhead: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            dimension: 10,
            samples_per_collaborator: 50,
            sample_jitter: 0.5,
            heterogeneity: 0.5,
            noise_std: 0.1,
            validation_size: 500,
            shared_client_data: false,
            min_speed: 5.0,
            max_speed: 20.0,
            comm_overhead: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FederationConfig {
    pub n_collaborators: usize,
    pub rounds: u32,
    pub fraction: f64,
    pub learning_rate: f64,
    pub epochs_per_round: u32,
    pub epsilon: f64,
    pub policy: Policy,
    pub aggregator: Aggregator,
    pub aggregation_mode: HarmonicMode,
    pub seed: u64,
    /// Train the selected collaborators concurrently (needs the `parallel` feature).
    pub parallel: bool,
    pub task: TaskConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            n_collaborators: 33,
            rounds: 20,
            fraction: 0.2,
            learning_rate: 0.01,
            epochs_per_round: 1,
            epsilon: DEFAULT_EPSILON,
            policy: Policy::Recommender,
            aggregator: Aggregator::HSimAgg,
            aggregation_mode: HarmonicMode::Standard,
            seed: 42,
            parallel: false,
            task: TaskConfig::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.n_collaborators == 0 {
            return bad("n_collaborators must be positive");
        }
        if self.rounds == 0 {
            return bad("rounds must be positive");
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad("fraction must lie in (0, 1]");
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and nonnegative");
        }
        if self.epochs_per_round == 0 {
            return bad("epochs_per_round must be positive");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        let t = &self.task;
        if t.dimension == 0 || t.samples_per_collaborator == 0 || t.validation_size == 0 {
            return bad("task dimension and sample counts must be positive");
        }
        if !(0.0..1.0).contains(&t.sample_jitter) {
            return bad("sample_jitter must lie in [0, 1)");
        }
        if [t.heterogeneity, t.noise_std, t.comm_overhead]
            .iter()
            .any(|x| x.is_nan() || *x < 0.0)
        {
            return bad("heterogeneity, noise_std and comm_overhead must be nonnegative");
        }
        if !(t.min_speed > 0.0 && t.min_speed <= t.max_speed) || !t.max_speed.is_finite() {
            return bad("speeds must satisfy 0 < min_speed <= max_speed");
        }
        Ok(())
    }
}

/// Row-major inputs with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dimension: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(dimension: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if dimension == 0 || inputs.len() != dimension * targets.len() {
            return Err(Error::Shape(alloc::format!(
                "{} inputs for {} targets of dimension {dimension}",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self {
            dimension,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Mean squared error of `params` on this set.
    pub fn mse(&self, params: &[f64]) -> f64 {
        let n = self.len() as f64;
        (0..self.len())
            .map(|i| {
                let r = dot(self.row(i), params) - self.targets[i];
                r * r
            })
            .sum::<f64>()
            / n
    }

    fn sample(
        rng: &mut ChaCha8Rng,
        truth: &[f64],
        shift: &[f64],
        count: usize,
        noise_std: f64,
    ) -> Self {
        let d = truth.len();
        let mut inputs = Vec::with_capacity(count * d);
        let mut targets = Vec::with_capacity(count);
        for _ in 0..count {
            let start = inputs.len();
            for s in shift {
                let z: f64 = rng.sample(StandardNormal);
                inputs.push(s + z);
            }
            let noise: f64 = rng.sample(StandardNormal);
            targets.push(dot(&inputs[start..], truth) + noise_std * noise);
        }
        Self {
            dimension: d,
            inputs,
            targets,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimCollaborator {
    pub id: CollaboratorId,
    pub data: Dataset,
    /// Simulated samples processed per second.
    pub speed_factor: f64,
}

impl SimCollaborator {
    pub fn sample_count(&self) -> u64 {
        self.data.len() as u64
    }
}

/// Gradient of the local mean squared error at `params`.
pub fn local_gradient(data: &Dataset, params: &[f64]) -> Vec<f64> {
    let mut grad = alloc::vec![0.0; data.dimension];
    let scale = 2.0 / data.len() as f64;
    for i in 0..data.len() {
        let row = data.row(i);
        let r = dot(row, params) - data.targets[i];
        for (g, x) in grad.iter_mut().zip(row) {
            *g += scale * r * x;
        }
    }
    grad
}

/// Full-batch gradient descent on the local MSE, `epochs` passes from
/// `global`. Returns the trained parameters and their local loss.
pub fn local_train(
    collaborator: &SimCollaborator,
    global: &ParameterVector,
    learning_rate: f64,
    epochs: u32,
) -> Result<(ParameterVector, f64)> {
    if epochs == 0 {
        return Err(Error::Config("epochs must be positive".into()));
    }
    global.check_len(collaborator.data.dimension)?;
    let mut params = global.as_slice().to_vec();
    for _ in 0..epochs {
        let grad = local_gradient(&collaborator.data, &params);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence);
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= learning_rate * g;
        }
    }
    let loss = collaborator.data.mse(&params);
    let params = ParameterVector::new(params).map_err(|_| Error::Divergence)?;
    if !loss.is_finite() {
        return Err(Error::Divergence);
    }
    Ok((params, loss))
}

/// `(performance_score, loss)` with `loss` the held-out MSE and
/// `performance_score = 1 / (1 + loss)`.
pub fn validate(params: &ParameterVector, validation: &Dataset) -> Result<(f64, f64)> {
    params.check_len(validation.dimension)?;
    let loss = validation.mse(params.as_slice());
    Ok((1.0 / (1.0 + loss), loss))
}

/// `epochs · N_c / speed + overhead`, in simulated seconds.
pub fn simulate_duration(collaborator: &SimCollaborator, epochs: u32, overhead: f64) -> f64 {
    f64::from(epochs) * collaborator.data.len() as f64 / collaborator.speed_factor + overhead
}

/// One round's outcome.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundLog {
    pub round: u32,
    pub selected_ids: Vec<CollaboratorId>,
    pub policy: Policy,
    pub mode: SelectionMode,
    pub weights: AggregationWeights,
    /// Global model on the held-out set.
    pub score: f64,
    pub loss: f64,
    /// Slowest selected collaborator's duration.
    pub round_duration: f64,
    /// Cumulative simulated time after this round.
    pub sim_time: f64,
}

/// A federation in progress.
#[derive(Debug, Clone)]
pub struct Federation {
    config: FederationConfig,
    collaborators: Vec<SimCollaborator>,
    validation: Dataset,
    truth: ParameterVector,
    global: ParameterVector,
    store: MetricsStore,
    permutation: Vec<CollaboratorId>,
    count: usize,
    next_round: u32,
    sim_time: f64,
}

/// Builds the collaborators, the held-out set and a zero global model.
pub fn make_federation(config: &FederationConfig) -> Result<Federation> {
    config.validate()?;
    let task = &config.task;
    let d = task.dimension;
    let mut task_rng = stream_rng(config.seed, Stream::Task, 0);
    let truth: Vec<f64> = (0..d).map(|_| task_rng.sample(StandardNormal)).collect();

    let collaborators = (0..config.n_collaborators as u32)
        .map(|id| {
            let data_index = if task.shared_client_data { 0 } else { id };
            let mut profile = stream_rng(config.seed, Stream::ClientProfile, u64::from(data_index));
            let spread = task.sample_jitter * task.samples_per_collaborator as f64;
            let lo = libm::round(task.samples_per_collaborator as f64 - spread).max(1.0) as usize;
            let hi = libm::round(task.samples_per_collaborator as f64 + spread) as usize;
            let count = if hi > lo {
                profile.random_range(lo..=hi)
            } else {
                lo
            };
            let shift: Vec<f64> = (0..d)
                .map(|_| task.heterogeneity * profile.sample::<f64, _>(StandardNormal))
                .collect();
            // speed is drawn from the collaborator's own id so shared data keeps distinct timings
            let mut speed_rng =
                stream_rng(config.seed, Stream::ClientProfile, u64::from(id) | 1 << 40);
            let speed_factor = if task.max_speed > task.min_speed {
                speed_rng.random_range(task.min_speed..=task.max_speed)
            } else {
                task.min_speed
            };
            let mut data_rng = stream_rng(config.seed, Stream::ClientData, u64::from(data_index));
            SimCollaborator {
                id: CollaboratorId(id),
                data: Dataset::sample(&mut data_rng, &truth, &shift, count, task.noise_std),
                speed_factor,
            }
        })
        .collect();

    let mut val_rng = stream_rng(config.seed, Stream::Validation, 0);
    let validation = Dataset::sample(
        &mut val_rng,
        &truth,
        &alloc::vec![0.0; d],
        task.validation_size,
        task.noise_std,
    );

    Ok(Federation {
        count: selection_count(config.n_collaborators, config.fraction)?,
        permutation: window_permutation(config.n_collaborators, config.seed),
        config: config.clone(),
        collaborators,
        validation,
        truth: ParameterVector::new(truth)?,
        global: ParameterVector::zeros(d)?,
        store: MetricsStore::new(),
        next_round: 1,
        sim_time: 0.0,
    })
}

struct LocalResult {
    id: CollaboratorId,
    params: ParameterVector,
    duration: f64,
}

impl Federation {
    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn collaborators(&self) -> &[SimCollaborator] {
        &self.collaborators
    }

    pub fn validation_set(&self) -> &Dataset {
        &self.validation
    }

    /// Coefficients that generated the targets.
    pub fn true_params(&self) -> &ParameterVector {
        &self.truth
    }

    pub fn global_params(&self) -> &ParameterVector {
        &self.global
    }

    pub fn store(&self) -> &MetricsStore {
        &self.store
    }

    pub fn selection_count(&self) -> usize {
        self.count
    }

    pub fn is_finished(&self) -> bool {
        self.next_round > self.config.rounds
    }

    fn select(&self, round: u32) -> Result<SelectionDecision> {
        let c = &self.config;
        match c.policy {
            Policy::Recommender => {
                select_recommender(&self.store, round, c.n_collaborators, c.fraction, c.seed)
            }
            Policy::SlidingWindow => select_sliding_window(&self.permutation, round, self.count),
            Policy::Random => select_random(c.n_collaborators, self.count, round, c.seed),
        }
    }

    fn train_one(&self, id: CollaboratorId) -> Result<LocalResult> {
        let c = &self.config;
        let collab = &self.collaborators[id.index()];
        let (params, _) = local_train(collab, &self.global, c.learning_rate, c.epochs_per_round)?;
        Ok(LocalResult {
            id,
            params,
            duration: simulate_duration(collab, c.epochs_per_round, c.task.comm_overhead),
        })
    }

    fn train_selected(&self, ids: &[CollaboratorId]) -> Result<Vec<LocalResult>> {
        #[cfg(feature = "parallel")]
        if self.config.parallel {
            use rayon::prelude::*;
            return ids.par_iter().map(|id| self.train_one(*id)).collect();
        }
        ids.iter().map(|id| self.train_one(*id)).collect()
    }

    /// Runs the next round. Errors carry the round number.
    pub fn step(&mut self) -> Result<RoundLog> {
        let round = self.next_round;
        if self.is_finished() {
            return Err(Error::Config(alloc::format!(
                "federation already ran its {} rounds",
                self.config.rounds
            )));
        }
        let log = self.run_round(round).map_err(|e| Error::Round {
            round,
            source: Box::new(e),
        })?;
        self.next_round += 1;
        Ok(log)
    }

    fn run_round(&mut self, round: u32) -> Result<RoundLog> {
        let decision = self.select(round)?;
        let ids: Vec<CollaboratorId> = decision.selected_ids.iter().copied().collect();
        let results = self.train_selected(&ids)?;

        let updates = results
            .iter()
            .map(|r| {
                let n = self.collaborators[r.id.index()].sample_count();
                CollaboratorUpdate::new(r.id, r.params.clone(), n)
            })
            .collect::<Result<Vec<_>>>()?;
        let c = &self.config;
        let (global, weights) = c
            .aggregator
            .aggregate(&updates, c.epsilon, c.aggregation_mode)?;

        let observations = results
            .iter()
            .map(|r| {
                let (performance_score, loss) = validate(&r.params, &self.validation)?;
                Ok(Observation {
                    id: r.id,
                    performance_score,
                    loss,
                    duration: r.duration,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.store.record_round(round, &decision, &observations)?;

        let (score, loss) = validate(&global, &self.validation)?;
        let round_duration = results.iter().map(|r| r.duration).fold(0.0, f64::max);
        self.sim_time += round_duration;
        self.global = global;

        Ok(RoundLog {
            round,
            selected_ids: ids,
            policy: decision.policy,
            mode: decision.mode,
            weights,
            score,
            loss,
            round_duration,
            sim_time: self.sim_time,
        })
    }

    /// Runs all remaining rounds.
    pub fn run(&mut self) -> Result<Vec<RoundLog>> {
        let mut logs = Vec::with_capacity(self.config.rounds as usize);
        while !self.is_finished() {
            logs.push(self.step()?);
        }
        Ok(logs)
    }
}

pub fn run_federation(config: &FederationConfig) -> Result<Vec<RoundLog>> {
    make_federation(config)?.run()
}
