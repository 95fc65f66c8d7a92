//! Optimization and model selection: Adam, plateau learning-rate decay,
//! early stopping, the epoch loop, and the two hyperparameter searches.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Var};
use crate::error::TensorError;
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::solar::{SolarNetSpec, SolarSearchSpace};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite {what} loss at epoch {epoch}")]
    NonFiniteLoss { what: &'static str, epoch: usize },
    #[error("non-finite gradient for parameter {param} at optimizer step {step}")]
    NonFiniteGradient { param: String, step: u64 },
    #[error(transparent)]
    Model(#[from] TensorError),
}

/// Adam with per-parameter moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    /// Zeroed moments shaped like `params`.
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Adam {
            lr,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// One bias-corrected update. Gradients are checked before anything is
    /// touched, so a rejected step leaves parameters and moments unchanged.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<(), TrainError> {
        if grads.len() != params.len() {
            return Err(TrainError::Config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(TrainError::Config(format!("gradient shape mismatch for {name}")));
            }
            if !g.is_finite() {
                return Err(TrainError::NonFiniteGradient {
                    param: name.to_string(),
                    step: self.step + 1,
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (lr, eps, one) = (T::of(self.lr), T::of(self.eps), T::one());
        for (i, g) in grads.iter().enumerate() {
            let p = params.values_mut()[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Stops after `patience` consecutive epochs without a strictly lower loss.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    /// Records one epoch; returns whether it improved on the best loss.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// non-improving epochs, then starts counting again.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    lr: f64,
    best: f64,
    bad_epochs: usize,
    reductions: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            patience,
            factor,
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            reductions: 0,
        }
    }

    /// Records one epoch and returns the learning rate for the next one.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.factor;
                self.reductions += 1;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr_init: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            early_stop_patience: 10,
            lr_init: 0.001,
            lr_factor: 0.1,
            lr_patience: 5,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let problem = if self.max_epochs == 0 {
            Some("max_epochs must be at least 1")
        } else if self.early_stop_patience == 0 || self.lr_patience == 0 {
            Some("patience values must be at least 1")
        } else if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            Some("lr_factor must lie in (0, 1)")
        } else if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            Some("lr_init must be positive")
        } else if self.batch_size == 0 {
            Some("batch_size must be at least 1")
        } else {
            None
        };
        problem.map_or(Ok(()), |p| Err(TrainError::Config(p.to_string())))
    }
}

/// A model the epoch loop can optimize.
pub trait Trainable<T: Scalar> {
    type Sample;

    fn params(&self) -> &ParamSet<T>;

    fn params_mut(&mut self) -> &mut ParamSet<T>;

    /// Mean loss over `batch` as a scalar node of `graph`. The parameters
    /// are already bound; `rng` is the run's stream for stochastic layers.
    fn batch_loss(
        &self,
        graph: &mut Graph<T>,
        bound: &Bound,
        batch: &[&Self::Sample],
        rng: &mut ChaCha8Rng,
    ) -> Result<Var, TensorError>;

    /// Validation loss of the current parameters.
    fn validation_loss(&self, samples: &[Self::Sample]) -> Result<f64, TensorError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<T> {
    pub best_params: ParamSet<T>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl<T> TrainOutcome<T> {
    pub fn history_csv(&self) -> String {
        history_csv(&self.history)
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr);
    }
    out
}

/// Runs epochs of shuffled mini-batch Adam until early stopping or
/// `max_epochs`, then loads the best-validation parameters into `model`.
pub fn train_loop<T: Scalar, M: Trainable<T>>(
    model: &mut M,
    train: &[M::Sample],
    val: &[M::Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params(), cfg.lr_init);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut plateau = PlateauScheduler::new(cfg.lr_init, cfg.lr_factor, cfg.lr_patience);
    let mut best_params = model.params().clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = plateau.lr();
        adam.lr = lr;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&M::Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut graph = Graph::new();
            let bound = model.params().bind(&mut graph);
            let loss = model.batch_loss(&mut graph, &bound, &batch, &mut rng)?;
            let value = graph.value(loss).item().map_or(f64::NAN, Scalar::to_f64_lossy);
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { what: "training", epoch });
            }
            total += value * batch.len() as f64;
            let grads = graph.backward(loss)?;
            let grads = model.params().collect_grads(&bound, &grads);
            adam.step(model.params_mut(), &grads)?;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = model.validation_loss(val)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { what: "validation", epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if stopper.observe(epoch, val_loss) {
            best_params = model.params().clone();
        }
        plateau.observe(val_loss);
        if stopper.should_stop() {
            break;
        }
    }

    let (best_epoch, best_val_loss) = stopper.best().expect("at least one finite epoch");
    model.params_mut().load_from(&best_params)?;
    Ok(TrainOutcome {
        stopped_early: stopper.should_stop(),
        best_params,
        best_epoch,
        best_val_loss,
        history,
    })
}

/// What a search trial reports back.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub val_loss: f64,
    pub n_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord<C> {
    pub rank: usize,
    pub trial: usize,
    pub spec: C,
    pub val_loss: f64,
    pub n_params: usize,
}

/// Trials in rank order: lowest validation loss, then fewer parameters,
/// then spec order, then trial index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult<C> {
    pub trials: Vec<TrialRecord<C>>,
}

impl<C: Clone + Serialize> SearchResult<C> {
    pub fn best(&self) -> &TrialRecord<C> {
        &self.trials[0]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("search results serialize")
    }
}

fn loss_key(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Evaluates every spec, on `jobs` worker threads when `jobs > 1`, and ranks
/// the outcomes. Results are merged by trial index, so the ranking does not
/// depend on thread scheduling.
pub fn run_trials<C, F>(specs: Vec<C>, jobs: usize, evaluate: F) -> Result<SearchResult<C>, TrainError>
where
    C: Clone + PartialOrd + Send + Sync,
    F: Fn(&C, usize) -> Result<TrialOutcome, TrainError> + Sync,
{
    if specs.is_empty() {
        return Err(TrainError::Config("search has no candidates".into()));
    }
    let outcomes: Vec<Result<TrialOutcome, TrainError>> = if jobs <= 1 {
        specs.iter().enumerate().map(|(i, s)| evaluate(s, i)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        pool.install(|| specs.par_iter().enumerate().map(|(i, s)| evaluate(s, i)).collect())
    };
    let mut trials = Vec::with_capacity(specs.len());
    for (trial, (spec, outcome)) in specs.into_iter().zip(outcomes).enumerate() {
        let outcome = outcome?;
        trials.push(TrialRecord {
            rank: 0,
            trial,
            spec,
            val_loss: outcome.val_loss,
            n_params: outcome.n_params,
        });
    }
    trials.sort_by(|a, b| {
        loss_key(a.val_loss)
            .total_cmp(&loss_key(b.val_loss))
            .then(a.n_params.cmp(&b.n_params))
            .then(a.spec.partial_cmp(&b.spec).unwrap_or(Ordering::Equal))
            .then(a.trial.cmp(&b.trial))
    });
    for (rank, t) in trials.iter_mut().enumerate() {
        t.rank = rank + 1;
    }
    Ok(SearchResult { trials })
}

/// One point of the cloud-network grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CloudGridPoint {
    pub layers: usize,
    pub hidden: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudGrid {
    pub layers: Vec<usize>,
    pub hidden: Vec<usize>,
    pub batch_size: Vec<usize>,
}

impl CloudGrid {
    /// The published grid: 1 to 6 layers, 32 or 64 hidden states, batch 16 or 32.
    pub fn table() -> Self {
        CloudGrid {
            layers: (1..=6).collect(),
            hidden: vec![32, 64],
            batch_size: vec![16, 32],
        }
    }

    /// Every combination in lexicographic order.
    pub fn points(&self) -> Vec<CloudGridPoint> {
        let mut out = Vec::new();
        for &layers in &self.layers {
            for &hidden in &self.hidden {
                for &batch_size in &self.batch_size {
                    out.push(CloudGridPoint {
                        layers,
                        hidden,
                        batch_size,
                    });
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

/// Exhaustive search over `grid`; `train` fits one candidate and reports
/// its validation loss.
pub fn grid_search_cloud<F>(grid: &CloudGrid, jobs: usize, train: F) -> Result<SearchResult<CloudGridPoint>, TrainError>
where
    F: Fn(&CloudGridPoint, usize) -> Result<TrialOutcome, TrainError> + Sync,
{
    run_trials(grid.points(), jobs, train)
}

/// Seeded random search: all specs are drawn up front from one stream, so
/// the candidate list is independent of `jobs`.
pub fn random_search_solar<F>(
    space: &SolarSearchSpace,
    n_trials: usize,
    seed: u64,
    jobs: usize,
    train: F,
) -> Result<SearchResult<SolarNetSpec>, TrainError>
where
    F: Fn(&SolarNetSpec, usize) -> Result<TrialOutcome, TrainError> + Sync,
{
    space.validate()?;
    if n_trials == 0 {
        return Err(TrainError::Config("n_trials must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = (0..n_trials).map(|_| space.sample(&mut rng)).collect();
    run_trials(specs, jobs, train)
}
