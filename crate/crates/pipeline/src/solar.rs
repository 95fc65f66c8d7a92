//! Per-site solar-net training on normalized samples, random search, and
//! the bank of trained nets for one network kind and lineage.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use cloudcast_core::losses::mse;
use cloudcast_core::solar::{Mode, NetKind, SolarBatch, SolarNet, SolarNetSpec, SolarSearchSpace, STEPS};
use cloudcast_core::training::{
    random_search_solar, train_loop, SearchResult, TrainConfig, TrainError, TrainOutcome, Trainable, TrialOutcome,
};
use cloudcast_core::{Bound, Graph, ParamSet, Tensor, TensorError, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ForecastSample, HORIZON};
use crate::error::PipelineError;

/// Whether a net sees horizon cloud pixels. Nets for the `no_clouds`
/// scenario form their own lineage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lineage {
    WithClouds,
    NoClouds,
}

impl Lineage {
    pub fn as_str(self) -> &'static str {
        match self {
            Lineage::WithClouds => "with_clouds",
            Lineage::NoClouds => "no_clouds",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "with_clouds" => Some(Lineage::WithClouds),
            "no_clouds" => Some(Lineage::NoClouds),
            _ => None,
        }
    }

    pub fn with_clouds(self) -> bool {
        self == Lineage::WithClouds
    }
}

impl fmt::Display for Lineage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One training example scaled to `[0, 1]`: power over capacity, pixels over 255.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolarExample {
    pub past: [f64; STEPS],
    pub clouds: [f64; STEPS],
    pub target: [f64; STEPS],
}

impl SolarExample {
    /// Uses the sample's ground-truth horizon pixels.
    pub fn from_sample(sample: &ForecastSample, capacity_kw: f64) -> Self {
        SolarExample {
            past: sample.input_power.map(|p| p / capacity_kw),
            clouds: sample.horizon_pixels.map(|p| f64::from(p) / 255.0),
            target: sample.target_power.map(|p| p / capacity_kw),
        }
    }
}

/// Batches normalized power and, when `clouds` is given, normalized pixels.
pub fn solar_batch(past_kw: &[[f64; STEPS]], clouds: Option<&[[u8; HORIZON]]>, capacity_kw: f64) -> SolarBatch<f64> {
    let b = past_kw.len();
    let power = past_kw.iter().flatten().map(|p| p / capacity_kw).collect();
    SolarBatch {
        past_power: Tensor::new([b, STEPS], power).expect("batch shape"),
        horizon_clouds: clouds.map(|c| {
            let data = c.iter().flatten().map(|&p| f64::from(p) / 255.0).collect();
            Tensor::new([c.len(), STEPS], data).expect("batch shape")
        }),
    }
}

fn example_batch<'a>(examples: impl ExactSizeIterator<Item = &'a SolarExample>, with_clouds: bool) -> (SolarBatch<f64>, Tensor<f64>) {
    let b = examples.len();
    let (mut past, mut clouds, mut target) = (Vec::new(), Vec::new(), Vec::new());
    for e in examples {
        past.extend_from_slice(&e.past);
        clouds.extend_from_slice(&e.clouds);
        target.extend_from_slice(&e.target);
    }
    let batch = SolarBatch {
        past_power: Tensor::new([b, STEPS], past).expect("batch shape"),
        horizon_clouds: with_clouds.then(|| Tensor::new([b, STEPS], clouds).expect("batch shape")),
    };
    (batch, Tensor::new([b, STEPS], target).expect("batch shape"))
}

/// Minimizes the mean squared error of normalized power.
pub struct SolarTrainer {
    pub net: SolarNet<f64>,
}

impl Trainable<f64> for SolarTrainer {
    type Sample = SolarExample;

    fn params(&self) -> &ParamSet<f64> {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut ParamSet<f64> {
        self.net.params_mut()
    }

    fn batch_loss(
        &self,
        g: &mut Graph<f64>,
        bound: &Bound,
        batch: &[&SolarExample],
        rng: &mut ChaCha8Rng,
    ) -> Result<Var, TensorError> {
        let (inputs, target) = example_batch(batch.iter().copied(), self.net.with_clouds());
        let pred = self.net.forward(g, bound, &inputs, Mode::Train(rng))?;
        let target = g.constant(target);
        mse(g, pred, target)
    }

    fn validation_loss(&self, samples: &[SolarExample]) -> Result<f64, TensorError> {
        let (inputs, target) = example_batch(samples.iter(), self.net.with_clouds());
        let pred = self.net.predict(&inputs)?;
        let n = target.data().len().max(1) as f64;
        Ok(pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
    }
}

/// The spec's epochs, batch size and learning rate on top of the default
/// stopping and plateau protocol.
pub fn solar_train_config(spec: &SolarNetSpec, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: spec.epochs,
        lr_init: spec.learning_rate,
        batch_size: spec.batch_size,
        seed,
        ..TrainConfig::default()
    }
}

pub fn train_solar_net(
    spec: &SolarNetSpec,
    lineage: Lineage,
    train: &[SolarExample],
    val: &[SolarExample],
    seed: u64,
) -> Result<(SolarNet<f64>, TrainOutcome<f64>), TrainError> {
    let net = SolarNet::new(spec.clone(), lineage.with_clouds(), seed)?;
    let mut trainer = SolarTrainer { net };
    let outcome = train_loop(&mut trainer, train, val, &solar_train_config(spec, seed))?;
    Ok((trainer.net, outcome))
}

/// Random search over `space`; returns the ranked trials and the net
/// trained from the winning spec.
pub fn search_solar_net(
    space: &SolarSearchSpace,
    n_trials: usize,
    lineage: Lineage,
    train: &[SolarExample],
    val: &[SolarExample],
    seed: u64,
    jobs: usize,
) -> Result<(SearchResult<SolarNetSpec>, SolarNet<f64>), TrainError> {
    let nets = Mutex::new(BTreeMap::new());
    let result = random_search_solar(space, n_trials, seed, jobs, |spec, trial| {
        let (net, outcome) = train_solar_net(spec, lineage, train, val, seed.wrapping_add(trial as u64))?;
        let n_params = net.params().numel();
        nets.lock().expect("trial lock").insert(trial, net);
        Ok(TrialOutcome {
            val_loss: outcome.best_val_loss,
            n_params,
        })
    })?;
    let best = result.best().trial;
    let net = nets.into_inner().expect("trial lock").remove(&best).expect("every trial stored its net");
    Ok((result, net))
}

/// One trained net per site, in fleet site order.
#[derive(Clone, Debug)]
pub struct SolarBank {
    pub kind: NetKind,
    pub lineage: Lineage,
    pub nets: Vec<SolarNet<f64>>,
}

impl SolarBank {
    pub fn new(kind: NetKind, lineage: Lineage, nets: Vec<SolarNet<f64>>) -> Result<Self, PipelineError> {
        for (site, net) in nets.iter().enumerate() {
            if net.spec().kind != kind || net.with_clouds() != lineage.with_clouds() {
                return Err(PipelineError::LineageMismatch {
                    scenario: lineage.to_string(),
                    detail: format!(
                        "site {site} holds a {} net with_clouds={} in a {kind} {lineage} bank",
                        net.spec().kind,
                        net.with_clouds()
                    ),
                });
            }
        }
        Ok(SolarBank { kind, lineage, nets })
    }
}

/// Per-site sample lists, indexed by site.
pub fn by_site(samples: &[ForecastSample], sites: usize) -> Vec<Vec<&ForecastSample>> {
    let mut out = vec![Vec::new(); sites];
    for s in samples {
        out[s.site].push(s);
    }
    out
}
