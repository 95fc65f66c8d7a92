//! End-to-end desk experiment: synthesize a fleet, train the cloud models
//! and the per-site solar nets, and benchmark every scenario on the test
//! split.

use cloudcast_core::cells::{CellKind, CloudArchitecture, CloudNet};
use cloudcast_core::checkpoint;
use cloudcast_core::solar::{NetKind, SolarNetSpec};
use cloudcast_core::training::EpochRecord;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::benchmark::{run_benchmark, BenchmarkOutput, PowerForecaster};
use crate::cloud::{
    cloud_sequences, forecast_frames, one_step_ssim, spread, train_cloud_model, CloudObjective, CloudTrainSpec, OneStepSsim,
};
use crate::dataset::{build_samples, class_shares, daylight_origins, split_chronological, ClassShares, Split};
use crate::error::PipelineError;
use crate::fleet::Fleet;
use crate::scenario::Scenario;
use crate::solar::{by_site, train_solar_net, Lineage, SolarBank, SolarExample};
use crate::synth::{generate_fleet, SynthConfig};

pub const SPLIT_RATIOS: (f64, f64, f64) = (0.72, 0.18, 0.10);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub split: (f64, f64, f64),
    pub clouds: Vec<CloudTrainSpec>,
    pub solar: Vec<SolarNetSpec>,
    /// Test sequences scored for one-step SSIM.
    pub ssim_sequences: usize,
    pub seed: u64,
    pub jobs: usize,
}

fn cloud_spec(cell: CellKind, learning_rate: f64, max_epochs: usize, train_sequences: usize) -> CloudTrainSpec {
    CloudTrainSpec {
        arch: CloudArchitecture::new(cell, 1, 8, 3),
        objective: CloudObjective::TeacherForced,
        learning_rate,
        batch_size: 4,
        max_epochs,
        train_sequences,
        val_sequences: 12,
    }
}

fn solar_spec(kind: NetKind, layers: usize) -> SolarNetSpec {
    SolarNetSpec {
        kind,
        layers,
        width: 32,
        kernel: if kind == NetKind::Cnn1d { 3 } else { 1 },
        dropout: 0.0,
        epochs: 40,
        batch_size: 32,
        learning_rate: 3e-3,
    }
}

impl ExperimentConfig {
    /// Ten sites on a 24x24 grid, about two thousand forecast origins, and
    /// training budgets that finish on one core well inside half an hour.
    pub fn desk() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            split: SPLIT_RATIOS,
            clouds: vec![
                cloud_spec(CellKind::Convlstm, 1e-3, 15, 64),
                cloud_spec(CellKind::Cbam, 1e-3, 15, 64),
                cloud_spec(CellKind::Sa, 2e-3, 12, 32),
            ],
            solar: vec![
                solar_spec(NetKind::Mlp, 2),
                solar_spec(NetKind::Cnn1d, 2),
                solar_spec(NetKind::Lstm, 1),
            ],
            ssim_sequences: 60,
            seed: 11,
            jobs: 1,
        }
    }

    /// A few sites, a few days and tiny budgets; exercises every stage.
    pub fn smoke() -> Self {
        let mut cfg = ExperimentConfig::desk();
        cfg.synth.sites = 3;
        cfg.synth.days = 6;
        for c in &mut cfg.clouds {
            c.max_epochs = 2;
            c.train_sequences = 4;
            c.val_sequences = 2;
        }
        for s in &mut cfg.solar {
            s.epochs = 3;
        }
        cfg.ssim_sequences = 4;
        cfg
    }
}

/// Seed for the `index`-th model of a family, spread so neighbours differ in every bit.
pub fn derive_seed(base: u64, family: u64, index: u64) -> u64 {
    base ^ family.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

#[derive(Clone, Debug)]
pub struct CloudModelRun {
    pub id: String,
    pub spec: CloudTrainSpec,
    pub net: CloudNet<f64>,
    pub history: Vec<EpochRecord>,
    pub ssim: OneStepSsim,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub split: Split,
    pub shares: ClassShares,
    pub clouds: Vec<CloudModelRun>,
    pub banks: Vec<SolarBank>,
    pub scenarios: Vec<Scenario>,
    pub benchmark: BenchmarkOutput,
}

impl ExperimentResult {
    /// Every checkpoint in a fixed order, named by model.
    pub fn checkpoints(&self, fleet: &Fleet) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for c in &self.clouds {
            let meta = json!({ "kind": "cloud", "arch": c.spec.arch });
            out.push((format!("cloud_{}", c.id), checkpoint::encode(c.net.params(), &meta)));
        }
        for bank in &self.banks {
            for (net, site) in bank.nets.iter().zip(&fleet.sites) {
                let meta = json!({ "kind": "solar", "spec": net.spec(), "lineage": bank.lineage, "site": site.id });
                out.push((
                    format!("solar_{}_{}_{}", bank.kind, bank.lineage, site.id),
                    checkpoint::encode(net.params(), &meta),
                ));
            }
        }
        out
    }

    pub fn cloud_ssim_table(&self) -> String {
        let mut out = String::from("model,model_ssim,persistence_ssim,sequences\n");
        for c in &self.clouds {
            out.push_str(&format!("{},{},{},{}\n", c.id, c.ssim.model, c.ssim.persistence, c.ssim.sequences));
        }
        out
    }
}

/// Generates the fleet described by `cfg.synth` and runs [`run_experiment_on`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Fleet, ExperimentResult), PipelineError> {
    let fleet = generate_fleet(&cfg.synth)?;
    let result = run_experiment_on(cfg, &fleet)?;
    Ok((fleet, result))
}

pub fn run_experiment_on(cfg: &ExperimentConfig, fleet: &Fleet) -> Result<ExperimentResult, PipelineError> {
    let origins = daylight_origins(fleet);
    let split = split_chronological(&origins, cfg.split)?;
    let shares = class_shares(&build_samples(fleet, &origins)?);

    let ssim_seqs = cloud_sequences(fleet, &spread(&split.test, cfg.ssim_sequences))?;
    let mut clouds = Vec::new();
    let mut forecasts = Vec::new();
    for (i, spec) in cfg.clouds.iter().enumerate() {
        let seed = derive_seed(cfg.seed, 1, i as u64);
        let (net, outcome) = train_cloud_model(spec, fleet, &split.train, &split.val, seed)?;
        let ssim = one_step_ssim(&net, &ssim_seqs)?;
        forecasts.push(forecast_frames(&net, &spec.id(), fleet, &split.test)?);
        clouds.push(CloudModelRun {
            id: spec.id(),
            spec: spec.clone(),
            net,
            history: outcome.history,
            ssim,
        });
    }

    let train = build_samples(fleet, &split.train)?;
    let val = build_samples(fleet, &split.val)?;
    let test = build_samples(fleet, &split.test)?;
    let train_by_site = by_site(&train, fleet.sites.len());
    let val_by_site = by_site(&val, fleet.sites.len());
    let mut banks = Vec::new();
    for (k, spec) in cfg.solar.iter().enumerate() {
        for lineage in [Lineage::WithClouds, Lineage::NoClouds] {
            let family = 2 + 2 * k as u64 + u64::from(lineage == Lineage::NoClouds);
            let nets = train_site_nets(cfg, fleet, spec, lineage, &train_by_site, &val_by_site, family)?;
            banks.push(SolarBank::new(spec.kind, lineage, nets)?);
        }
    }

    let mut scenarios = vec![Scenario::GroundTruthClouds];
    scenarios.extend(clouds.iter().map(|c| Scenario::forecasted(c.id.clone())));
    scenarios.push(Scenario::PersistenceClouds);
    scenarios.push(Scenario::NoClouds);
    let models: Vec<&dyn PowerForecaster> = banks.iter().map(|b| b as &dyn PowerForecaster).collect();
    let benchmark = run_benchmark(fleet, &test, &scenarios, &models, &forecasts, cfg.jobs)?;
    Ok(ExperimentResult {
        split,
        shares,
        clouds,
        banks,
        scenarios,
        benchmark,
    })
}

fn train_site_nets(
    cfg: &ExperimentConfig,
    fleet: &Fleet,
    spec: &SolarNetSpec,
    lineage: Lineage,
    train: &[Vec<&crate::dataset::ForecastSample>],
    val: &[Vec<&crate::dataset::ForecastSample>],
    family: u64,
) -> Result<Vec<cloudcast_core::solar::SolarNet<f64>>, PipelineError> {
    let train_one = |site: usize| {
        let cap = fleet.sites[site].capacity_kw;
        let tr: Vec<SolarExample> = train[site].iter().map(|s| SolarExample::from_sample(s, cap)).collect();
        let va: Vec<SolarExample> = val[site].iter().map(|s| SolarExample::from_sample(s, cap)).collect();
        train_solar_net(spec, lineage, &tr, &va, derive_seed(cfg.seed, family, site as u64))
            .map(|(net, _)| net)
            .map_err(|source| PipelineError::Training {
                context: format!("{} {lineage} net for site {}", spec.kind, fleet.sites[site].id),
                source,
            })
    };
    if cfg.jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..fleet.sites.len()).into_par_iter().map(train_one).collect())
    } else {
        (0..fleet.sites.len()).map(train_one).collect()
    }
}
