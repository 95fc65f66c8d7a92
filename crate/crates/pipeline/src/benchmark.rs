//! Scenario benchmark: every test sample is forecast under every scenario by
//! every net, scored against power persistence, and aggregated.

use cloudcast_core::report::{aggregate_report, SampleResult, SkillReport};
use cloudcast_core::solar::{persistence_power, STEPS};
use rayon::prelude::*;

use crate::cloud::CloudForecasts;
use crate::dataset::{ForecastSample, HORIZON};
use crate::error::PipelineError;
use crate::fleet::Fleet;
use crate::scenario::{make_cloud_input, Scenario};
use crate::solar::{by_site, solar_batch, Lineage, SolarBank};
use crate::synth::TIMESTAMP_FORMAT;

/// Anything that turns past power and optional horizon pixels into kW forecasts.
pub trait PowerForecaster: Sync {
    /// Report label; forecasters sharing a name are one net in two lineages.
    fn name(&self) -> String;

    /// `None` accepts every scenario.
    fn lineage(&self) -> Option<Lineage>;

    /// Forecasts for samples of one site; `clouds` is present exactly when
    /// the scenario uses clouds.
    fn forecast(
        &self,
        site: usize,
        capacity_kw: f64,
        samples: &[&ForecastSample],
        clouds: Option<&[[u8; HORIZON]]>,
    ) -> Result<Vec<[f64; STEPS]>, PipelineError>;
}

impl PowerForecaster for SolarBank {
    fn name(&self) -> String {
        self.kind.as_str().to_string()
    }

    fn lineage(&self) -> Option<Lineage> {
        Some(self.lineage)
    }

    fn forecast(
        &self,
        site: usize,
        capacity_kw: f64,
        samples: &[&ForecastSample],
        clouds: Option<&[[u8; HORIZON]]>,
    ) -> Result<Vec<[f64; STEPS]>, PipelineError> {
        let net = self
            .nets
            .get(site)
            .ok_or_else(|| PipelineError::MissingCheckpoint(format!("{} {} net for site {site}", self.kind, self.lineage)))?;
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let past: Vec<[f64; STEPS]> = samples.iter().map(|s| s.input_power).collect();
        let pred = net.predict(&solar_batch(&past, clouds, capacity_kw))?;
        Ok(pred
            .data()
            .chunks(STEPS)
            .map(|row| std::array::from_fn(|k| row[k] * capacity_kw))
            .collect())
    }
}

/// Repeats the last observed power; scores exactly zero skill.
#[derive(Clone, Copy, Debug, Default)]
pub struct PersistenceForecaster;

impl PowerForecaster for PersistenceForecaster {
    fn name(&self) -> String {
        "persistence".into()
    }

    fn lineage(&self) -> Option<Lineage> {
        None
    }

    fn forecast(
        &self,
        _site: usize,
        _capacity_kw: f64,
        samples: &[&ForecastSample],
        _clouds: Option<&[[u8; HORIZON]]>,
    ) -> Result<Vec<[f64; STEPS]>, PipelineError> {
        Ok(samples.iter().map(|s| persistence_power(&s.input_power)).collect())
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkOutput {
    /// Ordered by net, scenario, site, origin.
    pub samples: Vec<SampleResult>,
    pub report: SkillReport,
}

fn compatible(model: &dyn PowerForecaster, scenario: &Scenario) -> bool {
    match model.lineage() {
        None => true,
        Some(l) => l.with_clouds() == scenario.uses_clouds(),
    }
}

/// Evaluates `samples` under each scenario with each named net. For every
/// net name and scenario exactly the forecaster of the matching lineage is
/// used; a scenario with no such forecaster is a lineage mismatch.
pub fn run_benchmark(
    fleet: &Fleet,
    samples: &[ForecastSample],
    scenarios: &[Scenario],
    models: &[&dyn PowerForecaster],
    forecasts: &[CloudForecasts],
    jobs: usize,
) -> Result<BenchmarkOutput, PipelineError> {
    let mut names: Vec<String> = Vec::new();
    for m in models {
        if !names.contains(&m.name()) {
            names.push(m.name());
        }
    }
    let mut plan: Vec<(&dyn PowerForecaster, &Scenario, Option<&CloudForecasts>)> = Vec::new();
    for name in &names {
        for scenario in scenarios {
            let model = models
                .iter()
                .copied()
                .find(|m| m.name() == *name && compatible(*m, scenario))
                .ok_or_else(|| PipelineError::LineageMismatch {
                    scenario: scenario.name(),
                    detail: format!(
                        "no {name} net trained {}",
                        if scenario.uses_clouds() { "with clouds" } else { "without clouds" }
                    ),
                })?;
            let cloud_model = match scenario {
                Scenario::ForecastedClouds(id) => Some(
                    forecasts
                        .iter()
                        .find(|f| f.model_id == *id)
                        .ok_or_else(|| PipelineError::MissingCheckpoint(format!("cloud model {id:?}")))?,
                ),
                _ => None,
            };
            plan.push((model, scenario, cloud_model));
        }
    }

    let per_site = by_site(samples, fleet.sites.len());
    let evaluate = |&(model, scenario, cloud_model): &(&dyn PowerForecaster, &Scenario, Option<&CloudForecasts>)| {
        let mut out = Vec::new();
        for (site, site_samples) in per_site.iter().enumerate() {
            let series = &fleet.sites[site];
            let clouds = site_samples
                .iter()
                .map(|s| make_cloud_input(scenario, s, fleet, cloud_model))
                .collect::<Result<Option<Vec<_>>, _>>()?;
            let preds = model.forecast(site, series.capacity_kw, site_samples, clouds.as_deref())?;
            if preds.len() != site_samples.len() {
                return Err(PipelineError::Config(format!(
                    "{} returned {} forecasts for {} samples",
                    model.name(),
                    preds.len(),
                    site_samples.len()
                )));
            }
            for (s, pred) in site_samples.iter().zip(preds) {
                out.push(SampleResult {
                    net: model.name(),
                    scenario: scenario.name(),
                    site: series.id.clone(),
                    timestamp: s.timestamp.format(TIMESTAMP_FORMAT).to_string(),
                    condition: s.sky_class(),
                    pred: pred.to_vec(),
                    actual: s.target_power.to_vec(),
                    persistence: persistence_power(&s.input_power).to_vec(),
                });
            }
        }
        Ok(out)
    };

    let chunks: Vec<Vec<SampleResult>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
        pool.install(|| plan.par_iter().map(evaluate).collect::<Result<_, _>>())?
    } else {
        plan.iter().map(evaluate).collect::<Result<_, _>>()?
    };
    let samples: Vec<SampleResult> = chunks.into_iter().flatten().collect();
    let report = aggregate_report(&samples)?;
    Ok(BenchmarkOutput { samples, report })
}
