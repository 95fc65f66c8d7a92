use std::collections::BTreeMap;

use cloudcast_core::cells::{CloudArchitecture, CloudNet};
use cloudcast_core::metrics::{rmse, mae, Condition};
use cloudcast_core::report::SampleResult;
use cloudcast_core::solar::{NetKind, SolarNet, SolarNetSpec, STEPS};
use cloudcast_pipeline::cloud::forecast_frames;
use cloudcast_pipeline::*;

fn setup(sites: usize) -> (Fleet, Vec<ForecastSample>) {
    let fleet = generate_fleet(&SynthConfig {
        days: 3,
        sites,
        ..SynthConfig::default()
    })
    .unwrap();
    let origins: Vec<usize> = daylight_origins(&fleet).into_iter().step_by(3).collect();
    let samples = build_samples(&fleet, &origins).unwrap();
    (fleet, samples)
}

struct Oracle;

impl PowerForecaster for Oracle {
    fn name(&self) -> String {
        "oracle".into()
    }
    fn lineage(&self) -> Option<Lineage> {
        None
    }
    fn forecast(
        &self,
        _: usize,
        _: f64,
        samples: &[&ForecastSample],
        _: Option<&[[u8; HORIZON]]>,
    ) -> Result<Vec<[f64; STEPS]>, PipelineError> {
        Ok(samples.iter().map(|s| s.target_power).collect())
    }
}

fn bank(fleet: &Fleet, kind: NetKind, lineage: Lineage) -> SolarBank {
    let spec = SolarNetSpec {
        kind,
        layers: 1,
        width: 4,
        kernel: 2,
        dropout: 0.0,
        epochs: 1,
        batch_size: 8,
        learning_rate: 1e-3,
    };
    let nets = (0..fleet.sites.len())
        .map(|i| SolarNet::new(spec.clone(), lineage.with_clouds(), i as u64).unwrap())
        .collect();
    SolarBank::new(kind, lineage, nets).unwrap()
}

#[test]
fn perfect_oracle_scores_full_skill() {
    let (fleet, samples) = setup(1);
    let one = &samples[samples.len() / 2..samples.len() / 2 + 1];
    let out = run_benchmark(&fleet, one, &[Scenario::GroundTruthClouds], &[&Oracle], &[], 1).unwrap();
    let cell = out.report.fleet_cell("oracle", "ground_truth_clouds", Condition::All).unwrap();
    assert_eq!(cell.rmse_skill, Some(100.0));
    assert_eq!(cell.mae_skill, Some(100.0));
}

#[test]
fn persistence_scores_zero_everywhere() {
    let (fleet, samples) = setup(3);
    let scenarios = [Scenario::GroundTruthClouds, Scenario::PersistenceClouds, Scenario::NoClouds];
    let out = run_benchmark(&fleet, &samples, &scenarios, &[&PersistenceForecaster], &[], 1).unwrap();
    assert_eq!(out.samples.len(), samples.len() * 3);
    let mut seen = 0;
    for cell in out.report.fleet.values() {
        for v in [cell.rmse_skill, cell.mae_skill].into_iter().flatten() {
            assert_eq!(v, 0.0);
            seen += 1;
        }
    }
    assert!(seen > 0);
}

#[test]
fn lineage_mismatch_is_an_error() {
    let (fleet, samples) = setup(2);
    let no_clouds = bank(&fleet, NetKind::Mlp, Lineage::NoClouds);
    let with_clouds = bank(&fleet, NetKind::Mlp, Lineage::WithClouds);
    let err = run_benchmark(&fleet, &samples, &[Scenario::GroundTruthClouds], &[&no_clouds], &[], 1);
    assert!(matches!(err, Err(PipelineError::LineageMismatch { .. })));
    let err = run_benchmark(&fleet, &samples, &[Scenario::NoClouds], &[&with_clouds], &[], 1);
    assert!(matches!(err, Err(PipelineError::LineageMismatch { .. })));
    let ok = run_benchmark(
        &fleet,
        &samples,
        &[Scenario::GroundTruthClouds, Scenario::NoClouds],
        &[&with_clouds, &no_clouds],
        &[],
        1,
    )
    .unwrap();
    assert_eq!(ok.samples.len(), 2 * samples.len());
}

#[test]
fn bank_rejects_wrong_nets() {
    let (fleet, _) = setup(2);
    let nets = bank(&fleet, NetKind::Lstm, Lineage::WithClouds).nets;
    assert!(SolarBank::new(NetKind::Lstm, Lineage::NoClouds, nets.clone()).is_err());
    assert!(SolarBank::new(NetKind::Mlp, Lineage::WithClouds, nets).is_err());
}

#[test]
fn missing_forecasts_are_reported() {
    let (fleet, samples) = setup(2);
    let with_clouds = bank(&fleet, NetKind::Cnn1d, Lineage::WithClouds);
    let err = run_benchmark(&fleet, &samples, &[Scenario::forecasted("sa")], &[&with_clouds], &[], 1);
    assert!(matches!(err, Err(PipelineError::MissingCheckpoint(_))));
}

#[test]
fn identity_forecasts_reproduce_persistence_report() {
    let (fleet, samples) = setup(3);
    let origins: Vec<usize> = samples.iter().map(|s| s.t).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let identity = CloudNet::<f64>::new(CloudArchitecture::identity(), 0).unwrap();
    let fc = forecast_frames(&identity, "identity", &fleet, &origins).unwrap();
    let with_clouds = bank(&fleet, NetKind::Lstm, Lineage::WithClouds);
    let scenarios = [Scenario::forecasted("identity"), Scenario::PersistenceClouds];
    let out = run_benchmark(&fleet, &samples, &scenarios, &[&with_clouds], &[fc], 1).unwrap();
    for condition in Condition::ALL {
        let a = out.report.fleet_cell("lstm", "forecasted_clouds:identity", condition);
        let b = out.report.fleet_cell("lstm", "persistence_clouds", condition);
        assert_eq!(a, b);
    }
    let (fa, pa): (Vec<&SampleResult>, Vec<&SampleResult>) =
        out.samples.iter().partition(|s| s.scenario.starts_with("forecasted"));
    for (x, y) in fa.iter().zip(&pa) {
        assert_eq!(x.pred, y.pred);
    }
}

#[test]
fn report_matches_brute_force_recomputation() {
    let (fleet, samples) = setup(3);
    let with_clouds = bank(&fleet, NetKind::Mlp, Lineage::WithClouds);
    let no_clouds = bank(&fleet, NetKind::Mlp, Lineage::NoClouds);
    let scenarios = [Scenario::GroundTruthClouds, Scenario::PersistenceClouds, Scenario::NoClouds];
    let out = run_benchmark(&fleet, &samples, &scenarios, &[&with_clouds, &no_clouds], &[], 1).unwrap();

    for scenario in &scenarios {
        for condition in Condition::ALL {
            let mut per_site: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for s in out.samples.iter().filter(|s| s.scenario == scenario.name() && condition.contains(s.condition)) {
                let m = rmse(&s.pred, &s.actual).unwrap();
                let p = rmse(&s.persistence, &s.actual).unwrap();
                if p > 0.0 {
                    per_site.entry(&s.site).or_default().push(100.0 * (1.0 - m / p));
                }
            }
            let site_means: Vec<f64> = per_site.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
            let expected = (!site_means.is_empty()).then(|| site_means.iter().sum::<f64>() / site_means.len() as f64);
            let cell = out.report.fleet_cell("mlp", &scenario.name(), condition).unwrap();
            match (cell.rmse_skill, expected) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
                (a, b) => assert_eq!(a, b),
            }
        }
    }
    let s = &out.samples[0];
    assert!(mae(&s.pred, &s.actual).unwrap() >= 0.0);
}

#[test]
fn parallel_benchmark_matches_serial() {
    let (fleet, samples) = setup(3);
    let with_clouds = bank(&fleet, NetKind::Cnn1d, Lineage::WithClouds);
    let no_clouds = bank(&fleet, NetKind::Cnn1d, Lineage::NoClouds);
    let scenarios = [Scenario::GroundTruthClouds, Scenario::NoClouds];
    let a = run_benchmark(&fleet, &samples, &scenarios, &[&with_clouds, &no_clouds], &[], 1).unwrap();
    let b = run_benchmark(&fleet, &samples, &scenarios, &[&with_clouds, &no_clouds], &[], 3).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.report.to_csv(), b.report.to_csv());
}

#[test]
fn every_sample_lands_in_one_class() {
    let (fleet, samples) = setup(3);
    let out = run_benchmark(&fleet, &samples, &[Scenario::NoClouds], &[&PersistenceForecaster], &[], 1).unwrap();
    let count = |c| out.report.fleet_cell("persistence", "no_clouds", c).unwrap().sample_count;
    assert_eq!(count(Condition::All), samples.len());
    assert_eq!(
        count(Condition::Clear) + count(Condition::HighCloud) + count(Condition::LowCloud),
        samples.len()
    );
    assert_eq!(count(Condition::CloudyAll), samples.len() - count(Condition::Clear));
}
