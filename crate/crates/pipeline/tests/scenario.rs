use cloudcast_core::cells::{CloudArchitecture, CloudNet};
use cloudcast_pipeline::cloud::{forecast_frames, CloudForecasts};
use cloudcast_pipeline::*;

fn setup() -> (Fleet, Vec<ForecastSample>) {
    let fleet = generate_fleet(&SynthConfig {
        days: 2,
        sites: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let origins: Vec<usize> = daylight_origins(&fleet).into_iter().step_by(9).collect();
    let samples = build_samples(&fleet, &origins).unwrap();
    (fleet, samples)
}

#[test]
fn names_round_trip() {
    for s in [
        Scenario::GroundTruthClouds,
        Scenario::forecasted("cbam"),
        Scenario::PersistenceClouds,
        Scenario::NoClouds,
    ] {
        assert_eq!(Scenario::parse(&s.name()).unwrap(), s);
    }
    assert_eq!(Scenario::forecasted("sa").name(), "forecasted_clouds:sa");
    assert!(Scenario::parse("forecasted_clouds:").is_err());
    assert!(Scenario::parse("sunny").is_err());
    assert!(!Scenario::NoClouds.uses_clouds());
}

#[test]
fn persistence_repeats_last_pixel() {
    let (fleet, samples) = setup();
    let mut s = samples[0].clone();
    s.last_pixel = 80;
    let got = make_cloud_input(&Scenario::PersistenceClouds, &s, &fleet, None).unwrap();
    assert_eq!(got, Some([80; 6]));
}

#[test]
fn ground_truth_passes_through_and_no_clouds_is_absent() {
    let (fleet, samples) = setup();
    for s in &samples {
        assert_eq!(
            make_cloud_input(&Scenario::GroundTruthClouds, s, &fleet, None).unwrap(),
            Some(s.horizon_pixels)
        );
        assert_eq!(make_cloud_input(&Scenario::NoClouds, s, &fleet, None).unwrap(), None);
    }
}

#[test]
fn identity_model_forecast_equals_persistence() {
    let (fleet, samples) = setup();
    let net = CloudNet::<f64>::new(CloudArchitecture::identity(), 0).unwrap();
    let origins: Vec<usize> = samples.iter().map(|s| s.t).collect();
    let fc = forecast_frames(&net, "identity", &fleet, &origins).unwrap();
    let scenario = Scenario::forecasted("identity");
    for s in &samples {
        assert_eq!(
            make_cloud_input(&scenario, s, &fleet, Some(&fc)).unwrap(),
            make_cloud_input(&Scenario::PersistenceClouds, s, &fleet, None).unwrap()
        );
    }
}

#[test]
fn forecast_lookup_failures() {
    let (fleet, samples) = setup();
    let scenario = Scenario::forecasted("convlstm");
    assert!(matches!(
        make_cloud_input(&scenario, &samples[0], &fleet, None),
        Err(PipelineError::MissingCheckpoint(_))
    ));
    let other = CloudForecasts {
        model_id: "cbam".into(),
        ..CloudForecasts::default()
    };
    assert!(matches!(
        make_cloud_input(&scenario, &samples[0], &fleet, Some(&other)),
        Err(PipelineError::MissingCheckpoint(_))
    ));
    let empty = CloudForecasts {
        model_id: "convlstm".into(),
        ..CloudForecasts::default()
    };
    assert!(matches!(
        make_cloud_input(&scenario, &samples[0], &fleet, Some(&empty)),
        Err(PipelineError::MissingCheckpoint(_))
    ));
}
