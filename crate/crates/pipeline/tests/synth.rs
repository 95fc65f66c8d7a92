use cloudcast_core::metrics::SkyClass;
use cloudcast_pipeline::dataset::class_shares;
use cloudcast_pipeline::*;

fn small() -> SynthConfig {
    SynthConfig {
        days: 4,
        sites: 4,
        ..SynthConfig::default()
    }
}

#[test]
fn same_seed_same_fleet() {
    let a = generate_fleet(&small()).unwrap();
    let b = generate_fleet(&small()).unwrap();
    assert_eq!(a, b);
    let c = generate_fleet(&SynthConfig { seed: 8, ..small() }).unwrap();
    assert_ne!(a.frames, c.frames);
}

#[test]
fn counts_match_config() {
    let cfg = small();
    let fleet = generate_fleet(&cfg).unwrap();
    assert_eq!(fleet.len(), cfg.days * 24 * 6);
    assert_eq!(fleet.sites.len(), cfg.sites);
    fleet.validate().unwrap();
    let pixels: std::collections::BTreeSet<_> = (0..cfg.sites).map(|i| fleet.site_pixel(i).unwrap()).collect();
    assert_eq!(pixels.len(), cfg.sites);
    for s in &fleet.sites {
        assert!((cfg.capacity_kw.0..=cfg.capacity_kw.1).contains(&s.capacity_kw));
    }
}

#[test]
fn cloud_free_fleet_tracks_clear_sky() {
    let mut cfg = small();
    cfg.cloud.low_blobs = 0.0;
    cfg.cloud.high_blobs = 0.0;
    cfg.class_targets = ClassTargets {
        clear: 100.0,
        high_cloud: 0.0,
        low_cloud: 0.0,
    };
    cfg.noise_std = 0.0;
    let fleet = generate_fleet(&cfg).unwrap();
    assert!(fleet.frames.iter().all(|f| f.pixels.iter().all(|&p| p == 0)));
    for s in &fleet.sites {
        for (i, &p) in s.power_kw.iter().enumerate() {
            let expected = s.capacity_kw * fleet.clear_sky.potential(fleet.timestamp(i));
            assert!((p - expected).abs() < 1e-12, "{p} vs {expected}");
        }
    }
}

#[test]
fn zero_blobs_with_cloudy_targets_is_rejected() {
    let mut cfg = small();
    cfg.cloud.low_blobs = 0.0;
    cfg.cloud.high_blobs = 0.0;
    assert!(matches!(generate_fleet(&cfg), Err(PipelineError::Config(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        SynthConfig { sites: 0, ..small() },
        SynthConfig { sites: 577, ..small() },
        SynthConfig { start: "yesterday".into(), ..small() },
        SynthConfig { noise_std: 0.5, ..small() },
        SynthConfig { capacity_kw: (5.0, 1.0), ..small() },
    ];
    for cfg in bad {
        assert!(generate_fleet(&cfg).is_err(), "{cfg:?}");
    }
}

#[test]
fn attenuation_piecewise_values() {
    let a = Attenuation::default();
    assert!((a.transmittance(0) - 1.0).abs() < 1e-15);
    assert!((a.transmittance(50) - 0.1).abs() < 1e-12);
    assert!((a.transmittance(51) - (0.55 - 0.35 / 205.0)).abs() < 1e-12);
    assert!((a.transmittance(255) - 0.2).abs() < 1e-12);
    assert!(a.transmittance(25) > a.transmittance(50));
    assert!(a.transmittance(60) > a.transmittance(200));
}

#[test]
fn low_clouds_attenuate_less_than_thick_high_clouds() {
    let a = Attenuation::default();
    assert!(a.transmittance(50) < a.transmittance(51));
    assert!(a.transmittance(30) > a.transmittance(200));
}

#[test]
fn class_mix_near_targets() {
    for seed in [1, 7] {
        let fleet = generate_fleet(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
        let samples = build_samples(&fleet, &daylight_origins(&fleet)).unwrap();
        let shares = class_shares(&samples);
        let t = ClassTargets::default();
        assert!((shares.clear - t.clear).abs() <= 10.0, "{shares:?}");
        assert!((shares.high_cloud - t.high_cloud).abs() <= 10.0, "{shares:?}");
        assert!((shares.low_cloud - t.low_cloud).abs() <= 10.0, "{shares:?}");
        assert!((shares.clear + shares.high_cloud + shares.low_cloud - 100.0).abs() < 1e-9);
    }
}

#[test]
fn cloudy_samples_produce_less_power() {
    let fleet = generate_fleet(&SynthConfig::default()).unwrap();
    let samples = build_samples(&fleet, &daylight_origins(&fleet)).unwrap();
    let mut deficit = Vec::new();
    let mut pixel = Vec::new();
    for s in &samples {
        let cap = fleet.sites[s.site].capacity_kw;
        for k in 0..HORIZON {
            let clear = cap * fleet.clear_sky.potential(fleet.timestamp(s.t + 1 + k));
            deficit.push(clear - s.target_power[k]);
            pixel.push(f64::from(s.horizon_pixels[k]));
        }
    }
    let n = deficit.len() as f64;
    let (md, mp) = (deficit.iter().sum::<f64>() / n, pixel.iter().sum::<f64>() / n);
    let cov: f64 = deficit.iter().zip(&pixel).map(|(d, p)| (d - md) * (p - mp)).sum();
    let vd: f64 = deficit.iter().map(|d| (d - md).powi(2)).sum();
    let vp: f64 = pixel.iter().map(|p| (p - mp).powi(2)).sum();
    assert!(cov / (vd * vp).sqrt() > 0.3);
    assert!(samples.iter().any(|s| s.sky_class() == SkyClass::HighCloud));
}
