//! The two-stage framework around the core models: synthetic fleets and
//! their on-disk format, forecast samples and splits, cloud-model training
//! and rollout, per-site solar training, and the scenario benchmark.

pub mod benchmark;
pub mod cloud;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fleet;
pub mod geo;
pub mod io;
pub mod scenario;
pub mod solar;
pub mod synth;

pub use benchmark::{run_benchmark, BenchmarkOutput, PersistenceForecaster, PowerForecaster};
pub use dataset::{build_samples, daylight_origins, split_chronological, ForecastSample, Split, HISTORY, HORIZON};
pub use error::PipelineError;
pub use fleet::{extract_site_pixel, ClearSky, CloudFrame, Fleet, SiteSeries, CADENCE_MINUTES};
pub use geo::GridGeo;
pub use io::{load_fleet, save_fleet};
pub use scenario::{make_cloud_input, Scenario};
pub use solar::{Lineage, SolarBank, SolarExample};
pub use synth::{generate_fleet, Attenuation, ClassTargets, CloudConfig, SynthConfig};
