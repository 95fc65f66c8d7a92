//! Forecasting-stage scenarios: where the solar nets get their horizon
//! cloud pixels from at test time.

use std::fmt;

use crate::cloud::CloudForecasts;
use crate::dataset::{ForecastSample, HORIZON};
use crate::error::PipelineError;
use crate::fleet::{extract_site_pixel, Fleet};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    /// True pixels above the site over the forecast hour.
    GroundTruthClouds,
    /// Pixels extracted from a cloud model's rollout, keyed by model id.
    ForecastedClouds(String),
    /// The pixel at `t` repeated over the hour.
    PersistenceClouds,
    /// Past power only.
    NoClouds,
}

impl Scenario {
    pub fn forecasted(model_id: impl Into<String>) -> Self {
        Scenario::ForecastedClouds(model_id.into())
    }

    /// Report label, e.g. `forecasted_clouds:convlstm`.
    pub fn name(&self) -> String {
        match self {
            Scenario::GroundTruthClouds => "ground_truth_clouds".into(),
            Scenario::ForecastedClouds(id) => format!("forecasted_clouds:{id}"),
            Scenario::PersistenceClouds => "persistence_clouds".into(),
            Scenario::NoClouds => "no_clouds".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        match s {
            "ground_truth_clouds" => Ok(Scenario::GroundTruthClouds),
            "persistence_clouds" => Ok(Scenario::PersistenceClouds),
            "no_clouds" => Ok(Scenario::NoClouds),
            _ => match s.strip_prefix("forecasted_clouds:") {
                Some(id) if !id.is_empty() => Ok(Scenario::forecasted(id)),
                _ => Err(PipelineError::Config(format!(
                    "unknown scenario {s:?}; expected ground_truth_clouds, forecasted_clouds:<model>, \
                     persistence_clouds or no_clouds"
                ))),
            },
        }
    }

    pub fn uses_clouds(&self) -> bool {
        !matches!(self, Scenario::NoClouds)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Horizon cloud pixels for `sample` under `scenario`, or `None` for
/// [`Scenario::NoClouds`]. Forecasted scenarios look the sample's origin up
/// in `forecasts`, whose model id must match.
pub fn make_cloud_input(
    scenario: &Scenario,
    sample: &ForecastSample,
    fleet: &Fleet,
    forecasts: Option<&CloudForecasts>,
) -> Result<Option<[u8; HORIZON]>, PipelineError> {
    match scenario {
        Scenario::GroundTruthClouds => Ok(Some(sample.horizon_pixels)),
        Scenario::PersistenceClouds => Ok(Some([sample.last_pixel; HORIZON])),
        Scenario::NoClouds => Ok(None),
        Scenario::ForecastedClouds(id) => {
            let forecasts = forecasts
                .filter(|f| f.model_id == *id)
                .ok_or_else(|| PipelineError::MissingCheckpoint(format!("cloud model {id:?}")))?;
            let frames = forecasts.frames.get(&sample.t).ok_or_else(|| {
                PipelineError::MissingCheckpoint(format!("cloud model {id:?} has no rollout from origin {}", sample.t))
            })?;
            if frames.len() != HORIZON {
                return Err(PipelineError::Config(format!(
                    "rollout from origin {} holds {} frames",
                    sample.t,
                    frames.len()
                )));
            }
            let pixel = fleet.site_pixel(sample.site)?;
            let mut out = [0u8; HORIZON];
            for (o, frame) in out.iter_mut().zip(frames) {
                *o = extract_site_pixel(frame, pixel)?;
            }
            Ok(Some(out))
        }
    }
}
