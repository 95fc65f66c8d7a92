//! Forecast samples and chronological train/validation/test splits.

use chrono::NaiveDateTime;
use cloudcast_core::metrics::{classify_sample, SkyClass};
use cloudcast_core::solar::STEPS;
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::fleet::{extract_site_pixel, CloudFrame, Fleet};

/// Input frames and power readings per sample (`t-5 ..= t`).
pub const HISTORY: usize = 6;
/// Forecast steps per sample (`t+1 ..= t+6`).
pub const HORIZON: usize = STEPS;

/// One site at one forecast origin `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastSample {
    pub site: usize,
    /// Frame index of the last observation.
    pub t: usize,
    pub timestamp: NaiveDateTime,
    pub input_power: [f64; HISTORY],
    pub target_power: [f64; HORIZON],
    /// Raw pixel above the site at `t+1 ..= t+6`.
    pub horizon_pixels: [u8; HORIZON],
    /// Raw pixel above the site at `t`.
    pub last_pixel: u8,
}

impl ForecastSample {
    pub fn input_frames<'a>(&self, fleet: &'a Fleet) -> &'a [CloudFrame] {
        &fleet.frames[self.t + 1 - HISTORY..=self.t]
    }

    pub fn target_frames<'a>(&self, fleet: &'a Fleet) -> &'a [CloudFrame] {
        &fleet.frames[self.t + 1..=self.t + HORIZON]
    }

    pub fn sky_class(&self) -> SkyClass {
        classify_sample(&self.horizon_pixels)
    }
}

/// Forecast origins whose whole window `t-5 ..= t+6` lies in daylight.
pub fn daylight_origins(fleet: &Fleet) -> Vec<usize> {
    if fleet.len() < HISTORY + HORIZON {
        return Vec::new();
    }
    let lit: Vec<bool> = fleet
        .frames
        .iter()
        .map(|f| fleet.clear_sky.potential(f.timestamp) > 0.0)
        .collect();
    (HISTORY - 1..fleet.len() - HORIZON)
        .filter(|&t| lit[t + 1 - HISTORY..=t + HORIZON].iter().all(|&d| d))
        .collect()
}

/// Samples for every site at every origin in `origins`, site-major.
pub fn build_samples(fleet: &Fleet, origins: &[usize]) -> Result<Vec<ForecastSample>, PipelineError> {
    let mut out = Vec::with_capacity(fleet.sites.len() * origins.len());
    for (site, series) in fleet.sites.iter().enumerate() {
        let pixel = fleet.site_pixel(site)?;
        for &t in origins {
            if t + 1 < HISTORY || t + HORIZON >= fleet.len() {
                return Err(PipelineError::TooSmall(format!("origin {t} has no full window")));
            }
            let mut horizon_pixels = [0u8; HORIZON];
            for (k, p) in horizon_pixels.iter_mut().enumerate() {
                *p = extract_site_pixel(&fleet.frames[t + 1 + k], pixel)?;
            }
            out.push(ForecastSample {
                site,
                t,
                timestamp: fleet.timestamp(t),
                input_power: std::array::from_fn(|k| series.power_kw[t + 1 - HISTORY + k]),
                target_power: std::array::from_fn(|k| series.power_kw[t + 1 + k]),
                horizon_pixels,
                last_pixel: extract_site_pixel(&fleet.frames[t], pixel)?,
            });
        }
    }
    Ok(out)
}

/// Forecast origins per split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Origins dropped because their window touched the previous block.
    pub purged: Vec<usize>,
}

/// Contiguous chronological blocks sized by `ratios`. The head of the
/// validation and test blocks is purged until the first input frame comes
/// after the previous block's last target frame.
pub fn split_chronological(origins: &[usize], ratios: (f64, f64, f64)) -> Result<Split, PipelineError> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(PipelineError::Config(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    if origins.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PipelineError::Config("origins must be strictly increasing".into()));
    }
    let n = origins.len();
    let n_train = (n as f64 * a).round() as usize;
    let n_val = (n as f64 * b).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(PipelineError::TooSmall(format!("{n} origins cannot fill three blocks")));
    }
    let mut split = Split {
        train: origins[..n_train].to_vec(),
        ..Split::default()
    };
    let mut previous_end = *split.train.last().expect("non-empty");
    for (block, range) in [(1, n_train..n_train + n_val), (2, n_train + n_val..n)] {
        let mut kept = Vec::new();
        for &t in &origins[range] {
            if kept.is_empty() && t < previous_end + HORIZON + HISTORY {
                split.purged.push(t);
            } else {
                kept.push(t);
            }
        }
        let Some(&last) = kept.last() else {
            return Err(PipelineError::TooSmall("a split is empty after purging overlapping windows".into()));
        };
        previous_end = last;
        if block == 1 {
            split.val = kept;
        } else {
            split.test = kept;
        }
    }
    Ok(split)
}

/// Percentage of samples per sky class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassShares {
    pub clear: f64,
    pub high_cloud: f64,
    pub low_cloud: f64,
    pub samples: usize,
}

pub fn class_shares(samples: &[ForecastSample]) -> ClassShares {
    let n = samples.len();
    let pct = |c: SkyClass| 100.0 * samples.iter().filter(|s| s.sky_class() == c).count() as f64 / n.max(1) as f64;
    ClassShares {
        clear: pct(SkyClass::Clear),
        high_cloud: pct(SkyClass::HighCloud),
        low_cloud: pct(SkyClass::LowCloud),
        samples: n,
    }
}
