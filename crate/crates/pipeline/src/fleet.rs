//! In-memory fleet: a cloud-frame sequence and the PV sites beneath it.

use chrono::{Duration, NaiveDateTime, Timelike};
use cloudcast_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::geo::GridGeo;

/// Minutes between consecutive frames and power readings.
pub const CADENCE_MINUTES: i64 = 10;

/// One infrared frame of raw 0..=255 pixels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CloudFrame {
    pub timestamp: NaiveDateTime,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl CloudFrame {
    pub fn get(&self, row: usize, col: usize) -> Result<u8, PipelineError> {
        if row >= self.height || col >= self.width {
            return Err(PipelineError::PixelOutOfBounds {
                row,
                col,
                height: self.height,
                width: self.width,
            });
        }
        Ok(self.pixels[row * self.width + col])
    }

    /// `[1, H, W]` tensor scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f64> {
        let data = self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        Tensor::new(vec![1, self.height, self.width], data).expect("frame dimensions agree")
    }

    /// Inverse of [`CloudFrame::to_tensor`], rounding to the nearest level.
    pub fn from_tensor(timestamp: NaiveDateTime, t: &Tensor<f64>) -> Result<Self, PipelineError> {
        let &[1, height, width] = t.shape() else {
            return Err(PipelineError::Config(format!("frame tensor {:?} is not [1, H, W]", t.shape())));
        };
        let pixels = t.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        Ok(CloudFrame {
            timestamp,
            height,
            width,
            pixels,
        })
    }
}

/// Value of `frame` directly above a site mapped to `(row, col)`.
pub fn extract_site_pixel(frame: &CloudFrame, pixel: (usize, usize)) -> Result<u8, PipelineError> {
    frame.get(pixel.0, pixel.1)
}

/// Half-sine daylight envelope, identical every day.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClearSky {
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
}

impl Default for ClearSky {
    fn default() -> Self {
        ClearSky {
            sunrise_hour: 6.0,
            sunset_hour: 18.0,
        }
    }
}

impl ClearSky {
    /// Fraction of nameplate capacity reachable under a clear sky.
    pub fn potential(&self, t: NaiveDateTime) -> f64 {
        let hour = f64::from(t.hour()) + f64::from(t.minute()) / 60.0 + f64::from(t.second()) / 3600.0;
        if hour <= self.sunrise_hour || hour >= self.sunset_hour {
            return 0.0;
        }
        (std::f64::consts::PI * (hour - self.sunrise_hour) / (self.sunset_hour - self.sunrise_hour)).sin()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiteSeries {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub capacity_kw: f64,
    /// One reading per frame.
    pub power_kw: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fleet {
    pub geo: GridGeo,
    pub clear_sky: ClearSky,
    pub frames: Vec<CloudFrame>,
    pub sites: Vec<SiteSeries>,
}

impl Fleet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        self.frames[index].timestamp
    }

    pub fn site_pixel(&self, site: usize) -> Result<(usize, usize), PipelineError> {
        let s = &self.sites[site];
        self.geo.site_to_pixel(s.lat, s.lon)
    }

    /// Checks cadence, frame geometry, series lengths and power bounds.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let step = Duration::minutes(CADENCE_MINUTES);
        for (i, f) in self.frames.iter().enumerate() {
            if f.height != self.geo.height || f.width != self.geo.width || f.pixels.len() != f.height * f.width {
                return Err(PipelineError::Manifest(format!("frame {i} does not match the grid")));
            }
            if i > 0 && f.timestamp - self.frames[i - 1].timestamp != step {
                return Err(PipelineError::Manifest(format!("frame {i} breaks the {CADENCE_MINUTES}-minute cadence")));
            }
        }
        for s in &self.sites {
            if s.power_kw.len() != self.frames.len() {
                return Err(PipelineError::Manifest(format!(
                    "site {} has {} readings for {} frames",
                    s.id,
                    s.power_kw.len(),
                    self.frames.len()
                )));
            }
            if !(s.capacity_kw > 0.0) || s.power_kw.iter().any(|&p| !(0.0..=1.05 * s.capacity_kw).contains(&p)) {
                return Err(PipelineError::Manifest(format!("site {} power outside [0, 1.05 capacity]", s.id)));
            }
        }
        for i in 0..self.sites.len() {
            self.site_pixel(i)?;
        }
        Ok(())
    }
}
