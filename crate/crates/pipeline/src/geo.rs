//! Mapping between site coordinates and satellite grid pixels.

use serde::{Deserialize, Serialize};

use crate::error::PipelineError;

/// Kilometres per degree of latitude on a spherical Earth.
pub const KM_PER_DEGREE: f64 = 6371.0 * std::f64::consts::PI / 180.0;

/// Footprint of the cloud grid. Pixel `(height / 2, width / 2)` is centred
/// on `(center_lat, center_lon)`; rows run southward, columns eastward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeo {
    pub center_lat: f64,
    pub center_lon: f64,
    pub pixel_km: f64,
    pub height: usize,
    pub width: usize,
}

impl GridGeo {
    fn km_per_degree_lon(&self) -> f64 {
        KM_PER_DEGREE * self.center_lat.to_radians().cos()
    }

    /// Nearest pixel under an equirectangular projection.
    pub fn site_to_pixel(&self, lat: f64, lon: f64) -> Result<(usize, usize), PipelineError> {
        let south_km = (self.center_lat - lat) * KM_PER_DEGREE;
        let east_km = (lon - self.center_lon) * self.km_per_degree_lon();
        let row = (self.height / 2) as f64 + south_km / self.pixel_km;
        let col = (self.width / 2) as f64 + east_km / self.pixel_km;
        let (r, c) = (row.round(), col.round());
        if !(r >= 0.0 && c >= 0.0 && r < self.height as f64 && c < self.width as f64) {
            return Err(PipelineError::OutsideFootprint { lat, lon });
        }
        Ok((r as usize, c as usize))
    }

    /// Coordinates of a pixel centre.
    pub fn pixel_to_latlon(&self, row: usize, col: usize) -> (f64, f64) {
        let south_km = (row as f64 - (self.height / 2) as f64) * self.pixel_km;
        let east_km = (col as f64 - (self.width / 2) as f64) * self.pixel_km;
        (
            self.center_lat - south_km / KM_PER_DEGREE,
            self.center_lon + east_km / self.km_per_degree_lon(),
        )
    }
}
