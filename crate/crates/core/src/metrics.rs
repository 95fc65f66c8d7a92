//! Point-forecast errors, persistence-referenced skill scores and sky-condition
//! classification of raw infrared pixels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty series")]
    Empty,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("pixel value {0} outside 0..=255")]
    PixelOutOfRange(i64),
}

fn paired(pred: &[f64], actual: &[f64]) -> Result<(), MetricError> {
    if pred.len() != actual.len() {
        return Err(MetricError::LengthMismatch(pred.len(), actual.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    paired(pred, actual)?;
    let sq: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    paired(pred, actual)?;
    let abs: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    Ok(abs / pred.len() as f64)
}

/// `(1 - method / persistence) * 100`.
///
/// A zero persistence error makes the ratio undefined: the score is 0 when
/// the method is also perfect, and `None` (sample excluded) otherwise.
pub fn skill_score(err_method: f64, err_persistence: f64) -> Option<f64> {
    if err_persistence == 0.0 {
        return (err_method == 0.0).then_some(0.0);
    }
    Some((1.0 - err_method / err_persistence) * 100.0)
}

/// Pixels above this raw value are high-altitude clouds.
pub const HIGH_CLOUD_THRESHOLD: u8 = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkyClass {
    Clear,
    LowCloud,
    HighCloud,
}

impl SkyClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SkyClass::Clear => "clear",
            SkyClass::LowCloud => "low_cloud",
            SkyClass::HighCloud => "high_cloud",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [SkyClass::Clear, SkyClass::LowCloud, SkyClass::HighCloud]
            .into_iter()
            .find(|c| c.as_str() == s)
    }
}

/// Classifies one raw 0–255 pixel.
pub fn classify_sky(pixel: i64) -> Result<SkyClass, MetricError> {
    match pixel {
        0 => Ok(SkyClass::Clear),
        1..=50 => Ok(SkyClass::LowCloud),
        51..=255 => Ok(SkyClass::HighCloud),
        _ => Err(MetricError::PixelOutOfRange(pixel)),
    }
}

/// Sky condition of a forecast sample from its ground-truth horizon pixels:
/// clear when every pixel is 0, high cloud when any pixel exceeds the
/// threshold, low cloud otherwise.
pub fn classify_sample(horizon_pixels: &[u8]) -> SkyClass {
    if horizon_pixels.iter().all(|&p| p == 0) {
        SkyClass::Clear
    } else if horizon_pixels.iter().any(|&p| p > HIGH_CLOUD_THRESHOLD) {
        SkyClass::HighCloud
    } else {
        SkyClass::LowCloud
    }
}

/// Reporting strata. A sample belongs to its own class, to `All`, and to
/// `CloudyAll` unless it is clear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    All,
    Clear,
    HighCloud,
    LowCloud,
    CloudyAll,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::All,
        Condition::Clear,
        Condition::HighCloud,
        Condition::LowCloud,
        Condition::CloudyAll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::All => "all",
            Condition::Clear => "clear",
            Condition::HighCloud => "high_cloud",
            Condition::LowCloud => "low_cloud",
            Condition::CloudyAll => "cloudy_all",
        }
    }

    pub fn contains(self, class: SkyClass) -> bool {
        match self {
            Condition::All => true,
            Condition::Clear => class == SkyClass::Clear,
            Condition::HighCloud => class == SkyClass::HighCloud,
            Condition::LowCloud => class == SkyClass::LowCloud,
            Condition::CloudyAll => class != SkyClass::Clear,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]), Ok(0.0));
        assert_eq!(rmse(&[3.0, 4.0], &[0.0, 0.0]), Ok(12.5f64.sqrt()));
        assert_eq!(mae(&[1.0, -3.0], &[0.0, 0.0]), Ok(2.0));
        assert_eq!(rmse(&[], &[]), Err(MetricError::Empty));
        assert_eq!(mae(&[1.0], &[]), Err(MetricError::LengthMismatch(1, 0)));
    }

    #[test]
    fn skill_examples() {
        assert_eq!(skill_score(0.4, 0.4), Some(0.0));
        assert_eq!(skill_score(0.0, 0.4), Some(100.0));
        assert_eq!(skill_score(0.75, 1.0), Some(25.0));
        assert_eq!(skill_score(0.0, 0.0), Some(0.0));
        assert_eq!(skill_score(0.1, 0.0), None);
    }

    #[test]
    fn sky_thresholds() {
        assert_eq!(classify_sky(0), Ok(SkyClass::Clear));
        assert_eq!(classify_sky(50), Ok(SkyClass::LowCloud));
        assert_eq!(classify_sky(51), Ok(SkyClass::HighCloud));
        assert!(classify_sky(256).is_err());
        assert!(classify_sky(-1).is_err());
    }

    #[test]
    fn sample_rule_matches_enumeration() {
        assert_eq!(classify_sample(&[0; 6]), SkyClass::Clear);
        assert_eq!(classify_sample(&[0, 0, 60, 0, 0, 0]), SkyClass::HighCloud);
        assert_eq!(classify_sample(&[10, 20, 0, 0, 0, 0]), SkyClass::LowCloud);
        // brute force over representative values per class
        let reps = [0u8, 1, 50, 51, 255];
        for a in reps {
            for b in reps {
                for c in reps {
                    let px = [a, b, c, 0, 0, 0];
                    let classes: Vec<SkyClass> = px.iter().map(|&p| classify_sky(p as i64).unwrap()).collect();
                    let expect = if classes.contains(&SkyClass::HighCloud) {
                        SkyClass::HighCloud
                    } else if classes.contains(&SkyClass::LowCloud) {
                        SkyClass::LowCloud
                    } else {
                        SkyClass::Clear
                    };
                    assert_eq!(classify_sample(&px), expect);
                }
            }
        }
    }

    #[test]
    fn every_pixel_has_exactly_one_class() {
        for p in 0..=255i64 {
            let c = classify_sky(p).unwrap();
            let members = [SkyClass::Clear, SkyClass::LowCloud, SkyClass::HighCloud]
                .iter()
                .filter(|&&k| k == c)
                .count();
            assert_eq!(members, 1);
            let cloudy = Condition::CloudyAll.contains(c);
            assert_eq!(cloudy, p > 0);
        }
    }
}
