//! Deterministic synthetic fleets: advecting cloud blobs over a grid and PV
//! sites whose output is clear-sky potential attenuated by the pixel above.

use chrono::{Duration, NaiveDateTime};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::fleet::{ClearSky, CloudFrame, Fleet, SiteSeries, CADENCE_MINUTES};
use crate::geo::GridGeo;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Blob population and motion. Counts are mean numbers of simultaneously
/// alive blobs over the spawn area; sizes are in pixels and speeds in pixels
/// per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudConfig {
    pub low_blobs: f64,
    pub high_blobs: f64,
    pub radius: (f64, f64),
    pub lifetime: (usize, usize),
    pub speed: (f64, f64),
    pub prevailing_direction_deg: f64,
    pub direction_spread_deg: f64,
    /// Peak brightness of low clouds, within `1..=50`.
    pub low_peak: (u8, u8),
    /// Peak brightness of high clouds, within `51..=255`.
    pub high_peak: (u8, u8),
}

impl Default for CloudConfig {
    fn default() -> Self {
        CloudConfig {
            low_blobs: 5.5,
            high_blobs: 1.5,
            radius: (3.0, 6.0),
            lifetime: (18, 48),
            speed: (0.6, 1.2),
            prevailing_direction_deg: 30.0,
            direction_spread_deg: 25.0,
            low_peak: (25, 50),
            high_peak: (120, 230),
        }
    }
}

/// Transmittance coefficients, see [`Attenuation::transmittance`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Attenuation {
    pub low_depth: f64,
    pub high_top: f64,
    pub high_slope: f64,
}

impl Default for Attenuation {
    fn default() -> Self {
        Attenuation {
            low_depth: 0.9,
            high_top: 0.55,
            high_slope: 0.35,
        }
    }
}

impl Attenuation {
    /// Fraction of clear-sky output passing a cloud of raw brightness `p`:
    /// `1 - low_depth * p / 50` up to 50, then
    /// `high_top - high_slope * (p - 50) / 205`.
    pub fn transmittance(&self, p: u8) -> f64 {
        let p = f64::from(p);
        if p <= 50.0 {
            1.0 - self.low_depth * p / 50.0
        } else {
            self.high_top - self.high_slope * (p - 50.0) / 205.0
        }
    }
}

/// Expected sky-condition mix of forecast samples, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTargets {
    pub clear: f64,
    pub high_cloud: f64,
    pub low_cloud: f64,
}

impl Default for ClassTargets {
    fn default() -> Self {
        ClassTargets {
            clear: 46.57,
            high_cloud: 16.24,
            low_cloud: 37.19,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub sites: usize,
    pub height: usize,
    pub width: usize,
    pub pixel_km: f64,
    pub center_lat: f64,
    pub center_lon: f64,
    /// First frame, formatted as [`TIMESTAMP_FORMAT`].
    pub start: String,
    pub days: usize,
    pub clear_sky: ClearSky,
    pub capacity_kw: (f64, f64),
    /// Relative standard deviation of multiplicative power noise.
    pub noise_std: f64,
    pub cloud: CloudConfig,
    pub attenuation: Attenuation,
    pub class_targets: ClassTargets,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            sites: 10,
            height: 24,
            width: 24,
            pixel_km: 2.0,
            center_lat: -31.95,
            center_lon: 115.86,
            start: "2021-01-01T00:00:00".to_string(),
            days: 34,
            clear_sky: ClearSky::default(),
            capacity_kw: (3.0, 10.0),
            noise_std: 0.01,
            cloud: CloudConfig::default(),
            attenuation: Attenuation::default(),
            class_targets: ClassTargets::default(),
        }
    }
}

fn ordered<T: PartialOrd>(r: &(T, T)) -> bool {
    r.0 <= r.1
}

impl SynthConfig {
    pub fn start_time(&self) -> Result<NaiveDateTime, PipelineError> {
        NaiveDateTime::parse_from_str(&self.start, TIMESTAMP_FORMAT)
            .map_err(|e| PipelineError::Config(format!("start {:?}: {e}", self.start)))
    }

    pub fn geo(&self) -> GridGeo {
        GridGeo {
            center_lat: self.center_lat,
            center_lon: self.center_lon,
            pixel_km: self.pixel_km,
            height: self.height,
            width: self.width,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let c = &self.cloud;
        let t = &self.class_targets;
        let fail = |m: &str| Err(PipelineError::Config(m.to_string()));
        self.start_time()?;
        if self.height == 0 || self.width == 0 || self.days == 0 {
            return fail("grid and day count must be non-zero");
        }
        if self.sites == 0 || self.sites > self.height * self.width {
            return fail("site count must be between 1 and the number of pixels");
        }
        if !(self.pixel_km > 0.0) || !(self.capacity_kw.0 > 0.0) || !ordered(&self.capacity_kw) {
            return fail("pixel size and capacities must be positive");
        }
        if !(0.0..0.05).contains(&self.noise_std) {
            return fail("noise_std must lie in [0, 0.05)");
        }
        if !(self.clear_sky.sunrise_hour >= 0.0
            && self.clear_sky.sunrise_hour < self.clear_sky.sunset_hour
            && self.clear_sky.sunset_hour <= 24.0)
        {
            return fail("sunrise must precede sunset within one day");
        }
        if !(c.low_blobs >= 0.0 && c.high_blobs >= 0.0) {
            return fail("blob counts must be non-negative");
        }
        if c.low_blobs + c.high_blobs == 0.0 && t.clear < 100.0 {
            return fail("zero blobs cannot produce the targeted cloud fraction");
        }
        if !(c.radius.0 > 0.0) || !ordered(&c.radius) || c.lifetime.0 < 2 || !ordered(&c.lifetime) {
            return fail("blob radius and lifetime ranges must be positive and ordered");
        }
        if !(c.speed.0 >= 0.0) || !ordered(&c.speed) {
            return fail("speed range must be non-negative and ordered");
        }
        if c.low_peak.0 < 1 || c.low_peak.1 > 50 || !ordered(&c.low_peak) {
            return fail("low cloud peaks must lie within 1..=50");
        }
        if c.high_peak.0 < 51 || !ordered(&c.high_peak) {
            return fail("high cloud peaks must lie within 51..=255");
        }
        if ((t.clear + t.high_cloud + t.low_cloud) - 100.0).abs() > 1e-6 {
            return fail("class targets must sum to 100");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layer {
    Low,
    High,
}

#[derive(Clone, Debug)]
struct Blob {
    layer: Layer,
    row: f64,
    col: f64,
    radius: f64,
    peak: f64,
    age: usize,
    lifetime: usize,
}

impl Blob {
    /// Grows from nothing to full size and back over its lifetime.
    fn envelope(&self) -> f64 {
        (std::f64::consts::PI * self.age as f64 / self.lifetime as f64).sin().max(0.0)
    }
}

struct Sky<'a> {
    cfg: &'a SynthConfig,
    blobs: Vec<Blob>,
    wind: (f64, f64),
    low_births: Poisson<f64>,
    high_births: Poisson<f64>,
    margin: f64,
}

impl<'a> Sky<'a> {
    fn new(cfg: &'a SynthConfig) -> Self {
        let c = &cfg.cloud;
        let mean_life = (c.lifetime.0 + c.lifetime.1) as f64 / 2.0;
        let margin = c.radius.1 + c.speed.1 * mean_life / 2.0;
        let area = (cfg.height as f64 + 2.0 * margin) * (cfg.width as f64 + 2.0 * margin);
        let grid = (cfg.height * cfg.width) as f64;
        // blob counts are quoted per grid area; spawning covers the margin too
        let rate = |count: f64| Poisson::new((count * area / grid / mean_life).max(1e-12)).expect("positive rate");
        Sky {
            cfg,
            blobs: Vec::new(),
            wind: (0.0, 0.0),
            low_births: rate(c.low_blobs),
            high_births: rate(c.high_blobs),
            margin,
        }
    }

    fn draw_wind(&mut self, rng: &mut ChaCha8Rng) {
        let c = &self.cfg.cloud;
        let spread = c.direction_spread_deg;
        let dir = (c.prevailing_direction_deg + rng.gen_range(-spread..=spread)).to_radians();
        let speed = if c.speed.0 < c.speed.1 {
            rng.gen_range(c.speed.0..=c.speed.1)
        } else {
            c.speed.0
        };
        // direction is the bearing the clouds travel towards: 0 north, 90 east
        self.wind = (-speed * dir.cos(), speed * dir.sin());
    }

    fn spawn(&mut self, rng: &mut ChaCha8Rng) {
        let c = &self.cfg.cloud;
        let births = [
            (Layer::Low, self.low_births.sample(rng) as usize),
            (Layer::High, self.high_births.sample(rng) as usize),
        ];
        for (layer, n) in births {
            for _ in 0..n {
                let (lo, hi) = match layer {
                    Layer::Low => c.low_peak,
                    Layer::High => c.high_peak,
                };
                self.blobs.push(Blob {
                    layer,
                    row: rng.gen_range(-self.margin..self.cfg.height as f64 + self.margin),
                    col: rng.gen_range(-self.margin..self.cfg.width as f64 + self.margin),
                    radius: rng.gen_range(c.radius.0..=c.radius.1),
                    peak: f64::from(rng.gen_range(lo..=hi)),
                    age: 0,
                    lifetime: rng.gen_range(c.lifetime.0..=c.lifetime.1),
                });
            }
        }
    }

    fn advance(&mut self, rng: &mut ChaCha8Rng) {
        for b in &mut self.blobs {
            b.row += self.wind.0;
            b.col += self.wind.1;
            b.age += 1;
        }
        self.blobs.retain(|b| b.age < b.lifetime);
        self.spawn(rng);
    }

    fn render(&self) -> Vec<u8> {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let mut low = vec![0.0f64; h * w];
        let mut high = vec![0.0f64; h * w];
        for b in &self.blobs {
            let e = b.envelope();
            let r = b.radius * (0.3 + 0.7 * e);
            if e <= 0.0 {
                continue;
            }
            let r0 = (b.row - r).floor().max(0.0) as usize;
            let r1 = ((b.row + r).ceil().max(0.0) as usize).min(h);
            let c0 = (b.col - r).floor().max(0.0) as usize;
            let c1 = ((b.col + r).ceil().max(0.0) as usize).min(w);
            for y in r0..r1 {
                for x in c0..c1 {
                    let u2 = ((y as f64 - b.row).powi(2) + (x as f64 - b.col).powi(2)) / (r * r);
                    if u2 >= 1.0 {
                        continue;
                    }
                    let profile = (1.0 - u2) * (1.0 - u2) * e;
                    let i = y * w + x;
                    match b.layer {
                        Layer::Low => low[i] += b.peak * profile,
                        Layer::High => high[i] = high[i].max(51.0 + (b.peak - 51.0) * profile),
                    }
                }
            }
        }
        low.iter()
            .zip(&high)
            .map(|(&l, &hv)| {
                if hv > 0.0 {
                    hv.round().min(255.0) as u8
                } else {
                    l.round().min(50.0) as u8
                }
            })
            .collect()
    }
}

/// Builds frames and site series from `cfg`. Identical configurations give
/// identical fleets.
pub fn generate_fleet(cfg: &SynthConfig) -> Result<Fleet, PipelineError> {
    cfg.validate()?;
    let start = cfg.start_time()?;
    let geo = cfg.geo();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let picks = sample(&mut rng, cfg.height * cfg.width, cfg.sites);
    let mut sites = Vec::with_capacity(cfg.sites);
    for (n, cell) in picks.into_iter().enumerate() {
        let (row, col) = (cell / cfg.width, cell % cfg.width);
        let (lat, lon) = geo.pixel_to_latlon(row, col);
        let (clo, chi) = cfg.capacity_kw;
        let capacity_kw = if clo < chi { rng.gen_range(clo..=chi) } else { clo };
        sites.push(SiteSeries {
            id: format!("site_{n:02}"),
            lat,
            lon,
            capacity_kw,
            power_kw: Vec::new(),
        });
    }
    let pixels: Vec<(usize, usize)> = sites
        .iter()
        .map(|s| geo.site_to_pixel(s.lat, s.lon))
        .collect::<Result<_, _>>()?;

    let frames_per_day = (24 * 60 / CADENCE_MINUTES) as usize;
    let total = cfg.days * frames_per_day;
    let mut sky = Sky::new(cfg);
    sky.draw_wind(&mut rng);
    for _ in 0..cfg.cloud.lifetime.1 {
        sky.advance(&mut rng);
    }
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| PipelineError::Config(e.to_string()))?;

    let mut frames = Vec::with_capacity(total);
    for i in 0..total {
        if i > 0 {
            if i % frames_per_day == 0 {
                sky.draw_wind(&mut rng);
            }
            sky.advance(&mut rng);
        }
        let timestamp = start + Duration::minutes(CADENCE_MINUTES * i as i64);
        let frame = CloudFrame {
            timestamp,
            height: cfg.height,
            width: cfg.width,
            pixels: sky.render(),
        };
        let potential = cfg.clear_sky.potential(timestamp);
        for (site, &px) in sites.iter_mut().zip(&pixels) {
            let tau = cfg.attenuation.transmittance(frame.pixels[px.0 * cfg.width + px.1]);
            let jitter = if cfg.noise_std > 0.0 { 1.0 + noise.sample(&mut rng) } else { 1.0 };
            let p = site.capacity_kw * potential * tau * jitter;
            site.power_kw.push(p.clamp(0.0, 1.05 * site.capacity_kw));
        }
        frames.push(frame);
    }
    Ok(Fleet {
        geo,
        clear_sky: cfg.clear_sky,
        frames,
        sites,
    })
}
