//! On-disk fleet layout:
//!
//! ```text
//! <dir>/manifest.json              grid geometry, clear-sky model, sites, frame count
//! <dir>/frames/YYYYMMDDTHHMMSS.pgm binary 8-bit PGM (P5), one per frame
//! <dir>/power.csv                  timestamp,site,kw; frame-major, sites in manifest order
//! ```
//!
//! PGM headers are written as `P5\n<width> <height>\n255\n`. Power values use
//! the shortest decimal form that parses back to the same `f64`, so a
//! save/load/save cycle reproduces every byte.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::fleet::{ClearSky, CloudFrame, Fleet, SiteSeries, CADENCE_MINUTES};
use crate::geo::GridGeo;
use crate::synth::TIMESTAMP_FORMAT;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRAMES_DIR: &str = "frames";
pub const POWER_FILE: &str = "power.csv";
pub const FORMAT_NAME: &str = "cloudcast-fleet";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteEntry {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub capacity_kw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub geo: GridGeo,
    pub clear_sky: ClearSky,
    pub cadence_minutes: i64,
    pub start: String,
    pub frame_count: usize,
    pub sites: Vec<SiteEntry>,
}

pub fn frame_file_name(t: NaiveDateTime) -> String {
    format!("{}.pgm", t.format("%Y%m%dT%H%M%S"))
}

pub fn encode_pgm(frame: &CloudFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    out
}

/// Parses a binary PGM with maxval 255; comments in the header are allowed.
pub fn decode_pgm(path: &Path, bytes: &[u8], timestamp: NaiveDateTime) -> Result<CloudFrame, PipelineError> {
    let mut pos = 0usize;
    let err = |at: usize, m: &str| PipelineError::parse(path, at as u64, m);
    if bytes.get(..2) != Some(b"P5") {
        return Err(err(0, "missing P5 magic"));
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for (n, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][n];
            return Err(err(pos, &format!("expected {what}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, "header number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(err(pos, &format!("maxval {maxval}, expected 255")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err(pos, "expected whitespace after header"));
    }
    pos += 1;
    let expected = width * height;
    let available = bytes.len() - pos;
    if available != expected {
        return Err(err(
            bytes.len(),
            &format!("pixel data holds {available} bytes, expected {expected}"),
        ));
    }
    Ok(CloudFrame {
        timestamp,
        height,
        width,
        pixels: bytes[pos..].to_vec(),
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn power_csv(fleet: &Fleet) -> String {
    let mut out = String::from("timestamp,site,kw\n");
    for (i, f) in fleet.frames.iter().enumerate() {
        let ts = f.timestamp.format(TIMESTAMP_FORMAT).to_string();
        for s in &fleet.sites {
            out.push_str(&format!("{ts},{},{}\n", s.id, s.power_kw[i]));
        }
    }
    out
}

pub fn manifest_of(fleet: &Fleet) -> Result<Manifest, PipelineError> {
    let first = fleet
        .frames
        .first()
        .ok_or_else(|| PipelineError::TooSmall("fleet has no frames".into()))?;
    Ok(Manifest {
        format: FORMAT_NAME.to_string(),
        version: 1,
        geo: fleet.geo.clone(),
        clear_sky: fleet.clear_sky,
        cadence_minutes: CADENCE_MINUTES,
        start: first.timestamp.format(TIMESTAMP_FORMAT).to_string(),
        frame_count: fleet.frames.len(),
        sites: fleet
            .sites
            .iter()
            .map(|s| SiteEntry {
                id: s.id.clone(),
                lat: s.lat,
                lon: s.lon,
                capacity_kw: s.capacity_kw,
            })
            .collect(),
    })
}

/// Writes the fleet under `dir`, creating it if needed. Returns every file written.
pub fn save_fleet(fleet: &Fleet, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    fleet.validate()?;
    let frames_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(|e| PipelineError::io(&frames_dir, e))?;
    let manifest = manifest_of(fleet)?;
    let mut written = Vec::with_capacity(fleet.frames.len() + 2);
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write(&manifest_path, json.as_bytes())?;
    written.push(manifest_path);
    for f in &fleet.frames {
        let path = frames_dir.join(frame_file_name(f.timestamp));
        write(&path, &encode_pgm(f))?;
        written.push(path);
    }
    let power_path = dir.join(POWER_FILE);
    write(&power_path, power_csv(fleet).as_bytes())?;
    written.push(power_path);
    Ok(written)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, PipelineError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        let offset = text
            .split_inclusive('\n')
            .take(e.line().saturating_sub(1))
            .map(str::len)
            .sum::<usize>()
            + e.column().saturating_sub(1);
        PipelineError::parse(&path, offset as u64, e.to_string())
    })?;
    if manifest.format != FORMAT_NAME || manifest.version != 1 {
        return Err(PipelineError::Manifest(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    if manifest.cadence_minutes != CADENCE_MINUTES {
        return Err(PipelineError::Manifest(format!(
            "cadence {} minutes, expected {CADENCE_MINUTES}",
            manifest.cadence_minutes
        )));
    }
    Ok(manifest)
}

pub fn load_fleet(dir: &Path) -> Result<Fleet, PipelineError> {
    let manifest = load_manifest(dir)?;
    let start = NaiveDateTime::parse_from_str(&manifest.start, TIMESTAMP_FORMAT)
        .map_err(|e| PipelineError::Manifest(format!("start {:?}: {e}", manifest.start)))?;
    let frames_dir = dir.join(FRAMES_DIR);
    let on_disk = fs::read_dir(&frames_dir)
        .map_err(|e| PipelineError::io(&frames_dir, e))?
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.path().extension().is_some_and(|x| x == "pgm"))
        .count();
    if on_disk != manifest.frame_count {
        return Err(PipelineError::Manifest(format!(
            "{} frames on disk, manifest lists {}",
            on_disk, manifest.frame_count
        )));
    }
    let frames: Vec<CloudFrame> = (0..manifest.frame_count)
        .into_par_iter()
        .map(|i| {
            let ts = start + Duration::minutes(CADENCE_MINUTES * i as i64);
            let path = frames_dir.join(frame_file_name(ts));
            let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
            let frame = decode_pgm(&path, &bytes, ts)?;
            if frame.height != manifest.geo.height || frame.width != manifest.geo.width {
                return Err(PipelineError::Manifest(format!(
                    "{} is {}x{}, grid is {}x{}",
                    path.display(),
                    frame.height,
                    frame.width,
                    manifest.geo.height,
                    manifest.geo.width
                )));
            }
            Ok(frame)
        })
        .collect::<Result<_, _>>()?;

    let mut sites: Vec<SiteSeries> = manifest
        .sites
        .iter()
        .map(|s| SiteSeries {
            id: s.id.clone(),
            lat: s.lat,
            lon: s.lon,
            capacity_kw: s.capacity_kw,
            power_kw: Vec::with_capacity(frames.len()),
        })
        .collect();
    read_power(&dir.join(POWER_FILE), &frames, &mut sites)?;

    let fleet = Fleet {
        geo: manifest.geo,
        clear_sky: manifest.clear_sky,
        frames,
        sites,
    };
    fleet.validate()?;
    Ok(fleet)
}

fn read_power(path: &Path, frames: &[CloudFrame], sites: &mut [SiteSeries]) -> Result<(), PipelineError> {
    let file = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let header = reader
        .headers()
        .map_err(|e| PipelineError::parse(path, 0, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["timestamp", "site", "kw"] {
        return Err(PipelineError::parse(path, 0, "header must be timestamp,site,kw"));
    }
    let n_sites = sites.len();
    let mut record = csv::StringRecord::new();
    let mut k = 0usize;
    loop {
        let offset = reader.position().byte();
        let more = reader
            .read_record(&mut record)
            .map_err(|e| PipelineError::parse(path, offset, e.to_string()))?;
        if !more {
            break;
        }
        let (frame, site) = (k / n_sites.max(1), k % n_sites.max(1));
        let Some(expected) = frames.get(frame) else {
            return Err(PipelineError::parse(path, offset, "more rows than frames x sites"));
        };
        let ts = NaiveDateTime::parse_from_str(&record[0], TIMESTAMP_FORMAT)
            .map_err(|e| PipelineError::parse(path, offset, format!("timestamp {:?}: {e}", &record[0])))?;
        if ts != expected.timestamp || record[1] != *sites[site].id {
            return Err(PipelineError::parse(
                path,
                offset,
                format!(
                    "expected {} / {}",
                    expected.timestamp.format(TIMESTAMP_FORMAT),
                    sites[site].id
                ),
            ));
        }
        let kw: f64 = record[2]
            .parse()
            .map_err(|_| PipelineError::parse(path, offset, format!("bad power value {:?}", &record[2])))?;
        sites[site].power_kw.push(kw);
        k += 1;
    }
    if k != frames.len() * n_sites {
        return Err(PipelineError::parse(
            path,
            reader.position().byte(),
            format!("{k} rows, expected {}", frames.len() * n_sites),
        ));
    }
    Ok(())
}
