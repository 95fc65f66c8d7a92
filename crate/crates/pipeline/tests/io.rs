use std::fs;

use cloudcast_pipeline::io::{decode_pgm, encode_pgm, load_manifest, FRAMES_DIR, MANIFEST_FILE, POWER_FILE};
use cloudcast_pipeline::*;

fn fleet() -> Fleet {
    generate_fleet(&SynthConfig {
        days: 1,
        sites: 3,
        height: 8,
        width: 10,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn read_all(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((entry.strip_prefix(dir).unwrap().display().to_string(), fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn save_load_round_trip_is_exact() {
    let f = fleet();
    let dir = tempfile::tempdir().unwrap();
    let written = save_fleet(&f, dir.path()).unwrap();
    assert_eq!(written.len(), f.len() + 2);
    let loaded = load_fleet(dir.path()).unwrap();
    assert_eq!(loaded.geo, f.geo);
    assert_eq!(loaded.frames, f.frames);
    for (a, b) in loaded.sites.iter().zip(&f.sites) {
        assert_eq!((&a.id, a.lat, a.lon, a.capacity_kw), (&b.id, b.lat, b.lon, b.capacity_kw));
        assert_eq!(a.power_kw, b.power_kw);
    }
    assert_eq!(loaded, f);

    let again = tempfile::tempdir().unwrap();
    save_fleet(&loaded, again.path()).unwrap();
    assert_eq!(read_all(dir.path()), read_all(again.path()));
}

#[test]
fn pgm_header_layout() {
    let f = &fleet().frames[0];
    let bytes = encode_pgm(f);
    assert!(bytes.starts_with(b"P5\n10 8\n255\n"));
    assert_eq!(bytes.len(), 12 + 80);
    let path = std::path::Path::new("x.pgm");
    assert_eq!(decode_pgm(path, &bytes, f.timestamp).unwrap(), *f);
}

#[test]
fn pgm_comments_are_skipped() {
    let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
    bytes.extend([7, 9]);
    let ts = fleet().frames[0].timestamp;
    let f = decode_pgm(std::path::Path::new("c.pgm"), &bytes, ts).unwrap();
    assert_eq!((f.width, f.height, f.pixels), (2, 1, vec![7, 9]));
}

#[test]
fn truncated_pgm_names_file_and_offset() {
    let f = fleet();
    let dir = tempfile::tempdir().unwrap();
    save_fleet(&f, dir.path()).unwrap();
    let victim = walk(&dir.path().join(FRAMES_DIR)).into_iter().min().unwrap();
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 5]).unwrap();
    match load_fleet(dir.path()) {
        Err(PipelineError::Parse { path, offset, .. }) => {
            assert_eq!(path, victim);
            assert_eq!(offset as usize, bytes.len() - 5);
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn bad_magic_and_maxval() {
    let p = std::path::Path::new("m.pgm");
    let ts = fleet().frames[0].timestamp;
    match decode_pgm(p, b"P2\n1 1\n255\n\0", ts) {
        Err(PipelineError::Parse { offset: 0, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        decode_pgm(p, b"P5\n1 1\n65535\n\0\0", ts),
        Err(PipelineError::Parse { .. })
    ));
    match decode_pgm(p, b"P5\n1 x\n255\n\0", ts) {
        Err(PipelineError::Parse { offset: 5, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_frame_is_a_manifest_error() {
    let f = fleet();
    let dir = tempfile::tempdir().unwrap();
    save_fleet(&f, dir.path()).unwrap();
    let victim = walk(&dir.path().join(FRAMES_DIR)).into_iter().max().unwrap();
    fs::remove_file(victim).unwrap();
    assert!(matches!(load_fleet(dir.path()), Err(PipelineError::Manifest(_))));
}

#[test]
fn corrupt_power_row_reports_offset() {
    let f = fleet();
    let dir = tempfile::tempdir().unwrap();
    save_fleet(&f, dir.path()).unwrap();
    let path = dir.path().join(POWER_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let header_len = text.find('\n').unwrap() + 1;
    let first_row_len = text[header_len..].find('\n').unwrap() + 1;
    let mut lines: Vec<&str> = text.lines().collect();
    let bad = lines[2].replacen(|c: char| c.is_ascii_digit(), "q", 1);
    let bad = format!("{},{},oops", bad.split(',').next().unwrap(), lines[2].split(',').nth(1).unwrap());
    lines[2] = &bad;
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    match load_fleet(dir.path()) {
        Err(PipelineError::Parse { path: p, offset, .. }) => {
            assert_eq!(p, path);
            assert_eq!(offset as usize, header_len + first_row_len);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_fleet(dir.path()), Err(PipelineError::Io { .. })));
    fs::write(dir.path().join(MANIFEST_FILE), "{\n  \"format\": 3\n}\n").unwrap();
    match load_manifest(dir.path()) {
        Err(PipelineError::Parse { offset, .. }) => assert!(offset > 0),
        other => panic!("{other:?}"),
    }
    let f = fleet();
    save_fleet(&f, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 9");
    fs::write(&path, text).unwrap();
    assert!(matches!(load_fleet(dir.path()), Err(PipelineError::Manifest(_))));
}
