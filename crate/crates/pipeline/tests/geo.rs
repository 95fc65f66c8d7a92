use chrono::NaiveDate;
use cloudcast_pipeline::geo::KM_PER_DEGREE;
use cloudcast_pipeline::{extract_site_pixel, CloudFrame, GridGeo, PipelineError};

fn grid(height: usize, width: usize) -> GridGeo {
    GridGeo {
        center_lat: -31.95,
        center_lon: 115.86,
        pixel_km: 2.0,
        height,
        width,
    }
}

fn frame(height: usize, width: usize, pixels: Vec<u8>) -> CloudFrame {
    CloudFrame {
        timestamp: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap().and_hms_opt(12, 0, 0).unwrap(),
        height,
        width,
        pixels,
    }
}

#[test]
fn center_maps_to_half_extent() {
    let g = grid(60, 60);
    assert_eq!(g.site_to_pixel(g.center_lat, g.center_lon).unwrap(), (30, 30));
    let g = grid(24, 24);
    assert_eq!(g.site_to_pixel(g.center_lat, g.center_lon).unwrap(), (12, 12));
}

#[test]
fn one_pitch_east_is_next_column() {
    let g = grid(24, 24);
    let dlon = g.pixel_km / (KM_PER_DEGREE * g.center_lat.to_radians().cos());
    assert_eq!(g.site_to_pixel(g.center_lat, g.center_lon + dlon).unwrap(), (12, 13));
    let dlat = g.pixel_km / KM_PER_DEGREE;
    assert_eq!(g.site_to_pixel(g.center_lat - dlat, g.center_lon).unwrap(), (13, 12));
    assert_eq!(g.site_to_pixel(g.center_lat + dlat, g.center_lon).unwrap(), (11, 12));
}

#[test]
fn pixel_round_trip_covers_every_cell() {
    for (h, w) in [(24, 24), (7, 11), (1, 1)] {
        let g = grid(h, w);
        for r in 0..h {
            for c in 0..w {
                let (lat, lon) = g.pixel_to_latlon(r, c);
                assert_eq!(g.site_to_pixel(lat, lon).unwrap(), (r, c));
            }
        }
    }
}

#[test]
fn outside_footprint_is_an_error() {
    let g = grid(24, 24);
    let far = g.center_lon + 2.0;
    assert!(matches!(
        g.site_to_pixel(g.center_lat, far),
        Err(PipelineError::OutsideFootprint { .. })
    ));
    assert!(g.site_to_pixel(g.center_lat + 1.0, g.center_lon).is_err());
    assert!(g.site_to_pixel(f64::NAN, g.center_lon).is_err());
}

#[test]
fn extract_reads_the_site_pixel() {
    let f = frame(60, 60, vec![0; 3600]);
    assert_eq!(extract_site_pixel(&f, (30, 30)).unwrap(), 0);
    let mut pixels = vec![0; 3600];
    pixels[30 * 60 + 30] = 173;
    let f = frame(60, 60, pixels);
    assert_eq!(extract_site_pixel(&f, (30, 30)).unwrap(), 173);
    assert_eq!(extract_site_pixel(&f, (30, 31)).unwrap(), 0);
}

#[test]
fn extract_out_of_bounds_fails() {
    let f = frame(4, 5, vec![1; 20]);
    assert!(matches!(
        extract_site_pixel(&f, (4, 0)),
        Err(PipelineError::PixelOutOfBounds { row: 4, col: 0, height: 4, width: 5 })
    ));
    assert!(extract_site_pixel(&f, (0, 5)).is_err());
}

#[test]
fn frame_tensor_round_trip() {
    let pixels: Vec<u8> = (0..=255).collect();
    let f = frame(16, 16, pixels);
    let t = f.to_tensor();
    assert_eq!(t.shape(), &[1, 16, 16]);
    assert_eq!(CloudFrame::from_tensor(f.timestamp, &t).unwrap(), f);
}
