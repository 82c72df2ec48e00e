use std::collections::BTreeMap;

use chrono::NaiveDate;
use ntl_change::ingest::{
    aggregate_zone, build_series, ingest_file, pixel_area_wgs84, rolling_smooth, write_pixel_csv, NtlSeries,
    PixelId, PixelRecord, Quality, UrbanZone,
};
use proptest::prelude::*;

/// Simpson integration of the ellipsoidal area element M(φ)·N(φ)·cos φ dφ dλ.
fn area_oracle(lat: f64, h: f64, w: f64) -> f64 {
    let a = 6378.137_f64;
    let f = 1.0 / 298.257223563;
    let e2 = f * (2.0 - f);
    let element = |phi: f64| {
        let s2 = phi.sin().powi(2);
        let m = a * (1.0 - e2) / (1.0 - e2 * s2).powf(1.5);
        let n = a / (1.0 - e2 * s2).sqrt();
        m * n * phi.cos()
    };
    let (lo, hi) = ((lat - h / 2.0).to_radians(), (lat + h / 2.0).to_radians());
    let steps = 20_000;
    let dx = (hi - lo) / steps as f64;
    let mut sum = element(lo) + element(hi);
    for k in 1..steps {
        sum += element(lo + k as f64 * dx) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * dx / 3.0 * w.to_radians()
}

#[test]
fn equatorial_degree_cell() {
    let area = pixel_area_wgs84(0.0, 1.0, 1.0).unwrap();
    let oracle = area_oracle(0.0, 1.0, 1.0);
    // The ellipsoid gives ~12,309 km²; the often-quoted 12,364 km² is the
    // same cell on a 6371 km sphere, about 0.45% larger.
    assert!((oracle - 12_309.0).abs() < 1.0, "oracle {oracle}");
    let sphere = 6371.0_f64.powi(2) * 1.0_f64.to_radians() * (2.0 * 0.5_f64.to_radians().sin());
    assert!((sphere - 12_364.0).abs() < 1.0, "sphere {sphere}");
    assert!((area - oracle).abs() / oracle < 1e-3, "{area} vs {oracle}");
}

#[test]
fn agrees_with_integration_across_latitudes() {
    for lat in [-80.0, -45.0, -12.5, 0.0, 18.4, 33.3, 60.0, 85.0] {
        for (h, w) in [(1.0, 1.0), (0.5, 2.0), (1.0 / 240.0, 1.0 / 240.0)] {
            let got = pixel_area_wgs84(lat, h, w).unwrap();
            let want = area_oracle(lat, h, w);
            assert!((got - want).abs() / want < 1e-3, "lat {lat} h {h}: {got} vs {want}");
        }
    }
}

fn day(i: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 3, 1).unwrap() + chrono::Duration::days(i as i64)
}

fn record(d: u32, id: &str, radiance: f64, quality: Quality) -> PixelRecord {
    PixelRecord {
        date: day(d),
        pixel_id: id.into(),
        radiance,
        latitude: 18.4,
        pixel_height_deg: 1.0 / 240.0,
        pixel_width_deg: 1.0 / 240.0,
        quality,
    }
}

#[test]
fn pixel_csv_to_smoothed_series() {
    let mut recs = Vec::new();
    for d in 0..10 {
        recs.push(record(d, "p1", 10.0 + d as f64, Quality::Good));
        let q = if d == 4 { Quality::Missing } else { Quality::GapFilled };
        recs.push(record(d, "p2", 20.0, q));
    }
    // Day 5 has no valid pixels at all.
    for r in recs.iter_mut().filter(|r| r.date == day(5)) {
        r.quality = Quality::Missing;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pixels.csv");
    write_pixel_csv(&recs, std::fs::File::create(&path).unwrap()).unwrap();

    let raw = {
        let zone = UrbanZone::from_records("sj", &recs).unwrap();
        build_series(&recs, &zone).unwrap()
    };
    assert_eq!(raw.len(), 10);
    assert_eq!(raw.gap_mask.iter().filter(|&&m| m).count(), 1);
    assert!(raw.gap_mask[5]);
    assert!((raw.values[0] - 15.0).abs() < 1e-12);
    assert!((raw.values[4] - 14.0).abs() < 1e-12);

    let smooth = ingest_file(&path, "sj", 3).unwrap();
    let direct = rolling_smooth(&raw, 3).unwrap();
    assert_eq!(smooth.gap_mask, direct.gap_mask);
    assert!(smooth.values.iter().zip(&direct.values).all(|(a, b)| a == b || (a.is_nan() && b.is_nan())));
    assert!(smooth.gap_mask[5]);
    assert!((smooth.values[6] - (raw.values[4] + raw.values[6]) / 2.0).abs() < 1e-12);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = ingest_file(std::path::Path::new("/nonexistent/x.csv"), "z", 30).unwrap_err();
    assert!(matches!(err, ntl_change::Error::Io { .. }));
}

fn series_strategy() -> impl Strategy<Value = NtlSeries> {
    prop::collection::vec(prop_oneof![9 => (0.0..500.0f64).prop_map(Some), 1 => Just(None)], 1..80)
        .prop_map(|v| {
            let values = v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect();
            NtlSeries::from_values("z", day(0), values).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn aggregation_ignores_uniform_area_scaling(
        pixels in prop::collection::vec((0.01..10.0f64, 0.0..300.0f64, any::<bool>()), 1..12),
        k in 1e-3..1e3f64,
    ) {
        let ids: Vec<String> = (0..pixels.len()).map(|i| format!("p{i}")).collect();
        let recs: Vec<PixelRecord> = pixels
            .iter()
            .zip(&ids)
            .map(|(&(_, r, missing), id)| record(0, id, r, if missing { Quality::Missing } else { Quality::Good }))
            .collect();
        let areas = |scale: f64| -> BTreeMap<PixelId, f64> {
            pixels.iter().zip(&ids).map(|(&(a, _, _), id)| (PixelId(id.clone()), a * scale)).collect()
        };
        let base = aggregate_zone(&recs, &UrbanZone::new("z", areas(1.0)).unwrap()).unwrap();
        let scaled = aggregate_zone(&recs, &UrbanZone::new("z", areas(k)).unwrap()).unwrap();
        match (base, scaled) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0)),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn single_pixel_zone_is_that_pixel(r in 0.0..1e4f64, area in 1e-6..1e4f64) {
        let zone = UrbanZone::new("z", BTreeMap::from([(PixelId::from("only"), area)])).unwrap();
        let got = aggregate_zone(&[record(0, "only", r, Quality::Good)], &zone).unwrap();
        let got = got.unwrap();
        prop_assert!((got - r).abs() <= 4.0 * f64::EPSILON * r);
    }

    #[test]
    fn window_one_is_identity(s in series_strategy()) {
        let out = rolling_smooth(&s, 1).unwrap();
        prop_assert_eq!(&out.gap_mask, &s.gap_mask);
        for (a, b) in out.values.iter().zip(&s.values).filter(|(_, b)| b.is_finite()) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn smoothing_keeps_length_and_sign(s in series_strategy(), w in 1usize..40) {
        let out = rolling_smooth(&s, w).unwrap();
        prop_assert_eq!(out.len(), s.len());
        for (v, m) in out.values.iter().zip(&out.gap_mask) {
            prop_assert!(*m || *v >= 0.0);
        }
    }

    #[test]
    fn area_shrinks_toward_the_poles(lat in 0.0..88.0f64, d in 0.01..1.0f64) {
        let near = pixel_area_wgs84(lat, 1.0, 1.0).unwrap();
        let far = pixel_area_wgs84(lat + d, 1.0, 1.0).unwrap();
        prop_assert!(far < near);
        prop_assert!(near > 0.0);
    }
}
