//! Pixel records → area-weighted, smoothed zone series.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// WGS84 semi-major axis, km.
pub const WGS84_A: f64 = 6378.137;
/// WGS84 inverse flattening.
pub const WGS84_INV_F: f64 = 298.257_223_563;

pub const DEFAULT_SMOOTHING_WINDOW: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PixelId(pub String);

impl fmt::Display for PixelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PixelId {
    fn from(s: &str) -> Self {
        PixelId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Good,
    #[serde(rename = "gapfilled")]
    GapFilled,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelRecord {
    pub date: NaiveDate,
    pub pixel_id: PixelId,
    /// nW·cm⁻²·sr⁻¹
    pub radiance: f64,
    pub latitude: f64,
    pub pixel_height_deg: f64,
    pub pixel_width_deg: f64,
    #[serde(rename = "quality")]
    pub quality: Quality,
}

impl PixelRecord {
    pub fn validate(&self) -> Result<()> {
        if self.quality != Quality::Missing && !(self.radiance >= 0.0 && self.radiance.is_finite()) {
            return Err(Error::Validation(format!(
                "pixel {} on {}: radiance {} must be finite and non-negative",
                self.pixel_id, self.date, self.radiance
            )));
        }
        if !(self.latitude.abs() <= 90.0) {
            return Err(Error::Validation(format!("latitude {} outside [-90, 90]", self.latitude)));
        }
        if !(self.pixel_height_deg > 0.0 && self.pixel_width_deg > 0.0) {
            return Err(Error::Validation(format!(
                "pixel {} has non-positive extent {} x {}",
                self.pixel_id, self.pixel_height_deg, self.pixel_width_deg
            )));
        }
        Ok(())
    }
}

/// A fixed set of pixels with their areas in km².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrbanZone {
    pub zone_id: String,
    pixel_areas: BTreeMap<PixelId, f64>,
}

impl UrbanZone {
    pub fn new(zone_id: impl Into<String>, pixel_areas: BTreeMap<PixelId, f64>) -> Result<Self> {
        if pixel_areas.is_empty() {
            return Err(Error::Validation("zone has no pixels".into()));
        }
        if let Some((id, a)) = pixel_areas.iter().find(|(_, a)| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::Validation(format!("pixel {id} has non-positive area {a}")));
        }
        Ok(UrbanZone {
            zone_id: zone_id.into(),
            pixel_areas,
        })
    }

    /// Builds the zone from the distinct pixels in `records`, computing each
    /// area from its footprint. A pixel whose footprint changes between rows is rejected.
    pub fn from_records(zone_id: impl Into<String>, records: &[PixelRecord]) -> Result<Self> {
        let mut geometry: HashMap<&PixelId, (f64, f64, f64)> = HashMap::new();
        let mut areas = BTreeMap::new();
        for r in records {
            let g = (r.latitude, r.pixel_height_deg, r.pixel_width_deg);
            match geometry.get(&r.pixel_id) {
                Some(prev) if *prev != g => {
                    return Err(Error::Input(format!(
                        "pixel {} changes footprint on {}",
                        r.pixel_id, r.date
                    )))
                }
                Some(_) => {}
                None => {
                    geometry.insert(&r.pixel_id, g);
                    areas.insert(r.pixel_id.clone(), pixel_area_wgs84(g.0, g.1, g.2)?);
                }
            }
        }
        UrbanZone::new(zone_id, areas)
    }

    pub fn area(&self, pixel: &PixelId) -> Option<f64> {
        self.pixel_areas.get(pixel).copied()
    }

    pub fn pixel_ids(&self) -> impl Iterator<Item = &PixelId> {
        self.pixel_areas.keys()
    }

    pub fn len(&self) -> usize {
        self.pixel_areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_areas.is_empty()
    }
}

/// Daily-contiguous radiance series. Masked days hold `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NtlSeries {
    pub zone_id: String,
    pub start_date: NaiveDate,
    pub values: Vec<f64>,
    pub gap_mask: Vec<bool>,
}

impl NtlSeries {
    /// Series from observed values; non-finite entries become masked days.
    pub fn from_values(zone_id: impl Into<String>, start_date: NaiveDate, values: Vec<f64>) -> Result<Self> {
        let gap_mask = values.iter().map(|v| !v.is_finite()).collect();
        NtlSeries::new(zone_id, start_date, values, gap_mask)
    }

    pub fn new(
        zone_id: impl Into<String>,
        start_date: NaiveDate,
        mut values: Vec<f64>,
        gap_mask: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != gap_mask.len() {
            return Err(Error::shape(values.len(), gap_mask.len()));
        }
        for (i, (v, &m)) in values.iter_mut().zip(&gap_mask).enumerate() {
            if m {
                *v = f64::NAN;
            } else if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Validation(format!(
                    "day {i}: unmasked radiance {v} must be finite and non-negative"
                )));
            }
        }
        Ok(NtlSeries {
            zone_id: zone_id.into(),
            start_date,
            values,
            gap_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn date(&self, i: usize) -> NaiveDate {
        self.start_date + Duration::days(i as i64)
    }

    /// Index of `date`, if it falls inside the series.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start_date).num_days();
        (d >= 0 && (d as usize) < self.len()).then_some(d as usize)
    }

    /// The first `n` days (all of them if the series is shorter).
    pub fn head(&self, n: usize) -> NtlSeries {
        let n = n.min(self.len());
        NtlSeries {
            zone_id: self.zone_id.clone(),
            start_date: self.start_date,
            values: self.values[..n].to_vec(),
            gap_mask: self.gap_mask[..n].to_vec(),
        }
    }

    pub fn masked_days(&self) -> usize {
        self.gap_mask.iter().filter(|&&m| m).count()
    }
}

/// Area of the latitude–longitude cell centred on `latitude` on the WGS84
/// ellipsoid, in km², via the authalic zone-band formula.
pub fn pixel_area_wgs84(latitude: f64, height_deg: f64, width_deg: f64) -> Result<f64> {
    if !(latitude.is_finite() && height_deg >= 0.0 && width_deg >= 0.0) {
        return Err(Error::Domain(format!(
            "cell ({latitude}, {height_deg}, {width_deg}) is not a valid footprint"
        )));
    }
    if latitude.abs() + height_deg / 2.0 > 90.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "cell centred at {latitude}° with height {height_deg}° crosses a pole"
        )));
    }
    let f = 1.0 / WGS84_INV_F;
    let b = WGS84_A * (1.0 - f);
    let e2 = f * (2.0 - f);
    let e = e2.sqrt();
    // Twice the authalic band function, so that area = Δλ · b²/2 · Δq.
    let q = |phi: f64| {
        let s = phi.sin();
        s / (1.0 - e2 * s * s) + ((1.0 + e * s) / (1.0 - e * s)).ln() / (2.0 * e)
    };
    let lo = (latitude - height_deg / 2.0).max(-90.0).to_radians();
    let hi = (latitude + height_deg / 2.0).min(90.0).to_radians();
    Ok(width_deg.to_radians() * b * b / 2.0 * (q(hi) - q(lo)))
}

/// Area-weighted mean radiance of one day's records; `None` when every pixel is missing.
pub fn aggregate_zone(records: &[PixelRecord], zone: &UrbanZone) -> Result<Option<f64>> {
    if let Some(first) = records.first() {
        if let Some(r) = records.iter().find(|r| r.date != first.date) {
            return Err(Error::Input(format!(
                "records span several dates ({} and {})",
                first.date, r.date
            )));
        }
    }
    let mut weighted = 0.0;
    let mut total = 0.0;
    for r in records {
        let area = zone.area(&r.pixel_id).ok_or_else(|| {
            Error::Input(format!("pixel {} is not part of zone {}", r.pixel_id, zone.zone_id))
        })?;
        if r.quality == Quality::Missing {
            continue;
        }
        weighted += area * r.radiance;
        total += area;
    }
    Ok((total > 0.0).then(|| weighted / total))
}

/// Aggregates pixel records day by day from the first to the last date present.
/// Days without any valid pixel are masked.
pub fn build_series(records: &[PixelRecord], zone: &UrbanZone) -> Result<NtlSeries> {
    let mut by_day: BTreeMap<NaiveDate, Vec<PixelRecord>> = BTreeMap::new();
    for r in records {
        r.validate()?;
        by_day.entry(r.date).or_default().push(r.clone());
    }
    let (Some(&start), Some(&end)) = (by_day.keys().next(), by_day.keys().next_back()) else {
        return Err(Error::insufficient("zone series", 1, 0));
    };
    let days = (end - start).num_days() as usize + 1;
    let mut values = Vec::with_capacity(days);
    for i in 0..days {
        let date = start + Duration::days(i as i64);
        let v = match by_day.get(&date) {
            Some(day) => aggregate_zone(day, zone)?,
            None => None,
        };
        values.push(v.unwrap_or(f64::NAN));
    }
    NtlSeries::from_values(zone.zone_id.clone(), start, values)
}

/// Trailing mean over the last `window` calendar days, ignoring masked days.
/// Masked input days stay masked, as does any day whose whole window is masked.
pub fn rolling_smooth(series: &NtlSeries, window: usize) -> Result<NtlSeries> {
    if window == 0 {
        return Err(Error::Domain("smoothing window must be at least 1 day".into()));
    }
    let out = (0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let (sum, count) = (lo..=i)
                .filter(|&k| !series.gap_mask[k])
                .fold((0.0, 0usize), |(s, c), k| (s + series.values[k], c + 1));
            if count == 0 || series.gap_mask[i] {
                f64::NAN
            } else {
                sum / count as f64
            }
        })
        .collect();
    NtlSeries::from_values(series.zone_id.clone(), series.start_date, out)
}

fn parse_err(line: Option<&csv::Position>, message: impl fmt::Display) -> Error {
    Error::Parse {
        line: line.map_or(0, csv::Position::line),
        message: message.to_string(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(csv::Position::line).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: "<csv>".into(),
            source,
        },
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn check_header(rdr: &mut csv::Reader<impl std::io::Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(csv_err)?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

pub const PIXEL_HEADER: [&str; 7] = [
    "date",
    "pixel_id",
    "radiance",
    "latitude",
    "pixel_height_deg",
    "pixel_width_deg",
    "quality",
];
pub const ZONE_HEADER: [&str; 3] = ["date", "radiance", "gap"];

pub fn read_pixel_csv(reader: impl std::io::Read) -> Result<Vec<PixelRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut rdr, &PIXEL_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let pos = row.position().cloned();
        let rec: PixelRecord = row
            .deserialize(None)
            .map_err(|e| parse_err(pos.as_ref(), e))?;
        rec.validate().map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!(
                "line {}: {m}",
                pos.as_ref().map_or(0, csv::Position::line)
            )),
            other => other,
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct ZoneRow {
    date: NaiveDate,
    radiance: Option<f64>,
    gap: u8,
}

pub fn read_zone_csv(reader: impl std::io::Read, zone_id: &str) -> Result<NtlSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut rdr, &ZONE_HEADER)?;
    let mut start = None;
    let mut values = Vec::new();
    let mut mask = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let pos = row.position().cloned();
        let line = pos.as_ref().map_or(0, csv::Position::line);
        let r: ZoneRow = row.deserialize(None).map_err(|e| parse_err(pos.as_ref(), e))?;
        let start = *start.get_or_insert(r.date);
        let expected = start + Duration::days(values.len() as i64);
        if r.date != expected {
            return Err(Error::Validation(format!(
                "line {line}: expected {expected}, found {} (zone series must be daily-contiguous)",
                r.date
            )));
        }
        let gap = match r.gap {
            0 => false,
            1 => true,
            g => return Err(parse_err(pos.as_ref(), format!("gap must be 0 or 1, found {g}"))),
        };
        let v = match (gap, r.radiance) {
            (true, _) => f64::NAN,
            (false, Some(v)) if v >= 0.0 && v.is_finite() => v,
            (false, v) => {
                return Err(Error::Validation(format!(
                    "line {line}: unmasked radiance {v:?} must be a non-negative number"
                )))
            }
        };
        values.push(v);
        mask.push(gap);
    }
    let start = start.ok_or_else(|| Error::insufficient("zone series rows", 1, 0))?;
    NtlSeries::new(zone_id, start, values, mask)
}

pub fn write_zone_csv(series: &NtlSeries, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ZONE_HEADER).map_err(csv_err)?;
    for (i, (&v, &m)) in series.values.iter().zip(&series.gap_mask).enumerate() {
        let value = if m { String::new() } else { v.to_string() };
        w.write_record([series.date(i).to_string(), value, u8::from(m).to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_pixel_csv(records: &[PixelRecord], writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(PIXEL_HEADER).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Either kind of ingestible CSV, told apart by its header.
#[derive(Debug, Clone)]
pub enum Loaded {
    Pixels(Vec<PixelRecord>),
    Zone(NtlSeries),
}

pub fn load_csv(path: &Path, zone_id: &str) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or_default();
    let cols: Vec<&str> = first.split(',').map(str::trim).collect();
    let tag = |e: Error| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    };
    if cols == ZONE_HEADER {
        read_zone_csv(text.as_bytes(), zone_id).map(Loaded::Zone).map_err(tag)
    } else {
        read_pixel_csv(text.as_bytes()).map(Loaded::Pixels).map_err(tag)
    }
}

/// Full ingest: pixel or zone CSV → smoothed zone series.
pub fn ingest_file(path: &Path, zone_id: &str, window: usize) -> Result<NtlSeries> {
    let raw = match load_csv(path, zone_id)? {
        Loaded::Zone(s) => s,
        Loaded::Pixels(records) => {
            let zone = UrbanZone::from_records(zone_id, &records)?;
            build_series(&records, &zone)?
        }
    };
    rolling_smooth(&raw, window)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, d).unwrap()
    }

    fn rec(id: &str, radiance: f64, quality: Quality) -> PixelRecord {
        PixelRecord {
            date: day(1),
            pixel_id: id.into(),
            radiance,
            latitude: 10.0,
            pixel_height_deg: 0.004,
            pixel_width_deg: 0.004,
            quality,
        }
    }

    fn zone(areas: &[(&str, f64)]) -> UrbanZone {
        UrbanZone::new("z", areas.iter().map(|(k, a)| (PixelId::from(*k), *a)).collect()).unwrap()
    }

    #[test]
    fn weighted_means() {
        let recs = [rec("a", 10.0, Quality::Good), rec("b", 20.0, Quality::GapFilled)];
        assert_eq!(aggregate_zone(&recs, &zone(&[("a", 1.0), ("b", 1.0)])).unwrap(), Some(15.0));
        assert_eq!(aggregate_zone(&recs, &zone(&[("a", 3.0), ("b", 1.0)])).unwrap(), Some(12.5));
    }

    #[test]
    fn all_missing_is_a_gap() {
        let recs = [rec("a", 0.0, Quality::Missing), rec("b", 5.0, Quality::Missing)];
        assert_eq!(aggregate_zone(&recs, &zone(&[("a", 1.0), ("b", 1.0)])).unwrap(), None);
    }

    #[test]
    fn foreign_pixel_is_rejected() {
        let recs = [rec("c", 1.0, Quality::Good)];
        assert!(matches!(
            aggregate_zone(&recs, &zone(&[("a", 1.0)])),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn trailing_mean() {
        let s = NtlSeries::from_values("z", day(1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(rolling_smooth(&s, 2).unwrap().values, vec![1.0, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn masked_day_is_skipped() {
        let s = NtlSeries::from_values("z", day(1), vec![2.0, 4.0, f64::NAN, 8.0, 10.0, 12.0]).unwrap();
        let out = rolling_smooth(&s, 3).unwrap();
        // windows: [2] [2,4] (gap) [4,_,8] [_,8,10] [8,10,12]
        assert_eq!(out.gap_mask, s.gap_mask);
        let kept: Vec<f64> = out.values.iter().copied().filter(|v| v.is_finite()).collect();
        assert_eq!(kept, vec![2.0, 3.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn fully_masked_window_stays_masked() {
        let s = NtlSeries::from_values("z", day(1), vec![1.0, f64::NAN, f64::NAN, 3.0, 5.0]).unwrap();
        let out = rolling_smooth(&s, 3).unwrap();
        assert_eq!(out.gap_mask, vec![false, true, true, false, false]);
        assert_eq!(out.values[3], 3.0);
        assert_eq!(out.values[4], 4.0);
    }

    #[test]
    fn zero_window_is_a_domain_error() {
        let s = NtlSeries::from_values("z", day(1), vec![1.0]).unwrap();
        assert!(matches!(rolling_smooth(&s, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn degenerate_and_polar_cells() {
        assert_eq!(pixel_area_wgs84(0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(pixel_area_wgs84(89.5, 1.0, 1.0).unwrap() < pixel_area_wgs84(0.0, 1.0, 1.0).unwrap());
        assert!(matches!(pixel_area_wgs84(90.0, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(pixel_area_wgs84(-95.0, 0.1, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn zone_csv_round_trip() {
        let s = NtlSeries::from_values("z", day(1), vec![1.25, f64::NAN, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_zone_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("date,radiance,gap\n2020-01-01,1.25,0\n2020-01-02,,1\n"));
        let back = read_zone_csv(text.as_bytes(), "z").unwrap();
        assert_eq!(back.gap_mask, s.gap_mask);
        assert_eq!(back.values[2], 3.0);
    }

    #[test]
    fn bad_row_reports_its_line() {
        let text = "date,radiance,gap\n2020-01-01,1.0,0\n2020-01-02,abc,0\n";
        match read_zone_csv(text.as_bytes(), "z") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let skipped = "date,radiance,gap\n2020-01-01,1.0,0\n2020-01-03,1.0,0\n";
        assert!(matches!(read_zone_csv(skipped.as_bytes(), "z"), Err(Error::Validation(_))));
    }

    #[test]
    fn pixel_csv_round_trip() {
        let recs = vec![rec("a", 10.0, Quality::Good), rec("b", 0.0, Quality::Missing)];
        let mut buf = Vec::new();
        write_pixel_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&PIXEL_HEADER.join(",")));
        assert_eq!(read_pixel_csv(text.as_bytes()).unwrap(), recs);
        let negative = text.replace("10.0", "-1.0");
        assert!(matches!(read_pixel_csv(negative.as_bytes()), Err(Error::Validation(_))));
    }
}
