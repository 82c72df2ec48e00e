//! Recall, precision, F-β and delay against ground-truth event windows.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::detect::{within_band, ChangeReport};
use crate::error::{Error, Result};

pub const EVAL_FORMAT: &str = "ntl-change/eval/v1";
pub const DEFAULT_BETA: f64 = 2.0;
/// Relative deviation from the baseline median below which a step counts as "no change".
pub const NO_CHANGE_BAND: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeType {
    Disaster,
    Conflict,
    Urbanization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Daily,
    Yearly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub zone_id: String,
    pub start: NaiveDate,
    /// `None` while the change is still in progress at the end of the record.
    pub end: Option<NaiveDate>,
    pub change_type: ChangeType,
    pub unit: TimeUnit,
}

impl GroundTruthEvent {
    pub fn validate(&self) -> Result<()> {
        if let Some(end) = self.end {
            if end < self.start {
                return Err(Error::Validation(format!("event ends ({end}) before it starts ({})", self.start)));
            }
        }
        if self.unit == TimeUnit::Yearly && self.change_type != ChangeType::Urbanization {
            return Err(Error::Validation("only urbanization events are scored in yearly units".into()));
        }
        Ok(())
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && self.end.is_none_or(|e| date <= e)
    }
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ground_truth(&text)
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthEvent>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["zone_id", "start", "end", "change_type", "unit"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `zone_id,start,end,change_type,unit`, found `{}`", header.join(",")),
        });
    }
    let mut out = Vec::new();
    for (k, row) in rdr.deserialize::<GroundTruthEvent>().enumerate() {
        let line = k as u64 + 2;
        let ev = row.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        ev.validate().map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
        out.push(ev);
    }
    Ok(out)
}

pub fn ground_truth_csv(events: &[GroundTruthEvent]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let enc = |e: csv::Error| Error::Input(format!("csv encoding failed: {e}"));
    w.write_record(["zone_id", "start", "end", "change_type", "unit"]).map_err(enc)?;
    for e in events {
        w.serialize(e).map_err(enc)?;
    }
    w.into_inner().map_err(|e| Error::Input(format!("csv encoding failed: {}", e.error())))
}

/// R = TP / (TP + FN).
pub fn recall(tp: usize, fn_: usize) -> Result<f64> {
    if tp + fn_ == 0 {
        return Err(Error::Domain("recall needs a non-empty truth window".into()));
    }
    Ok(tp as f64 / (tp + fn_) as f64)
}

/// P = TP / (TP + FP); `None` when nothing was credited either way.
pub fn precision(tp: usize, fp: usize) -> Option<f64> {
    (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64)
}

/// (1 + β²)·P·R / (β²·P + R), defined as 0 when P = R = 0.
pub fn f_beta(p: f64, r: f64, beta: f64) -> Result<f64> {
    if !((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r)) {
        return Err(Error::Domain(format!("precision {p} and recall {r} must lie in [0, 1]")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("beta {beta} must be positive")));
    }
    let b2 = beta * beta;
    let denom = b2 * p + r;
    Ok(if denom == 0.0 { 0.0 } else { (1.0 + b2) * p * r / denom })
}

/// One scoring unit: a day or a calendar year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    /// Day ordinal or calendar year.
    pub key: i64,
    /// Any persistent detection in this unit.
    pub detected: bool,
    /// Mean observed radiance over the unit's observed days.
    pub observed: Option<f64>,
}

fn day_key(d: NaiveDate) -> i64 {
    d.num_days_from_ce() as i64
}

/// Daily units straight from the report's step records.
pub fn daily_units(report: &ChangeReport) -> Vec<Unit> {
    report
        .steps
        .iter()
        .map(|s| Unit {
            key: day_key(s.date),
            detected: s.persistent,
            observed: s.observed,
        })
        .collect()
}

/// A year is detected iff a persistent segment touches it.
pub fn to_yearly(report: &ChangeReport) -> Vec<Unit> {
    let mut years: BTreeMap<i32, (bool, f64, usize)> = BTreeMap::new();
    for s in &report.steps {
        let e = years.entry(s.date.year()).or_insert((false, 0.0, 0));
        if let Some(x) = s.observed {
            e.1 += x;
            e.2 += 1;
        }
    }
    for seg in &report.segments {
        for y in seg.s.year()..=seg.e.year() {
            if let Some(e) = years.get_mut(&y) {
                e.0 = true;
            }
        }
    }
    years
        .into_iter()
        .map(|(y, (detected, sum, n))| Unit {
            key: y as i64,
            detected,
            observed: (n > 0).then(|| sum / n as f64),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub zone_id: String,
    pub change_type: Option<ChangeType>,
    pub unit: TimeUnit,
    pub beta: f64,
    /// Absent when there is no truth window to recall.
    pub recall: Option<f64>,
    /// Absent when no detection was credited as TP or FP.
    pub precision: Option<f64>,
    pub f_beta: Option<f64>,
    /// Units from truth start to the first persistent detection; absent without one.
    pub delay: Option<i64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Detections outside truth that deviate from the baseline by more than the band.
    pub uncredited: usize,
    pub truth_units: usize,
    pub detected_units: usize,
}

/// Scores the report against `truth` (all events for this zone; may be empty).
pub fn evaluate(report: &ChangeReport, truth: &[GroundTruthEvent], beta: f64) -> Result<EvalReport> {
    let events: Vec<&GroundTruthEvent> = truth.iter().filter(|e| e.zone_id == report.zone_id).collect();
    for e in &events {
        e.validate()?;
    }
    let unit = events.first().map_or(TimeUnit::Daily, |e| e.unit);
    if events.iter().any(|e| e.unit != unit) {
        return Err(Error::Validation("events for one zone must share a time unit".into()));
    }
    let (units, buffer) = match unit {
        TimeUnit::Daily => (daily_units(report), 0),
        TimeUnit::Yearly => (to_yearly(report), 1),
    };
    let key = |d: NaiveDate| match unit {
        TimeUnit::Daily => day_key(d),
        TimeUnit::Yearly => d.year() as i64,
    };
    let last_key = units.last().map_or(i64::MIN, |u| u.key);
    let windows: Vec<(i64, i64)> = events
        .iter()
        .map(|e| (key(e.start), e.end.map_or(last_key, key)))
        .collect();
    let in_truth = |k: i64| windows.iter().any(|&(s, e)| k >= s && k <= e);
    let in_buffered = |k: i64| windows.iter().any(|&(s, e)| k >= s - buffer && k <= e + buffer);

    let (mut tp, mut fp, mut fn_, mut uncredited, mut truth_units) = (0, 0, 0, 0, 0);
    for u in &units {
        if in_truth(u.key) {
            truth_units += 1;
            if u.detected {
                tp += 1;
            } else {
                fn_ += 1;
            }
        } else if u.detected && !in_buffered(u.key) {
            let quiet = u
                .observed
                .is_some_and(|x| within_band(x, report.baseline_median, NO_CHANGE_BAND));
            if quiet {
                fp += 1;
            } else {
                uncredited += 1;
            }
        }
    }
    let recall = (truth_units > 0).then(|| recall(tp, fn_)).transpose()?;
    let precision = precision(tp, fp);
    let f = match (precision, recall) {
        (Some(p), Some(r)) => Some(f_beta(p, r, beta)?),
        (None, Some(0.0)) => Some(0.0),
        _ => None,
    };
    let delay = events
        .iter()
        .filter_map(|e| {
            let s = key(e.start);
            units
                .iter()
                .find(|u| u.detected && u.key >= s - buffer)
                .map(|u| u.key - s)
        })
        .min();
    Ok(EvalReport {
        format: EVAL_FORMAT.to_string(),
        zone_id: report.zone_id.clone(),
        change_type: events.first().map(|e| e.change_type),
        unit,
        beta,
        recall,
        precision,
        f_beta: f,
        delay,
        tp,
        fp,
        fn_,
        uncredited,
        truth_units,
        detected_units: units.iter().filter(|u| u.detected).count(),
    })
}
