//! Residual thresholding, persistent segments, rates, phases and confidence.

use std::collections::VecDeque;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{median, EnsembleForecast};
use crate::ingest::NtlSeries;
use crate::models::ArchitectureId;

pub const REPORT_FORMAT: &str = "ntl-change/report/v1";

/// `r_t = x_t − x̂_t`, defined where both the observation and the prediction exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub start_date: NaiveDate,
    pub r: Vec<Option<f64>>,
}

impl ResidualSeries {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn squared(&self) -> Vec<Option<f64>> {
        self.r.iter().map(|r| r.map(|v| v * v)).collect()
    }
}

pub fn residuals_from(observed: &NtlSeries, start_date: NaiveDate, predicted: &[Option<f64>]) -> Result<ResidualSeries> {
    if start_date != observed.start_date || predicted.len() != observed.len() {
        return Err(Error::Alignment(format!(
            "prediction spans {} days from {start_date}, observations {} days from {}",
            predicted.len(),
            observed.len(),
            observed.start_date
        )));
    }
    let r = predicted
        .iter()
        .enumerate()
        .map(|(t, p)| match (observed.gap_mask[t], p) {
            (false, Some(p)) => Some(observed.values[t] - p),
            _ => None,
        })
        .collect();
    Ok(ResidualSeries { start_date, r })
}

pub fn residuals(observed: &NtlSeries, ensemble: &EnsembleForecast) -> Result<ResidualSeries> {
    residuals_from(observed, ensemble.start_date, &ensemble.prediction)
}

/// Percentile `q` ∈ [0, 100] of `values`, linearly interpolated between order statistics.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

fn check_t_percent(t_percent: f64) -> Result<()> {
    if t_percent > 0.0 && t_percent < 100.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("T% = {t_percent} outside (0, 100)")))
    }
}

/// Batch threshold: the (100 − T)th percentile of the squared residuals given.
pub fn batch_threshold(squared: &[f64], t_percent: f64) -> Result<f64> {
    check_t_percent(t_percent)?;
    percentile(squared, 100.0 - t_percent).ok_or_else(|| Error::insufficient("threshold (residuals)", 1, 0))
}

/// Trailing-window threshold state for one city, fed one step at a time.
#[derive(Debug, Clone)]
pub struct StreamingThreshold {
    window: usize,
    t_percent: f64,
    recent: VecDeque<(usize, f64)>,
}

impl StreamingThreshold {
    pub fn new(window: usize, t_percent: f64) -> Result<Self> {
        check_t_percent(t_percent)?;
        if window == 0 {
            return Err(Error::Domain("streaming window must be at least 1 day".into()));
        }
        Ok(StreamingThreshold {
            window,
            t_percent,
            recent: VecDeque::new(),
        })
    }

    /// Adds the squared residual of step `t` and returns τ over the trailing window ending at `t`.
    pub fn push(&mut self, t: usize, squared: f64) -> f64 {
        self.recent.push_back((t, squared));
        while self.recent.front().is_some_and(|&(k, _)| k + self.window <= t) {
            self.recent.pop_front();
        }
        let values: Vec<f64> = self.recent.iter().map(|&(_, v)| v).collect();
        percentile(&values, 100.0 - self.t_percent).expect("window holds the current step")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ThresholdMode {
    Batch,
    Streaming { window: usize },
}

/// Which residuals feed the batch percentile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScope {
    /// Every step with a defined residual, baseline included.
    AllResiduals,
    /// Monitored steps only.
    Monitored,
}

/// Per-step τ and flags. `tau[t]` is `None` where the residual is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct Flags {
    pub tau: Vec<Option<f64>>,
    pub flagged: Vec<bool>,
}

/// Flags every step `t ≥ from` with `r_t² > τ_t`.
pub fn threshold(
    residuals: &ResidualSeries,
    t_percent: f64,
    mode: ThresholdMode,
    scope: ThresholdScope,
    from: usize,
) -> Result<Flags> {
    check_t_percent(t_percent)?;
    let sq = residuals.squared();
    let n = sq.len();
    let mut tau = vec![None; n];
    match mode {
        ThresholdMode::Batch => {
            let lo = match scope {
                ThresholdScope::AllResiduals => 0,
                ThresholdScope::Monitored => from.min(n),
            };
            let sample: Vec<f64> = sq[lo..].iter().flatten().copied().collect();
            let value = batch_threshold(&sample, t_percent)?;
            for t in from.min(n)..n {
                tau[t] = sq[t].map(|_| value);
            }
        }
        ThresholdMode::Streaming { window } => {
            let mut state = StreamingThreshold::new(window, t_percent)?;
            if sq[from.min(n)..].iter().all(Option::is_none) {
                return Err(Error::insufficient("threshold (residuals)", 1, 0));
            }
            for (t, v) in sq.iter().enumerate() {
                if let Some(v) = *v {
                    let value = state.push(t, v);
                    if t >= from {
                        tau[t] = Some(value);
                    }
                }
            }
        }
    }
    let flagged = sq
        .iter()
        .zip(&tau)
        .map(|(s, t)| matches!((s, t), (Some(s), Some(t)) if s > t))
        .collect();
    Ok(Flags { tau, flagged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentConfig {
    /// Minimum span, first to last flagged day inclusive, for a run to count as a change.
    pub min_persistence: usize,
    /// Longest run of unflagged days allowed inside one segment.
    pub gap_tolerance: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            min_persistence: 60,
            gap_tolerance: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSegment {
    pub start: usize,
    pub inflection: usize,
    pub end: usize,
    /// The segment reaches the last monitored step and may still be in progress.
    pub open: bool,
    pub start_rate: f64,
    pub end_rate: f64,
    pub mean_severity: f64,
    pub direction: i8,
}

impl ChangeSegment {
    pub fn span(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..=self.end).contains(&t)
    }
}

pub fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// λ_s = (x_i − x_s)/(i − s + 1).
pub fn start_rate(x_s: f64, x_i: f64, s: usize, i: usize) -> f64 {
    (x_i - x_s) / (i - s + 1) as f64
}

/// λ_e = (x_e − x_i)/(e − i + 1).
pub fn end_rate(x_i: f64, x_e: f64, i: usize, e: usize) -> f64 {
    (x_e - x_i) / (e - i + 1) as f64
}

/// Groups flagged steps into persistent segments over `observed`.
///
/// Flagged steps always carry a defined residual, so `observed` is unmasked at
/// every segment start, inflection and end.
pub fn segment(
    flagged: &[bool],
    residuals: &ResidualSeries,
    observed: &NtlSeries,
    cfg: SegmentConfig,
) -> Result<Vec<ChangeSegment>> {
    if cfg.min_persistence == 0 {
        return Err(Error::Domain("min_persistence must be at least 1".into()));
    }
    if flagged.len() != residuals.len() || flagged.len() != observed.len() {
        return Err(Error::Alignment("flags, residuals and observations differ in length".into()));
    }
    let last_defined = residuals.r.iter().rposition(Option::is_some);
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for t in (0..flagged.len()).filter(|&t| flagged[t]) {
        match runs.last_mut() {
            Some((_, end)) if t - *end - 1 <= cfg.gap_tolerance => *end = t,
            _ => runs.push((t, t)),
        }
    }
    let mut out = Vec::new();
    for (s, e) in runs {
        if e - s + 1 < cfg.min_persistence {
            continue;
        }
        let steps: Vec<(usize, f64)> = (s..=e)
            .filter(|&t| flagged[t])
            .map(|t| {
                residuals.r[t]
                    .map(|r| (t, r))
                    .ok_or_else(|| Error::Input(format!("step {t} is flagged without a residual")))
            })
            .collect::<Result<_>>()?;
        let (i, _) = steps
            .iter()
            .copied()
            .fold((s, -1.0), |best, (t, r)| if r.abs() > best.1 { (t, r.abs()) } else { best });
        let x = |t: usize| observed.values[t];
        let mean_r = steps.iter().map(|(_, r)| r).sum::<f64>() / steps.len() as f64;
        out.push(ChangeSegment {
            start: s,
            inflection: i,
            end: e,
            open: last_defined == Some(e),
            start_rate: start_rate(x(s), x(i), s, i),
            end_rate: end_rate(x(i), x(e), i, e),
            mean_severity: steps.iter().map(|(_, r)| r.abs()).sum::<f64>() / steps.len() as f64,
            direction: sign(mean_r),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Baseline,
    Change,
    ContinuingRecovery,
    FullRecovery,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Baseline => "baseline",
            Phase::Change => "change",
            Phase::ContinuingRecovery => "continuing_recovery",
            Phase::FullRecovery => "full_recovery",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryBand {
    /// Allowed relative deviation from the baseline median.
    pub fraction: f64,
    /// Consecutive in-band observed days needed to declare full recovery.
    pub settle_days: usize,
}

impl Default for RecoveryBand {
    fn default() -> Self {
        RecoveryBand {
            fraction: 0.10,
            settle_days: 7,
        }
    }
}

pub fn within_band(x: f64, baseline_median: f64, fraction: f64) -> bool {
    (x - baseline_median).abs() <= fraction * baseline_median.abs()
}

/// Labels steps `from..` of the series.
///
/// Before the first segment: baseline. From a segment's start to its
/// inflection: change. After the inflection the step is continuing recovery
/// until the observation settles inside the band, from which point on it is
/// full recovery (until the next segment starts).
pub fn phase_labels(
    observed: &NtlSeries,
    segments: &[ChangeSegment],
    baseline_median: f64,
    band: RecoveryBand,
    from: usize,
) -> Vec<Phase> {
    let n = observed.len();
    let settle = band.settle_days.max(1);
    let in_band = |t: usize| !observed.gap_mask[t] && within_band(observed.values[t], baseline_median, band.fraction);
    // Length of the in-band run starting at each step (masked days break runs).
    let mut run_ahead = vec![0usize; n + 1];
    for t in (0..n).rev() {
        run_ahead[t] = if in_band(t) { run_ahead[t + 1] + 1 } else { 0 };
    }
    let mut labels = Vec::with_capacity(n.saturating_sub(from));
    let mut phase = Phase::Baseline;
    let mut seg = segments.iter().peekable();
    let mut current: Option<&ChangeSegment> = None;
    for t in from..n {
        while let Some(next) = seg.peek() {
            if next.start <= t {
                current = seg.next();
            } else {
                break;
            }
        }
        if let Some(c) = current {
            if t <= c.inflection {
                phase = Phase::Change;
            } else if phase != Phase::FullRecovery {
                // Reaching the end of the series counts as settled.
                let settled = run_ahead[t] >= settle || (run_ahead[t] > 0 && t + run_ahead[t] == n);
                phase = if settled { Phase::FullRecovery } else { Phase::ContinuingRecovery };
            }
        }
        labels.push(phase);
    }
    labels
}

/// Number of members whose own squared residual exceeds their own τ at each step.
pub fn confidence(member_flags: &[Flags]) -> Vec<u8> {
    let n = member_flags.first().map_or(0, |f| f.flagged.len());
    (0..n)
        .map(|t| member_flags.iter().filter(|f| f.flagged.get(t).copied().unwrap_or(false)).count() as u8)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub t_percent: f64,
    pub threshold: ThresholdMode,
    pub scope: ThresholdScope,
    pub segments: SegmentConfig,
    pub recovery: RecoveryBand,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            t_percent: 25.0,
            threshold: ThresholdMode::Batch,
            scope: ThresholdScope::AllResiduals,
            segments: SegmentConfig::default(),
            recovery: RecoveryBand::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub date: NaiveDate,
    pub observed: Option<f64>,
    pub ensemble: Option<f64>,
    pub r: Option<f64>,
    pub tau: Option<f64>,
    pub flagged: bool,
    /// Flagged and part of a persistent segment.
    pub persistent: bool,
    pub phase: Phase,
    pub confidence: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePoint {
    pub date: NaiveDate,
    pub severity: f64,
    pub direction: i8,
    pub confidence: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub s: NaiveDate,
    pub i: NaiveDate,
    pub e: NaiveDate,
    pub open: bool,
    pub lambda_s: f64,
    pub lambda_e: f64,
    pub mean_severity: f64,
    pub direction: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub format: String,
    pub zone_id: String,
    /// Last day of the training span; monitoring starts the day after.
    pub training_end: NaiveDate,
    pub baseline_median: f64,
    pub config: DetectConfig,
    /// Batch threshold; absent in streaming mode, where τ varies per step.
    pub tau: Option<f64>,
    pub members: Vec<ArchitectureId>,
    pub weights: Vec<(ArchitectureId, f64)>,
    pub steps: Vec<StepRecord>,
    pub segments: Vec<SegmentRecord>,
    pub change_points: Vec<ChangePoint>,
}

impl ChangeReport {
    pub fn flagged_fraction(&self) -> f64 {
        fraction(self.steps.iter().filter(|s| s.r.is_some()).map(|s| s.flagged))
    }

    /// Mean |r| over persistent flagged steps.
    pub fn mean_persistent_severity(&self) -> Option<f64> {
        let v: Vec<f64> = self.steps.iter().filter(|s| s.persistent).filter_map(|s| s.r.map(f64::abs)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Sign of the summed residual over persistent flagged steps.
    pub fn dominant_direction(&self) -> i8 {
        sign(self.steps.iter().filter(|s| s.persistent).filter_map(|s| s.r).sum())
    }

    pub fn persistent_fraction(&self) -> f64 {
        fraction(self.steps.iter().filter(|s| s.r.is_some()).map(|s| s.persistent))
    }
}

fn fraction(it: impl Iterator<Item = bool>) -> f64 {
    let (mut hits, mut n) = (0usize, 0usize);
    for b in it {
        n += 1;
        hits += usize::from(b);
    }
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Median of the observed training-span values.
pub fn baseline_median(observed: &NtlSeries, training_days: usize) -> Result<f64> {
    let head = observed.head(training_days);
    let vals: Vec<f64> = head
        .values
        .iter()
        .zip(&head.gap_mask)
        .filter(|(_, m)| !**m)
        .map(|(v, _)| *v)
        .collect();
    median(&vals).ok_or_else(|| Error::insufficient("baseline median (observed training days)", 1, 0))
}

/// Runs thresholding, segmentation, phase labelling and confidence over the
/// monitored span (the days after `training_end`).
pub fn detect(
    observed: &NtlSeries,
    forecast: &EnsembleForecast,
    training_end: NaiveDate,
    cfg: &DetectConfig,
) -> Result<ChangeReport> {
    let from = match observed.index_of(training_end) {
        Some(k) if k + 1 < observed.len() => k + 1,
        _ => {
            return Err(Error::Config(format!(
                "training end {training_end} must fall inside the series and before its last day"
            )))
        }
    };
    let median0 = baseline_median(observed, from)?;
    let res = residuals(observed, forecast)?;
    let flags = threshold(&res, cfg.t_percent, cfg.threshold, cfg.scope, from)?;
    let mut segs = segment(&flags.flagged, &res, observed, cfg.segments)?;
    segs.retain(|s| s.start >= from);
    let phases = phase_labels(observed, &segs, median0, cfg.recovery, from);
    let member_flags = forecast
        .members
        .iter()
        .map(|m| {
            let r = residuals_from(observed, m.start_date, &m.prediction)?;
            threshold(&r, cfg.t_percent, cfg.threshold, cfg.scope, from)
        })
        .collect::<Result<Vec<_>>>()?;
    let conf = confidence(&member_flags);

    let mut steps = Vec::with_capacity(observed.len() - from);
    let mut change_points = Vec::new();
    for (k, t) in (from..observed.len()).enumerate() {
        let persistent = flags.flagged[t] && segs.iter().any(|s| s.contains(t));
        let date = observed.date(t);
        if let (true, Some(r)) = (flags.flagged[t], res.r[t]) {
            change_points.push(ChangePoint {
                date,
                severity: r.abs(),
                direction: sign(r),
                confidence: conf[t],
            });
        }
        steps.push(StepRecord {
            date,
            observed: (!observed.gap_mask[t]).then(|| observed.values[t]),
            ensemble: forecast.prediction[t],
            r: res.r[t],
            tau: flags.tau[t],
            flagged: flags.flagged[t],
            persistent,
            phase: phases[k],
            confidence: conf[t],
        });
    }
    let tau = match cfg.threshold {
        ThresholdMode::Batch => flags.tau.iter().flatten().next().copied(),
        ThresholdMode::Streaming { .. } => None,
    };
    Ok(ChangeReport {
        format: REPORT_FORMAT.to_string(),
        zone_id: observed.zone_id.clone(),
        training_end,
        baseline_median: median0,
        config: cfg.clone(),
        tau,
        members: forecast.members.iter().map(|m| m.architecture).collect(),
        weights: forecast.weights.0.iter().map(|(&k, &v)| (k, v)).collect(),
        segments: segs
            .iter()
            .map(|s| SegmentRecord {
                s: observed.date(s.start),
                i: observed.date(s.inflection),
                e: observed.date(s.end),
                open: s.open,
                lambda_s: s.start_rate,
                lambda_e: s.end_rate,
                mean_severity: s.mean_severity,
                direction: s.direction,
            })
            .collect(),
        steps,
        change_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rs(r: &[f64]) -> ResidualSeries {
        ResidualSeries {
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            r: r.iter().map(|&v| Some(v)).collect(),
        }
    }

    fn batch(r: &[f64]) -> Vec<bool> {
        threshold(&rs(r), 25.0, ThresholdMode::Batch, ThresholdScope::AllResiduals, 0)
            .unwrap()
            .flagged
    }

    #[test]
    fn top_quartile_of_four() {
        assert_eq!(batch(&[1.0, 2.0, 3.0, 4.0]), vec![false, false, false, true]);
    }

    #[test]
    fn equal_residuals_flag_nothing() {
        assert!(batch(&[2.0; 6]).iter().all(|f| !f));
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[1.0, 4.0, 9.0, 16.0], 75.0), Some(10.75));
        assert_eq!(percentile(&[0.0, 0.0, 0.0, 50.0, 60.0, 70.0, 80.0, 100.0], 75.0), Some(72.5));
    }

    #[test]
    fn invalid_t_percent() {
        let r = rs(&[1.0]);
        for t in [0.0, 100.0, -3.0] {
            assert!(threshold(&r, t, ThresholdMode::Batch, ThresholdScope::AllResiduals, 0).is_err());
        }
        let empty = ResidualSeries { start_date: r.start_date, r: vec![None; 3] };
        assert!(matches!(
            threshold(&empty, 25.0, ThresholdMode::Batch, ThresholdScope::AllResiduals, 0),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn eq2_eq3_arithmetic() {
        assert_eq!(start_rate(10.0, 4.0, 0, 3), -1.5);
        assert_eq!(end_rate(4.0, 10.0, 3, 8), 1.0);
    }

    #[test]
    fn streaming_window_forgets() {
        let mut s = StreamingThreshold::new(3, 25.0).unwrap();
        s.push(0, 100.0);
        s.push(1, 1.0);
        s.push(2, 1.0);
        assert_eq!(s.push(3, 1.0), 1.0);
    }

    #[test]
    fn confidence_counts() {
        let f = |v: &[bool]| Flags {
            tau: vec![Some(0.0); v.len()],
            flagged: v.to_vec(),
        };
        let c = confidence(&[f(&[true, false, true]), f(&[true, false, false]), f(&[true, false, false])]);
        assert_eq!(c, vec![3, 0, 1]);
    }
}
