//! Labelled synthetic radiance series for the three change archetypes.

use chrono::{Datelike, Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ChangeType, GroundTruthEvent, TimeUnit, NO_CHANGE_BAND};
use crate::ingest::NtlSeries;

/// A Gaussian bump recurring every year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Holiday {
    pub day_of_year: f64,
    /// Peak height, radiance.
    pub amplitude: f64,
    /// Standard deviation of the bump, days.
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Change {
    None,
    /// Instant loss of `depth` radiance; with a time constant the deficit decays
    /// as `depth · exp(−days / recovery_days)`.
    AbruptDrop { depth: f64, recovery_days: Option<f64> },
    /// Linear rise of `slope` radiance/day for `duration` days, then held.
    GradualRamp { slope: f64, duration: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default = "default_zone")]
    pub zone_id: String,
    pub start_date: NaiveDate,
    /// Days.
    pub length: usize,
    pub baseline: f64,
    #[serde(default)]
    pub seasonal_amplitude: f64,
    #[serde(default = "default_period")]
    pub seasonal_period: f64,
    /// Noise standard deviation as a fraction of the baseline level.
    #[serde(default = "default_noise")]
    pub noise_fraction: f64,
    #[serde(default)]
    pub holidays: Vec<Holiday>,
    pub change: Change,
    /// First changed day; ignored for `change = none`.
    pub change_start: Option<NaiveDate>,
    #[serde(default)]
    pub seed: u64,
}

fn default_zone() -> String {
    "synthetic".into()
}

fn default_period() -> f64 {
    365.0
}

fn default_noise() -> f64 {
    0.03
}

/// Shortest series accepted: one 60/30 window pair.
pub const MIN_LENGTH: usize = 90;

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.length < MIN_LENGTH {
            return bad(format!("length {} below the minimum of {MIN_LENGTH} days", self.length));
        }
        if !(self.baseline > 0.0 && self.baseline.is_finite()) {
            return bad(format!("baseline {} must be positive", self.baseline));
        }
        if !(self.seasonal_amplitude >= 0.0 && self.seasonal_period > 0.0) {
            return bad("seasonal amplitude must be non-negative and period positive".into());
        }
        if !(self.noise_fraction >= 0.0 && self.noise_fraction.is_finite()) {
            return bad(format!("noise fraction {} must be non-negative", self.noise_fraction));
        }
        if self.holidays.iter().any(|h| !(h.width > 0.0 && h.amplitude.is_finite())) {
            return bad("holiday widths must be positive".into());
        }
        let span = match self.change {
            Change::None => return Ok(()),
            Change::AbruptDrop { depth, recovery_days } => {
                if !(depth > 0.0 && depth <= self.baseline) {
                    return bad(format!("drop depth {depth} must lie in (0, baseline]"));
                }
                if recovery_days.is_some_and(|r| !(r > 0.0)) {
                    return bad("recovery time constant must be positive".into());
                }
                1
            }
            Change::GradualRamp { slope, duration } => {
                if !(slope > 0.0 && slope.is_finite()) || duration == 0 {
                    return bad("ramp needs a positive slope and duration".into());
                }
                duration
            }
        };
        let Some(k) = self.change_offset() else {
            return bad("change_start is required for a change".into());
        };
        if k < MIN_LENGTH as i64 || k as usize + span > self.length {
            return bad(format!(
                "change must start at least {MIN_LENGTH} days in and fit its {span}-day span inside the series"
            ));
        }
        Ok(())
    }

    fn change_offset(&self) -> Option<i64> {
        self.change_start.map(|d| (d - self.start_date).num_days())
    }

    /// Radiance removed (negative) or added (positive) by the change at day `t`.
    pub fn change_effect(&self, t: usize) -> f64 {
        let Some(k) = self.change_offset() else { return 0.0 };
        let d = t as i64 - k;
        if d < 0 {
            return 0.0;
        }
        match self.change {
            Change::None => 0.0,
            Change::AbruptDrop { depth, recovery_days } => match recovery_days {
                Some(tau) => -depth * (-(d as f64) / tau).exp(),
                None => -depth,
            },
            Change::GradualRamp { slope, duration } => slope * (d as f64 + 1.0).min(duration as f64),
        }
    }

    /// The noiseless series: baseline, season, holidays and change.
    pub fn expected(&self, t: usize) -> f64 {
        let date = self.start_date + Duration::days(t as i64);
        let phase = 2.0 * std::f64::consts::PI * t as f64 / self.seasonal_period;
        let doy = date.ordinal0() as f64;
        let holidays: f64 = self
            .holidays
            .iter()
            .map(|h| {
                let raw = (doy - h.day_of_year).abs() % 365.25;
                let dist = raw.min(365.25 - raw);
                h.amplitude * (-0.5 * (dist / h.width).powi(2)).exp()
            })
            .sum();
        self.baseline + self.seasonal_amplitude * phase.sin() + holidays + self.change_effect(t)
    }

    /// Truth window `[start, end]` as day indices; `end` is `None` when the change outlasts the series.
    pub fn truth_span(&self) -> Option<(usize, Option<usize>)> {
        let k = self.change_offset()? as usize;
        let end = match self.change {
            Change::None => return None,
            Change::AbruptDrop {
                depth,
                recovery_days: Some(tau),
            } => {
                // Last day whose deficit still exceeds the no-change band.
                let band = NO_CHANGE_BAND * self.baseline;
                let days = if depth > band { (tau * (depth / band).ln()).ceil() as usize } else { 1 };
                Some(k + days.max(1) - 1)
            }
            Change::AbruptDrop { recovery_days: None, .. } => None,
            Change::GradualRamp { duration, .. } => Some(k + duration - 1),
        };
        Some((k, end.filter(|&e| e < self.length - 1)))
    }

    pub fn change_type(&self) -> Option<ChangeType> {
        match self.change {
            Change::None => None,
            Change::AbruptDrop { recovery_days: Some(_), .. } => Some(ChangeType::Disaster),
            Change::AbruptDrop { recovery_days: None, .. } => Some(ChangeType::Conflict),
            Change::GradualRamp { .. } => Some(ChangeType::Urbanization),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub series: NtlSeries,
    pub truth: Option<GroundTruthEvent>,
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_fraction * spec.baseline)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let values = (0..spec.length)
        .map(|t| (spec.expected(t) + noise.sample(&mut rng)).max(0.0))
        .collect();
    let series = NtlSeries::from_values(spec.zone_id.clone(), spec.start_date, values)?;
    let truth = spec.truth_span().zip(spec.change_type()).map(|((s, e), change_type)| GroundTruthEvent {
        zone_id: spec.zone_id.clone(),
        start: series.date(s),
        end: e.map(|e| series.date(e)),
        change_type,
        unit: if change_type == ChangeType::Urbanization {
            TimeUnit::Yearly
        } else {
            TimeUnit::Daily
        },
    });
    Ok(Scenario { series, truth })
}

/// Masks `round(fraction · n)` distinct days chosen uniformly at random.
pub fn inject_gaps(series: &NtlSeries, fraction: f64, seed: u64) -> Result<NtlSeries> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(Error::Config(format!("gap fraction {fraction} outside [0, 0.5)")));
    }
    let n = series.len();
    let k = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = series.clone();
    for t in rand::seq::index::sample(&mut rng, n, k) {
        out.gap_mask[t] = true;
        out.values[t] = f64::NAN;
    }
    Ok(out)
}

/// Reference scenarios: 30 nW·cm⁻²·sr⁻¹ baseline, 3% noise, 10% seasonal
/// amplitude, starting 2012-01-19 with a 3.5-year training span.
pub mod presets {
    use super::*;

    pub const TRAINING_DAYS: usize = 1278;
    pub const ONSET_DAY: usize = 1398;

    pub fn start_date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2012, 1, 19).expect("valid date")
    }

    /// Last day of the training span.
    pub fn training_end() -> NaiveDate {
        start_date() + Duration::days(TRAINING_DAYS as i64 - 1)
    }

    fn base(zone: &str, length: usize, change: Change, onset: Option<usize>, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            zone_id: zone.into(),
            start_date: start_date(),
            length,
            baseline: 30.0,
            seasonal_amplitude: 3.0,
            seasonal_period: 365.0,
            noise_fraction: 0.03,
            holidays: Vec::new(),
            change,
            change_start: onset.map(|k| start_date() + Duration::days(k as i64)),
            seed,
        }
    }

    /// Five years; 50% drop with a 180-day exponential recovery.
    pub fn disaster(seed: u64) -> ScenarioSpec {
        let change = Change::AbruptDrop {
            depth: 15.0,
            recovery_days: Some(180.0),
        };
        base("disaster", 1826, change, Some(ONSET_DAY), seed)
    }

    /// Five years; 40% drop that never recovers.
    pub fn conflict(seed: u64) -> ScenarioSpec {
        let change = Change::AbruptDrop {
            depth: 12.0,
            recovery_days: None,
        };
        base("conflict", 1826, change, Some(ONSET_DAY), seed)
    }

    /// Six years; +0.02% of baseline per day for two years.
    pub fn urbanization(seed: u64) -> ScenarioSpec {
        let change = Change::GradualRamp {
            slope: 0.0002 * 30.0,
            duration: 730,
        };
        base("urbanization", 2191, change, Some(1368), seed)
    }

    pub fn no_change(seed: u64) -> ScenarioSpec {
        base("no_change", 1826, Change::None, None, seed)
    }

    pub fn by_name(name: &str, seed: u64) -> Result<ScenarioSpec> {
        match name {
            "disaster" => Ok(disaster(seed)),
            "conflict" => Ok(conflict(seed)),
            "urbanization" => Ok(urbanization(seed)),
            "none" | "no_change" => Ok(no_change(seed)),
            _ => Err(Error::Config(format!(
                "unknown preset `{name}` (expected disaster, conflict, urbanization or none)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disaster_truth_ends_when_deficit_is_within_band() {
        let spec = presets::disaster(0);
        let (s, e) = spec.truth_span().unwrap();
        assert_eq!(s, presets::ONSET_DAY);
        // 15·exp(−d/180) > 3 ⇔ d < 180·ln 5 ≈ 289.7
        assert_eq!(e, Some(s + 289));
        assert!(-spec.change_effect(s + 289) > 3.0);
        assert!(-spec.change_effect(s + 290) <= 3.0);
    }

    #[test]
    fn conflict_is_open() {
        let spec = presets::conflict(0);
        assert_eq!(spec.truth_span(), Some((presets::ONSET_DAY, None)));
        assert_eq!(spec.change_type(), Some(ChangeType::Conflict));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = presets::disaster(0);
        spec.change = Change::AbruptDrop {
            depth: -1.0,
            recovery_days: None,
        };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
        let mut spec = presets::urbanization(0);
        spec.change = Change::GradualRamp { slope: 0.0, duration: 10 };
        assert!(generate(&spec).is_err());
        let mut spec = presets::disaster(0);
        spec.change_start = None;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn gaps_are_deterministic() {
        let s = generate(&presets::no_change(1)).unwrap().series;
        let a = inject_gaps(&s, 0.1, 7).unwrap();
        let b = inject_gaps(&s, 0.1, 7).unwrap();
        assert_eq!(a.gap_mask, b.gap_mask);
        assert_eq!(a.masked_days(), (0.1 * s.len() as f64).round() as usize);
        assert!(inject_gaps(&s, 0.5, 7).is_err());
    }
}
