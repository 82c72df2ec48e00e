//! End-to-end run: baseline training, ensemble forecasting, detection.

use chrono::NaiveDate;

use crate::detect::{detect, ChangeReport, DetectConfig};
use crate::error::{Error, Result};
use crate::forecast::{ensemble, sliding_forecast, EnsembleForecast, EnsembleWeights};
use crate::ingest::NtlSeries;
use crate::models::{make_windows, train_all, ForecastModel, TrainConfig, TrainReport};

/// Three years of baseline are recommended before the training end.
pub const RECOMMENDED_TRAINING_DAYS: usize = 3 * 365;

/// Number of series days up to and including `training_end`.
pub fn training_days(series: &NtlSeries, training_end: NaiveDate) -> Result<usize> {
    match series.index_of(training_end) {
        Some(k) if k + 1 < series.len() => Ok(k + 1),
        _ => Err(Error::Config(format!(
            "training end {training_end} must fall inside the series ({} to {}) and before its last day",
            series.start_date,
            series.date(series.len().saturating_sub(1))
        ))),
    }
}

/// Trains FCNN, CNN and LSTM concurrently on the baseline up to `training_end`.
pub fn train_models(
    series: &NtlSeries,
    training_end: NaiveDate,
    config: &TrainConfig,
) -> Result<Vec<(ForecastModel, TrainReport)>> {
    config.validate()?;
    let days = training_days(series, training_end)?;
    if days < RECOMMENDED_TRAINING_DAYS {
        log::warn!(
            "training span is {days} days; at least {RECOMMENDED_TRAINING_DAYS} days (three years) are recommended"
        );
    }
    let baseline = series.head(days);
    let pairs = make_windows(&baseline, config.input_window, config.output_window)?;
    log::info!("training on {} window pairs from {days} baseline days", pairs.len());
    train_all(&pairs, config)
}

/// Member forecasts over the whole series, combined with `weights`.
pub fn forecast(models: &[ForecastModel], series: &NtlSeries, weights: &EnsembleWeights) -> Result<EnsembleForecast> {
    let members = models
        .iter()
        .map(|m| sliding_forecast(m, series))
        .collect::<Result<Vec<_>>>()?;
    ensemble(members, weights)
}

/// Forecasts and detects in one step.
pub fn run_detection(
    models: &[ForecastModel],
    series: &NtlSeries,
    training_end: NaiveDate,
    weights: &EnsembleWeights,
    config: &DetectConfig,
) -> Result<(EnsembleForecast, ChangeReport)> {
    if let Some(first) = models.first() {
        let (w_i, w_o) = (first.input_window(), first.output_window());
        if models.iter().any(|m| m.input_window() != w_i || m.output_window() != w_o) {
            return Err(Error::Validation("ensemble members disagree on window sizes".into()));
        }
    }
    let f = forecast(models, series, weights)?;
    let report = detect(series, &f, training_end, config)?;
    Ok((f, report))
}
