//! Open-loop sliding forecasts, overlap medians and the weighted ensemble.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::NtlSeries;
use crate::models::{ArchitectureId, ForecastModel};
use crate::util;

/// Anything that maps `[count, w_i]` observed inputs to `[count, w_o]` forecasts.
pub trait Forecaster {
    fn architecture(&self) -> ArchitectureId;
    fn input_window(&self) -> usize;
    fn output_window(&self) -> usize;
    fn predict_flat(&self, inputs: &[f64]) -> Result<Vec<f64>>;
}

impl Forecaster for ForecastModel {
    fn architecture(&self) -> ArchitectureId {
        self.architecture
    }
    fn input_window(&self) -> usize {
        self.config.input_window
    }
    fn output_window(&self) -> usize {
        self.config.output_window
    }
    fn predict_flat(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        ForecastModel::predict_flat(self, inputs)
    }
}

/// Median of the finite values; the midpoint of the two central values for an even count.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// One member's per-step forecast, aligned index-for-index with the input series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelForecast {
    pub architecture: ArchitectureId,
    pub start_date: NaiveDate,
    pub prediction: Vec<Option<f64>>,
    /// Number of output windows that covered each step.
    pub coverage: Vec<usize>,
}

impl ModelForecast {
    pub fn len(&self) -> usize {
        self.prediction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prediction.is_empty()
    }
}

/// Slides the model over every position whose `w_i` inputs are all observed,
/// and takes the median of the (up to `w_o`) forecasts covering each step.
pub fn sliding_forecast(model: &impl Forecaster, series: &NtlSeries) -> Result<ModelForecast> {
    let (w_i, w_o) = (model.input_window(), model.output_window());
    let n = series.len();
    if n < w_i + 1 {
        return Err(Error::insufficient("sliding forecast (series days)", w_i + 1, n));
    }
    let mut starts = Vec::new();
    let mut inputs = Vec::new();
    let mut masked_in_window = series.gap_mask[..w_i].iter().filter(|&&m| m).count();
    for p in 0..n - w_i {
        if p > 0 {
            masked_in_window += usize::from(series.gap_mask[p + w_i - 1]);
            masked_in_window -= usize::from(series.gap_mask[p - 1]);
        }
        if masked_in_window == 0 {
            starts.push(p);
            inputs.extend_from_slice(&series.values[p..p + w_i]);
        }
    }
    let outputs = if inputs.is_empty() { Vec::new() } else { model.predict_flat(&inputs)? };
    if outputs.len() != starts.len() * w_o {
        return Err(Error::shape(starts.len() * w_o, outputs.len()));
    }
    let mut covering: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (k, &p) in starts.iter().enumerate() {
        for (j, &y) in outputs[k * w_o..(k + 1) * w_o].iter().enumerate() {
            if let Some(slot) = covering.get_mut(p + w_i + j) {
                slot.push(y);
            }
        }
    }
    Ok(ModelForecast {
        architecture: model.architecture(),
        start_date: series.start_date,
        coverage: covering.iter().map(Vec::len).collect(),
        prediction: covering.iter().map(|c| median(c)).collect(),
    })
}

/// Ensemble weights per architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnsembleWeights(pub BTreeMap<ArchitectureId, f64>);

impl Default for EnsembleWeights {
    fn default() -> Self {
        EnsembleWeights(BTreeMap::from([
            (ArchitectureId::Lstm, 0.5),
            (ArchitectureId::Fcnn, 0.3),
            (ArchitectureId::Cnn, 0.2),
        ]))
    }
}

impl EnsembleWeights {
    /// Checks the weights and rescales them to sum to one.
    pub fn normalized(&self) -> Result<EnsembleWeights> {
        if self.0.is_empty() {
            return Err(Error::Config("ensemble needs at least one weight".into()));
        }
        if let Some((id, w)) = self.0.iter().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("weight for {id} is {w}; weights must be non-negative")));
        }
        let total: f64 = self.0.values().sum();
        if total <= 0.0 {
            return Err(Error::Config("ensemble weights sum to zero".into()));
        }
        Ok(EnsembleWeights(self.0.iter().map(|(&k, &w)| (k, w / total)).collect()))
    }

    pub fn get(&self, id: ArchitectureId) -> Option<f64> {
        self.0.get(&id).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleForecast {
    /// Normalized weights.
    pub weights: EnsembleWeights,
    pub start_date: NaiveDate,
    /// Weighted prediction, defined where every member is.
    pub prediction: Vec<Option<f64>>,
    pub members: Vec<ModelForecast>,
}

impl EnsembleForecast {
    pub fn len(&self) -> usize {
        self.prediction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prediction.is_empty()
    }

    pub fn member(&self, id: ArchitectureId) -> Option<&ModelForecast> {
        self.members.iter().find(|m| m.architecture == id)
    }

    /// Coverage of the ensemble: the smallest member coverage at each step.
    pub fn coverage(&self) -> Vec<usize> {
        (0..self.len())
            .map(|t| self.members.iter().map(|m| m.coverage[t]).min().unwrap_or(0))
            .collect()
    }
}

pub fn ensemble(members: Vec<ModelForecast>, weights: &EnsembleWeights) -> Result<EnsembleForecast> {
    let first = members
        .first()
        .ok_or_else(|| Error::Config("ensemble needs at least one member".into()))?;
    let (start, len) = (first.start_date, first.len());
    for m in &members {
        if m.start_date != start || m.len() != len || m.coverage.len() != len {
            return Err(Error::Alignment(format!(
                "{} forecast spans {} days from {}, expected {len} days from {start}",
                m.architecture,
                m.len(),
                m.start_date
            )));
        }
    }
    let ids: Vec<ArchitectureId> = members.iter().map(|m| m.architecture).collect();
    let mut unique = ids.clone();
    unique.sort();
    unique.dedup();
    if unique.len() != ids.len() {
        return Err(Error::Config("duplicate ensemble member".into()));
    }
    if unique != weights.0.keys().copied().collect::<Vec<_>>() {
        return Err(Error::Config(format!(
            "weights cover {:?} but members are {:?}",
            weights.0.keys().collect::<Vec<_>>(),
            unique
        )));
    }
    let weights = weights.normalized()?;
    // Fixed summation order, so member order cannot change the rounding.
    let mut ordered: Vec<&ModelForecast> = members.iter().collect();
    ordered.sort_by_key(|m| m.architecture);
    let prediction = (0..len)
        .map(|t| {
            ordered.iter().try_fold(0.0, |acc, m| {
                m.prediction[t].map(|p| acc + weights.0[&m.architecture] * p)
            })
        })
        .collect();
    Ok(EnsembleForecast {
        weights,
        start_date: start,
        prediction,
        members,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `date,observed,fcnn,cnn,lstm,ensemble,coverage`; absent values are empty cells.
pub fn write_forecast_csv(path: &Path, series: &NtlSeries, forecast: &EnsembleForecast) -> Result<()> {
    if series.start_date != forecast.start_date || series.len() != forecast.len() {
        return Err(Error::Alignment("forecast does not span the observed series".into()));
    }
    let coverage = forecast.coverage();
    let member = |id, t: usize| forecast.member(id).and_then(|m| m.prediction[t]);
    let bytes = util::csv_bytes(|w| {
        w.write_record(["date", "observed", "fcnn", "cnn", "lstm", "ensemble", "coverage"])?;
        for t in 0..series.len() {
            let observed = (!series.gap_mask[t]).then(|| series.values[t]);
            w.write_record([
                series.date(t).to_string(),
                cell(observed),
                cell(member(ArchitectureId::Fcnn, t)),
                cell(member(ArchitectureId::Cnn, t)),
                cell(member(ArchitectureId::Lstm, t)),
                cell(forecast.prediction[t]),
                coverage[t].to_string(),
            ])?;
        }
        Ok(())
    })?;
    util::write_atomic(path, &bytes)
}

/// One row of a forecast CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ForecastRow {
    pub date: NaiveDate,
    pub observed: Option<f64>,
    pub fcnn: Option<f64>,
    pub cnn: Option<f64>,
    pub lstm: Option<f64>,
    pub ensemble: Option<f64>,
    pub coverage: usize,
}

pub fn read_forecast_csv(path: &Path) -> Result<Vec<ForecastRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .enumerate()
        .map(|(k, row)| {
            row.map_err(|e| Error::Parse {
                line: k as u64 + 2,
                message: e.to_string(),
            })
        })
        .collect()
}
