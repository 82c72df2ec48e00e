//! The three baseline forecasters and their training loop.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::NtlSeries;
use crate::nn::{
    mae_loss, AdamConfig, AdamState, Init, LayerSpec, Mode, Network, NetworkState, Padding, Regularization, Tensor,
};
use crate::util;

pub const CHECKPOINT_FORMAT: &str = "ntl-change/checkpoint/v1";
pub const DROPOUT_RATE: f64 = 0.1;
const INFER_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArchitectureId {
    #[serde(rename = "FCNN")]
    Fcnn,
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "LSTM")]
    Lstm,
}

impl ArchitectureId {
    pub const ALL: [ArchitectureId; 3] = [ArchitectureId::Fcnn, ArchitectureId::Cnn, ArchitectureId::Lstm];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchitectureId::Fcnn => "FCNN",
            ArchitectureId::Cnn => "CNN",
            ArchitectureId::Lstm => "LSTM",
        }
    }

    fn stream(self) -> u64 {
        match self {
            ArchitectureId::Fcnn => 0,
            ArchitectureId::Cnn => 2,
            ArchitectureId::Lstm => 4,
        }
    }
}

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchitectureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FCNN" => Ok(ArchitectureId::Fcnn),
            "CNN" => Ok(ArchitectureId::Cnn),
            "LSTM" => Ok(ArchitectureId::Lstm),
            _ => Err(Error::Config(format!("unknown architecture `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochCounts {
    #[serde(rename = "FCNN")]
    pub fcnn: usize,
    #[serde(rename = "CNN")]
    pub cnn: usize,
    #[serde(rename = "LSTM")]
    pub lstm: usize,
}

impl Default for EpochCounts {
    fn default() -> Self {
        EpochCounts {
            fcnn: 70,
            cnn: 90,
            lstm: 25,
        }
    }
}

impl EpochCounts {
    pub fn get(&self, id: ArchitectureId) -> usize {
        match id {
            ArchitectureId::Fcnn => self.fcnn,
            ArchitectureId::Cnn => self.cnn,
            ArchitectureId::Lstm => self.lstm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub input_window: usize,
    pub output_window: usize,
    pub split_fraction: f64,
    pub batch_size: usize,
    pub epochs: EpochCounts,
    pub seed: u64,
    pub adam: AdamConfig,
    pub regularization: Regularization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            input_window: 60,
            output_window: 30,
            split_fraction: 0.8,
            batch_size: 64,
            epochs: EpochCounts::default(),
            seed: 0,
            adam: AdamConfig::default(),
            regularization: Regularization::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.output_window && self.output_window < self.input_window) {
            return Err(Error::Config(format!(
                "windows must satisfy 1 <= w_o < w_i (got w_i = {}, w_o = {})",
                self.input_window, self.output_window
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!("split fraction {} outside (0, 1)", self.split_fraction)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let Some(cap) = self.regularization.max_norm {
            if !(cap > 0.0) {
                return Err(Error::Config(format!("max-norm cap {cap} must be positive")));
            }
        }
        if !(self.regularization.activity_l2 >= 0.0) {
            return Err(Error::Config("activity regularization must be non-negative".into()));
        }
        AdamState::new(self.adam).map(|_| ())
    }
}

/// One training or inference unit: `w_i` inputs followed by the next `w_o` values.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    /// Series index of the first input day.
    pub start: usize,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// All stride-1 window pairs whose span is free of masked days, in order.
pub fn make_windows(series: &NtlSeries, w_i: usize, w_o: usize) -> Result<Vec<WindowPair>> {
    if w_i == 0 || w_o == 0 {
        return Err(Error::Config("window lengths must be at least 1".into()));
    }
    let span = w_i + w_o;
    let unmasked = series.len() - series.masked_days();
    if unmasked < span {
        return Err(Error::insufficient("window pairs (unmasked days)", span, unmasked));
    }
    // Index of the most recent masked day at or before each position.
    let mut last_gap: Option<usize> = None;
    let mut pairs = Vec::new();
    for end in 0..series.len() {
        if series.gap_mask[end] {
            last_gap = Some(end);
        }
        if end + 1 < span {
            continue;
        }
        let start = end + 1 - span;
        if last_gap.is_some_and(|g| g >= start) {
            continue;
        }
        pairs.push(WindowPair {
            start,
            input: series.values[start..start + w_i].to_vec(),
            target: series.values[start + w_i..=end].to_vec(),
        });
    }
    Ok(pairs)
}

/// Affine map to and from training-set standard scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub scale: f64,
}

impl Normalization {
    /// Mean and population standard deviation; a (near-)constant sample gets scale 1.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::insufficient("normalization sample", 1, 0));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-9 * mean.abs().max(1.0) { sd } else { 1.0 };
        Ok(Normalization { mean, scale })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.scale + self.mean
    }
}

/// Layer stack for `id` plus the indices of layers whose outputs carry the activity penalty.
pub fn architecture_layers(id: ArchitectureId, w_i: usize, w_o: usize) -> Result<(Vec<LayerSpec>, Vec<usize>)> {
    if w_i == 0 || w_o == 0 {
        return Err(Error::Config("window lengths must be at least 1".into()));
    }
    let mut layers = Vec::new();
    let mut regularized = Vec::new();
    let dense_block = |layers: &mut Vec<LayerSpec>, regularized: &mut Vec<usize>, inputs, units| {
        layers.push(LayerSpec::Dense {
            inputs,
            units,
            init: Init::HeUniform,
        });
        layers.push(LayerSpec::Relu);
        regularized.push(layers.len() - 1);
        layers.push(LayerSpec::Dropout { rate: DROPOUT_RATE });
    };
    let last_hidden = match id {
        ArchitectureId::Fcnn => {
            let mut width = w_i;
            for units in [60, 45, 25] {
                dense_block(&mut layers, &mut regularized, width, units);
                width = units;
            }
            width
        }
        ArchitectureId::Cnn => {
            if w_i < 4 {
                return Err(Error::Config(format!(
                    "CNN needs an input window of at least 4 days for its two pooling stages (got {w_i})"
                )));
            }
            let mut channels = 1;
            let mut len = w_i;
            for (block, (filters, kernel)) in [(90, 9), (45, 9), (30, 6), (20, 6)].into_iter().enumerate() {
                layers.push(LayerSpec::Conv1d {
                    in_channels: channels,
                    filters,
                    kernel,
                    padding: Padding::Same,
                });
                layers.push(LayerSpec::Relu);
                if block < 2 {
                    layers.push(LayerSpec::Maxpool1d { width: 2, stride: 2 });
                    len /= 2;
                }
                layers.push(LayerSpec::Batchnorm { features: filters });
                layers.push(LayerSpec::Dropout { rate: DROPOUT_RATE });
                channels = filters;
            }
            layers.push(LayerSpec::Flatten);
            let mut width = len * channels;
            for units in [20, 15] {
                dense_block(&mut layers, &mut regularized, width, units);
                width = units;
            }
            width
        }
        ArchitectureId::Lstm => {
            layers.push(LayerSpec::Lstm {
                inputs: 1,
                units: 45,
                return_sequences: true,
            });
            layers.push(LayerSpec::Dropout { rate: DROPOUT_RATE });
            layers.push(LayerSpec::Lstm {
                inputs: 45,
                units: 30,
                return_sequences: false,
            });
            layers.push(LayerSpec::Dropout { rate: DROPOUT_RATE });
            let mut width = 30;
            for units in [30, 15] {
                dense_block(&mut layers, &mut regularized, width, units);
                width = units;
            }
            width
        }
    };
    layers.push(LayerSpec::Dense {
        inputs: last_hidden,
        units: w_o,
        init: Init::GlorotUniform,
    });
    Ok((layers, regularized))
}

/// Note stored with CNN checkpoints describing how the conv stack was made to fit `w_i`.
pub const CNN_GEOMETRY_NOTE: &str =
    "conv1d padding 'same'; max-pooling (width 2, stride 2) after the first two conv blocks only";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean batch MAE over the epoch, in radiance units.
    pub train_mae: f64,
    /// Inference-mode MAE on the validation pairs, in radiance units.
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub architecture: ArchitectureId,
    pub history: Vec<EpochLoss>,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub gradient_steps: usize,
    /// Validation samples that reached a gradient update. Always zero; kept as an audit counter.
    pub validation_samples_in_updates: usize,
}

/// A forecaster: network, normalization and the configuration it was trained with.
#[derive(Debug, Clone)]
pub struct ForecastModel {
    pub architecture: ArchitectureId,
    network: Network,
    pub normalization: Normalization,
    pub config: TrainConfig,
    pub final_train_mae: Option<f64>,
    pub final_val_mae: Option<f64>,
}

fn arch_rng(seed: u64, id: ArchitectureId, offset: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id.stream() + offset);
    rng
}

impl ForecastModel {
    /// Untrained model with identity normalization.
    pub fn build(id: ArchitectureId, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let (layers, regularized) = architecture_layers(id, config.input_window, config.output_window)?;
        let mut rng = arch_rng(config.seed, id, 0);
        let network = Network::new(layers, regularized, config.regularization, &mut rng)?;
        Ok(ForecastModel {
            architecture: id,
            network,
            normalization: Normalization { mean: 0.0, scale: 1.0 },
            config: config.clone(),
            final_train_mae: None,
            final_val_mae: None,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn input_window(&self) -> usize {
        self.config.input_window
    }

    pub fn output_window(&self) -> usize {
        self.config.output_window
    }

    pub fn parameter_count(&self) -> usize {
        self.network.parameter_count()
    }

    fn input_shape(&self, batch: usize) -> Vec<usize> {
        match self.architecture {
            ArchitectureId::Fcnn => vec![batch, self.config.input_window],
            ArchitectureId::Cnn | ArchitectureId::Lstm => vec![batch, self.config.input_window, 1],
        }
    }

    /// Forecasts for a flat `[count, w_i]` block of raw inputs, returned flat as `[count, w_o]`.
    pub fn predict_flat(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let w_i = self.config.input_window;
        if inputs.len() % w_i != 0 {
            return Err(Error::shape(format!("a multiple of {w_i} values"), inputs.len()));
        }
        if let Some(bad) = inputs.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("forecast input contains {bad}")));
        }
        let mut net = self.network.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let norm = self.normalization;
        let mut out = Vec::with_capacity(inputs.len() / w_i * self.config.output_window);
        for chunk in inputs.chunks(INFER_CHUNK * w_i) {
            let x = Tensor::new(
                self.input_shape(chunk.len() / w_i),
                chunk.iter().map(|&v| norm.normalize(v)).collect(),
            )?;
            let y = net.forward(&x, Mode::Infer, &mut rng)?;
            out.extend(y.data().iter().map(|&z| norm.denormalize(z)));
        }
        Ok(out)
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.config.input_window {
            return Err(Error::shape(self.config.input_window, input.len()));
        }
        self.predict_flat(input)
    }

    /// Trains on `pairs`: the chronologically first `split_fraction` train, the rest validate.
    pub fn train(&mut self, pairs: &[WindowPair]) -> Result<TrainReport> {
        let cfg = self.config.clone();
        let (w_i, w_o) = (cfg.input_window, cfg.output_window);
        if let Some(p) = pairs.iter().find(|p| p.input.len() != w_i || p.target.len() != w_o) {
            return Err(Error::shape(
                format!("{w_i} inputs and {w_o} targets"),
                format!("{} and {} (pair starting at {})", p.input.len(), p.target.len(), p.start),
            ));
        }
        let n_train = (pairs.len() as f64 * cfg.split_fraction).floor() as usize;
        let n_val = pairs.len() - n_train;
        if n_train == 0 || n_val == 0 {
            return Err(Error::insufficient("training and validation pairs", 2, pairs.len()));
        }
        let (train, val) = pairs.split_at(n_train);

        // Statistics over the distinct days the training pairs cover.
        let mut days = BTreeMap::new();
        for p in train {
            for (k, &v) in p.input.iter().chain(&p.target).enumerate() {
                days.entry(p.start + k).or_insert(v);
            }
        }
        let norm = Normalization::fit(&days.into_values().collect::<Vec<_>>())?;
        self.normalization = norm;

        let flatten = |set: &[WindowPair], target: bool| -> Vec<f64> {
            set.iter()
                .flat_map(|p| if target { &p.target } else { &p.input })
                .map(|&v| norm.normalize(v))
                .collect()
        };
        let (xt, yt) = (flatten(train, false), flatten(train, true));
        let (xv, yv) = (flatten(val, false), flatten(val, true));

        let mut rng = arch_rng(cfg.seed, self.architecture, 1);
        let mut adam = AdamState::new(cfg.adam)?;
        let mut order: Vec<usize> = (0..n_train).collect();
        let epochs = cfg.epochs.get(self.architecture);
        let mut report = TrainReport {
            architecture: self.architecture,
            history: Vec::with_capacity(epochs),
            train_pairs: n_train,
            val_pairs: n_val,
            gradient_steps: 0,
            validation_samples_in_updates: 0,
        };
        let mut bx = Vec::with_capacity(cfg.batch_size * w_i);
        let mut by = Vec::with_capacity(cfg.batch_size * w_o);
        for epoch in 1..=epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                bx.clear();
                by.clear();
                for &i in batch {
                    // `order` only ever holds training indices; count anything else.
                    if i >= n_train {
                        report.validation_samples_in_updates += 1;
                    }
                    bx.extend_from_slice(&xt[i * w_i..(i + 1) * w_i]);
                    by.extend_from_slice(&yt[i * w_o..(i + 1) * w_o]);
                }
                let x = Tensor::new(self.input_shape(batch.len()), bx.clone())?;
                let y = Tensor::new(vec![batch.len(), w_o], by.clone())?;
                let pred = self.network.forward(&x, Mode::Train, &mut rng)?;
                let (loss, grad) = mae_loss(&pred, &y)?;
                self.network.backward(&grad)?;
                adam.step(&mut self.network.params_mut())?;
                self.network.apply_constraints();
                report.gradient_steps += 1;
                loss_sum += loss * batch.len() as f64;
                if !loss.is_finite() {
                    return Err(Error::State(format!(
                        "{} training diverged at epoch {epoch}",
                        self.architecture
                    )));
                }
            }
            let train_mae = loss_sum / n_train as f64 * norm.scale;
            let val_mae = self.normalized_mae(&xv, &yv)? * norm.scale;
            log::debug!("{} epoch {epoch}/{epochs}: train MAE {train_mae:.5}, val MAE {val_mae:.5}", self.architecture);
            report.history.push(EpochLoss {
                epoch,
                train_mae,
                val_mae,
            });
        }
        if let Some(last) = report.history.last() {
            self.final_train_mae = Some(last.train_mae);
            self.final_val_mae = Some(last.val_mae);
            log::info!(
                "{} trained: {} epochs, train MAE {:.4}, val MAE {:.4}{}",
                self.architecture,
                epochs,
                last.train_mae,
                last.val_mae,
                if plateaued(&report.history) { " (validation loss plateaued)" } else { "" }
            );
        }
        Ok(report)
    }

    fn normalized_mae(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let (w_i, w_o) = (self.config.input_window, self.config.output_window);
        let n = x.len() / w_i;
        let mut net = self.network.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut total = 0.0;
        for start in (0..n).step_by(INFER_CHUNK) {
            let end = (start + INFER_CHUNK).min(n);
            let xt = Tensor::new(self.input_shape(end - start), x[start * w_i..end * w_i].to_vec())?;
            let pred = net.forward(&xt, Mode::Infer, &mut rng)?;
            total += pred
                .data()
                .iter()
                .zip(&y[start * w_o..end * w_o])
                .map(|(p, t)| (p - t).abs())
                .sum::<f64>();
        }
        Ok(total / (n * w_o) as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            architecture: self.architecture,
            geometry: (self.architecture == ArchitectureId::Cnn).then(|| CNN_GEOMETRY_NOTE.to_string()),
            seed: self.config.seed,
            train_config: self.config.clone(),
            normalization: self.normalization,
            final_train_mae: self.final_train_mae,
            final_val_mae: self.final_val_mae,
            network: self.network.state(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}` (expected `{CHECKPOINT_FORMAT}`)",
                ck.format
            )));
        }
        ck.train_config.validate()?;
        let (layers, _) = architecture_layers(
            ck.architecture,
            ck.train_config.input_window,
            ck.train_config.output_window,
        )?;
        if layers != ck.network.layers {
            return Err(Error::Checkpoint(format!(
                "layer stack does not match the {} architecture",
                ck.architecture
            )));
        }
        if !(ck.normalization.scale > 0.0 && ck.normalization.scale.is_finite() && ck.normalization.mean.is_finite()) {
            return Err(Error::Checkpoint("normalization scale must be positive".into()));
        }
        Ok(ForecastModel {
            architecture: ck.architecture,
            network: Network::from_state(&ck.network)?,
            normalization: ck.normalization,
            config: ck.train_config.clone(),
            final_train_mae: ck.final_train_mae,
            final_val_mae: ck.final_val_mae,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = util::read_json(path)?;
        ForecastModel::from_checkpoint(&ck)
    }
}

/// True when the last quarter of epochs improved validation MAE by under 1%.
fn plateaued(history: &[EpochLoss]) -> bool {
    let n = history.len();
    if n < 8 {
        return false;
    }
    let best = |h: &[EpochLoss]| h.iter().map(|e| e.val_mae).fold(f64::INFINITY, f64::min);
    let before = best(&history[..n - n / 4]);
    let after = best(&history[n - n / 4..]);
    after > 0.99 * before
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub architecture: ArchitectureId,
    /// Deviation from the nominal layer geometry, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<String>,
    pub seed: u64,
    pub train_config: TrainConfig,
    pub normalization: Normalization,
    pub final_train_mae: Option<f64>,
    pub final_val_mae: Option<f64>,
    pub network: NetworkState,
}

pub fn write_history_csv(path: &Path, history: &[EpochLoss]) -> Result<()> {
    let bytes = util::csv_bytes(|w| {
        w.write_record(["epoch", "train_mae", "val_mae"])?;
        for e in history {
            w.write_record([e.epoch.to_string(), e.train_mae.to_string(), e.val_mae.to_string()])?;
        }
        Ok(())
    })?;
    util::write_atomic(path, &bytes)
}

/// Trains all three architectures on the same pairs, one thread each.
pub fn train_all(pairs: &[WindowPair], config: &TrainConfig) -> Result<Vec<(ForecastModel, TrainReport)>> {
    config.validate()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = ArchitectureId::ALL
            .iter()
            .map(|&id| {
                scope.spawn(move || {
                    let mut model = ForecastModel::build(id, config)?;
                    let report = model.train(pairs)?;
                    Ok((model, report))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::State("training thread panicked".into()))))
            .collect()
    })
}
