//! Command-line front end. `main.rs` only parses and reports; everything here is callable in-process.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::detect::{ChangeReport, Phase, ThresholdMode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, read_ground_truth, GroundTruthEvent, DEFAULT_BETA};
use crate::forecast::{read_forecast_csv, write_forecast_csv};
use crate::ingest::{ingest_file, write_zone_csv, NtlSeries};
use crate::models::{write_history_csv, ArchitectureId, ForecastModel};
use crate::synth::{self, presets, ScenarioSpec};
use crate::{pipeline, util};

#[derive(Debug, Parser)]
#[command(name = "ntl-change", version, about = "Change detection in daily nighttime-light series")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Global {
    /// Run configuration (JSON, versioned).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the training / scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

/// One-to-one overrides of config fields.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub zone_id: Option<String>,
    /// Pixel or zone CSV.
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long)]
    pub training_end: Option<NaiveDate>,
    #[arg(long)]
    pub smoothing_window: Option<usize>,
    #[arg(long)]
    pub t_percent: Option<f64>,
    #[arg(long)]
    pub min_persistence: Option<usize>,
    /// Switch to a trailing-window threshold of this many days.
    #[arg(long)]
    pub streaming_window: Option<usize>,
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pixel or zone CSV → smoothed zone CSV (`<out>/zone.csv`).
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        zone_id: Option<String>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Trains FCNN, CNN and LSTM; writes `models/*.json` and `logs/*_history.csv`.
    Train(Overrides),
    /// Ensemble forecast and change report; writes `forecast.csv` and `report.json`.
    Detect(Overrides),
    /// Scores a change report against ground truth; writes `eval.json`.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        /// Defaults to `<out>/report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
    },
    /// Synthetic series with ground truth; writes `series.csv`, `truth.csv`, `scenario.json`, `config.json`.
    Simulate {
        /// disaster, conflict, urbanization or none.
        #[arg(long, conflicts_with = "scenario")]
        preset: Option<String>,
        /// Scenario JSON.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Fraction of days to mask at random.
        #[arg(long, default_value_t = 0.0)]
        gap_fraction: f64,
        /// Training end written into `config.json`; defaults to the day before the change.
        #[arg(long)]
        training_end: Option<NaiveDate>,
    },
    /// Tidy CSVs for plotting under `<out>/plot/`.
    Plot {
        /// Defaults to `<out>/forecast.csv`.
        #[arg(long)]
        forecast: Option<PathBuf>,
        /// Defaults to `<out>/report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest { input, zone_id, window } => cmd_ingest(g, input, zone_id.as_deref(), *window),
        Command::Train(o) => cmd_train(&resolve(g, o)?),
        Command::Detect(o) => cmd_detect(&resolve(g, o)?),
        Command::Eval { overrides, report, beta } => cmd_eval(g, overrides, report.as_deref(), *beta),
        Command::Simulate {
            preset,
            scenario,
            gap_fraction,
            training_end,
        } => cmd_simulate(g, preset.as_deref(), scenario.as_deref(), *gap_fraction, *training_end),
        Command::Plot { forecast, report } => cmd_plot(g, forecast.as_deref(), report.as_deref()),
    }
}

fn optional_config(g: &Global) -> Result<Option<RunConfig>> {
    g.config.as_deref().map(RunConfig::load).transpose()
}

/// Config file (if any) with flags applied on top, validated.
pub fn resolve(g: &Global, o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match optional_config(g)? {
        Some(cfg) => cfg,
        None => {
            let (Some(series), Some(end)) = (o.series.clone(), o.training_end) else {
                return Err(Error::Config("either --config or both --series and --training-end are required".into()));
            };
            let zone = series.file_stem().map_or("zone".into(), |s| s.to_string_lossy().into_owned());
            RunConfig::new(zone, series, end)
        }
    };
    if let Some(v) = &o.zone_id {
        cfg.zone_id = v.clone();
    }
    if let Some(v) = &o.series {
        cfg.series = v.clone();
    }
    if let Some(v) = o.training_end {
        cfg.training_end = v;
    }
    if let Some(v) = o.smoothing_window {
        cfg.smoothing_window = v;
    }
    if let Some(v) = o.t_percent {
        cfg.detect.t_percent = v;
    }
    if let Some(v) = o.min_persistence {
        cfg.detect.segments.min_persistence = v;
    }
    if let Some(window) = o.streaming_window {
        cfg.detect.threshold = ThresholdMode::Streaming { window };
    }
    if let Some(v) = &o.ground_truth {
        cfg.ground_truth = Some(v.clone());
    }
    if let Some(v) = g.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = &g.out {
        cfg.out_dir = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(g: &Global, cfg: Option<&RunConfig>) -> PathBuf {
    g.out
        .clone()
        .or_else(|| cfg.map(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn zone_csv_bytes(series: &NtlSeries) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_zone_csv(series, &mut buf)?;
    Ok(buf)
}

/// Loads and smooths the configured input series.
pub fn load_series(cfg: &RunConfig) -> Result<NtlSeries> {
    ingest_file(&cfg.series, &cfg.zone_id, cfg.smoothing_window)
}

pub fn checkpoint_path(out: &Path, id: ArchitectureId) -> PathBuf {
    out.join("models").join(format!("{}.json", id.as_str().to_lowercase()))
}

fn cmd_ingest(g: &Global, input: &Path, zone_id: Option<&str>, window: Option<usize>) -> Result<()> {
    let cfg = optional_config(g)?;
    let zone = zone_id
        .map(str::to_string)
        .or_else(|| cfg.as_ref().map(|c| c.zone_id.clone()))
        .unwrap_or_else(|| input.file_stem().map_or("zone".into(), |s| s.to_string_lossy().into_owned()));
    let window = window.or(cfg.as_ref().map(|c| c.smoothing_window)).unwrap_or(crate::ingest::DEFAULT_SMOOTHING_WINDOW);
    let series = ingest_file(input, &zone, window)?;
    let out = out_dir(g, cfg.as_ref());
    ensure_dir(&out)?;
    util::write_atomic(&out.join("zone.csv"), &zone_csv_bytes(&series)?)?;
    log::info!("{zone}: {} days, {} masked", series.len(), series.masked_days());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    architecture: ArchitectureId,
    epochs: usize,
    final_train_mae: Option<f64>,
    final_val_mae: Option<f64>,
    parameters: usize,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let series = load_series(cfg)?;
    let trained = pipeline::train_models(&series, cfg.training_end, &cfg.train)?;
    let out = &cfg.out_dir;
    ensure_dir(&out.join("models"))?;
    ensure_dir(&out.join("logs"))?;
    let mut summary = Vec::new();
    for (model, report) in &trained {
        let id = model.architecture;
        model.save(&checkpoint_path(out, id))?;
        write_history_csv(
            &out.join("logs").join(format!("{}_history.csv", id.as_str().to_lowercase())),
            &report.history,
        )?;
        let last = report.history.last();
        log::info!(
            "{id}: val MAE {:.4} after {} epochs",
            last.map_or(f64::NAN, |e| e.val_mae),
            report.history.len()
        );
        summary.push(TrainSummary {
            architecture: id,
            epochs: report.history.len(),
            final_train_mae: last.map(|e| e.train_mae),
            final_val_mae: last.map(|e| e.val_mae),
            parameters: model.parameter_count(),
        });
    }
    util::write_json(&out.join("logs").join("train_summary.json"), &summary)
}

/// Loads checkpoints for every weighted architecture and checks them against the config.
pub fn load_models(cfg: &RunConfig) -> Result<Vec<ForecastModel>> {
    let weights = cfg.weights.normalized()?;
    let mut models = Vec::new();
    for &id in weights.0.keys() {
        let path = checkpoint_path(&cfg.out_dir, id);
        if !path.exists() {
            return Err(Error::Validation(format!("missing checkpoint {} (run `train` first)", path.display())));
        }
        let m = ForecastModel::load(&path)?;
        if m.architecture != id {
            return Err(Error::Validation(format!("{} holds a {} model, expected {id}", path.display(), m.architecture)));
        }
        if m.input_window() != cfg.train.input_window || m.output_window() != cfg.train.output_window {
            return Err(Error::Validation(format!(
                "{} was trained with w_i = {}, w_o = {}; config asks for w_i = {}, w_o = {}",
                path.display(),
                m.input_window(),
                m.output_window(),
                cfg.train.input_window,
                cfg.train.output_window
            )));
        }
        models.push(m);
    }
    Ok(models)
}

pub fn cmd_detect(cfg: &RunConfig) -> Result<()> {
    let models = load_models(cfg)?;
    let series = load_series(cfg)?;
    let (forecast, report) = pipeline::run_detection(&models, &series, cfg.training_end, &cfg.weights, &cfg.detect)?;
    ensure_dir(&cfg.out_dir)?;
    write_forecast_csv(&cfg.out_dir.join("forecast.csv"), &series, &forecast)?;
    util::write_json(&cfg.out_dir.join("report.json"), &report)?;
    log::info!(
        "{}: {} segment(s), persistent fraction {:.3}",
        report.zone_id,
        report.segments.len(),
        report.persistent_fraction()
    );
    Ok(())
}

fn cmd_eval(g: &Global, o: &Overrides, report: Option<&Path>, beta: f64) -> Result<()> {
    let cfg = optional_config(g)?;
    let out = out_dir(g, cfg.as_ref());
    let report_path = report.map_or_else(|| out.join("report.json"), Path::to_path_buf);
    let report: ChangeReport = util::read_json(&report_path)?;
    let truth_path = o
        .ground_truth
        .clone()
        .or_else(|| cfg.as_ref().and_then(|c| c.ground_truth.clone()));
    let truth: Vec<GroundTruthEvent> = match truth_path {
        Some(p) => read_ground_truth(&p)?,
        None => Vec::new(),
    };
    let result = evaluate(&report, &truth, beta)?;
    ensure_dir(&out)?;
    util::write_json(&out.join("eval.json"), &result)?;
    log::info!(
        "{}: recall {:?}, precision {:?}, F{beta} {:?}, delay {:?}",
        result.zone_id,
        result.recall,
        result.precision,
        result.f_beta,
        result.delay
    );
    Ok(())
}

fn cmd_simulate(
    g: &Global,
    preset: Option<&str>,
    scenario: Option<&Path>,
    gap_fraction: f64,
    training_end: Option<NaiveDate>,
) -> Result<()> {
    let seed = g.seed.unwrap_or(0);
    let mut spec: ScenarioSpec = match (preset, scenario) {
        (Some(name), None) => presets::by_name(name, seed)?,
        (None, Some(path)) => util::read_json(path)?,
        _ => return Err(Error::Config("pass exactly one of --preset or --scenario".into())),
    };
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    let sc = synth::generate(&spec)?;
    let series = if gap_fraction > 0.0 {
        synth::inject_gaps(&sc.series, gap_fraction, spec.seed.wrapping_add(1))?
    } else {
        sc.series
    };
    let training_end = match (training_end, preset) {
        (Some(d), _) => d,
        (None, Some(_)) => presets::training_end(),
        (None, None) => spec
            .change_start
            .map(|d| d - Duration::days(1))
            .unwrap_or_else(|| series.date(series.len() * 7 / 10)),
    };
    let mut run = RunConfig::new(spec.zone_id.clone(), "series.csv".into(), training_end);
    run.ground_truth = Some("truth.csv".into());
    run.out_dir = ".".into();
    run.train.seed = spec.seed;

    let out = out_dir(g, None);
    ensure_dir(&out)?;
    util::write_atomic(&out.join("series.csv"), &zone_csv_bytes(&series)?)?;
    let truth: Vec<GroundTruthEvent> = sc.truth.into_iter().collect();
    util::write_atomic(&out.join("truth.csv"), &crate::eval::ground_truth_csv(&truth)?)?;
    util::write_json(&out.join("scenario.json"), &spec)?;
    util::write_json(&out.join("config.json"), &run)?;
    log::info!("{}: {} days written to {}", spec.zone_id, series.len(), out.display());
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_plot(g: &Global, forecast: Option<&Path>, report: Option<&Path>) -> Result<()> {
    let cfg = optional_config(g)?;
    let out = out_dir(g, cfg.as_ref());
    let rows = read_forecast_csv(&forecast.map_or_else(|| out.join("forecast.csv"), Path::to_path_buf))?;
    let report: ChangeReport = util::read_json(&report.map_or_else(|| out.join("report.json"), Path::to_path_buf))?;
    let dir = out.join("plot");
    ensure_dir(&dir)?;

    let series = util::csv_bytes(|w| {
        w.write_record(["date", "series", "value"])?;
        for r in &rows {
            let cols = [
                ("observed", r.observed),
                ("fcnn", r.fcnn),
                ("cnn", r.cnn),
                ("lstm", r.lstm),
                ("ensemble", r.ensemble),
            ];
            for (name, v) in cols {
                if let Some(v) = v {
                    w.write_record([r.date.to_string(), name.to_string(), v.to_string()])?;
                }
            }
        }
        Ok(())
    })?;

    let residuals = util::csv_bytes(|w| {
        w.write_record(["date", "residual", "tau", "flagged", "persistent", "confidence"])?;
        for s in &report.steps {
            w.write_record([
                s.date.to_string(),
                cell(s.r),
                cell(s.tau),
                s.flagged.to_string(),
                s.persistent.to_string(),
                s.confidence.to_string(),
            ])?;
        }
        Ok(())
    })?;

    // Contiguous runs of one phase label.
    let mut bands: Vec<(Phase, NaiveDate, NaiveDate)> = Vec::new();
    for s in &report.steps {
        match bands.last_mut() {
            Some((p, _, end)) if *p == s.phase && *end + Duration::days(1) == s.date => *end = s.date,
            _ => bands.push((s.phase, s.date, s.date)),
        }
    }
    let phases = util::csv_bytes(|w| {
        w.write_record(["phase", "start", "end"])?;
        for (p, a, b) in &bands {
            w.write_record([p.to_string(), a.to_string(), b.to_string()])?;
        }
        Ok(())
    })?;

    let rates = util::csv_bytes(|w| {
        w.write_record(["zone_id", "start", "inflection", "end", "open", "lambda_s", "lambda_e", "mean_severity", "direction"])?;
        for seg in &report.segments {
            w.write_record([
                report.zone_id.clone(),
                seg.s.to_string(),
                seg.i.to_string(),
                seg.e.to_string(),
                seg.open.to_string(),
                seg.lambda_s.to_string(),
                seg.lambda_e.to_string(),
                seg.mean_severity.to_string(),
                seg.direction.to_string(),
            ])?;
        }
        Ok(())
    })?;

    util::write_atomic(&dir.join("series.csv"), &series)?;
    util::write_atomic(&dir.join("residuals.csv"), &residuals)?;
    util::write_atomic(&dir.join("phases.csv"), &phases)?;
    util::write_atomic(&dir.join("rates.csv"), &rates)?;
    Ok(())
}
