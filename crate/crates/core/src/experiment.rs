//! The three-alignment experiment: simulate, align on ground truth, on the
//! cause channel and on the effect channel, then select an order per panel.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{align_and_extract, Alignment, DetectionConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::order_selection::{select_order, BicCurve, CriterionConfig};
use crate::panel::{panel_stats, PeriEventWindow, ReferencePointList, TimeSeries};
use crate::simulation::{
    generate_perturbation_events, EventScheduleSpec, PerturbationSpec, SimulationOptions, VarProcessSpec,
    GENERATOR_NAME,
};

/// Everything needed to replay a simulation exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub process: VarProcessSpec,
    pub perturbation: PerturbationSpec,
    /// `schedule.seed` is ignored; `seed` below drives the run.
    pub schedule: EventScheduleSpec,
    pub simulation: SimulationOptions,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            process: VarProcessSpec::coupled_bivariate_var4(),
            perturbation: PerturbationSpec::default(),
            schedule: EventScheduleSpec::default(),
            simulation: SimulationOptions::default(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        self.perturbation.waveform(self.simulation.sample_rate)?;
        Ok(())
    }

    pub fn simulate(&self) -> Result<(TimeSeries, ReferencePointList)> {
        let schedule = EventScheduleSpec {
            seed: self.seed,
            ..self.schedule.clone()
        };
        generate_perturbation_events(&self.process, &self.perturbation, &schedule, &self.simulation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub cause_detection: DetectionConfig,
    pub effect_detection: DetectionConfig,
    pub window: PeriEventWindow,
    pub criterion: CriterionConfig,
    /// Also write the three panels (they can be large under `all_points`).
    pub write_panels: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            cause_detection: DetectionConfig {
                channel: 1,
                label: Some("cause".into()),
                ..DetectionConfig::default()
            },
            effect_detection: DetectionConfig {
                channel: 0,
                label: Some("effect".into()),
                ..DetectionConfig::default()
            },
            window: PeriEventWindow::centered(200),
            criterion: CriterionConfig::default(),
            write_panels: true,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let rate = self.scenario.simulation.sample_rate;
        let channels = self.scenario.process.channels;
        for det in [&self.cause_detection, &self.effect_detection] {
            det.validate(rate)?;
            if det.channel >= channels {
                return Err(Error::Config(format!(
                    "detection channel {} out of range for {channels} channels",
                    det.channel
                )));
            }
        }
        if self.window.is_empty() {
            return Err(Error::Config("peri-event window is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub channel: usize,
    pub n_refs: usize,
    pub threshold: f64,
    pub trace_mean: f64,
    pub trace_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    /// `ground_truth`, `cause` or `effect`.
    pub alignment: String,
    pub n_trials: usize,
    pub dropped: usize,
    pub detection: Option<DetectionSummary>,
    pub curve: BicCurve,
    /// Files written for this branch, relative to the output directory.
    pub files: Vec<String>,
}

impl BranchReport {
    pub fn selected_p(&self) -> usize {
        self.curve.selected_p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub generator: String,
    pub config: ExperimentConfig,
    pub series_len: usize,
    pub n_events: usize,
    pub branches: Vec<BranchReport>,
}

impl RunReport {
    pub fn branch(&self, alignment: &str) -> Option<&BranchReport> {
        self.branches.iter().find(|b| b.alignment == alignment)
    }
}

fn stage<T>(name: &str, completed: &[PathBuf], r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name.to_string(),
        completed: completed.to_vec(),
        source: Box::new(e),
    })
}

fn rel(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir).unwrap_or(path).to_string_lossy().into_owned()
}

/// Runs the experiment. With `output_dir` set, every stage output is written
/// there and `report.json` summarises them; otherwise nothing touches disk.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    stage("config", &[], config.validate())?;
    let out = config.output_dir.as_deref();
    let mut completed = Vec::new();
    if let Some(dir) = out {
        let path = dir.join("config.json");
        stage("config", &completed, io::write_json(&path, config))?;
        completed.push(path);
    }

    let (series, truth) = stage("simulate", &completed, config.scenario.simulate())?;
    if let Some(dir) = out {
        let series_path = dir.join("series.json");
        let refs_path = dir.join("refs_ground_truth.csv");
        let meta = serde_json::json!({ "generator": GENERATOR_NAME, "seed": config.scenario.seed });
        stage("simulate", &completed, io::write_series(&series_path, &series, meta))?;
        stage(
            "simulate",
            &completed,
            io::write_refs_csv(&refs_path, &truth, series.sample_rate()),
        )?;
        completed.extend([series_path, refs_path]);
    }

    let alignments = [
        ("ground_truth", Alignment::GroundTruth(truth.clone())),
        ("cause", Alignment::Detected(config.cause_detection.clone())),
        ("effect", Alignment::Detected(config.effect_detection.clone())),
    ];
    let branches: Vec<Result<BranchReport>> = alignments
        .par_iter()
        .map(|(name, alignment)| run_branch(name, &series, alignment, config))
        .collect();
    let mut reports = Vec::with_capacity(3);
    for b in branches {
        let b = stage("align/select", &completed, b)?;
        if let Some(dir) = out {
            completed.extend(b.files.iter().map(|f| dir.join(f)));
        }
        reports.push(b);
    }

    let report = RunReport {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        generator: GENERATOR_NAME.into(),
        config: config.clone(),
        series_len: series.len(),
        n_events: truth.len(),
        branches: reports,
    };
    if let Some(dir) = out {
        stage("report", &completed, io::write_json(&dir.join("report.json"), &report))?;
    }
    Ok(report)
}

fn run_branch(name: &str, series: &TimeSeries, alignment: &Alignment, config: &ExperimentConfig) -> Result<BranchReport> {
    let aligned = align_and_extract(series, alignment, config.window)
        .map_err(|e| branch_error(name, "extract", e))?;
    let panel = &aligned.panel;
    let curve = select_order(panel, &config.criterion).map_err(|e| branch_error(name, "select", e))?;
    let detection = aligned.detection.as_ref().map(|d| DetectionSummary {
        channel: d.config.channel,
        n_refs: d.refs.len(),
        threshold: d.threshold,
        trace_mean: d.trace_mean,
        trace_std: d.trace_std,
    });

    let mut files = Vec::new();
    if let Some(dir) = config.output_dir.as_deref() {
        let mut written = Vec::new();
        let werr = |e| branch_error(name, "write", e);
        if let Some(d) = &aligned.detection {
            let refs = dir.join(format!("refs_{name}.csv"));
            let meta = dir.join(format!("detection_{name}.json"));
            io::write_refs_csv(&refs, &d.refs, series.sample_rate()).map_err(werr)?;
            io::write_json(&meta, &io::DetectionMetadata::from_result(d)).map_err(werr)?;
            written.extend([refs, meta]);
        }
        if config.write_panels {
            let p = dir.join(format!("panel_{name}.json"));
            io::write_panel(&p, panel).map_err(werr)?;
            written.extend([p.clone(), p.with_extension("bin")]);
        }
        let stats = dir.join(format!("panel_stats_{name}.csv"));
        io::write_panel_stats_csv(&stats, &panel_stats(panel), panel).map_err(werr)?;
        let csv = dir.join(format!("bic_{name}.csv"));
        io::write_bic_curve_csv(&csv, &curve).map_err(werr)?;
        let json = dir.join(format!("bic_{name}.json"));
        io::write_json(&json, &curve).map_err(werr)?;
        written.extend([stats, csv, json]);
        files = written.iter().map(|p| rel(dir, p)).collect();
    }

    Ok(BranchReport {
        alignment: name.to_string(),
        n_trials: panel.n_trials(),
        dropped: panel.dropped(),
        detection,
        curve,
        files,
    })
}

fn branch_error(branch: &str, step: &str, e: Error) -> Error {
    Error::Stage {
        stage: format!("{branch}/{step}"),
        completed: Vec::new(),
        source: Box::new(e),
    }
}
