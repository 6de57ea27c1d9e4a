use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use ensemble_var::detection::{
    design_fir_bandpass, detect_events, filter_signal, DetectionConfig, FilterMode, RefPolicy, ThresholdMode,
};
use ensemble_var::estimation::{fit_var, SigmaMode};
use ensemble_var::experiment::{run_experiment, ExperimentConfig, ScenarioConfig};
use ensemble_var::io;
use ensemble_var::order_selection::{select_order, Criterion, CriterionConfig};
use ensemble_var::panel::{extract_panel, panel_stats, PeriEventWindow, RefSource};
use ensemble_var::simulation::GENERATOR_NAME;
use ensemble_var::{Error, Result};

const OUT_ENV: &str = "ENSEMBLE_VAR_OUT_DIR";

/// Ensemble VAR order selection on event-aligned panels.
#[derive(Parser)]
#[command(name = "ensemble-var", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a perturbed VAR series and its ground-truth event times.
    Simulate(SimulateArgs),
    /// Bandpass-filter one channel and threshold it into reference points.
    Detect(DetectArgs),
    /// Cut peri-event windows around reference points into a panel.
    Extract(ExtractArgs),
    /// Score model orders on a panel.
    Select(SelectArgs),
    /// Simulate, align three ways and select an order for each panel.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long, env = OUT_ENV, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_events: Option<usize>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    duration_ms: Option<f64>,
    #[arg(long)]
    center_freq: Option<f64>,
    /// Shortest quiet gap between perturbations, in samples.
    #[arg(long)]
    interval_lo: Option<usize>,
    #[arg(long)]
    interval_hi: Option<usize>,
    #[arg(long)]
    sample_rate: Option<f64>,
    #[arg(long)]
    allow_unstable: bool,
    /// Write the series as CSV instead of JSON + binary.
    #[arg(long)]
    csv: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct DetectionFlags {
    #[arg(long)]
    channel: Option<usize>,
    #[arg(long)]
    band_lo: Option<f64>,
    #[arg(long)]
    band_hi: Option<f64>,
    #[arg(long)]
    filter_order: Option<usize>,
    /// Threshold multiplier k in `mean + k * std`.
    #[arg(long)]
    threshold_k: Option<f64>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long)]
    min_separation: Option<usize>,
    #[arg(long, value_enum)]
    threshold_mode: Option<ThresholdArg>,
    #[arg(long, value_enum)]
    filter_mode: Option<FilterArg>,
}

#[derive(Args)]
struct DetectArgs {
    /// Series file (`.json` sidecar or `.csv`).
    #[arg(long)]
    series: PathBuf,
    /// Sample rate for CSV series without a usable time column.
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Detection config JSON; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: DetectionFlags,
    /// Label used in output file names and panel labels.
    #[arg(long, default_value = "detected")]
    label: String,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct WindowArgs {
    /// Window start relative to the reference point, in samples.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "start_ms")]
    start: Option<i64>,
    /// Window end (exclusive), in samples.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "end_ms")]
    end: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    start_ms: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    end_ms: Option<f64>,
}

impl WindowArgs {
    fn resolve(&self, sample_rate: f64, default: PeriEventWindow) -> Result<PeriEventWindow> {
        match (self.start, self.end, self.start_ms, self.end_ms) {
            (None, None, None, None) => Ok(default),
            (Some(s), Some(e), None, None) => PeriEventWindow::new(s, e),
            (None, None, Some(s), Some(e)) => PeriEventWindow::from_millis(s, e, sample_rate),
            _ => Err(Error::Config(
                "give both --start/--end or both --start-ms/--end-ms".into(),
            )),
        }
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    series: PathBuf,
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Reference CSV (`sample_index,time_s`).
    #[arg(long)]
    refs: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    /// Alignment label stored in the panel.
    #[arg(long, default_value = "panel")]
    name: String,
    /// Also write the panel as CSV.
    #[arg(long)]
    csv: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CriterionFlags {
    #[arg(long, value_enum)]
    criterion: Option<CriterionArg>,
    #[arg(long)]
    p_min: Option<usize>,
    #[arg(long)]
    p_max: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long, value_enum)]
    sigma_mode: Option<SigmaArg>,
}

#[derive(Args)]
struct SelectArgs {
    /// Panel file (`.json` sidecar or `.csv`).
    #[arg(long)]
    panel: PathBuf,
    /// Sample rate for CSV panels.
    #[arg(long, default_value_t = 1000.0)]
    sample_rate: f64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: CriterionFlags,
    /// Also fit and save the model at the selected order.
    #[arg(long)]
    save_model: bool,
    #[arg(long, default_value = "panel")]
    name: String,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_events: Option<usize>,
    #[arg(long)]
    amplitude: Option<f64>,
    /// Reference policy for both detected alignments.
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long)]
    threshold_k: Option<f64>,
    #[command(flatten)]
    criterion: CriterionFlags,
    /// Skip writing the three panels.
    #[arg(long)]
    no_panels: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    AllPoints,
    SegmentOnset,
    SegmentPeak,
}

impl From<PolicyArg> for RefPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::AllPoints => RefPolicy::AllPoints,
            PolicyArg::SegmentOnset => RefPolicy::SegmentOnset,
            PolicyArg::SegmentPeak => RefPolicy::SegmentPeak,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ThresholdArg {
    Raw,
    Absolute,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    ZeroPhase,
    SinglePass,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    EnsembleBic,
    EnsembleBicFull,
    EnsembleAic,
    ClassicalBicT1,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::EnsembleBic => Criterion::EnsembleBic,
            CriterionArg::EnsembleBicFull => Criterion::EnsembleBicFull,
            CriterionArg::EnsembleAic => Criterion::EnsembleAic,
            CriterionArg::ClassicalBicT1 => Criterion::ClassicalBicT1,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SigmaArg {
    Full,
    Diagonal,
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), io::read_json)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DetectionFlags {
    fn apply(&self, c: &mut DetectionConfig) {
        set(&mut c.channel, self.channel);
        set(&mut c.band_lo, self.band_lo);
        set(&mut c.band_hi, self.band_hi);
        set(&mut c.filter_order, self.filter_order);
        set(&mut c.threshold_k, self.threshold_k);
        set(&mut c.ref_policy, self.policy.map(Into::into));
        set(&mut c.min_separation, self.min_separation);
        set(
            &mut c.threshold_mode,
            self.threshold_mode.map(|m| match m {
                ThresholdArg::Raw => ThresholdMode::Raw,
                ThresholdArg::Absolute => ThresholdMode::Absolute,
            }),
        );
        set(
            &mut c.filter_mode,
            self.filter_mode.map(|m| match m {
                FilterArg::ZeroPhase => FilterMode::ZeroPhase,
                FilterArg::SinglePass => FilterMode::SinglePass,
            }),
        );
    }
}

impl CriterionFlags {
    fn apply(&self, c: &mut CriterionConfig) {
        set(&mut c.criterion, self.criterion.map(Into::into));
        set(&mut c.p_min, self.p_min);
        set(&mut c.p_max, self.p_max);
        set(&mut c.ridge, self.ridge);
        set(
            &mut c.sigma_mode,
            self.sigma_mode.map(|m| match m {
                SigmaArg::Full => SigmaMode::Full,
                SigmaArg::Diagonal => SigmaMode::Diagonal,
            }),
        );
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg: ScenarioConfig = load_or_default(args.config.as_deref())?;
    set(&mut cfg.seed, args.seed);
    set(&mut cfg.schedule.n_events, args.n_events);
    set(&mut cfg.perturbation.amplitude, args.amplitude);
    set(&mut cfg.perturbation.duration_s, args.duration_ms.map(|ms| ms / 1000.0));
    set(&mut cfg.perturbation.center_frequency_hz, args.center_freq);
    set(&mut cfg.schedule.interval_lo, args.interval_lo);
    set(&mut cfg.schedule.interval_hi, args.interval_hi);
    set(&mut cfg.simulation.sample_rate, args.sample_rate);
    cfg.simulation.allow_unstable |= args.allow_unstable;
    cfg.validate()?;

    let (series, refs) = cfg.simulate()?;
    let dir = &args.out.out;
    io::write_json(&dir.join("scenario.json"), &cfg)?;
    let series_path = dir.join(if args.csv { "series.csv" } else { "series.json" });
    let meta = serde_json::json!({ "generator": GENERATOR_NAME, "seed": cfg.seed });
    io::write_series(&series_path, &series, meta)?;
    io::write_refs_csv(&dir.join("refs_ground_truth.csv"), &refs, series.sample_rate())?;
    println!(
        "simulated {} samples x {} channels, {} events -> {}",
        series.len(),
        series.channels(),
        refs.len(),
        dir.display()
    );
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    let series = io::read_series(&args.series, args.sample_rate)?;
    let mut cfg: DetectionConfig = load_or_default(args.config.as_deref())?;
    args.flags.apply(&mut cfg);
    cfg.label = Some(args.label.clone());
    cfg.validate(series.sample_rate())?;
    if cfg.channel >= series.channels() {
        return Err(Error::Config(format!(
            "channel {} out of range for {} channels",
            cfg.channel,
            series.channels()
        )));
    }
    let filter = design_fir_bandpass(cfg.filter_order, cfg.band_lo, cfg.band_hi, series.sample_rate())?;
    let filtered = filter_signal(&series, &filter, cfg.channel, cfg.filter_mode)?;
    let result = detect_events(&filtered, &cfg)?;

    let dir = &args.out.out;
    let label = &args.label;
    io::write_refs_csv(&dir.join(format!("refs_{label}.csv")), &result.refs, series.sample_rate())?;
    io::write_series_csv(&dir.join(format!("filtered_{label}.csv")), &result.filtered)?;
    io::write_filter_csv(&dir.join(format!("filter_{label}.csv")), &filter)?;
    io::write_json(
        &dir.join(format!("detection_{label}.json")),
        &io::DetectionMetadata::from_result(&result),
    )?;
    println!(
        "{} references on channel {} (threshold {:.6}) -> {}",
        result.refs.len(),
        cfg.channel,
        result.threshold,
        dir.display()
    );
    Ok(())
}

fn extract(args: ExtractArgs) -> Result<()> {
    let series = io::read_series(&args.series, args.sample_rate)?;
    let refs = io::read_refs_csv(&args.refs, RefSource::GroundTruth)?;
    let window = args
        .window
        .resolve(series.sample_rate(), PeriEventWindow::centered((0.2 * series.sample_rate()).round() as usize))?;
    let mut panel = extract_panel(&series, &refs, window)?;
    panel.set_alignment_label(args.name.clone());

    let dir = &args.out.out;
    io::write_panel(&dir.join(format!("{}.json", args.name)), &panel)?;
    if args.csv {
        io::write_panel_csv(&dir.join(format!("{}.csv", args.name)), &panel)?;
    }
    io::write_panel_stats_csv(&dir.join(format!("{}_stats.csv", args.name)), &panel_stats(&panel), &panel)?;
    println!(
        "panel N = {}, T = {}, d = {} ({} references dropped) -> {}",
        panel.n_trials(),
        panel.n_times(),
        panel.channels(),
        panel.dropped(),
        dir.display()
    );
    Ok(())
}

fn select(args: SelectArgs) -> Result<()> {
    let panel = if args.panel.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        io::read_panel_csv(&args.panel, args.sample_rate, None)?
    } else {
        io::read_panel(&args.panel)?
    };
    let mut cfg: CriterionConfig = load_or_default(args.config.as_deref())?;
    args.flags.apply(&mut cfg);
    let curve = select_order(&panel, &cfg)?;

    let dir = &args.out.out;
    let name = &args.name;
    io::write_bic_curve_csv(&dir.join(format!("bic_{name}.csv")), &curve)?;
    io::write_json(&dir.join(format!("bic_{name}.json")), &curve)?;
    let report = serde_json::json!({
        "panel": args.panel,
        "alignment_label": panel.alignment_label(),
        "n_trials": panel.n_trials(),
        "n_times": panel.n_times(),
        "criterion_config": cfg,
        "selected_p": curve.selected_p,
        "selected_p_approx": curve.selected_p_approx,
        "selected_p_full": curve.selected_p_full,
        "approx_full_agree": curve.agree(),
        "warnings": curve.warnings,
    });
    io::write_json(&dir.join(format!("select_{name}.json")), &report)?;
    if args.save_model {
        let range = cfg.p_max..panel.n_times();
        let (model, summary) = fit_var(&panel, curve.selected_p, range, cfg.fit_options())?;
        io::write_model(&dir.join(format!("model_{name}.json")), &model)?;
        io::write_fit_summary_csv(&dir.join(format!("fit_{name}.csv")), &summary)?;
    }
    println!("p\tscore_approx\tscore_full");
    for s in &curve.scores {
        println!("{}\t{:.3}\t{:.3}", s.p, s.score_approx, s.score_full);
    }
    println!(
        "selected p = {} (approx {}, full {}, agree: {})",
        curve.selected_p,
        curve.selected_p_approx,
        curve.selected_p_full,
        curve.agree()
    );
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = load_or_default(args.config.as_deref())?;
    set(&mut cfg.scenario.seed, args.seed);
    set(&mut cfg.scenario.schedule.n_events, args.n_events);
    set(&mut cfg.scenario.perturbation.amplitude, args.amplitude);
    for det in [&mut cfg.cause_detection, &mut cfg.effect_detection] {
        set(&mut det.ref_policy, args.policy.map(Into::into));
        set(&mut det.threshold_k, args.threshold_k);
    }
    args.criterion.apply(&mut cfg.criterion);
    if args.no_panels {
        cfg.write_panels = false;
    }
    if cfg.output_dir.is_none() || std::env::var_os(OUT_ENV).is_some() || args.out.out != Path::new(".") {
        cfg.output_dir = Some(args.out.out.clone());
    }

    let report = run_experiment(&cfg)?;
    println!("alignment\tN\tselected_p\tapprox\tfull");
    for b in &report.branches {
        println!(
            "{}\t{}\t{}\t{}\t{}",
            b.alignment, b.n_trials, b.curve.selected_p, b.curve.selected_p_approx, b.curve.selected_p_full
        );
    }
    if let Some(dir) = &cfg.output_dir {
        println!("report -> {}", dir.join("report.json").display());
    }
    Ok(())
}

fn error_json(e: &Error) -> serde_json::Value {
    let mut v = serde_json::json!({
        "error": e.kind().as_str(),
        "exit_code": e.kind().exit_code(),
        "message": e.to_string(),
    });
    let mut cause = std::error::Error::source(e);
    let mut chain = Vec::new();
    while let Some(c) = cause {
        chain.push(c.to_string());
        cause = c.source();
    }
    v["causes"] = chain.into();
    if let Error::Stage { stage, completed, .. } = e {
        v["stage"] = stage.clone().into();
        v["completed"] = completed.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().into();
    }
    v
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Detect(a) => detect(a),
        Command::Extract(a) => extract(a),
        Command::Select(a) => select(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
