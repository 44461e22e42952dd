//! Command-line front end: argument parsing, config merging and dispatch.
//!
//! Outputs land under `$OSRKIT_OUT` (default `osrkit-out`) unless the
//! `out_dir` key or a per-command flag says otherwise.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use osrkit::binio;
use osrkit::cambank::save_bank;
use osrkit::config::{self, RunConfig};
use osrkit::error::{ErrorClass, OsrError, Result};
use osrkit::experiments::{self, build_osr_data, ResultTable};
use osrkit::metrics::{self, Report};
use osrkit::model::{load_checkpoint, save_checkpoint, Checkpoint};
use osrkit::scoring::{fit_gaussian_stats, global_features, read_score_file, score_images, write_score_file, ScoreMethod};
use osrkit::synthdata::{read_split, stats_to_kv, write_dataset_dir, LabeledImage};
use osrkit::theory::{run_theorem_checks, TheoremSummary};
use osrkit::training::{accuracy, TrainData, Trainer};

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "OSRKIT_OUT";
pub const DEFAULT_OUT: &str = "osrkit-out";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

/// Largest residual `theory-check` accepts.
pub const THEORY_TOL: f64 = 1e-9;

#[derive(Debug, Parser, PartialEq)]
#[command(name = "osrkit", version, about = "Background-aware open-set recognition toolkit")]
pub struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, `key=value`; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, PartialEq)]
pub enum Command {
    /// Generate the synthetic train/test splits.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score known test images and one unknown split.
    Score {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "spurious_unknown")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute every metric from a score file.
    Eval {
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Number of known classes; inferred from the file when absent.
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// BackMix over the `s_values` x `k_values` grid.
    Sweep,
    /// Plain vs. outlier exposure, CatImg and FtAvg.
    OeExp,
    /// Training variants against the four test settings.
    VariantGrid,
    /// Plain and BackMix across `r_values`.
    CorrSweep,
    /// Randomized checks of the information decomposition.
    TheoryCheck {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Median summary of one or more experiment tables.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn parse_args<I, T>(argv: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

pub fn exit_code(err: &OsrError) -> i32 {
    match err.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numerical => EXIT_NUMERICAL,
    }
}

/// Parse, run and map the outcome to an exit code.
pub fn main_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match parse_args(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

/// Config file merged with `--set` overrides.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(path) => Some(std::fs::read_to_string(path).map_err(|e| {
            OsrError::Config(format!("cannot read config {}: {e}", path.display()))
        })?),
        None => None,
    };
    config::load(text.as_deref(), &cli.set)
}

fn out_root(cfg: &RunConfig) -> PathBuf {
    if let Some(dir) = &cfg.experiment.output {
        return dir.clone();
    }
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    binio::write_file(path, text.as_bytes())
}

fn io_err(e: std::io::Error) -> OsrError {
    OsrError::Io { path: "<stdout>".into(), source: e }
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    let root = out_root(&cfg);
    let data_dir = |flag: &Option<PathBuf>| flag.clone().unwrap_or_else(|| root.join("data"));
    let model_dir = |flag: &Option<PathBuf>| flag.clone().unwrap_or_else(|| root.join("model"));
    match &cli.command {
        Command::Synth { out } => synth(&cfg, &data_dir(out), stdout),
        Command::Train { data, out } => train(&cfg, &data_dir(data), &model_dir(out), stdout),
        Command::Score { data, model, split, out } => {
            let out = out.clone().unwrap_or_else(|| root.join("scores.csv"));
            score(&cfg, &data_dir(data), &model_dir(model), split, &out, stdout)
        }
        Command::Eval { scores, num_classes, out } => {
            let scores = scores.clone().unwrap_or_else(|| root.join("scores.csv"));
            let out = out.clone().unwrap_or_else(|| root.join("report.tsv"));
            eval(&cfg, &scores, *num_classes, &out, stdout)
        }
        Command::Sweep | Command::OeExp | Command::VariantGrid | Command::CorrSweep => {
            experiment(&cli.command, &cfg, &root.join("experiments"), stdout)
        }
        Command::TheoryCheck { n, seed } => theory_check(*n, *seed, stdout),
        Command::Report { input, out } => report(input, out.as_deref(), stdout),
    }
}

fn synth(cfg: &RunConfig, dir: &Path, stdout: &mut dyn Write) -> Result<()> {
    let data = build_osr_data(&cfg.experiment.data)?;
    let outliers: Vec<LabeledImage> = data
        .outliers
        .iter()
        .map(|px| LabeledImage { pixels: px.clone(), label: 0, is_known: false, fg_mask: None, background: None })
        .collect();
    let mut manifest = cfg.to_kv();
    stats_to_kv(&data.stats, &mut manifest);
    write_dataset_dir(
        dir,
        &manifest,
        &[
            ("train", &data.train),
            ("outliers", &outliers),
            ("test_known", &data.test_known),
            ("spurious_unknown", &data.spurious_unknown),
            ("disjoint_unknown", &data.disjoint_unknown),
        ],
    )?;
    writeln!(stdout, "wrote {} training images to {}", data.train.len(), dir.display()).map_err(io_err)
}

fn train(cfg: &RunConfig, data_dir: &Path, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let known = read_split(data_dir, "train")?;
    let outliers: Vec<_> = read_split(data_dir, "outliers")?.into_iter().map(|i| i.pixels).collect();
    let tc = &cfg.experiment.train;
    let net = cfg.net_spec();
    let data = TrainData { known: &known, outliers: tc.augmentation.needs_outliers().then_some(outliers.as_slice()) };
    let mut trainer = Trainer::resume(tc, &net, data, &out.join("checkpoints"))?;
    while !trainer.is_done() {
        let loss = trainer.run_epoch()?;
        writeln!(stdout, "epoch {} loss {loss:.6}", trainer.state().epoch).map_err(io_err)?;
    }
    let state = trainer.run()?;
    save_checkpoint(&out.join("model.osrm"), &Checkpoint { model: state.model.clone(), step: state.step, seed: state.seed })?;
    if let Some(bank) = &state.bank {
        save_bank(&out.join("bank.osrb"), bank)?;
    }
    write_text(&out.join("manifest.txt"), &cfg.to_kv().to_text())?;
    let acc = accuracy(&state.model, &known)?;
    writeln!(stdout, "train accuracy {acc:.4}").map_err(io_err)
}

fn score_method(cfg: &RunConfig, model: &osrkit::model::ConvNet, train: &[LabeledImage]) -> Result<ScoreMethod> {
    let s = &cfg.score;
    Ok(match s.method.as_str() {
        "msp" => ScoreMethod::Msp,
        "energy" => ScoreMethod::Energy { temperature: s.energy_t },
        "odin" => ScoreMethod::Odin { temperature: s.odin_t, eps: s.odin_eps },
        "feature_norm" => ScoreMethod::FeatureNorm,
        "mahalanobis" => {
            let feats = global_features(model, train)?;
            let labels: Vec<usize> = train.iter().map(|i| i.label).collect();
            ScoreMethod::Mahalanobis(Box::new(fit_gaussian_stats(&feats, &labels, model.num_classes(), s.ridge)?))
        }
        other => return Err(OsrError::Config(format!("unknown score {other:?}"))),
    })
}

fn score(
    cfg: &RunConfig,
    data_dir: &Path,
    model_dir: &Path,
    split: &str,
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<()> {
    if !matches!(split, "spurious_unknown" | "disjoint_unknown") {
        return Err(OsrError::Config(format!("split must be spurious_unknown or disjoint_unknown, got {split:?}")));
    }
    let model = load_checkpoint(&model_dir.join("model.osrm"))?.model;
    let known = read_split(data_dir, "test_known")?;
    let unknown = read_split(data_dir, split)?;
    let train = if cfg.score.method == "mahalanobis" { read_split(data_dir, "train")? } else { Vec::new() };
    let method = score_method(cfg, &model, &train)?;
    let mut records = score_images(&model, &known, &method, 0, true)?;
    records.extend(score_images(&model, &unknown, &method, known.len() as u64, true)?);
    write_score_file(out, &records)?;
    writeln!(stdout, "wrote {} {} scores to {}", records.len(), method.name(), out.display()).map_err(io_err)
}

fn eval(cfg: &RunConfig, scores: &Path, num_classes: Option<usize>, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let records = read_score_file(scores)?;
    let k = match num_classes {
        Some(k) => k,
        None => records.iter().filter(|r| r.is_known).map(|r| r.true_label.max(r.predicted) + 1).max().unwrap_or(0),
    };
    let mut report = Report::default();
    for (metric, value) in metrics::evaluate(&records, k)? {
        report.push(&cfg.experiment.name, &metric, value);
    }
    report.write(out)?;
    stdout.write_all(report.to_tsv().as_bytes()).map_err(io_err)
}

fn experiment(command: &Command, cfg: &RunConfig, default_dir: &Path, stdout: &mut dyn Write) -> Result<()> {
    let mut spec = cfg.experiment.clone();
    spec.output = Some(spec.output.unwrap_or_else(|| default_dir.to_path_buf()));
    let cache = experiments::RunCache::new();
    let table = match command {
        Command::Sweep => experiments::run_param_sweep(&spec, &cfg.sweep.s_values, &cfg.sweep.k_values, Some(&cache)),
        Command::OeExp => experiments::run_oe_comparison(&spec, Some(&cache)),
        Command::VariantGrid => experiments::run_variant_grid(&spec, Some(&cache)),
        Command::CorrSweep => experiments::run_correlation_sweep(&spec, &cfg.sweep.r_values, Some(&cache)),
        _ => unreachable!("not an experiment command"),
    }?;
    stdout.write_all(table.to_tsv().as_bytes()).map_err(io_err)
}

fn theory_check(n: usize, seed: u64, stdout: &mut dyn Write) -> Result<()> {
    if n == 0 {
        return Err(OsrError::Config("--n must be positive".into()));
    }
    let s: TheoremSummary = run_theorem_checks(n, seed)?;
    let lines = [
        ("theorem1", s.theorem1),
        ("theorem2_constant", s.theorem2_constant),
        ("theorem2_orthogonal", s.theorem2_orthogonal),
        ("chain_rule", s.chain_rule),
    ];
    writeln!(stdout, "trials {}", s.trials).map_err(io_err)?;
    for (name, v) in lines {
        writeln!(stdout, "{name} max_residual {v:e}").map_err(io_err)?;
    }
    writeln!(stdout, "collision_info_loss {:.6}", s.collision_loss).map_err(io_err)?;
    match lines.iter().find(|(_, v)| *v >= THEORY_TOL) {
        Some((name, v)) => Err(OsrError::Numerical(format!("{name} residual {v:e} exceeds {THEORY_TOL:e}"))),
        None => Ok(()),
    }
}

/// One row per `(method, setting, metric)` cell holding its median.
pub fn summarize(tables: &[ResultTable]) -> Report {
    let mut report = Report::default();
    for t in tables {
        for (m, s, metric) in t.cells() {
            let med = t.median(&m, &s, &metric).expect("cell has rows");
            report.push(&t.experiment, &format!("{m}/{s}/{metric}"), med);
        }
    }
    report
}

fn report(inputs: &[PathBuf], out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let mut tables = Vec::new();
    for path in inputs {
        let text = std::fs::read_to_string(path).map_err(|e| OsrError::Io { path: path.display().to_string(), source: e })?;
        tables.push(ResultTable::parse_tsv(&text)?);
    }
    let report = summarize(&tables);
    if let Some(out) = out {
        report.write(out)?;
    }
    stdout.write_all(report.to_tsv().as_bytes()).map_err(io_err)
}
