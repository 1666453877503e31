//! Command-line front end: `train`, `gen`, `inspect`, `plot` and `verify`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::accel::NuChoice;
use crate::dadm::{self, Problem, RunConfig};
use crate::dataio::{self, Dataset};
use crate::error::{Error, Result};
use crate::localsolver::{LocalStepConfig, StepMode};
use crate::losses::LossKind;
use crate::metrics::{self, Format};
use crate::oracle;
use crate::pipeline::{self, Algo, KappaChoice, KappaFormula, Manifest, TrainOptions};
use crate::plot::{self, Series};
use crate::regularizer::ShiftedElasticNet;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "dualforge", version, about = "Distributed dual coordinate ascent for regularized linear classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write metrics, model and manifest.
    Train(TrainArgs),
    /// Write a synthetic LIBSVM dataset.
    Gen(GenArgs),
    /// Print n, d, nnz, sparsity and R of a dataset.
    Inspect(InspectArgs),
    /// Render metrics CSVs as a semi-log SVG chart.
    Plot(PlotArgs),
    /// Cross-check the distributed solver against a reference solver.
    Verify(VerifyArgs),
}

/// Unset flags fall back to the manifest (with `--from-manifest`) or to defaults.
#[derive(Args, Debug, Default)]
#[command(allow_negative_numbers = true)]
pub struct TrainArgs {
    /// LIBSVM dataset.
    pub data: Option<PathBuf>,
    /// Re-run the options recorded in a manifest.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_with::<Algo>)]
    pub algo: Option<Algo>,
    /// smooth-hinge, logistic or hinge.
    #[arg(long, value_parser = parse_with::<LossKind>)]
    pub loss: Option<LossKind>,
    /// Smoothing width for the hinge.
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Number of workers.
    #[arg(long)]
    pub m: Option<usize>,
    /// Fraction of each shard visited per round.
    #[arg(long)]
    pub sp: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target for the gap divided by n.
    #[arg(long)]
    pub target_gap: Option<f64>,
    #[arg(long)]
    pub max_rounds: Option<u64>,
    #[arg(long)]
    pub inner_max_rounds: Option<u64>,
    /// exact, conservative-smooth or conservative-lipschitz.
    #[arg(long, value_parser = parse_with::<StepMode>)]
    pub mode: Option<StepMode>,
    #[arg(long)]
    pub local_passes: Option<usize>,
    /// Fixed step fraction for conservative-smooth mode.
    #[arg(long)]
    pub step_fraction: Option<f64>,
    /// Fixed q for conservative-lipschitz mode.
    #[arg(long)]
    pub lipschitz_q: Option<f64>,
    #[arg(long)]
    pub gap_every: Option<u64>,
    /// Average iterates after this round.
    #[arg(long)]
    pub tail_average: Option<u64>,
    /// auto or a value.
    #[arg(long, value_parser = parse_with::<KappaChoice>)]
    pub kappa: Option<KappaChoice>,
    /// per-example (mR/(γn) − λ) or per-lambda (mR/(λγ) − λ).
    #[arg(long, value_parser = parse_with::<KappaFormula>)]
    pub kappa_formula: Option<KappaFormula>,
    /// 0, theory or a value.
    #[arg(long, value_parser = parse_with::<NuChoice>)]
    pub nu: Option<NuChoice>,
    #[arg(long)]
    pub outer_max: Option<u64>,
    /// Scale examples to unit norm.
    #[arg(long)]
    pub normalize: bool,
    /// Seconds to wait for a worker.
    #[arg(long)]
    pub timeout: Option<u64>,
    /// Force the feature dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Output directory for metrics, model.json and manifest.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_with::<Format>, default_value = "csv")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub density: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Probability of flipping a label.
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum XAxis {
    Comms,
    Time,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum YAxis {
    GapNormalized,
    Gap,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "comms")]
    pub x: XAxis,
    #[arg(long, value_enum, default_value = "gap_normalized")]
    pub y: YAxis,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    pub data: PathBuf,
    #[arg(long, value_parser = parse_with::<LossKind>, default_value = "smooth-hinge")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub mu: f64,
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sp: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Normalized gap both solvers are driven to.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_rounds: u64,
    #[arg(long)]
    pub dim: Option<usize>,
}

fn parse_with<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("DUALFORGE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Gen(a) => gen(a),
        Command::Inspect(a) => inspect(a),
        Command::Plot(a) => plot_cmd(a),
        Command::Verify(a) => verify(a),
    }
}

pub fn load_dataset(path: &Path, dim: Option<usize>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    dataio::parse_libsvm(BufReader::new(file), dim.unwrap_or(0))
}

fn merged_options(a: &TrainArgs, base: TrainOptions) -> TrainOptions {
    let mut o = base;
    macro_rules! take {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { o.$field = v; } )* };
    }
    take!(algo, loss, lambda, mu, m, sp, seed, target_gap, max_rounds, mode, local_passes, gap_every, kappa, kappa_formula, nu, outer_max);
    if a.smoothing.is_some() {
        o.smoothing = a.smoothing;
    }
    if a.inner_max_rounds.is_some() {
        o.inner_max_rounds = a.inner_max_rounds;
    }
    if a.step_fraction.is_some() {
        o.step_fraction = a.step_fraction;
    }
    if a.lipschitz_q.is_some() {
        o.lipschitz_q = a.lipschitz_q;
    }
    if a.tail_average.is_some() {
        o.tail_average = a.tail_average;
    }
    if let Some(t) = a.timeout {
        o.timeout_secs = t;
    }
    o.normalize |= a.normalize;
    o
}

fn train(a: TrainArgs) -> Result<()> {
    let manifest = a.from_manifest.as_deref().map(Manifest::load).transpose()?;
    let base = manifest.as_ref().map(|m| m.options.clone()).unwrap_or_default();
    let opts = merged_options(&a, base);
    let data_path = a
        .data
        .clone()
        .or_else(|| manifest.as_ref().and_then(|m| m.data.as_ref().map(PathBuf::from)))
        .ok_or_else(|| Error::InvalidArgument("no dataset given".into()))?;
    let dim = a.dim.or(manifest.as_ref().and_then(|m| m.dim));
    opts.validate()?;
    let data = pipeline::prepare(load_dataset(&data_path, dim)?, &opts);
    let resolved = pipeline::resolve(&data, &opts)?;
    if opts.algo == Algo::AccDadm {
        println!("kappa = {}", resolved.kappa);
    }
    std::fs::create_dir_all(&a.out)?;
    let mut manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        data: Some(data_path.to_string_lossy().into_owned()),
        dim,
        options: opts.clone(),
        resolved: Some(resolved),
    };
    let outcome = pipeline::train(&data, &opts)?;
    manifest.resolved = Some(outcome.resolved.clone());
    let metrics_name = match a.format {
        Format::Csv => "metrics.csv",
        Format::Jsonl => "metrics.jsonl",
    };
    metrics::write(&a.out.join(metrics_name), &outcome.records, a.format)?;
    outcome.model.save(&a.out.join("model.json"))?;
    manifest.save(&a.out.join("manifest.json"))?;
    let n = data.n() as f64;
    println!(
        "rounds = {}, primal = {:e}, gap/n = {:e}, converged = {}",
        outcome.rounds,
        outcome.original.primal,
        outcome.original.gap / n,
        outcome.converged
    );
    if !outcome.converged {
        log::warn!("target gap not reached within the round cap");
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let data = dataio::gen_synthetic(a.n, a.d, a.density, a.seed, a.label_noise)?;
    let mut out = BufWriter::new(File::create(&a.out)?);
    data.write_libsvm(&mut out)?;
    out.flush()?;
    Ok(())
}

/// The one-line summary printed by `inspect`.
pub fn stats_row(name: &str, data: &Dataset) -> String {
    let s = data.stats();
    format!("{name}\t{}\t{}\t{}\t{:.2}%\t{}", data.n(), data.d(), s.nnz, 100.0 * s.sparsity, s.r)
}

fn inspect(a: InspectArgs) -> Result<()> {
    let data = load_dataset(&a.data, a.dim)?;
    println!("dataset\tn\td\tnnz\tsparsity\tR");
    println!("{}", stats_row(&a.data.display().to_string(), &data));
    Ok(())
}

fn plot_cmd(a: PlotArgs) -> Result<()> {
    let mut series = Vec::new();
    for path in &a.metrics {
        let rows = metrics::read_csv(path)?;
        let points = rows
            .iter()
            .map(|r| {
                let x = match a.x {
                    XAxis::Comms => r.comms as f64,
                    XAxis::Time => r.time_ms,
                };
                let y = match a.y {
                    YAxis::GapNormalized => r.gap_normalized,
                    YAxis::Gap => r.gap,
                };
                (x, y)
            })
            .collect();
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        series.push(Series { name, points });
    }
    let x_label = match a.x {
        XAxis::Comms => "communications",
        XAxis::Time => "time (ms)",
    };
    let y_label = match a.y {
        YAxis::GapNormalized => "normalized duality gap",
        YAxis::Gap => "duality gap",
    };
    let svg = plot::render_svg(&series, x_label, y_label)?;
    std::fs::write(&a.out, svg)?;
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<()> {
    let data = load_dataset(&a.data, a.dim)?;
    let n = data.n();
    let reg = ShiftedElasticNet::new(a.lambda, a.mu)?;
    let cert = oracle::prox_grad_reference(&data, &reg, a.loss, a.tol * n as f64 / 10.0, 1_000_000)?;
    let partition = dataio::partition(n, a.m, a.seed)?;
    let problem = Problem { data: &data, partition: &partition, reg, loss: a.loss };
    let cfg = RunConfig {
        seed: a.seed,
        target_gap: a.tol * n as f64,
        max_rounds: a.max_rounds,
        step: LocalStepConfig { sp: a.sp, ..LocalStepConfig::default() },
        ..RunConfig::default()
    };
    let res = dadm::run(&problem, &cfg, None)?;
    let dist = res.w.iter().zip(&cert.w_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let diff = (res.values.primal - cert.primal_at_star).abs() / n as f64;
    println!("reference: P*/n = {:e} (certified gap/n {:e}, {} iterations)", cert.primal_at_star / n as f64, cert.certified_gap / n as f64, cert.iterations);
    println!("distributed: P/n = {:e} (gap/n {:e}, {} rounds)", res.values.primal / n as f64, res.values.gap / n as f64, res.rounds);
    println!("|P - P*|/n = {diff:e}, max |w - w*| = {dist:e}");
    let bound = 2.0 * (a.tol + cert.certified_gap / n as f64);
    if !res.converged || diff > bound {
        return Err(Error::Numeric(format!("solvers disagree: |P - P*|/n = {diff:e} exceeds {bound:e}")));
    }
    println!("agree");
    Ok(())
}
