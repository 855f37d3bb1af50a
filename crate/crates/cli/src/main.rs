use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use netrecon_core::experiments::{
    bench_convergence, bench_findbest_scaling, bench_recall, eval_reconstruction, with_threads,
    write_convergence_tsv, ScalingConfig,
};
use netrecon_core::findbest::FindBestOptions;
use netrecon_core::gcd::{reconstruct_cd, reconstruct_gcd, CdConfig, ReconstructionConfig};
use netrecon_core::io::{read_edge_list, read_samples, write_convergence_trace, write_edge_list, write_samples};
use netrecon_core::synth::{gen_er_precision, sample_gaussian_auto, sample_ising, GeneratorSpec, GibbsConfig};
use netrecon_core::{DistanceMode, Model, ModelKind, SampleMatrix};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

/// Sparse network reconstruction from independent samples.
#[derive(Debug, Parser)]
#[command(name = "netrecon", version)]
struct Cli {
    /// Log every iteration to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a sparse Erdős–Rényi precision matrix.
    Generate(GenerateArgs),
    /// Draw samples from a network.
    Sample(SampleArgs),
    /// Reconstruct a network from samples.
    Reconstruct(ReconstructArgs),
    /// Support precision/recall/F1 and weight RMSE against a known network.
    Eval(EvalArgs),
    /// Runtime of the candidate search against N.
    ScalingBench(ScalingArgs),
    /// Recall of the candidate search against the exhaustive oracle.
    RecallBench(RecallArgs),
    /// Objective against time for CD and GCD.
    ConvergenceBench(ConvergenceArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Ising,
    Gaussian,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Ising => ModelKind::Ising,
            ModelArg::Gaussian => ModelKind::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DistanceArg {
    Exact,
    Gradient,
}

impl From<DistanceArg> for DistanceMode {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Exact => DistanceMode::Exact,
            DistanceArg::Gradient => DistanceMode::Gradient,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Algorithm {
    Gcd,
    Cd,
}

#[derive(Debug, Args)]
struct GeneratorArgs {
    #[arg(long, value_parser = at_least_two)]
    n: usize,
    #[arg(long, default_value_t = 5.0, value_parser = non_negative)]
    mean_deg: f64,
    #[arg(long, default_value_t = -1000.0, allow_negative_numbers = true)]
    weight_mu: f64,
    #[arg(long, default_value_t = 10.0, value_parser = non_negative)]
    weight_sigma: f64,
    /// Diagonal-dominance slack in (0, 1).
    #[arg(long, default_value_t = 1e-3, value_parser = unit_open)]
    epsilon: f64,
}

impl GeneratorArgs {
    fn spec(&self, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            n: self.n,
            mean_deg: self.mean_deg,
            weight_mu: self.weight_mu,
            weight_sigma: self.weight_sigma,
            epsilon: self.epsilon,
            seed,
        }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    gen: GeneratorArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Edge list of the network to sample from.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Gaussian)]
    model: ModelArg,
    /// Number of samples.
    #[arg(long, value_parser = positive_count)]
    m: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 10, value_parser = positive_count)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    /// Sample matrix.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Gaussian)]
    model: ModelArg,
    #[arg(long, value_enum, default_value_t = Algorithm::Gcd)]
    algorithm: Algorithm,
    /// L1 penalty.
    #[arg(long, value_parser = non_negative)]
    l1: f64,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    kappa: f64,
    /// Convergence threshold on the summed absolute change; default 1e-6 N.
    #[arg(long, value_parser = positive)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 1000, value_parser = positive_count)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1, value_parser = positive_count)]
    threads: usize,
    #[arg(long, value_enum, default_value_t = DistanceArg::Exact)]
    distance: DistanceArg,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration convergence trace.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Estimated edge list.
    #[arg(long = "in")]
    input: PathBuf,
    /// True edge list.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScalingArgs {
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192,16384,32768", value_parser = at_least_two)]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1", value_parser = positive)]
    kappa: Vec<f64>,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 10, value_parser = positive_count)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10, value_parser = positive_count)]
    m: usize,
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    l1: f64,
    #[arg(long, value_enum, default_value_t = DistanceArg::Exact)]
    distance: DistanceArg,
    #[arg(long, default_value_t = 1, value_parser = positive_count)]
    threads: usize,
    /// Memoize distances within each search.
    #[arg(long)]
    memoize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RecallArgs {
    /// Sample matrix; a synthetic Gaussian instance is drawn when absent.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 500, value_parser = at_least_two)]
    n: usize,
    #[arg(long, default_value_t = 10, value_parser = positive_count)]
    m: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::Gaussian)]
    model: ModelArg,
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    l1: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,5", value_parser = positive)]
    kappa: Vec<f64>,
    #[arg(long, default_value_t = 10, value_parser = positive_count)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = DistanceArg::Exact)]
    distance: DistanceArg,
    #[arg(long, default_value_t = 1, value_parser = positive_count)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    /// Sample matrix; a synthetic Gaussian instance is drawn when absent.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 200, value_parser = at_least_two)]
    n: usize,
    #[arg(long, default_value_t = 100, value_parser = positive_count)]
    m: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::Gaussian)]
    model: ModelArg,
    #[arg(long, value_parser = non_negative)]
    l1: f64,
    #[arg(long, value_delimiter = ',', default_value = "1", value_parser = positive)]
    kappa: Vec<f64>,
    /// Skip the CD baseline.
    #[arg(long)]
    no_cd: bool,
    #[arg(long, value_parser = positive)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 20_000, value_parser = positive_count)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = DistanceArg::Exact)]
    distance: DistanceArg,
    #[arg(long, default_value_t = 1, value_parser = positive_count)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {s}"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be non-negative, got {s}"))
    }
}

fn unit_open(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie in (0, 1), got {s}"))
    }
}

fn positive_count(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("not a count: {s}"))?;
    if v >= 1 {
        Ok(v)
    } else {
        Err(format!("must be at least 1, got {s}"))
    }
}

fn at_least_two(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("not a count: {s}"))?;
    if v >= 2 {
        Ok(v)
    } else {
        Err(format!("must be at least 2, got {s}"))
    }
}

enum Outcome {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: did not converge within the iteration limit; output written");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<Outcome> {
    match cmd {
        Command::Generate(a) => {
            let truth = gen_er_precision(&a.gen.spec(a.seed))?;
            info!("generated {} edges on {} nodes", truth.edge_count(), truth.n());
            write_atomic(&a.out, |w| Ok(write_edge_list(w, &truth)?))?;
        }
        Command::Sample(a) => {
            let truth = load_edges(&a.input)?;
            let data = match a.model {
                ModelArg::Gaussian => sample_gaussian_auto(&truth, a.m, a.seed)?,
                ModelArg::Ising => sample_ising(
                    &truth,
                    a.m,
                    GibbsConfig {
                        burn_in: a.burn_in,
                        thin: a.thin,
                    },
                    a.seed,
                )?,
            };
            write_atomic(&a.out, |w| Ok(write_samples(w, &data)?))?;
        }
        Command::Reconstruct(a) => return reconstruct(a),
        Command::Eval(a) => {
            let estimate = load_edges(&a.input)?;
            let truth = load_edges(&a.truth)?;
            let metrics = eval_reconstruction(&estimate, &truth)?;
            let config = format!("estimate={} truth={}", a.input.display(), a.truth.display());
            write_atomic(&a.out, |w| Ok(metrics.write_tsv(w, &config)?))?;
        }
        Command::ScalingBench(a) => {
            let cfg = ScalingConfig {
                ns: a.n.clone(),
                kappas: a.kappa.clone(),
                seeds: (a.seed..a.seed + a.seeds as u64).collect(),
                m: a.m,
                lambda: a.l1,
                distance: a.distance.into(),
                search: FindBestOptions::default(),
                memoize: a.memoize,
            };
            let report = with_threads(a.threads, || bench_findbest_scaling(&cfg))?;
            for &kappa in &a.kappa {
                match report.exponent(kappa) {
                    Ok(e) => info!("kappa {kappa}: fitted exponent {e:.3}"),
                    Err(e) => info!("kappa {kappa}: {e}"),
                }
            }
            let (rate, levels) = report.halving_rate();
            if rate < 1.0 {
                log::error!("halving held on {:.1}% of {levels} levels", 100.0 * rate);
            }
            write_atomic(&a.out, |w| Ok(report.write_tsv(w)?))?;
        }
        Command::RecallBench(a) => {
            let data = match &a.input {
                Some(p) => load_samples(p)?,
                None => synthetic(a.n, a.m, a.seed)?,
            };
            let model = Model::new(a.model.into(), a.l1)?;
            let state = model.initial_state(&data)?;
            let seeds: Vec<u64> = (a.seed..a.seed + a.seeds as u64).collect();
            let report = with_threads(a.threads, || {
                bench_recall(
                    &model,
                    &data,
                    &state,
                    a.distance.into(),
                    &a.kappa,
                    &seeds,
                    &FindBestOptions::default(),
                )
            })?;
            for s in &report.series {
                info!("kappa {}: rank-1 recovered in {}/{} runs", s.kappa, s.rank1_hits, s.runs);
            }
            let config = format!(
                "N={} M={} model={} l1={} distance={} seeds={}",
                data.n(),
                data.m(),
                model.kind,
                a.l1,
                DistanceMode::from(a.distance),
                a.seeds
            );
            write_atomic(&a.out, |w| Ok(report.write_tsv(w, &config)?))?;
        }
        Command::ConvergenceBench(a) => {
            let data = match &a.input {
                Some(p) => load_samples(p)?,
                None => synthetic(a.n, a.m, a.seed)?,
            };
            let model = Model::new(a.model.into(), a.l1)?;
            let base = ReconstructionConfig {
                eps: a.eps,
                max_iters: a.max_iters,
                distance: a.distance.into(),
                seed: a.seed,
                threads: a.threads,
                ..Default::default()
            };
            let runs = bench_convergence(&model, &data, &a.kappa, !a.no_cd, &base)?;
            let config = format!(
                "N={} M={} model={} l1={} distance={} seed={} threads={}",
                data.n(),
                data.m(),
                model.kind,
                a.l1,
                base.distance,
                a.seed,
                a.threads
            );
            write_atomic(&a.out, |w| write_convergence_tsv(w, &runs, &config).map_err(Into::into))?;
            if runs.iter().any(|r| !r.result.converged) {
                return Ok(Outcome::NotConverged);
            }
        }
    }
    Ok(Outcome::Done)
}

fn reconstruct(a: ReconstructArgs) -> anyhow::Result<Outcome> {
    let data = load_samples(&a.input)?;
    let model = Model::new(a.model.into(), a.l1)?;
    let result = match a.algorithm {
        Algorithm::Gcd => {
            let cfg = ReconstructionConfig {
                kappa: a.kappa,
                eps: a.eps,
                max_iters: a.max_iters,
                distance: a.distance.into(),
                seed: a.seed,
                threads: a.threads,
                record_objective: a.trace.is_some(),
                ..Default::default()
            };
            reconstruct_gcd(&model, &data, &cfg)?
        }
        Algorithm::Cd => {
            let cfg = CdConfig {
                eps: a.eps,
                max_iters: a.max_iters,
                record_objective: a.trace.is_some(),
            };
            with_threads(a.threads, || reconstruct_cd(&model, &data, &cfg))?
        }
    };
    info!(
        "{} iterations, {} edges, converged: {}",
        result.trace.len(),
        result.state.edge_count(),
        result.converged
    );
    write_atomic(&a.out, |w| Ok(write_edge_list(w, &result.state)?))?;
    if let Some(path) = &a.trace {
        write_atomic(path, |w| Ok(write_convergence_trace(w, &result.trace)?))?;
    }
    Ok(if result.converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn synthetic(n: usize, m: usize, seed: u64) -> anyhow::Result<SampleMatrix> {
    Ok(netrecon_core::synth::fig2_instance(n, m, seed)?.1)
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn load_edges(path: &Path) -> anyhow::Result<netrecon_core::SparseWeights> {
    Ok(read_edge_list(open(path)?, path)?)
}

fn load_samples(path: &Path) -> anyhow::Result<SampleMatrix> {
    Ok(read_samples(open(path)?, path)?)
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failure never leaves a partial file behind.
fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<&mut tempfile::NamedTempFile>) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(&mut tmp);
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path)
        .map_err(|e| anyhow!("cannot write {}: {}", path.display(), e.error))?;
    Ok(())
}
