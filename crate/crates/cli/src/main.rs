mod io;
mod params;
mod svg;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use treetest::bootstrap::{hotelling_statistic, run_test, BootstrapConfig};
use treetest::estimators::StatisticMode;
use treetest::metric::{correlation_metric, is_t_induced, DEFAULT_TOLERANCE};
use treetest::model::{covariance_from_factor, covariance_from_tree, sample, setup_params, SampleMatrix, Setup};
use treetest::seed::{derive_seed, stream};
use treetest::simulation::{alpha_grid, size_study, SizeStudyConfig};
use treetest::tree::ConstraintRef;
use treetest::{enumerate_constraints, LatentTree};

#[derive(Parser)]
#[command(name = "treetest", version, about = "Goodness-of-fit tests for Gaussian latent tree models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the constraint polynomials of a tree as CSV
    Enumerate {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Equalities)]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test whether data fit a tree model
    Test {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        boot: BootArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Also report the quadratic-form statistic (m <= 8)
        #[arg(long)]
        hotelling: bool,
        /// Exit with status 2 when the model is rejected
        #[arg(long)]
        exit_on_reject: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical size of the test under a one-factor null model
    Simulate {
        #[arg(long, value_enum, default_value_t = SetupArg::One)]
        setup: SetupArg,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[command(flatten)]
        boot: BootArgs,
        /// Comma-separated levels; 0.01, 0.02, ..., 0.99 by default
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Size plot; defaults to the CSV path with an .svg extension
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Sample Gaussian data from a one-factor setup or a parameterised tree
    Generate {
        #[arg(long, value_enum, required_unless_present = "tree")]
        setup: Option<SetupArg>,
        #[arg(long, required_unless_present = "tree")]
        m: Option<usize>,
        #[arg(long, requires = "params", conflicts_with_all = ["setup", "m"])]
        tree: Option<PathBuf>,
        /// Edge correlations and standard deviations for --tree
        #[arg(long, requires = "tree")]
        params: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check whether a matrix is a pseudo-metric induced by a tree
    CheckMetric {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tree: PathBuf,
        /// Treat the matrix as a covariance and check -log|correlation|
        #[arg(long)]
        from_covariance: bool,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tol: f64,
        /// Exit with status 2 when the matrix is not induced by the tree
        #[arg(long)]
        exit_on_reject: bool,
    },
}

#[derive(Args, Clone)]
struct BootArgs {
    #[arg(long, default_value_t = 3)]
    batch: usize,
    #[arg(long, default_value_t = 1000)]
    multipliers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep a random subset of this many constraint columns
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, value_enum, default_value_t = Mode::Equalities)]
    mode: Mode,
    /// Use the data as given instead of subtracting column means
    #[arg(long)]
    no_center: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Equalities,
    All,
}

impl From<Mode> for StatisticMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Equalities => StatisticMode::EqualitiesOnly,
            Mode::All => StatisticMode::WithInequalities,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SetupArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

impl From<SetupArg> for Setup {
    fn from(s: SetupArg) -> Self {
        match s {
            SetupArg::One => Setup::One,
            SetupArg::Two => Setup::Two,
        }
    }
}

impl BootArgs {
    fn config(&self, alpha: f64) -> BootstrapConfig {
        BootstrapConfig {
            batch_size: self.batch,
            num_multipliers: self.multipliers,
            alpha,
            seed: self.seed,
            mode: self.mode.into(),
            center: !self.no_center,
            subsample: self.subsample,
        }
    }
}

fn read_tree(path: &Path) -> Result<LatentTree> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.parse().with_context(|| format!("invalid tree file {}", path.display()))
}

fn enumerate(tree: &Path, mode: Mode, out: Option<&Path>) -> Result<()> {
    let tree = read_tree(tree)?;
    let cs = enumerate_constraints(&tree)?;
    let wide = tree.num_observed() >= 10;
    let mut w = csv::Writer::from_writer(io::output(out)?);
    w.write_record(["constraint_id", "kind", "indices", "polynomial"])?;
    let mut refs: Vec<ConstraintRef> = cs.equality_columns().collect();
    if let Mode::All = mode {
        refs.extend((0..cs.inequalities.len()).map(|index| ConstraintRef::Inequality { index }));
    }
    for (id, c) in refs.into_iter().enumerate() {
        let (kind, indices) = match c {
            ConstraintRef::Equality { index, .. } => (cs.equalities[index].kind(), cs.equalities[index].to_string()),
            ConstraintRef::Inequality { index } => (cs.inequalities[index].kind(), cs.inequalities[index].to_string()),
        };
        let poly = cs.polynomial(c).to_text(wide);
        w.write_record([(id + 1).to_string(), kind.to_string(), indices, poly])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns are matched to observed nodes by name when every name is present,
/// by position otherwise.
fn align(data: SampleMatrix, tree: &LatentTree) -> Result<SampleMatrix> {
    let observed = tree.observed_names();
    let pos: Option<Vec<usize>> = observed.iter().map(|o| data.names().iter().position(|n| n == o)).collect();
    match pos {
        Some(cols) if data.m() == observed.len() => {
            let x = data.data().select_columns(&cols);
            Ok(SampleMatrix::new(x, observed)?)
        }
        _ if data.m() == observed.len() => Ok(data),
        _ => bail!("data has {} columns but the tree has {} observed nodes", data.m(), observed.len()),
    }
}

#[derive(Serialize)]
struct Report {
    statistic: f64,
    quantile: f64,
    p_value: f64,
    reject: bool,
    alpha: f64,
    k_effective: usize,
    diag_floor_hits: usize,
    n: usize,
    m: usize,
    batch: usize,
    multipliers: usize,
    mode: &'static str,
    centered: bool,
    subsample: Option<usize>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    hotelling: Option<HotellingReport>,
}

#[derive(Serialize)]
struct HotellingReport {
    statistic: f64,
    dof: usize,
    rank: usize,
}

fn test(tree: &Path, data: &Path, boot: &BootArgs, alpha: f64, hotelling: bool, out: Option<&Path>) -> Result<bool> {
    let tree = read_tree(tree)?;
    let data = align(io::read_data(data)?, &tree)?;
    let cs = enumerate_constraints(&tree)?;
    let config = boot.config(alpha);
    let r = run_test(&data, &cs, &config)?;
    let hotelling = if hotelling {
        let x = if config.center { data.centered() } else { data.clone() };
        let h = hotelling_statistic(&x, &tree)?;
        Some(HotellingReport { statistic: h.statistic, dof: h.dof, rank: h.rank })
    } else {
        None
    };
    let report = Report {
        statistic: r.statistic,
        quantile: r.quantile,
        p_value: r.p_value,
        reject: r.reject,
        alpha,
        k_effective: r.k_effective,
        diag_floor_hits: r.diag_floor_hits,
        n: data.n(),
        m: data.m(),
        batch: config.batch_size,
        multipliers: config.num_multipliers,
        mode: match boot.mode {
            Mode::Equalities => "equalities",
            Mode::All => "all",
        },
        centered: config.center,
        subsample: config.subsample,
        seed: config.seed,
        hotelling,
    };
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(p) = out {
        fs::write(p, format!("{json}\n")).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(r.reject)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    setup: SetupArg,
    m: usize,
    n: usize,
    reps: usize,
    boot: &BootArgs,
    alphas: Option<Vec<f64>>,
    out: Option<&Path>,
    svg_path: Option<&Path>,
) -> Result<()> {
    let cfg = SizeStudyConfig {
        setup: setup.into(),
        m,
        n,
        reps,
        alphas: alphas.unwrap_or_else(alpha_grid),
        batch_size: boot.batch,
        num_multipliers: boot.multipliers,
        seed: boot.seed,
        mode: boot.mode.into(),
        center: !boot.no_center,
        subsample: boot.subsample,
    };
    let curve = size_study(&cfg)?;
    let mut w = csv::Writer::from_writer(io::output(out)?);
    w.write_record(["alpha", "empirical_size", "reps"])?;
    for (i, a) in curve.alphas.iter().enumerate() {
        w.write_record([a.to_string(), curve.empirical_size(i).to_string(), reps.to_string()])?;
    }
    w.flush()?;
    let svg_path = svg_path.map(Path::to_path_buf).or_else(|| out.map(|p| p.with_extension("svg")));
    if let Some(p) = svg_path {
        let setup_no = match setup {
            SetupArg::One => 1,
            SetupArg::Two => 2,
        };
        let title = format!("Setup {setup_no}, m = {m}, n = {n}, {reps} replications");
        fs::write(&p, svg::size_plot(&curve, &title)).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn generate(
    setup: Option<SetupArg>,
    m: Option<usize>,
    tree: Option<&Path>,
    params: Option<&Path>,
    n: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let data_seed = derive_seed(seed, stream::DATA, 0);
    let data = match (tree, params, setup, m) {
        (Some(t), Some(p), _, _) => {
            let tree = read_tree(t)?;
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            let params = params::parse(&text, &tree).with_context(|| format!("invalid parameter file {}", p.display()))?;
            let cov = covariance_from_tree(&params)?;
            sample(&cov, n, data_seed)?.with_names(tree.observed_names())?
        }
        (None, None, Some(s), Some(m)) => {
            let params = setup_params(s.into(), m, derive_seed(seed, stream::PARAMS, 0))?;
            sample(&covariance_from_factor(&params)?, n, data_seed)?
        }
        _ => bail!("give either --setup and --m, or --tree and --params"),
    };
    io::write_data(&data, io::output(out)?)
}

fn check_metric(data: &Path, tree: &Path, from_covariance: bool, tol: f64) -> Result<bool> {
    let tree = read_tree(tree)?;
    let mut values = io::read_matrix(data)?;
    if from_covariance {
        values = correlation_metric(&values)?.as_matrix().clone();
    }
    let mut stdout = std::io::stdout().lock();
    match is_t_induced(&values, &tree, tol) {
        Ok(report) => {
            writeln!(stdout, "induced: {}", report.induced)?;
            writeln!(stdout, "violations: {}", report.violations.len())?;
            for v in &report.violations {
                writeln!(stdout, "  {v}")?;
            }
            Ok(report.induced)
        }
        Err(e @ treetest::metric::MetricError::Triangle { .. }) => {
            writeln!(stdout, "induced: false")?;
            writeln!(stdout, "not a metric: {e}")?;
            Ok(false)
        }
        Err(e) => Err(e.into()),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Enumerate { tree, mode, out } => enumerate(&tree, mode, out.as_deref())?,
        Command::Test { tree, data, boot, alpha, hotelling, exit_on_reject, out } => {
            let reject = test(&tree, &data, &boot, alpha, hotelling, out.as_deref())?;
            if reject && exit_on_reject {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Simulate { setup, m, n, reps, boot, alphas, out, svg } => {
            simulate(setup, m, n, reps, &boot, alphas, out.as_deref(), svg.as_deref())?
        }
        Command::Generate { setup, m, tree, params, n, seed, out } => {
            generate(setup, m, tree.as_deref(), params.as_deref(), n, seed, out.as_deref())?
        }
        Command::CheckMetric { data, tree, from_covariance, tol, exit_on_reject } => {
            let induced = check_metric(&data, &tree, from_covariance, tol)?;
            if !induced && exit_on_reject {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
