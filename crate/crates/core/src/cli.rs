//! Command-line front end: argument parsing, config-file merging,
//! validation, and the four commands.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use radcurv::curvature::{bump_pool, hessian_of_transform, verify_against, HessianMode};
use radcurv::embeddings::{circle_embedding, dirac_embedding, line_embedding, FamilyEmbedding};
use radcurv::domain::builtin;
use radcurv::io;
use radcurv::transform::{self, axis_names, sample_grid, DEFAULT_RANK_TOL};
use radcurv::{
    annihilator_basis, make_grid, make_test_function, verify_curvature_theorem, Embedding,
    GridDomain, Interval, KernelOrder, TestFunction, VerifyOptions,
};

#[derive(Debug, Parser)]
#[command(name = "radcurv", version, about = "Generalized Radon transforms and the curvature of distribution families")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample R f on a regular chart grid; writes sinogram.csv and sinogram.pgm.
    Sinogram(Options),
    /// Compare the second fundamental form with the Hessian of R f; writes verify.json.
    Verify(Options),
    /// Rank and nullspace of the sampled operator; writes kernel.json.
    Kernel(Options),
    /// Identity and curvature of the point-evaluation family; writes dirac_demo.json.
    DiracDemo(Options),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    Dirac,
    Line,
    Circle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionKind {
    Gaussian,
    Bump,
    TwoBumps,
}

/// Every setting is optional so that a `--config` file can supply it;
/// flags win over the file, the file over built-in defaults.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// JSON file with any of the settings below (snake_case keys).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Nodes per axis of the square grid.
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Domain extent `lo,hi`, shared by both axes.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub extent: Option<Vec<f64>>,
    #[arg(long)]
    pub margin: Option<usize>,
    #[arg(long, value_enum)]
    pub embedding: Option<EmbeddingKind>,
    /// Circle radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Samples along the first chart axis (θ for lines).
    #[arg(long)]
    pub angles: Option<usize>,
    /// Samples along the second chart axis (s for lines).
    #[arg(long)]
    pub offsets: Option<usize>,
    /// Quadrature samples per line or circle.
    #[arg(long)]
    pub t_samples: Option<usize>,
    /// Built-in test function for `sinogram` and `dirac-demo`.
    #[arg(long = "f", value_enum)]
    pub f: Option<FunctionKind>,
    /// Center of the built-in test function, `x1,x2`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub f_center: Option<Vec<f64>>,
    /// Width (Gaussian) or radius (bumps) of the built-in test function.
    #[arg(long)]
    pub f_width: Option<f64>,
    /// Chart point, comma separated; drawn from the seed when absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y: Option<Vec<f64>>,
    /// Random direction pairs for `verify`.
    #[arg(long)]
    pub directions: Option<usize>,
    /// Gaussian bumps in the annihilator pool.
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Pass tolerance of `verify`, or rank tolerance of `kernel`.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write the kernel basis as CSV (`kernel`).
    #[arg(long)]
    pub basis_csv: Option<bool>,
}

impl Options {
    /// `self` over `base`, field by field.
    fn over(self, base: Options) -> Options {
        Options {
            config: self.config,
            grid_n: self.grid_n.or(base.grid_n),
            extent: self.extent.or(base.extent),
            margin: self.margin.or(base.margin),
            embedding: self.embedding.or(base.embedding),
            radius: self.radius.or(base.radius),
            angles: self.angles.or(base.angles),
            offsets: self.offsets.or(base.offsets),
            t_samples: self.t_samples.or(base.t_samples),
            f: self.f.or(base.f),
            f_center: self.f_center.or(base.f_center),
            f_width: self.f_width.or(base.f_width),
            y: self.y.or(base.y),
            directions: self.directions.or(base.directions),
            pool_size: self.pool_size.or(base.pool_size),
            tol: self.tol.or(base.tol),
            seed: self.seed.or(base.seed),
            out_dir: self.out_dir.or(base.out_dir),
            basis_csv: self.basis_csv.or(base.basis_csv),
        }
    }

    fn with_file(self) -> Result<Options> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: Options = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(self.over(file))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Sinogram,
    Verify,
    Kernel,
    DiracDemo,
}

/// Fully resolved and validated settings.
#[derive(Debug, Clone)]
struct RunConfig {
    mode: Mode,
    grid_n: usize,
    extent: Interval,
    margin: usize,
    embedding: EmbeddingKind,
    radius: f64,
    angles: usize,
    offsets: usize,
    t_samples: usize,
    f: FunctionKind,
    f_center: Vec<f64>,
    f_width: f64,
    y: Option<Vec<f64>>,
    directions: usize,
    pool_size: usize,
    tol: f64,
    seed: u64,
    out_dir: PathBuf,
    basis_csv: bool,
}

impl RunConfig {
    fn resolve(mode: Mode, opts: Options) -> Result<Self> {
        let opts = opts.with_file()?;
        let embedding = match mode {
            Mode::DiracDemo => {
                ensure!(
                    matches!(opts.embedding, None | Some(EmbeddingKind::Dirac)),
                    "dirac-demo only runs the dirac embedding"
                );
                EmbeddingKind::Dirac
            }
            _ => opts.embedding.unwrap_or(EmbeddingKind::Line),
        };
        // Per-family defaults: lines need room for the whole Gaussian.
        let (grid_default, half) = match (mode, embedding) {
            (Mode::Kernel, EmbeddingKind::Dirac) => (16, 1.0),
            (Mode::Kernel, _) => (24, 1.0),
            (_, EmbeddingKind::Line) => (128, 4.0),
            _ => (64, 1.0),
        };
        let extent = match opts.extent.as_deref() {
            None => Interval::new(-half, half),
            Some(&[lo, hi]) => Interval::new(lo, hi),
            Some(other) => bail!("--extent takes two values lo,hi, got {}", other.len()),
        };
        ensure!(
            extent.lo.is_finite() && extent.hi.is_finite() && extent.hi > extent.lo,
            "extent must satisfy lo < hi"
        );
        let w = extent.width();
        let (angles_default, offsets_default) = match (mode, embedding) {
            (Mode::Kernel, EmbeddingKind::Line) => (1, 41),
            (Mode::Kernel, _) => (8, 8),
            _ => (64, 41),
        };
        let cfg = RunConfig {
            mode,
            grid_n: opts.grid_n.unwrap_or(grid_default),
            extent,
            margin: opts.margin.unwrap_or(3),
            embedding,
            radius: opts.radius.unwrap_or(0.15 * w),
            angles: opts.angles.unwrap_or(angles_default),
            offsets: opts.offsets.unwrap_or(offsets_default),
            t_samples: opts.t_samples.unwrap_or(match embedding {
                EmbeddingKind::Line => 256,
                _ => 128,
            }),
            f: opts.f.unwrap_or(FunctionKind::Gaussian),
            f_center: opts.f_center.unwrap_or_else(|| vec![extent.center(); 2]),
            f_width: opts.f_width.unwrap_or(match opts.f.unwrap_or(FunctionKind::Gaussian) {
                FunctionKind::Gaussian => w / 16.0,
                _ => w / 6.0,
            }),
            y: opts.y,
            directions: opts.directions.unwrap_or(10),
            pool_size: opts.pool_size.unwrap_or(12),
            tol: opts.tol.unwrap_or(match mode {
                Mode::Kernel => DEFAULT_RANK_TOL,
                Mode::DiracDemo => 1e-8,
                _ => 1e-4,
            }),
            seed: opts.seed.unwrap_or(0),
            out_dir: opts.out_dir.unwrap_or_else(|| PathBuf::from(".")),
            basis_csv: opts.basis_csv.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        ensure!(self.grid_n >= 8, "--grid-n must be at least 8");
        ensure!(self.margin >= 3, "--margin must be at least 3");
        ensure!(2 * self.margin + 2 <= self.grid_n, "--margin leaves no interior nodes");
        ensure!(self.angles > 0, "--angles must be positive");
        ensure!(self.offsets > 0, "--offsets must be positive");
        ensure!(self.t_samples >= 64, "--t-samples must be at least 64");
        ensure!(self.radius.is_finite() && self.radius > 0.0, "--radius must be positive");
        ensure!(self.f_center.len() == 2, "--f-center takes two values");
        ensure!(self.f_center.iter().all(|v| v.is_finite()), "--f-center must be finite");
        ensure!(self.f_width.is_finite() && self.f_width > 0.0, "--f-width must be positive");
        ensure!(self.directions > 0, "--directions must be positive");
        ensure!(self.pool_size > 0, "--pool-size must be positive");
        ensure!(self.tol.is_finite() && self.tol > 0.0, "--tol must be positive");
        if let Some(y) = &self.y {
            ensure!(y.len() == 2, "--y takes two values");
            ensure!(y.iter().all(|v| v.is_finite()), "--y must be finite");
        }
        Ok(())
    }

    fn domain(&self) -> Result<GridDomain> {
        Ok(make_grid(2, &[self.extent], &[self.grid_n], self.margin)?)
    }

    fn embedding(&self, domain: &GridDomain) -> Result<FamilyEmbedding> {
        Ok(match self.embedding {
            EmbeddingKind::Dirac => dirac_embedding(domain, KernelOrder::Cubic)?,
            EmbeddingKind::Line => line_embedding(domain, self.t_samples)?,
            EmbeddingKind::Circle => circle_embedding(domain, self.radius, self.t_samples)?,
        })
    }

    fn test_function(&self, domain: &GridDomain) -> TestFunction {
        let c = &self.f_center;
        match self.f {
            FunctionKind::Gaussian => builtin::gaussian(domain, c, self.f_width),
            FunctionKind::Bump => builtin::bump(domain, c, self.f_width),
            FunctionKind::TwoBumps => builtin::two_bumps(domain, c, self.f_width, 0.6 * self.f_width),
        }
    }

    /// `--y`, or a point drawn from the seed in the inner 80% of the chart.
    fn chart_point(&self, emb: &FamilyEmbedding) -> Result<Vec<f64>> {
        if let Some(y) = &self.y {
            ensure!(emb.chart().contains(y), "--y {y:?} lies outside the chart");
            return Ok(y.clone());
        }
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let u: Vec<f64> = (0..emb.chart().k()).map(|_| 0.1 + 0.8 * rng.random::<f64>()).collect();
        Ok(emb.chart().from_unit(&u))
    }

    fn out(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        Ok(self.out_dir.join(name))
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    io::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

/// Runs one command; `Ok(false)` means the checks ran but failed.
pub fn run(cli: Cli) -> Result<bool> {
    let (mode, opts) = match cli.command {
        Command::Sinogram(o) => (Mode::Sinogram, o),
        Command::Verify(o) => (Mode::Verify, o),
        Command::Kernel(o) => (Mode::Kernel, o),
        Command::DiracDemo(o) => (Mode::DiracDemo, o),
    };
    let cfg = RunConfig::resolve(mode, opts)?;
    match cfg.mode {
        Mode::Sinogram => sinogram(&cfg),
        Mode::Verify => verify(&cfg),
        Mode::Kernel => kernel(&cfg),
        Mode::DiracDemo => dirac_demo(&cfg),
    }
}

fn sinogram(cfg: &RunConfig) -> Result<bool> {
    let domain = cfg.domain()?;
    let emb = cfg.embedding(&domain)?;
    let f = cfg.test_function(&domain);
    let axes = emb.chart().bounds().to_vec();
    let st = transform::radon_forward_grid(&emb, &f, &axes, &[cfg.angles, cfg.offsets])?;
    for w in &st.warnings {
        warn(w);
    }
    let names = axis_names(emb.descriptor().as_ref(), emb.chart().k());
    write(&cfg.out("sinogram.csv")?, st.to_csv(&names).as_bytes())?;
    write(&cfg.out("sinogram.pgm")?, &st.to_pgm()?)?;
    Ok(true)
}

fn verify(cfg: &RunConfig) -> Result<bool> {
    let domain = cfg.domain()?;
    let emb = cfg.embedding(&domain)?;
    let y = cfg.chart_point(&emb)?;
    let pool = bump_pool(&domain, cfg.pool_size, cfg.seed);
    let opts = VerifyOptions {
        n_directions: cfg.directions,
        tol: cfg.tol,
        seed: cfg.seed,
        hessian_steps: None,
    };
    let report = verify_curvature_theorem(&emb, &y, &pool, &opts)?;
    io::write_json(&cfg.out("verify.json")?, &report)?;
    if !report.pass {
        eprintln!(
            "verification failed: max relative residual {:e} exceeds {:e}",
            report.max_rel_residual, report.tolerance
        );
    }
    Ok(report.pass)
}

fn kernel(cfg: &RunConfig) -> Result<bool> {
    let domain = cfg.domain()?;
    let emb = cfg.embedding(&domain)?;
    let samples = match cfg.embedding {
        // Every interior node: the full sampling of the identity transform.
        EmbeddingKind::Dirac => domain
            .interior_indices()
            .into_iter()
            .map(|i| domain.node_coord(&domain.unravel(i)))
            .collect(),
        _ => {
            let c = emb.chart();
            sample_grid(c.bounds(), c.periodic(), &[cfg.angles, cfg.offsets])?
        }
    };
    let a = transform::operator_matrix(&emb, &samples)?;
    let report = transform::kernel_diagnostics(&a, &domain, cfg.tol)?;
    io::write_json(&cfg.out("kernel.json")?, &report)?;
    if cfg.basis_csv {
        write(&cfg.out("kernel_basis.csv")?, report.basis_csv().as_bytes())?;
    }
    Ok(true)
}

#[derive(Serialize)]
struct DiracDemo {
    grid: radcurv::domain::GridHeader,
    y: Vec<f64>,
    identity_max_abs_error: f64,
    hessian_analytic: Vec<Vec<f64>>,
    hessian_finite_difference: Vec<Vec<f64>>,
    curvature: radcurv::CurvatureReport,
    pass: bool,
}

fn dirac_demo(cfg: &RunConfig) -> Result<bool> {
    let domain = cfg.domain()?;
    let emb = cfg.embedding(&domain)?;
    let f = cfg.test_function(&domain);
    let nodes: Vec<usize> = domain.interior_indices();
    let samples: Vec<Vec<f64>> = nodes.iter().map(|&i| domain.node_coord(&domain.unravel(i))).collect();
    let st = transform::radon_forward(&emb, &f, &samples)?;
    for w in &st.warnings {
        warn(w);
    }
    let identity_max_abs_error = st
        .values
        .iter()
        .zip(&nodes)
        .fold(0.0_f64, |m, (v, &i)| m.max((v - f.values()[i]).abs()));

    let y = cfg.chart_point(&emb)?;
    let ha = hessian_of_transform(&emb, &f, &y, HessianMode::Analytic)?;
    let hf = hessian_of_transform(&emb, &f, &y, HessianMode::FiniteDifference)?;
    // Quadratics centered at y annihilate the tangent space there.
    let (p, q) = (y[0], y[1]);
    let pool = vec![
        make_test_function(&domain, move |x| (x[0] - p) * (x[0] - p)),
        make_test_function(&domain, move |x| (x[1] - q) * (x[1] - q)),
        make_test_function(&domain, move |x| (x[0] - p) * (x[1] - q)),
    ];
    let basis = annihilator_basis(&emb, &y, &pool)?;
    let opts = VerifyOptions {
        n_directions: cfg.directions,
        tol: cfg.tol,
        seed: cfg.seed,
        hessian_steps: None,
    };
    let mut curvature = verify_against(&emb, &y, &basis.functions, &opts)?;
    curvature.annihilator_residual = basis.construction_residual;
    let pass = identity_max_abs_error <= 1e-12 && curvature.pass;
    let demo = DiracDemo {
        grid: domain.header(),
        y,
        identity_max_abs_error,
        hessian_analytic: ha.h,
        hessian_finite_difference: hf.h,
        curvature,
        pass,
    };
    io::write_json(&cfg.out("dirac_demo.json")?, &demo)?;
    Ok(pass)
}
