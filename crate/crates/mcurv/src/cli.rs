//! The `mcurv` command line: augment -> (external activation export) ->
//! estimate-dim / frame / curvature -> compare-euclid / compare-curvature -> report.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use mcurv_core::augment::{DerivativeGrid, GridSpec, DEFAULT_K_MAX};
use mcurv_core::compare::{
    compare_manifolds, euclidean_stats, range_percentage, AlignMethod, EuclideanStats, ManifoldComparison,
    RatioOutcome, DEFAULT_EPS_RATIO,
};
use mcurv_core::curvature::{analyze_patch, CurvatureOptions, CurvatureReport};
use mcurv_core::synth::{generate, CurvatureOracle, SynthKind, SynthSpec};
use mcurv_core::tangent::{build_frame, estimate_dimension, pca_spectrum, Spectrum, DEFAULT_RESIDUAL_TOL, DEFAULT_THETA};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid;
use crate::patchio::{self, SCHEMA_VERSION};

/// Estimate intrinsic dimension and curvature of sampled manifolds and compare two of them.
#[derive(Debug, Parser)]
#[command(name = "mcurv", version, propagate_version = true)]
pub struct RunConfig {
    /// Worker threads for parallel stages; 0 uses every core.
    #[arg(long, global = true, env = "CURV_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write every trailing-k derivative image of a PGM/PPM image plus a manifest.
    Augment(AugmentArgs),
    /// Sample a synthetic patch with known curvature.
    Synth(SynthArgs),
    /// PCA spectrum and intrinsic dimension of a patch.
    EstimateDim(EstimateDimArgs),
    /// Orthonormal tangent/normal frame at a patch's base point.
    Frame(FrameArgs),
    /// Riemann and sectional curvature distributions of a patch.
    Curvature(CurvatureArgs),
    /// Euclidean statistics and affine alignment of two index-aligned patches.
    CompareEuclid(CompareEuclidArgs),
    /// Similar ratios between two curvature reports.
    CompareCurvature(CompareCurvatureArgs),
    /// Aggregate similar ratios from many comparisons into range percentages.
    Report(ReportArgs),
}

fn parse_theta(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("theta must lie in (0, 1], got {v}"))
    }
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("value must lie in [0, 1), got {v}"))
    }
}

fn parse_non_negative(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("value must be a finite non-negative number, got {v}"))
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AugmentMode {
    /// Zero the last k_c singular values of channel c.
    Trailing,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Input PGM (P2/P5) or PPM (P3/P6) image.
    #[arg(long)]
    pub input: PathBuf,
    /// Largest trailing count per channel.
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    pub k_max: usize,
    #[arg(long, value_enum, default_value = "trailing")]
    pub mode: AugmentMode,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Write unquantised float matrices (CSV per channel) instead of images.
    #[arg(long)]
    pub raw: bool,
    /// File name prefix; defaults to the input file stem.
    #[arg(long)]
    pub stem: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Flat,
    Sphere,
    Graph,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    /// Intrinsic dimension.
    #[arg(long = "d")]
    pub intrinsic: usize,
    /// Ambient dimension.
    #[arg(long = "D")]
    pub ambient: usize,
    /// Sphere radius.
    #[arg(long = "r")]
    pub radius: Option<f64>,
    /// Patch radius (geodesic for spheres).
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed for the ambient embedding only; defaults to --seed.
    #[arg(long)]
    pub embed_seed: Option<u64>,
    /// Standard deviation of isotropic Gaussian coordinate noise.
    #[arg(long, default_value_t = 0.0, value_parser = parse_non_negative)]
    pub noise: f64,
    /// Graph Hessian, rows separated by ';' (e.g. "2,0;0,3"); repeat per normal direction.
    #[arg(long = "hessian")]
    pub hessians: Vec<String>,
    /// Output patch CSV; writes NAME.meta.json and NAME.oracle.json beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateDimArgs {
    #[arg(long)]
    pub patch: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THETA, value_parser = parse_theta)]
    pub theta: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FrameArgs {
    #[arg(long)]
    pub patch: PathBuf,
    /// Intrinsic dimension; estimated with --theta when absent.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_THETA, value_parser = parse_theta)]
    pub theta: f64,
    #[arg(long, default_value_t = DEFAULT_RESIDUAL_TOL, value_parser = parse_fraction)]
    pub residual_tol: f64,
    /// Header JSON; bases go to NAME.base.csv, NAME.tangent.csv, NAME.normal.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurvatureArgs {
    #[arg(long)]
    pub patch: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THETA, value_parser = parse_theta)]
    pub theta: f64,
    /// Intrinsic dimension override.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_RESIDUAL_TOL, value_parser = parse_fraction)]
    pub residual_tol: f64,
    /// Ridge damping for the Hessian regression.
    #[arg(long, default_value_t = 0.0, value_parser = parse_non_negative)]
    pub ridge: f64,
    /// Sort absolute values instead of signed ones.
    #[arg(long = "abs")]
    pub absolute: bool,
    /// Rotate the frame until fitted gradients vanish at the base point.
    #[arg(long)]
    pub align_frame: bool,
    /// Report JSON; distributions also go to NAME.riemann.csv and NAME.sectional.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareEuclidArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Also align the patches' own d-dimensional PCA reductions.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Restrict T to a scaled rotation.
    #[arg(long)]
    pub procrustes: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareCurvatureArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Drop ratio entries whose denominator is below this fraction of the largest.
    #[arg(long, default_value_t = DEFAULT_EPS_RATIO, value_parser = parse_non_negative)]
    pub eps_ratio: f64,
    /// Comparison JSON; ratio curves also go to NAME.riemann_ratio.csv and NAME.sectional_ratio.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory searched recursively for compare-curvature outputs.
    #[arg(long)]
    pub dir: PathBuf,
    /// Open interval LO HI; repeatable.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], action = clap::ArgAction::Append)]
    pub range: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// JSON written by `curvature`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureDoc {
    pub schema_version: u32,
    pub command: String,
    pub patch: String,
    #[serde(flatten)]
    pub report: CurvatureReport,
}

/// JSON written by `compare-curvature`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonDoc {
    pub schema_version: u32,
    pub command: String,
    pub a: String,
    pub b: String,
    pub eps_ratio: f64,
    #[serde(flatten)]
    pub comparison: ManifoldComparison,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EuclidDoc {
    pub schema_version: u32,
    pub command: String,
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub stats: EuclideanStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionDoc {
    pub schema_version: u32,
    pub command: String,
    pub patch: String,
    pub count: usize,
    pub ambient_dim: usize,
    pub theta: f64,
    pub dimension: usize,
    pub spectrum: Spectrum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameDoc {
    pub schema_version: u32,
    pub command: String,
    pub patch: String,
    pub dimension: usize,
    pub ambient_dim: usize,
    pub normal_rank: usize,
    pub base_index: usize,
    pub residual_tol: f64,
    pub residual_singular_values: Vec<f64>,
    pub orthonormality_error: f64,
    pub base_file: String,
    pub tangent_file: String,
    pub normal_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthDoc {
    pub schema_version: u32,
    pub command: String,
    pub kind: String,
    pub intrinsic_dim: usize,
    pub ambient_dim: usize,
    pub radius: Option<f64>,
    pub hessians: Vec<Vec<Vec<f64>>>,
    pub patch_radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub embed_seed: Option<u64>,
    pub noise: f64,
    pub oracle: CurvatureOracle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangeFraction {
    pub lo: f64,
    pub hi: f64,
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioSummary {
    pub values: Vec<f64>,
    pub degenerate: usize,
    pub ranges: Vec<RangeFraction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportDoc {
    pub schema_version: u32,
    pub command: String,
    pub dir: String,
    pub files: Vec<String>,
    pub dimension_mismatches: usize,
    pub riemann: RatioSummary,
    pub sectional: RatioSummary,
}

/// A failure tagged with the subcommand that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct CliError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, CliError>;
}

impl<T, E: Into<Error>> Stage<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, CliError> {
        self.map_err(|e| CliError {
            stage,
            source: e.into(),
        })
    }
}

/// Parses `argv` and runs the subcommand. Exit codes: 0 success, 1 data or
/// parameter error, 2 usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&config) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(config: &RunConfig) -> std::result::Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError {
            stage: "threads",
            source: Error::Format(e.to_string()),
        })?;
    pool.install(|| match &config.command {
        Command::Augment(a) => augment(a),
        Command::Synth(a) => synth(a),
        Command::EstimateDim(a) => estimate_dim(a),
        Command::Frame(a) => frame(a),
        Command::Curvature(a) => curvature(a),
        Command::CompareEuclid(a) => compare_euclid(a),
        Command::CompareCurvature(a) => compare_curvature(a),
        Command::Report(a) => report(a),
    })
}

fn require_file(path: &Path, stage: &'static str) -> std::result::Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError {
            stage,
            source: Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")),
        })
    }
}

fn require_parent(path: &Path, stage: &'static str) -> std::result::Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError {
            stage,
            source: Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist")),
        }),
        _ => Ok(()),
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn augment(args: &AugmentArgs) -> std::result::Result<(), CliError> {
    const STAGE: &str = "augment";
    require_file(&args.input, STAGE)?;
    let img = patchio::read_image(&args.input).stage(STAGE)?;
    let grid = DerivativeGrid::new(&img, GridSpec { k_max: args.k_max }).stage(STAGE)?;
    let stem = args.stem.clone().unwrap_or_else(|| {
        args.input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "img".into())
    });
    info!("writing {} derivative images to {}", grid.len(), args.out_dir.display());
    let manifest = grid::write_grid(&grid, &img, &display(&args.input), &stem, &args.out_dir, args.raw).stage(STAGE)?;
    info!("manifest: {}", manifest.display());
    Ok(())
}

fn parse_hessian(text: &str, d: usize) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad Hessian entry {v:?}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Format(format!("Hessian {text:?} is not {d}x{d}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn synth(args: &SynthArgs) -> std::result::Result<(), CliError> {
    const STAGE: &str = "synth";
    require_parent(&args.out, STAGE)?;
    let kind = match args.kind {
        Kind::Flat => SynthKind::Flat,
        Kind::Sphere => SynthKind::Sphere {
            radius: args
                .radius
                .ok_or_else(|| Error::Format("--r is required for spheres".into()))
                .stage(STAGE)?,
        },
        Kind::Graph => SynthKind::Graph {
            hessians: args
                .hessians
                .iter()
                .map(|h| parse_hessian(h, args.intrinsic))
                .collect::<Result<_>>()
                .stage(STAGE)?,
        },
    };
    let mut spec = SynthSpec::new(kind, args.intrinsic, args.ambient)
        .radius(args.rho)
        .samples(args.n)
        .seed(args.seed)
        .noise(args.noise);
    spec.embed_seed = args.embed_seed;
    let sample = generate(&spec).stage(STAGE)?;
    patchio::write_patch(&sample.patch, &args.out).stage(STAGE)?;
    let (kind, radius, hessians) = match &spec.kind {
        SynthKind::Flat => ("flat", None, Vec::new()),
        SynthKind::Sphere { radius } => ("sphere", Some(*radius), Vec::new()),
        SynthKind::Graph { hessians } => (
            "graph",
            None,
            hessians
                .iter()
                .map(|h| h.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
        ),
    };
    let doc = SynthDoc {
        schema_version: SCHEMA_VERSION,
        command: "synth".into(),
        kind: kind.into(),
        intrinsic_dim: spec.intrinsic_dim,
        ambient_dim: spec.ambient_dim,
        radius,
        hessians,
        patch_radius: spec.patch_radius,
        samples: spec.samples,
        seed: spec.seed,
        embed_seed: spec.embed_seed,
        noise: spec.noise,
        oracle: sample.oracle,
    };
    patchio::write_json(&doc, Some(&patchio::sibling(&args.out, ".oracle.json"))).stage(STAGE)
}

fn estimate_dim(args: &EstimateDimArgs) -> std::result::Result<(), CliError> {
    const STAGE: &str = "estimate-dim";
    require_file(&args.patch, STAGE)?;
    let patch = patchio::read_patch(&args.patch).stage(STAGE)?;
    let spectrum = pca_spectrum(&patch);
    let dimension = estimate_dimension(&spectrum, args.theta).stage(STAGE)?;
    let doc = DimensionDoc {
        schema_version: SCHEMA_VERSION,
        command: "estimate-dim".into(),
        patch: display(&args.patch),
        count: patch.len(),
        ambient_dim: patch.ambient_dim(),
        theta: args.theta,
        dimension,
        spectrum,
    };
    patchio::write_json(&doc, args.out.as_deref()).stage(STAGE)
}

fn frame(args: &FrameArgs) -> std::result::Result<(), CliError> {
    const STAGE: &str = "frame";
    require_file(&args.patch, STAGE)?;
    require_parent(&args.out, STAGE)?;
    let patch = patchio::read_patch(&args.patch).stage(STAGE)?;
    let d = match args.dim {
        Some(d) => d,
        None => estimate_dimension(&pca_spectrum(&patch), args.theta).stage(STAGE)?,
    };
    let f = build_frame(&patch, d, args.residual_tol).stage(STAGE)?;
    let files = [".base.csv", ".tangent.csv", ".normal.csv"].map(|s| patchio::sibling(&args.out, s));
    let base = DMatrix::from_row_slice(1, f.ambient_dim(), f.base.as_slice());
    patchio::write_matrix_file(&base, &files[0]).stage(STAGE)?;
    patchio::write_matrix_file(&f.tangent.transpose(), &files[1]).stage(STAGE)?;
    patchio::write_matrix_file(&f.normal.transpose(), &files[2]).stage(STAGE)?;
    let name = |p: &PathBuf| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let doc = FrameDoc {
        schema_version: SCHEMA_VERSION,
        command: "frame".into(),
        patch: display(&args.patch),
        dimension: d,
        ambient_dim: f.ambient_dim(),
        normal_rank: f.normal_rank(),
        base_index: patch.base_index(),
        residual_tol: args.residual_tol,
        orthonormality_error: f.orthonormality_error(),
        residual_singular_values: f.residual_singular_values.clone(),
        base_file: name(&files[0]),
        tangent_file: name(&files[1]),
        normal_file: name(&files[2]),
    };
    patchio::write_json(&doc, Some(&args.out)).stage(STAGE)
}

fn curvature(args: &CurvatureArgs) -> std::result::Result<(), CliError> {
    const STAGE: &str = "curvature";
    require_file(&args.patch, STAGE)?;
    if let Some(out) = &args.out {
        require_parent(out, STAGE)?;
    }
    let patch = patchio::read_patch(&args.patch).stage(STAGE)?;
    let opts = CurvatureOptions {
        theta: args.theta,
        dimension: args.dim,
        residual_tol: args.residual_tol,
        ridge: args.ridge,
        absolute: args.absolute,
        align_frame: args.align_frame,
    };
    let analysis = analyze_patch(&patch, &opts).stage(STAGE)?;
    if analysis.hessians.rank_deficient {
        warn!(
            "Hessian design matrix is rank deficient (rank {} of {}); minimum-norm solution used",
            analysis.hessians.design_rank,
            mcurv_core::curvature::feature_count(analysis.report.dimension)
        );
    }
    let doc = CurvatureDoc {
        schema_version: SCHEMA_VERSION,
        command: "curvature".into(),
        patch: display(&args.patch),
        report: analysis.report,
    };
    if let Some(out) = &args.out {
        patchio::write_distribution(&doc.report.riemann_distribution, &patchio::sibling(out, ".riemann.csv"))
            .stage(STAGE)?;
        patchio::write_distribution(&doc.report.sectional_distribution, &patchio::sibling(out, ".sectional.csv"))
            .stage(STAGE)?;
    }
    patchio::write_json(&doc, args.out.as_deref()).stage(STAGE)
}

fn compare_euclid(args: &CompareEuclidArgs) -> std::result::Result<(), CliError> {
    const STAGE: &str = "compare-euclid";
    require_file(&args.a, STAGE)?;
    require_file(&args.b, STAGE)?;
    let a = patchio::read_patch(&args.a).stage(STAGE)?;
    let b = patchio::read_patch(&args.b).stage(STAGE)?;
    let method = if args.procrustes {
        AlignMethod::Procrustes
    } else {
        AlignMethod::Affine
    };
    let stats = euclidean_stats(&a, &b, args.dim, method).stage(STAGE)?;
    if stats.normalized.underdetermined {
        warn!("fewer points than unknowns per coordinate; minimum-norm affine map reported");
    }
    let doc = EuclidDoc {
        schema_version: SCHEMA_VERSION,
        command: "compare-euclid".into(),
        a: display(&args.a),
        b: display(&args.b),
        stats,
    };
    patchio::write_json(&doc, args.out.as_deref()).stage(STAGE)
}

fn read_report(path: &Path) -> Result<CurvatureReport> {
    let doc: CurvatureDoc = patchio::read_json(path)?;
    doc.report.validate()?;
    Ok(doc.report)
}

fn compare_curvature(args: &CompareCurvatureArgs) -> std::result::Result<(), CliError> {
    const STAGE: &str = "compare-curvature";
    require_file(&args.a, STAGE)?;
    require_file(&args.b, STAGE)?;
    let a = read_report(&args.a).stage(STAGE)?;
    let b = read_report(&args.b).stage(STAGE)?;
    let comparison = compare_manifolds(&a, &b, args.eps_ratio);
    if !comparison.dimension_match {
        warn!("dimension mismatch: {} versus {}", a.dimension, b.dimension);
    }
    if let Some(out) = &args.out {
        for (outcome, suffix) in [
            (&comparison.riemann, ".riemann_ratio.csv"),
            (&comparison.sectional, ".sectional_ratio.csv"),
        ] {
            if let Some(RatioOutcome::Ok(r)) = outcome {
                patchio::write_distribution(&r.ratios, &patchio::sibling(out, suffix)).stage(STAGE)?;
            }
        }
    }
    let doc = ComparisonDoc {
        schema_version: SCHEMA_VERSION,
        command: "compare-curvature".into(),
        a: display(&args.a),
        b: display(&args.b),
        eps_ratio: args.eps_ratio,
        comparison,
    };
    patchio::write_json(&doc, args.out.as_deref()).stage(STAGE)
}

fn json_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            json_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    Ok(())
}

fn load_comparison(path: &Path) -> Result<Option<ComparisonDoc>> {
    let value: serde_json::Value = patchio::read_json(path)?;
    if value.get("command").and_then(|c| c.as_str()) != Some("compare-curvature") {
        return Ok(None);
    }
    Ok(Some(serde_json::from_value(value)?))
}

fn summarize(outcomes: &[Option<&RatioOutcome>], ranges: &[(f64, f64)]) -> Result<RatioSummary> {
    let values: Vec<f64> = outcomes.iter().flatten().filter_map(|o| o.value()).collect();
    let degenerate = outcomes.iter().flatten().filter(|o| o.value().is_none()).count();
    let ranges = ranges
        .iter()
        .map(|&(lo, hi)| {
            let fraction = if values.is_empty() {
                None
            } else {
                Some(range_percentage(&values, lo, hi)?)
            };
            Ok(RangeFraction { lo, hi, fraction })
        })
        .collect::<Result<_>>()?;
    Ok(RatioSummary {
        values,
        degenerate,
        ranges,
    })
}

fn report(args: &ReportArgs) -> std::result::Result<(), CliError> {
    use rayon::prelude::*;
    const STAGE: &str = "report";
    if !args.dir.is_dir() {
        return Err(CliError {
            stage: STAGE,
            source: Error::io(&args.dir, std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory")),
        });
    }
    let ranges: Vec<(f64, f64)> = if args.range.is_empty() {
        vec![(0.8, 1.2)]
    } else {
        args.range.chunks_exact(2).map(|c| (c[0], c[1])).collect()
    };
    if let Some(&(lo, hi)) = ranges.iter().find(|(lo, hi)| lo.partial_cmp(hi) != Some(std::cmp::Ordering::Less)) {
        return Err(Error::Format(format!("empty range ({lo}, {hi})"))).stage(STAGE);
    }
    let mut paths = Vec::new();
    json_files(&args.dir, &mut paths).map_err(|e| Error::io(&args.dir, e)).stage(STAGE)?;
    paths.sort();
    let loaded = paths
        .par_iter()
        .map(|p| load_comparison(p).map(|doc| doc.map(|d| (p.clone(), d))))
        .collect::<Result<Vec<_>>>()
        .stage(STAGE)?;
    let docs: Vec<(PathBuf, ComparisonDoc)> = loaded.into_iter().flatten().collect();
    if docs.is_empty() {
        return Err(Error::Format(format!(
            "no compare-curvature outputs under {}",
            args.dir.display()
        )))
        .stage(STAGE);
    }
    let riemann: Vec<_> = docs.iter().map(|(_, d)| d.comparison.riemann.as_ref()).collect();
    let sectional: Vec<_> = docs.iter().map(|(_, d)| d.comparison.sectional.as_ref()).collect();
    let doc = ReportDoc {
        schema_version: SCHEMA_VERSION,
        command: "report".into(),
        dir: display(&args.dir),
        files: docs.iter().map(|(p, _)| display(p)).collect(),
        dimension_mismatches: docs.iter().filter(|(_, d)| !d.comparison.dimension_match).count(),
        riemann: summarize(&riemann, &ranges).stage(STAGE)?,
        sectional: summarize(&sectional, &ranges).stage(STAGE)?,
    };
    patchio::write_json(&doc, args.out.as_deref()).stage(STAGE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        RunConfig::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["mcurv", "curvature", "--bogus"]), 2);
        assert_eq!(run(["mcurv", "estimate-dim", "--patch", "x.csv", "--theta", "1.5"]), 2);
        assert_eq!(run(["mcurv"]), 2);
        assert_eq!(run(["mcurv", "--help"]), 0);
    }

    #[test]
    fn missing_input_exits_one() {
        assert_eq!(run(["mcurv", "curvature", "--patch", "/nonexistent/p.csv"]), 1);
    }

    #[test]
    fn hessian_text() {
        let h = parse_hessian("2,0;0,3", 2).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        assert!(parse_hessian("2,0;0", 2).is_err());
        assert!(parse_hessian("a,0;0,1", 2).is_err());
    }
}
