//! Command-line surface: subcommands, shared measure parameters, and the
//! parsers for lambda ("inf" allowed) and comma-separated grids.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use supck::measures::{MeasureConfig, MeasureKind};
use supck::AlignConfig;

#[derive(Debug, Parser)]
#[command(
    name = "supck",
    version,
    about = "Compare protein binding pockets and ligands as labeled 3D atom clouds"
)]
pub struct Cli {
    /// Worker threads for pairwise comparisons (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract binding pockets (or ligand clouds) from structure files.
    Extract(ExtractArgs),
    /// Score one pair of cloud files under a measure.
    Compare(CompareArgs),
    /// All-pairs similarity matrix over a directory of clouds.
    Matrix(MatrixArgs),
    /// Per-query AUC report from a matrix or a cloud directory.
    Auc(AucArgs),
    /// Ligand prediction by KNN under leave-one-out double cross-validation.
    Classify(ClassifyArgs),
    /// Kernel PCA projection for plotting.
    Kpca(KpcaArgs),
    /// Sweep (sigma, lambda) and report mean AUC and classification error.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    SupCk,
    SupCkL,
    Vol,
    PrincAxis,
    SupPi,
    SupCkVol,
    SupCkLVol,
}

impl MeasureArg {
    pub fn kind(self) -> MeasureKind {
        match self {
            MeasureArg::SupCk => MeasureKind::SupCk,
            MeasureArg::SupCkL => MeasureKind::SupCkL,
            MeasureArg::Vol => MeasureKind::Vol,
            MeasureArg::PrincAxis => MeasureKind::PrincAxis,
            MeasureArg::SupPi => MeasureKind::SupPi,
            MeasureArg::SupCkVol => MeasureKind::SupCkVol,
            MeasureArg::SupCkLVol => MeasureKind::SupCkLVol,
        }
    }
}

pub fn parse_lambda(raw: &str) -> Result<f64, String> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "none" => Ok(f64::INFINITY),
        other => other
            .parse::<f64>()
            .map_err(|_| format!("expected a number or `inf`, got `{raw}`")),
    }
}

/// Measure parameters shared by compare/matrix/auc/kpca/sweep.
#[derive(Debug, Args)]
pub struct MeasureParams {
    #[arg(long, value_enum, default_value_t = MeasureArg::SupCk)]
    pub measure: MeasureArg,

    /// Kernel width, angstroms.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,

    /// Label-kernel width; `inf` ignores labels.
    #[arg(long, value_parser = parse_lambda, default_value = "inf")]
    pub lambda: f64,

    /// Volume-combination coefficient for the *-vol measures.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,

    /// Overlap distance for sup-pi, angstroms.
    #[arg(long, default_value_t = 1.0)]
    pub tolerance: f64,

    /// Seed for the alignment's random starts.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Extra uniform-random starting rotations per pair.
    #[arg(long, default_value_t = 2)]
    pub random_starts: usize,
}

impl MeasureParams {
    pub fn to_config(&self) -> MeasureConfig {
        let mut cfg = MeasureConfig::new(self.measure.kind());
        cfg.align = AlignConfig {
            sigma: self.sigma,
            lambda: self.lambda,
            seed: self.seed,
            extra_random_starts: self.random_starts,
            ..AlignConfig::default()
        };
        cfg.overlap_tolerance = self.tolerance;
        cfg.alpha = self.alpha;
        cfg
    }

    /// Resolved parameters for manifests and matrix metadata; an infinite
    /// lambda serializes as null (labels ignored).
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "measure": self.measure.kind().name(),
            "sigma": self.sigma,
            "lambda": finite_or_null(self.lambda),
            "alpha": self.alpha,
            "overlap_tolerance": self.tolerance,
            "seed": self.seed,
            "random_starts": self.random_starts,
        })
    }
}

pub fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChargePolicyArg {
    Zero,
    Skip,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractKind {
    Pocket,
    Ligand,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Structure files (fixed-column ATOM/HETATM records).
    #[arg(required = true)]
    pub structures: Vec<PathBuf>,

    /// Ligand het code, optionally qualified: CODE, CODE:CHAIN, or
    /// CODE:CHAIN:SEQ.
    #[arg(long)]
    pub ligand: String,

    /// Pocket cutoff radius R, angstroms (strict `< R`).
    #[arg(long, default_value_t = 5.3)]
    pub radius: f64,

    /// Charge table CSV (res_name,atom_name,charge); defaults to
    /// $SUPCK_CHARGE_TABLE when set.
    #[arg(long)]
    pub charges: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = ChargePolicyArg::Zero)]
    pub missing_charge: ChargePolicyArg,

    /// Include non-ligand het atoms (waters, ions, cofactors) in pockets.
    #[arg(long)]
    pub include_het: bool,

    /// Extract the binding pocket or the ligand cloud itself.
    #[arg(long, value_enum, default_value_t = ExtractKind::Pocket)]
    pub kind: ExtractKind,

    #[arg(long, short = 'o')]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub cloud_a: PathBuf,
    pub cloud_b: PathBuf,

    #[command(flatten)]
    pub params: MeasureParams,

    /// Report max(score(A,B), score(B,A)).
    #[arg(long)]
    pub symmetrize: bool,

    /// Evaluate the kernel at the identity transform (no optimization).
    #[arg(long)]
    pub no_align: bool,

    /// Write the best transform and the transformed copy of B under this
    /// path prefix (kernel measures only).
    #[arg(long)]
    pub dump_transform: Option<PathBuf>,

    /// Where the manifest (and any dumps) go.
    #[arg(long, short = 'o', default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    /// Directory of cloud CSV files with ligand classes set.
    #[arg(long)]
    pub clouds: PathBuf,

    #[command(flatten)]
    pub params: MeasureParams,

    /// Store max(s_ij, s_ji) instead of the directed scores.
    #[arg(long)]
    pub symmetrize: bool,

    /// Output matrix CSV; metadata and manifest sit next to it.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AucArgs {
    /// Reuse a saved matrix CSV (with its .meta.json sidecar).
    #[arg(long, conflicts_with = "clouds")]
    pub matrix: Option<PathBuf>,

    /// Or compute the matrix from a cloud directory.
    #[arg(long)]
    pub clouds: Option<PathBuf>,

    #[command(flatten)]
    pub params: MeasureParams,

    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Cloud directory; repeat with directories extracted at different
    /// radii to let the inner cross-validation select R.
    #[arg(long, required = true)]
    pub clouds: Vec<PathBuf>,

    #[arg(long, value_enum, default_value_t = MeasureArg::SupCk)]
    pub measure: MeasureArg,

    #[arg(long, value_delimiter = ',', default_value = "1,3,5,7")]
    pub k_grid: Vec<usize>,

    #[arg(long, value_delimiter = ',', value_parser = parse_lambda, default_value = "0.5,1,2,4")]
    pub sigma_grid: Vec<f64>,

    #[arg(long, value_delimiter = ',', value_parser = parse_lambda, default_value = "0.25,1,4,inf")]
    pub lambda_grid: Vec<f64>,

    #[arg(long, value_delimiter = ',', value_parser = parse_lambda, default_value = "0,0.01,0.1,1,10")]
    pub alpha_grid: Vec<f64>,

    /// Overlap distance for sup-pi, angstroms.
    #[arg(long, default_value_t = 1.0)]
    pub tolerance: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KpcaArgs {
    #[arg(long, conflicts_with = "clouds")]
    pub matrix: Option<PathBuf>,

    #[arg(long)]
    pub clouds: Option<PathBuf>,

    #[command(flatten)]
    pub params: MeasureParams,

    /// Number of positive-eigenvalue components to keep.
    #[arg(long, default_value_t = 2)]
    pub dims: usize,

    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub clouds: PathBuf,

    /// Kernel measure to sweep (sup-ck or sup-ck-l).
    #[arg(long, value_enum, default_value_t = MeasureArg::SupCk)]
    pub measure: MeasureArg,

    #[arg(long, value_delimiter = ',', value_parser = parse_lambda, default_value = "0.5,1,2,4")]
    pub sigma_grid: Vec<f64>,

    /// Lambda grid; defaults to `inf` for sup-ck and 0.25,1,4 for sup-ck-l.
    #[arg(long, value_delimiter = ',', value_parser = parse_lambda)]
    pub lambda_grid: Option<Vec<f64>>,

    /// Neighbors for the classification-error column.
    #[arg(long, default_value_t = 3)]
    pub k: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, short = 'o')]
    pub out: PathBuf,
}
