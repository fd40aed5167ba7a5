//! Command handlers. Each one reads file inputs, runs the library, writes
//! its outputs plus a run manifest, and prints a short summary; commands
//! compose through files only.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use supck::eval::{HyperGrid, PocketSet, SimilarityMatrix};
use supck::geometry::RigidTransform;
use supck::io::{self, fmt_out, CloudMeta};
use supck::measures::{self, MeasureConfig, MeasureKind};
use supck::pdb::{ExtractionConfig, MissingChargePolicy};
use supck::AtomCloud;

use crate::args::{
    finite_or_null, AucArgs, ChargePolicyArg, ClassifyArgs, CompareArgs, ExtractArgs, ExtractKind,
    KpcaArgs, MatrixArgs, SweepArgs,
};
use crate::manifest::{RunManifest, Stopwatch};
use crate::{compute_error, input_error, CliError};

pub const CHARGE_TABLE_ENV: &str = "SUPCK_CHARGE_TABLE";

type CmdResult = Result<(), CliError>;

fn sanitize_id(raw: &str) -> String {
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.manifest.json"))
}

pub fn run_extract(args: &ExtractArgs) -> CmdResult {
    let mut watch = Stopwatch::start();
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| input_error(format!("cannot create {}: {e}", path_str(&args.out_dir))))?;

    let charge_path = args
        .charges
        .clone()
        .or_else(|| std::env::var(CHARGE_TABLE_ENV).ok().map(PathBuf::from));
    let charge_table = match &charge_path {
        Some(path) => io::read_charge_table(path)
            .map_err(|e| input_error(format!("charge table {}: {e}", path_str(path))))?,
        None => Default::default(),
    };
    watch.lap("load_charges");

    let policy = match args.missing_charge {
        ChargePolicyArg::Zero => MissingChargePolicy::Zero,
        ChargePolicyArg::Skip => MissingChargePolicy::Skip,
        ChargePolicyArg::Error => MissingChargePolicy::Error,
    };

    let mut succeeded = 0usize;
    for path in &args.structures {
        match extract_one(path, args, &charge_table, policy) {
            Ok(summary) => {
                println!("{summary}");
                succeeded += 1;
            }
            Err(message) => eprintln!("{}: {message}", path_str(path)),
        }
    }
    watch.lap("extract");

    let config = json!({
        "ligand": args.ligand,
        "radius": args.radius,
        "charges": charge_path.as_deref().map(path_str),
        "missing_charge": format!("{:?}", args.missing_charge).to_lowercase(),
        "include_het": args.include_het,
        "kind": format!("{:?}", args.kind).to_lowercase(),
        "out_dir": path_str(&args.out_dir),
    });
    let mut manifest = RunManifest::new(
        "extract",
        args.structures.iter().map(|p| path_str(p)).collect(),
        config,
        0,
    );
    manifest.timings_seconds = watch.into_timings();
    manifest
        .write(&args.out_dir.join("manifest.json"))
        .map_err(|e| input_error(e.to_string()))?;

    if succeeded == 0 {
        return Err(input_error(format!(
            "all {} input files failed",
            args.structures.len()
        )));
    }
    Ok(())
}

fn extract_one(
    path: &Path,
    args: &ExtractArgs,
    charge_table: &supck::ChargeTable,
    policy: MissingChargePolicy,
) -> Result<String, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let structure = supck::parse_structure(&text).map_err(|e| e.to_string())?;
    let (mut cloud, cutoff) = match args.kind {
        ExtractKind::Pocket => {
            let cfg = ExtractionConfig {
                cutoff_radius: args.radius,
                ligand_code: args.ligand.clone(),
                charge_table: charge_table.clone(),
                missing_charge_policy: policy,
                include_other_het: args.include_het,
            };
            (
                supck::extract_pocket(&structure, &cfg).map_err(|e| e.to_string())?,
                Some(args.radius),
            )
        }
        ExtractKind::Ligand => (
            supck::extract_ligand(&structure, &args.ligand).map_err(|e| e.to_string())?,
            None,
        ),
    };

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "structure".into());
    cloud.id = sanitize_id(&format!("{stem}_{}", args.ligand));
    let out_csv = args.out_dir.join(format!("{}.csv", cloud.id));
    let meta = CloudMeta {
        id: cloud.id.clone(),
        ligand_class: cloud.ligand_class.clone(),
        source_file: Some(path_str(path)),
        cutoff_radius: cutoff,
    };
    io::write_cloud(&out_csv, &cloud, &meta).map_err(|e| e.to_string())?;
    Ok(format!(
        "{}: {} protein atoms, {} het groups -> {} ({} atoms)",
        path_str(path),
        structure.protein_atoms.len(),
        structure.het_groups.len(),
        path_str(&out_csv),
        cloud.len(),
    ))
}

/// Labeled kernels need at least one nonzero charge per cloud.
fn check_labels(cfg: &MeasureConfig, clouds: &[&AtomCloud]) -> CmdResult {
    if !cfg.kind.uses_labels() || !cfg.align.lambda.is_finite() {
        return Ok(());
    }
    for cloud in clouds {
        if cloud.atoms().iter().all(|a| a.label == 0.0) {
            return Err(input_error(format!(
                "measure {} needs labeled clouds, but `{}` has all-zero charges; \
                 extract with a charge table or use a geometric measure",
                cfg.kind.name(),
                cloud.id
            )));
        }
    }
    Ok(())
}

pub fn run_compare(args: &CompareArgs) -> CmdResult {
    let mut watch = Stopwatch::start();
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| input_error(format!("cannot create {}: {e}", path_str(&args.out_dir))))?;
    let a = io::read_cloud(&args.cloud_a)?;
    let b = io::read_cloud(&args.cloud_b)?;
    watch.lap("read");

    let cfg = args.params.to_config();
    let kind = cfg.kind;
    check_labels(&cfg, &[&a, &b])?;
    if args.no_align && kind.uses_volume() {
        return Err(input_error("--no-align applies to sup-ck and sup-ck-l only"));
    }

    let kernel_lambda = if kind.uses_labels() {
        cfg.align.lambda
    } else {
        f64::INFINITY
    };

    let mut dumped: Option<supck::AlignResult> = None;
    let score = if args.no_align {
        match kind {
            MeasureKind::SupCk | MeasureKind::SupCkL => supck::kernel_ck(
                &a,
                &b,
                &RigidTransform::identity(),
                cfg.align.sigma,
                kernel_lambda,
            )?,
            _ => return Err(input_error("--no-align applies to sup-ck and sup-ck-l only")),
        }
    } else if matches!(kind, MeasureKind::SupCk | MeasureKind::SupCkL) {
        let mut align = cfg.align.clone();
        align.lambda = kernel_lambda;
        let result = supck::sup_ck(&a, &b, &align)?;
        let score = result.score;
        dumped = Some(result);
        score
    } else {
        measures::score(&a, &b, &cfg)?
    };

    let score = if args.symmetrize {
        let reverse = if args.no_align {
            supck::kernel_ck(
                &b,
                &a,
                &RigidTransform::identity(),
                cfg.align.sigma,
                kernel_lambda,
            )?
        } else {
            measures::score(&b, &a, &cfg)?
        };
        score.max(reverse)
    } else {
        score
    };
    watch.lap("score");

    if let Some(prefix) = &args.dump_transform {
        let result = dumped.ok_or_else(|| {
            input_error("--dump-transform needs an aligned kernel measure (sup-ck or sup-ck-l)")
        })?;
        write_transform_dump(prefix, &b, &result, args)?;
        watch.lap("dump");
    }

    println!("{}", fmt_out(score));

    let mut config = args.params.to_json();
    config["symmetrize"] = json!(args.symmetrize);
    config["no_align"] = json!(args.no_align);
    let mut manifest = RunManifest::new(
        "compare",
        vec![path_str(&args.cloud_a), path_str(&args.cloud_b)],
        config,
        args.params.seed,
    );
    manifest.timings_seconds = watch.into_timings();
    manifest
        .write(&args.out_dir.join("compare.manifest.json"))
        .map_err(|e| input_error(e.to_string()))?;
    Ok(())
}

#[derive(Serialize)]
struct TransformDump {
    score: f64,
    phi: f64,
    theta: f64,
    psi: f64,
    translation: [f64; 3],
    rotation_matrix: [[f64; 3]; 3],
    start_index: usize,
    iterations_used: usize,
    converged: bool,
}

fn write_transform_dump(
    prefix: &Path,
    cloud_b: &AtomCloud,
    result: &supck::AlignResult,
    args: &CompareArgs,
) -> CmdResult {
    let (phi, theta, psi) = result.transform.angles();
    let r = result.transform.rotation_matrix();
    let dump = TransformDump {
        score: result.score,
        phi,
        theta,
        psi,
        translation: [
            result.transform.translation.x,
            result.transform.translation.y,
            result.transform.translation.z,
        ],
        rotation_matrix: [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ],
        start_index: result.start_index,
        iterations_used: result.iterations_used,
        converged: result.converged,
    };
    let json_path = prefix.with_extension("transform.json");
    io::write_json(&json_path, &dump)?;

    let mut moved = cloud_b.transformed(&result.transform);
    moved.id = format!("{}_aligned", cloud_b.id);
    let csv_path = prefix.with_extension("cloud.csv");
    let meta = CloudMeta {
        id: moved.id.clone(),
        ligand_class: moved.ligand_class.clone(),
        source_file: Some(path_str(&args.cloud_b)),
        cutoff_radius: None,
    };
    io::write_cloud(&csv_path, &moved, &meta)?;
    Ok(())
}

fn load_classed_clouds(dir: &Path) -> Result<Vec<AtomCloud>, CliError> {
    let clouds = io::read_cloud_dir(dir)?;
    let missing: Vec<&str> = clouds
        .iter()
        .filter(|c| c.ligand_class.as_deref().unwrap_or("").is_empty())
        .map(|c| c.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(input_error(format!(
            "clouds without a ligand class in {}: {}",
            path_str(dir),
            missing.join(", ")
        )));
    }
    Ok(clouds)
}

fn matrix_from_clouds(
    dir: &Path,
    params: &crate::args::MeasureParams,
) -> Result<SimilarityMatrix, CliError> {
    let clouds = load_classed_clouds(dir)?;
    let cfg = params.to_config();
    check_labels(&cfg, &clouds.iter().collect::<Vec<_>>())?;
    supck::similarity_matrix(&clouds, &cfg).map_err(CliError::from)
}

pub fn run_matrix(args: &MatrixArgs) -> CmdResult {
    let mut watch = Stopwatch::start();
    let mut matrix = matrix_from_clouds(&args.clouds, &args.params)?;
    if args.symmetrize {
        matrix = matrix.symmetrized_max();
    }
    watch.lap("matrix");

    let mut params = args.params.to_json();
    params["symmetrize"] = json!(args.symmetrize);
    io::write_matrix(
        &args.out,
        &matrix,
        args.params.measure.kind().name(),
        params.clone(),
    )?;
    watch.lap("write");

    let mut manifest = RunManifest::new(
        "matrix",
        vec![path_str(&args.clouds)],
        params,
        args.params.seed,
    );
    manifest.timings_seconds = watch.into_timings();
    manifest
        .write(&manifest_path_for(&args.out))
        .map_err(|e| input_error(e.to_string()))?;
    println!(
        "{} clouds -> {} ({} measure)",
        matrix.n(),
        path_str(&args.out),
        args.params.measure.kind().name()
    );
    Ok(())
}

fn resolve_matrix(
    matrix: &Option<PathBuf>,
    clouds: &Option<PathBuf>,
    params: &crate::args::MeasureParams,
) -> Result<(SimilarityMatrix, String, serde_json::Value), CliError> {
    match (matrix, clouds) {
        (Some(path), _) => {
            let (m, meta) = io::read_matrix(path)?;
            Ok((m, meta.measure, meta.params))
        }
        (None, Some(dir)) => {
            let m = matrix_from_clouds(dir, params)?;
            Ok((
                m,
                params.measure.kind().name().to_string(),
                params.to_json(),
            ))
        }
        (None, None) => Err(input_error("provide --matrix or --clouds")),
    }
}

pub fn run_auc(args: &AucArgs) -> CmdResult {
    let mut watch = Stopwatch::start();
    let (matrix, measure, params) = resolve_matrix(&args.matrix, &args.clouds, &args.params)?;
    watch.lap("matrix");
    let report = supck::auc_report(&matrix, &measure);
    io::write_json(&args.out, &report)?;
    watch.lap("report");

    let inputs = args
        .matrix
        .iter()
        .chain(args.clouds.iter())
        .map(|p| path_str(p))
        .collect();
    let mut manifest = RunManifest::new("auc", inputs, params, args.params.seed);
    manifest.timings_seconds = watch.into_timings();
    manifest
        .write(&manifest_path_for(&args.out))
        .map_err(|e| input_error(e.to_string()))?;
    println!(
        "mean AUC {} +- {} over {} queries ({} undefined)",
        fmt_out(report.mean_auc),
        fmt_out(report.auc_std),
        report.per_query.len(),
        report.undefined_queries
    );
    Ok(())
}

pub fn run_classify(args: &ClassifyArgs) -> CmdResult {
    let mut watch = Stopwatch::start();
    let mut sets = Vec::new();
    for dir in &args.clouds {
        let with_meta = io::read_cloud_dir_with_meta(dir)?;
        let mut radius: Option<f64> = None;
        for (cloud, meta) in &with_meta {
            let r = meta.as_ref().and_then(|m| m.cutoff_radius);
            match (radius, r) {
                (None, r) => radius = r,
                (Some(a), Some(b)) if a != b => {
                    return Err(input_error(format!(
                        "{} mixes cutoff radii ({a} and {b}); one directory per radius",
                        path_str(dir)
                    )));
                }
                _ => {}
            }
            if cloud.ligand_class.as_deref().unwrap_or("").is_empty() {
                return Err(input_error(format!(
                    "cloud `{}` in {} has no ligand class",
                    cloud.id,
                    path_str(dir)
                )));
            }
        }
        if args.clouds.len() > 1 && radius.is_none() {
            return Err(input_error(format!(
                "{} lacks cutoff_radius sidecar metadata, required with multiple --clouds",
                path_str(dir)
            )));
        }
        sets.push(PocketSet {
            radius,
            pockets: with_meta.into_iter().map(|(c, _)| c).collect(),
        });
    }
    watch.lap("read");

    let kind = args.measure.kind();
    if kind.uses_labels() && args.lambda_grid.iter().any(|l| l.is_finite()) {
        for set in &sets {
            for cloud in &set.pockets {
                if cloud.atoms().iter().all(|a| a.label == 0.0) {
                    return Err(input_error(format!(
                        "measure {} with a finite lambda grid needs labeled clouds, \
                         but `{}` has all-zero charges",
                        kind.name(),
                        cloud.id
                    )));
                }
            }
        }
    }

    let grid = HyperGrid {
        k_values: args.k_grid.clone(),
        sigma_values: args.sigma_grid.clone(),
        lambda_values: args.lambda_grid.clone(),
        radius_values: sets.iter().filter_map(|s| s.radius).collect(),
        alpha_values: args.alpha_grid.clone(),
        seed: args.seed,
    };
    let report = supck::eval::loo_double_cv_sets_with_tolerance(
        &sets,
        args.measure.kind(),
        &grid,
        args.tolerance,
    )
    .map_err(|e| match e {
        supck::Error::Eval(msg) => compute_error(msg),
        other => CliError::from(other),
    })?;
    watch.lap("double_cv");

    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    io::write_json(&args.out, &report)?;

    let config = json!({
        "measure": args.measure.kind().name(),
        "k_grid": args.k_grid,
        "sigma_grid": args.sigma_grid,
        "lambda_grid": args.lambda_grid.iter().map(|l| finite_or_null(*l)).collect::<Vec<_>>(),
        "alpha_grid": args.alpha_grid,
        "radii": sets.iter().map(|s| s.radius).collect::<Vec<_>>(),
        "overlap_tolerance": args.tolerance,
        "seed": args.seed,
    });
    let mut manifest = RunManifest::new(
        "classify",
        args.clouds.iter().map(|p| path_str(p)).collect(),
        config,
        args.seed,
    );
    manifest.timings_seconds = watch.into_timings();
    manifest
        .write(&manifest_path_for(&args.out))
        .map_err(|e| input_error(e.to_string()))?;
    println!(
        "classification error {} ; mean AUC {} +- {}",
        fmt_out(report.classification_error),
        fmt_out(report.mean_auc),
        fmt_out(report.auc_std)
    );
    Ok(())
}

pub fn run_kpca(args: &KpcaArgs) -> CmdResult {
    let mut watch = Stopwatch::start();
    let (matrix, measure, params) = resolve_matrix(&args.matrix, &args.clouds, &args.params)?;
    watch.lap("matrix");
    let projection = supck::kpca_project(&matrix, args.dims)?;
    if projection.fewer_than_requested {
        eprintln!(
            "warning: only {} positive components available (requested {})",
            projection.eigenvalues.len(),
            args.dims
        );
    }
    io::write_projection(&args.out, &projection)?;
    watch.lap("project");

    let config = json!({
        "measure": measure,
        "params": params,
        "dims": args.dims,
        "centered": true,
        "symmetrized": "average",
        "eigenvalues": projection.eigenvalues,
        "discarded_negative_mass": projection.discarded_negative_mass,
    });
    let inputs = args
        .matrix
        .iter()
        .chain(args.clouds.iter())
        .map(|p| path_str(p))
        .collect();
    let mut manifest = RunManifest::new("kpca", inputs, config, args.params.seed);
    manifest.timings_seconds = watch.into_timings();
    manifest
        .write(&manifest_path_for(&args.out))
        .map_err(|e| input_error(e.to_string()))?;
    println!(
        "kept {} components; discarded negative eigenvalue mass {}",
        projection.eigenvalues.len(),
        fmt_out(projection.discarded_negative_mass)
    );
    Ok(())
}

pub fn run_sweep(args: &SweepArgs) -> CmdResult {
    let kind = args.measure.kind();
    if !matches!(kind, MeasureKind::SupCk | MeasureKind::SupCkL) {
        return Err(input_error("sweep supports sup-ck and sup-ck-l"));
    }
    let lambda_grid = args.lambda_grid.clone().unwrap_or_else(|| {
        if kind.uses_labels() {
            vec![0.25, 1.0, 4.0]
        } else {
            vec![f64::INFINITY]
        }
    });

    let mut watch = Stopwatch::start();
    let clouds = load_classed_clouds(&args.clouds)?;
    watch.lap("read");

    let mut writer = csv::WriterBuilder::new()
        .from_path(&args.out)
        .map_err(|e| input_error(e.to_string()))?;
    writer
        .write_record(["sigma", "lambda", "mean_auc", "classification_error"])
        .map_err(|e| input_error(e.to_string()))?;
    for &sigma in &args.sigma_grid {
        for &lambda in &lambda_grid {
            let mut cfg = MeasureConfig::new(kind);
            cfg.align.sigma = sigma;
            cfg.align.lambda = lambda;
            cfg.align.seed = args.seed;
            check_labels(&cfg, &clouds.iter().collect::<Vec<_>>())?;
            let matrix = supck::similarity_matrix(&clouds, &cfg)?;
            let auc = supck::auc_report(&matrix, kind.name());
            let ce = supck::loo_knn_error(&matrix, args.k);
            writer
                .write_record([
                    fmt_out(sigma),
                    if lambda.is_finite() {
                        fmt_out(lambda)
                    } else {
                        "inf".to_string()
                    },
                    fmt_out(auc.mean_auc),
                    fmt_out(ce),
                ])
                .map_err(|e| input_error(e.to_string()))?;
            println!(
                "sigma {} lambda {}: mean AUC {} CE {}",
                fmt_out(sigma),
                if lambda.is_finite() { fmt_out(lambda) } else { "inf".into() },
                fmt_out(auc.mean_auc),
                fmt_out(ce)
            );
        }
    }
    writer.flush().map_err(|e| input_error(e.to_string()))?;
    watch.lap("sweep");

    let config = json!({
        "measure": kind.name(),
        "sigma_grid": args.sigma_grid,
        "lambda_grid": lambda_grid.iter().map(|l| finite_or_null(*l)).collect::<Vec<_>>(),
        "k": args.k,
        "seed": args.seed,
    });
    let mut manifest = RunManifest::new("sweep", vec![path_str(&args.clouds)], config, args.seed);
    manifest.timings_seconds = watch.into_timings();
    manifest
        .write(&manifest_path_for(&args.out))
        .map_err(|e| input_error(e.to_string()))?;
    Ok(())
}
