//! File formats: cloud CSV with JSON sidecar, charge tables, similarity
//! matrices, projections, and reports.
//!
//! All floating-point output goes through [`fmt_sig`] at 12 significant
//! digits so identical inputs produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::SimilarityMatrix;
use crate::geometry::{Atom, AtomCloud, AtomMeta, Vec3};
use crate::kpca::Projection;
use crate::measures::Orientation;
use crate::pdb::ChargeTable;

/// Significant digits used for all emitted floats.
pub const OUTPUT_SIG_DIGITS: usize = 12;

/// Format with a fixed number of significant digits, trimming trailing
/// zeros; scientific notation outside a moderate exponent range (like
/// printf `%g`).
pub fn fmt_sig(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("numeric exponent");
    if exp >= -4 && (exp as i64) < digits as i64 {
        let prec = (digits as i32 - 1 - exp).max(0) as usize;
        let fixed = format!("{x:.prec$}");
        trim_decimal(&fixed)
    } else {
        format!("{}e{exp}", trim_decimal(mantissa))
    }
}

fn trim_decimal(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    trimmed.to_string()
}

/// Shorthand at the standard output precision.
pub fn fmt_out(x: f64) -> String {
    fmt_sig(x, OUTPUT_SIG_DIGITS)
}

/// Sidecar metadata stored next to each cloud CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CloudMeta {
    pub id: String,
    pub ligand_class: Option<String>,
    pub source_file: Option<String>,
    pub cutoff_radius: Option<f64>,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Write a cloud as CSV (`x,y,z,charge,element,res_name,res_seq,atom_name`)
/// plus a JSON sidecar with the same stem.
pub fn write_cloud(csv_path: &Path, cloud: &AtomCloud, meta: &CloudMeta) -> Result<()> {
    let mut writer = csv::Writer::from_path(csv_path)?;
    writer.write_record([
        "x", "y", "z", "charge", "element", "res_name", "res_seq", "atom_name",
    ])?;
    for atom in cloud.atoms() {
        writer.write_record([
            fmt_out(atom.position.x),
            fmt_out(atom.position.y),
            fmt_out(atom.position.z),
            fmt_out(atom.label),
            atom.element.clone(),
            atom.meta.res_name.clone(),
            atom.meta.res_seq.to_string(),
            atom.meta.atom_name.clone(),
        ])?;
    }
    writer.flush()?;
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(sidecar_path(csv_path), json + "\n")?;
    Ok(())
}

/// Read a cloud CSV; the JSON sidecar supplies id and ligand class when
/// present, otherwise the file stem is the id.
pub fn read_cloud(csv_path: &Path) -> Result<AtomCloud> {
    Ok(read_cloud_with_meta(csv_path)?.0)
}

/// [`read_cloud`] plus the sidecar metadata, when one exists.
pub fn read_cloud_with_meta(csv_path: &Path) -> Result<(AtomCloud, Option<CloudMeta>)> {
    let display = csv_path.display().to_string();
    let meta: Option<CloudMeta> = match fs::read_to_string(sidecar_path(csv_path)) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(_) => None,
    };
    let mut reader = csv::Reader::from_path(csv_path)?;
    let mut atoms = Vec::new();
    for record in reader.deserialize() {
        let row: CloudRow = record?;
        let atom = Atom::new(Vec3::new(row.x, row.y, row.z), row.charge)
            .map_err(|e| Error::Format {
                path: display.clone(),
                msg: e.to_string(),
            })?
            .with_element(row.element)
            .with_meta(AtomMeta {
                res_name: row.res_name,
                res_seq: row.res_seq,
                atom_name: row.atom_name,
                chain: String::new(),
            });
        atoms.push(atom);
    }
    let id = meta
        .as_ref()
        .map(|m| m.id.clone())
        .or_else(|| {
            csv_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| display.clone());
    let mut cloud = AtomCloud::new(id, atoms)?;
    cloud.ligand_class = meta.as_ref().and_then(|m| m.ligand_class.clone());
    Ok((cloud, meta))
}

#[derive(Debug, Deserialize)]
struct CloudRow {
    x: f64,
    y: f64,
    z: f64,
    charge: f64,
    #[serde(default)]
    element: String,
    #[serde(default)]
    res_name: String,
    #[serde(default)]
    res_seq: i32,
    #[serde(default)]
    atom_name: String,
}

/// Read every `*.csv` cloud in a directory, sorted by id.
pub fn read_cloud_dir(dir: &Path) -> Result<Vec<AtomCloud>> {
    Ok(read_cloud_dir_with_meta(dir)?
        .into_iter()
        .map(|(cloud, _)| cloud)
        .collect())
}

/// [`read_cloud_dir`] keeping each cloud's sidecar metadata.
pub fn read_cloud_dir_with_meta(dir: &Path) -> Result<Vec<(AtomCloud, Option<CloudMeta>)>> {
    let mut clouds = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    entries.sort();
    for path in entries {
        clouds.push(read_cloud_with_meta(&path)?);
    }
    if clouds.is_empty() {
        return Err(Error::Format {
            path: dir.display().to_string(),
            msg: "no cloud CSV files found".into(),
        });
    }
    clouds.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    Ok(clouds)
}

/// Read a `res_name,atom_name,charge` table; later rows override earlier
/// ones.
pub fn read_charge_table(path: &Path) -> Result<ChargeTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut table = ChargeTable::new();
    for record in reader.deserialize() {
        let row: ChargeRow = record?;
        table.insert((row.res_name, row.atom_name), row.charge);
    }
    Ok(table)
}

#[derive(Debug, Deserialize)]
struct ChargeRow {
    res_name: String,
    atom_name: String,
    charge: f64,
}

/// JSON metadata stored next to a matrix CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub orientation: Orientation,
    pub measure: String,
    pub params: serde_json::Value,
    pub classes: BTreeMap<String, String>,
}

fn matrix_meta_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

/// Write a similarity matrix as CSV with an id header row and id-leading
/// rows, plus a `.meta.json` sidecar carrying orientation, measure, params,
/// and the id-to-class map.
pub fn write_matrix(
    csv_path: &Path,
    matrix: &SimilarityMatrix,
    measure: &str,
    params: serde_json::Value,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(csv_path)?;
    let mut header = vec!["id".to_string()];
    header.extend(matrix.ids.iter().cloned());
    writer.write_record(&header)?;
    for i in 0..matrix.n() {
        let mut row = vec![matrix.ids[i].clone()];
        row.extend((0..matrix.n()).map(|j| fmt_out(matrix.get(i, j))));
        writer.write_record(&row)?;
    }
    writer.flush()?;

    let classes: BTreeMap<String, String> = matrix
        .ids
        .iter()
        .cloned()
        .zip(matrix.classes.iter().cloned())
        .collect();
    let meta = MatrixMeta {
        orientation: matrix.orientation,
        measure: measure.to_string(),
        params,
        classes,
    };
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(matrix_meta_path(csv_path), json + "\n")?;
    Ok(())
}

/// Read a matrix CSV and its `.meta.json` sidecar back.
pub fn read_matrix(csv_path: &Path) -> Result<(SimilarityMatrix, MatrixMeta)> {
    let display = csv_path.display().to_string();
    let meta_text = fs::read_to_string(matrix_meta_path(csv_path)).map_err(|e| Error::Format {
        path: display.clone(),
        msg: format!("missing matrix metadata sidecar: {e}"),
    })?;
    let meta: MatrixMeta = serde_json::from_str(&meta_text)?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(csv_path)?;
    let mut rows = reader.records();
    let header = rows.next().ok_or_else(|| Error::Format {
        path: display.clone(),
        msg: "empty matrix file".into(),
    })??;
    let ids: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let n = ids.len();
    let mut scores = Vec::with_capacity(n * n);
    for (i, row) in rows.enumerate() {
        let row = row?;
        if row.len() != n + 1 || row.get(0) != Some(ids[i].as_str()) {
            return Err(Error::Format {
                path: display.clone(),
                msg: format!("row {} does not match the id header", i + 2),
            });
        }
        for cell in row.iter().skip(1) {
            scores.push(cell.parse::<f64>().map_err(|_| Error::Format {
                path: display.clone(),
                msg: format!("malformed score `{cell}`"),
            })?);
        }
    }
    let classes: Vec<String> = ids
        .iter()
        .map(|id| meta.classes.get(id).cloned().unwrap_or_default())
        .collect();
    let matrix = SimilarityMatrix::new(ids, classes, scores, meta.orientation)?;
    Ok((matrix, meta))
}

/// Write a projection as `id,class,pc1,pc2,...`.
pub fn write_projection(csv_path: &Path, projection: &Projection) -> Result<()> {
    let dims = projection.eigenvalues.len();
    let mut writer = csv::Writer::from_path(csv_path)?;
    let mut header = vec!["id".to_string(), "class".to_string()];
    header.extend((1..=dims).map(|c| format!("pc{c}")));
    writer.write_record(&header)?;
    for i in 0..projection.ids.len() {
        let mut row = vec![projection.ids[i].clone(), projection.classes[i].clone()];
        row.extend(projection.coordinates[i].iter().map(|v| fmt_out(*v)));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Serialize any report as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n")?;
    Ok(())
}
