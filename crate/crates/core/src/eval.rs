//! Quality scoring of similarity measures: per-query AUC, KNN ligand
//! prediction under leave-one-out double cross-validation, and
//! classification error.
//!
//! All ranking is done on a precomputed all-pairs score matrix. Neighbors of
//! a query are ranked by the query's row, descending for similarities and
//! ascending for dissimilarities. The double cross-validation keeps one
//! matrix per hyperparameter combination, which is the score cache that
//! makes the nested protocol tractable.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::align::AlignConfig;
use crate::error::{Error, Result};
use crate::geometry::AtomCloud;
use crate::measures::{self, MeasureConfig, MeasureKind, Orientation};

/// All-pairs scores over a set of clouds. The diagonal holds self-scores and
/// is excluded from every ranking.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub ids: Vec<String>,
    pub classes: Vec<String>,
    pub orientation: Orientation,
    scores: Vec<f64>, // row-major n*n
}

impl SimilarityMatrix {
    pub fn new(
        ids: Vec<String>,
        classes: Vec<String>,
        scores: Vec<f64>,
        orientation: Orientation,
    ) -> Result<Self> {
        let n = ids.len();
        if classes.len() != n || scores.len() != n * n {
            return Err(Error::Eval(format!(
                "matrix shape mismatch: {} ids, {} classes, {} scores",
                n,
                classes.len(),
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Eval(format!("non-finite score {bad} in matrix")));
        }
        Ok(SimilarityMatrix {
            ids,
            classes,
            orientation,
            scores,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.n() + j]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Entry-wise max of the matrix and its transpose.
    pub fn symmetrized_max(&self) -> SimilarityMatrix {
        let n = self.n();
        let mut out = self.clone();
        for i in 0..n {
            for j in 0..n {
                out.scores[i * n + j] = self.get(i, j).max(self.get(j, i));
            }
        }
        out
    }

    /// A copy with classes replaced (used for label-shuffle nulls).
    pub fn with_classes(&self, classes: Vec<String>) -> Result<SimilarityMatrix> {
        SimilarityMatrix::new(
            self.ids.clone(),
            classes,
            self.scores.clone(),
            self.orientation,
        )
    }
}

/// AUC of ranking all other items against query `q` by the query's row of
/// the matrix (Mann-Whitney statistic; tied scores count 0.5 per
/// positive-negative tie pair). `None` when the query's class is absent
/// among the others or no other class exists.
pub fn auc_for_query(m: &SimilarityMatrix, q: usize) -> Option<f64> {
    let n = m.n();
    // Ranking value: larger = more similar, regardless of orientation.
    let mut items: Vec<(f64, bool)> = (0..n)
        .filter(|&j| j != q)
        .map(|j| {
            let v = match m.orientation {
                Orientation::Similarity => m.get(q, j),
                Orientation::Dissimilarity => -m.get(q, j),
            };
            (v, m.classes[j] == m.classes[q])
        })
        .collect();
    let n_pos = items.iter().filter(|(_, p)| *p).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }

    items.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j + 1 < items.len() && items[j + 1].0 == items[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0; // average of 1-based ranks
        for item in &items[i..=j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

fn rank_cmp(a: f64, b: f64, orientation: Orientation) -> std::cmp::Ordering {
    match orientation {
        Orientation::Similarity => b.partial_cmp(&a).unwrap(),
        Orientation::Dissimilarity => a.partial_cmp(&b).unwrap(),
    }
}

/// Majority class among the `k` best-ranked training items (`k` clamps to
/// the training size). Vote ties break by the smaller summed rank, then by
/// lexicographic class name. Score ties rank by input order.
pub fn knn_predict<'a>(
    train_scores: &[(f64, &'a str)],
    k: usize,
    orientation: Orientation,
) -> &'a str {
    assert!(!train_scores.is_empty(), "empty training set");
    assert!(k >= 1, "k must be at least 1");
    let mut order: Vec<usize> = (0..train_scores.len()).collect();
    order.sort_by(|&a, &b| {
        rank_cmp(train_scores[a].0, train_scores[b].0, orientation).then(a.cmp(&b))
    });
    let k = k.min(train_scores.len());
    let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (rank0, &idx) in order[..k].iter().enumerate() {
        let entry = votes.entry(train_scores[idx].1).or_insert((0, 0));
        entry.0 += 1;
        entry.1 += rank0 + 1;
    }
    votes
        .iter()
        .max_by(|(ca, (na, ra)), (cb, (nb, rb))| {
            na.cmp(nb).then(rb.cmp(ra)).then(cb.cmp(ca))
        })
        .map(|(c, _)| *c)
        .expect("at least one vote")
}

/// Plain leave-one-out KNN classification error at a fixed `k`.
pub fn loo_knn_error(m: &SimilarityMatrix, k: usize) -> f64 {
    let n = m.n();
    let mut wrong = 0;
    for q in 0..n {
        let train: Vec<(f64, &str)> = (0..n)
            .filter(|&j| j != q)
            .map(|j| (m.get(q, j), m.classes[j].as_str()))
            .collect();
        if knn_predict(&train, k, m.orientation) != m.classes[q] {
            wrong += 1;
        }
    }
    wrong as f64 / n as f64
}

/// Hyperparameter grid for the double cross-validation. `f64::INFINITY` in
/// `lambda_values` means labels ignored. `radius_values` only applies when
/// pocket sets extracted at several radii are supplied.
#[derive(Debug, Clone)]
pub struct HyperGrid {
    pub k_values: Vec<usize>,
    pub sigma_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub radius_values: Vec<f64>,
    pub alpha_values: Vec<f64>,
    pub seed: u64,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            k_values: vec![1, 3, 5, 7],
            sigma_values: vec![0.5, 1.0, 2.0, 4.0],
            lambda_values: vec![0.25, 1.0, 4.0, f64::INFINITY],
            radius_values: vec![4.5, 5.3, 6.0],
            alpha_values: vec![0.0, 0.01, 0.1, 1.0, 10.0],
            seed: 0,
        }
    }
}

impl HyperGrid {
    /// Grid with exactly one combination; the inner selection is then vacuous.
    pub fn singleton(k: usize, sigma: f64, lambda: f64, alpha: f64) -> Self {
        HyperGrid {
            k_values: vec![k],
            sigma_values: vec![sigma],
            lambda_values: vec![lambda],
            radius_values: vec![],
            alpha_values: vec![alpha],
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.sigma_values.is_empty()
            || self.lambda_values.is_empty() || self.alpha_values.is_empty()
        {
            return Err(Error::InvalidParameter(
                "hyperparameter grids must be non-empty".into(),
            ));
        }
        if self.k_values.contains(&0) {
            return Err(Error::InvalidParameter("k values must be positive".into()));
        }
        for &s in &self.sigma_values {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidParameter(format!("bad sigma {s} in grid")));
            }
        }
        for &l in &self.lambda_values {
            if l.is_nan() || l <= 0.0 {
                return Err(Error::InvalidParameter(format!("bad lambda {l} in grid")));
            }
        }
        for &a in &self.alpha_values {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::InvalidParameter(format!("bad alpha {a} in grid")));
            }
        }
        Ok(())
    }
}

/// One hyperparameter combination. `lambda = None` means labels ignored;
/// fields not applicable to the measure are `None`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ParamPoint {
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub radius: Option<f64>,
    pub alpha: Option<f64>,
    /// Alpha after scale normalization against the volume term.
    pub alpha_effective: Option<f64>,
}

/// Parameters selected for one held-out query by the inner cross-validation.
#[derive(Debug, Clone, Serialize)]
pub struct ChosenParams {
    pub query_id: String,
    pub k: usize,
    #[serde(flatten)]
    pub params: ParamPoint,
    pub inner_error: f64,
    pub predicted: String,
    pub actual: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub measure: String,
    pub seed: u64,
    /// Per-query AUC at that query's selected parameters, on the full
    /// matrix; `null` where undefined (single-class neighborhood).
    pub per_query_auc: Vec<Option<f64>>,
    pub mean_auc: f64,
    pub auc_std: f64,
    pub classification_error: f64,
    /// `confusion[actual][predicted]` counts.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    pub chosen_params: Vec<ChosenParams>,
    pub warnings: Vec<String>,
}

/// Per-query AUC summary at fixed parameters.
#[derive(Debug, Clone, Serialize)]
pub struct AucReport {
    pub measure: String,
    pub per_query: Vec<AucEntry>,
    pub mean_auc: f64,
    pub auc_std: f64,
    pub undefined_queries: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AucEntry {
    pub id: String,
    pub class: String,
    pub auc: Option<f64>,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Mean and spread of per-query AUCs on one matrix.
pub fn auc_report(m: &SimilarityMatrix, measure: &str) -> AucReport {
    let per_query: Vec<AucEntry> = (0..m.n())
        .map(|q| AucEntry {
            id: m.ids[q].clone(),
            class: m.classes[q].clone(),
            auc: auc_for_query(m, q),
        })
        .collect();
    let defined: Vec<f64> = per_query.iter().filter_map(|e| e.auc).collect();
    let (mean_auc, auc_std) = mean_and_std(&defined);
    AucReport {
        measure: measure.to_string(),
        undefined_queries: per_query.len() - defined.len(),
        per_query,
        mean_auc,
        auc_std,
    }
}

/// All-pairs score matrix for a set of clouds (diagonal included). Entries
/// are computed independently in parallel, so the result does not depend on
/// evaluation order.
pub fn similarity_matrix(pockets: &[AtomCloud], cfg: &MeasureConfig) -> Result<SimilarityMatrix> {
    cfg.validate()?;
    if pockets.is_empty() {
        return Err(Error::Eval("no clouds to compare".into()));
    }
    let n = pockets.len();
    let ids = pockets.iter().map(|p| p.id.clone()).collect();
    let classes = pockets
        .iter()
        .map(|p| p.ligand_class.clone().unwrap_or_default())
        .collect();
    let scores = (0..n * n)
        .into_par_iter()
        .map(|idx| measures::score(&pockets[idx / n], &pockets[idx % n], cfg))
        .collect::<Result<Vec<f64>>>()?;
    SimilarityMatrix::new(ids, classes, scores, cfg.orientation())
}

/// A set of pockets extracted at one cutoff radius. Supply several sets
/// (same ids, same order) to let the inner cross-validation select the
/// radius.
#[derive(Debug, Clone)]
pub struct PocketSet {
    pub radius: Option<f64>,
    pub pockets: Vec<AtomCloud>,
}

/// Leave-one-out double cross-validation over a single pocket set. The
/// radius axis of the grid is inactive here; see [`loo_double_cv_sets`].
pub fn loo_double_cv(
    pockets: &[AtomCloud],
    kind: MeasureKind,
    grid: &HyperGrid,
) -> Result<EvalReport> {
    loo_double_cv_sets(
        &[PocketSet {
            radius: None,
            pockets: pockets.to_vec(),
        }],
        kind,
        grid,
    )
}

/// Leave-one-out double cross-validation: for each held-out pocket, an
/// inner leave-one-out pass over the remaining pockets selects
/// `(k, sigma, lambda, radius, alpha)` minimizing the inner classification
/// error (ties prefer the smallest `k`, then the smallest `sigma`, then grid
/// order); the held-out pocket's ligand is then predicted with the selected
/// parameters. Grid entries whose score matrix is degenerate (non-finite or
/// all off-diagonal entries equal) are skipped with a warning.
pub fn loo_double_cv_sets(
    sets: &[PocketSet],
    kind: MeasureKind,
    grid: &HyperGrid,
) -> Result<EvalReport> {
    loo_double_cv_sets_with_tolerance(sets, kind, grid, 1.0)
}

/// [`loo_double_cv_sets`] with an explicit overlap tolerance for the
/// sup-PI measure (ignored by the other kinds).
pub fn loo_double_cv_sets_with_tolerance(
    sets: &[PocketSet],
    kind: MeasureKind,
    grid: &HyperGrid,
    overlap_tolerance: f64,
) -> Result<EvalReport> {
    grid.validate()?;
    if sets.is_empty() {
        return Err(Error::Eval("no pocket sets supplied".into()));
    }
    let n = sets[0].pockets.len();
    if n < 3 {
        return Err(Error::Eval("need at least 3 pockets".into()));
    }
    for set in sets {
        if set.pockets.len() != n {
            return Err(Error::Eval("pocket sets differ in size".into()));
        }
        for (a, b) in set.pockets.iter().zip(&sets[0].pockets) {
            if a.id != b.id {
                return Err(Error::Eval(format!(
                    "pocket sets disagree on ids ({} vs {})",
                    a.id, b.id
                )));
            }
        }
    }
    let missing: Vec<&str> = sets[0]
        .pockets
        .iter()
        .filter(|p| p.ligand_class.as_deref().unwrap_or("").is_empty())
        .map(|p| p.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Eval(format!(
            "clouds without a ligand class: {}",
            missing.join(", ")
        )));
    }
    let classes: BTreeSet<&str> = sets[0]
        .pockets
        .iter()
        .filter_map(|p| p.ligand_class.as_deref())
        .collect();
    if classes.len() < 2 {
        return Err(Error::Eval("need at least 2 ligand classes".into()));
    }

    let mut warnings = Vec::new();
    let candidates = build_candidates(sets, kind, grid, overlap_tolerance, &mut warnings)?;
    if candidates.is_empty() {
        return Err(Error::Eval(
            "every grid entry produced degenerate scores".into(),
        ));
    }

    let mut k_values = grid.k_values.clone();
    k_values.sort_unstable();
    k_values.dedup();

    let mut report = double_cv_over_matrices(&candidates, &k_values, grid.seed, kind.name())?;
    report.warnings = warnings;
    Ok(report)
}

/// Double cross-validation over prebuilt candidate matrices (one per
/// hyperparameter combination, all over the same items in the same order).
/// This is the path for recomputing a report from saved matrices; candidate
/// order is the tie-break order after `k` (sigma first in the standard
/// builder).
pub fn loo_double_cv_matrices(
    candidates: &[(ParamPoint, SimilarityMatrix)],
    k_values: &[usize],
    seed: u64,
    measure: &str,
) -> Result<EvalReport> {
    if candidates.is_empty() {
        return Err(Error::Eval("no candidate matrices".into()));
    }
    if k_values.is_empty() || k_values.contains(&0) {
        return Err(Error::InvalidParameter("k values must be positive".into()));
    }
    let first = &candidates[0].1;
    if first.n() < 3 {
        return Err(Error::Eval("need at least 3 items".into()));
    }
    for (_, m) in candidates {
        if m.ids != first.ids || m.classes != first.classes {
            return Err(Error::Eval(
                "candidate matrices disagree on ids or classes".into(),
            ));
        }
    }
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    double_cv_over_matrices(candidates, &ks, seed, measure)
}

fn matrix_is_degenerate(m: &SimilarityMatrix) -> bool {
    let n = m.n();
    let mut first: Option<f64> = None;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = m.get(i, j);
            match first {
                None => first = Some(v),
                Some(f) => {
                    if v != f {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

fn offdiag_median(m: &SimilarityMatrix) -> f64 {
    let n = m.n();
    let mut vals: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m.get(i, j).abs())
        .collect();
    median(&mut vals)
}

fn build_candidates(
    sets: &[PocketSet],
    kind: MeasureKind,
    grid: &HyperGrid,
    overlap_tolerance: f64,
    warnings: &mut Vec<String>,
) -> Result<Vec<(ParamPoint, SimilarityMatrix)>> {
    let mut sigmas: Vec<f64> = grid.sigma_values.clone();
    sigmas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sigmas.dedup();
    let sigma_axis: Vec<Option<f64>> = if kind.uses_alignment() {
        sigmas.into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let mut lambdas: Vec<f64> = grid.lambda_values.clone();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lambdas.dedup();
    let lambda_axis: Vec<Option<f64>> = if kind.uses_labels() {
        lambdas
            .into_iter()
            .map(|l| if l.is_finite() { Some(l) } else { None })
            .collect()
    } else {
        vec![None]
    };
    let mut alphas: Vec<f64> = grid.alpha_values.clone();
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    alphas.dedup();
    let alpha_axis: Vec<Option<f64>> = if kind.uses_volume() {
        alphas.into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let mut set_order: Vec<usize> = (0..sets.len()).collect();
    set_order.sort_by(|&a, &b| {
        let ra = sets[a].radius.unwrap_or(f64::NAN);
        let rb = sets[b].radius.unwrap_or(f64::NAN);
        ra.partial_cmp(&rb).unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut candidates = Vec::new();
    for &sigma in &sigma_axis {
        for &lambda in &lambda_axis {
            for &set_idx in &set_order {
                let set = &sets[set_idx];
                let vol = if kind.uses_volume() {
                    Some(vol_matrix(&set.pockets)?)
                } else {
                    None
                };
                let base = match base_matrix(set, kind, sigma, lambda, grid.seed, overlap_tolerance)
                {
                    Ok(m) => m,
                    Err(e) => {
                        warnings.push(format!(
                            "skipped sigma={sigma:?} lambda={lambda:?} radius={:?}: {e}",
                            set.radius
                        ));
                        continue;
                    }
                };
                for &alpha in &alpha_axis {
                    let (matrix, alpha_effective) = match (&vol, alpha) {
                        (Some(vol), Some(alpha_raw)) => {
                            let k_med = offdiag_median(&base);
                            let v_med = offdiag_median(vol);
                            let factor = if v_med.is_finite() && v_med > 0.0 {
                                k_med / v_med
                            } else {
                                1.0
                            };
                            let a_eff = alpha_raw * factor;
                            let scores: Vec<f64> = base
                                .scores()
                                .iter()
                                .zip(vol.scores())
                                .map(|(k, v)| k - a_eff * v)
                                .collect();
                            match SimilarityMatrix::new(
                                base.ids.clone(),
                                base.classes.clone(),
                                scores,
                                Orientation::Similarity,
                            ) {
                                Ok(m) => (m, Some(a_eff)),
                                Err(e) => {
                                    warnings.push(format!("skipped alpha={alpha_raw}: {e}"));
                                    continue;
                                }
                            }
                        }
                        _ => (base.clone(), None),
                    };
                    if matrix_is_degenerate(&matrix) {
                        warnings.push(format!(
                            "skipped degenerate grid entry sigma={sigma:?} lambda={lambda:?} \
                             radius={:?} alpha={alpha:?}",
                            set.radius
                        ));
                        continue;
                    }
                    candidates.push((
                        ParamPoint {
                            sigma,
                            lambda,
                            radius: set.radius,
                            alpha,
                            alpha_effective,
                        },
                        matrix,
                    ));
                }
            }
        }
    }
    Ok(candidates)
}

fn vol_matrix(pockets: &[AtomCloud]) -> Result<SimilarityMatrix> {
    let cfg = MeasureConfig::new(MeasureKind::Vol);
    similarity_matrix(pockets, &cfg)
}

fn base_matrix(
    set: &PocketSet,
    kind: MeasureKind,
    sigma: Option<f64>,
    lambda: Option<f64>,
    seed: u64,
    overlap_tolerance: f64,
) -> Result<SimilarityMatrix> {
    // The volume-combined kinds build on the plain kernel matrix here; the
    // alpha term is mixed in afterwards.
    let base_kind = match kind {
        MeasureKind::SupCkVol => MeasureKind::SupCk,
        MeasureKind::SupCkLVol => MeasureKind::SupCkL,
        other => other,
    };
    let mut cfg = MeasureConfig::new(base_kind);
    cfg.align = AlignConfig {
        sigma: sigma.unwrap_or(cfg.align.sigma),
        lambda: lambda.unwrap_or(f64::INFINITY),
        seed,
        ..AlignConfig::default()
    };
    cfg.overlap_tolerance = overlap_tolerance;
    similarity_matrix(&set.pockets, &cfg)
}

/// Neighbor orderings per row: `orders[i]` lists `j != i` best-first.
fn neighbor_orders(m: &SimilarityMatrix) -> Vec<Vec<usize>> {
    let n = m.n();
    (0..n)
        .map(|i| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| rank_cmp(m.get(i, a), m.get(i, b), m.orientation).then(a.cmp(&b)));
            order
        })
        .collect()
}

/// KNN vote over the first `k` entries of `order`, skipping `skip`.
fn predict_from_order<'a>(
    order: &[usize],
    classes: &'a [String],
    k: usize,
    skip: Option<usize>,
) -> &'a str {
    let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut rank = 0;
    for &j in order {
        if Some(j) == skip {
            continue;
        }
        rank += 1;
        let entry = votes.entry(classes[j].as_str()).or_insert((0, 0));
        entry.0 += 1;
        entry.1 += rank;
        if rank == k {
            break;
        }
    }
    votes
        .iter()
        .max_by(|(ca, (na, ra)), (cb, (nb, rb))| {
            na.cmp(nb).then(rb.cmp(ra)).then(cb.cmp(ca))
        })
        .map(|(c, _)| *c)
        .expect("non-empty neighborhood")
}

fn double_cv_over_matrices(
    candidates: &[(ParamPoint, SimilarityMatrix)],
    k_values: &[usize],
    seed: u64,
    measure: &str,
) -> Result<EvalReport> {
    let n = candidates[0].1.n();
    let classes = candidates[0].1.classes.clone();
    let ids = candidates[0].1.ids.clone();
    let orders: Vec<Vec<Vec<usize>>> =
        candidates.iter().map(|(_, m)| neighbor_orders(m)).collect();

    let mut per_query_auc = Vec::with_capacity(n);
    let mut chosen_params = Vec::with_capacity(n);
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut wrong = 0usize;

    for q in 0..n {
        // Inner leave-one-out over the n-1 training pockets.
        let mut best: Option<(f64, usize, usize)> = None; // (error, k, candidate)
        for (ci, _) in candidates.iter().enumerate() {
            for &k in k_values {
                let mut inner_wrong = 0usize;
                for i in 0..n {
                    if i == q {
                        continue;
                    }
                    let predicted = predict_from_order(&orders[ci][i], &classes, k, Some(q));
                    if predicted != classes[i] {
                        inner_wrong += 1;
                    }
                }
                let err = inner_wrong as f64 / (n - 1) as f64;
                let better = match best {
                    None => true,
                    Some((be, bk, bc)) => {
                        (err, k, ci) < (be, bk, bc) // candidate order is grid order
                    }
                };
                if better {
                    best = Some((err, k, ci));
                }
            }
        }
        let (inner_error, k, ci) = best.expect("non-empty grid");
        let predicted = predict_from_order(&orders[ci][q], &classes, k, None).to_string();
        let actual = classes[q].clone();
        if predicted != actual {
            wrong += 1;
        }
        *confusion
            .entry(actual.clone())
            .or_default()
            .entry(predicted.clone())
            .or_insert(0) += 1;
        per_query_auc.push(auc_for_query(&candidates[ci].1, q));
        chosen_params.push(ChosenParams {
            query_id: ids[q].clone(),
            k,
            params: candidates[ci].0.clone(),
            inner_error,
            predicted,
            actual,
        });
    }

    let defined: Vec<f64> = per_query_auc.iter().filter_map(|a| *a).collect();
    let (mean_auc, auc_std) = mean_and_std(&defined);
    Ok(EvalReport {
        measure: measure.to_string(),
        seed,
        per_query_auc,
        mean_auc,
        auc_std,
        classification_error: wrong as f64 / n as f64,
        confusion,
        chosen_params,
        warnings: Vec::new(),
    })
}
