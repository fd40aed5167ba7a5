//! Similarity and dissimilarity measures between atom clouds: the
//! alignment-maximized kernels, ellipsoid baselines (Vol, Princ-Axis), the
//! overlap-count index after superposition (sup-PI), and the kernel/volume
//! linear combination.

use serde::{Deserialize, Serialize};

use crate::align::{gradient_ascent, sup_ck, AlignConfig};
use crate::error::{Error, Result};
use crate::geometry::{ellipsoid_summary, AtomCloud};
use crate::matching::overlap_count;

/// Whether larger scores mean more similar (`Similarity`) or less similar
/// (`Dissimilarity`). Rankings sort descending for the former, ascending for
/// the latter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Similarity,
    Dissimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    SupCk,
    SupCkL,
    Vol,
    PrincAxis,
    SupPi,
    SupCkVol,
    SupCkLVol,
}

impl MeasureKind {
    pub fn orientation(self) -> Orientation {
        match self {
            MeasureKind::Vol | MeasureKind::PrincAxis => Orientation::Dissimilarity,
            _ => Orientation::Similarity,
        }
    }

    /// Kinds whose score depends on atom labels (partial charges).
    pub fn uses_labels(self) -> bool {
        matches!(self, MeasureKind::SupCkL | MeasureKind::SupCkLVol)
    }

    /// Kinds that maximize the kernel over rigid motions.
    pub fn uses_alignment(self) -> bool {
        !matches!(self, MeasureKind::Vol | MeasureKind::PrincAxis)
    }

    /// Kinds that mix in the volume dissimilarity.
    pub fn uses_volume(self) -> bool {
        matches!(self, MeasureKind::SupCkVol | MeasureKind::SupCkLVol)
    }

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::SupCk => "sup-ck",
            MeasureKind::SupCkL => "sup-ck-l",
            MeasureKind::Vol => "vol",
            MeasureKind::PrincAxis => "princ-axis",
            MeasureKind::SupPi => "sup-pi",
            MeasureKind::SupCkVol => "sup-ck-vol",
            MeasureKind::SupCkLVol => "sup-ck-l-vol",
        }
    }
}

/// Full configuration for scoring a pair of clouds.
#[derive(Debug, Clone)]
pub struct MeasureConfig {
    pub kind: MeasureKind,
    pub align: AlignConfig,
    /// Overlap distance for sup-PI, in angstroms.
    pub overlap_tolerance: f64,
    /// Volume-combination coefficient for the `*-vol` kinds.
    pub alpha: f64,
}

impl MeasureConfig {
    pub fn new(kind: MeasureKind) -> Self {
        MeasureConfig {
            kind,
            align: AlignConfig::default(),
            overlap_tolerance: 1.0,
            alpha: 0.0,
        }
    }

    pub fn orientation(&self) -> Orientation {
        self.kind.orientation()
    }

    pub fn validate(&self) -> Result<()> {
        self.align.validate()?;
        if !(self.overlap_tolerance.is_finite() && self.overlap_tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "overlap_tolerance must be finite and positive, got {}",
                self.overlap_tolerance
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// The alignment settings implied by the measure kind: label-blind kinds
    /// force `lambda = inf`.
    fn effective_align(&self) -> AlignConfig {
        let mut align = self.align.clone();
        if !self.kind.uses_labels() {
            align.lambda = f64::INFINITY;
        }
        align
    }
}

/// Absolute difference of the inertia-ellipsoid volumes. Zero for rigidly
/// related clouds; a dissimilarity.
pub fn vol_score(p1: &AtomCloud, p2: &AtomCloud) -> f64 {
    (ellipsoid_summary(p1).volume - ellipsoid_summary(p2).volume).abs()
}

/// Sum of squared differences of the sorted principal-axis lengths; a
/// dissimilarity.
pub fn princ_axis_score(p1: &AtomCloud, p2: &AtomCloud) -> f64 {
    let a = ellipsoid_summary(p1).axis_lengths;
    let b = ellipsoid_summary(p2).axis_lengths;
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Overlap index after kernel superposition: the alignment from the kernel
/// maximization is refined on a sharpened objective
/// (`sigma = overlap_tolerance / 2`, labels off) as a smooth surrogate for
/// the overlap count, then `L` one-to-one overlaps within the tolerance give
/// `PI = L / (N1 + N2 - L)` in `[0, 1]`.
pub fn sup_pi(p1: &AtomCloud, p2: &AtomCloud, cfg: &MeasureConfig) -> Result<f64> {
    cfg.validate()?;
    let mut align = cfg.effective_align();
    align.lambda = f64::INFINITY; // the overlap count is purely geometric
    let coarse = sup_ck(p1, p2, &align)?;
    let sharp = AlignConfig {
        sigma: cfg.overlap_tolerance / 2.0,
        ..align
    };
    let refined = gradient_ascent(p1, p2, &coarse.transform, &sharp)?;

    let moved = p2.transformed(&refined.transform);
    let l = overlap_count(&p1.positions(), &moved.positions(), cfg.overlap_tolerance);
    Ok(l as f64 / (p1.len() + p2.len() - l) as f64)
}

/// Kernel score minus `alpha` times the volume difference:
/// `sup_ck(P1, P2) - alpha * vol_score(P1, P2)`. Keeps the similarity
/// orientation (larger = more similar).
pub fn combined_ck_vol(p1: &AtomCloud, p2: &AtomCloud, cfg: &MeasureConfig) -> Result<f64> {
    cfg.validate()?;
    let kernel = sup_ck(p1, p2, &cfg.effective_align())?.score;
    Ok(kernel - cfg.alpha * vol_score(p1, p2))
}

/// Score a pair of clouds under the configured measure.
pub fn score(p1: &AtomCloud, p2: &AtomCloud, cfg: &MeasureConfig) -> Result<f64> {
    cfg.validate()?;
    match cfg.kind {
        MeasureKind::SupCk | MeasureKind::SupCkL => {
            Ok(sup_ck(p1, p2, &cfg.effective_align())?.score)
        }
        MeasureKind::Vol => Ok(vol_score(p1, p2)),
        MeasureKind::PrincAxis => Ok(princ_axis_score(p1, p2)),
        MeasureKind::SupPi => sup_pi(p1, p2, cfg),
        MeasureKind::SupCkVol | MeasureKind::SupCkLVol => combined_ck_vol(p1, p2, cfg),
    }
}
