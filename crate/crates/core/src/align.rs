//! Maximization of the convolution kernel over rigid motions by multi-start
//! gradient ascent.
//!
//! Starts come from principal-axis superposition: the translation maps the
//! centroid of the second cloud onto the first, and the rotation aligns
//! principal axes under every proper sign combination (plus axis-swapped
//! assignments when adjacent axis lengths are close). A configurable number
//! of seeded random starts is added on top.

use nalgebra::{Quaternion, UnitQuaternion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    axis_length, principal_basis, AtomCloud, Mat3, PairKernel, RigidTransform, Vec3,
};

/// Settings for the kernel maximization. `lambda = inf` ignores labels.
#[derive(Debug, Clone)]
pub struct AlignConfig {
    pub sigma: f64,
    pub lambda: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Relative score improvement below which the ascent stops.
    pub score_tolerance: f64,
    pub initial_step: f64,
    /// Adjacent principal-axis length ratio at or above which axis-swapped
    /// starting assignments are added; in (0, 1].
    pub axis_similarity_ratio: f64,
    pub extra_random_starts: usize,
    /// Seed for the random starts; identical configs reproduce bit-identical
    /// results.
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            sigma: 1.0,
            lambda: f64::INFINITY,
            max_iterations: 300,
            gradient_tolerance: 1e-5,
            score_tolerance: 1e-9,
            initial_step: 0.1,
            axis_similarity_ratio: 0.95,
            extra_random_starts: 2,
            seed: 0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be finite and positive, got {}",
                self.sigma
            )));
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive or infinite, got {}",
                self.lambda
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter(
                "max_iterations must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("gradient_tolerance", self.gradient_tolerance),
            ("score_tolerance", self.score_tolerance),
            ("initial_step", self.initial_step),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !(self.axis_similarity_ratio > 0.0 && self.axis_similarity_ratio <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "axis_similarity_ratio must be in (0, 1], got {}",
                self.axis_similarity_ratio
            )));
        }
        Ok(())
    }
}

/// Outcome of one ascent (or the best of a multi-start run).
#[derive(Debug, Clone)]
pub struct AlignResult {
    pub score: f64,
    pub transform: RigidTransform,
    pub start_index: usize,
    pub iterations_used: usize,
    pub converged: bool,
}

const MAX_STEP: f64 = 1.0;
const MIN_STEP: f64 = 1e-12;
const GIMBAL_COS_EPS: f64 = 1e-6;
const GIMBAL_NUDGE: f64 = 1e-4;
const ROTATION_DEDUP_EPS: f64 = 1e-9;

/// Starting transforms from centroid translation and principal-axis
/// superposition. Each axis assignment contributes the four proper-rotation
/// sign combinations; assignments that swap adjacent axes are added when
/// either cloud has adjacent axis lengths with ratio at or above
/// `axis_similarity_ratio`. Rotations closer than 1e-9 in Frobenius norm
/// are deduplicated.
pub fn initial_transforms(
    p1: &AtomCloud,
    p2: &AtomCloud,
    axis_similarity_ratio: f64,
) -> Vec<RigidTransform> {
    let (c1, ev1, u1) = principal_basis(p1);
    let (c2, ev2, u2) = principal_basis(p2);

    // Rotation carries no information for point-vs-point comparison.
    if p1.len() == 1 && p2.len() == 1 {
        return vec![RigidTransform::new(0.0, 0.0, 0.0, c1 - c2)];
    }

    let len1 = ev1.map(axis_length);
    let len2 = ev2.map(axis_length);
    let mut rotations: Vec<Mat3> = Vec::new();
    let mut out = Vec::new();
    for perm in axis_assignments(&len1, &len2, axis_similarity_ratio) {
        let mut permuted = Mat3::zeros();
        for (k, &src) in perm.iter().enumerate() {
            permuted.set_column(k, &u1.column(src).into_owned());
        }
        let odd = permutation_is_odd(&perm);
        for signs in sign_combinations(odd) {
            let mut aligned = permuted;
            for (k, &sign) in signs.iter().enumerate() {
                if sign < 0.0 {
                    let flipped = -aligned.column(k);
                    aligned.set_column(k, &flipped);
                }
            }
            let r = aligned * u2.transpose();
            let duplicate = rotations
                .iter()
                .any(|prev| (r - prev).norm() < ROTATION_DEDUP_EPS);
            if duplicate {
                continue;
            }
            rotations.push(r);
            out.push(RigidTransform::from_rotation_translation(&r, c1 - r * c2));
        }
    }
    out
}

fn axis_assignments(len1: &[f64; 3], len2: &[f64; 3], ratio: f64) -> Vec<[usize; 3]> {
    let close = |small: f64, big: f64| {
        if big < 1e-12 {
            true // both degenerate; interchangeable
        } else {
            small / big >= ratio
        }
    };
    let swap01 = close(len1[1], len1[0]) || close(len2[1], len2[0]);
    let swap12 = close(len1[2], len1[1]) || close(len2[2], len2[1]);
    let mut perms: Vec<[usize; 3]> = vec![[0, 1, 2]];
    if swap01 {
        perms.push([1, 0, 2]);
    }
    if swap12 {
        perms.push([0, 2, 1]);
    }
    if swap01 && swap12 {
        perms.extend([[1, 2, 0], [2, 0, 1], [2, 1, 0]]);
    }
    perms
}

fn permutation_is_odd(p: &[usize; 3]) -> bool {
    let mut inversions = 0;
    for i in 0..3 {
        for j in (i + 1)..3 {
            if p[i] > p[j] {
                inversions += 1;
            }
        }
    }
    inversions % 2 == 1
}

/// The 2^3 sign patterns restricted to proper rotations: determinant of the
/// sign matrix must cancel the permutation parity.
fn sign_combinations(odd_permutation: bool) -> [[f64; 3]; 4] {
    if odd_permutation {
        [
            [-1.0, -1.0, -1.0],
            [-1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0],
            [1.0, 1.0, -1.0],
        ]
    } else {
        [
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ]
    }
}

fn nudge_gimbal(t: RigidTransform) -> RigidTransform {
    let (phi, theta, psi) = t.angles();
    if theta.cos().abs() < GIMBAL_COS_EPS {
        RigidTransform::new(phi, theta + GIMBAL_NUDGE, psi, t.translation)
    } else {
        t
    }
}

fn stepped(t: &RigidTransform, grad: &[f64; 6], step: f64) -> RigidTransform {
    let (phi, theta, psi) = t.angles();
    nudge_gimbal(RigidTransform::new(
        phi + step * grad[0],
        theta + step * grad[1],
        psi + step * grad[2],
        t.translation + step * Vec3::new(grad[3], grad[4], grad[5]),
    ))
}

fn inf_norm(g: &[f64; 6]) -> f64 {
    g.iter().fold(0.0, |m, c| m.max(c.abs()))
}

/// Gradient ascent with backtracking step control: the step halves until the
/// objective improves and the accepted step doubles for the next iteration
/// (capped at 1.0). The score sequence is non-decreasing by construction.
pub fn gradient_ascent(
    p1: &AtomCloud,
    p2: &AtomCloud,
    start: &RigidTransform,
    cfg: &AlignConfig,
) -> Result<AlignResult> {
    cfg.validate()?;
    let kernel = PairKernel::new(p1, p2, cfg.sigma, cfg.lambda)?;
    ascend(&kernel, start, cfg)
}

fn ascend(kernel: &PairKernel, start: &RigidTransform, cfg: &AlignConfig) -> Result<AlignResult> {
    let mut t = nudge_gimbal(start.clone());
    let (mut score, mut grad) = kernel.score_and_gradient(&t);
    let mut step = cfg.initial_step;
    let mut iterations_used = 0;
    let mut converged = false;

    for iter in 0..cfg.max_iterations {
        if inf_norm(&grad) < cfg.gradient_tolerance {
            converged = true;
            break;
        }
        let mut trial = step;
        let mut accepted = false;
        while trial >= MIN_STEP {
            let cand = stepped(&t, &grad, trial);
            let cand_score = kernel.score(&cand);
            if cand_score.is_finite() && cand_score > score {
                let improvement = cand_score - score;
                t = cand;
                let (new_score, new_grad) = kernel.score_and_gradient(&t);
                score = new_score;
                grad = new_grad;
                iterations_used = iter + 1;
                step = (trial * 2.0).min(MAX_STEP);
                accepted = true;
                if improvement < cfg.score_tolerance * score.abs().max(f64::MIN_POSITIVE) {
                    converged = true;
                }
                break;
            }
            trial *= 0.5;
        }
        if !accepted {
            // No ascent direction at step resolution: local optimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    Ok(AlignResult {
        score,
        transform: t,
        start_index: 0,
        iterations_used,
        converged,
    })
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    // Uniform rotation via Shoemake's subgroup method.
    let u1: f64 = rng.random_range(0.0..1.0);
    let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let u3: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = Quaternion::new(b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin());
    UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

/// Best kernel score over rigid motions of the second cloud: gradient ascent
/// from every principal-axis candidate plus `extra_random_starts` seeded
/// random starts, keeping the highest score (ties broken by the smaller
/// start index). The result is an approximate lower bound on the supremum.
pub fn sup_ck(p1: &AtomCloud, p2: &AtomCloud, cfg: &AlignConfig) -> Result<AlignResult> {
    cfg.validate()?;
    let kernel = PairKernel::new(p1, p2, cfg.sigma, cfg.lambda)?;

    let mut starts = initial_transforms(p1, p2, cfg.axis_similarity_ratio);
    if cfg.extra_random_starts > 0 {
        let c1 = p1.centroid();
        let c2 = p2.centroid();
        // Random starts jitter the centroid translation at the scale of the
        // clouds, which lets the ascent escape saddle points of symmetric
        // configurations.
        let jitter = 0.5 * (p1.rms_radius() + p2.rms_radius());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.extra_random_starts {
            let r = random_rotation(&mut rng);
            let offset = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * jitter;
            starts.push(RigidTransform::from_rotation_translation(
                &r,
                c1 - r * c2 + offset,
            ));
        }
    }

    let mut best: Option<AlignResult> = None;
    for (index, start) in starts.iter().enumerate() {
        let mut result = ascend(&kernel, start, cfg)?;
        result.start_index = index;
        let better = match &best {
            None => true,
            Some(b) => result.score > b.score,
        };
        if better {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one start"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{kernel_ck, Atom};
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, half_extent: f64) -> AtomCloud {
        let atoms = (0..n)
            .map(|_| {
                Atom::labeled(
                    rng.random_range(-half_extent..half_extent),
                    rng.random_range(-half_extent..half_extent),
                    rng.random_range(-half_extent..half_extent),
                    rng.random_range(-0.8..0.8),
                )
            })
            .collect();
        AtomCloud::new("random", atoms).unwrap()
    }

    fn random_motion(rng: &mut ChaCha8Rng, shift: f64) -> RigidTransform {
        RigidTransform::new(
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
            Vec3::new(
                rng.random_range(-shift..shift),
                rng.random_range(-shift..shift),
                rng.random_range(-shift..shift),
            ),
        )
    }

    /// An elongated cloud with well-separated axis lengths.
    fn anisotropic_cloud(rng: &mut ChaCha8Rng, n: usize) -> AtomCloud {
        let atoms = (0..n)
            .map(|_| {
                Atom::point(
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-0.8..0.8),
                )
            })
            .collect();
        AtomCloud::new("aniso", atoms).unwrap()
    }

    #[test]
    fn four_candidates_for_separated_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let p1 = anisotropic_cloud(&mut rng, 20);
        let t = random_motion(&mut rng, 5.0);
        let p2 = p1.transformed(&t);
        let starts = initial_transforms(&p1, &p2, 0.95);
        assert_eq!(starts.len(), 4);
        // Every candidate maps centroid(P2) onto centroid(P1).
        for s in &starts {
            let mapped = s.apply(&p2.centroid());
            assert_relative_eq!(mapped, p1.centroid(), epsilon = 1e-9);
        }
    }

    #[test]
    fn axis_swap_added_for_square_prism() {
        // Square prism point set: the two largest axis lengths are equal.
        let mut atoms = Vec::new();
        for &sx in &[-2.0, 2.0] {
            for &sy in &[-2.0, 2.0] {
                for &sz in &[-0.5, 0.5] {
                    atoms.push(Atom::point(sx, sy, sz));
                }
            }
        }
        let p = AtomCloud::new("prism", atoms).unwrap();
        let starts = initial_transforms(&p, &p, 0.95);
        assert!(
            starts.len() > 4,
            "expected axis-swapped assignments, got {} starts",
            starts.len()
        );
    }

    #[test]
    fn single_atom_clouds_give_translation_only() {
        let a = AtomCloud::new("a", vec![Atom::point(1.0, 0.0, 0.0)]).unwrap();
        let b = AtomCloud::new("b", vec![Atom::point(0.0, 2.0, 0.0)]).unwrap();
        let starts = initial_transforms(&a, &b, 0.95);
        assert_eq!(starts.len(), 1);
        assert_eq!(starts[0].rotation_matrix(), Mat3::identity());
        assert_relative_eq!(
            starts[0].translation,
            Vec3::new(1.0, -2.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ascent_from_stationary_start_returns_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let p = random_cloud(&mut rng, 8, 3.0);
        let cfg = AlignConfig::default();
        let res = gradient_ascent(&p, &p, &RigidTransform::identity(), &cfg).unwrap();
        assert!(res.converged);
        assert!(res.iterations_used <= 1);
        let self_score =
            kernel_ck(&p, &p, &RigidTransform::identity(), cfg.sigma, cfg.lambda).unwrap();
        assert_relative_eq!(res.score, self_score, epsilon = 1e-12);
    }

    #[test]
    fn ascent_recovers_planted_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let p1 = random_cloud(&mut rng, 10, 3.0);
        let shift = RigidTransform::new(0.0, 0.0, 0.0, Vec3::new(0.3, 0.0, 0.0));
        let p2 = p1.transformed(&shift);
        // Moving P2 by (-0.3, 0, 0) undoes the shift; ascent from identity.
        let cfg = AlignConfig::default();
        let res = gradient_ascent(&p2, &p1, &shift, &cfg).unwrap();
        assert!(res.converged);
        let self_score =
            kernel_ck(&p1, &p1, &RigidTransform::identity(), cfg.sigma, cfg.lambda).unwrap();

        let res2 = gradient_ascent(&p1, &p2, &RigidTransform::identity(), &cfg).unwrap();
        assert_relative_eq!(
            res2.transform.translation,
            Vec3::new(-0.3, 0.0, 0.0),
            epsilon = 1e-3
        );
        assert!((res2.score - self_score).abs() / self_score < 1e-6);
    }

    #[test]
    fn ascent_never_decreases_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let cfg = AlignConfig::default();
        for _ in 0..10 {
            let p1 = random_cloud(&mut rng, 6, 3.0);
            let p2 = random_cloud(&mut rng, 6, 3.0);
            let start = random_motion(&mut rng, 2.0);
            let start_score = kernel_ck(&p1, &p2, &start, cfg.sigma, cfg.lambda).unwrap();
            let res = gradient_ascent(&p1, &p2, &start, &cfg).unwrap();
            assert!(res.score >= start_score - 1e-12);
            let final_score =
                kernel_ck(&p1, &p2, &res.transform, cfg.sigma, cfg.lambda).unwrap();
            assert_relative_eq!(res.score, final_score, epsilon = 1e-12);
        }
    }

    #[test]
    fn self_alignment_at_least_identity_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let p = random_cloud(&mut rng, 12, 4.0);
        let cfg = AlignConfig::default();
        let res = sup_ck(&p, &p, &cfg).unwrap();
        let id_score =
            kernel_ck(&p, &p, &RigidTransform::identity(), cfg.sigma, cfg.lambda).unwrap();
        assert!(res.score >= id_score - 1e-9);
    }

    #[test]
    fn recovers_planted_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let cfg = AlignConfig::default();
        for _ in 0..5 {
            let p1 = random_cloud(&mut rng, 20, 5.0);
            let motion = random_motion(&mut rng, 5.0);
            let p2 = p1.transformed(&motion);
            let res = sup_ck(&p1, &p2, &cfg).unwrap();
            let self_score =
                kernel_ck(&p1, &p1, &RigidTransform::identity(), cfg.sigma, cfg.lambda).unwrap();
            assert!(
                res.score >= 0.99 * self_score,
                "recovered {} of self-score {}",
                res.score / self_score,
                self_score
            );
        }
    }

    #[test]
    fn directed_scores_nearly_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let cfg = AlignConfig::default();
        for _ in 0..5 {
            let p1 = random_cloud(&mut rng, 15, 4.0);
            let motion = random_motion(&mut rng, 4.0);
            let p2 = p1.transformed(&motion);
            let s12 = sup_ck(&p1, &p2, &cfg).unwrap().score;
            let s21 = sup_ck(&p2, &p1, &cfg).unwrap().score;
            assert!(
                (s12 - s21).abs() / s12.max(s21) < 0.02,
                "s12 = {s12}, s21 = {s21}"
            );
        }
    }

    #[test]
    fn results_are_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let p1 = random_cloud(&mut rng, 10, 4.0);
        let p2 = random_cloud(&mut rng, 11, 4.0);
        let cfg = AlignConfig {
            extra_random_starts: 4,
            seed: 99,
            ..AlignConfig::default()
        };
        let a = sup_ck(&p1, &p2, &cfg).unwrap();
        let b = sup_ck(&p1, &p2, &cfg).unwrap();
        assert_eq!(a.score.to_bits(), b.score.to_bits());
        assert_eq!(a.transform, b.transform);
        assert_eq!(a.start_index, b.start_index);
    }

    #[test]
    fn extra_starts_never_decrease_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..5 {
            let p1 = random_cloud(&mut rng, 8, 4.0);
            let p2 = random_cloud(&mut rng, 9, 4.0);
            let base = AlignConfig {
                extra_random_starts: 0,
                ..AlignConfig::default()
            };
            let more = AlignConfig {
                extra_random_starts: 3,
                seed: 5,
                ..base.clone()
            };
            let s0 = sup_ck(&p1, &p2, &base).unwrap().score;
            let s3 = sup_ck(&p1, &p2, &more).unwrap().score;
            assert!(s3 >= s0);
        }
    }

    #[test]
    fn labeled_gradient_is_weighted_pair_sum() {
        // The label factor does not depend on the transform, so the labeled
        // gradient equals the weight-scaled sum of single-pair gradients.
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let p1 = random_cloud(&mut rng, 4, 2.0);
        let p2 = random_cloud(&mut rng, 3, 2.0);
        let t = random_motion(&mut rng, 1.0);
        let lambda = 0.7;
        let g = crate::geometry::kernel_gradient(&p1, &p2, &t, 1.0, lambda).unwrap();

        let mut expected = [0.0; 6];
        for a in p1.atoms() {
            for b in p2.atoms() {
                let ca = AtomCloud::new("a", vec![a.clone()]).unwrap();
                let cb = AtomCloud::new("b", vec![b.clone()]).unwrap();
                let w = (-(a.label - b.label).powi(2) / lambda).exp();
                let gp =
                    crate::geometry::kernel_gradient(&ca, &cb, &t, 1.0, f64::INFINITY).unwrap();
                for c in 0..6 {
                    expected[c] += w * gp[c];
                }
            }
        }
        for c in 0..6 {
            assert_relative_eq!(g[c], expected[c], epsilon = 1e-12, max_relative = 1e-9);
        }
    }
}
