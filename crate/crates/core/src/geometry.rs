//! Core kernel evaluations, gradients, and shape summaries on atom clouds.
//!
//! An atom cloud is an ordered set of 3D points (angstroms) with a scalar
//! label per atom (partial charge). The convolution kernel between two
//! clouds is the all-pairs Gaussian sum
//!
//! ```text
//! K(P1, P2; t) = sum_ij exp(-(l_i - l_j)^2 / lambda)
//!                       * exp(-|x_i - (R y_j + y_t)|^2 / (2 sigma^2))
//! ```
//!
//! where `t = (R, y_t)` is a rigid motion applied to the second cloud and
//! `lambda = inf` turns the label factor off (pure geometry).

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Source identifiers carried along for provenance; never used in math.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AtomMeta {
    pub res_name: String,
    pub res_seq: i32,
    pub atom_name: String,
    pub chain: String,
}

/// One atom: position in angstroms plus a scalar label (partial charge,
/// elementary-charge units; 0.0 is a meaningful value).
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub position: Vec3,
    pub label: f64,
    pub element: String,
    pub meta: AtomMeta,
}

impl Atom {
    pub fn new(position: Vec3, label: f64) -> Result<Self> {
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidAtom(format!(
                "non-finite position ({}, {}, {})",
                position.x, position.y, position.z
            )));
        }
        if !label.is_finite() {
            return Err(Error::InvalidAtom(format!("non-finite label {label}")));
        }
        Ok(Atom {
            position,
            label,
            element: String::new(),
            meta: AtomMeta::default(),
        })
    }

    /// Unlabeled atom at `(x, y, z)`. Panics on non-finite input.
    pub fn point(x: f64, y: f64, z: f64) -> Self {
        Atom::new(Vec3::new(x, y, z), 0.0).expect("finite coordinates")
    }

    /// Atom at `(x, y, z)` carrying `label`. Panics on non-finite input.
    pub fn labeled(x: f64, y: f64, z: f64, label: f64) -> Self {
        Atom::new(Vec3::new(x, y, z), label).expect("finite coordinates and label")
    }

    pub fn with_element(mut self, element: impl Into<String>) -> Self {
        self.element = element.into();
        self
    }

    pub fn with_meta(mut self, meta: AtomMeta) -> Self {
        self.meta = meta;
        self
    }
}

/// An ordered, non-empty set of atoms with no two atoms at exactly the same
/// position. `ligand_class` names the bound ligand (e.g. "ATP") when known.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomCloud {
    pub id: String,
    pub ligand_class: Option<String>,
    atoms: Vec<Atom>,
}

impl AtomCloud {
    pub fn new(id: impl Into<String>, atoms: Vec<Atom>) -> Result<Self> {
        let id = id.into();
        if atoms.is_empty() {
            return Err(Error::InvalidCloud {
                id,
                msg: "a cloud must contain at least one atom".into(),
            });
        }
        let mut seen = HashSet::with_capacity(atoms.len());
        for atom in &atoms {
            if !atom.position.iter().all(|c| c.is_finite()) || !atom.label.is_finite() {
                return Err(Error::InvalidCloud {
                    id,
                    msg: "atoms must have finite positions and labels".into(),
                });
            }
            let key = [
                atom.position.x.to_bits(),
                atom.position.y.to_bits(),
                atom.position.z.to_bits(),
            ];
            if !seen.insert(key) {
                return Err(Error::InvalidCloud {
                    id,
                    msg: format!(
                        "duplicate atom position ({}, {}, {})",
                        atom.position.x, atom.position.y, atom.position.z
                    ),
                });
            }
        }
        Ok(AtomCloud {
            id,
            ligand_class: None,
            atoms,
        })
    }

    pub fn with_ligand_class(mut self, class: impl Into<String>) -> Self {
        self.ligand_class = Some(class.into());
        self
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.label).collect()
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.atoms.iter().map(|a| a.position).sum();
        sum / self.atoms.len() as f64
    }

    /// Root-mean-square distance of atoms from the centroid.
    pub fn rms_radius(&self) -> f64 {
        let c = self.centroid();
        let mean_sq = self
            .atoms
            .iter()
            .map(|a| (a.position - c).norm_squared())
            .sum::<f64>()
            / self.atoms.len() as f64;
        mean_sq.sqrt()
    }

    /// Copy of the cloud with every atom moved by the rigid motion.
    pub fn transformed(&self, t: &RigidTransform) -> AtomCloud {
        let r = t.rotation_matrix();
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                let mut moved = a.clone();
                moved.position = r * a.position + t.translation;
                moved
            })
            .collect();
        AtomCloud {
            id: self.id.clone(),
            ligand_class: self.ligand_class.clone(),
            atoms,
        }
    }
}

/// A proper rigid motion parameterized by Euler angles `(phi, theta, psi)`
/// in `[0, 2*pi)` and a translation vector in angstroms. The rotation acts
/// as `R = R_X(phi) * R_Y(theta) * R_Z(psi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    phi: f64,
    theta: f64,
    psi: f64,
    pub translation: Vec3,
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w == TAU {
        0.0
    } else {
        w
    }
}

impl RigidTransform {
    pub fn new(phi: f64, theta: f64, psi: f64, translation: Vec3) -> Self {
        RigidTransform {
            phi: wrap_angle(phi),
            theta: wrap_angle(theta),
            psi: wrap_angle(psi),
            translation,
        }
    }

    pub fn identity() -> Self {
        RigidTransform::new(0.0, 0.0, 0.0, Vec3::zeros())
    }

    pub fn angles(&self) -> (f64, f64, f64) {
        (self.phi, self.theta, self.psi)
    }

    /// `R = R_X(phi) * R_Y(theta) * R_Z(psi)`; orthonormal with det +1.
    pub fn rotation_matrix(&self) -> Mat3 {
        rot_x(self.phi) * rot_y(self.theta) * rot_z(self.psi)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation
    }

    /// Euler angles recovered from an orthonormal rotation matrix plus a
    /// translation. The reconstruction satisfies
    /// `rotation_matrix() == r` up to roundoff.
    pub fn from_rotation_translation(r: &Mat3, translation: Vec3) -> Self {
        let sin_theta = (-r[(0, 2)]).clamp(-1.0, 1.0);
        if sin_theta.abs() < 1.0 - 1e-12 {
            let theta = sin_theta.asin();
            let phi = r[(1, 2)].atan2(r[(2, 2)]);
            let psi = r[(0, 1)].atan2(r[(0, 0)]);
            RigidTransform::new(phi, theta, psi, translation)
        } else {
            // cos(theta) ~ 0: only phi -+ psi is determined; fix phi = 0.
            let theta = if sin_theta > 0.0 { PI / 2.0 } else { -PI / 2.0 };
            let psi = if sin_theta > 0.0 {
                -r[(1, 0)].atan2(r[(1, 1)])
            } else {
                (-r[(1, 0)]).atan2(r[(1, 1)])
            };
            RigidTransform::new(0.0, theta, psi, translation)
        }
    }
}

fn rot_x(phi: f64) -> Mat3 {
    let (s, c) = phi.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
}

fn rot_y(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
}

fn rot_z(psi: f64) -> Mat3 {
    let (s, c) = psi.sin_cos();
    Mat3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(phi: f64) -> Mat3 {
    let (s, c) = phi.sin_cos();
    Mat3::new(0.0, 0.0, 0.0, 0.0, -s, c, 0.0, -c, -s)
}

fn drot_y(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(-s, 0.0, -c, 0.0, 0.0, 0.0, c, 0.0, -s)
}

fn drot_z(psi: f64) -> Mat3 {
    let (s, c) = psi.sin_cos();
    Mat3::new(-s, c, 0.0, -c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Inertia ellipsoid of a cloud: centroid, principal axis half-lengths
/// (descending), the corresponding orthonormal directions, and the
/// ellipsoid volume `(4/3) pi * l1 * l2 * l3`.
#[derive(Debug, Clone)]
pub struct EllipsoidSummary {
    pub centroid: Vec3,
    pub axis_lengths: [f64; 3],
    pub axis_directions: [Vec3; 3],
    pub volume: f64,
}

/// Centroid, covariance eigenvalues (descending, clamped at 0), and a
/// right-handed orthonormal eigenbasis (columns matching the eigenvalues).
pub(crate) fn principal_basis(cloud: &AtomCloud) -> (Vec3, [f64; 3], Mat3) {
    let centroid = cloud.centroid();
    let n = cloud.len() as f64;
    let mut cov = Mat3::zeros();
    for atom in cloud.atoms() {
        let d = atom.position - centroid;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut values = [0.0; 3];
    let mut basis = Mat3::zeros();
    for (k, &src) in order.iter().enumerate() {
        values[k] = eig.eigenvalues[src].max(0.0);
        basis.set_column(k, &eig.eigenvectors.column(src).into_owned());
    }
    // Right-handed basis; flipping the last column preserves orthonormality.
    if basis.determinant() < 0.0 {
        let flipped = -basis.column(2);
        basis.set_column(2, &flipped);
    }
    (centroid, values, basis)
}

/// Axis half-length from a covariance eigenvalue: `sqrt(3 * eigenvalue)`.
pub(crate) fn axis_length(eigenvalue: f64) -> f64 {
    (3.0 * eigenvalue.max(0.0)).sqrt()
}

/// Ellipsoid summary of a cloud. Degenerate clouds (collinear, coplanar, or
/// fewer than three atoms) produce zero-length axes; the direction basis is
/// always a full right-handed orthonormal set.
pub fn ellipsoid_summary(cloud: &AtomCloud) -> EllipsoidSummary {
    let (centroid, values, basis) = principal_basis(cloud);
    let axis_lengths = [
        axis_length(values[0]),
        axis_length(values[1]),
        axis_length(values[2]),
    ];
    let axis_directions = [
        basis.column(0).into_owned(),
        basis.column(1).into_owned(),
        basis.column(2).into_owned(),
    ];
    let volume = 4.0 / 3.0 * PI * axis_lengths[0] * axis_lengths[1] * axis_lengths[2];
    EllipsoidSummary {
        centroid,
        axis_lengths,
        axis_directions,
        volume,
    }
}

fn check_kernel_params(sigma: f64, lambda: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be finite and positive, got {sigma}"
        )));
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive (or infinite to ignore labels), got {lambda}"
        )));
    }
    Ok(())
}

/// Precomputed state for repeated kernel/gradient evaluations on one pair of
/// clouds: positions are copied out and the label weights
/// `exp(-(l_i - l_j)^2 / lambda)` are frozen once, since they do not depend
/// on the transform.
pub(crate) struct PairKernel {
    x: Vec<Vec3>,
    y: Vec<Vec3>,
    weights: Option<Vec<f64>>, // row-major [i * y.len() + j]
    inv_two_sigma_sq: f64,
    inv_sigma_sq: f64,
}

impl PairKernel {
    pub fn new(p1: &AtomCloud, p2: &AtomCloud, sigma: f64, lambda: f64) -> Result<Self> {
        check_kernel_params(sigma, lambda)?;
        let x = p1.positions();
        let y = p2.positions();
        let weights = if lambda.is_finite() {
            let l1 = p1.labels();
            let l2 = p2.labels();
            let mut w = Vec::with_capacity(x.len() * y.len());
            for a in &l1 {
                for b in &l2 {
                    let dl = a - b;
                    w.push((-dl * dl / lambda).exp());
                }
            }
            Some(w)
        } else {
            None
        };
        Ok(PairKernel {
            x,
            y,
            weights,
            inv_two_sigma_sq: 1.0 / (2.0 * sigma * sigma),
            inv_sigma_sq: 1.0 / (sigma * sigma),
        })
    }

    fn transformed_y(&self, t: &RigidTransform) -> Vec<Vec3> {
        let r = t.rotation_matrix();
        self.y.iter().map(|yj| r * yj + t.translation).collect()
    }

    pub fn score(&self, t: &RigidTransform) -> f64 {
        let z = self.transformed_y(t);
        let ny = z.len();
        let mut total = 0.0;
        for (i, xi) in self.x.iter().enumerate() {
            for (j, zj) in z.iter().enumerate() {
                let d2 = (xi - zj).norm_squared();
                let w = self.weights.as_ref().map_or(1.0, |w| w[i * ny + j]);
                total += w * (-d2 * self.inv_two_sigma_sq).exp();
            }
        }
        total
    }

    /// Objective value and its gradient with respect to
    /// `(phi, theta, psi, y_t)`. The score accumulates in the same order as
    /// `score`, so both routes agree bitwise.
    pub fn score_and_gradient(&self, t: &RigidTransform) -> (f64, [f64; 6]) {
        let (phi, theta, psi) = t.angles();
        let (rx, ry, rz) = (rot_x(phi), rot_y(theta), rot_z(psi));
        let d_phi = drot_x(phi) * ry * rz;
        let d_theta = rx * drot_y(theta) * rz;
        let d_psi = rx * ry * drot_z(psi);
        let r = rx * ry * rz;

        let ny = self.y.len();
        let z: Vec<Vec3> = self.y.iter().map(|yj| r * yj + t.translation).collect();
        let da: Vec<Vec3> = self.y.iter().map(|yj| d_phi * yj).collect();
        let db: Vec<Vec3> = self.y.iter().map(|yj| d_theta * yj).collect();
        let dc: Vec<Vec3> = self.y.iter().map(|yj| d_psi * yj).collect();

        let mut total = 0.0;
        let mut g = [0.0; 6];
        for (i, xi) in self.x.iter().enumerate() {
            for j in 0..ny {
                let d = xi - z[j];
                let w = self.weights.as_ref().map_or(1.0, |w| w[i * ny + j]);
                let e = w * (-d.norm_squared() * self.inv_two_sigma_sq).exp();
                total += e;
                let coef = e * self.inv_sigma_sq;
                g[0] += coef * d.dot(&da[j]);
                g[1] += coef * d.dot(&db[j]);
                g[2] += coef * d.dot(&dc[j]);
                g[3] += coef * d.x;
                g[4] += coef * d.y;
                g[5] += coef * d.z;
            }
        }
        (total, g)
    }
}

/// Convolution kernel between two clouds under a rigid motion of the second.
/// With `lambda = inf` the label factor is 1 (pure geometry). The result
/// lies in `(0, N1 * N2]`.
pub fn kernel_ck(
    p1: &AtomCloud,
    p2: &AtomCloud,
    t: &RigidTransform,
    sigma: f64,
    lambda: f64,
) -> Result<f64> {
    Ok(PairKernel::new(p1, p2, sigma, lambda)?.score(t))
}

/// Kernel-induced distance at the identity transform (unlabeled):
/// `D = K(P1,P1) + K(P2,P2) - 2 K(P1,P2)`. Non-negative, symmetric, and
/// zero exactly when both arguments are the same cloud.
pub fn ck_distance(p1: &AtomCloud, p2: &AtomCloud, sigma: f64) -> Result<f64> {
    let id = RigidTransform::identity();
    let k11 = kernel_ck(p1, p1, &id, sigma, f64::INFINITY)?;
    let k22 = kernel_ck(p2, p2, &id, sigma, f64::INFINITY)?;
    let k12 = kernel_ck(p1, p2, &id, sigma, f64::INFINITY)?;
    Ok(k11 + k22 - 2.0 * k12)
}

/// Analytic gradient of the (label-weighted) kernel with respect to
/// `(phi, theta, psi, y_t)`:
///
/// ```text
/// d/dy_t   = (1/sigma^2) sum_ij w_ij d_ij exp(-|d_ij|^2 / (2 sigma^2))
/// d/dtheta = (1/sigma^2) sum_ij w_ij exp(...) d_ij . (R_X dR_Y/dtheta R_Z y_j)
/// ```
///
/// with `d_ij = x_i - (R y_j + y_t)` and the analogous chain rule through
/// `dR_X/dphi` and `dR_Z/dpsi`.
pub fn kernel_gradient(
    p1: &AtomCloud,
    p2: &AtomCloud,
    t: &RigidTransform,
    sigma: f64,
    lambda: f64,
) -> Result<[f64; 6]> {
    Ok(PairKernel::new(p1, p2, sigma, lambda)?.score_and_gradient(t).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_cloud(rng: &mut ChaCha8Rng, n: usize, half_extent: f64) -> AtomCloud {
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

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        RigidTransform::new(
            rng.random_range(0.0..TAU),
            rng.random_range(0.0..TAU),
            rng.random_range(0.0..TAU),
            Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ),
        )
    }

    /// Independent brute-force double sum, written directly from the formula.
    fn kernel_oracle(
        p1: &AtomCloud,
        p2: &AtomCloud,
        t: &RigidTransform,
        sigma: f64,
        lambda: f64,
    ) -> f64 {
        let r = t.rotation_matrix();
        let mut total = 0.0;
        for a in p1.atoms() {
            for b in p2.atoms() {
                let moved = r * b.position + t.translation;
                let d2 = (a.position - moved).norm_squared();
                let w = if lambda.is_finite() {
                    (-(a.label - b.label).powi(2) / lambda).exp()
                } else {
                    1.0
                };
                total += w * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
        total
    }

    #[test]
    fn cloud_rejects_empty_and_duplicates() {
        assert!(AtomCloud::new("empty", vec![]).is_err());
        let dup = vec![Atom::point(1.0, 2.0, 3.0), Atom::point(1.0, 2.0, 3.0)];
        assert!(AtomCloud::new("dup", dup).is_err());
        assert!(Atom::new(Vec3::new(f64::NAN, 0.0, 0.0), 0.0).is_err());
        assert!(Atom::new(Vec3::zeros(), f64::INFINITY).is_err());
    }

    #[test]
    fn rotation_identity() {
        let t = RigidTransform::identity();
        assert_eq!(t.rotation_matrix(), Mat3::identity());
    }

    #[test]
    fn rotation_z_quarter_turn() {
        let t = RigidTransform::new(0.0, 0.0, PI / 2.0, Vec3::zeros());
        let r = t.rotation_matrix();
        let expected = Mat3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let t = random_transform(&mut rng);
            let r = t.rotation_matrix();
            let back = RigidTransform::from_rotation_translation(&r, t.translation);
            assert_relative_eq!(back.rotation_matrix(), r, epsilon = 1e-12);
        }
        // Gimbal-lock cases.
        for &theta in &[PI / 2.0, 3.0 * PI / 2.0] {
            let t = RigidTransform::new(0.4, theta, 1.1, Vec3::zeros());
            let r = t.rotation_matrix();
            let back = RigidTransform::from_rotation_translation(&r, Vec3::zeros());
            assert_relative_eq!(back.rotation_matrix(), r, epsilon = 1e-9);
        }
    }

    #[test]
    fn kernel_single_atoms() {
        let a = AtomCloud::new("a", vec![Atom::point(0.0, 0.0, 0.0)]).unwrap();
        let id = RigidTransform::identity();
        let k = kernel_ck(&a, &a, &id, 1.0, f64::INFINITY).unwrap();
        assert_eq!(k, 1.0);

        let b = AtomCloud::new("b", vec![Atom::point(1.0, 0.0, 0.0)]).unwrap();
        let k = kernel_ck(&a, &b, &id, 1.0, f64::INFINITY).unwrap();
        assert_relative_eq!(k, (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn kernel_matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p1 = random_cloud(&mut rng, 3, 2.0);
            let p2 = random_cloud(&mut rng, 3, 2.0);
            let t = random_transform(&mut rng);
            let k = kernel_ck(&p1, &p2, &t, 1.0, 0.25).unwrap();
            let oracle = kernel_oracle(&p1, &p2, &t, 1.0, 0.25);
            assert_relative_eq!(k, oracle, max_relative = 1e-12);
        }
    }

    #[test]
    fn kernel_rejects_bad_params() {
        let a = AtomCloud::new("a", vec![Atom::point(0.0, 0.0, 0.0)]).unwrap();
        let id = RigidTransform::identity();
        assert!(kernel_ck(&a, &a, &id, 0.0, f64::INFINITY).is_err());
        assert!(kernel_ck(&a, &a, &id, -1.0, f64::INFINITY).is_err());
        assert!(kernel_ck(&a, &a, &id, 1.0, 0.0).is_err());
        assert!(kernel_ck(&a, &a, &id, 1.0, -0.5).is_err());
    }

    #[test]
    fn distance_identity_symmetry_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_cloud(&mut rng, 6, 3.0);
        assert_eq!(ck_distance(&p, &p, 1.0).unwrap(), 0.0);

        let q = random_cloud(&mut rng, 5, 3.0);
        let d12 = ck_distance(&p, &q, 1.0).unwrap();
        let d21 = ck_distance(&q, &p, 1.0).unwrap();
        assert_relative_eq!(d12, d21, epsilon = 1e-12);

        for d in [0.0, 0.7, 2.5] {
            let a = AtomCloud::new("a", vec![Atom::point(0.0, 0.0, 0.0)]).unwrap();
            let b = AtomCloud::new("b", vec![Atom::point(d, 0.0, 0.0)]).unwrap();
            let dist = ck_distance(&a, &b, 1.0).unwrap();
            assert_relative_eq!(dist, 2.0 - 2.0 * (-d * d / 2.0).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn distance_triangle_inequality_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = random_cloud(&mut rng, 6, 3.0);
            let b = random_cloud(&mut rng, 5, 3.0);
            let c = random_cloud(&mut rng, 7, 3.0);
            let dab = ck_distance(&a, &b, 1.0).unwrap();
            let dbc = ck_distance(&b, &c, 1.0).unwrap();
            let dac = ck_distance(&a, &c, 1.0).unwrap();
            assert!(dab >= 0.0 && dbc >= 0.0 && dac >= 0.0);
            assert!(dac <= dab + dbc + 1e-9);
        }
    }

    fn finite_difference(
        p1: &AtomCloud,
        p2: &AtomCloud,
        t: &RigidTransform,
        sigma: f64,
        lambda: f64,
        h: f64,
    ) -> [f64; 6] {
        let (phi, theta, psi) = t.angles();
        let base = [
            phi,
            theta,
            psi,
            t.translation.x,
            t.translation.y,
            t.translation.z,
        ];
        let mut fd = [0.0; 6];
        for (c, slot) in fd.iter_mut().enumerate() {
            let eval = |delta: f64| {
                let mut p = base;
                p[c] += delta;
                let tt = RigidTransform::new(p[0], p[1], p[2], Vec3::new(p[3], p[4], p[5]));
                kernel_oracle(p1, p2, &tt, sigma, lambda)
            };
            *slot = (eval(h) - eval(-h)) / (2.0 * h);
        }
        fd
    }

    pub(crate) fn assert_gradient_close(analytic: &[f64; 6], fd: &[f64; 6]) {
        for (c, (&a, &f)) in analytic.iter().zip(fd).enumerate() {
            if a.abs() < 1e-6 {
                assert!(
                    (a - f).abs() < 1e-8,
                    "component {c}: analytic {a} vs fd {f}"
                );
            } else {
                assert!(
                    ((a - f) / a).abs() < 1e-4,
                    "component {c}: analytic {a} vs fd {f}"
                );
            }
        }
    }

    #[test]
    fn gradient_zero_at_self_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = random_cloud(&mut rng, 8, 3.0);
        let g = kernel_gradient(&p, &p, &RigidTransform::identity(), 1.0, f64::INFINITY).unwrap();
        for (c, component) in g.iter().enumerate().skip(3) {
            assert!(component.abs() < 1e-8, "translation gradient {c} = {component}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..30 {
            let p1 = random_cloud(&mut rng, 4, 2.0);
            let p2 = random_cloud(&mut rng, 4, 2.0);
            let t = random_transform(&mut rng);
            let lambda = if trial % 2 == 0 { f64::INFINITY } else { 0.5 };
            let g = kernel_gradient(&p1, &p2, &t, 1.0, lambda).unwrap();
            let fd = finite_difference(&p1, &p2, &t, 1.0, lambda, 1e-5);
            assert_gradient_close(&g, &fd);
        }
    }

    #[test]
    fn gradient_vanishes_for_large_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let p1 = random_cloud(&mut rng, 5, 2.0);
        let p2 = random_cloud(&mut rng, 5, 2.0);
        let t = random_transform(&mut rng);
        let g = kernel_gradient(&p1, &p2, &t, 1e6, f64::INFINITY).unwrap();
        for (c, component) in g.iter().enumerate() {
            assert!(component.abs() < 1e-9, "component {c} = {component}");
        }
    }

    #[test]
    fn ellipsoid_single_atom() {
        let p = AtomCloud::new("pt", vec![Atom::point(1.0, 2.0, 3.0)]).unwrap();
        let e = ellipsoid_summary(&p);
        assert_relative_eq!(e.centroid, Vec3::new(1.0, 2.0, 3.0), epsilon = 1e-15);
        assert_eq!(e.axis_lengths, [0.0, 0.0, 0.0]);
        assert_eq!(e.volume, 0.0);
    }

    #[test]
    fn ellipsoid_box_corners() {
        // Corners of a box with half-extents (2, 1, 0.5): covariance
        // eigenvalues (4, 1, 0.25), so axis lengths sqrt(3) * (2, 1, 0.5).
        let mut atoms = Vec::new();
        for &sx in &[-2.0, 2.0] {
            for &sy in &[-1.0, 1.0] {
                for &sz in &[-0.5, 0.5] {
                    atoms.push(Atom::point(sx, sy, sz));
                }
            }
        }
        let p = AtomCloud::new("box", atoms).unwrap();
        let e = ellipsoid_summary(&p);
        let s3 = 3.0f64.sqrt();
        assert_relative_eq!(e.axis_lengths[0], 2.0 * s3, epsilon = 1e-12);
        assert_relative_eq!(e.axis_lengths[1], s3, epsilon = 1e-12);
        assert_relative_eq!(e.axis_lengths[2], 0.5 * s3, epsilon = 1e-12);
        assert_relative_eq!(e.axis_directions[0].x.abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(e.axis_directions[1].y.abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(e.axis_directions[2].z.abs(), 1.0, epsilon = 1e-12);
        let expected_volume = 4.0 / 3.0 * PI * 2.0 * s3 * s3 * 0.5 * s3;
        assert_relative_eq!(e.volume, expected_volume, epsilon = 1e-9);
    }

    #[test]
    fn ellipsoid_invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let p = random_cloud(&mut rng, 9, 4.0);
            let t = random_transform(&mut rng);
            let moved = p.transformed(&t);
            let e1 = ellipsoid_summary(&p);
            let e2 = ellipsoid_summary(&moved);
            for k in 0..3 {
                assert_relative_eq!(e1.axis_lengths[k], e2.axis_lengths[k], epsilon = 1e-9);
            }
            assert_relative_eq!(e1.volume, e2.volume, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn l2_inner_product_equivalence() {
        // K(P1, P2) at identity equals 1/C times the L2 inner product of the
        // Gaussian density fields with bandwidth sigma / sqrt(2), where
        // C = (pi sigma^2 / 2)^(3/2).
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..3 {
            let p1 = random_cloud(&mut rng, 3, 1.0);
            let p2 = random_cloud(&mut rng, 3, 1.0);
            let sigma = 1.0;
            let k = kernel_ck(
                &p1,
                &p2,
                &RigidTransform::identity(),
                sigma,
                f64::INFINITY,
            )
            .unwrap();
            let integral = grid_l2_inner_product(&p1, &p2, sigma);
            let c = (PI * sigma * sigma / 2.0).powf(1.5);
            assert!(
                ((integral / c - k) / k).abs() < 1e-2,
                "integral/C = {} vs kernel = {k}",
                integral / c
            );
        }
    }

    pub(crate) fn grid_l2_inner_product(p1: &AtomCloud, p2: &AtomCloud, sigma: f64) -> f64 {
        // Midpoint rule over a box padded by 5 sigma around both clouds;
        // the density field per cloud is sum_i exp(-|x - x_i|^2 / sigma^2).
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for a in p1.atoms().iter().chain(p2.atoms()) {
            lo = lo.inf(&a.position);
            hi = hi.sup(&a.position);
        }
        let pad = 5.0 * sigma;
        let h = sigma / 3.0;
        let counts: Vec<usize> = (0..3)
            .map(|c| (((hi[c] - lo[c]) + 2.0 * pad) / h).ceil() as usize)
            .collect();
        let density = |p: &AtomCloud, x: &Vec3| -> f64 {
            p.atoms()
                .iter()
                .map(|a| (-(x - a.position).norm_squared() / (sigma * sigma)).exp())
                .sum()
        };
        let mut total = 0.0;
        for ix in 0..counts[0] {
            let x = lo.x - pad + (ix as f64 + 0.5) * h;
            for iy in 0..counts[1] {
                let y = lo.y - pad + (iy as f64 + 0.5) * h;
                for iz in 0..counts[2] {
                    let z = lo.z - pad + (iz as f64 + 0.5) * h;
                    let pt = Vec3::new(x, y, z);
                    total += density(p1, &pt) * density(p2, &pt);
                }
            }
        }
        total * h * h * h
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rotation_is_orthonormal(
            phi in 0.0..TAU,
            theta in 0.0..TAU,
            psi in 0.0..TAU,
        ) {
            let t = RigidTransform::new(phi, theta, psi, Vec3::zeros());
            let r = t.rotation_matrix();
            let rtr = r.transpose() * r;
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((rtr[(i, j)] - expect).abs() < 1e-12);
                }
            }
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn kernel_symmetric_at_identity(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p1 = random_cloud(&mut rng, 4, 3.0);
            let p2 = random_cloud(&mut rng, 5, 3.0);
            let id = RigidTransform::identity();
            let k12 = kernel_ck(&p1, &p2, &id, 1.3, 0.8).unwrap();
            let k21 = kernel_ck(&p2, &p1, &id, 1.3, 0.8).unwrap();
            prop_assert!((k12 - k21).abs() < 1e-12);
        }

        #[test]
        fn kernel_bounded_by_pair_count(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p1 = random_cloud(&mut rng, 4, 3.0);
            let p2 = random_cloud(&mut rng, 6, 3.0);
            let t = random_transform(&mut rng);
            let k = kernel_ck(&p1, &p2, &t, 1.0, 0.5).unwrap();
            prop_assert!(k > 0.0);
            prop_assert!(k <= (p1.len() * p2.len()) as f64);
        }

        #[test]
        fn kernel_monotone_in_sigma(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p1 = random_cloud(&mut rng, 4, 3.0);
            let p2 = random_cloud(&mut rng, 4, 3.0);
            let t = random_transform(&mut rng);
            let mut prev = 0.0;
            for sigma in [0.5, 1.0, 2.0, 4.0, 8.0] {
                let k = kernel_ck(&p1, &p2, &t, sigma, f64::INFINITY).unwrap();
                prop_assert!(k >= prev);
                prev = k;
            }
        }
    }
}
