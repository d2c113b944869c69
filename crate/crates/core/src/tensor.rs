//! Symmetric second-rank and fourth-rank tensors in a fixed Voigt layout.
//!
//! Components are stored raw (no √2 scaling) in the order
//! `(11, 22, 33, 23, 13, 12)`. A fourth-rank tensor with minor symmetries is
//! a general 6×6 array `T[a][b] = A_(a)(b)`; major symmetry is *not* assumed
//! at construction. The shear weights `w = (1, 1, 1, 2, 2, 2)` appear only in
//! the contractions, which makes every index sum come out as the unweighted
//! `Σ_kl A_ijkl ζ_kl`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix6, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shear weights applied when summing over a symmetric index pair.
pub const VOIGT_WEIGHTS: [f64; 6] = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0];

/// Index pairs `(i, j)` (0-based) represented by each Voigt slot.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

/// Voigt slot of the (0-based) index pair `(i, j)`.
pub const fn voigt_slot(i: usize, j: usize) -> usize {
    match (i, j) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (1, 2) | (2, 1) => 3,
        (0, 2) | (2, 0) => 4,
        _ => 5,
    }
}

/// Symmetric 3×3 matrix, packed as `(11, 22, 33, 23, 13, 12)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymMat3(pub [f64; 6]);

impl SymMat3 {
    pub const fn new(components: [f64; 6]) -> Self {
        Self(components)
    }

    pub const fn zero() -> Self {
        Self([0.0; 6])
    }

    pub const fn identity() -> Self {
        Self([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    }

    /// Packs the symmetric part of a full matrix.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Self {
        let mut v = [0.0; 6];
        for (slot, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            v[slot] = 0.5 * (m[i][j] + m[j][i]);
        }
        Self(v)
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = self.0[voigt_slot(i, j)];
            }
        }
        m
    }

    /// Entry `(i, j)`, 0-based.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[voigt_slot(i, j)]
    }

    pub fn components(&self) -> [f64; 6] {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    /// Full scalar product `Σ_ij a_ij b_ij`.
    pub fn ddot(&self, other: &SymMat3) -> f64 {
        (0..6).map(|a| VOIGT_WEIGHTS[a] * self.0[a] * other.0[a]).sum()
    }

    /// Frobenius norm `sqrt(ζ:ζ)`.
    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.map(|c| c * s))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }
}

impl Add for SymMat3 {
    type Output = SymMat3;
    fn add(self, rhs: SymMat3) -> SymMat3 {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o += r;
        }
        SymMat3(out)
    }
}

impl AddAssign for SymMat3 {
    fn add_assign(&mut self, rhs: SymMat3) {
        for (o, r) in self.0.iter_mut().zip(rhs.0) {
            *o += r;
        }
    }
}

impl Sub for SymMat3 {
    type Output = SymMat3;
    fn sub(self, rhs: SymMat3) -> SymMat3 {
        self + rhs.scale(-1.0)
    }
}

impl Neg for SymMat3 {
    type Output = SymMat3;
    fn neg(self) -> SymMat3 {
        self.scale(-1.0)
    }
}

impl Mul<SymMat3> for f64 {
    type Output = SymMat3;
    fn mul(self, rhs: SymMat3) -> SymMat3 {
        rhs.scale(self)
    }
}

/// `J^ij = ½(e_i⊗e_j + e_j⊗e_i)` for 1-based axis indices.
pub fn jij_basis(i: usize, j: usize) -> Result<SymMat3> {
    if !(1..=3).contains(&i) || !(1..=3).contains(&j) {
        return Err(Error::invalid(format!(
            "J^ij basis index ({i},{j}) out of range 1..=3"
        )));
    }
    Ok(jij(i - 1, j - 1))
}

/// 0-based variant of [`jij_basis`] for internal loops.
pub(crate) fn jij(i: usize, j: usize) -> SymMat3 {
    let mut v = [0.0; 6];
    v[voigt_slot(i, j)] = if i == j { 1.0 } else { 0.5 };
    SymMat3(v)
}

/// The six distinct basis matrices `J^ij`, one per Voigt slot.
pub fn voigt_basis() -> [SymMat3; 6] {
    VOIGT_PAIRS.map(|(i, j)| jij(i, j))
}

/// Fourth-rank tensor with minor symmetries, stored as a general 6×6 array.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tensor4(pub [[f64; 6]; 6]);

impl Tensor4 {
    pub const fn zero() -> Self {
        Self([[0.0; 6]; 6])
    }

    pub const fn from_rows(rows: [[f64; 6]; 6]) -> Self {
        Self(rows)
    }

    /// The symmetric identity `𝕁 = Σ_ij J^ij ⊗ J^ij`.
    pub fn sym_identity() -> Self {
        let mut t = Tensor4::zero();
        for i in 0..3 {
            for j in 0..3 {
                let b = jij(i, j);
                t += outer(&b, &b);
            }
        }
        t
    }

    /// `𝕀 ⊗ 𝕀`.
    pub fn identity_outer() -> Self {
        outer(&SymMat3::identity(), &SymMat3::identity())
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.0[a][b]
    }

    pub fn rows(&self) -> [[f64; 6]; 6] {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.map(|row| row.map(|c| c * s)))
    }

    /// Frobenius norm of the stored array.
    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Self {
        let mut t = [[0.0; 6]; 6];
        for (a, row) in self.0.iter().enumerate() {
            for (b, &c) in row.iter().enumerate() {
                t[b][a] = c;
            }
        }
        Self(t)
    }

    /// `(A:ζ):η`.
    pub fn quad_form(&self, zeta: &SymMat3, eta: &SymMat3) -> f64 {
        contract(self, zeta).ddot(eta)
    }

    /// The bilinear form as a 6×6 matrix on raw Voigt vectors:
    /// `(A:ζ):η = ηᵀ M ζ` with `M = W T W`.
    pub fn weighted_form(&self) -> [[f64; 6]; 6] {
        let mut m = [[0.0; 6]; 6];
        for (a, row) in m.iter_mut().enumerate() {
            for (b, entry) in row.iter_mut().enumerate() {
                *entry = VOIGT_WEIGHTS[a] * self.0[a][b] * VOIGT_WEIGHTS[b];
            }
        }
        m
    }

    /// Symmetric part of [`Tensor4::weighted_form`].
    pub fn weighted_form_sym(&self) -> [[f64; 6]; 6] {
        let m = self.weighted_form();
        let mut s = [[0.0; 6]; 6];
        for a in 0..6 {
            for b in 0..6 {
                s[a][b] = 0.5 * (m[a][b] + m[b][a]);
            }
        }
        s
    }

    /// Symmetry and coercivity diagnostics of the quadratic form `(A:ζ):ζ`.
    ///
    /// `min_eig` is the largest `β` with `(A:ζ):ζ ≥ β (ζ:ζ)`, i.e. the smallest
    /// eigenvalue of the symmetrized form in Mandel scaling `W^½ T W^½`.
    pub fn spd_report(&self, tol: f64) -> SpdReport {
        let norm = self.norm();
        let mut defect = 0.0_f64;
        for a in 0..6 {
            for b in 0..6 {
                defect = defect.max((self.0[a][b] - self.0[b][a]).abs());
            }
        }
        let symmetry_defect = if norm > 0.0 { defect / norm } else { 0.0 };
        SpdReport {
            symmetric: defect <= tol * norm,
            symmetry_defect,
            min_eig: self.mandel_min_eig(),
        }
    }

    fn mandel_min_eig(&self) -> f64 {
        let s = VOIGT_WEIGHTS.map(f64::sqrt);
        let m = Matrix6::from_fn(|a, b| {
            0.5 * s[a] * s[b] * (self.0[a][b] + self.0[b][a])
        });
        SymmetricEigen::new(m)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Row-major flattening (36 entries).
    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != 36 {
            return Err(Error::invalid(format!(
                "fourth-rank tensor needs 36 components, got {}",
                v.len()
            )));
        }
        let mut t = [[0.0; 6]; 6];
        for (a, row) in t.iter_mut().enumerate() {
            row.copy_from_slice(&v[6 * a..6 * a + 6]);
        }
        Ok(Self(t))
    }
}

impl Add for Tensor4 {
    type Output = Tensor4;
    fn add(mut self, rhs: Tensor4) -> Tensor4 {
        self += rhs;
        self
    }
}

impl AddAssign for Tensor4 {
    fn add_assign(&mut self, rhs: Tensor4) {
        for (row, rrow) in self.0.iter_mut().zip(rhs.0) {
            for (c, r) in row.iter_mut().zip(rrow) {
                *c += r;
            }
        }
    }
}

impl Sub for Tensor4 {
    type Output = Tensor4;
    fn sub(self, rhs: Tensor4) -> Tensor4 {
        self + rhs.scale(-1.0)
    }
}

impl Mul<Tensor4> for f64 {
    type Output = Tensor4;
    fn mul(self, rhs: Tensor4) -> Tensor4 {
        rhs.scale(self)
    }
}

impl Serialize for Tensor4 {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_flat().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Tensor4 {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(deserializer)?;
        Tensor4::from_flat(&v).map_err(serde::de::Error::custom)
    }
}

/// `A:ζ`, i.e. `(A:ζ)_ij = Σ_kl A_ijkl ζ_kl`.
pub fn contract(a: &Tensor4, zeta: &SymMat3) -> SymMat3 {
    let mut out = [0.0; 6];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..6)
            .map(|b| a.0[i][b] * VOIGT_WEIGHTS[b] * zeta.0[b])
            .sum();
    }
    SymMat3(out)
}

/// `B ⊗ C`, defined by `(B⊗C):A = B (C:A)`.
pub fn outer(b: &SymMat3, c: &SymMat3) -> Tensor4 {
    let mut t = [[0.0; 6]; 6];
    for (a, row) in t.iter_mut().enumerate() {
        for (d, entry) in row.iter_mut().enumerate() {
            *entry = b.0[a] * c.0[d];
        }
    }
    Tensor4(t)
}

/// `A:B`, the tensor with `(A:B):ζ = A:(B:ζ)`.
pub fn compose(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    let mut t = [[0.0; 6]; 6];
    for (r, row) in t.iter_mut().enumerate() {
        for (c, entry) in row.iter_mut().enumerate() {
            *entry = (0..6)
                .map(|k| a.0[r][k] * VOIGT_WEIGHTS[k] * b.0[k][c])
                .sum();
        }
    }
    Tensor4(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdReport {
    pub symmetric: bool,
    /// `max |T[a][b] − T[b][a]| / ‖T‖`.
    pub symmetry_defect: f64,
    pub min_eig: f64,
}

impl SpdReport {
    pub fn is_spd(&self) -> bool {
        self.symmetric && self.min_eig > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_sym(seed: u64) -> SymMat3 {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut v = [0.0; 6];
        for c in v.iter_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *c = ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
        }
        SymMat3(v)
    }

    fn sample_t4(seed: u64) -> Tensor4 {
        let mut t = [[0.0; 6]; 6];
        for (a, row) in t.iter_mut().enumerate() {
            row.copy_from_slice(&sample_sym(seed * 7 + a as u64).0);
        }
        Tensor4(t)
    }

    fn close(a: &SymMat3, b: &SymMat3, tol: f64) -> bool {
        (0..6).all(|k| (a.0[k] - b.0[k]).abs() <= tol * (1.0 + b.0[k].abs()))
    }

    #[test]
    fn jij_definition() {
        assert_eq!(jij_basis(1, 1).unwrap().to_matrix(), [[1.0, 0.0, 0.0], [0.0; 3], [0.0; 3]]);
        let j12 = jij_basis(1, 2).unwrap().to_matrix();
        assert_eq!(j12[0][1], 0.5);
        assert_eq!(j12[1][0], 0.5);
        assert_eq!(j12.iter().flatten().filter(|c| **c != 0.0).count(), 2);
        assert_eq!(jij_basis(2, 3).unwrap(), jij_basis(3, 2).unwrap());
        assert!(jij_basis(0, 1).is_err());
        assert!(jij_basis(1, 4).is_err());
    }

    #[test]
    fn unweighted_index_sum_matches_contract() {
        // Brute-force Σ_kl A_ijkl ζ_kl over all nine (k, l).
        let a = sample_t4(3);
        let z = sample_sym(11);
        let zm = z.to_matrix();
        let got = contract(&a, &z);
        for (slot, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            let mut s = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    s += a.0[voigt_slot(i, j)][voigt_slot(k, l)] * zm[k][l];
                }
            }
            assert!((got.0[slot] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn contract_examples() {
        let z = sample_sym(5);
        assert!(close(&contract(&Tensor4::sym_identity(), &z), &z, 1e-15));
        let ii = contract(&Tensor4::identity_outer(), &z);
        assert!(close(&ii, &SymMat3::identity().scale(z.trace()), 1e-15));
        assert_eq!(contract(&Tensor4::zero(), &z), SymMat3::zero());
    }

    #[test]
    fn outer_examples() {
        let j11 = jij(0, 0);
        assert_eq!(contract(&outer(&j11, &j11), &j11), j11);
        let d = SymMat3::new([1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let i = SymMat3::identity();
        assert_eq!(contract(&outer(&i, &i), &d), i.scale(6.0));
        let j = Tensor4::sym_identity();
        assert_eq!(j.0[0][0], 1.0);
        assert_eq!(j.0[3][3], 0.5);
        let z = sample_sym(9);
        assert!(close(&contract(&j, &z), &z, 1e-15));
    }

    #[test]
    fn outer_contract_identity_on_random_triples() {
        for seed in 0..100 {
            let b = sample_sym(seed);
            let c = sample_sym(seed + 1000);
            let a = sample_sym(seed + 2000);
            let lhs = contract(&outer(&b, &c), &a);
            let rhs = b.scale(c.ddot(&a));
            assert!(close(&lhs, &rhs, 1e-14));
        }
    }

    #[test]
    fn compose_examples() {
        let j = Tensor4::sym_identity();
        let a = sample_t4(1);
        let left = compose(&j, &a);
        let right = compose(&a, &j);
        for r in 0..6 {
            for c in 0..6 {
                assert!((left.0[r][c] - a.0[r][c]).abs() < 1e-15);
                assert!((right.0[r][c] - a.0[r][c]).abs() < 1e-15);
            }
        }
        let z = sample_sym(4);
        let six = compose(&j.scale(2.0), &j.scale(3.0));
        assert!(close(&contract(&six, &z), &z.scale(6.0), 1e-14));
    }

    #[test]
    fn compose_acts_as_sequential_contraction() {
        for seed in 0..20 {
            let a = sample_t4(seed);
            let b = sample_t4(seed + 50);
            let z = sample_sym(seed + 99);
            let lhs = contract(&compose(&a, &b), &z);
            let rhs = contract(&a, &contract(&b, &z));
            assert!(close(&lhs, &rhs, 1e-13));
        }
    }

    #[test]
    fn compose_is_associative() {
        let (a, b, c) = (sample_t4(1), sample_t4(2), sample_t4(3));
        let l = compose(&a, &compose(&b, &c));
        let r = compose(&compose(&a, &b), &c);
        assert!((l - r).norm() <= 1e-13 * l.norm());
    }

    /// Cyclic Jacobi rotations; an independent route to the spectrum.
    fn jacobi_eigenvalues(mut m: [[f64; 6]; 6]) -> [f64; 6] {
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..6 {
                for q in p + 1..6 {
                    off += m[p][q] * m[p][q];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..6 {
                for q in p + 1..6 {
                    if m[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..6 {
                        let (mkp, mkq) = (m[k][p], m[k][q]);
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..6 {
                        let (mpk, mqk) = (m[p][k], m[q][k]);
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        std::array::from_fn(|k| m[k][k])
    }

    #[test]
    fn spd_report_matches_brute_force_spectrum() {
        // Random SPD form: T = W^-½ (G Gᵀ + 0.1 I) W^-½ in Mandel scaling.
        let g = sample_t4(17);
        let s = VOIGT_WEIGHTS.map(f64::sqrt);
        let mut mandel = [[0.0; 6]; 6];
        for a in 0..6 {
            for b in 0..6 {
                mandel[a][b] = (0..6).map(|k| g.0[a][k] * g.0[b][k]).sum::<f64>()
                    + if a == b { 0.1 } else { 0.0 };
            }
        }
        let t = Tensor4(std::array::from_fn(|a| std::array::from_fn(|b| mandel[a][b] / (s[a] * s[b]))));
        let brute = jacobi_eigenvalues(mandel).into_iter().fold(f64::INFINITY, f64::min);
        let rep = t.spd_report(1e-12);
        assert!(rep.symmetric);
        assert!((rep.min_eig - brute).abs() < 1e-10, "{} vs {}", rep.min_eig, brute);
    }

    #[test]
    fn spd_report_examples() {
        let j = Tensor4::sym_identity();
        let rep = j.spd_report(1e-12);
        assert!(rep.symmetric);
        let brute = jacobi_eigenvalues(std::array::from_fn(|a| {
            std::array::from_fn(|b| VOIGT_WEIGHTS[a].sqrt() * j.0[a][b] * VOIGT_WEIGHTS[b].sqrt())
        }));
        assert!((rep.min_eig - 1.0).abs() < 1e-14);
        assert!(brute.iter().all(|e| (e - 1.0).abs() < 1e-14));

        let ii = Tensor4::identity_outer().spd_report(1e-12);
        assert!(ii.symmetric);
        assert!(ii.min_eig.abs() < 1e-14);

        let mut p = Tensor4::sym_identity();
        p.0[0][1] += 1.0;
        assert!(!p.spd_report(1e-7).symmetric);
    }

    #[test]
    fn coercivity_bound_holds_for_random_arguments() {
        let a = compose(&sample_t4(2).transpose(), &sample_t4(2)) + Tensor4::sym_identity().scale(0.3);
        let rep = a.spd_report(1e-10);
        assert!(rep.is_spd());
        for seed in 0..50 {
            let z = sample_sym(seed + 300);
            assert!(a.quad_form(&z, &z) >= rep.min_eig * z.ddot(&z) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn serde_layout() {
        let j = Tensor4::sym_identity();
        let json = serde_json::to_string(&j).unwrap();
        let v: Vec<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(v.len(), 36);
        assert_eq!(v[21], 0.5);
        assert_eq!(serde_json::from_str::<Tensor4>(&json).unwrap(), j);
        let z = SymMat3::new([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(serde_json::to_string(&z).unwrap(), "[1.0,2.0,3.0,4.0,5.0,6.0]");
        assert!(serde_json::from_str::<Tensor4>("[1.0, 2.0]").is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn sym() -> impl Strategy<Value = SymMat3> {
            proptest::array::uniform6(-10.0f64..10.0).prop_map(SymMat3)
        }

        proptest! {
            #[test]
            fn pack_unpack_round_trip(v in sym()) {
                prop_assert_eq!(SymMat3::from_matrix(v.to_matrix()), v);
                prop_assert_eq!(v.trace(), v.0[0] + v.0[1] + v.0[2]);
            }

            #[test]
            fn symmetric_form_is_symmetric(z in sym(), e in sym(), g in proptest::array::uniform6(sym())) {
                // T = G Gᵀ-like construction with major symmetry.
                let t = Tensor4(std::array::from_fn(|a| std::array::from_fn(|b| g[a].ddot(&g[b]))));
                prop_assume!(t.spd_report(1e-12).symmetric);
                let lhs = t.quad_form(&z, &e);
                let rhs = t.quad_form(&e, &z);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
            }
        }
    }
}
