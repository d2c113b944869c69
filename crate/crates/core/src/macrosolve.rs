//! Homogenized macroscopic problems on the unit cube with `u = 0` on the
//! boundary.
//!
//! Displacements are trilinear on a uniform `N³` grid, pressures are
//! element constants. Case I is the stationary incompressible anisotropic
//! elasticity system; Case II couples it with Darcy filtration through the
//! cracks and is stepped with implicit Euler. The rigid problem drops the
//! skeleton entirely.
//!
//! The Darcy operator is the symmetric form
//!
//! ```text
//! a(q, ψ) = Σ_faces B_dd h Δq Δψ + Σ_vertices h³ g(q)ᵀ (B − diag B) g(ψ)
//! ```
//!
//! with two-point differences across faces and, at interior grid vertices,
//! the gradient `g` of the trilinear interpolant of the eight surrounding
//! element values. It is positive semidefinite for SPD `B`, and the
//! matching force functional makes it exact for quadratic potentials. The
//! flux condition on the boundary is natural (zero normal Darcy flux).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{gauss_points, shape_gradients, DivergenceOperator, ElementKernel, HexMesh, JumpStabilization, StiffnessOperator, CORNERS, NONE};
use crate::linsolve::{
    cg_with, dot, norm, saddle_solve, CgOptions, ConstraintOperator, LinearOperator, Nullspace, SaddleOptions, SolveReport,
};
use crate::tensor::{Tensor4, VOIGT_WEIGHTS};
use crate::upscale::{EffectiveCoefficients, Mu1, Regime};

/// The subset of the effective coefficients the macroscopic solvers use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroCoefficients {
    pub m_p: f64,
    pub m_c: f64,
    pub m: f64,
    pub rho_f: f64,
    pub rho_hat: f64,
    pub mu1: Mu1,
    pub lambda0: f64,
    pub regime: Regime,
    pub b_c: [[f64; 3]; 3],
    pub a_s: Tensor4,
}

impl From<&EffectiveCoefficients> for MacroCoefficients {
    fn from(c: &EffectiveCoefficients) -> Self {
        Self {
            m_p: c.m_p,
            m_c: c.m_c,
            m: c.m,
            rho_f: c.rho_f,
            rho_hat: c.rho_hat,
            mu1: c.mu1,
            lambda0: c.lambda0,
            regime: c.regime,
            b_c: c.b_c,
            a_s: c.a_s,
        }
    }
}

impl MacroCoefficients {
    pub fn with_lambda0(&self, lambda0: f64) -> Self {
        Self { lambda0, ..self.clone() }
    }

    fn mu1_finite(&self, what: &str) -> Result<f64> {
        match self.mu1 {
            Mu1::Finite(v) => Ok(v),
            Mu1::Infinite => Err(Error::invalid(format!("{what} needs a finite mu1"))),
        }
    }

    fn validate(&self) -> Result<()> {
        self.mu1.validate()?;
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::invalid(format!("lambda0 must be positive and finite, got {}", self.lambda0)));
        }
        if !(self.m > 0.0 && self.m <= 1.0) {
            return Err(Error::invalid(format!("fluid fraction m must lie in (0, 1], got {}", self.m)));
        }
        Ok(())
    }

    fn check_a_s(&self) -> Result<()> {
        let rep = self.a_s.spd_report(crate::elasticell::SYMMETRY_TOL);
        if !rep.is_spd() {
            return Err(Error::invalid(format!(
                "A_s is not symmetric positive definite (symmetry defect {:.3e}, min eigenvalue {:.3e})",
                rep.symmetry_defect, rep.min_eig
            )));
        }
        Ok(())
    }

    fn check_b_c(&self) -> Result<()> {
        let m = nalgebra::Matrix3::from_fn(|i, j| self.b_c[i][j]);
        let nrm = m.norm();
        let min_eig = nalgebra::SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min();
        let defect = (m - m.transpose()).abs().max();
        if !(nrm > 0.0 && min_eig > 1e-12 * nrm && defect <= 1e-6 * nrm) {
            return Err(Error::invalid(format!(
                "rigid limit undefined: zero permeability (B_c min eigenvalue {min_eig:.3e}, norm {nrm:.3e})"
            )));
        }
        Ok(())
    }

    /// Mean diagonal of the Mandel form of `A_s`.
    fn mean_stiffness(&self) -> f64 {
        (0..6).map(|a| self.a_s.0[a][a] * VOIGT_WEIGHTS[a]).sum::<f64>() / 6.0
    }
}

/// Spatial shape of the body force; multiplied by the ramp `g(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ForceSpec {
    Constant { vector: [f64; 3] },
    /// `(−x₂, x₁, 0)`
    Rotational,
    /// `F = ∇Φ` with `Φ = c·x + ½ Σ d_i x_i²`.
    Potential { linear: [f64; 3], quadratic: [f64; 3] },
    /// Source reproducing the manufactured Case I solution, see [`mms`].
    Manufactured,
}

impl Default for ForceSpec {
    fn default() -> Self {
        ForceSpec::Rotational
    }
}

impl ForceSpec {
    pub fn eval(&self, x: [f64; 3], c: &MacroCoefficients) -> [f64; 3] {
        match self {
            ForceSpec::Constant { vector } => *vector,
            ForceSpec::Rotational => [-x[1], x[0], 0.0],
            ForceSpec::Potential { linear, quadratic } => std::array::from_fn(|i| linear[i] + quadratic[i] * x[i]),
            ForceSpec::Manufactured => mms::body_force(x, c),
        }
    }

    /// `Φ` for potential forces.
    pub fn potential(&self, x: [f64; 3]) -> Option<f64> {
        match self {
            ForceSpec::Potential { linear, quadratic } => {
                Some((0..3).map(|i| linear[i] * x[i] + 0.5 * quadratic[i] * x[i] * x[i]).sum())
            }
            ForceSpec::Constant { vector } => Some((0..3).map(|i| vector[i] * x[i]).sum()),
            _ => None,
        }
    }
}

/// Time profile `g(t)` of the load.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Ramp {
    /// `g ≡ 1`.
    #[default]
    None,
    /// `g(t) = min(t / duration, 1)`, so `g(0) = 0`.
    Linear { duration: f64 },
}

impl Ramp {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Ramp::None => 1.0,
            Ramp::Linear { duration } => (t / duration).clamp(0.0, 1.0),
        }
    }
}

fn default_n() -> usize {
    16
}
fn default_dt() -> f64 {
    0.1
}
fn default_t_end() -> f64 {
    0.5
}
fn default_tol() -> f64 {
    1e-8
}
fn default_stabilization() -> f64 {
    0.25
}
fn default_max_iter() -> usize {
    5_000
}

/// Grid, time and solver settings of a macroscopic run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroSettings {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub force: ForceSpec,
    #[serde(default)]
    pub ramp: Ramp,
    /// Relative residual target of every step solve.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Pressure-jump coefficient `α`; the face weight is `α h³ / (λ₀ ā m²)`.
    #[serde(default = "default_stabilization")]
    pub stabilization: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for MacroSettings {
    fn default() -> Self {
        Self {
            n: default_n(),
            dt: default_dt(),
            t_end: default_t_end(),
            force: ForceSpec::default(),
            ramp: Ramp::default(),
            tol: default_tol(),
            stabilization: default_stabilization(),
            max_iter: default_max_iter(),
        }
    }
}

impl MacroSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::invalid(format!("macro grid needs n >= 4, got {}", self.n)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(Error::invalid(format!("t_end must be finite and at least dt, got {}", self.t_end)));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::invalid(format!("macro tolerance must lie in (0, 1), got {}", self.tol)));
        }
        if !(self.stabilization >= 0.0 && self.stabilization.is_finite()) {
            return Err(Error::invalid("macro stabilization must be finite and non-negative"));
        }
        if let Ramp::Linear { duration } = self.ramp {
            if !(duration > 0.0 && duration.is_finite()) {
                return Err(Error::invalid(format!("ramp duration must be positive, got {duration}")));
            }
        }
        if let ForceSpec::Constant { vector } | ForceSpec::Potential { linear: vector, .. } = &self.force {
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("force components must be finite"));
            }
        }
        if let ForceSpec::Potential { quadratic, .. } = &self.force {
            if quadratic.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("force components must be finite"));
            }
        }
        Ok(())
    }

    /// Number of implicit steps to reach `t_end`.
    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroConfig {
    pub settings: MacroSettings,
    pub coefficients: MacroCoefficients,
}

impl MacroConfig {
    fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        self.coefficients.validate()
    }

    fn force(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        let g = self.settings.ramp.value(t);
        self.settings.force.eval(x, &self.coefficients).map(|f| g * f)
    }
}

/// Manufactured Case I solution `u* = (∂₂φ, −∂₁φ, 0)` with
/// `φ = sin²(πx)sin²(πy)sin²(πz)`, and `q* = cos(πx)cos(πy)cos(πz)`.
pub mod mms {
    use std::f64::consts::PI;

    use super::MacroCoefficients;
    use crate::tensor::{contract, SymMat3};

    /// `k`-th derivative of `sin²(πt)`.
    fn s(k: usize, t: f64) -> f64 {
        let a = 2.0 * PI * t;
        match k {
            0 => (PI * t).sin().powi(2),
            1 => PI * a.sin(),
            2 => 2.0 * PI * PI * a.cos(),
            3 => -4.0 * PI.powi(3) * a.sin(),
            _ => unreachable!("derivative order"),
        }
    }

    /// Components as sums of `coef · s^(o₀)(x) s^(o₁)(y) s^(o₂)(z)`.
    const TERMS: [&[(f64, [usize; 3])]; 3] = [&[(1.0, [0, 1, 0])], &[(-1.0, [1, 0, 0])], &[]];

    fn eval(comp: usize, d: &[usize], x: [f64; 3]) -> f64 {
        TERMS[comp]
            .iter()
            .map(|(c, o)| {
                let mut o = *o;
                for &dd in d {
                    o[dd] += 1;
                }
                c * s(o[0], x[0]) * s(o[1], x[1]) * s(o[2], x[2])
            })
            .sum()
    }

    pub fn displacement(x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|c| eval(c, &[], x))
    }

    /// `∂_d u*_c` as `[c][d]`.
    pub fn gradient(x: [f64; 3]) -> [[f64; 3]; 3] {
        std::array::from_fn(|c| std::array::from_fn(|d| eval(c, &[d], x)))
    }

    pub fn pressure(x: [f64; 3]) -> f64 {
        (PI * x[0]).cos() * (PI * x[1]).cos() * (PI * x[2]).cos()
    }

    pub fn pressure_gradient(x: [f64; 3]) -> [f64; 3] {
        let (c, sn) = (x.map(|t| (PI * t).cos()), x.map(|t| (PI * t).sin()));
        [-PI * sn[0] * c[1] * c[2], -PI * c[0] * sn[1] * c[2], -PI * c[0] * c[1] * sn[2]]
    }

    /// `∇·(A_s : 𝔻(u*))`.
    pub fn stress_divergence(x: [f64; 3], c: &MacroCoefficients) -> [f64; 3] {
        let hess = |k: usize, a: usize, b: usize| eval(k, &[a, b], x);
        let mut out = [0.0; 3];
        for j in 0..3 {
            // ∂_j 𝔻(u*)
            let dj = SymMat3::from_matrix(std::array::from_fn(|k| {
                std::array::from_fn(|l| 0.5 * (hess(k, j, l) + hess(l, j, k)))
            }));
            let sj = contract(&c.a_s, &dj).to_matrix();
            for (i, o) in out.iter_mut().enumerate() {
                *o += sj[i][j];
            }
        }
        out
    }

    /// `F* = (λ₀ ∇·(A_s:𝔻(u*)) − ∇q*/m) / ρ̂`.
    pub fn body_force(x: [f64; 3], c: &MacroCoefficients) -> [f64; 3] {
        let ds = stress_divergence(x, c);
        let gq = pressure_gradient(x);
        std::array::from_fn(|i| (c.lambda0 * ds[i] - gq[i] / c.m) / c.rho_hat)
    }
}

/// 3-point Gauss rule on `[0, 1]`.
fn gauss3() -> [(f64, f64); 3] {
    let g = 0.5 * 0.6f64.sqrt();
    [(0.5 - g, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + g, 5.0 / 18.0)]
}

fn shape_values(xi: [f64; 3]) -> [f64; 8] {
    CORNERS.map(|c| (0..3).map(|d| if c[d] == 1 { xi[d] } else { 1.0 - xi[d] }).product())
}

/// The uniform grid of the unit cube shared by all macroscopic solvers.
#[derive(Clone, Debug)]
pub struct MacroGrid {
    pub n: usize,
    pub h: f64,
    pub mesh: HexMesh,
}

impl MacroGrid {
    pub fn new(n: usize) -> Self {
        let mesh = HexMesh::dirichlet_cube(n);
        Self { n, h: mesh.h, mesh }
    }

    pub fn elements(&self) -> usize {
        self.n * self.n * self.n
    }

    fn element_ijk(&self, e: usize) -> [usize; 3] {
        let n = self.n;
        [e % n, (e / n) % n, e / (n * n)]
    }

    fn element_index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.n * (ijk[1] + self.n * ijk[2])
    }

    pub fn element_origin(&self, e: usize) -> [f64; 3] {
        self.element_ijk(e).map(|i| i as f64 * self.h)
    }

    pub fn element_center(&self, e: usize) -> [f64; 3] {
        self.element_ijk(e).map(|i| (i as f64 + 0.5) * self.h)
    }

    /// Displacements at all `(n+1)³` grid points, boundary included.
    pub fn point_displacements(&self, u: &[f64]) -> Vec<[f64; 3]> {
        let np = self.n + 1;
        let mut out = vec![[0.0; 3]; np * np * np];
        for (v, &p) in self.mesh.node_points.iter().enumerate() {
            out[p as usize] = [u[3 * v], u[3 * v + 1], u[3 * v + 2]];
        }
        out
    }

    /// `−scale ∫ F · N_a` for every free node, with 27-point quadrature.
    fn body_load(&self, scale: f64, force: impl Fn([f64; 3]) -> [f64; 3] + Sync) -> Vec<f64> {
        let g = gauss3();
        let h = self.h;
        let w = h * h * h;
        let local: Vec<[[f64; 3]; 8]> = (0..self.elements())
            .into_par_iter()
            .map(|e| {
                let o = self.element_origin(e);
                let mut acc = [[0.0; 3]; 8];
                for &(x, wx) in &g {
                    for &(y, wy) in &g {
                        for &(z, wz) in &g {
                            let f = force([o[0] + h * x, o[1] + h * y, o[2] + h * z]);
                            let nv = shape_values([x, y, z]);
                            let wt = w * wx * wy * wz;
                            for a in 0..8 {
                                for c in 0..3 {
                                    acc[a][c] += wt * nv[a] * f[c];
                                }
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; self.mesh.dofs()];
        out.par_chunks_mut(3).enumerate().for_each(|(v, ov)| {
            for (a, &e) in self.mesh.node_elems[v].iter().enumerate() {
                if e != NONE {
                    for c in 0..3 {
                        ov[c] -= scale * local[e as usize][a][c];
                    }
                }
            }
        });
        out
    }

    /// `‖u‖_{L²}` and `‖∇u‖_{L²}` (exact 2-point quadrature for trilinear fields).
    pub fn displacement_norms(&self, u: &[f64]) -> (f64, f64) {
        let gp = gauss_points();
        let grads: Vec<[[f64; 3]; 8]> = gp.iter().map(|xi| shape_gradients(*xi, self.h)).collect();
        let vals: Vec<[f64; 8]> = gp.iter().map(|xi| shape_values(*xi)).collect();
        let wq = self.h.powi(3) / 8.0;
        let parts: Vec<(f64, f64)> = (0..self.elements())
            .into_par_iter()
            .map(|e| {
                let ue = self.mesh.gather(e, u);
                let (mut su, mut sg) = (0.0, 0.0);
                for (g, nv) in grads.iter().zip(&vals) {
                    for c in 0..3 {
                        let val: f64 = (0..8).map(|a| nv[a] * ue[a][c]).sum();
                        su += val * val;
                        for d in 0..3 {
                            let gd: f64 = (0..8).map(|a| g[a][d] * ue[a][c]).sum();
                            sg += gd * gd;
                        }
                    }
                }
                (su * wq, sg * wq)
            })
            .collect();
        let (su, sg) = parts.into_iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
        (su.sqrt(), sg.sqrt())
    }

    pub fn element_l2(&self, q: &[f64]) -> f64 {
        (self.h.powi(3) * dot(q, q)).sqrt()
    }

    pub fn vector_l2(&self, v: &[[f64; 3]]) -> f64 {
        (self.h.powi(3) * v.iter().map(|x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sum::<f64>()).sqrt()
    }

    /// Element-center averages of a nodal field.
    pub fn center_values(&self, u: &[f64]) -> Vec<[f64; 3]> {
        (0..self.elements())
            .into_par_iter()
            .map(|e| {
                let ue = self.mesh.gather(e, u);
                std::array::from_fn(|c| ue.iter().map(|x| x[c]).sum::<f64>() / 8.0)
            })
            .collect()
    }

    /// Second-order element-center gradient of an element field
    /// (central differences inside, one-sided three-point at the walls).
    pub fn cell_gradient(&self, q: &[f64]) -> Vec<[f64; 3]> {
        let n = self.n;
        let h2 = 2.0 * self.h;
        (0..self.elements())
            .into_par_iter()
            .map(|e| {
                let ijk = self.element_ijk(e);
                std::array::from_fn(|d| {
                    let at = |i: usize| {
                        let mut p = ijk;
                        p[d] = i;
                        q[self.element_index(p)]
                    };
                    let i = ijk[d];
                    if i == 0 {
                        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / h2
                    } else if i == n - 1 {
                        (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / h2
                    } else {
                        (at(i + 1) - at(i - 1)) / h2
                    }
                })
            })
            .collect()
    }

    fn zero_mean(&self, q: &mut [f64]) {
        let mean = q.iter().sum::<f64>() / q.len() as f64;
        q.iter_mut().for_each(|v| *v -= mean);
    }
}

/// The Darcy form `scale · a(q, ψ)` on element pressures (see module docs).
pub struct DarcyOperator<'a> {
    grid: &'a MacroGrid,
    b: [[f64; 3]; 3],
    scale: f64,
}

impl<'a> DarcyOperator<'a> {
    /// Uses the symmetric part of `b`.
    pub fn new(grid: &'a MacroGrid, b: [[f64; 3]; 3], scale: f64) -> Self {
        let b = std::array::from_fn(|i| std::array::from_fn(|j| 0.5 * (b[i][j] + b[j][i])));
        Self { grid, b, scale }
    }

    fn interior_vertices(&self) -> usize {
        (self.grid.n - 1).pow(3)
    }

    fn vertex_ijk(&self, v: usize) -> [usize; 3] {
        let m = self.grid.n - 1;
        [v % m + 1, (v / m) % m + 1, v / (m * m) + 1]
    }

    /// Element of corner offset `c` around interior vertex `ijk`, and the
    /// sign of that element in each gradient component.
    fn around(&self, ijk: [usize; 3], c: [usize; 3]) -> (usize, [f64; 3]) {
        let e = self.grid.element_index(std::array::from_fn(|d| ijk[d] - 1 + c[d]));
        (e, c.map(|b| if b == 1 { 1.0 } else { -1.0 }))
    }

    fn vertex_gradient(&self, ijk: [usize; 3], q: &[f64]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for c in CORNERS {
            let (e, s) = self.around(ijk, c);
            for d in 0..3 {
                g[d] += s[d] * q[e];
            }
        }
        g.map(|x| x / (4.0 * self.grid.h))
    }

    fn off_diagonal(&self, g: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|d| (0..3).filter(|&k| k != d).map(|k| self.b[d][k] * g[k]).sum())
    }

    /// Per-element accumulation of vertex contributions `w_v · ∂g_v/∂ψ_e`.
    fn scatter_vertices(&self, w: &[[f64; 3]], y: &mut [f64]) {
        let grid = self.grid;
        let n = grid.n;
        let inv = 1.0 / (4.0 * grid.h);
        y.par_iter_mut().enumerate().for_each(|(e, ye)| {
            let ijk = grid.element_ijk(e);
            let mut s = 0.0;
            for c in CORNERS {
                let v = std::array::from_fn::<usize, 3, _>(|d| ijk[d] + c[d]);
                if v.iter().any(|&i| i == 0 || i == n) {
                    continue;
                }
                let vi = (v[0] - 1) + (n - 1) * ((v[1] - 1) + (n - 1) * (v[2] - 1));
                // The element sits on the + side of the vertex when c = 0.
                for d in 0..3 {
                    let sign = if c[d] == 0 { 1.0 } else { -1.0 };
                    s += w[vi][d] * sign * inv;
                }
            }
            *ye += s;
        });
    }

    /// `f_B(ψ_e) = Σ_faces B_dd h² F_d Δψ + Σ_v h³ ((B − diag B) F(x_v)) · g(ψ)`,
    /// the force functional matching [`DarcyOperator`] (without `scale`).
    pub fn force_functional(&self, force: impl Fn([f64; 3]) -> [f64; 3] + Sync) -> Vec<f64> {
        let grid = self.grid;
        let (n, h) = (grid.n, grid.h);
        let mut y: Vec<f64> = (0..grid.elements())
            .into_par_iter()
            .map(|e| {
                let ijk = grid.element_ijk(e);
                let x = grid.element_center(e);
                let mut s = 0.0;
                for d in 0..3 {
                    if ijk[d] + 1 < n {
                        let mut xf = x;
                        xf[d] += 0.5 * h;
                        s -= self.b[d][d] * h * h * force(xf)[d];
                    }
                    if ijk[d] > 0 {
                        let mut xf = x;
                        xf[d] -= 0.5 * h;
                        s += self.b[d][d] * h * h * force(xf)[d];
                    }
                }
                s
            })
            .collect();
        let w: Vec<[f64; 3]> = (0..self.interior_vertices())
            .into_par_iter()
            .map(|v| {
                let ijk = self.vertex_ijk(v);
                let f = force(ijk.map(|i| i as f64 * h));
                self.off_diagonal(f).map(|x| x * h.powi(3))
            })
            .collect();
        self.scatter_vertices(&w, &mut y);
        y
    }

    /// Per-element flux divergence of `(1/μ₁) B (ρ_f F − ∇q/m)` in the
    /// weak sense of the form: `(ρ_f f_B − a(q, ·)/m) / μ₁`.
    fn darcy_divergence(&self, q: &[f64], fb: &[f64], c: &MacroCoefficients, mu1: f64) -> Vec<f64> {
        let unit = DarcyOperator::new(self.grid, self.b, 1.0);
        let mut aq = vec![0.0; q.len()];
        unit.apply(q, &mut aq);
        aq.iter().zip(fb).map(|(a, f)| (c.rho_f * f - a / c.m) / mu1).collect()
    }
}

impl LinearOperator for DarcyOperator<'_> {
    fn dim(&self) -> usize {
        self.grid.elements()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let grid = self.grid;
        let (n, h) = (grid.n, grid.h);
        y.par_iter_mut().enumerate().for_each(|(e, ye)| {
            let ijk = grid.element_ijk(e);
            let mut s = 0.0;
            for d in 0..3 {
                for (ok, step) in [(ijk[d] + 1 < n, 1isize), (ijk[d] > 0, -1)] {
                    if ok {
                        let mut p = ijk;
                        p[d] = (p[d] as isize + step) as usize;
                        s += self.b[d][d] * h * (x[e] - x[grid.element_index(p)]);
                    }
                }
            }
            *ye = s;
        });
        let w: Vec<[f64; 3]> = (0..self.interior_vertices())
            .into_par_iter()
            .map(|v| {
                let g = self.vertex_gradient(self.vertex_ijk(v), x);
                self.off_diagonal(g).map(|t| t * h.powi(3))
            })
            .collect();
        self.scatter_vertices(&w, y);
        if self.scale != 1.0 {
            y.par_iter_mut().for_each(|v| *v *= self.scale);
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let grid = self.grid;
        let (n, h) = (grid.n, grid.h);
        let d = (0..grid.elements())
            .map(|e| {
                let ijk = grid.element_ijk(e);
                let mut s = 0.0;
                for d in 0..3 {
                    let faces = (ijk[d] + 1 < n) as usize + (ijk[d] > 0) as usize;
                    s += self.b[d][d] * h * faces as f64;
                }
                for c in CORNERS {
                    let v: [usize; 3] = std::array::from_fn(|d| ijk[d] + c[d]);
                    if v.iter().any(|&i| i == 0 || i == n) {
                        continue;
                    }
                    let sg = c.map(|b| if b == 0 { 1.0 } else { -1.0 });
                    for a in 0..3 {
                        for k in 0..3 {
                            if a != k {
                                s += h / 16.0 * self.b[a][k] * sg[a] * sg[k];
                            }
                        }
                    }
                }
                self.scale * s
            })
            .collect();
        Some(d)
    }
}

/// Sum of symmetric operators of equal dimension.
struct SumOperator<'a>(Vec<&'a dyn LinearOperator>);

impl LinearOperator for SumOperator<'_> {
    fn dim(&self) -> usize {
        self.0[0].dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut tmp = vec![0.0; y.len()];
        self.0[0].apply(x, y);
        for op in &self.0[1..] {
            op.apply(x, &mut tmp);
            y.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let mut d = self.0[0].diagonal()?;
        for op in &self.0[1..] {
            for (a, b) in d.iter_mut().zip(op.diagonal()?) {
                *a += b;
            }
        }
        Some(d)
    }
}

/// Norms of one emitted state, the columns of the time-series CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub t: f64,
    pub u_l2: f64,
    pub grad_u_l2: f64,
    pub q_l2: f64,
    pub v_c_l2: f64,
    pub continuity_residual: f64,
}

impl StepSummary {
    pub const CSV_HEADER: &'static str = "t,u_l2,grad_u_l2,q_l2,v_c_l2,continuity_residual";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.t, self.u_l2, self.grad_u_l2, self.q_l2, self.v_c_l2, self.continuity_residual
        )
    }
}

/// Macroscopic fields at one time level. Velocities are element-center values.
#[derive(Clone, Debug)]
pub struct MacroState {
    pub step: usize,
    pub t: f64,
    /// Free nodal displacements (boundary nodes are identically zero).
    pub u: Vec<f64>,
    /// Element pressures with zero mean.
    pub q: Vec<f64>,
    pub v_s: Vec<[f64; 3]>,
    pub v_c: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    /// Largest per-element continuity residual relative to the size of
    /// the balanced terms.
    pub continuity_residual: f64,
    /// `|∫ ∇·v|` in the same units.
    pub net_divergence: f64,
    pub report: SolveReport,
    pub summary: StepSummary,
}

impl MacroState {
    fn zero(grid: &MacroGrid) -> Self {
        let ne = grid.elements();
        Self {
            step: 0,
            t: 0.0,
            u: vec![0.0; grid.mesh.dofs()],
            q: vec![0.0; ne],
            v_s: vec![[0.0; 3]; ne],
            v_c: vec![[0.0; 3]; ne],
            v: vec![[0.0; 3]; ne],
            continuity_residual: 0.0,
            net_divergence: 0.0,
            report: SolveReport { converged: true, ..Default::default() },
            summary: StepSummary { t: 0.0, u_l2: 0.0, grad_u_l2: 0.0, q_l2: 0.0, v_c_l2: 0.0, continuity_residual: 0.0 },
        }
    }

    fn summarize(&mut self, grid: &MacroGrid) {
        let (u_l2, grad_u_l2) = grid.displacement_norms(&self.u);
        self.summary = StepSummary {
            t: self.t,
            u_l2,
            grad_u_l2,
            q_l2: grid.element_l2(&self.q),
            v_c_l2: grid.vector_l2(&self.v_c),
            continuity_residual: self.continuity_residual,
        };
    }
}

/// Discrete energy balance of a Case II run:
/// `stored + dissipated ≤ work` up to solver tolerance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// `½ λ₀ a_s(u^N, u^N) + ½ s(q^N, q^N)`
    pub stored: f64,
    /// `Σ_n Δt/(m² μ₁) a(q^n, q^n)`
    pub dissipated: f64,
    /// `Σ_n [f^n · (u^n − u^{n−1}) + Δt ρ_f/(m μ₁) q^n · f_B^n]`
    pub work: f64,
}

/// Result of a time-dependent macroscopic run.
#[derive(Clone, Debug)]
pub struct MacroRun {
    pub regime: Regime,
    pub states: Vec<MacroState>,
    pub energy: Option<EnergyReport>,
}

impl MacroRun {
    pub fn summaries(&self) -> Vec<StepSummary> {
        self.states.iter().map(|s| s.summary).collect()
    }

    pub fn max_continuity_residual(&self) -> f64 {
        self.states.iter().map(|s| s.continuity_residual).fold(0.0, f64::max)
    }
}

/// Operators of the mixed displacement/pressure system.
struct MixedSystem<'a> {
    cfg: &'a MacroConfig,
    grid: MacroGrid,
    kernel: ElementKernel,
    jump: JumpStabilization,
}

impl<'a> MixedSystem<'a> {
    fn new(cfg: &'a MacroConfig) -> Self {
        let c = &cfg.coefficients;
        let grid = MacroGrid::new(cfg.settings.n);
        let kernel = ElementKernel::new(&c.a_s.scale(c.lambda0), grid.h);
        let beta = cfg.settings.stabilization * grid.h.powi(3) / (c.lambda0 * c.mean_stiffness() * c.m * c.m);
        let jump = JumpStabilization::for_mesh(&grid.mesh, false, beta);
        Self { cfg, grid, kernel, jump }
    }

    fn stiffness(&self) -> StiffnessOperator<'_> {
        StiffnessOperator { mesh: &self.grid.mesh, kernel: &self.kernel }
    }

    fn divergence(&self) -> DivergenceOperator<'_> {
        DivergenceOperator { mesh: &self.grid.mesh, kernel: &self.kernel, coef: -1.0 / self.cfg.coefficients.m }
    }

    fn load(&self, t: f64) -> Vec<f64> {
        self.grid.body_load(self.cfg.coefficients.rho_hat, |x| self.cfg.force(x, t))
    }

    fn options<'o>(&self, ns: &'o Nullspace, x0: Option<&'o [f64]>, p0: Option<&'o [f64]>) -> SaddleOptions<'o> {
        SaddleOptions {
            tol: self.cfg.settings.tol,
            max_outer: self.cfg.settings.max_iter,
            pressure_nullspace: ns,
            constraint_name: "mixture continuity",
            x0,
            p0,
            ..Default::default()
        }
    }
}

fn check_regime(c: &MacroCoefficients, want: Regime) -> Result<()> {
    if c.regime != want {
        return Err(Error::invalid(format!("{want} solver called with {} coefficients", c.regime)));
    }
    Ok(())
}

/// Stationary Case I solve with the load at time `t`.
pub fn solve_case1(cfg: &MacroConfig, t: f64) -> Result<MacroState> {
    cfg.validate()?;
    check_regime(&cfg.coefficients, Regime::CaseI)?;
    cfg.coefficients.check_a_s()?;
    let sys = MixedSystem::new(cfg);
    solve_case1_with(&sys, t)
}

fn solve_case1_with(sys: &MixedSystem, t: f64) -> Result<MacroState> {
    let grid = &sys.grid;
    let f = sys.load(t);
    let g = vec![0.0; grid.elements()];
    let ns = Nullspace::constants(grid.elements());
    let stage = format!("case I solve (t = {t})");
    let sol = saddle_solve(&sys.stiffness(), &sys.divergence(), Some(&sys.jump), &f, &g, &sys.options(&ns, None, None))
        .map_err(|e| e.in_stage(&stage))?;
    sol.report.require(&stage)?;
    let mut state = MacroState::zero(grid);
    state.t = t;
    state.u = sol.x;
    state.q = sol.p;
    grid.zero_mean(&mut state.q);
    state.report = sol.report;
    let (res, net) = constraint_residual(sys, &state.u, &state.q, None, &g);
    state.continuity_residual = res;
    state.net_divergence = net;
    state.summarize(grid);
    Ok(state)
}

/// `max_e |r_e|` and `|Σ_e r_e|` of `r = B u − C q − g`, relative to the
/// largest of the balanced terms.
fn constraint_residual(sys: &MixedSystem, u: &[f64], q: &[f64], darcy: Option<&DarcyOperator>, g: &[f64]) -> (f64, f64) {
    let ne = sys.grid.elements();
    let mut bu = vec![0.0; ne];
    sys.divergence().apply(u, &mut bu);
    let mut cq = vec![0.0; ne];
    sys.jump.apply(q, &mut cq);
    if let Some(d) = darcy {
        let mut dq = vec![0.0; ne];
        d.apply(q, &mut dq);
        cq.iter_mut().zip(&dq).for_each(|(a, b)| *a += b);
    }
    let r: Vec<f64> = (0..ne).map(|e| bu[e] - cq[e] - g[e]).collect();
    let scale = norm(&bu).max(norm(&cq)).max(norm(g));
    if scale == 0.0 {
        return (0.0, 0.0);
    }
    let max = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (max / scale, r.iter().sum::<f64>().abs() / scale)
}

/// Case I time series at `t_n = n Δt`. The load is `g(t) F(x)` and the
/// system is linear, so one unit solve is scaled per level; `v_s` comes
/// from differencing consecutive levels.
pub fn run_case1(cfg: &MacroConfig) -> Result<MacroRun> {
    cfg.validate()?;
    check_regime(&cfg.coefficients, Regime::CaseI)?;
    cfg.coefficients.check_a_s()?;
    let sys = MixedSystem::new(cfg);
    let unit_cfg = MacroConfig { settings: MacroSettings { ramp: Ramp::None, ..cfg.settings.clone() }, ..cfg.clone() };
    let unit_sys = MixedSystem::new(&unit_cfg);
    let unit = solve_case1_with(&unit_sys, 0.0)?;
    let grid = &sys.grid;
    let c = &cfg.coefficients;
    let dt = cfg.settings.dt;
    let mut states = vec![MacroState::zero(grid)];
    let mut prev_g = 0.0;
    for step in 1..=cfg.settings.steps() {
        let t = step as f64 * dt;
        let gt = cfg.settings.ramp.value(t);
        let mut s = MacroState::zero(grid);
        s.step = step;
        s.t = t;
        s.u = unit.u.iter().map(|v| gt * v).collect();
        s.q = unit.q.iter().map(|v| gt * v).collect();
        let rate = (gt - prev_g) / dt;
        s.v_s = grid.center_values(&unit.u).into_iter().map(|v| v.map(|x| rate * x)).collect();
        s.v_c = s.v_s.iter().map(|v| v.map(|x| c.m_c * x)).collect();
        // Case I mixture velocity: cracks, pores and skeleton all move with v_s.
        s.v = s.v_s.clone();
        s.continuity_residual = unit.continuity_residual;
        s.net_divergence = unit.net_divergence;
        s.report = unit.report.clone();
        s.summarize(grid);
        states.push(s);
        prev_g = gt;
    }
    Ok(MacroRun { regime: Regime::CaseI, states, energy: None })
}

/// Implicit-Euler Case II run from the zero state.
pub fn run_case2(cfg: &MacroConfig) -> Result<MacroRun> {
    cfg.validate()?;
    let c = &cfg.coefficients;
    check_regime(c, Regime::CaseII)?;
    let mu1 = c.mu1_finite("Case II")?;
    c.check_a_s()?;
    c.check_b_c()?;
    let sys = MixedSystem::new(cfg);
    let grid = &sys.grid;
    let dt = cfg.settings.dt;
    let darcy = DarcyOperator::new(grid, c.b_c, dt / (c.m * c.m * mu1));
    let unit_darcy = DarcyOperator::new(grid, c.b_c, 1.0);
    let cop = SumOperator(vec![&sys.jump, &darcy]);
    let ns = Nullspace::constants(grid.elements());
    let source = dt * c.rho_f / (c.m * mu1);

    let mut states = vec![MacroState::zero(grid)];
    let mut energy = EnergyReport::default();
    let ne = grid.elements();
    for step in 1..=cfg.settings.steps() {
        let t = step as f64 * dt;
        let prev = states.last().expect("initial state");
        let f = sys.load(t);
        let fb = unit_darcy.force_functional(|x| cfg.force(x, t));
        // g = B u^n − C_s q^n − Δt ρ_f/(m μ₁) f_B
        let mut g = vec![0.0; ne];
        sys.divergence().apply(&prev.u, &mut g);
        let mut sq = vec![0.0; ne];
        sys.jump.apply(&prev.q, &mut sq);
        for e in 0..ne {
            g[e] -= sq[e] + source * fb[e];
        }
        let stage = format!("case II step {step} (t = {t})");
        let sol = saddle_solve(
            &sys.stiffness(),
            &sys.divergence(),
            Some(&cop),
            &f,
            &g,
            &sys.options(&ns, Some(&prev.u), Some(&prev.q)),
        )
        .map_err(|e| e.in_stage(&stage))?;
        sol.report.require(&stage)?;

        let mut s = MacroState::zero(grid);
        s.step = step;
        s.t = t;
        s.u = sol.x;
        s.q = sol.p;
        grid.zero_mean(&mut s.q);
        let (res, net) = constraint_residual(&sys, &s.u, &s.q, Some(&darcy), &g);
        s.continuity_residual = res;
        s.net_divergence = net;

        let du: Vec<f64> = s.u.iter().zip(&prev.u).map(|(a, b)| a - b).collect();
        s.v_s = grid.center_values(&du).into_iter().map(|v| v.map(|x| x / dt)).collect();
        let darcy_v = darcy_velocity(grid, c, mu1, &s.q, |x| cfg.force(x, t));
        s.v_c = s.v_s.iter().zip(&darcy_v).map(|(vs, w)| std::array::from_fn(|i| c.m_c * vs[i] + w[i])).collect();
        s.v = s.v_c.iter().zip(&s.v_s).map(|(vc, vs)| std::array::from_fn(|i| vc[i] + (1.0 - c.m_c) * vs[i])).collect();

        energy.work += dot(&f, &du) + source * dot(&s.q, &fb);
        let mut dq = vec![0.0; ne];
        darcy.apply(&s.q, &mut dq);
        energy.dissipated += dot(&s.q, &dq);
        s.report = sol.report;
        s.summarize(grid);
        states.push(s);
    }
    let last = states.last().expect("at least one step");
    let mut ku = vec![0.0; grid.mesh.dofs()];
    sys.stiffness().apply(&last.u, &mut ku);
    let mut sq = vec![0.0; ne];
    sys.jump.apply(&last.q, &mut sq);
    energy.stored = 0.5 * dot(&last.u, &ku) + 0.5 * dot(&last.q, &sq);
    Ok(MacroRun { regime: Regime::CaseII, states, energy: Some(energy) })
}

/// `(1/μ₁) B (ρ_f F − ∇q/m)` at element centers.
fn darcy_velocity(
    grid: &MacroGrid,
    c: &MacroCoefficients,
    mu1: f64,
    q: &[f64],
    force: impl Fn([f64; 3]) -> [f64; 3] + Sync,
) -> Vec<[f64; 3]> {
    let gq = grid.cell_gradient(q);
    gq.par_iter()
        .enumerate()
        .map(|(e, gq)| {
            let f = force(grid.element_center(e));
            let drive: [f64; 3] = std::array::from_fn(|k| c.rho_f * f[k] - gq[k] / c.m);
            std::array::from_fn(|i| (0..3).map(|k| c.b_c[i][k] * drive[k]).sum::<f64>() / mu1)
        })
        .collect()
}

/// Solution of the rigid-skeleton Darcy problem.
#[derive(Clone, Debug)]
pub struct RigidDarcy {
    pub t: f64,
    pub q: Vec<f64>,
    pub v_c: Vec<[f64; 3]>,
    /// Largest per-element flux divergence relative to the flux scale.
    pub divergence_residual: f64,
    pub report: SolveReport,
}

/// Solves `(1/m) ∇·(B ∇q) = ρ_f ∇·(B F)` with zero normal flux and
/// reconstructs `v_c = (1/μ₁) B (ρ_f F − ∇q/m)`.
pub fn solve_rigid_darcy(cfg: &MacroConfig, t: f64) -> Result<RigidDarcy> {
    cfg.validate()?;
    let c = &cfg.coefficients;
    let mu1 = c.mu1_finite("rigid Darcy solve")?;
    c.check_b_c()?;
    let grid = MacroGrid::new(cfg.settings.n);
    let op = DarcyOperator::new(&grid, c.b_c, 1.0);
    let fb = op.force_functional(|x| cfg.force(x, t));
    let rhs: Vec<f64> = fb.iter().map(|v| c.m * c.rho_f * v).collect();
    let ns = Nullspace::constants(grid.elements());
    let opts = CgOptions { tol: cfg.settings.tol, max_iter: cfg.settings.max_iter.max(10 * grid.elements()), nullspace: &ns, record_history: false };
    let stage = format!("rigid Darcy solve (t = {t})");
    let (mut q, report) = if norm(&rhs) == 0.0 {
        (vec![0.0; grid.elements()], SolveReport { converged: true, ..Default::default() })
    } else {
        cg_with(&op, &rhs, None, &opts).map_err(|e| e.in_stage(&stage))?
    };
    report.require(&stage)?;
    grid.zero_mean(&mut q);
    let div = op.darcy_divergence(&q, &fb, c, mu1);
    let flux_scale = fb.iter().map(|v| (c.rho_f * v / mu1).abs()).fold(0.0, f64::max);
    let divergence_residual = if flux_scale > 0.0 {
        div.iter().fold(0.0f64, |m, v| m.max(v.abs())) / flux_scale
    } else {
        0.0
    };
    let v_c = darcy_velocity(&grid, c, mu1, &q, |x| cfg.force(x, t));
    Ok(RigidDarcy { t, q, v_c, divergence_residual, report })
}

/// One line of the rigid-limit table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidLimitRow {
    pub lambda0: f64,
    pub grad_u_l2: f64,
    pub q_error: f64,
    pub v_error: f64,
}

impl RigidLimitRow {
    pub const CSV_HEADER: &'static str = "lambda0,grad_u_l2,q_error,v_error";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.lambda0, self.grad_u_l2, self.q_error, self.v_error)
    }
}

/// Case II at each `λ₀` (a parallel map) compared at the final time with
/// the rigid Darcy solution.
pub fn rigid_limit_study(cfg: &MacroConfig, lambdas: &[f64]) -> Result<Vec<RigidLimitRow>> {
    if lambdas.len() < 3 {
        return Err(Error::invalid(format!("insufficient λ₀ samples: need at least 3, got {}", lambdas.len())));
    }
    if lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) || lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("λ₀ list must be positive, finite and strictly ascending"));
    }
    if lambdas[lambdas.len() - 1] / lambdas[0] < 1e4 {
        return Err(Error::invalid("λ₀ list must span at least four decades"));
    }
    let t_end = cfg.settings.steps() as f64 * cfg.settings.dt;
    let rigid = solve_rigid_darcy(cfg, t_end)?;
    let grid = MacroGrid::new(cfg.settings.n);
    lambdas
        .par_iter()
        .map(|&l| {
            let run_cfg = MacroConfig { coefficients: cfg.coefficients.with_lambda0(l), settings: cfg.settings.clone() };
            let run = run_case2(&run_cfg).map_err(|e| e.in_stage(&format!("λ₀ = {l}")))?;
            let last = run.states.last().expect("final state");
            let dq: Vec<f64> = last.q.iter().zip(&rigid.q).map(|(a, b)| a - b).collect();
            let dv: Vec<[f64; 3]> =
                last.v_c.iter().zip(&rigid.v_c).map(|(a, b)| std::array::from_fn(|i| a[i] - b[i])).collect();
            Ok(RigidLimitRow {
                lambda0: l,
                grad_u_l2: last.summary.grad_u_l2,
                q_error: grid.element_l2(&dq),
                v_error: grid.vector_l2(&dv),
            })
        })
        .collect()
}

/// Errors of the manufactured Case I solution at one resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmsRow {
    pub n: usize,
    pub u_error: f64,
    pub q_error: f64,
}

/// `‖u_h − u*‖` and `‖q_h − q*‖` in L² (27-point quadrature).
pub fn manufactured_errors(cfg: &MacroConfig) -> Result<MmsRow> {
    let cfg = MacroConfig {
        settings: MacroSettings { force: ForceSpec::Manufactured, ramp: Ramp::None, ..cfg.settings.clone() },
        coefficients: cfg.coefficients.clone(),
    };
    let state = solve_case1(&cfg, 0.0)?;
    let grid = MacroGrid::new(cfg.settings.n);
    let g = gauss3();
    let h = grid.h;
    let parts: Vec<(f64, f64)> = (0..grid.elements())
        .into_par_iter()
        .map(|e| {
            let o = grid.element_origin(e);
            let ue = grid.mesh.gather(e, &state.u);
            let (mut eu, mut eq) = (0.0, 0.0);
            for &(x, wx) in &g {
                for &(y, wy) in &g {
                    for &(z, wz) in &g {
                        let p = [o[0] + h * x, o[1] + h * y, o[2] + h * z];
                        let nv = shape_values([x, y, z]);
                        let exact = mms::displacement(p);
                        let w = wx * wy * wz * h.powi(3);
                        for c in 0..3 {
                            let uh: f64 = (0..8).map(|a| nv[a] * ue[a][c]).sum();
                            eu += w * (uh - exact[c]).powi(2);
                        }
                        eq += w * (state.q[e] - mms::pressure(p)).powi(2);
                    }
                }
            }
            (eu, eq)
        })
        .collect();
    let (eu, eq) = parts.into_iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    Ok(MmsRow { n: cfg.settings.n, u_error: eu.sqrt(), q_error: eq.sqrt() })
}

/// Observed orders `log₂(e_k / e_{k+1})` between consecutive rows.
pub fn observed_orders(rows: &[MmsRow]) -> Vec<(f64, f64)> {
    rows.windows(2)
        .map(|w| {
            let r = (w[0].n as f64 / w[1].n as f64).ln();
            ((w[1].u_error / w[0].u_error).ln() / r, (w[1].q_error / w[0].q_error).ln() / r)
        })
        .collect()
}

/// Residual of the manufactured momentum equation, for diagnostics of the
/// source term itself: `λ₀ ∇·(A_s:𝔻(u*)) − ∇q*/m − ρ̂ F*`.
pub fn manufactured_source_defect(x: [f64; 3], c: &MacroCoefficients) -> f64 {
    let f = mms::body_force(x, c);
    let ds = mms::stress_divergence(x, c);
    let gq = mms::pressure_gradient(x);
    (0..3).map(|i| (c.lambda0 * ds[i] - gq[i] / c.m - c.rho_hat * f[i]).abs()).fold(0.0, f64::max)
}
