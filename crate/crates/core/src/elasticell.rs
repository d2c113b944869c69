//! Elastic corrector problems of the solid skeleton.
//!
//! Pore scale: incompressible elasticity on the solid voxels of the pore
//! cell, one problem per `J^ij` plus the dilatation problem, discretized with
//! trilinear displacements and element-constant pressures. The pressure-jump
//! stabilization is available but off by default at this scale: with it, the
//! discrete energy identities acquire extra `s(Q, Q)` terms and stop being
//! exact. Crack scale: anisotropic elasticity with the pore-scale tensor
//! `A_c`, no constraint. Interfaces with the fluid are traction free.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cellgeom::{porosity, Phase, Scale, UnitCell};
use crate::error::{Error, Result};
use crate::fem::{DivergenceOperator, ElementKernel, HexMesh, JumpStabilization, StiffnessOperator};
use crate::linsolve::{cg_with, saddle_solve, CgOptions, LinearOperator, Nullspace, SaddleOptions, SolveReport};
use crate::tensor::{compose, jij, outer, SpdReport, SymMat3, Tensor4, VOIGT_PAIRS, VOIGT_WEIGHTS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellSolverSettings {
    /// Relative residual target of every cell solve.
    pub tol: f64,
    /// Pressure-jump stabilization coefficient `α` (face weight `α h³`).
    pub stabilization: f64,
    pub max_iter: usize,
}

impl Default for CellSolverSettings {
    fn default() -> Self {
        Self { tol: 1e-9, stabilization: 0.0, max_iter: 20_000 }
    }
}

impl CellSolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::invalid(format!("solver tolerance must lie in (0, 1), got {}", self.tol)));
        }
        if !(self.stabilization >= 0.0 && self.stabilization.is_finite()) {
            return Err(Error::invalid("stabilization coefficient must be finite and non-negative"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        Ok(())
    }
}

/// One solved corrector with its averaged quantities.
#[derive(Clone, Debug)]
pub struct Corrector {
    /// Nodal displacements on the solid mesh, `∫ U = 0`.
    pub u: Vec<f64>,
    /// Element pressures (pore scale only).
    pub q: Option<Vec<f64>>,
    /// `⟨𝔻(U)⟩` over the solid part (integral, the cell has unit volume).
    pub strain_mean: SymMat3,
    /// `⟨Q⟩` over the solid part.
    pub pressure_mean: f64,
    pub report: SolveReport,
}

/// Pore-scale correctors `U^ij` (one per Voigt slot) and `U⁰`.
#[derive(Clone, Debug)]
pub struct PoreCellSolution {
    pub mesh: HexMesh,
    pub kernel: ElementKernel,
    pub m_p: f64,
    pub pairs: Vec<Corrector>,
    pub dilatation: Corrector,
}

/// Crack-scale correctors `U_c^ij`, one per Voigt slot.
#[derive(Clone, Debug)]
pub struct CrackCellSolution {
    pub mesh: HexMesh,
    pub kernel: ElementKernel,
    pub m_c: f64,
    pub pairs: Vec<Corrector>,
}

fn check_cell(cell: &UnitCell, scale: Scale) -> Result<()> {
    if cell.scale() != scale {
        return Err(Error::invalid(format!("expected a {scale} cell, got {}", cell.scale())));
    }
    if cell.phase_count(Phase::Solid) == 0 {
        return Err(Error::invalid(format!("{scale} cell has no solid phase (porosity 1)")));
    }
    cell.check_elastic_solid()
}

/// Raw Voigt components of `J^ij` for a slot.
fn slot_strain(slot: usize) -> [f64; 6] {
    let (i, j) = VOIGT_PAIRS[slot];
    jij(i, j).0
}

fn slot_name(slot: usize) -> String {
    let (i, j) = VOIGT_PAIRS[slot];
    format!("{}{}", i + 1, j + 1)
}

struct PoreSystem {
    mesh: HexMesh,
    kernel: ElementKernel,
    jump: Option<JumpStabilization>,
    pressure_nullspace: Nullspace,
    primal_nullspace: Nullspace,
    m_p: f64,
}

impl PoreSystem {
    fn new(cell: &UnitCell, settings: &CellSolverSettings) -> Result<Self> {
        check_cell(cell, Scale::Pore)?;
        settings.validate()?;
        let mesh = HexMesh::periodic_solid(cell);
        let kernel = ElementKernel::new(&Tensor4::sym_identity(), mesh.h);
        let m_p = porosity(cell);
        let jump = (settings.stabilization > 0.0)
            .then(|| JumpStabilization::for_mesh(&mesh, true, settings.stabilization * mesh.h.powi(3)));
        // On an all-solid torus constant pressures have zero gradient.
        let pressure_nullspace = if m_p == 0.0 { Nullspace::constants(mesh.elements()) } else { Nullspace::None };
        let primal_nullspace = mesh.translation_nullspace();
        Ok(Self { mesh, kernel, jump, pressure_nullspace, primal_nullspace, m_p })
    }

    fn solve(&self, f: &[f64], g: &[f64], name: &str, settings: &CellSolverSettings) -> Result<Corrector> {
        let a = StiffnessOperator { mesh: &self.mesh, kernel: &self.kernel };
        let b = DivergenceOperator { mesh: &self.mesh, kernel: &self.kernel, coef: -1.0 };
        let opts = SaddleOptions {
            tol: settings.tol,
            max_outer: settings.max_iter,
            max_inner: settings.max_iter,
            primal_nullspace: &self.primal_nullspace,
            pressure_nullspace: &self.pressure_nullspace,
            constraint_name: "solid incompressibility",
            ..Default::default()
        };
        let stage = format!("pore corrector {name}");
        let c = self.jump.as_ref().map(|j| j as &dyn LinearOperator);
        let sol = saddle_solve(&a, &b, c, f, g, &opts).map_err(|e| e.in_stage(&stage))?;
        sol.report.require(&stage)?;
        let mut u = sol.x;
        self.mesh.remove_mean(&mut u);
        let strain_mean = SymMat3(self.mesh.strain_integral(&self.kernel, &u));
        let vol = self.mesh.h.powi(3);
        let pressure_mean = sol.p.iter().sum::<f64>() * vol;
        Ok(Corrector { u, q: Some(sol.p), strain_mean, pressure_mean, report: sol.report })
    }
}

/// Solves the pore corrector for `J^ij` (1-based indices).
pub fn solve_pore_corrector(cell: &UnitCell, i: usize, j: usize, settings: &CellSolverSettings) -> Result<Corrector> {
    let basis = crate::tensor::jij_basis(i, j)?;
    let sys = PoreSystem::new(cell, settings)?;
    let f = sys.mesh.uniform_strain_rhs(&sys.kernel, &basis.0);
    sys.solve(&f, &vec![0.0; sys.mesh.elements()], &format!("{i}{j}"), settings)
}

/// Solves the dilatation problem `div U⁰ = −1` in the solid.
pub fn solve_pore_dilatation(cell: &UnitCell, settings: &CellSolverSettings) -> Result<Corrector> {
    let sys = PoreSystem::new(cell, settings)?;
    solve_dilatation(&sys, settings)
}

fn solve_dilatation(sys: &PoreSystem, settings: &CellSolverSettings) -> Result<Corrector> {
    if sys.m_p == 0.0 {
        return Err(Error::invalid(
            "dilatation problem infeasible on all-solid cell: a periodic field cannot have \
             divergence −1 everywhere on the torus",
        ));
    }
    let vol = sys.mesh.h.powi(3);
    // B = −∫div, so B U⁰ = +h³ per element.
    let g = vec![vol; sys.mesh.elements()];
    sys.solve(&vec![0.0; sys.mesh.dofs()], &g, "dilatation", settings)
}

/// All seven pore problems, solved as independent parallel tasks.
pub fn solve_pore_cell(cell: &UnitCell, settings: &CellSolverSettings) -> Result<PoreCellSolution> {
    let sys = PoreSystem::new(cell, settings)?;
    if sys.m_p == 0.0 {
        // Reject before spending time on the six pair problems.
        solve_dilatation(&sys, settings)?;
    }
    let zero_g = vec![0.0; sys.mesh.elements()];
    let mut results: Vec<Result<Corrector>> = (0..7)
        .into_par_iter()
        .map(|task| {
            if task == 6 {
                solve_dilatation(&sys, settings)
            } else {
                let f = sys.mesh.uniform_strain_rhs(&sys.kernel, &slot_strain(task));
                sys.solve(&f, &zero_g, &slot_name(task), settings)
            }
        })
        .collect();
    let dilatation = results.pop().expect("seven tasks")?;
    let pairs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PoreCellSolution { mesh: sys.mesh, kernel: sys.kernel, m_p: sys.m_p, pairs, dilatation })
}

/// The four parts of `C_p` and their sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoreTensors {
    pub c1: Tensor4,
    pub c2: Tensor4,
    pub c3: Tensor4,
    pub c4: Tensor4,
    pub c_p: Tensor4,
    pub a_c: Tensor4,
    pub a_c_report: SpdReport,
}

/// Symmetry tolerance used in the stiffness reports.
pub const SYMMETRY_TOL: f64 = 1e-7;

/// Assembles `C_p = C₁ + C₂ + C₃ + C₄` and `A_c = (1 − m_p)𝕁 + C_p`.
pub fn assemble_ac(pore: &PoreCellSolution) -> PoreTensors {
    let identity = SymMat3::identity();
    let mut c1 = Tensor4::zero();
    let mut c3 = Tensor4::zero();
    for i in 0..3 {
        for j in 0..3 {
            let slot = crate::tensor::voigt_slot(i, j);
            let b = jij(i, j);
            c1 += outer(&pore.pairs[slot].strain_mean, &b);
            c3 += outer(&identity, &b).scale(-pore.pairs[slot].pressure_mean);
        }
    }
    let c2 = outer(&pore.dilatation.strain_mean, &identity);
    let c4 = Tensor4::identity_outer().scale(-pore.dilatation.pressure_mean);
    let c_p = c1 + c2 + c3 + c4;
    let a_c = Tensor4::sym_identity().scale(1.0 - pore.m_p) + c_p;
    let a_c_report = a_c.spd_report(SYMMETRY_TOL);
    PoreTensors { c1, c2, c3, c4, c_p, a_c, a_c_report }
}

/// `Y_ζ + Y⁰_ζ = Σ_ij U^ij ζ_ij + U⁰ tr ζ`.
fn pore_response(pore: &PoreCellSolution, zeta: &SymMat3) -> Vec<f64> {
    let mut y = pore.dilatation.u.iter().map(|v| v * zeta.trace()).collect::<Vec<_>>();
    for (slot, c) in pore.pairs.iter().enumerate() {
        let w = VOIGT_WEIGHTS[slot] * zeta.0[slot];
        for (yi, ui) in y.iter_mut().zip(&c.u) {
            *yi += w * ui;
        }
    }
    y
}

/// Field-quadrature value of `(A_c:ζ):η`:
/// `⟨(𝔻(Y_ζ + Y⁰_ζ) + ζ) : (𝔻(Y_η + Y⁰_η) + η)⟩` over the solid.
pub fn energy_form_ac(pore: &PoreCellSolution, zeta: &SymMat3, eta: &SymMat3) -> f64 {
    let yz = pore_response(pore, zeta);
    let ye = pore_response(pore, eta);
    pore.mesh.energy_quadrature(&pore.kernel.form, &yz, &zeta.0, &ye, &eta.0)
}

/// Solves the crack corrector for `J^ij` (1-based) with pore tensor `a_c`.
pub fn solve_crack_corrector(
    cell: &UnitCell,
    a_c: &Tensor4,
    i: usize,
    j: usize,
    settings: &CellSolverSettings,
) -> Result<Corrector> {
    let basis = crate::tensor::jij_basis(i, j)?;
    let (mesh, kernel) = crack_setup(cell, a_c, settings)?;
    solve_crack(&mesh, &kernel, &basis.0, &format!("{i}{j}"), settings)
}

fn crack_setup(cell: &UnitCell, a_c: &Tensor4, settings: &CellSolverSettings) -> Result<(HexMesh, ElementKernel)> {
    check_cell(cell, Scale::Crack)?;
    settings.validate()?;
    let rep = a_c.spd_report(SYMMETRY_TOL);
    if !rep.is_spd() {
        return Err(Error::invalid(format!(
            "crack correctors need a symmetric positive definite A_c (symmetry defect {:.3e}, min eigenvalue {:.3e})",
            rep.symmetry_defect, rep.min_eig
        )));
    }
    let mesh = HexMesh::periodic_solid(cell);
    let kernel = ElementKernel::new(a_c, mesh.h);
    Ok((mesh, kernel))
}

fn solve_crack(mesh: &HexMesh, kernel: &ElementKernel, j: &[f64; 6], name: &str, settings: &CellSolverSettings) -> Result<Corrector> {
    let a = StiffnessOperator { mesh, kernel };
    let ns = mesh.translation_nullspace();
    let f = mesh.uniform_strain_rhs(kernel, j);
    let opts = CgOptions { tol: settings.tol, max_iter: settings.max_iter, nullspace: &ns, record_history: false };
    let stage = format!("crack corrector {name}");
    let (mut u, report) = cg_with(&a, &f, None, &opts).map_err(|e| e.in_stage(&stage))?;
    report.require(&stage)?;
    mesh.remove_mean(&mut u);
    let strain_mean = SymMat3(mesh.strain_integral(kernel, &u));
    Ok(Corrector { u, q: None, strain_mean, pressure_mean: 0.0, report })
}

/// The six crack correctors, solved in parallel.
pub fn solve_crack_cell(cell: &UnitCell, a_c: &Tensor4, settings: &CellSolverSettings) -> Result<CrackCellSolution> {
    let (mesh, kernel) = crack_setup(cell, a_c, settings)?;
    let pairs = (0..6)
        .into_par_iter()
        .map(|slot| solve_crack(&mesh, &kernel, &slot_strain(slot), &slot_name(slot), settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(CrackCellSolution { m_c: porosity(cell), mesh, kernel, pairs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrackTensors {
    pub c_c: Tensor4,
    pub a_s: Tensor4,
    pub a_s_report: SpdReport,
}

/// `C_c = Σ_ij ⟨𝔻(U_c^ij)⟩ ⊗ J^ij` and `A_s = A_c : ((1 − m_c)𝕁 + C_c)`.
pub fn assemble_as(crack: &CrackCellSolution, a_c: &Tensor4) -> CrackTensors {
    let mut c_c = Tensor4::zero();
    for i in 0..3 {
        for j in 0..3 {
            c_c += outer(&crack.pairs[crate::tensor::voigt_slot(i, j)].strain_mean, &jij(i, j));
        }
    }
    let a_s = compose(a_c, &(Tensor4::sym_identity().scale(1.0 - crack.m_c) + c_c));
    let a_s_report = a_s.spd_report(SYMMETRY_TOL);
    CrackTensors { c_c, a_s, a_s_report }
}

fn crack_response(crack: &CrackCellSolution, eta: &SymMat3) -> Vec<f64> {
    let mut z = vec![0.0; crack.mesh.dofs()];
    for (slot, c) in crack.pairs.iter().enumerate() {
        let w = VOIGT_WEIGHTS[slot] * eta.0[slot];
        for (zi, ui) in z.iter_mut().zip(&c.u) {
            *zi += w * ui;
        }
    }
    z
}

/// Field-quadrature value of `(A_s:ζ):η`:
/// `⟨(A_c:(𝔻(Z_ζ) + ζ)) : (𝔻(Z_η) + η)⟩` over the crack-cell solid.
pub fn energy_form_as(crack: &CrackCellSolution, zeta: &SymMat3, eta: &SymMat3) -> f64 {
    let zz = crack_response(crack, zeta);
    let ze = crack_response(crack, eta);
    crack.mesh.energy_quadrature(&crack.kernel.form, &zz, &zeta.0, &ze, &eta.0)
}

/// Largest scaled residual of each family of discrete energy identities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `⟨Q⁰⟩ = −⟨𝔻(U⁰):𝔻(U⁰)⟩`
    pub dilatation_pressure: f64,
    /// `⟨𝔻(U^ij):𝔻(U⁰)⟩ = 0`
    pub orthogonality: f64,
    /// `⟨Q^ij⟩ = −⟨𝔻(U⁰):J^ij⟩`
    pub pair_pressure: f64,
    /// `⟨𝔻(U^ij):𝔻(U^kl)⟩ + ⟨J^ij:𝔻(U^kl)⟩ = 0`
    pub pore_energy: f64,
    /// `⟨(A_c:𝔻(U_c^ij)):𝔻(U_c^kl)⟩ + ⟨(A_c:J^ij):𝔻(U_c^kl)⟩ = 0`
    pub crack_energy: f64,
}

impl IdentityReport {
    pub fn max(&self) -> f64 {
        [self.dilatation_pressure, self.orthogonality, self.pair_pressure, self.pore_energy, self.crack_energy]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn scaled(residual: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        residual.abs() / scale
    } else {
        residual.abs()
    }
}

/// Evaluates the discrete energy identities. Each residual is divided by
/// the Cauchy–Schwarz bound of its terms, so values are comparable with the
/// solver tolerance.
pub fn identity_suite(pore: &PoreCellSolution, crack: Option<&CrackCellSolution>) -> IdentityReport {
    let zero = [0.0; 6];
    let pm = &pore.mesh;
    let form = &pore.kernel.form;
    let pair = |u: &[f64], w: &[f64]| pm.energy_quadrature(form, u, &zero, w, &zero);
    let none = vec![0.0; pm.dofs()];
    let with_strain = |j: &[f64; 6], w: &[f64]| pm.energy_quadrature(form, &none, j, w, &zero);
    let solid = 1.0 - pore.m_p;

    let u0 = &pore.dilatation.u;
    let e00 = pair(u0, u0);
    let n0 = e00.sqrt();
    let norms: Vec<f64> = pore.pairs.iter().map(|c| pair(&c.u, &c.u).sqrt()).collect();
    let jnorm = |slot: usize| {
        let j = slot_strain(slot);
        (solid * SymMat3(j).ddot(&SymMat3(j))).sqrt()
    };

    let mut rep = IdentityReport {
        dilatation_pressure: scaled(pore.dilatation.pressure_mean + e00, e00),
        ..Default::default()
    };
    for (s, c) in pore.pairs.iter().enumerate() {
        rep.orthogonality = rep.orthogonality.max(scaled(pair(&c.u, u0), norms[s] * n0));
        let r = c.pressure_mean + with_strain(&slot_strain(s), u0);
        rep.pair_pressure = rep.pair_pressure.max(scaled(r, jnorm(s) * n0));
        for (t, d) in pore.pairs.iter().enumerate() {
            let r = pair(&c.u, &d.u) + with_strain(&slot_strain(s), &d.u);
            rep.pore_energy = rep.pore_energy.max(scaled(r, (norms[s] + jnorm(s)) * norms[t]));
        }
    }

    if let Some(crack) = crack {
        let cm = &crack.mesh;
        let cf = &crack.kernel.form;
        let cnone = vec![0.0; cm.dofs()];
        let cpair = |u: &[f64], w: &[f64]| cm.energy_quadrature(cf, u, &zero, w, &zero);
        let cnorms: Vec<f64> = crack.pairs.iter().map(|c| cpair(&c.u, &c.u).max(0.0).sqrt()).collect();
        for (s, c) in crack.pairs.iter().enumerate() {
            let j = slot_strain(s);
            let jn = cm.energy_quadrature(cf, &cnone, &j, &cnone, &j).max(0.0).sqrt();
            for (t, d) in crack.pairs.iter().enumerate() {
                let r = cpair(&c.u, &d.u) + cm.energy_quadrature(cf, &cnone, &j, &d.u, &zero);
                rep.crack_energy = rep.crack_energy.max(scaled(r, (cnorms[s] + jn) * cnorms[t]));
            }
        }
    }
    rep
}

/// Both scales of the skeleton stiffness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StiffnessBundle {
    pub pore: PoreTensors,
    pub crack: CrackTensors,
}
