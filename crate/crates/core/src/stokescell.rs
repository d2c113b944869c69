//! Periodic Stokes cell problems on a staggered (MAC) voxel grid and the
//! effective permeability `B_c`.
//!
//! Velocity unknowns sit on faces between two fluid voxels; faces touching
//! solid are no-slip and carry no unknown. For the tangential part of the
//! Laplacian, a neighbor face with both adjacent voxels solid is handled by
//! reflection (the wall lies on the voxel boundary, half a cell away), while
//! a neighbor face with exactly one solid voxel is a zero value one cell
//! away. Pressures sit at fluid voxel centers and are defined up to one
//! constant per fluid component.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cellgeom::{components, Axis, ConnectivityReport, Phase, Scale, UnitCell};
use crate::error::{Error, Result};
use crate::linsolve::{
    dot, saddle_solve, ConstraintOperator, LinearOperator, Nullspace, SaddleOptions, SolveReport,
};

const NONE: u32 = u32::MAX;

/// Discrete Stokes operator set for one crack cell.
pub struct MacSystem {
    n: usize,
    h: f64,
    /// `(direction, voxel)` of each velocity unknown; the face is the `+`
    /// face of the voxel.
    faces: Vec<(u8, u32)>,
    face_index: [Vec<u32>; 3],
    /// Laplacian diagonal in units of `1/h²`.
    diag: Vec<f64>,
    neighbors: Vec<[u32; 6]>,
    /// Pressure unknowns of the two voxels adjacent to each face (`−`, `+`).
    face_cells: Vec<[u32; 2]>,
    /// Fluid voxel of each pressure unknown.
    cells: Vec<u32>,
    /// Velocity unknowns on the six faces of each pressure cell
    /// (`−x, +x, −y, +y, −z, +z`).
    cell_faces: Vec<[u32; 6]>,
    pressure_nullspace: Nullspace,
    connectivity: ConnectivityReport,
}

impl MacSystem {
    pub fn new(cell: &UnitCell) -> Result<Self> {
        if cell.scale() != Scale::Crack {
            return Err(Error::invalid("Stokes cell problems are posed on the CRACK cell"));
        }
        let fluid = cell.phase_count(Phase::Fluid);
        if fluid == 0 {
            return Err(Error::invalid("Stokes cell problem: crack cell has no fluid phase"));
        }
        if fluid == cell.len() {
            return Err(Error::invalid(
                "Stokes cell problem: crack cell has no solid phase, permeability is unbounded",
            ));
        }
        let n = cell.n();
        let ni = n as isize;
        let shift = |idx: usize, d: usize, s: isize| -> usize {
            let mut c = cell.coords(idx).map(|v| v as isize);
            c[d] = (c[d] + s).rem_euclid(ni);
            cell.index(c[0] as usize, c[1] as usize, c[2] as usize)
        };

        let mut face_index = [vec![NONE; cell.len()], vec![NONE; cell.len()], vec![NONE; cell.len()]];
        let mut faces = Vec::new();
        for d in 0..3 {
            for idx in 0..cell.len() {
                if cell.is_fluid(idx) && cell.is_fluid(shift(idx, d, 1)) {
                    face_index[d][idx] = faces.len() as u32;
                    faces.push((d as u8, idx as u32));
                }
            }
        }

        let comps = components(cell, Phase::Fluid);
        let mut cell_index = vec![NONE; cell.len()];
        let mut cells = Vec::with_capacity(fluid);
        let mut labels = Vec::with_capacity(fluid);
        for idx in 0..cell.len() {
            if cell.is_fluid(idx) {
                cell_index[idx] = cells.len() as u32;
                cells.push(idx as u32);
                labels.push(comps.labels[idx]);
            }
        }

        let mut diag = Vec::with_capacity(faces.len());
        let mut neighbors = Vec::with_capacity(faces.len());
        let mut face_cells = Vec::with_capacity(faces.len());
        for &(d, idx) in &faces {
            let (d, idx) = (d as usize, idx as usize);
            let mut nb = [NONE; 6];
            let mut dg = 0.0;
            for a in 0..3 {
                for (slot, s) in [(2 * a, -1isize), (2 * a + 1, 1)] {
                    let c0 = shift(idx, a, s);
                    let active = face_index[d][c0];
                    if active != NONE {
                        nb[slot] = active;
                        dg += 1.0;
                    } else if a != d && !cell.is_fluid(c0) && !cell.is_fluid(shift(c0, d, 1)) {
                        dg += 2.0;
                    } else {
                        dg += 1.0;
                    }
                }
            }
            diag.push(dg);
            neighbors.push(nb);
            face_cells.push([cell_index[idx], cell_index[shift(idx, d, 1)]]);
        }

        let cell_faces = cells
            .iter()
            .map(|&idx| {
                let idx = idx as usize;
                let mut f = [NONE; 6];
                for d in 0..3 {
                    f[2 * d] = face_index[d][shift(idx, d, -1)];
                    f[2 * d + 1] = face_index[d][idx];
                }
                f
            })
            .collect();

        Ok(Self {
            n,
            h: cell.h(),
            faces,
            face_index,
            diag,
            neighbors,
            face_cells,
            cells,
            cell_faces,
            pressure_nullspace: Nullspace::Groups { labels, count: comps.count },
            connectivity: comps.report,
        })
    }

    pub fn velocity_dofs(&self) -> usize {
        self.faces.len()
    }

    pub fn pressure_dofs(&self) -> usize {
        self.cells.len()
    }

    pub fn connectivity(&self) -> &ConnectivityReport {
        &self.connectivity
    }

    /// Unit body force along `axis` on every velocity unknown of that
    /// direction.
    pub fn body_force(&self, axis: Axis) -> Vec<f64> {
        self.faces
            .iter()
            .map(|&(d, _)| if d as usize == axis.index() { 1.0 } else { 0.0 })
            .collect()
    }

    /// Whole-cell average of each velocity component.
    pub fn mean_velocity(&self, v: &[f64]) -> [f64; 3] {
        let mut m = [0.0; 3];
        for (&(d, _), x) in self.faces.iter().zip(v) {
            m[d as usize] += x;
        }
        let vol = self.h.powi(3);
        m.map(|s| s * vol)
    }

    /// `∫ ∇u : ∇w` over the fluid, evaluated with the discrete Laplacian.
    pub fn energy_product(&self, u: &[f64], w: &[f64]) -> f64 {
        let mut au = vec![0.0; u.len()];
        LinearOperator::apply(self, u, &mut au);
        dot(&au, w) * self.h.powi(3)
    }

    /// Discrete divergence per fluid voxel.
    pub fn divergence(&self, v: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.cells.len()];
        ConstraintOperator::apply(self, v, &mut b);
        b.iter().map(|x| -x).collect()
    }

    /// Velocity unknown on the `+d` face of voxel `idx`, or zero.
    pub fn face_value(&self, v: &[f64], d: usize, idx: usize) -> f64 {
        match self.face_index[d][idx] {
            NONE => 0.0,
            f => v[f as usize],
        }
    }

    /// Velocity interpolated to voxel centers (zero in solid voxels).
    pub fn cell_velocity(&self, v: &[f64]) -> Vec<[f64; 3]> {
        let n = self.n;
        let mut out = vec![[0.0; 3]; n * n * n];
        for (p, &idx) in self.cells.iter().enumerate() {
            let f = self.cell_faces[p];
            for d in 0..3 {
                let lo = if f[2 * d] == NONE { 0.0 } else { v[f[2 * d] as usize] };
                let hi = if f[2 * d + 1] == NONE { 0.0 } else { v[f[2 * d + 1] as usize] };
                out[idx as usize][d] = 0.5 * (lo + hi);
            }
        }
        out
    }

    /// Pressure scattered to voxels (zero in solid voxels).
    pub fn cell_pressure(&self, p: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n * n];
        for (&idx, v) in self.cells.iter().zip(p) {
            out[idx as usize] = *v;
        }
        out
    }

    pub fn solve(&self, axis: Axis, tol: f64) -> Result<AxisFlow> {
        let f = self.body_force(axis);
        let g = vec![0.0; self.cells.len()];
        let opts = SaddleOptions {
            tol,
            pressure_nullspace: &self.pressure_nullspace,
            constraint_name: "incompressibility",
            ..Default::default()
        };
        let stage = format!("Stokes cell problem, axis {}", ["x", "y", "z"][axis.index()]);
        let sol = saddle_solve(self, self, None, &f, &g, &opts).map_err(|e| e.in_stage(&stage))?;
        sol.report.require(&stage)?;
        let mean = self.mean_velocity(&sol.x);
        Ok(AxisFlow { axis, velocity: sol.x, pressure: sol.p, mean, report: sol.report })
    }
}

impl LinearOperator for MacSystem {
    fn dim(&self) -> usize {
        self.faces.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let s = 1.0 / (self.h * self.h);
        y.par_iter_mut().enumerate().for_each(|(f, y)| {
            let mut acc = self.diag[f] * x[f];
            for &nb in &self.neighbors[f] {
                if nb != NONE {
                    acc -= x[nb as usize];
                }
            }
            *y = acc * s;
        });
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let s = 1.0 / (self.h * self.h);
        Some(self.diag.iter().map(|d| d * s).collect())
    }
}

/// `B = −div`, so that `Bᵀ = ∇`.
impl ConstraintOperator for MacSystem {
    fn rows(&self) -> usize {
        self.cells.len()
    }

    fn cols(&self) -> usize {
        self.faces.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let s = 1.0 / self.h;
        y.par_iter_mut().enumerate().for_each(|(c, y)| {
            let f = &self.cell_faces[c];
            let mut div = 0.0;
            for d in 0..3 {
                if f[2 * d + 1] != NONE {
                    div += x[f[2 * d + 1] as usize];
                }
                if f[2 * d] != NONE {
                    div -= x[f[2 * d] as usize];
                }
            }
            *y = -div * s;
        });
    }

    fn apply_transpose(&self, p: &[f64], y: &mut [f64]) {
        let s = 1.0 / self.h;
        y.par_iter_mut().enumerate().for_each(|(f, y)| {
            let [lo, hi] = self.face_cells[f];
            *y = (p[hi as usize] - p[lo as usize]) * s;
        });
    }
}

/// Solution of one axis problem.
#[derive(Clone, Debug)]
pub struct AxisFlow {
    pub axis: Axis,
    /// Face velocities indexed like the unknowns of the [`MacSystem`].
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    /// Whole-cell average `⟨V^i⟩`.
    pub mean: [f64; 3],
    pub report: SolveReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermeabilityResult {
    /// Row-major; column `i` is the mean velocity of axis problem `i`.
    pub b_c: [[f64; 3]; 3],
    /// `max |B_ij − B_ji| / ‖B‖` (zero for `B = 0`).
    pub symmetry_defect: f64,
    pub min_eig: f64,
    pub connectivity: ConnectivityReport,
    pub reports: Vec<SolveReport>,
}

impl PermeabilityResult {
    pub fn from_matrix(b_c: [[f64; 3]; 3], connectivity: ConnectivityReport, reports: Vec<SolveReport>) -> Self {
        let m = Matrix3::from_fn(|i, j| b_c[i][j]);
        let nrm = m.norm();
        let defect = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (b_c[i][j] - b_c[j][i]).abs())
            .fold(0.0, f64::max);
        let sym = (m + m.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
        Self {
            b_c,
            symmetry_defect: if nrm > 0.0 { defect / nrm } else { 0.0 },
            min_eig,
            connectivity,
            reports,
        }
    }

    pub fn norm(&self) -> f64 {
        self.b_c.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Whether `B_c` is invertible in the sense of positive definiteness.
    pub fn is_spd(&self, tol: f64) -> bool {
        self.min_eig > tol * self.norm().max(f64::MIN_POSITIVE)
    }
}

/// The three axis problems and the resulting permeability.
#[derive(Clone, Debug)]
pub struct StokesCellSolution {
    pub flows: Vec<AxisFlow>,
    pub permeability: PermeabilityResult,
}

/// Solves the Stokes cell problem driven along `axis`.
pub fn solve_stokes_cell(cell: &UnitCell, axis: Axis, tol: f64) -> Result<AxisFlow> {
    MacSystem::new(cell)?.solve(axis, tol)
}

/// All three axis problems, run as a parallel map.
pub fn solve_stokes_cells(cell: &UnitCell, tol: f64) -> Result<(MacSystem, StokesCellSolution)> {
    let sys = MacSystem::new(cell)?;
    let flows: Vec<AxisFlow> = Axis::ALL
        .par_iter()
        .map(|&a| sys.solve(a, tol))
        .collect::<Result<_>>()?;
    let mut b = [[0.0; 3]; 3];
    for (i, flow) in flows.iter().enumerate() {
        for (d, row) in b.iter_mut().enumerate() {
            row[i] = flow.mean[d];
        }
    }
    let reports = flows.iter().map(|f| f.report.clone()).collect();
    let permeability = PermeabilityResult::from_matrix(b, sys.connectivity.clone(), reports);
    Ok((sys, StokesCellSolution { flows, permeability }))
}

/// Effective permeability `B_c = Σ_i ⟨V^i⟩ ⊗ e_i`.
///
/// A crack cell without fluid has `B_c = 0` and needs no solve.
pub fn compute_bc(cell: &UnitCell, tol: f64) -> Result<PermeabilityResult> {
    if cell.scale() == Scale::Crack && cell.phase_count(Phase::Fluid) == 0 {
        let conn = crate::cellgeom::connectivity(cell, Phase::Fluid);
        return Ok(PermeabilityResult::from_matrix([[0.0; 3]; 3], conn, Vec::new()));
    }
    Ok(solve_stokes_cells(cell, tol)?.1.permeability)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellgeom::{build_cell, ShapeSpec};
    use nalgebra::{DMatrix, DVector};

    fn slab(axis: Axis, fraction: f64, n: usize) -> UnitCell {
        build_cell(&ShapeSpec::Slab { axis, fraction }, n, Scale::Crack).unwrap()
    }

    /// Assembles the operators column by column and solves the full KKT
    /// system densely, fixing one pressure per fluid component.
    fn dense_solution(sys: &MacSystem, axis: Axis) -> (DVector<f64>, DVector<f64>) {
        let (nu, np) = (sys.velocity_dofs(), sys.pressure_dofs());
        let mut a = DMatrix::zeros(nu, nu);
        let mut e = vec![0.0; nu];
        let mut col = vec![0.0; nu];
        for j in 0..nu {
            e[j] = 1.0;
            LinearOperator::apply(sys, &e, &mut col);
            a.set_column(j, &DVector::from_column_slice(&col));
            e[j] = 0.0;
        }
        let mut b = DMatrix::zeros(np, nu);
        let mut bcol = vec![0.0; np];
        for j in 0..nu {
            e[j] = 1.0;
            ConstraintOperator::apply(sys, &e, &mut bcol);
            b.set_column(j, &DVector::from_column_slice(&bcol));
            e[j] = 0.0;
        }
        // Zero-mean pressure via a bordered system (one multiplier).
        let m = nu + np + 1;
        let mut k = DMatrix::zeros(m, m);
        k.view_mut((0, 0), (nu, nu)).copy_from(&a);
        k.view_mut((0, nu), (nu, np)).copy_from(&b.transpose());
        k.view_mut((nu, 0), (np, nu)).copy_from(&b);
        for i in 0..np {
            k[(nu + i, m - 1)] = 1.0;
            k[(m - 1, nu + i)] = 1.0;
        }
        let mut rhs = DVector::zeros(m);
        rhs.rows_mut(0, nu).copy_from_slice(&sys.body_force(axis));
        let sol = k.lu().solve(&rhs).unwrap();
        (sol.rows(0, nu).into_owned(), sol.rows(nu, np).into_owned())
    }

    #[test]
    fn tiny_grid_matches_dense_kkt() {
        // Two fluid layers plus an obstacle voxel so the flow is genuinely 3D.
        let mut labels = slab(Axis::Z, 0.5, 4).labels().to_vec();
        labels[1 + 4 * (2 + 4 * 1)] = false;
        let cell = UnitCell::new(4, labels, Scale::Crack).unwrap();
        let sys = MacSystem::new(&cell).unwrap();
        for axis in [Axis::X, Axis::Z] {
            let (u, p) = dense_solution(&sys, axis);
            let flow = sys.solve(axis, 1e-12).unwrap();
            for (a, b) in flow.velocity.iter().zip(u.iter()) {
                assert!((a - b).abs() < 1e-9 * (1.0 + u.amax()), "{a} vs {b}");
            }
            for (a, b) in flow.pressure.iter().zip(p.iter()) {
                assert!((a - b).abs() < 1e-8 * (1.0 + p.amax()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn operator_is_symmetric() {
        let cell = build_cell(&ShapeSpec::Sphere { radius: 0.4 }, 6, Scale::Crack).unwrap();
        let sys = MacSystem::new(&cell).unwrap();
        let n = sys.velocity_dofs();
        let x: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 17) % 7) as f64 - 3.0).collect();
        let (mut ax, mut ay) = (vec![0.0; n], vec![0.0; n]);
        LinearOperator::apply(&sys, &x, &mut ax);
        LinearOperator::apply(&sys, &y, &mut ay);
        assert!((dot(&ax, &y) - dot(&x, &ay)).abs() < 1e-9 * dot(&ax, &y).abs());

        let p: Vec<f64> = (0..sys.pressure_dofs()).map(|i| (i as f64).cos()).collect();
        let (mut bx, mut btp) = (vec![0.0; sys.pressure_dofs()], vec![0.0; n]);
        ConstraintOperator::apply(&sys, &x, &mut bx);
        sys.apply_transpose(&p, &mut btp);
        assert!((dot(&bx, &p) - dot(&x, &btp)).abs() < 1e-9 * dot(&bx, &p).abs().max(1.0));
    }

    #[test]
    fn slab_profile_is_poiseuille() {
        let (n, phi) = (32, 0.5);
        let cell = slab(Axis::Z, phi, n);
        let sys = MacSystem::new(&cell).unwrap();
        let flow = sys.solve(Axis::X, 1e-10).unwrap();
        let h = 1.0 / n as f64;
        for idx in 0..cell.len() {
            let [i, j, k] = cell.coords(idx);
            let v = sys.face_value(&flow.velocity, 0, idx);
            let z = (k as f64 + 0.5) * h;
            let exact = if z < phi { z * (phi - z) / 2.0 } else { 0.0 };
            assert!((v - exact).abs() < 0.02 * phi * phi / 8.0, "({i},{j},{k}) {v} vs {exact}");
            // Profile depends on z only.
            assert_eq!(v, sys.face_value(&flow.velocity, 0, cell.index(0, 0, k)));
        }
        let blocked = sys.solve(Axis::Z, 1e-10).unwrap();
        assert!(blocked.velocity.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn slab_permeability_and_gram_identity() {
        let cell = slab(Axis::Z, 0.5, 32);
        let (sys, sol) = solve_stokes_cells(&cell, 1e-10).unwrap();
        let b = sol.permeability.b_c;
        let exact = 0.125 / 12.0;
        assert!((b[0][0] - exact).abs() < 0.01 * exact);
        assert!((b[1][1] - b[0][0]).abs() < 1e-12);
        assert!(b[2][2].abs() < 1e-8);
        for i in 0..3 {
            for j in 0..3 {
                let gram = sys.energy_product(&sol.flows[i].velocity, &sol.flows[j].velocity);
                assert!((gram - b[i][j]).abs() <= 1e-8 * exact, "({i},{j}) {gram} vs {}", b[i][j]);
            }
        }
        assert!(sol.permeability.symmetry_defect <= 1e-7);
        assert!(sol.permeability.min_eig >= -1e-9);
    }

    #[test]
    fn permeability_converges_at_second_order() {
        let exact = 0.125 / 12.0;
        let err = |n| (compute_bc(&slab(Axis::Z, 0.5, n), 1e-10).unwrap().b_c[0][0] - exact).abs();
        let (e16, e32) = (err(16), err(32));
        assert!((e16 / e32).log2() >= 1.8, "{e16} {e32}");
    }

    #[test]
    fn axis_permutation_permutes_b() {
        let cell = slab(Axis::Z, 0.375, 16);
        let b = compute_bc(&cell, 1e-10).unwrap().b_c;
        // New axis a is old axis perm[a]: the slab normal moves from z to x.
        let perm = [2, 0, 1];
        let bp = compute_bc(&cell.permuted(perm), 1e-10).unwrap().b_c;
        for a in 0..3 {
            for c in 0..3 {
                assert!((bp[a][c] - b[perm[a]][perm[c]]).abs() < 1e-12, "{a}{c}");
            }
        }
    }

    #[test]
    fn isolated_fluid_has_zero_permeability() {
        let cell = build_cell(&ShapeSpec::Sphere { radius: 0.3 }, 12, Scale::Crack).unwrap();
        let res = compute_bc(&cell, 1e-10).unwrap();
        assert!(res.norm() <= 1e-8);
        assert!(!res.connectivity.percolates_any());
    }

    #[test]
    fn empty_and_full_fluid() {
        let solid = UnitCell::uniform(6, Phase::Solid, Scale::Crack).unwrap();
        assert_eq!(compute_bc(&solid, 1e-9).unwrap().b_c, [[0.0; 3]; 3]);
        assert!(solve_stokes_cell(&solid, Axis::X, 1e-9).is_err());
        let full = UnitCell::uniform(6, Phase::Fluid, Scale::Crack).unwrap();
        assert!(compute_bc(&full, 1e-9).is_err());
    }

    #[test]
    fn divergence_free_and_no_slip() {
        let cell = build_cell(&ShapeSpec::Tube { axis: "xy".parse().unwrap(), radius: 0.3 }, 12, Scale::Crack).unwrap();
        let sys = MacSystem::new(&cell).unwrap();
        let flow = sys.solve(Axis::X, 1e-10).unwrap();
        let vmax = flow.velocity.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let h = cell.h();
        for d in sys.divergence(&flow.velocity) {
            assert!(d.abs() * h <= 1e-8 * vmax);
        }
        for idx in 0..cell.len() {
            for d in 0..3 {
                let nb = cell.coords(idx);
                let mut c = nb.map(|v| v as isize);
                c[d] += 1;
                if !cell.is_fluid(idx) || !cell.is_fluid_wrapped(c[0], c[1], c[2]) {
                    assert_eq!(sys.face_value(&flow.velocity, d, idx), 0.0);
                }
            }
        }
    }
}
