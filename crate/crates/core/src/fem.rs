//! Trilinear hexahedral elements on uniform voxel meshes.
//!
//! Every element is a cube of side `h`, so one element matrix serves the
//! whole mesh. Operators are applied matrix-free by gathering over the eight
//! elements around each free node, which parallelizes without write
//! conflicts and keeps the summation order fixed.

use rayon::prelude::*;

use crate::cellgeom::{Phase, UnitCell};
use crate::linsolve::{ConstraintOperator, LinearOperator, Nullspace};
use crate::tensor::Tensor4;

pub const NONE: u32 = u32::MAX;

/// Local corner offsets; corner `a` sits at `(a & 1, (a >> 1) & 1, a >> 2)`.
pub const CORNERS: [[usize; 3]; 8] = {
    let mut c = [[0; 3]; 8];
    let mut a = 0;
    while a < 8 {
        c[a] = [a & 1, (a >> 1) & 1, a >> 2];
        a += 1;
    }
    c
};

/// 2×2×2 Gauss points on the unit cube, each with weight 1/8.
pub fn gauss_points() -> [[f64; 3]; 8] {
    let g = 0.5 / 3f64.sqrt();
    CORNERS.map(|c| c.map(|b| if b == 1 { 0.5 + g } else { 0.5 - g }))
}

/// Physical gradients `∇N_a` at reference point `xi` of an element of side `h`.
pub fn shape_gradients(xi: [f64; 3], h: f64) -> [[f64; 3]; 8] {
    let phi = |bit: usize, t: f64| if bit == 1 { t } else { 1.0 - t };
    let dphi = |bit: usize| if bit == 1 { 1.0 } else { -1.0 };
    let mut g = [[0.0; 3]; 8];
    for (a, c) in CORNERS.iter().enumerate() {
        for d in 0..3 {
            let mut v = dphi(c[d]) / h;
            for e in 0..3 {
                if e != d {
                    v *= phi(c[e], xi[e]);
                }
            }
            g[a][d] = v;
        }
    }
    g
}

/// Raw-Voigt strain rows of node `a`: `ε = Σ_a B_a u_a`.
fn strain_rows(g: [f64; 3]) -> [[f64; 3]; 6] {
    [
        [g[0], 0.0, 0.0],
        [0.0, g[1], 0.0],
        [0.0, 0.0, g[2]],
        [0.0, 0.5 * g[2], 0.5 * g[1]],
        [0.5 * g[2], 0.0, 0.5 * g[0]],
        [0.5 * g[1], 0.5 * g[0], 0.0],
    ]
}

/// Raw-Voigt strain from nodal displacements and shape gradients.
pub fn strain(grads: &[[f64; 3]; 8], u: &[[f64; 3]; 8]) -> [f64; 6] {
    let mut gu = [[0.0; 3]; 3];
    for a in 0..8 {
        for c in 0..3 {
            for d in 0..3 {
                gu[c][d] += u[a][c] * grads[a][d];
            }
        }
    }
    [
        gu[0][0],
        gu[1][1],
        gu[2][2],
        0.5 * (gu[1][2] + gu[2][1]),
        0.5 * (gu[0][2] + gu[2][0]),
        0.5 * (gu[0][1] + gu[1][0]),
    ]
}

/// Element data for the bilinear form `∫ ε(v)ᵀ M ε(u)` on a cube of side `h`.
#[derive(Clone, Debug)]
pub struct ElementKernel {
    pub h: f64,
    /// Symmetric 6×6 form acting on raw Voigt strains.
    pub form: [[f64; 6]; 6],
    /// Element stiffness, node-major: row `3a + c`.
    pub ke: Vec<[f64; 24]>,
    /// `∫_e ∇N_a`.
    pub grad_integrals: [[f64; 3]; 8],
}

impl ElementKernel {
    /// Kernel for `(T:ε(u)):ε(v)` with the symmetric part of `t`.
    pub fn new(t: &Tensor4, h: f64) -> Self {
        Self::from_form(t.weighted_form_sym(), h)
    }

    pub fn from_form(form: [[f64; 6]; 6], h: f64) -> Self {
        let vol = h * h * h / 8.0;
        let mut ke = vec![[0.0; 24]; 24];
        let mut gi = [[0.0; 3]; 8];
        for xi in gauss_points() {
            let g = shape_gradients(xi, h);
            let rows: Vec<[[f64; 3]; 6]> = g.iter().map(|ga| strain_rows(*ga)).collect();
            for a in 0..8 {
                for d in 0..3 {
                    gi[a][d] += vol * g[a][d];
                }
                // M B_b, then B_aᵀ (M B_b)
                for b in 0..8 {
                    let mut mb = [[0.0; 3]; 6];
                    for r in 0..6 {
                        for c in 0..3 {
                            mb[r][c] = (0..6).map(|s| form[r][s] * rows[b][s][c]).sum();
                        }
                    }
                    for ca in 0..3 {
                        for cb in 0..3 {
                            let v: f64 = (0..6).map(|r| rows[a][r][ca] * mb[r][cb]).sum();
                            ke[3 * a + ca][3 * b + cb] += vol * v;
                        }
                    }
                }
            }
        }
        Self { h, form, ke, grad_integrals: gi }
    }

    /// `∫_e ε(N_a e_c)ᵀ M ε̄` for a uniform strain `ε̄`, per node and component.
    pub fn uniform_strain_load(&self, eps: &[f64; 6]) -> [[f64; 3]; 8] {
        let mut me = [0.0; 6];
        for r in 0..6 {
            me[r] = (0..6).map(|s| self.form[r][s] * eps[s]).sum();
        }
        let mut out = [[0.0; 3]; 8];
        for a in 0..8 {
            let rows = strain_rows(self.grad_integrals[a]);
            for c in 0..3 {
                out[a][c] = (0..6).map(|r| rows[r][c] * me[r]).sum();
            }
        }
        out
    }
}

/// Structured mesh of cube elements; some nodes may be fixed at zero.
#[derive(Clone, Debug)]
pub struct HexMesh {
    pub h: f64,
    /// Free-node index of each element corner, or [`NONE`] for a fixed node.
    pub elem_nodes: Vec<[u32; 8]>,
    /// Element having free node `v` as its corner `a`, or [`NONE`].
    pub node_elems: Vec<[u32; 8]>,
    /// Grid cell (`i + n(j + nk)`) of each element.
    pub elem_cells: Vec<u32>,
    /// Grid point of each free node.
    pub node_points: Vec<u32>,
    /// Grid points per axis.
    pub n: usize,
}

impl HexMesh {
    /// Periodic mesh of the solid voxels of `cell`: every solid voxel is an
    /// element, and a grid node is free when any neighboring voxel is solid.
    pub fn periodic_solid(cell: &UnitCell) -> Self {
        let n = cell.n();
        let wrap = |i: isize| i.rem_euclid(n as isize) as usize;
        let mut node_id = vec![NONE; n * n * n];
        let mut node_points = Vec::new();
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let touched = CORNERS.iter().any(|c| {
                        let v = cell.index(
                            wrap(i as isize - c[0] as isize),
                            wrap(j as isize - c[1] as isize),
                            wrap(k as isize - c[2] as isize),
                        );
                        !cell.is_fluid(v)
                    });
                    if touched {
                        let p = cell.index(i, j, k);
                        node_id[p] = node_points.len() as u32;
                        node_points.push(p as u32);
                    }
                }
            }
        }
        let mut elem_cells = Vec::new();
        let mut elem_nodes = Vec::new();
        let mut elem_of_cell = vec![NONE; n * n * n];
        for idx in 0..cell.len() {
            if cell.is_fluid(idx) {
                continue;
            }
            let [i, j, k] = cell.coords(idx);
            elem_of_cell[idx] = elem_cells.len() as u32;
            elem_cells.push(idx as u32);
            elem_nodes.push(CORNERS.map(|c| node_id[cell.index((i + c[0]) % n, (j + c[1]) % n, (k + c[2]) % n)]));
        }
        let node_elems = node_points
            .iter()
            .map(|&p| {
                let [i, j, k] = cell.coords(p as usize);
                CORNERS.map(|c| {
                    elem_of_cell[cell.index(
                        wrap(i as isize - c[0] as isize),
                        wrap(j as isize - c[1] as isize),
                        wrap(k as isize - c[2] as isize),
                    )]
                })
            })
            .collect();
        debug_assert_eq!(cell.phase_count(Phase::Solid), elem_cells.len());
        Self { h: cell.h(), elem_nodes, node_elems, elem_cells, node_points, n }
    }

    /// Unit cube with `m³` elements and all boundary nodes fixed.
    /// Grid points are numbered `i + (m+1)(j + (m+1)k)`.
    pub fn dirichlet_cube(m: usize) -> Self {
        let np = m + 1;
        let point = |i: usize, j: usize, k: usize| i + np * (j + np * k);
        let mut node_id = vec![NONE; np * np * np];
        let mut node_points = Vec::new();
        for k in 1..m {
            for j in 1..m {
                for i in 1..m {
                    node_id[point(i, j, k)] = node_points.len() as u32;
                    node_points.push(point(i, j, k) as u32);
                }
            }
        }
        let mut elem_cells = Vec::with_capacity(m * m * m);
        let mut elem_nodes = Vec::with_capacity(m * m * m);
        for k in 0..m {
            for j in 0..m {
                for i in 0..m {
                    elem_cells.push((i + m * (j + m * k)) as u32);
                    elem_nodes.push(CORNERS.map(|c| node_id[point(i + c[0], j + c[1], k + c[2])]));
                }
            }
        }
        let node_elems = node_points
            .iter()
            .map(|&p| {
                let p = p as usize;
                let (i, j, k) = (p % np, (p / np) % np, p / (np * np));
                CORNERS.map(|c| (i - c[0] + m * (j - c[1] + m * (k - c[2]))) as u32)
            })
            .collect();
        Self { h: 1.0 / m as f64, elem_nodes, node_elems, elem_cells, node_points, n: m }
    }

    pub fn nodes(&self) -> usize {
        self.node_elems.len()
    }

    pub fn elements(&self) -> usize {
        self.elem_nodes.len()
    }

    pub fn dofs(&self) -> usize {
        3 * self.nodes()
    }

    /// Pairs of elements sharing a face, each pair listed once.
    pub fn face_pairs(&self, periodic: bool) -> Vec<[u32; 2]> {
        let n = self.n;
        let mut elem_of_cell = vec![NONE; n * n * n];
        for (e, &c) in self.elem_cells.iter().enumerate() {
            elem_of_cell[c as usize] = e as u32;
        }
        let mut pairs = Vec::new();
        for (e, &c) in self.elem_cells.iter().enumerate() {
            let c = c as usize;
            let ijk = [c % n, (c / n) % n, c / (n * n)];
            for d in 0..3 {
                let mut q = ijk;
                if q[d] + 1 < n {
                    q[d] += 1;
                } else if periodic {
                    q[d] = 0;
                } else {
                    continue;
                }
                let f = elem_of_cell[q[0] + n * (q[1] + n * q[2])];
                if f != NONE && f as usize != e {
                    pairs.push([e as u32, f]);
                }
            }
        }
        pairs
    }

    /// Nodal displacements of element `e` (fixed nodes read as zero).
    #[inline]
    pub fn gather(&self, e: usize, u: &[f64]) -> [[f64; 3]; 8] {
        self.elem_nodes[e].map(|v| {
            if v == NONE {
                [0.0; 3]
            } else {
                let v = 3 * v as usize;
                [u[v], u[v + 1], u[v + 2]]
            }
        })
    }

    /// Translations (one group per displacement component).
    pub fn translation_nullspace(&self) -> Nullspace {
        Nullspace::Groups { labels: (0..self.dofs()).map(|i| Some((i % 3) as u32)).collect(), count: 3 }
    }

    /// `∫ N_v` for every free node.
    pub fn node_volumes(&self) -> Vec<f64> {
        let w = self.h.powi(3) / 8.0;
        self.node_elems
            .iter()
            .map(|es| es.iter().filter(|e| **e != NONE).count() as f64 * w)
            .collect()
    }

    /// `∫ u` over the mesh, per component.
    pub fn integral(&self, u: &[f64]) -> [f64; 3] {
        let mut s = [0.0; 3];
        for (v, w) in self.node_volumes().into_iter().enumerate() {
            for c in 0..3 {
                s[c] += w * u[3 * v + c];
            }
        }
        s
    }

    /// Shifts `u` so that `∫ u = 0` over the mesh.
    pub fn remove_mean(&self, u: &mut [f64]) {
        let vol: f64 = self.node_volumes().iter().sum();
        if vol == 0.0 {
            return;
        }
        let m = self.integral(u).map(|s| s / vol);
        for (i, x) in u.iter_mut().enumerate() {
            *x -= m[i % 3];
        }
    }

    /// `∫ ε(u)` in raw Voigt components (exact for trilinear fields).
    pub fn strain_integral(&self, kernel: &ElementKernel, u: &[f64]) -> [f64; 6] {
        let mut s = [0.0; 6];
        for e in 0..self.elements() {
            let ue = self.gather(e, u);
            let mut gu = [[0.0; 3]; 3];
            for a in 0..8 {
                for c in 0..3 {
                    for d in 0..3 {
                        gu[c][d] += ue[a][c] * kernel.grad_integrals[a][d];
                    }
                }
            }
            s[0] += gu[0][0];
            s[1] += gu[1][1];
            s[2] += gu[2][2];
            s[3] += 0.5 * (gu[1][2] + gu[2][1]);
            s[4] += 0.5 * (gu[0][2] + gu[2][0]);
            s[5] += 0.5 * (gu[0][1] + gu[1][0]);
        }
        s
    }

    /// `∫_e div u` per element.
    pub fn element_divergence(&self, kernel: &ElementKernel, u: &[f64]) -> Vec<f64> {
        (0..self.elements())
            .into_par_iter()
            .map(|e| {
                let ue = self.gather(e, u);
                (0..8).map(|a| (0..3).map(|c| ue[a][c] * kernel.grad_integrals[a][c]).sum::<f64>()).sum()
            })
            .collect()
    }

    /// Gauss-point quadrature of `∫ (ε(u) + ε̄_u)ᵀ M (ε(w) + ε̄_w)` with
    /// uniform strain offsets, computed from pointwise strains.
    pub fn energy_quadrature(
        &self,
        form: &[[f64; 6]; 6],
        u: &[f64],
        eps_u: &[f64; 6],
        w: &[f64],
        eps_w: &[f64; 6],
    ) -> f64 {
        let grads: Vec<[[f64; 3]; 8]> = gauss_points().iter().map(|xi| shape_gradients(*xi, self.h)).collect();
        let wq = self.h.powi(3) / 8.0;
        let partial: Vec<f64> = (0..self.elements())
            .into_par_iter()
            .map(|e| {
                let (ue, we) = (self.gather(e, u), self.gather(e, w));
                let mut acc = 0.0;
                for g in &grads {
                    let mut su = strain(g, &ue);
                    let mut sw = strain(g, &we);
                    for r in 0..6 {
                        su[r] += eps_u[r];
                        sw[r] += eps_w[r];
                    }
                    for r in 0..6 {
                        for s in 0..6 {
                            acc += sw[r] * form[r][s] * su[s];
                        }
                    }
                }
                acc * wq
            })
            .collect();
        partial.into_iter().sum()
    }

    /// Load vector `−∫ ε(φ)ᵀ M ε̄` for a uniform strain `ε̄`.
    pub fn uniform_strain_rhs(&self, kernel: &ElementKernel, eps: &[f64; 6]) -> Vec<f64> {
        let local = kernel.uniform_strain_load(eps);
        let mut f = vec![0.0; self.dofs()];
        f.par_chunks_mut(3).enumerate().for_each(|(v, fv)| {
            for (a, &e) in self.node_elems[v].iter().enumerate() {
                if e != NONE {
                    for c in 0..3 {
                        fv[c] -= local[a][c];
                    }
                }
            }
        });
        f
    }
}

/// Matrix-free stiffness `u ↦ K u` of one kernel on a mesh.
pub struct StiffnessOperator<'a> {
    pub mesh: &'a HexMesh,
    pub kernel: &'a ElementKernel,
}

impl LinearOperator for StiffnessOperator<'_> {
    fn dim(&self) -> usize {
        self.mesh.dofs()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mesh = self.mesh;
        let ke = &self.kernel.ke;
        y.par_chunks_mut(3).enumerate().for_each(|(v, yv)| {
            let mut acc = [0.0; 3];
            for (a, &e) in mesh.node_elems[v].iter().enumerate() {
                if e == NONE {
                    continue;
                }
                let ue = mesh.gather(e as usize, x);
                for c in 0..3 {
                    let row = &ke[3 * a + c];
                    let mut s = 0.0;
                    for b in 0..8 {
                        s += row[3 * b] * ue[b][0] + row[3 * b + 1] * ue[b][1] + row[3 * b + 2] * ue[b][2];
                    }
                    acc[c] += s;
                }
            }
            yv.copy_from_slice(&acc);
        });
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let mut d = vec![0.0; self.dim()];
        for (v, es) in self.mesh.node_elems.iter().enumerate() {
            for (a, &e) in es.iter().enumerate() {
                if e != NONE {
                    for c in 0..3 {
                        d[3 * v + c] += self.kernel.ke[3 * a + c][3 * a + c];
                    }
                }
            }
        }
        Some(d)
    }
}

/// `(B u)_e = coef · ∫_e div u`, one row per element.
pub struct DivergenceOperator<'a> {
    pub mesh: &'a HexMesh,
    pub kernel: &'a ElementKernel,
    pub coef: f64,
}

impl ConstraintOperator for DivergenceOperator<'_> {
    fn rows(&self) -> usize {
        self.mesh.elements()
    }

    fn cols(&self) -> usize {
        self.mesh.dofs()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let gi = &self.kernel.grad_integrals;
        y.par_iter_mut().enumerate().for_each(|(e, ye)| {
            let ue = self.mesh.gather(e, x);
            let mut s = 0.0;
            for a in 0..8 {
                s += ue[a][0] * gi[a][0] + ue[a][1] * gi[a][1] + ue[a][2] * gi[a][2];
            }
            *ye = self.coef * s;
        });
    }

    fn apply_transpose(&self, p: &[f64], y: &mut [f64]) {
        let gi = &self.kernel.grad_integrals;
        y.par_chunks_mut(3).enumerate().for_each(|(v, yv)| {
            let mut acc = [0.0; 3];
            for (a, &e) in self.mesh.node_elems[v].iter().enumerate() {
                if e != NONE {
                    let pe = self.coef * p[e as usize];
                    for c in 0..3 {
                        acc[c] += pe * gi[a][c];
                    }
                }
            }
            yv.copy_from_slice(&acc);
        });
    }
}

/// Element-pressure jump penalty `β Σ_faces (p_e − p_f)(q_e − q_f)` over
/// faces shared by two elements of the mesh.
pub struct JumpStabilization {
    pub pairs: Vec<[u32; 2]>,
    /// Neighbor elements of each element (`NONE`-padded).
    pub neighbors: Vec<[u32; 6]>,
    pub beta: f64,
}

impl JumpStabilization {
    pub fn new(elements: usize, pairs: Vec<[u32; 2]>, beta: f64) -> Self {
        let mut neighbors = vec![[NONE; 6]; elements];
        let mut fill = vec![0usize; elements];
        for &[e, f] in &pairs {
            for (a, b) in [(e, f), (f, e)] {
                neighbors[a as usize][fill[a as usize]] = b;
                fill[a as usize] += 1;
            }
        }
        Self { pairs, neighbors, beta }
    }

    pub fn for_mesh(mesh: &HexMesh, periodic: bool, beta: f64) -> Self {
        Self::new(mesh.elements(), mesh.face_pairs(periodic), beta)
    }
}

impl LinearOperator for JumpStabilization {
    fn dim(&self) -> usize {
        self.neighbors.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(e, ye)| {
            let mut s = 0.0;
            for &f in &self.neighbors[e] {
                if f != NONE {
                    s += x[e] - x[f as usize];
                }
            }
            *ye = self.beta * s;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellgeom::{build_cell, Scale, ShapeSpec};
    use crate::linsolve::dot;

    #[test]
    fn shape_gradients_partition_of_unity() {
        for xi in gauss_points() {
            let g = shape_gradients(xi, 0.25);
            for d in 0..3 {
                assert!(g.iter().map(|ga| ga[d]).sum::<f64>().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_integrals() {
        let k = ElementKernel::new(&Tensor4::sym_identity(), 0.5);
        for (a, c) in CORNERS.iter().enumerate() {
            for d in 0..3 {
                let expected = if c[d] == 1 { 0.0625 } else { -0.0625 };
                assert!((k.grad_integrals[a][d] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn element_matrix_properties() {
        let h = 0.3;
        let k = ElementKernel::new(&Tensor4::sym_identity(), h);
        // Symmetric, rigid translations in the kernel.
        for r in 0..24 {
            for c in 0..24 {
                assert!((k.ke[r][c] - k.ke[c][r]).abs() < 1e-14);
            }
            for comp in 0..3 {
                let s: f64 = (0..8).map(|b| k.ke[r][3 * b + comp]).sum();
                assert!(s.abs() < 1e-13);
            }
        }
        // Uniform strain energy: uᵀKu = |e| ε:ε for u = ε x.
        let eps = [0.1, -0.2, 0.05, 0.3, -0.1, 0.2];
        let emat = crate::tensor::SymMat3(eps).to_matrix();
        let u: Vec<f64> = CORNERS
            .iter()
            .flat_map(|c| {
                let x = c.map(|b| b as f64 * h);
                (0..3).map(move |i| (0..3).map(|j| emat[i][j] * x[j]).sum::<f64>())
            })
            .collect();
        let energy: f64 = (0..24).map(|r| (0..24).map(|c| u[r] * k.ke[r][c] * u[c]).sum::<f64>()).sum();
        let zz = crate::tensor::SymMat3(eps).ddot(&crate::tensor::SymMat3(eps));
        assert!((energy - h.powi(3) * zz).abs() < 1e-14);
    }

    #[test]
    fn gather_operator_matches_energy_quadrature() {
        let cell = build_cell(&ShapeSpec::Sphere { radius: 0.3 }, 6, Scale::Pore).unwrap();
        let mesh = HexMesh::periodic_solid(&cell);
        let k = ElementKernel::new(&Tensor4::sym_identity(), mesh.h);
        let op = StiffnessOperator { mesh: &mesh, kernel: &k };
        let u: Vec<f64> = (0..mesh.dofs()).map(|i| ((i * 13) % 7) as f64 * 0.1).collect();
        let w: Vec<f64> = (0..mesh.dofs()).map(|i| ((i * 5) % 11) as f64 * -0.05).collect();
        let mut ku = vec![0.0; u.len()];
        op.apply(&u, &mut ku);
        let quad = mesh.energy_quadrature(&k.form, &u, &[0.0; 6], &w, &[0.0; 6]);
        assert!((dot(&ku, &w) - quad).abs() < 1e-12 * quad.abs());
    }

    #[test]
    fn divergence_transpose_and_translation() {
        let mesh = HexMesh::dirichlet_cube(4);
        let k = ElementKernel::new(&Tensor4::sym_identity(), mesh.h);
        let b = DivergenceOperator { mesh: &mesh, kernel: &k, coef: -2.0 };
        let u: Vec<f64> = (0..mesh.dofs()).map(|i| (i as f64 * 0.7).sin()).collect();
        let p: Vec<f64> = (0..mesh.elements()).map(|i| (i as f64 * 0.3).cos()).collect();
        let (mut bu, mut btp) = (vec![0.0; mesh.elements()], vec![0.0; mesh.dofs()]);
        b.apply(&u, &mut bu);
        b.apply_transpose(&p, &mut btp);
        assert!((dot(&bu, &p) - dot(&u, &btp)).abs() < 1e-13);

        let cell = build_cell(&ShapeSpec::Slab { axis: crate::cellgeom::Axis::Z, fraction: 0.5 }, 4, Scale::Pore).unwrap();
        let pm = HexMesh::periodic_solid(&cell);
        let t: Vec<f64> = (0..pm.dofs()).map(|i| [1.0, -2.0, 0.5][i % 3]).collect();
        assert!(pm.element_divergence(&k, &t).iter().all(|d| d.abs() < 1e-15));
        assert_eq!(pm.elements(), 32);
        // Solid layers k = 2, 3 touch node planes 2, 3 and 0 (periodic).
        assert_eq!(pm.nodes(), 48);
    }
}
