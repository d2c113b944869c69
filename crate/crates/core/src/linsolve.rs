//! Matrix-free Krylov solvers: Jacobi-preconditioned CG with nullspace
//! projection and a pressure-Schur-complement (Uzawa) driver for saddle-point
//! systems.
//!
//! All reductions use fixed-size chunks combined sequentially, so results are
//! bitwise reproducible for a given input regardless of the rayon pool size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHUNK: usize = 4096;

/// Relative size, against `‖B‖‖x₀‖`, below which an initial constraint
/// residual is treated as round-off.
const ROUNDOFF_FLOOR: f64 = 1e-6;

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = A x`; `y` is overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Main diagonal, used for Jacobi preconditioning when available.
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }

    /// Whether the operator is symmetric positive (semi)definite.
    fn is_spd(&self) -> bool {
        true
    }
}

/// Rectangular operator `B: primal -> constraint space`.
pub trait ConstraintOperator: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `y = B x` with `x.len() == cols()`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// `y = Bᵀ p` with `p.len() == rows()`.
    fn apply_transpose(&self, p: &[f64], y: &mut [f64]);
}

/// Exact nullspace of an operator, removed by Euclidean projection.
#[derive(Clone, Debug, Default)]
pub enum Nullspace {
    #[default]
    None,
    /// Piecewise constants: entries sharing a label form one nullspace
    /// vector. Unlabelled entries are not touched.
    Groups { labels: Vec<Option<u32>>, count: usize },
}

impl Nullspace {
    pub fn constants(len: usize) -> Self {
        Nullspace::Groups { labels: vec![Some(0); len], count: 1 }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Nullspace::None => 0,
            Nullspace::Groups { count, .. } => *count,
        }
    }

    /// Per-group sums and sizes.
    pub fn group_sums(&self, v: &[f64]) -> Vec<(f64, usize)> {
        match self {
            Nullspace::None => Vec::new(),
            Nullspace::Groups { labels, count } => {
                let mut acc = vec![(0.0, 0usize); *count];
                for (x, l) in v.iter().zip(labels) {
                    if let Some(g) = l {
                        acc[*g as usize].0 += x;
                        acc[*g as usize].1 += 1;
                    }
                }
                acc
            }
        }
    }

    /// Removes the nullspace component in place (subtracts group means).
    pub fn project(&self, v: &mut [f64]) {
        if let Nullspace::Groups { labels, .. } = self {
            let means: Vec<f64> = self
                .group_sums(v)
                .into_iter()
                .map(|(s, c)| if c > 0 { s / c as f64 } else { 0.0 })
                .collect();
            v.par_iter_mut().zip(labels.par_iter()).for_each(|(x, l)| {
                if let Some(g) = l {
                    *x -= means[*g as usize];
                }
            });
        }
    }
}

/// Reproducible parallel dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.into_iter().sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(y, x)| *y += alpha * x);
}

/// `y = x + beta * y`.
fn xpby(x: &[f64], beta: f64, y: &mut [f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(y, x)| *y = x + beta * *y);
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// Total inner CG iterations of a saddle solve.
    #[serde(skip_serializing_if = "is_zero", default)]
    pub inner_iterations: usize,
    #[serde(skip)]
    pub residual_history: Vec<f64>,
    /// CG: values of `½xᵀAx − bᵀx` after each iteration.
    #[serde(skip)]
    pub energy_history: Vec<f64>,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl SolveReport {
    /// Turns a non-converged report into a solver error.
    pub fn require(&self, stage: &str) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::solver(
                stage,
                format!(
                    "no convergence after {} iterations (relative residual {:.3e})",
                    self.iterations, self.relative_residual
                ),
            ))
        }
    }
}

#[derive(Clone, Debug)]
pub struct CgOptions<'a> {
    pub tol: f64,
    pub max_iter: usize,
    pub nullspace: &'a Nullspace,
    pub record_history: bool,
}

impl Default for CgOptions<'_> {
    fn default() -> Self {
        static NONE: Nullspace = Nullspace::None;
        Self { tol: 1e-9, max_iter: 10_000, nullspace: &NONE, record_history: false }
    }
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Solves `A x = b` from a zero initial guess.
pub fn cg(a: &dyn LinearOperator, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    cg_with(a, b, None, &CgOptions { tol, max_iter, ..Default::default() })
}

/// Preconditioned CG on the complement of `opts.nullspace`.
///
/// `b` is projected first; the returned `x` is orthogonal to the nullspace.
/// Convergence is judged on the true residual `‖b − Ax‖ / ‖b‖`.
pub fn cg_with(
    a: &dyn LinearOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::invalid(format!("right-hand side has length {}, operator dimension {n}", b.len())));
    }
    let ns = opts.nullspace;
    let mut rhs = b.to_vec();
    ns.project(&mut rhs);
    let bnorm = norm(&rhs);
    check_finite(bnorm, "CG right-hand side")?;
    let mut report = SolveReport::default();
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    ns.project(&mut x);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        report.converged = true;
        return Ok((x, report));
    }

    let inv_diag: Option<Vec<f64>> = a.diagonal().map(|d| {
        d.into_iter().map(|v| if v > 0.0 && v.is_finite() { 1.0 / v } else { 1.0 }).collect()
    });
    let precondition = |r: &[f64], z: &mut [f64]| {
        match &inv_diag {
            Some(m) => z.par_iter_mut().zip(r.par_iter().zip(m.par_iter())).for_each(|(z, (r, m))| *z = r * m),
            None => z.copy_from_slice(r),
        }
        ns.project(z);
    };

    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64], scratch: &mut [f64]| {
        a.apply(x, scratch);
        r.par_iter_mut()
            .zip(rhs.par_iter().zip(scratch.par_iter()))
            .for_each(|(r, (b, ax))| *r = b - ax);
        ns.project(r);
    };
    true_residual(&x, &mut r, &mut ap);
    let mut rel = norm(&r) / bnorm;
    check_finite(rel, "CG residual")?;
    let energy = |x: &[f64], r: &[f64]| -0.5 * (dot(x, &rhs) + dot(x, r));
    if opts.record_history {
        report.residual_history.push(rel);
        report.energy_history.push(energy(&x, &r));
    }

    let mut it = 0;
    // Outer loop restarts from the true residual if the recursive one drifted.
    while rel > opts.tol && it < opts.max_iter {
        precondition(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while it < opts.max_iter {
            a.apply(&p, &mut ap);
            ns.project(&mut ap);
            let pap = dot(&p, &ap);
            check_finite(pap, "CG search direction")?;
            if pap <= 0.0 {
                if pap == 0.0 {
                    break;
                }
                return Err(Error::solver("cg", format!("operator not positive definite (pᵀAp = {pap:.3e})")));
            }
            let alpha = rz / pap;
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &ap, &mut r);
            it += 1;
            let rn = norm(&r) / bnorm;
            check_finite(rn, "CG residual")?;
            if opts.record_history {
                report.residual_history.push(rn);
                report.energy_history.push(energy(&x, &r));
            }
            if rn <= opts.tol {
                break;
            }
            precondition(&r, &mut z);
            let rz_new = dot(&r, &z);
            xpby(&z, rz_new / rz, &mut p);
            rz = rz_new;
        }
        let mut scratch = std::mem::take(&mut ap);
        true_residual(&x, &mut r, &mut scratch);
        ap = scratch;
        let new_rel = norm(&r) / bnorm;
        check_finite(new_rel, "CG residual")?;
        if new_rel >= rel && new_rel > opts.tol {
            // No progress possible (stagnation at round-off level).
            rel = new_rel;
            break;
        }
        rel = new_rel;
    }
    ns.project(&mut x);
    report.iterations = it;
    report.relative_residual = rel;
    report.converged = rel <= opts.tol;
    Ok((x, report))
}

#[derive(Clone, Debug)]
pub struct SaddleOptions<'a> {
    pub tol: f64,
    /// Inner CG tolerance; `None` means `tol × 1e-3`.
    pub inner_tol: Option<f64>,
    pub max_outer: usize,
    pub max_inner: usize,
    pub primal_nullspace: &'a Nullspace,
    pub pressure_nullspace: &'a Nullspace,
    /// Named in compatibility errors.
    pub constraint_name: &'a str,
    pub x0: Option<&'a [f64]>,
    pub p0: Option<&'a [f64]>,
}

impl Default for SaddleOptions<'_> {
    fn default() -> Self {
        static NONE: Nullspace = Nullspace::None;
        Self {
            tol: 1e-9,
            inner_tol: None,
            max_outer: 2_000,
            max_inner: 20_000,
            primal_nullspace: &NONE,
            pressure_nullspace: &NONE,
            constraint_name: "constraint",
            x0: None,
            p0: None,
        }
    }
}

/// Result of [`saddle_solve`].
#[derive(Clone, Debug)]
pub struct SaddleSolution {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub report: SolveReport,
}

/// Largest singular value of `B`, estimated by power iteration on `BᵀB`.
pub fn estimate_norm(b: &dyn ConstraintOperator, iterations: usize) -> f64 {
    let mut v: Vec<f64> = (0..b.cols()).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
    let mut bv = vec![0.0; b.rows()];
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let vn = norm(&v);
        if vn == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= vn);
        b.apply(&v, &mut bv);
        sigma = norm(&bv);
        b.apply_transpose(&bv, &mut v);
    }
    sigma
}

/// Solves
///
/// ```text
/// A x + Bᵀ p = f
/// B x − C p = g
/// ```
///
/// by CG on the pressure Schur complement `S = B A⁻¹ Bᵀ + C`, with inner CG
/// solves for `A⁻¹`. `C` is optional and must be symmetric positive
/// semidefinite. The pressure is projected against `pressure_nullspace`,
/// which must lie in the kernels of `Bᵀ` and `C`; `g` must then be
/// orthogonal to it.
///
/// The reported residual is `‖Bx − Cp − g‖` relative to its initial value
/// (or `‖g‖` if larger). An initial residual that is only round-off compared
/// with `‖B‖‖x₀‖` does not count as a reference, so an already admissible
/// first iterate is accepted instead of iterating on noise.
pub fn saddle_solve(
    a: &dyn LinearOperator,
    b: &dyn ConstraintOperator,
    c: Option<&dyn LinearOperator>,
    f: &[f64],
    g: &[f64],
    opts: &SaddleOptions,
) -> Result<SaddleSolution> {
    let (nx, np) = (a.dim(), b.rows());
    if b.cols() != nx || f.len() != nx || g.len() != np {
        return Err(Error::invalid(format!(
            "saddle system size mismatch: A {nx}, B {}×{}, f {}, g {}",
            b.rows(),
            b.cols(),
            f.len(),
            g.len()
        )));
    }
    let pns = opts.pressure_nullspace;
    check_compatibility(g, pns, opts.constraint_name)?;

    let inner = CgOptions {
        // Tighter inner tolerances sit below round-off on large cells.
        tol: opts.inner_tol.unwrap_or(opts.tol * 1e-3).max(1e-12),
        max_iter: opts.max_inner,
        nullspace: opts.primal_nullspace,
        record_history: false,
    };
    let mut report = SolveReport::default();
    let inner_solve = |rhs: &[f64], x0: Option<&[f64]>, report: &mut SolveReport| -> Result<Vec<f64>> {
        let (x, rep) = cg_with(a, rhs, x0, &inner)?;
        report.inner_iterations += rep.iterations;
        if !rep.converged {
            return Err(Error::solver(
                "saddle inner solve",
                format!("no convergence after {} iterations (relative residual {:.3e})", rep.iterations, rep.relative_residual),
            ));
        }
        Ok(x)
    };

    let mut p = match opts.p0 {
        Some(p0) => p0.to_vec(),
        None => vec![0.0; np],
    };
    pns.project(&mut p);
    let mut btp = vec![0.0; nx];
    let mut rhs = vec![0.0; nx];
    let momentum_rhs = |p: &[f64], btp: &mut [f64], rhs: &mut [f64]| {
        b.apply_transpose(p, btp);
        rhs.par_iter_mut()
            .zip(f.par_iter().zip(btp.par_iter()))
            .for_each(|(r, (f, bp))| *r = f - bp);
    };
    momentum_rhs(&p, &mut btp, &mut rhs);
    let mut x = inner_solve(&rhs, opts.x0, &mut report)?;

    let floor = ROUNDOFF_FLOOR * estimate_norm(b, 20) * norm(&x);

    let mut cp = vec![0.0; np];
    let constraint_residual = |x: &[f64], p: &[f64], r: &mut [f64], cp: &mut [f64]| {
        b.apply(x, r);
        if let Some(c) = c {
            c.apply(p, cp);
            axpy(-1.0, cp, r);
        }
        axpy(-1.0, g, r);
        pns.project(r);
    };
    let mut r = vec![0.0; np];
    constraint_residual(&x, &p, &mut r, &mut cp);
    let reference = norm(&r).max(norm(g)).max(floor);
    if reference == 0.0 {
        report.converged = true;
        return Ok(SaddleSolution { x, p, report });
    }
    let mut rel = norm(&r) / reference;
    check_finite(rel, "saddle residual")?;
    report.residual_history.push(rel);

    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let mut sd = vec![0.0; np];
    let mut bt = vec![0.0; nx];
    let mut it = 0;
    while rel > opts.tol && it < opts.max_outer {
        // w = A⁻¹ Bᵀ d, S d = B w + C d
        b.apply_transpose(&d, &mut bt);
        let w = inner_solve(&bt, None, &mut report)?;
        b.apply(&w, &mut sd);
        if let Some(c) = c {
            c.apply(&d, &mut cp);
            axpy(1.0, &cp, &mut sd);
        }
        pns.project(&mut sd);
        let dsd = dot(&d, &sd);
        check_finite(dsd, "Schur complement")?;
        if dsd <= 0.0 {
            break;
        }
        let alpha = rr / dsd;
        axpy(alpha, &d, &mut p);
        axpy(-alpha, &w, &mut x);
        axpy(-alpha, &sd, &mut r);
        it += 1;
        let rr_new = dot(&r, &r);
        rel = rr_new.sqrt() / reference;
        check_finite(rel, "saddle residual")?;
        report.residual_history.push(rel);
        xpby(&r, rr_new / rr, &mut d);
        rr = rr_new;
    }

    // Fresh momentum solve so that x matches the final pressure exactly.
    pns.project(&mut p);
    momentum_rhs(&p, &mut btp, &mut rhs);
    x = inner_solve(&rhs, Some(&x), &mut report)?;
    constraint_residual(&x, &p, &mut r, &mut cp);
    rel = norm(&r) / reference;
    report.iterations = it;
    report.relative_residual = rel;
    report.converged = rel <= opts.tol;
    Ok(SaddleSolution { x, p, report })
}

/// `g` must be orthogonal to every declared pressure-nullspace vector.
fn check_compatibility(g: &[f64], pns: &Nullspace, name: &str) -> Result<()> {
    let scale: f64 = g.iter().map(|v| v.abs()).sum();
    for (group, (sum, count)) in pns.group_sums(g).into_iter().enumerate() {
        if count > 0 && sum.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::invalid(format!(
                "incompatible right-hand side for constraint '{name}': \
                 component {group} has net source {sum:.6e} (must vanish)"
            )));
        }
    }
    Ok(())
}
