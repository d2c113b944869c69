//! Small-scale invariant battery behind `poroscale verify`.

use poroscale::cellgeom::{build_cell, Axis, AxisSet, Scale, ShapeSpec};
use poroscale::elasticell::{assemble_ac, assemble_as, solve_crack_cell, solve_pore_cell, CellSolverSettings};
use poroscale::macrosolve::{
    rigid_limit_study, run_case2, solve_rigid_darcy, ForceSpec, MacroCoefficients, MacroConfig, MacroGrid, MacroSettings,
    Ramp,
};
use poroscale::stokescell::compute_bc;
use poroscale::tensor::{compose, contract, SymMat3, Tensor4};
use poroscale::upscale::{classify, run_pipeline, CellSpec, Mu1, PipelineConfig, Regime, BOOKKEEPING_TOL};
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

type Outcome = poroscale::Result<(bool, String)>;

fn tensor_algebra() -> Outcome {
    let j = Tensor4::sym_identity();
    let z = SymMat3::new([0.3, -1.2, 0.7, 0.25, -0.4, 0.9]);
    let jz = (contract(&j, &z) - z).max_abs();
    let jj = (compose(&j, &j) - j).norm();
    let min_eig = j.spd_report(1e-12).min_eig;
    let ok = jz < 1e-15 && jj < 1e-15 && (min_eig - 1.0).abs() < 1e-12;
    Ok((ok, format!("|J:z - z| = {jz:.1e}, |J.J - J| = {jj:.1e}, min eig of J = {min_eig}")))
}

fn poiseuille() -> Outcome {
    let phi = 0.5;
    let cell = build_cell(&ShapeSpec::Slab { axis: Axis::Z, fraction: phi }, 32, Scale::Crack)?;
    let b = compute_bc(&cell, 1e-10)?.b_c;
    let exact = phi.powi(3) / 12.0;
    let e1 = (b[0][0] / exact - 1.0).abs();
    let e2 = (b[1][1] / exact - 1.0).abs();
    let ok = e1 <= 0.01 && e2 <= 0.01 && b[2][2].abs() <= 1e-8;
    Ok((ok, format!("B11 = {:.7}, B22 = {:.7}, B33 = {:.1e}, closed form {exact:.7}", b[0][0], b[1][1], b[2][2])))
}

fn disconnected_cracks() -> Outcome {
    let cell = build_cell(&ShapeSpec::Sphere { radius: 0.3 }, 8, Scale::Crack)?;
    let p = compute_bc(&cell, 1e-10)?;
    let regime = classify(Mu1::Finite(1.0), &p.connectivity);
    Ok((p.norm() <= 1e-8 && regime == Regime::CaseI, format!("|B_c| = {:.1e}, regime {regime}", p.norm())))
}

fn pipeline_identities() -> Outcome {
    let tol = 1e-9;
    let cfg = PipelineConfig {
        pore: CellSpec { n: 6, geometry: ShapeSpec::Sphere { radius: 0.3 } },
        crack: CellSpec { n: 6, geometry: ShapeSpec::Tube { axis: AxisSet::single(Axis::X), radius: 0.25 } },
        mu1: Mu1::Finite(1.0),
        lambda0: 1.0,
        rho_f: 1.0,
        rho_s: 2.5,
        elastic: CellSolverSettings { tol, ..Default::default() },
        stokes_tol: 1e-9,
    };
    let eff = run_pipeline(&cfg)?;
    let ids = eff.diagnostics.identities.max();
    let inv = &eff.diagnostics.invariants;
    let ok = ids <= 10.0 * tol
        && inv.porosity <= BOOKKEEPING_TOL
        && inv.density <= BOOKKEEPING_TOL
        && eff.regime == Regime::CaseII
        && eff.diagnostics.pore.a_c_report.is_spd()
        && eff.diagnostics.crack.a_s_report.is_spd();
    Ok((ok, format!("identity residual {ids:.1e}, regime {}, porosity defect {:.1e}", eff.regime, inv.porosity)))
}

fn degenerate_crack() -> Outcome {
    let settings = CellSolverSettings::default();
    let pore = solve_pore_cell(&build_cell(&ShapeSpec::Sphere { radius: 0.3 }, 6, Scale::Pore)?, &settings)?;
    let a_c = assemble_ac(&pore).a_c;
    let solid = build_cell(&ShapeSpec::Sphere { radius: 0.0 }, 6, Scale::Crack)?;
    let a_s = assemble_as(&solve_crack_cell(&solid, &a_c, &settings)?, &a_c).a_s;
    let d = (a_s - a_c).norm() / a_c.norm();
    Ok((d <= 1e-12, format!("|A_s - A_c| / |A_c| = {d:.1e}")))
}

fn macro_coefficients() -> MacroCoefficients {
    MacroCoefficients {
        m_p: 0.2,
        m_c: 0.1,
        m: 0.28,
        rho_f: 1.0,
        rho_hat: 2.08,
        mu1: Mu1::Finite(1.0),
        lambda0: 1.0,
        regime: Regime::CaseII,
        b_c: [[0.02, 0.004, 0.0], [0.004, 0.015, 0.002], [0.0, 0.002, 0.01]],
        a_s: Tensor4::sym_identity().scale(0.8) + Tensor4::identity_outer().scale(0.3),
    }
}

fn conservative_darcy() -> Outcome {
    let force = ForceSpec::Potential { linear: [0.2, -0.5, 1.0], quadratic: [1.0, 0.5, -2.0] };
    let cfg = MacroConfig {
        settings: MacroSettings { n: 6, force: force.clone(), tol: 1e-12, ..Default::default() },
        coefficients: macro_coefficients(),
    };
    let r = solve_rigid_darcy(&cfg, 0.0)?;
    let c = &cfg.coefficients;
    let grid = MacroGrid::new(6);
    let mut expected: Vec<f64> =
        (0..grid.elements()).map(|e| c.m * c.rho_f * force.potential(grid.element_center(e)).unwrap_or(0.0)).collect();
    let mean = expected.iter().sum::<f64>() / expected.len() as f64;
    expected.iter_mut().for_each(|v| *v -= mean);
    let dq = r.q.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let dv = r.v_c.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    Ok((dq <= 1e-6 && dv <= 1e-6, format!("max |q - m rho_f Phi| = {dq:.1e}, max |v_c| = {dv:.1e}")))
}

fn rigid_limit() -> Outcome {
    let settings = MacroSettings {
        n: 6,
        dt: 0.1,
        t_end: 0.3,
        ramp: Ramp::Linear { duration: 0.3 },
        tol: 1e-10,
        ..Default::default()
    };
    let tol = settings.tol;
    let cfg = MacroConfig { settings, coefficients: macro_coefficients() };
    let run = run_case2(&cfg)?;
    let cont = run.max_continuity_residual();
    let rows = rigid_limit_study(&cfg, &[1e2, 1e4, 1e6])?;
    let dec = |f: fn(&poroscale::macrosolve::RigidLimitRow) -> f64| rows.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    let drop = rows[0].grad_u_l2 / rows[2].grad_u_l2;
    let ok = cont <= 10.0 * tol && dec(|r| r.grad_u_l2) && dec(|r| r.q_error) && dec(|r| r.v_error) && drop >= 1e3;
    Ok((ok, format!("grad u drop {drop:.2e}, continuity residual {cont:.1e}")))
}

pub fn run_all() -> VerifyReport {
    let battery: [(&str, fn() -> Outcome); 7] = [
        ("tensor-algebra", tensor_algebra),
        ("poiseuille", poiseuille),
        ("disconnected-cracks", disconnected_cracks),
        ("pipeline-identities", pipeline_identities),
        ("degenerate-crack", degenerate_crack),
        ("conservative-darcy", conservative_darcy),
        ("rigid-limit", rigid_limit),
    ];
    let checks = battery
        .into_iter()
        .map(|(name, f)| {
            let (passed, detail) = match f() {
                Ok(r) => r,
                Err(e) => (false, e.to_string()),
            };
            Check { name: name.to_string(), passed, detail }
        })
        .collect();
    VerifyReport { checks }
}
