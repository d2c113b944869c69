//! Acceptance suite. Every test prints one `criterion N PASS|FAIL: ...`
//! line (visible with `--nocapture`) before asserting.

use std::fs;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use poroscale::cellgeom::{build_cell, Axis, AxisSet, Scale, ShapeSpec};
use poroscale::elasticell::{
    assemble_ac, assemble_as, energy_form_ac, energy_form_as, identity_suite, solve_crack_cell, solve_pore_cell,
    CellSolverSettings, SYMMETRY_TOL,
};
use poroscale::macrosolve::{
    manufactured_errors, observed_orders, rigid_limit_study, run_case2, solve_rigid_darcy, ForceSpec, MacroCoefficients,
    MacroConfig, MacroGrid, MacroSettings, Ramp,
};
use poroscale::stokescell::compute_bc;
use poroscale::tensor::SymMat3;
use poroscale::upscale::{classify, run_pipeline, CellSpec, EffectiveCoefficients, Mu1, PipelineConfig, Regime, BOOKKEEPING_TOL};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;

const CELL_N: usize = 8;
const CELL_TOL: f64 = 1e-9;

fn report(n: usize, pass: bool, detail: String) {
    println!("\ncriterion {n:>2} {}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n}: {detail}");
}

fn tube(axes: &str, radius: f64) -> ShapeSpec {
    ShapeSpec::Tube { axis: axes.parse::<AxisSet>().unwrap(), radius }
}

/// The admissible pore/crack pairs: both solids connected on the torus.
fn geometries() -> Vec<(&'static str, ShapeSpec, ShapeSpec)> {
    vec![
        ("sphere pores / x-tube cracks", ShapeSpec::Sphere { radius: 0.3 }, tube("x", 0.25)),
        ("xyz-tube pores / sphere cracks", tube("xyz", 0.2), ShapeSpec::Sphere { radius: 0.3 }),
        ("sphere pores / xyz-tube cracks", ShapeSpec::Sphere { radius: 0.35 }, tube("xyz", 0.2)),
    ]
}

fn pipeline_config(pore: ShapeSpec, crack: ShapeSpec) -> PipelineConfig {
    PipelineConfig {
        pore: CellSpec { n: CELL_N, geometry: pore },
        crack: CellSpec { n: CELL_N, geometry: crack },
        mu1: Mu1::Finite(1.0),
        lambda0: 100.0,
        rho_f: 1.0,
        rho_s: 2.65,
        elastic: CellSolverSettings { tol: CELL_TOL, ..Default::default() },
        stokes_tol: 1e-10,
    }
}

/// Pipeline runs shared by several criteria, computed once.
fn pipeline_runs() -> &'static Vec<(&'static str, EffectiveCoefficients)> {
    static RUNS: OnceLock<Vec<(&'static str, EffectiveCoefficients)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut runs: Vec<_> = geometries()
            .into_iter()
            .map(|(name, p, c)| (name, run_pipeline(&pipeline_config(p, c)).expect(name)))
            .collect();
        let solid = pipeline_config(ShapeSpec::Sphere { radius: 0.3 }, ShapeSpec::Sphere { radius: 0.0 });
        runs.push(("sphere pores / solid crack cell", run_pipeline(&solid).expect("solid crack cell")));
        runs
    })
}

/// CASE_II coefficients with SPD permeability (cracks percolate on every axis).
fn case2_coefficients() -> MacroCoefficients {
    let (_, e) = &pipeline_runs()[2];
    assert_eq!(e.regime, Regime::CaseII);
    MacroCoefficients::from(e)
}

#[test]
fn criterion_01_laminate_permeability() {
    let start = Instant::now();
    let cell = build_cell(&ShapeSpec::Slab { axis: Axis::Z, fraction: 0.5 }, 64, Scale::Crack).unwrap();
    let p = compute_bc(&cell, 1e-10).unwrap();
    let elapsed = start.elapsed();
    let exact = 0.5f64.powi(3) / 12.0;
    let b = p.b_c;
    let e1 = (b[0][0] / exact - 1.0).abs();
    let e2 = (b[1][1] / exact - 1.0).abs();
    let pass = e1 <= 0.01
        && e2 <= 0.01
        && b[2][2].abs() <= 1e-8
        && p.symmetry_defect <= 1e-7
        && elapsed <= Duration::from_secs(120);
    report(
        1,
        pass,
        format!(
            "B11 = {:.7} ({:.3}% off), B22 = {:.7}, B33 = {:.1e}, symmetry {:.1e}, closed form {exact:.7}, {:.1?}",
            b[0][0],
            100.0 * e1,
            b[1][1],
            b[2][2],
            p.symmetry_defect,
            elapsed
        ),
    );
}

#[test]
fn criterion_02_disconnected_cracks() {
    let cell = build_cell(&ShapeSpec::Sphere { radius: 0.3 }, 32, Scale::Crack).unwrap();
    let p = compute_bc(&cell, 1e-10).unwrap();
    let regime = classify(Mu1::Finite(1.0), &p.connectivity);
    report(2, p.norm() <= 1e-8 && regime == Regime::CaseI, format!("|B_c| = {:.1e}, regime {regime}", p.norm()));
}

#[test]
fn criterion_03_porosity_algebra() {
    let mut worst: f64 = 0.0;
    for (_, e) in pipeline_runs() {
        worst = worst.max((e.m - (e.m_c + (1.0 - e.m_c) * e.m_p)).abs());
        worst = worst.max((e.rho_hat - (e.m * e.rho_f + (1.0 - e.m) * e.rho_s)).abs());
    }
    report(
        3,
        worst <= BOOKKEEPING_TOL,
        format!("largest bookkeeping defect {worst:.1e} over {} pipeline runs", pipeline_runs().len()),
    );
}

#[test]
fn criterion_04_stiffness_tensors() {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, e) in &pipeline_runs()[..3] {
        let rc = e.a_c.spd_report(SYMMETRY_TOL);
        let rs = e.a_s.spd_report(SYMMETRY_TOL);
        pass &= rc.is_spd() && rs.is_spd() && rc.symmetry_defect <= 1e-7 && rs.symmetry_defect <= 1e-7;
        parts.push(format!(
            "{name}: A_c min eig {:.3e} sym {:.1e}, A_s min eig {:.3e} sym {:.1e}",
            rc.min_eig, rc.symmetry_defect, rs.min_eig, rs.symmetry_defect
        ));
    }
    report(4, pass, parts.join("; "));
}

fn random_strains(count: usize) -> Vec<SymMat3> {
    let mut runner = TestRunner::deterministic();
    let strategy = proptest::array::uniform6(-1.0f64..1.0).prop_map(SymMat3::new);
    (0..count).map(|_| strategy.new_tree(&mut runner).unwrap().current()).collect()
}

#[test]
fn criterion_05_energy_form_oracles() {
    let settings = CellSolverSettings { tol: 1e-10, ..Default::default() };
    let (_, pore_shape, crack_shape) = geometries().remove(0);
    let pore = solve_pore_cell(&build_cell(&pore_shape, CELL_N, Scale::Pore).unwrap(), &settings).unwrap();
    let a_c = assemble_ac(&pore).a_c;
    let crack = solve_crack_cell(&build_cell(&crack_shape, CELL_N, Scale::Crack).unwrap(), &a_c, &settings).unwrap();
    let a_s = assemble_as(&crack, &a_c).a_s;
    let (mut wc, mut ws) = (0.0f64, 0.0f64);
    let args = random_strains(6);
    for z in &args {
        let oc = energy_form_ac(&pore, z, z);
        let os = energy_form_as(&crack, z, z);
        wc = wc.max((a_c.quad_form(z, z) - oc).abs() / oc.abs());
        ws = ws.max((a_s.quad_form(z, z) - os).abs() / os.abs());
    }
    report(
        5,
        wc <= 1e-6 && ws <= 1e-6,
        format!("{} random strains: worst relative mismatch A_c {wc:.1e}, A_s {ws:.1e}", args.len()),
    );
}

#[test]
fn criterion_06_identity_suite() {
    // Slab pore/crack cells have disconnected solid layers; the same
    // identities are checked on the admissible sphere/x-tube pair.
    let (_, pore_shape, crack_shape) = geometries().remove(0);
    let pore_cell = build_cell(&pore_shape, CELL_N, Scale::Pore).unwrap();
    let crack_cell = build_cell(&crack_shape, CELL_N, Scale::Crack).unwrap();
    let mut res = Vec::new();
    for tol in [1e-7, 1e-10] {
        let s = CellSolverSettings { tol, ..Default::default() };
        let pore = solve_pore_cell(&pore_cell, &s).unwrap();
        let a_c = assemble_ac(&pore).a_c;
        let crack = solve_crack_cell(&crack_cell, &a_c, &s).unwrap();
        res.push((tol, identity_suite(&pore, Some(&crack)).max()));
    }
    let pass = res.iter().all(|(t, r)| *r <= 10.0 * t) && res[1].1 < res[0].1;
    report(
        6,
        pass,
        format!(
            "sphere/x-tube cells: residual {:.1e} at tol {:.0e}, {:.1e} at tol {:.0e}",
            res[0].1, res[0].0, res[1].1, res[1].0
        ),
    );
}

#[test]
fn criterion_07_solid_crack_cell() {
    let (_, e) = &pipeline_runs()[3];
    let d = (e.a_s - e.a_c).norm() / e.a_c.norm();
    let c_c = e.diagnostics.crack.c_c.norm();
    report(7, e.m_c == 0.0 && d <= 1e-12, format!("m_c = {}, |A_s - A_c|/|A_c| = {d:.1e}, |C_c| = {c_c:.1e}", e.m_c));
}

#[test]
fn criterion_08_manufactured_solution_and_continuity() {
    let mut mms = case2_coefficients();
    mms.regime = Regime::CaseI;
    let rows: Vec<_> = [8, 16, 32]
        .into_iter()
        .map(|n| {
            let cfg = MacroConfig {
                settings: MacroSettings { n, tol: 1e-10, ..Default::default() },
                coefficients: mms.clone(),
            };
            manufactured_errors(&cfg).unwrap()
        })
        .collect();
    let orders = observed_orders(&rows);
    let u_ok = orders.iter().all(|(u, _)| *u >= 1.8);
    let q_ok = orders.iter().all(|(_, q)| *q >= 0.9);

    let tol = 1e-9;
    let cfg = MacroConfig {
        settings: MacroSettings {
            n: 8,
            dt: 0.05,
            t_end: 0.5,
            tol,
            ramp: Ramp::Linear { duration: 0.25 },
            ..Default::default()
        },
        coefficients: case2_coefficients(),
    };
    let run = run_case2(&cfg).unwrap();
    let cont = run.max_continuity_residual();
    let net = run.states.iter().map(|s| s.net_divergence).fold(0.0, f64::max);
    report(
        8,
        u_ok && q_ok && cont <= 10.0 * tol && net <= 10.0 * tol,
        format!(
            "u errors {:.3e} {:.3e} {:.3e}, orders u {:.2} {:.2}, q {:.2} {:.2}; case II max element residual {cont:.1e}, \
             net {net:.1e} over {} levels",
            rows[0].u_error,
            rows[1].u_error,
            rows[2].u_error,
            orders[0].0,
            orders[1].0,
            orders[0].1,
            orders[1].1,
            run.states.len()
        ),
    );
}

#[test]
fn criterion_09_conservative_force_darcy() {
    let mut c = case2_coefficients();
    // An anisotropic permeability exercises the off-diagonal terms.
    let s = c.b_c[0][0];
    c.b_c = [[s, 0.3 * s, -0.1 * s], [0.3 * s, 0.8 * s, 0.2 * s], [-0.1 * s, 0.2 * s, 1.3 * s]];
    let forces = [
        ForceSpec::Potential { linear: [0.5, -1.0, 0.25], quadratic: [2.0, -1.0, 0.5] },
        ForceSpec::Constant { vector: [0.0, 0.0, -1.0] },
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for force in forces {
        let cfg = MacroConfig {
            settings: MacroSettings { n: 16, force: force.clone(), tol: 1e-12, ..Default::default() },
            coefficients: c.clone(),
        };
        let r = solve_rigid_darcy(&cfg, 0.0).unwrap();
        let grid = MacroGrid::new(16);
        let mut exact: Vec<f64> = (0..grid.elements())
            .map(|e| c.m * c.rho_f * force.potential(grid.element_center(e)).unwrap())
            .collect();
        let mean = exact.iter().sum::<f64>() / exact.len() as f64;
        exact.iter_mut().for_each(|v| *v -= mean);
        let dq = r.q.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dv = r.v_c.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        pass &= dq <= 1e-6 && dv <= 1e-6;
        parts.push(format!("{force:?}: max |q - m rho_f Phi - c| = {dq:.1e}, max |v_c| = {dv:.1e}"));
    }
    report(9, pass, parts.join("; "));
}

#[test]
fn criterion_10_rigid_limit() {
    let start = Instant::now();
    let cfg = MacroConfig {
        settings: MacroSettings {
            n: 16,
            dt: 0.1,
            t_end: 0.5,
            tol: 1e-9,
            force: ForceSpec::Rotational,
            ramp: Ramp::Linear { duration: 0.5 },
            ..Default::default()
        },
        coefficients: case2_coefficients(),
    };
    let rows = rigid_limit_study(&cfg, &[1e2, 1e4, 1e6]).unwrap();
    let elapsed = start.elapsed();
    let dec = |f: fn(&poroscale::macrosolve::RigidLimitRow) -> f64| rows.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    let drop = rows[0].grad_u_l2 / rows[2].grad_u_l2;
    let pass = dec(|r| r.grad_u_l2)
        && dec(|r| r.q_error)
        && dec(|r| r.v_error)
        && drop >= 1e3
        && elapsed <= Duration::from_secs(600);
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("[{:.0e}: {:.2e} {:.2e} {:.2e}]", r.lambda0, r.grad_u_l2, r.q_error, r.v_error))
        .collect();
    report(10, pass, format!("|grad u|, q error, v error per lambda0 {}; drop {drop:.1e}; {elapsed:.1?}", table.join(" ")));
}

#[test]
fn criterion_11_deterministic_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "mu1 = 1.0\nlambda0 = 100.0\nrho_f = 1.0\nrho_s = 2.65\n\
         [pore]\nn = 8\ngeometry = { shape = \"sphere\", radius = 0.35 }\n\
         [crack]\nn = 8\ngeometry = { shape = \"tube\", axis = \"xyz\", radius = 0.2 }\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for (run, threads) in [(0, "1"), (1, "1"), (2, "2"), (3, "2")] {
        let out = dir.path().join(format!("run{run}"));
        let o = Command::new(env!("CARGO_BIN_EXE_poroscale"))
            .args(["upscale", "--config", cfg.to_str().unwrap(), "--threads", threads, "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((fs::read(out.join("effective_coefficients.json")).unwrap(), o.stdout));
    }
    let same_1 = outputs[0] == outputs[1];
    let same_2 = outputs[2] == outputs[3];
    report(
        11,
        same_1 && same_2,
        format!(
            "upscale twice with 1 thread: identical = {same_1}; twice with 2 threads: identical = {same_2} ({} bytes)",
            outputs[0].0.len()
        ),
    );
}
