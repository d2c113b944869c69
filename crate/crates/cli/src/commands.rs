use std::fs;
use std::path::{Path, PathBuf};

use poroscale::cellgeom::{porosity, ConnectivityReport, Scale};
use poroscale::elasticell::{assemble_ac, assemble_as, identity_suite, solve_crack_cell, solve_pore_cell, CrackTensors, IdentityReport, PoreTensors};
use poroscale::linsolve::SolveReport;
use poroscale::macrosolve::{
    rigid_limit_study, run_case1, run_case2, solve_rigid_darcy, EnergyReport, MacroCoefficients, MacroConfig, MacroGrid,
    MacroSettings, RigidLimitRow, StepSummary,
};
use poroscale::stokescell::compute_bc;
use poroscale::upscale::{classify, run_pipeline, EffectiveCoefficients, Regime};
use serde::Serialize;

use crate::config::RunConfig;
use crate::export::{export_vtk, write_csv, write_json, write_series_csv};
use crate::{verify, CliError, Common};

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(common: &Common) -> Result<Self, CliError> {
        let cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
        let threads = common.threads.or(cfg.threads);
        if let Some(t) = threads {
            if t == 0 {
                return Err(CliError::Config { key: "threads".into(), message: "must be at least 1".into() });
            }
            // Fails only if a pool already exists, which cannot happen here.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
        let out = common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("poroscale_out"));
        fs::create_dir_all(&out)
            .map_err(|e| CliError::Io(format!("cannot create output directory {}: {e}", out.display())))?;
        Ok(Self { cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn echo(text: &str) {
    print!("{text}");
}

#[derive(Serialize)]
struct StokesOutput {
    m_c: f64,
    #[serde(rename = "B_c")]
    b_c: [[f64; 3]; 3],
    symmetry_defect: f64,
    min_eig: f64,
    connectivity: ConnectivityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    regime: Option<Regime>,
    reports: Vec<SolveReport>,
}

pub fn cell_stokes(ctx: &Context) -> Result<(), CliError> {
    let cell = ctx.cfg.cell("crack")?.build(Scale::Crack).map_err(|e| e.in_stage("crack geometry"))?;
    let perm = compute_bc(&cell, ctx.cfg.stokes_tol).map_err(|e| e.in_stage("crack permeability"))?;
    let out = StokesOutput {
        m_c: porosity(&cell),
        b_c: perm.b_c,
        symmetry_defect: perm.symmetry_defect,
        min_eig: perm.min_eig,
        regime: ctx.cfg.mu1.map(|mu1| classify(mu1, &perm.connectivity)),
        connectivity: perm.connectivity,
        reports: perm.reports,
    };
    echo(&write_json(&ctx.path("permeability.json"), &out)?);
    Ok(())
}

#[derive(Serialize)]
struct ElasticOutput {
    m_p: f64,
    pore: PoreTensors,
    #[serde(skip_serializing_if = "Option::is_none")]
    m_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    crack: Option<CrackTensors>,
    identities: IdentityReport,
}

pub fn cell_elastic(ctx: &Context) -> Result<(), CliError> {
    ctx.cfg.elastic.validate()?;
    let settings = &ctx.cfg.elastic;
    let pore_cell = ctx.cfg.cell("pore")?.build(Scale::Pore).map_err(|e| e.in_stage("pore geometry"))?;
    pore_cell.check_elastic_solid().map_err(|e| e.in_stage("pore geometry"))?;
    let pore = solve_pore_cell(&pore_cell, settings).map_err(|e| e.in_stage("pore elasticity"))?;
    let pore_t = assemble_ac(&pore);
    let crack = match &ctx.cfg.crack {
        Some(spec) => {
            let cell = spec.build(Scale::Crack).map_err(|e| e.in_stage("crack geometry"))?;
            cell.check_elastic_solid().map_err(|e| e.in_stage("crack geometry"))?;
            let sol = solve_crack_cell(&cell, &pore_t.a_c, settings).map_err(|e| e.in_stage("crack elasticity"))?;
            Some((porosity(&cell), sol))
        }
        None => None,
    };
    let identities = identity_suite(&pore, crack.as_ref().map(|(_, s)| s));
    let out = ElasticOutput {
        m_p: porosity(&pore_cell),
        m_c: crack.as_ref().map(|(m, _)| *m),
        crack: crack.as_ref().map(|(_, s)| assemble_as(s, &pore_t.a_c)),
        pore: pore_t,
        identities,
    };
    echo(&write_json(&ctx.path("cell_elastic.json"), &out)?);
    Ok(())
}

pub fn upscale(ctx: &Context) -> Result<(), CliError> {
    let eff = run_pipeline(&ctx.cfg.pipeline()?)?;
    let text = eff.to_json();
    write_text(&ctx.path("effective_coefficients.json"), &text)?;
    echo(&text);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Effective coefficients from `coefficients = "<file>"`, or a fresh
/// pipeline run (whose JSON is then written alongside the other outputs).
fn coefficients(ctx: &Context) -> Result<MacroCoefficients, CliError> {
    match &ctx.cfg.coefficients {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read coefficients {}: {e}", path.display())))?;
            let eff: EffectiveCoefficients = serde_json::from_str(&text)
                .map_err(|e| CliError::Config { key: "coefficients".into(), message: format!("{}: {e}", path.display()) })?;
            eff.check_invariants()?;
            let mut c = MacroCoefficients::from(&eff);
            if let Some(l) = ctx.cfg.lambda0 {
                c.lambda0 = l;
            }
            Ok(c)
        }
        None => {
            let eff = run_pipeline(&ctx.cfg.pipeline()?)?;
            write_text(&ctx.path("effective_coefficients.json"), &eff.to_json())?;
            Ok(MacroCoefficients::from(&eff))
        }
    }
}

#[derive(Serialize)]
struct MacroOutput {
    regime: Regime,
    settings: MacroSettings,
    series: Vec<StepSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    energy: Option<EnergyReport>,
    max_continuity_residual: f64,
    reports: Vec<SolveReport>,
    vtk_files: Vec<String>,
}

pub fn macro_run(ctx: &Context) -> Result<(), CliError> {
    let cfg = MacroConfig { settings: ctx.cfg.macro_settings.clone(), coefficients: coefficients(ctx)? };
    let run = match cfg.coefficients.regime {
        Regime::CaseI => run_case1(&cfg)?,
        Regime::CaseII => run_case2(&cfg)?,
    };
    let mut vtk_files = Vec::new();
    let stride = ctx.cfg.export.vtk_stride;
    if stride > 0 {
        let grid = MacroGrid::new(cfg.settings.n);
        for s in run.states.iter().filter(|s| s.step % stride == 0) {
            for p in export_vtk(&ctx.out, &grid, s)? {
                vtk_files.push(p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default());
            }
        }
    }
    let series = run.summaries();
    write_series_csv(&ctx.path("macro_series.csv"), &series)?;
    let out = MacroOutput {
        regime: run.regime,
        settings: cfg.settings.clone(),
        max_continuity_residual: run.max_continuity_residual(),
        series,
        energy: run.energy,
        reports: run.states.iter().map(|s| s.report.clone()).collect(),
        vtk_files,
    };
    echo(&write_json(&ctx.path("macro_summary.json"), &out)?);
    Ok(())
}

#[derive(Serialize)]
struct RigidSummary {
    t: f64,
    q_l2: f64,
    v_c_l2: f64,
    divergence_residual: f64,
}

#[derive(Serialize)]
struct RigidLimitOutput {
    rows: Vec<RigidLimitRow>,
    rigid: RigidSummary,
    grad_u_decreasing: bool,
    q_error_decreasing: bool,
    v_error_decreasing: bool,
}

fn decreasing(v: impl Iterator<Item = f64>) -> bool {
    let v: Vec<f64> = v.collect();
    v.windows(2).all(|w| w[1] < w[0])
}

pub fn rigid_limit(ctx: &Context) -> Result<(), CliError> {
    let cfg = MacroConfig { settings: ctx.cfg.macro_settings.clone(), coefficients: coefficients(ctx)? };
    let rows = rigid_limit_study(&cfg, &ctx.cfg.rigid_limit.lambda0)?;
    let t_end = cfg.settings.steps() as f64 * cfg.settings.dt;
    let rigid = solve_rigid_darcy(&cfg, t_end)?;
    let grid = MacroGrid::new(cfg.settings.n);
    write_csv(&ctx.path("rigid_limit.csv"), RigidLimitRow::CSV_HEADER, rows.iter().map(RigidLimitRow::csv_row))?;
    let out = RigidLimitOutput {
        grad_u_decreasing: decreasing(rows.iter().map(|r| r.grad_u_l2)),
        q_error_decreasing: decreasing(rows.iter().map(|r| r.q_error)),
        v_error_decreasing: decreasing(rows.iter().map(|r| r.v_error)),
        rigid: RigidSummary {
            t: rigid.t,
            q_l2: grid.element_l2(&rigid.q),
            v_c_l2: grid.vector_l2(&rigid.v_c),
            divergence_residual: rigid.divergence_residual,
        },
        rows,
    };
    echo(&write_json(&ctx.path("rigid_limit.json"), &out)?);
    Ok(())
}

pub fn verify(ctx: &Context) -> Result<(), CliError> {
    let report = verify::run_all();
    echo(&write_json(&ctx.path("verify.json"), &report)?);
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}
