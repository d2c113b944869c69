//! The two-scale coefficient pipeline: geometry, Stokes and pore-scale
//! elasticity (concurrently), then crack-scale elasticity, collected into
//! one [`EffectiveCoefficients`] record.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::cellgeom::{build_cell, combined_porosity, porosity, ConnectivityReport, Scale, ShapeSpec, UnitCell};
use crate::elasticell::{
    assemble_ac, assemble_as, identity_suite, solve_crack_cell, solve_pore_cell, CellSolverSettings, IdentityReport,
};
use crate::error::{Error, Result};
use crate::linsolve::SolveReport;
use crate::stokescell::compute_bc;
use crate::tensor::{SpdReport, Tensor4, VOIGT_PAIRS};

/// Tolerance of the porosity and density bookkeeping checks.
pub const BOOKKEEPING_TOL: f64 = 1e-14;

/// `ρ̂ = m ρ_f + (1 − m) ρ_s`.
pub fn mixture_density(m: f64, rho_f: f64, rho_s: f64) -> f64 {
    m * rho_f + (1.0 - m) * rho_s
}

/// Crack-fluid viscosity limit; `"inf"` in configuration files.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mu1 {
    Finite(f64),
    Infinite,
}

impl Mu1 {
    pub fn is_infinite(self) -> bool {
        matches!(self, Mu1::Infinite)
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Mu1::Finite(v) if !(v > 0.0 && v.is_finite()) => {
                Err(Error::invalid(format!("mu1 must be positive and finite (or \"inf\"), got {v}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Mu1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mu1::Finite(v) => write!(f, "{v}"),
            Mu1::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Mu1 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Mu1::Finite(v) => s.serialize_f64(*v),
            Mu1::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Mu1 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Mu1Visitor;
        impl Visitor<'_> for Mu1Visitor {
            type Value = Mu1;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Mu1, E> {
                // TOML has an `inf` float literal.
                Ok(if v == f64::INFINITY { Mu1::Infinite } else { Mu1::Finite(v) })
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Mu1, E> {
                Ok(Mu1::Finite(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Mu1, E> {
                Ok(Mu1::Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Mu1, E> {
                match v {
                    "inf" => Ok(Mu1::Infinite),
                    other => Err(E::custom(format!("expected a number or \"inf\", got \"{other}\""))),
                }
            }
        }
        d.deserialize_any(Mu1Visitor)
    }
}

/// Which limit system governs the macroscopic problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Anisotropic incompressible elasticity; no Darcy flow through cracks.
    #[serde(rename = "CASE_I")]
    CaseI,
    /// Elasticity coupled with Darcy filtration through connected cracks.
    #[serde(rename = "CASE_II")]
    CaseII,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::CaseI => "CASE_I",
            Regime::CaseII => "CASE_II",
        })
    }
}

/// Case I holds for an infinite crack viscosity or a crack fluid that
/// percolates along no axis.
pub fn classify(mu1: Mu1, crack_fluid: &ConnectivityReport) -> Regime {
    if mu1.is_infinite() || !crack_fluid.percolates_any() {
        Regime::CaseI
    } else {
        Regime::CaseII
    }
}

/// Geometry of one unit cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    /// Voxels per axis.
    pub n: usize,
    pub geometry: ShapeSpec,
}

impl CellSpec {
    pub fn build(&self, scale: Scale) -> Result<UnitCell> {
        build_cell(&self.geometry, self.n, scale)
    }
}

fn default_stokes_tol() -> f64 {
    1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub pore: CellSpec,
    pub crack: CellSpec,
    pub mu1: Mu1,
    pub lambda0: f64,
    pub rho_f: f64,
    pub rho_s: f64,
    #[serde(default)]
    pub elastic: CellSolverSettings,
    #[serde(default = "default_stokes_tol")]
    pub stokes_tol: f64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.mu1.validate()?;
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::invalid(format!("lambda0 must be positive and finite, got {}", self.lambda0)));
        }
        for (name, v) in [("rho_f", self.rho_f), ("rho_s", self.rho_s)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.stokes_tol > 0.0 && self.stokes_tol < 1.0) {
            return Err(Error::invalid(format!("stokes_tol must lie in (0, 1), got {}", self.stokes_tol)));
        }
        self.elastic.validate()
    }
}

/// A solve report tagged with the problem that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    #[serde(flatten)]
    pub report: SolveReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StokesDiagnostics {
    pub symmetry_defect: f64,
    pub min_eig: f64,
    pub connectivity: ConnectivityReport,
    pub reports: Vec<StageReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoreDiagnostics {
    pub c1: Tensor4,
    pub c2: Tensor4,
    pub c3: Tensor4,
    pub c4: Tensor4,
    pub c_p: Tensor4,
    pub a_c_report: SpdReport,
    pub reports: Vec<StageReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrackDiagnostics {
    pub c_c: Tensor4,
    pub a_s_report: SpdReport,
    pub reports: Vec<StageReport>,
}

/// Residuals of the bookkeeping identities, checked before return.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// `|m − (m_c + (1 − m_c) m_p)|`
    pub porosity: f64,
    /// `|ρ̂ − (m ρ_f + (1 − m) ρ_s)|`
    pub density: f64,
}

/// Derived velocities as multiples of the skeleton velocity `v_s = ∂u/∂t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityRelations {
    /// `v_p = (1 − m_c) m_p v_s`
    pub v_p: f64,
    /// Case I: `v_c = m_c v_s`.
    pub v_c: Option<f64>,
    /// Case II: `v = v_c + (1 − m_c) v_s`, coefficient of `v_s`.
    pub v_skeleton: Option<f64>,
}

impl VelocityRelations {
    pub fn new(m_p: f64, m_c: f64, regime: Regime) -> Self {
        let v_p = (1.0 - m_c) * m_p;
        match regime {
            Regime::CaseI => Self { v_p, v_c: Some(m_c), v_skeleton: None },
            Regime::CaseII => Self { v_p, v_c: None, v_skeleton: Some(1.0 - m_c) },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub stokes: StokesDiagnostics,
    pub pore: PoreDiagnostics,
    pub crack: CrackDiagnostics,
    pub identities: IdentityReport,
    pub invariants: InvariantReport,
    pub velocity_relations: VelocityRelations,
}

mod row_major {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &[[f64; 3]; 3], s: S) -> Result<S::Ok, S::Error> {
        m.iter().flatten().copied().collect::<Vec<f64>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[[f64; 3]; 3], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        if v.len() != 9 {
            return Err(serde::de::Error::invalid_length(v.len(), &"9 entries"));
        }
        Ok(std::array::from_fn(|i| std::array::from_fn(|j| v[3 * i + j])))
    }
}

/// Everything the macroscopic solvers need, plus provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCoefficients {
    pub m_p: f64,
    pub m_c: f64,
    pub m: f64,
    pub rho_f: f64,
    pub rho_s: f64,
    pub rho_hat: f64,
    pub mu1: Mu1,
    pub lambda0: f64,
    pub regime: Regime,
    #[serde(rename = "B_c", with = "row_major")]
    pub b_c: [[f64; 3]; 3],
    #[serde(rename = "A_c")]
    pub a_c: Tensor4,
    #[serde(rename = "A_s")]
    pub a_s: Tensor4,
    pub diagnostics: Diagnostics,
}

impl EffectiveCoefficients {
    /// Re-checks the bookkeeping identities and the tensor reports.
    pub fn check_invariants(&self) -> Result<()> {
        let porosity = (self.m - (self.m_c + (1.0 - self.m_c) * self.m_p)).abs();
        let density = (self.rho_hat - mixture_density(self.m, self.rho_f, self.rho_s)).abs();
        if porosity > BOOKKEEPING_TOL || density > BOOKKEEPING_TOL {
            return Err(Error::solver(
                "invariants",
                format!("porosity residual {porosity:.3e}, density residual {density:.3e}"),
            ));
        }
        let expected = classify(self.mu1, &self.diagnostics.stokes.connectivity);
        if self.regime != expected {
            return Err(Error::solver("invariants", format!("regime {} but expected {expected}", self.regime)));
        }
        for (name, rep) in [("A_c", &self.diagnostics.pore.a_c_report), ("A_s", &self.diagnostics.crack.a_s_report)] {
            if !rep.is_spd() {
                return Err(Error::solver(
                    "invariants",
                    format!(
                        "{name} is not symmetric positive definite (symmetry defect {:.3e}, min eigenvalue {:.3e})",
                        rep.symmetry_defect, rep.min_eig
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("coefficients serialize")
    }
}

fn slot_label(slot: usize) -> String {
    let (i, j) = VOIGT_PAIRS[slot];
    format!("{}{}", i + 1, j + 1)
}

fn tagged(prefix: &str, names: impl IntoIterator<Item = String>, reports: impl IntoIterator<Item = SolveReport>) -> Vec<StageReport> {
    names
        .into_iter()
        .zip(reports)
        .map(|(n, report)| StageReport { stage: format!("{prefix} {n}"), report })
        .collect()
}

/// Runs every cell problem and assembles the effective coefficients.
pub fn run_pipeline(config: &PipelineConfig) -> Result<EffectiveCoefficients> {
    config.validate()?;
    let pore_cell = config.pore.build(Scale::Pore).map_err(|e| e.in_stage("pore geometry"))?;
    let crack_cell = config.crack.build(Scale::Crack).map_err(|e| e.in_stage("crack geometry"))?;
    pore_cell.check_elastic_solid().map_err(|e| e.in_stage("pore geometry"))?;
    crack_cell.check_elastic_solid().map_err(|e| e.in_stage("crack geometry"))?;

    let (stokes, pore) = rayon::join(
        || compute_bc(&crack_cell, config.stokes_tol).map_err(|e| e.in_stage("crack permeability")),
        || solve_pore_cell(&pore_cell, &config.elastic).map_err(|e| e.in_stage("pore elasticity")),
    );
    let (stokes, pore) = (stokes?, pore?);
    let pore_t = assemble_ac(&pore);
    if !pore_t.a_c_report.is_spd() {
        return Err(Error::solver(
            "pore elasticity",
            format!(
                "A_c is not symmetric positive definite (symmetry defect {:.3e}, min eigenvalue {:.3e})",
                pore_t.a_c_report.symmetry_defect, pore_t.a_c_report.min_eig
            ),
        ));
    }
    let crack = solve_crack_cell(&crack_cell, &pore_t.a_c, &config.elastic).map_err(|e| e.in_stage("crack elasticity"))?;
    let crack_t = assemble_as(&crack, &pore_t.a_c);
    let identities = identity_suite(&pore, Some(&crack));

    let m_p = porosity(&pore_cell);
    let m_c = porosity(&crack_cell);
    let m = combined_porosity(m_p, m_c)?;
    let rho_hat = mixture_density(m, config.rho_f, config.rho_s);
    let regime = classify(config.mu1, &stokes.connectivity);

    let axis_names = ["x", "y", "z"].map(String::from);
    let pore_names = (0..6).map(slot_label).chain(["dilatation".to_string()]);
    let pore_reports = pore.pairs.iter().chain([&pore.dilatation]).map(|c| c.report.clone());
    let diagnostics = Diagnostics {
        stokes: StokesDiagnostics {
            symmetry_defect: stokes.symmetry_defect,
            min_eig: stokes.min_eig,
            connectivity: stokes.connectivity.clone(),
            reports: tagged("stokes axis", axis_names, stokes.reports.clone()),
        },
        pore: PoreDiagnostics {
            c1: pore_t.c1,
            c2: pore_t.c2,
            c3: pore_t.c3,
            c4: pore_t.c4,
            c_p: pore_t.c_p,
            a_c_report: pore_t.a_c_report,
            reports: tagged("pore corrector", pore_names, pore_reports),
        },
        crack: CrackDiagnostics {
            c_c: crack_t.c_c,
            a_s_report: crack_t.a_s_report,
            reports: tagged("crack corrector", (0..6).map(slot_label), crack.pairs.iter().map(|c| c.report.clone())),
        },
        identities,
        invariants: InvariantReport {
            porosity: (m - (m_c + (1.0 - m_c) * m_p)).abs(),
            density: (rho_hat - mixture_density(m, config.rho_f, config.rho_s)).abs(),
        },
        velocity_relations: VelocityRelations::new(m_p, m_c, regime),
    };
    let out = EffectiveCoefficients {
        m_p,
        m_c,
        m,
        rho_f: config.rho_f,
        rho_s: config.rho_s,
        rho_hat,
        mu1: config.mu1,
        lambda0: config.lambda0,
        regime,
        b_c: stokes.b_c,
        a_c: pore_t.a_c,
        a_s: crack_t.a_s,
        diagnostics,
    };
    out.check_invariants()?;
    Ok(out)
}
