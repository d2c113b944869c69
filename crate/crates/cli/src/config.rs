//! Run configuration: one TOML file, optionally patched with `key=value`
//! overrides, deserialized strictly.

use std::fs;
use std::path::{Path, PathBuf};

use poroscale::elasticell::CellSolverSettings;
use poroscale::macrosolve::MacroSettings;
use poroscale::upscale::{CellSpec, Mu1, PipelineConfig};
use serde::Deserialize;
use toml::{Table, Value};

use crate::CliError;

fn default_stokes_tol() -> f64 {
    1e-9
}

fn default_lambdas() -> Vec<f64> {
    vec![1e2, 1e4, 1e6]
}

/// Field dumps of the `macro` command.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSettings {
    /// Write VTK files every `vtk_stride` levels; 0 disables them.
    #[serde(default)]
    pub vtk_stride: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidLimitSettings {
    #[serde(default = "default_lambdas")]
    pub lambda0: Vec<f64>,
}

impl Default for RigidLimitSettings {
    fn default() -> Self {
        Self { lambda0: default_lambdas() }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub pore: Option<CellSpec>,
    pub crack: Option<CellSpec>,
    pub mu1: Option<Mu1>,
    pub lambda0: Option<f64>,
    pub rho_f: Option<f64>,
    pub rho_s: Option<f64>,
    #[serde(default)]
    pub elastic: CellSolverSettings,
    #[serde(default = "default_stokes_tol")]
    pub stokes_tol: f64,
    /// Effective coefficients from an earlier `upscale` run, used by
    /// `macro` and `rigid-limit` instead of recomputing them.
    pub coefficients: Option<PathBuf>,
    #[serde(rename = "macro", default)]
    pub macro_settings: MacroSettings,
    #[serde(default)]
    pub export: ExportSettings,
    #[serde(default)]
    pub rigid_limit: RigidLimitSettings,
}

fn missing(key: &str) -> CliError {
    CliError::Config { key: key.to_string(), message: "missing required key".to_string() }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<Table>(&text)
                    .map_err(|e| CliError::Config { key: p.display().to_string(), message: e.to_string() })?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: Table) -> Result<Self, CliError> {
        serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            // toml appends its own "in `key`" line; the key is reported already.
            let message = e.into_inner().to_string();
            let message = message.lines().next().unwrap_or_default().to_string();
            CliError::Config { key, message }
        })
    }

    pub fn cell(&self, which: &str) -> Result<&CellSpec, CliError> {
        match which {
            "pore" => self.pore.as_ref(),
            _ => self.crack.as_ref(),
        }
        .ok_or_else(|| missing(which))
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, CliError> {
        Ok(PipelineConfig {
            pore: self.cell("pore")?.clone(),
            crack: self.cell("crack")?.clone(),
            mu1: self.mu1.ok_or_else(|| missing("mu1"))?,
            lambda0: self.lambda0.ok_or_else(|| missing("lambda0"))?,
            rho_f: self.rho_f.ok_or_else(|| missing("rho_f"))?,
            rho_s: self.rho_s.ok_or_else(|| missing("rho_s"))?,
            elastic: self.elastic,
            stokes_tol: self.stokes_tol,
        })
    }
}

/// Parses the right-hand side as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to the table, creating intermediate tables.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::Config {
        key: spec.to_string(),
        message: "override must have the form key=value".to_string(),
    })?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config { key: key.to_string(), message: "empty key segment".to_string() });
    }
    let mut cur = table;
    for (i, p) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Config {
            key: parts[..=i].join("."),
            message: "is not a table".to_string(),
        })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        RunConfig::from_table(toml::from_str(text).unwrap())
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse("[pore]\nn = 8\ngeometry = { shape = \"sphere\", radius = 0.3 }\ncolour = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pore") && msg.contains("colour"), "{msg}");
        let err = parse("[macro]\nn = 8\nbogus = 2\n").unwrap_err().to_string();
        assert!(err.contains("macro") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn overrides_create_and_replace() {
        let mut t: Table = toml::from_str("lambda0 = 1.0\n[macro]\nn = 8\n").unwrap();
        apply_override(&mut t, "macro.n=12").unwrap();
        apply_override(&mut t, "mu1=inf").unwrap();
        apply_override(&mut t, "macro.force.kind=constant").unwrap();
        apply_override(&mut t, "macro.force.vector=[0, 0, -1]").unwrap();
        let cfg = RunConfig::from_table(t).unwrap();
        assert_eq!(cfg.macro_settings.n, 12);
        assert_eq!(cfg.mu1, Some(Mu1::Infinite));
        assert_eq!(
            cfg.macro_settings.force,
            poroscale::macrosolve::ForceSpec::Constant { vector: [0.0, 0.0, -1.0] }
        );
        let mut t = Table::new();
        assert!(apply_override(&mut t, "novalue").is_err());
        apply_override(&mut t, "lambda0=2").unwrap();
        assert!(apply_override(&mut t, "lambda0.x=2").is_err());
    }

    #[test]
    fn missing_pipeline_keys() {
        let cfg = parse("mu1 = 1.0\n").unwrap();
        let err = cfg.pipeline().unwrap_err().to_string();
        assert!(err.contains("pore"), "{err}");
    }
}
