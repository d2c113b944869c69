//! Legacy VTK (ASCII `STRUCTURED_POINTS`) and CSV writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use poroscale::macrosolve::{MacroGrid, MacroState, StepSummary};

use crate::CliError;

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

enum Data<'a> {
    PointVectors(&'a [[f64; 3]]),
    CellScalars(&'a [f64]),
    CellVectors(&'a [[f64; 3]]),
}

fn vtk_text(n: usize, title: &str, name: &str, data: Data) -> String {
    let h = 1.0 / n as f64;
    let np = n + 1;
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "{title}");
    s.push_str("ASCII\nDATASET STRUCTURED_POINTS\n");
    let _ = writeln!(s, "DIMENSIONS {np} {np} {np}");
    s.push_str("ORIGIN 0 0 0\n");
    let _ = writeln!(s, "SPACING {h} {h} {h}");
    match data {
        Data::PointVectors(v) => {
            let _ = writeln!(s, "POINT_DATA {}", v.len());
            let _ = writeln!(s, "VECTORS {name} double");
            for x in v {
                let _ = writeln!(s, "{} {} {}", x[0], x[1], x[2]);
            }
        }
        Data::CellScalars(v) => {
            let _ = writeln!(s, "CELL_DATA {}", v.len());
            let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for x in v {
                let _ = writeln!(s, "{x}");
            }
        }
        Data::CellVectors(v) => {
            let _ = writeln!(s, "CELL_DATA {}", v.len());
            let _ = writeln!(s, "VECTORS {name} double");
            for x in v {
                let _ = writeln!(s, "{} {} {}", x[0], x[1], x[2]);
            }
        }
    }
    s
}

/// Writes `u`, `q`, `v_c` and `v` of one state as `<field>_<step>.vtk`.
pub fn export_vtk(dir: &Path, grid: &MacroGrid, state: &MacroState) -> Result<Vec<PathBuf>, CliError> {
    let points = grid.point_displacements(&state.u);
    let title = |f: &str| format!("poroscale {f} step {} t {}", state.step, state.t);
    let files = [
        ("u", Data::PointVectors(&points)),
        ("q", Data::CellScalars(&state.q)),
        ("v_c", Data::CellVectors(&state.v_c)),
        ("v", Data::CellVectors(&state.v)),
    ];
    let mut out = Vec::new();
    for (name, data) in files {
        let path = dir.join(format!("{name}_{:05}.vtk", state.step));
        write(&path, &vtk_text(grid.n, &title(name), name, data))?;
        out.push(path);
    }
    Ok(out)
}

pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), CliError> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    write(path, &s)
}

pub fn write_series_csv(path: &Path, series: &[StepSummary]) -> Result<(), CliError> {
    write_csv(path, StepSummary::CSV_HEADER, series.iter().map(StepSummary::csv_row))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write(path, &text)?;
    Ok(text)
}
