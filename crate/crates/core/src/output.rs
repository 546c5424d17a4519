//! CSV, legacy VTK and JSON artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::space::{Field, MixedSpace};

/// CSV column order of convergence records.
pub const CSV_COLUMNS: [&str; 12] = [
    "level",
    "h",
    "ndof_solution",
    "ndof_total",
    "err_l2_u",
    "err_h1_u",
    "err_l2_q",
    "err_l2_gradu",
    "err_l2_flux",
    "err_U",
    "estimate",
    "newton_iters",
];

/// One CSV row. Error columns are `NaN` without an exact solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    pub ndof_solution: usize,
    pub ndof_total: usize,
    pub err_l2_u: f64,
    pub err_h1_u: f64,
    pub err_l2_q: f64,
    pub err_l2_gradu: f64,
    pub err_l2_flux: f64,
    #[serde(rename = "err_U")]
    pub err_u_norm: f64,
    pub estimate: f64,
    pub newton_iters: usize,
}

pub fn write_csv(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_COLUMNS).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<ConvergenceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Config(format!("{}: unexpected CSV header {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Legacy ASCII VTK 2.0 unstructured grid of triangles.
pub fn write_vtk(path: &Path, mesh: &TriMesh, point_fields: &[(&str, &[f64])], cell_fields: &[(&str, &[f64])]) -> Result<()> {
    fs::write(path, vtk_string(mesh, point_fields, cell_fields)?).map_err(|e| Error::io(path, e))
}

pub fn vtk_string(mesh: &TriMesh, point_fields: &[(&str, &[f64])], cell_fields: &[(&str, &[f64])]) -> Result<String> {
    let nv = mesh.vertices().len();
    let nt = mesh.num_triangles();
    for (name, v) in point_fields {
        check_field(name, v.len(), nv)?;
    }
    for (name, v) in cell_fields {
        check_field(name, v.len(), nt)?;
    }
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 2.0");
    let _ = writeln!(s, "avsfe output");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {nv} double");
    for v in mesh.vertices() {
        let _ = writeln!(s, "{:.16e} {:.16e} 0", v[0], v[1]);
    }
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(s, "5");
    }
    if !point_fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {nv}");
        write_scalars(&mut s, point_fields);
    }
    if !cell_fields.is_empty() {
        let _ = writeln!(s, "CELL_DATA {nt}");
        write_scalars(&mut s, cell_fields);
    }
    Ok(s)
}

fn check_field(name: &str, len: usize, expected: usize) -> Result<()> {
    if name.is_empty() || name.contains(char::is_whitespace) {
        return Err(Error::Argument(format!("invalid VTK field name {name:?}")));
    }
    if len != expected {
        return Err(Error::Argument(format!("field {name} has {len} values, expected {expected}")));
    }
    Ok(())
}

fn write_scalars(s: &mut String, fields: &[(&str, &[f64])]) {
    for (name, vals) in fields {
        let _ = writeln!(s, "SCALARS {name} double 1");
        let _ = writeln!(s, "LOOKUP_TABLE default");
        for v in *vals {
            let _ = writeln!(s, "{v:.16e}");
        }
    }
}

/// Values of a scalar block at the mesh vertices.
pub fn vertex_values(ms: &MixedSpace, state: &[f64], field: Field) -> Result<Vec<f64>> {
    let mesh = ms.mesh();
    let block = ms.block(field);
    let coeffs = &state[ms.range(field)];
    let refs = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let mut out = vec![f64::NAN; mesh.vertices().len()];
    for (e, tri) in mesh.triangles().iter().enumerate() {
        for (k, &v) in tri.iter().enumerate() {
            if out[v].is_nan() {
                out[v] = block.eval(mesh, coeffs, e, refs[k])?.0[0];
            }
        }
    }
    Ok(out)
}
