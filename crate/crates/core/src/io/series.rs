//! Time-series CSV.
//!
//! Columns are frozen in the order of [`CSV_COLUMNS`]; optional quantities
//! are empty cells. Floats use the shortest representation that round-trips.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::flow::Diagnostics;
use crate::functionals::FunctionalReport;
use crate::homogeneous::{hom_geometry, HomogeneousState, Model};

pub const CSV_COLUMNS: [&str; 11] = [
    "t",
    "vol",
    "s_min",
    "s_max",
    "sup_grad_phi_sq",
    "sup_rm",
    "energy_f",
    "lambda",
    "lambda_bar",
    "mu",
    "entropy_w",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesRow {
    pub t: f64,
    pub vol: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub sup_grad_phi_sq: f64,
    pub sup_rm: f64,
    pub energy_f: Option<f64>,
    pub lambda: Option<f64>,
    pub lambda_bar: Option<f64>,
    pub mu: Option<f64>,
    pub entropy_w: Option<f64>,
}

fn at(v: &Option<Vec<f64>>, k: usize) -> Option<f64> {
    v.as_ref().and_then(|x| x.get(k).copied())
}

/// Rows for grid samples, joined with the functional series by sample index.
pub fn grid_rows(diag: &[Diagnostics], functionals: Option<&FunctionalReport>) -> Vec<SeriesRow> {
    diag.iter()
        .enumerate()
        .map(|(k, d)| {
            let f = functionals.filter(|r| r.times.get(k) == Some(&d.t));
            SeriesRow {
                t: d.t,
                vol: d.vol,
                s_min: d.s_min,
                s_max: d.s_max,
                sup_grad_phi_sq: d.sup_grad_phi_sq,
                sup_rm: d.sup_rm,
                energy_f: f.map(|r| r.energy_f[k]),
                lambda: f.map(|r| r.lambda[k]),
                lambda_bar: f.map(|r| r.lambda_bar[k]),
                mu: f.and_then(|r| at(&r.mu, k)),
                entropy_w: f.and_then(|r| at(&r.entropy_w, k)),
            }
        })
        .collect()
}

/// Row of a homogeneous state. With `u = 1/V` the energy and `λ` both equal `S`.
pub fn hom_row(model: Model, s: &HomogeneousState, entropy_w: Option<f64>) -> SeriesRow {
    let g = hom_geometry(model, s);
    let m = model.dim() as f64;
    SeriesRow {
        t: s.t,
        vol: g.volume,
        s_min: g.s,
        s_max: g.s,
        sup_grad_phi_sq: g.energy_density,
        sup_rm: g.riemann_norm,
        energy_f: Some(g.s),
        lambda: Some(g.s),
        lambda_bar: Some(g.s * g.volume.powf(2.0 / m)),
        mu: None,
        entropy_w,
    }
}

pub fn write_csv(out: impl Write, rows: &[SeriesRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cells_for_missing_columns() {
        let row = SeriesRow {
            t: 0.5,
            vol: 1.0,
            s_min: -0.25,
            s_max: 2.0,
            sup_grad_phi_sq: 0.0,
            sup_rm: 1e-20,
            energy_f: Some(1.0),
            lambda: None,
            lambda_bar: None,
            mu: None,
            entropy_w: Some(-3.0),
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{}\n0.5,1.0,-0.25,2.0,0.0,1e-20,1.0,,,,-3.0\n", CSV_COLUMNS.join(",")));
    }
}
