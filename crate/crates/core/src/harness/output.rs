use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::grid::{write_snapshot, Field, GridError};

pub const CSV_HEADER: &str =
    "step,time,energy,modified_energy,mass,newton_iters,gmres_iters,radius";

/// One completed step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRow {
    pub step: usize,
    pub time: f64,
    pub energy: f64,
    pub modified_energy: f64,
    pub mass: f64,
    pub newton_iters: usize,
    pub gmres_iters: usize,
    pub radius: Option<f64>,
}

/// Floats carry 17 significant digits; a missing radius is an empty field.
pub fn write_csv<W: Write>(mut w: W, rows: &[TimeSeriesRow]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        write!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{},",
            r.step, r.time, r.energy, r.modified_energy, r.mass, r.newton_iters, r.gmres_iters
        )?;
        if let Some(radius) = r.radius {
            write!(w, "{radius:.16e}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn emit_csv(rows: &[TimeSeriesRow], path: &Path) -> std::io::Result<()> {
    write_csv(BufWriter::new(File::create(path)?), rows)
}

pub fn emit_snapshot(f: &Field, time: f64, path: &Path) -> Result<(), GridError> {
    write_snapshot(BufWriter::new(File::create(path)?), f, time)
}
