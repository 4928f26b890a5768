//! Output files. Every CSV starts with a `# config_hash=` comment line.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use latticeopt::optimizer::{ElementRole, IterationRecord};
use latticeopt::pann::{LossPoint, TrainingRecord};
use latticeopt::{DesignField, GridModel};
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// CSV writer positioned after the hash comment.
pub fn csv_writer(path: &Path, hash: &str) -> CliResult<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "# config_hash={hash}").map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(w))
}

pub fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Fixed-width, lossless float formatting for CSV cells.
pub fn num(v: f64) -> String {
    format!("{v:.17e}")
}

pub fn write_history(path: &Path, hash: &str, history: &[IterationRecord]) -> CliResult<()> {
    let mut w = csv_writer(path, hash)?;
    w.write_record(["iter", "compliance", "volume", "lambda", "convergence"])?;
    for h in history {
        let conv = h.convergence.map(num).unwrap_or_default();
        w.write_record([h.iter.to_string(), num(h.compliance), num(h.volume), num(h.lambda), conv])?;
    }
    finish(w, path)
}

pub fn write_loss(path: &Path, hash: &str, history: &[LossPoint]) -> CliResult<()> {
    let mut w = csv_writer(path, hash)?;
    w.write_record(["epoch", "train", "validation"])?;
    for p in history {
        w.write_record([p.epoch.to_string(), num(p.train), p.validation.map(num).unwrap_or_default()])?;
    }
    finish(w, path)
}

pub fn write_dataset<'a>(path: &Path, hash: &str, records: impl Iterator<Item = &'a TrainingRecord>) -> CliResult<()> {
    let mut w = csv_writer(path, hash)?;
    w.write_record(["a", "E", "nu", "G11", "G44", "rve_seed"])?;
    for r in records {
        w.write_record([num(r.a), num(r.e), num(r.nu), num(r.g11), num(r.g44), r.rve_seed.to_string()])?;
    }
    finish(w, path)
}

pub fn read_dataset(path: &Path) -> CliResult<Vec<TrainingRecord>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f);
    let mut out = vec![];
    for row in r.records() {
        let row = row?;
        if row.len() != 6 {
            return Err(CliError::Config(format!("{}: expected 6 columns, got {}", path.display(), row.len())));
        }
        let f = |i: usize| -> CliResult<f64> {
            row[i].trim().parse().map_err(|_| CliError::Config(format!("{}: bad number '{}'", path.display(), &row[i])))
        };
        let seed = row[5].trim().parse().map_err(|_| CliError::Config(format!("{}: bad seed '{}'", path.display(), &row[5])))?;
        out.push(TrainingRecord { a: f(0)?, e: f(1)?, nu: f(2)?, g11: f(3)?, g44: f(4)?, rve_seed: seed });
    }
    Ok(out)
}

/// Legacy ASCII VTK structured-points file with per-cell `gamma`, `kappa`,
/// `rho`, `role` and `void` (`rho < rho_min`). Excluded cells carry zeros.
pub fn write_vtk(path: &Path, hash: &str, grid: &GridModel, field: &DesignField) -> CliResult<()> {
    let n = grid.counts();
    let h = grid.element_size();
    let ne = grid.n_elements();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "latticeopt design config_hash={hash}");
    let _ = writeln!(s, "ASCII\nDATASET STRUCTURED_POINTS");
    if grid.dim() == 2 {
        let _ = writeln!(s, "DIMENSIONS {} {} 1", n[0] + 1, n[1] + 1);
        let _ = writeln!(s, "ORIGIN 0 0 0\nSPACING {} {} 1", h[0], h[1]);
    } else {
        let _ = writeln!(s, "DIMENSIONS {} {} {}", n[0] + 1, n[1] + 1, n[2] + 1);
        let _ = writeln!(s, "ORIGIN 0 0 0\nSPACING {} {} {}", h[0], h[1], h[2]);
    }
    let _ = writeln!(s, "CELL_DATA {ne}");
    let value = |e: usize, which: usize| -> f64 {
        match field.roles[e] {
            ElementRole::Excluded => 0.0,
            _ => [field.gamma[e], field.kappa[e], field.density(e)][which],
        }
    };
    for (k, name) in ["gamma", "kappa", "rho"].iter().enumerate() {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for e in 0..ne {
            let _ = writeln!(s, "{}", value(e, k));
        }
    }
    let _ = writeln!(s, "SCALARS role int 1\nLOOKUP_TABLE default");
    for e in 0..ne {
        let _ = writeln!(s, "{}", field.roles[e].code());
    }
    let _ = writeln!(s, "SCALARS void int 1\nLOOKUP_TABLE default");
    for e in 0..ne {
        let void = field.is_design(e) && field.density(e) < field.rho_min;
        let _ = writeln!(s, "{}", void as u8);
    }
    std::fs::write(path, s).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}
