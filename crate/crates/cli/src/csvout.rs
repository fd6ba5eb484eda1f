//! CSV artifacts: one '#' metadata line (config hash, seed, grids), then a
//! header row, then data rows. Floats default to 17 significant digits so
//! values round-trip exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::CliError;

pub struct CsvWriter {
    out: BufWriter<fs::File>,
    digits: usize,
}

impl CsvWriter {
    pub fn create(path: &Path, metadata: &str, header: &[&str], digits: usize) -> Result<Self, CliError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
        let file = fs::File::create(path)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "# {metadata}")
            .and_then(|_| writeln!(out, "{}", header.join(",")))
            .map_err(|e| CliError::Runtime(format!("write error on {}: {e}", path.display())))?;
        Ok(Self { out, digits })
    }

    pub fn format_float(&self, v: f64) -> String {
        format!("{:.*e}", self.digits - 1, v)
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        writeln!(self.out, "{}", fields.join(","))
            .map_err(|e| CliError::Runtime(format!("write error: {e}")))
    }

    pub fn row_floats(&mut self, fields: &[f64]) -> Result<(), CliError> {
        let formatted: Vec<String> = fields.iter().map(|&v| self.format_float(v)).collect();
        self.row(&formatted)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out
            .flush()
            .map_err(|e| CliError::Runtime(format!("flush error: {e}")))
    }
}
