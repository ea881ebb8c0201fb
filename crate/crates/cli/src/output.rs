use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use algpaths::expr::parse_constant;

use crate::error::{usage, CliError, CliResult};

/// Write to stdout, ignoring a closed pipe.
pub fn write_stdout(s: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(s.as_bytes());
}

pub fn print_json(v: &impl Serialize) {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    write_stdout(&s);
}

pub fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

/// Print `csv` to stdout, or write it to `out` and print `report` instead.
pub fn emit_csv(csv: &str, out: Option<&Path>, report: &Value) -> CliResult<()> {
    match out {
        Some(p) => {
            std::fs::write(p, csv).map_err(|e| CliError::usage(format!("cannot write {}: {e}", p.display())))?;
            let mut report = report.clone();
            report["csv"] = Value::String(p.display().to_string());
            print_json(&report);
        }
        None => write_stdout(csv),
    }
    Ok(())
}

pub fn read_file(p: &Path) -> CliResult<String> {
    std::fs::read_to_string(p).map_err(|e| CliError::usage(format!("cannot read {}: {e}", p.display())))
}

/// Comma-separated numbers; each entry may be a constant expression such as
/// `pi/3` or `1/3`. An empty string is the empty list (a point base).
pub fn number_list(s: &str) -> CliResult<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| parse_constant(p.trim()).map_err(|e| usage(format!("bad number {p:?}: {e}"))))
        .collect()
}

pub fn number_list_of(s: &str, n: usize, what: &str) -> CliResult<Vec<f64>> {
    let v = number_list(s)?;
    if v.len() != n {
        return Err(CliError::usage(format!("{what} needs {n} values, got {}", v.len())));
    }
    Ok(v)
}

/// `a,b;c,d;...`.
pub fn point_list(s: &str, dim: usize) -> CliResult<Vec<Vec<f64>>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| number_list_of(p, dim, "seed point"))
        .collect()
}
