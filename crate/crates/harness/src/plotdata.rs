//! Whitespace-delimited plot data: one file per figure-style output with
//! `a` in the first column and mean/stderr pairs per mode.

use std::path::{Path, PathBuf};

use tvsaddle::metrics::Summary;

use crate::config::ModeName;
use crate::error::{HarnessError, Result};
use crate::experiment::AggregateRow;

fn number(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        v.to_string()
    }
}

/// Renders one table. Rows follow the first appearance of each `a`;
/// columns follow the first appearance of each mode. Returns `None` when
/// there are no modes.
pub fn render_table(aggregates: &[AggregateRow], value: impl Fn(&AggregateRow) -> Summary) -> Option<String> {
    let mut rates: Vec<f64> = Vec::new();
    let mut modes: Vec<ModeName> = Vec::new();
    for g in aggregates {
        if !rates.contains(&g.a) {
            rates.push(g.a);
        }
        if !modes.contains(&g.mode) {
            modes.push(g.mode);
        }
    }
    if modes.is_empty() {
        return None;
    }
    let mut out = String::from("# a");
    for m in &modes {
        let name = m.label().replace('-', "_");
        out.push_str(&format!(" {name}_mean {name}_stderr"));
    }
    out.push('\n');
    for a in &rates {
        out.push_str(&number(*a));
        for m in &modes {
            let s = aggregates
                .iter()
                .find(|g| g.a == *a && g.mode == *m)
                .map(&value)
                .unwrap_or(Summary {
                    mean: f64::NAN,
                    stderr: f64::NAN,
                    count: 0,
                });
            out.push_str(&format!(" {} {}", number(s.mean), number(s.stderr)));
        }
        out.push('\n');
    }
    Some(out)
}

/// Writes `error_vs_a.dat` and, when any throughput was measured,
/// `throughput_vs_a.dat`. An empty mode set writes nothing and logs a
/// warning.
pub fn emit_plotdata(aggregates: &[AggregateRow], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let Some(errors) = render_table(aggregates, |g| g.err) else {
        log::warn!("no modes in the aggregates; no plot data written");
        return Ok(written);
    };
    let write = |name: &str, body: &str| -> Result<PathBuf> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| HarnessError::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(path)
    };
    written.push(write("error_vs_a.dat", &errors)?);
    if aggregates.iter().any(|g| !g.throughput.mean.is_nan()) {
        if let Some(body) = render_table(aggregates, |g| g.throughput) {
            written.push(write("throughput_vs_a.dat", &body)?);
        }
    }
    Ok(written)
}
