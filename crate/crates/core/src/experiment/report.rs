//! Side-by-side comparison of metrics files.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::metrics::{read_metrics_csv, MetricsLine, METRICS_HEADER};

/// Concatenates metrics files into one table. With several inputs each
/// method is prefixed by its file's parent directory name.
pub fn collect_reports(inputs: &[PathBuf]) -> Result<Vec<MetricsLine>> {
    let mut out = Vec::new();
    for path in inputs {
        let lines = read_metrics_csv(path).map_err(|e| e.in_stage("report"))?;
        let prefix = (inputs.len() > 1).then(|| {
            path.parent()
                .and_then(Path::file_name)
                .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
        });
        for (method, vals) in lines {
            let name = prefix.as_ref().map_or(method.clone(), |p| format!("{p}/{method}"));
            out.push((name, vals));
        }
    }
    Ok(out)
}

fn field(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

/// Fixed-width text rendering, one row per method.
pub fn render_table(lines: &[MetricsLine]) -> String {
    let width = lines.iter().map(|(m, _)| m.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:<width$}", "method");
    for h in METRICS_HEADER.split(',').skip(1) {
        s.push_str(&format!(" {h:>8}"));
    }
    s.push('\n');
    for (method, vals) in lines {
        s.push_str(&format!("{method:<width$}"));
        for v in vals {
            s.push_str(&format!(" {:>8}", field(*v)));
        }
        s.push('\n');
    }
    s
}

pub fn write_report_csv(path: &Path, lines: &[MetricsLine]) -> Result<()> {
    let rows = lines.iter().map(|(m, vals)| {
        let fields: Vec<String> = vals
            .iter()
            .map(|v| v.map_or_else(|| "NA".to_string(), |x| x.to_string()))
            .collect();
        format!("{m},{}", fields.join(","))
    });
    super::write_csv(path, METRICS_HEADER, rows)
}
