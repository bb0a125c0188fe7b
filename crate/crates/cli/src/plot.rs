use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::experiments::{ComRow, FlipRow, GapRow, COM_CSV, FLIP_CSV, GAP_CSV};
use crate::output::write_atomic;
use crate::{CliError, PlotKind};

pub const PLOT_DIR: &str = "plot";

fn read_rows<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>, CliError> {
    let p = dir.join(name);
    if !p.exists() {
        return Err(CliError::MissingResults(format!("{} not found", p.display())));
    }
    let mut r = csv::Reader::from_path(&p)?;
    let rows: Vec<T> = r.deserialize().collect::<Result<_, _>>()?;
    if rows.is_empty() {
        return Err(CliError::MissingResults(format!("{} has no rows", p.display())));
    }
    Ok(rows)
}

fn table(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> Vec<u8> {
    let mut s = format!("# {header}\n");
    for r in rows {
        let cells: Vec<String> = r.iter().map(|x| format!("{x:.10e}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s.into_bytes()
}

/// Two- or three-column (x y [yerr]) data files under `<dir>/plot`.
pub fn emit_plot_data(dir: &Path, kind: PlotKind) -> Result<Vec<PathBuf>, CliError> {
    let out = dir.join(PLOT_DIR);
    let mut written = Vec::new();
    match kind {
        PlotKind::GapVsBeta => {
            let rows: Vec<GapRow> = read_rows(dir, GAP_CSV)?;
            let mut by_method: BTreeMap<&str, Vec<&GapRow>> = BTreeMap::new();
            for r in &rows {
                by_method.entry(&r.method).or_default().push(r);
            }
            for (m, rs) in by_method {
                let p = out.join(format!("gap_vs_beta_{m}.dat"));
                let data = rs.iter().map(|r| vec![r.beta, r.value, 0.5 * (r.ci_hi - r.ci_lo)]);
                write_atomic(&p, &table("beta gap half_ci", data))?;
                written.push(p);
            }
        }
        PlotKind::FlipTimeVsBeta => {
            let rows: Vec<FlipRow> = read_rows(dir, FLIP_CSV)?;
            let mut by_beta: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for r in &rows {
                by_beta.entry(r.beta.to_bits()).or_default().push(r.time.ln());
            }
            let mut data: Vec<Vec<f64>> = by_beta
                .into_iter()
                .map(|(b, logs)| {
                    let (m, se) = spinchain_core::numerics::mean_se(&logs);
                    vec![f64::from_bits(b), m, se]
                })
                .collect();
            data.sort_by(|a, b| a[0].total_cmp(&b[0]));
            let p = out.join("flip_time_vs_beta.dat");
            write_atomic(&p, &table("beta mean_log_flip_time se", data))?;
            written.push(p);
        }
        PlotKind::VarianceVsTime => {
            let rows: Vec<ComRow> = read_rows(dir, COM_CSV)?;
            let mut by_beta: BTreeMap<u64, Vec<&ComRow>> = BTreeMap::new();
            for r in &rows {
                by_beta.entry(r.beta.to_bits()).or_default().push(r);
            }
            for (b, rs) in by_beta {
                let p = out.join(format!("variance_vs_time_beta{}.dat", f64::from_bits(b)));
                write_atomic(&p, &table("time variance se", rs.iter().map(|r| vec![r.time, r.variance, r.se])))?;
                written.push(p);
            }
        }
    }
    Ok(written)
}
