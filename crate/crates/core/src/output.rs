//! CSV emission: every file carries a comment line with the config hash and
//! software version, a header row, and numbers printed with 17 significant
//! digits so doubles round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::embedding::spectrum;
use crate::equation::DensitySeries;
use crate::error::Result;
use crate::linalg::{hs_distance, CMatrix};
use crate::recovery::RecoveredPoint;
use crate::unraveling::{BoundPoint, EnsembleEstimate, Trajectory};

pub fn config_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write one CSV file: comment line, header, then rows.
pub fn write_csv(
    path: &Path,
    meta: &str,
    header: &[String],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# {meta}")?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.into_iter().map(fmt).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Comment-line metadata shared by all files of one run.
pub fn meta_line(config_text: &str, seed: u64) -> String {
    format!(
        "config_sha256={} version={} seed={}",
        config_hash(config_text),
        env!("CARGO_PKG_VERSION"),
        seed
    )
}

fn entry_headers(prefix: &str, d: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(2 * d * d);
    for i in 0..d {
        for j in 0..d {
            out.push(format!("re_{prefix}_{i}{j}"));
            out.push(format!("im_{prefix}_{i}{j}"));
        }
    }
    out
}

fn entry_values(m: &CMatrix) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(2 * d * d);
    for i in 0..d {
        for j in 0..d {
            out.push(m[(i, j)].re);
            out.push(m[(i, j)].im);
        }
    }
    out
}

/// density.csv: t, Re/Im rho entries row-major, trace, min eigenvalue.
pub fn write_density(path: &Path, meta: &str, series: &DensitySeries) -> Result<()> {
    let d = series.states[0].nrows();
    let mut header = vec!["t".to_string()];
    header.extend(entry_headers("rho", d));
    header.push("trace".into());
    header.push("min_eigenvalue".into());
    let rows = series.times.iter().zip(&series.states).map(|(&t, s)| {
        let mut row = vec![t];
        row.extend(entry_values(s));
        row.push(s.trace().re);
        let eigs = spectrum(&crate::linalg::hermitize(s)).expect("hermitized spectrum");
        row.push(eigs[0]);
        row
    });
    write_csv(path, meta, &header, rows)
}

/// trajectories.csv: t, traj_id, Re/Im psi components, mu, lambda.
pub fn write_trajectories(path: &Path, meta: &str, trajs: &[Trajectory]) -> Result<()> {
    let d = trajs
        .first()
        .map(|tr| tr.psi[0].dim())
        .unwrap_or(0);
    let mut header = vec!["t".to_string(), "traj_id".to_string()];
    for k in 0..d {
        header.push(format!("re_psi_{k}"));
        header.push(format!("im_psi_{k}"));
    }
    header.push("mu".into());
    header.push("lambda".into());
    let rows = trajs.iter().enumerate().flat_map(|(id, tr)| {
        tr.grid.iter().enumerate().map(move |(k, &t)| {
            let mut row = vec![t, id as f64];
            for a in tr.psi[k].amplitudes.iter() {
                row.push(a.re);
                row.push(a.im);
            }
            row.push(tr.mu[k]);
            row.push(tr.lambda[k]);
            row
        })
    });
    write_csv(path, meta, &header, rows)
}

/// ensemble.csv: t, Re/Im rho_hat and rho_tilde_hat entries, E[mu^2],
/// entrywise SE columns, then E[mu] and its SE.
pub fn write_ensemble(
    path: &Path,
    meta: &str,
    est: &EnsembleEstimate,
    indices: Option<&[usize]>,
    time_map: impl Fn(f64) -> f64,
) -> Result<()> {
    let d = est.rho_hat[0].nrows();
    let mut header = vec!["t".to_string()];
    header.extend(entry_headers("rho_hat", d));
    header.extend(entry_headers("rho_tilde_hat", d));
    header.push("mu_sq_mean".into());
    header.extend(entry_headers("se_rho_hat", d));
    header.extend(entry_headers("se_rho_tilde_hat", d));
    header.push("mu_sq_se".into());
    header.push("mu_mean".into());
    header.push("mu_se".into());
    let owned: Vec<usize> = match indices {
        Some(ix) => ix.to_vec(),
        None => (0..est.grid.len()).collect(),
    };
    let rows = owned.into_iter().map(|k| {
        let mut row = vec![time_map(est.grid[k])];
        row.extend(entry_values(&est.rho_hat[k]));
        row.extend(entry_values(&est.rho_tilde_hat[k]));
        row.push(est.mu_sq_mean[k]);
        row.extend(entry_values(&est.rho_hat_se[k]));
        row.extend(entry_values(&est.rho_tilde_hat_se[k]));
        row.push(est.mu_sq_se[k]);
        row.push(est.mu_mean[k]);
        row.push(est.mu_se[k]);
        row
    });
    write_csv(path, meta, &header, rows)
}

/// bound.csv: t, squared HS distance, E[mu^2]-1, analytic envelope.
pub fn write_bound(path: &Path, meta: &str, points: &[BoundPoint]) -> Result<()> {
    let header: Vec<String> = ["t", "hs_distance_sq", "mu_sq_minus_one", "envelope"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = points
        .iter()
        .map(|p| vec![p.t, p.distance_sq, p.mu_sq_minus_one, p.envelope]);
    write_csv(path, meta, &header, rows)
}

/// recovery.csv: t, Re/Im recovered-rho entries, HS error vs the stored
/// initial state.
pub fn write_recovery(
    path: &Path,
    meta: &str,
    points: &[RecoveredPoint],
    rho0: &CMatrix,
    time_map: impl Fn(f64) -> f64,
) -> Result<()> {
    let d = rho0.nrows();
    let mut header = vec!["t".to_string()];
    header.extend(entry_headers("rho", d));
    header.push("hs_error_vs_rho0".into());
    let rows = points.iter().map(|p| {
        let mut row = vec![time_map(p.t)];
        row.extend(entry_values(&p.rho));
        row.push(hs_distance(&p.rho, rho0));
        row
    });
    write_csv(path, meta, &header, rows)
}

/// spa.csv: dt, noise rate n, Choi minimum eigenvalue of the deformed step.
pub fn write_spa(path: &Path, meta: &str, rows: &[(f64, f64, f64)]) -> Result<()> {
    let header: Vec<String> = ["dt", "noise_rate", "choi_min_eigenvalue"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_csv(
        path,
        meta,
        &header,
        rows.iter().map(|&(dt, n, e)| vec![dt, n, e]),
    )
}
