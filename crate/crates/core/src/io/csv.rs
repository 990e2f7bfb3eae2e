//! Sideband CSV (`f_hz,i,j,k,re,im`, every sideband of every entry) and the
//! one-row metrics CSV.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;

use super::format_sci;
use crate::error::{Diagnostic, Error, Result};
use crate::network::CirculatorMetrics;
use crate::solver::{HarmonicSMatrix, SweepResult};

pub const SIDEBAND_HEADER: [&str; 6] = ["f_hz", "i", "j", "k", "re", "im"];

fn csv_err(path: &Path, e: ::csv::Error) -> Error {
    match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(vec![Diagnostic { line: None, key: None, message: format!("{}: {other:?}", path.display()) }]),
    }
}

/// Sideband table as bytes. Rows are ordered by frequency, then `i`, `j`, `k`.
pub fn sidebands_csv_bytes(sweep: &SweepResult) -> Result<Vec<u8>> {
    if sweep.is_empty() {
        return Err(Error::validation("sweep", "empty"));
    }
    let mut w = ::csv::Writer::from_writer(Vec::new());
    let io = |e| csv_err(Path::new("<memory>"), e);
    w.write_record(SIDEBAND_HEADER).map_err(io)?;
    for (f, p) in sweep.freqs.iter().zip(&sweep.points) {
        let k = p.order as i64;
        let f = format_sci(*f);
        for i in 1..=p.ports {
            for j in 1..=p.ports {
                for q in -k..=k {
                    let v = p.s(i, j, q);
                    w.write_record([
                        f.as_str(),
                        &i.to_string(),
                        &j.to_string(),
                        &q.to_string(),
                        &format_sci(v.re),
                        &format_sci(v.im),
                    ])
                    .map_err(io)?;
                }
            }
        }
    }
    w.into_inner().map_err(|e| Error::Contract(e.to_string()))
}

pub fn write_sidebands_csv(sweep: &SweepResult, path: &Path) -> Result<()> {
    let bytes = sidebands_csv_bytes(sweep)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a sideband table back. Port count and order are taken from the
/// largest `i` and `|k|`; missing entries are zero. `omega_m` is not stored
/// in the file and is set to `omega_m` here.
pub fn read_sidebands_csv(path: &Path, omega_m: f64) -> Result<SweepResult> {
    let mut r = ::csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().ne(SIDEBAND_HEADER) {
        return Err(bad(path, Some(1), format!("expected header {}", SIDEBAND_HEADER.join(","))));
    }
    type Key = (usize, usize, i64);
    let mut rows: Vec<(f64, BTreeMap<Key, Complex64>)> = Vec::new();
    let (mut ports, mut order) = (0usize, 0usize);
    for (n, rec) in r.records().enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 6 {
            return Err(bad(path, Some(line), format!("expected 6 fields, got {}", rec.len())));
        }
        let num = |idx: usize| -> Result<f64> {
            rec[idx].trim().parse().map_err(|_| bad(path, Some(line), format!("{}: not a number", SIDEBAND_HEADER[idx])))
        };
        let int = |idx: usize| -> Result<i64> {
            rec[idx].trim().parse().map_err(|_| bad(path, Some(line), format!("{}: not an integer", SIDEBAND_HEADER[idx])))
        };
        let (f, i, j, k) = (num(0)?, int(1)?, int(2)?, int(3)?);
        if i < 1 || j < 1 {
            return Err(bad(path, Some(line), "ports are 1-based"));
        }
        let v = Complex64::new(num(4)?, num(5)?);
        match rows.last_mut() {
            Some((last, map)) if *last == f => {
                map.insert((i as usize, j as usize, k), v);
            }
            Some((last, _)) if *last > f => {
                return Err(bad(path, Some(line), "frequencies must be non-decreasing"));
            }
            _ => rows.push((f, BTreeMap::from([((i as usize, j as usize, k), v)]))),
        }
        ports = ports.max(i as usize).max(j as usize);
        order = order.max(k.unsigned_abs() as usize);
    }
    if rows.is_empty() {
        return Err(bad(path, None, "no data rows"));
    }
    let width = 2 * order + 1;
    let points = rows
        .iter()
        .map(|(f, map)| {
            let mut e = vec![Complex64::new(0.0, 0.0); ports * ports * width];
            for (&(i, j, k), &v) in map {
                e[((i - 1) * ports + (j - 1)) * width + (k + order as i64) as usize] = v;
            }
            HarmonicSMatrix::from_carrier(2.0 * std::f64::consts::PI * f, omega_m, order, vec![50.0; ports], e)
        })
        .collect();
    Ok(SweepResult { freqs: rows.iter().map(|r| r.0).collect(), points })
}

fn bad(path: &Path, line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Parse(vec![Diagnostic { line, key: Some(path.display().to_string()), message: message.into() }])
}

/// Header of the metrics table for a given bandwidth level.
pub fn metrics_header(level_db: f64) -> [String; 6] {
    [
        "f_notch_hz".into(),
        "isolation_db".into(),
        "il_db".into(),
        "rl_db".into(),
        format!("bw{}_hz", level_db),
        "intermod_frac".into(),
    ]
}

/// Header plus one row; an undefined bandwidth is an empty field.
pub fn metrics_csv_bytes(m: &CirculatorMetrics) -> Vec<u8> {
    let mut w = ::csv::Writer::from_writer(Vec::new());
    let row = [
        format_sci(m.f_notch_hz),
        format_sci(m.isolation_db),
        format_sci(m.insertion_loss_db),
        format_sci(m.return_loss_db),
        m.bandwidth_hz.map(format_sci).unwrap_or_default(),
        format_sci(m.intermod_fraction),
    ];
    w.write_record(metrics_header(m.level_db)).expect("in-memory write");
    w.write_record(&row).expect("in-memory write");
    w.into_inner().expect("in-memory flush")
}

pub fn write_metrics_csv(m: &CirculatorMetrics, path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv_bytes(m)).map_err(|e| Error::io(path, e))
}
