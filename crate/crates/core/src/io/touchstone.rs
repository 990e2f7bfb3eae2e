//! Touchstone v1 (`.sNp`) files holding the carrier (`k = 0`) block.
//!
//! Written files use `# HZ S RI R <z0>` and one matrix row per line. The
//! reader also accepts MA/DB formats and KHZ/MHZ/GHZ units.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use super::format_sci;
use crate::error::{Diagnostic, Error, Result};
use crate::solver::{HarmonicSMatrix, SweepResult};

/// Frequency-domain N-port data as stored in a Touchstone file.
#[derive(Debug, Clone, PartialEq)]
pub struct Touchstone {
    pub ports: usize,
    pub z0: f64,
    pub freqs: Vec<f64>,
    /// Per frequency, row-major `S[i][j]`.
    pub data: Vec<Vec<Complex64>>,
    /// Comment lines without the leading `!`.
    pub comments: Vec<String>,
}

impl Touchstone {
    /// Carrier block of a sweep.
    pub fn from_sweep(sweep: &SweepResult, comments: Vec<String>) -> Result<Self> {
        let first = sweep.points.first().ok_or_else(|| Error::validation("sweep", "empty"))?;
        let z0 = first.z0[0];
        if sweep.points.iter().any(|p| p.z0.iter().any(|&z| z != z0)) {
            return Err(Error::Unsupported("Touchstone v1 needs one reference impedance for all ports".into()));
        }
        let n = first.ports;
        let data = sweep
            .points
            .iter()
            .map(|p| (1..=n).flat_map(|i| (1..=n).map(move |j| p.s(i, j, 0))).collect())
            .collect();
        Ok(Touchstone { ports: n, z0, freqs: sweep.freqs.clone(), data, comments })
    }

    /// Sweep with order 0 (carrier only); the modulation frequency is unknown.
    pub fn to_sweep(&self) -> SweepResult {
        let points = self
            .freqs
            .iter()
            .zip(&self.data)
            .map(|(&f, d)| {
                HarmonicSMatrix::from_carrier(2.0 * std::f64::consts::PI * f, 0.0, 0, vec![self.z0; self.ports], d.clone())
            })
            .collect();
        SweepResult { freqs: self.freqs.clone(), points }
    }

    pub fn s(&self, point: usize, i: usize, j: usize) -> Complex64 {
        self.data[point][(i - 1) * self.ports + (j - 1)]
    }

    pub fn to_text(&self) -> Result<String> {
        check_increasing(&self.freqs).map_err(|m| Error::validation("freqs", m))?;
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "! {c}");
        }
        let _ = writeln!(out, "# HZ S RI R {}", self.z0);
        let n = self.ports;
        for (f, d) in self.freqs.iter().zip(&self.data) {
            for i in 0..n {
                if i == 0 {
                    out.push_str(&format_sci(*f));
                } else {
                    out.push_str(&" ".repeat(format_sci(*f).len()));
                }
                for j in 0..n {
                    // two-port files store S21 before S12
                    let v = if n == 2 && i != j { d[j * n + i] } else { d[i * n + j] };
                    let _ = write!(out, " {} {}", format_sci(v.re), format_sci(v.im));
                }
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub fn parse(text: &str, ports: usize) -> Result<Self> {
        parse(text, ports)
    }
}

fn check_increasing(freqs: &[f64]) -> std::result::Result<(), String> {
    match freqs.windows(2).position(|w| !(w[1] > w[0])) {
        Some(i) => Err(format!("frequencies must be strictly increasing (entry {})", i + 2)),
        None => Ok(()),
    }
}

/// Writes the carrier block of `sweep`; `comments` go to the header.
pub fn write_touchstone(sweep: &SweepResult, path: &Path, comments: &[String]) -> Result<()> {
    let text = Touchstone::from_sweep(sweep, comments.to_vec())?.to_text()?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a file; the port count comes from the `.sNp` extension.
pub fn read_touchstone(path: &Path) -> Result<Touchstone> {
    let ports = path
        .extension()
        .and_then(|e| e.to_str())
        .and_then(|e| e.to_ascii_lowercase().strip_prefix('s')?.strip_suffix('p')?.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::validation("path", format!("{}: expected a .sNp extension", path.display())))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, ports)
}

#[derive(Clone, Copy)]
enum Format {
    Ri,
    Ma,
    Db,
}

fn diag(line: usize, message: impl Into<String>) -> Error {
    Error::Parse(vec![Diagnostic { line: Some(line), key: None, message: message.into() }])
}

fn parse(text: &str, ports: usize) -> Result<Touchstone> {
    let mut comments = Vec::new();
    let mut option: Option<(f64, Format, f64)> = None;
    let mut numbers: Vec<(f64, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let (body, comment) = match raw.split_once('!') {
            Some((b, c)) => (b, Some(c)),
            None => (raw, None),
        };
        if let Some(c) = comment {
            if body.trim().is_empty() && option.is_none() {
                comments.push(c.strip_prefix(' ').unwrap_or(c).to_string());
            }
        }
        let body = body.trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('#') {
            if option.is_some() {
                return Err(diag(line_no, "second option line"));
            }
            option = Some(parse_option(rest).map_err(|m| diag(line_no, m))?);
            continue;
        }
        if option.is_none() {
            return Err(diag(line_no, "data before the option line"));
        }
        for tok in body.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| diag(line_no, format!("not a number: '{tok}'")))?;
            numbers.push((v, line_no));
        }
    }

    let (scale, format, z0) = option.ok_or_else(|| diag(1, "missing option line"))?;
    let per_point = 1 + 2 * ports * ports;
    if !numbers.len().is_multiple_of(per_point) {
        let line = numbers.last().map_or(1, |n| n.1);
        return Err(diag(line, format!("{} values is not a multiple of {per_point}", numbers.len())));
    }
    let mut freqs = Vec::new();
    let mut data: Vec<Vec<Complex64>> = Vec::new();
    for chunk in numbers.chunks(per_point) {
        let f = chunk[0].0 * scale;
        if let Some(&last) = freqs.last() {
            if !(f > last) {
                return Err(diag(chunk[0].1, "frequencies must be strictly increasing"));
            }
        }
        freqs.push(f);
        data.push(
            chunk[1..]
                .chunks(2)
                .map(|p| {
                    let (a, b) = (p[0].0, p[1].0);
                    match format {
                        Format::Ri => Complex64::new(a, b),
                        Format::Ma => Complex64::from_polar(a, b.to_radians()),
                        Format::Db => Complex64::from_polar(10f64.powf(a / 20.0), b.to_radians()),
                    }
                })
                .collect(),
        );
    }
    // two-port files store S21 before S12
    if ports == 2 {
        for d in &mut data {
            d.swap(1, 2);
        }
    }
    Ok(Touchstone { ports, z0, freqs, data, comments })
}

fn parse_option(rest: &str) -> std::result::Result<(f64, Format, f64), String> {
    let mut scale = 1e9;
    let mut format = Format::Ma;
    let mut z0 = 50.0;
    let toks: Vec<String> = rest.split_whitespace().map(|t| t.to_ascii_uppercase()).collect();
    let mut it = toks.iter();
    while let Some(t) = it.next() {
        match t.as_str() {
            "HZ" => scale = 1.0,
            "KHZ" => scale = 1e3,
            "MHZ" => scale = 1e6,
            "GHZ" => scale = 1e9,
            "S" => {}
            "Y" | "Z" | "G" | "H" => return Err(format!("parameter type {t} not supported")),
            "RI" => format = Format::Ri,
            "MA" => format = Format::Ma,
            "DB" => format = Format::Db,
            "R" => {
                z0 = it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| "R must be followed by a number".to_string())?
            }
            other => return Err(format!("unknown option '{other}'")),
        }
    }
    Ok((scale, format, z0))
}
