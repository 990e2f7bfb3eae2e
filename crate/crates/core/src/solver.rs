//! Conversion-matrix solver for linear periodically time-varying networks.
//!
//! Node voltages are expanded over the sidebands `omega_q = omega0 + q*omega_m`,
//! `q` in `[-K, K]`. Unknowns are ordered sideband-major: block `q` holds every
//! non-ground node voltage at `omega_q`. An LTI element with admittance `Y(w)`
//! contributes `Y(omega_q)` to block `(q, q)`; a modulated varactor with
//! Fourier coefficients `c_k`, `g_k` contributes
//! `j*omega_q*c_{q-p} + g_{q-p}` to block `(q, p)`.
//!
//! Ports are Thevenin sources of impedance `z0` and power waves are
//! referenced to the same real `z0`, so for a unit incident wave the outgoing
//! wave is `b = V/sqrt(z0) - a`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::circuit::{lti_admittance, Circuit, ElementKind, NodeId, GROUND};
use crate::error::{Error, Result};
use crate::modulation::{fourier_series, varactor_waveform_with, FourierCoeffs, DEFAULT_SAMPLES};

/// Upper bound on the truncation order tried by [`converge_k`].
pub const K_MAX: usize = 32;

/// Default truncation order.
pub const DEFAULT_K: usize = 8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Assembled block nodal system at one carrier frequency.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub omega0: f64,
    pub omega_m: f64,
    pub order: usize,
    /// Unknown node voltages per sideband block.
    pub unknowns: usize,
    pub matrix: DMatrix<Complex64>,
}

impl BlockSystem {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Row/column of node `node` (non-ground) in sideband block `q`.
    pub fn index(&self, q: i64, node: NodeId) -> usize {
        debug_assert!(node != GROUND);
        (q + self.order as i64) as usize * self.unknowns + node - 1
    }

    /// Copy of block `(q, p)`.
    pub fn block(&self, q: i64, p: i64) -> DMatrix<Complex64> {
        let r = (q + self.order as i64) as usize * self.unknowns;
        let c = (p + self.order as i64) as usize * self.unknowns;
        self.matrix.view((r, c), (self.unknowns, self.unknowns)).into_owned()
    }

    pub fn sideband_omega(&self, q: i64) -> f64 {
        self.omega0 + q as f64 * self.omega_m
    }
}

/// Harmonic scattering data at one carrier frequency.
///
/// `s(i, j, k)` is the wave leaving port `i` at sideband `k` per unit wave
/// incident on port `j` at the carrier. When produced by the solver the full
/// conversion matrix (incidence at every sideband) is retained as well; it is
/// needed to embed external networks exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSMatrix {
    pub omega0: f64,
    pub omega_m: f64,
    pub order: usize,
    pub ports: usize,
    pub z0: Vec<f64>,
    carrier: Vec<Complex64>,
    conversion: Option<DMatrix<Complex64>>,
}

impl HarmonicSMatrix {
    /// Carrier-incident data only, `entries[(i * P + j) * (2K+1) + k + K]`
    /// with zero-based ports.
    pub fn from_carrier(omega0: f64, omega_m: f64, order: usize, z0: Vec<f64>, entries: Vec<Complex64>) -> Self {
        let ports = z0.len();
        assert_eq!(entries.len(), ports * ports * (2 * order + 1));
        HarmonicSMatrix { omega0, omega_m, order, ports, z0, carrier: entries, conversion: None }
    }

    /// Builds from a full conversion matrix indexed by [`wave_index`](Self::wave_index).
    pub fn from_conversion(omega0: f64, omega_m: f64, order: usize, z0: Vec<f64>, full: DMatrix<Complex64>) -> Self {
        let ports = z0.len();
        let width = 2 * order + 1;
        assert_eq!(full.nrows(), ports * width);
        let mut carrier = vec![ZERO; ports * ports * width];
        for i in 0..ports {
            for j in 0..ports {
                for k in 0..width {
                    carrier[(i * ports + j) * width + k] = full[(i * width + k, j * width + order)];
                }
            }
        }
        HarmonicSMatrix { omega0, omega_m, order, ports, z0, carrier, conversion: Some(full) }
    }

    pub fn freq_hz(&self) -> f64 {
        self.omega0 / (2.0 * PI)
    }

    fn slot(&self, i: usize, j: usize, k: i64) -> usize {
        assert!((1..=self.ports).contains(&i) && (1..=self.ports).contains(&j), "port out of range");
        assert!(k.unsigned_abs() as usize <= self.order, "sideband {k} outside order {}", self.order);
        ((i - 1) * self.ports + (j - 1)) * (2 * self.order + 1) + (k + self.order as i64) as usize
    }

    /// Entry for 1-based ports `i`, `j` and sideband `k`.
    pub fn s(&self, i: usize, j: usize, k: i64) -> Complex64 {
        self.carrier[self.slot(i, j, k)]
    }

    /// Index of `(port, sideband)` in the conversion matrix; `port` 1-based.
    pub fn wave_index(&self, port: usize, k: i64) -> usize {
        (port - 1) * (2 * self.order + 1) + (k + self.order as i64) as usize
    }

    pub fn conversion(&self) -> Option<&DMatrix<Complex64>> {
        self.conversion.as_ref()
    }

    pub fn carrier_entries(&self) -> &[Complex64] {
        &self.carrier
    }

    /// Largest `|self - other|` over entries present in both (common sidebands).
    pub fn max_abs_diff(&self, other: &HarmonicSMatrix) -> f64 {
        assert_eq!(self.ports, other.ports);
        let k = self.order.min(other.order) as i64;
        let mut worst = 0.0f64;
        for i in 1..=self.ports {
            for j in 1..=self.ports {
                for q in -k..=k {
                    worst = worst.max((self.s(i, j, q) - other.s(i, j, q)).norm());
                }
            }
        }
        worst
    }

    /// `sum_{i,k} |S[i][j][k]|^2` for drive port `j`.
    pub fn scattered_power(&self, j: usize) -> f64 {
        let k = self.order as i64;
        (1..=self.ports)
            .flat_map(|i| (-k..=k).map(move |q| (i, q)))
            .map(|(i, q)| self.s(i, j, q).norm_sqr())
            .sum()
    }
}

/// Harmonic data over a uniform frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub freqs: Vec<f64>,
    pub points: Vec<HarmonicSMatrix>,
}

impl SweepResult {
    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn ports(&self) -> usize {
        self.points.first().map_or(0, |p| p.ports)
    }

    pub fn order(&self) -> usize {
        self.points.first().map_or(0, |p| p.order)
    }

    /// `|S[i][j][k]|` in dB across the grid.
    pub fn db(&self, i: usize, j: usize, k: i64) -> Vec<f64> {
        self.points.iter().map(|p| 20.0 * p.s(i, j, k).norm().log10()).collect()
    }
}

/// A circuit prepared for repeated solves: Fourier coefficients of every
/// modulated element are computed once.
#[derive(Debug, Clone)]
pub struct LptvSolver {
    circuit: Circuit,
    omega_m: f64,
    order: usize,
    /// Per element; `Some` for modulated varactors. Stored to order `2K` or more.
    coeffs: Vec<Option<FourierCoeffs>>,
}

impl LptvSolver {
    pub fn new(circuit: &Circuit, omega_m: f64, order: usize) -> Result<Self> {
        Self::with_samples(circuit, omega_m, order, 2 * order, DEFAULT_SAMPLES)
    }

    /// `coeff_order` must be at least `2 * order`; a larger value lets
    /// [`with_order`](Self::with_order) reuse the coefficients.
    pub fn with_samples(
        circuit: &Circuit,
        omega_m: f64,
        order: usize,
        coeff_order: usize,
        samples: usize,
    ) -> Result<Self> {
        let coeff_order = coeff_order.max(2 * order);
        let fm = circuit.modulation_freq()?;
        if let Some(fm) = fm {
            let expected = 2.0 * PI * fm;
            if !(omega_m > 0.0) || ((omega_m - expected) / expected).abs() > 1e-9 {
                return Err(Error::Unsupported(format!(
                    "omega_m = {omega_m} rad/s does not match the circuit modulation at {fm} Hz"
                )));
            }
        }
        if order > 0 && !(omega_m > 0.0 && omega_m.is_finite()) {
            return Err(Error::validation("omega_m", "must be > 0 when sidebands are requested"));
        }
        let coeffs = circuit
            .elements()
            .iter()
            .map(|e| match &e.kind {
                ElementKind::ModulatedVaractor { varactor, drive } => {
                    let w = varactor_waveform_with(drive, varactor, samples)?;
                    fourier_series(&w, coeff_order).map(Some)
                }
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LptvSolver { circuit: circuit.clone(), omega_m, order, coeffs })
    }

    /// Same circuit at a different truncation order. Recomputes coefficients
    /// only when the stored order is insufficient.
    pub fn with_order(&self, order: usize) -> Result<Self> {
        let have = self.coeffs.iter().flatten().map(|c| c.order).min().unwrap_or(usize::MAX);
        if have >= 2 * order {
            Ok(LptvSolver { order, ..self.clone() })
        } else {
            LptvSolver::new(&self.circuit, self.omega_m, order)
        }
    }

    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn omega_m(&self) -> f64 {
        self.omega_m
    }

    pub fn assemble(&self, omega0: f64) -> Result<BlockSystem> {
        let k = self.order as i64;
        if !(omega0 > 0.0 && omega0.is_finite()) {
            return Err(Error::validation("omega0", format!("must be > 0, got {omega0}")));
        }
        if omega0 - k as f64 * self.omega_m <= 0.0 {
            return Err(Error::validation(
                "omega0",
                format!("lowest sideband omega0 - K*omega_m is not positive at omega0 = {omega0}"),
            ));
        }
        let n = self.circuit.node_count() - 1;
        let width = 2 * self.order + 1;
        let mut sys = BlockSystem {
            omega0,
            omega_m: self.omega_m,
            order: self.order,
            unknowns: n,
            matrix: DMatrix::from_element(width * n, width * n, ZERO),
        };

        for (e, coeffs) in self.circuit.elements().iter().zip(&self.coeffs) {
            let (a, b) = e.nodes;
            match (&e.kind, coeffs) {
                (ElementKind::Port { z0, .. }, _) => {
                    let y = Complex64::new(1.0 / z0, 0.0);
                    for q in -k..=k {
                        stamp(&mut sys, q, q, a, b, y);
                    }
                }
                (ElementKind::ModulatedVaractor { .. }, Some(cf)) => {
                    let constant = cf.is_constant();
                    for q in -k..=k {
                        let wq = sys.sideband_omega(q);
                        for p in -k..=k {
                            if constant && p != q {
                                continue;
                            }
                            let d = q - p;
                            let y = Complex64::i() * wq * cf.c_or_zero(d) + cf.g_or_zero(d);
                            stamp(&mut sys, q, p, a, b, y);
                        }
                    }
                }
                _ => {
                    for q in -k..=k {
                        let y = lti_admittance(e, sys.sideband_omega(q))?;
                        stamp(&mut sys, q, q, a, b, y);
                    }
                }
            }
        }
        Ok(sys)
    }

    /// Full harmonic S-matrix at carrier `omega0`.
    pub fn solve(&self, omega0: f64) -> Result<HarmonicSMatrix> {
        let sys = self.assemble(omega0)?;
        let terminals = self.circuit.port_terminals();
        let ports = terminals.len();
        let width = 2 * self.order + 1;
        let k = self.order as i64;
        let waves = ports * width;
        let dim = sys.dim();

        // One right-hand side per incident (port, sideband): Norton current
        // 2*a/sqrt(z0) with a = 1.
        let mut rhs = DMatrix::from_element(dim, waves, ZERO);
        for (j, &(np, nn, z0, _)) in terminals.iter().enumerate() {
            let cur = Complex64::new(2.0 / z0.sqrt(), 0.0);
            for l in -k..=k {
                let col = j * width + (l + k) as usize;
                if np != GROUND {
                    rhs[(sys.index(l, np), col)] += cur;
                }
                if nn != GROUND {
                    rhs[(sys.index(l, nn), col)] -= cur;
                }
            }
        }

        let lu = sys.matrix.clone().lu();
        let solution = lu.solve(&rhs).filter(|x| x.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        let Some(x) = solution else {
            return Err(Error::Singular { omega0, condition: pivot_condition(&lu.u()) });
        };

        let voltage = |col: usize, q: i64, node: NodeId| {
            if node == GROUND {
                ZERO
            } else {
                x[(sys.index(q, node), col)]
            }
        };
        let scale: Vec<f64> = terminals.iter().map(|t| 10f64.powf(-t.3 / 20.0)).collect();
        let mut full = DMatrix::from_element(waves, waves, ZERO);
        for col in 0..waves {
            let j = col / width;
            for (i, &(np, nn, z0, _)) in terminals.iter().enumerate() {
                for q in -k..=k {
                    let row = i * width + (q + k) as usize;
                    let mut b = (voltage(col, q, np) - voltage(col, q, nn)) / z0.sqrt();
                    if row == col {
                        b -= 1.0;
                    }
                    full[(row, col)] = b * (scale[i] * scale[j]);
                }
            }
        }
        let z0 = terminals.iter().map(|t| t.2).collect();
        Ok(HarmonicSMatrix::from_conversion(omega0, self.omega_m, self.order, z0, full))
    }
}

fn stamp(sys: &mut BlockSystem, q: i64, p: i64, a: NodeId, b: NodeId, y: Complex64) {
    let idx = |n: NodeId, s: i64| (n != GROUND).then(|| sys.index(s, n));
    let (ra, rb, ca, cb) = (idx(a, q), idx(b, q), idx(a, p), idx(b, p));
    for (r, c, v) in [(ra, ca, y), (ra, cb, -y), (rb, cb, y), (rb, ca, -y)] {
        if let (Some(r), Some(c)) = (r, c) {
            sys.matrix[(r, c)] += v;
        }
    }
}

/// Ratio of largest to smallest pivot magnitude.
fn pivot_condition(u: &DMatrix<Complex64>) -> f64 {
    let d: Vec<f64> = u.diagonal().iter().map(|v| v.norm()).collect();
    let max = d.iter().copied().fold(0.0, f64::max);
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn assemble(c: &Circuit, omega0: f64, omega_m: f64, order: usize) -> Result<BlockSystem> {
    LptvSolver::new(c, omega_m, order)?.assemble(omega0)
}

pub fn solve_harmonic_sparams(c: &Circuit, omega0: f64, omega_m: f64, order: usize) -> Result<HarmonicSMatrix> {
    LptvSolver::new(c, omega_m, order)?.solve(omega0)
}

/// Uniform grid `f_start..=f_stop` with `points` samples.
pub fn frequency_grid(f_start: f64, f_stop: f64, points: usize) -> Result<Vec<f64>> {
    if !(f_start > 0.0 && f_start < f_stop && f_stop.is_finite()) {
        return Err(Error::validation(
            "f_start",
            format!("need 0 < f_start < f_stop, got {f_start}..{f_stop}"),
        ));
    }
    if points < 2 {
        return Err(Error::validation("points", format!("need at least 2, got {points}")));
    }
    let step = (f_stop - f_start) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i == points - 1 { f_stop } else { f_start + step * i as f64 })
        .collect())
}

impl LptvSolver {
    /// Solves every grid frequency; parallel across frequencies.
    pub fn sweep(&self, freqs: &[f64]) -> Result<SweepResult> {
        let points = freqs
            .par_iter()
            .map(|&f| self.solve_at_hz(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepResult { freqs: freqs.to_vec(), points })
    }

    pub fn sweep_sequential(&self, freqs: &[f64]) -> Result<SweepResult> {
        let points = freqs.iter().map(|&f| self.solve_at_hz(f)).collect::<Result<Vec<_>>>()?;
        Ok(SweepResult { freqs: freqs.to_vec(), points })
    }

    fn solve_at_hz(&self, f: f64) -> Result<HarmonicSMatrix> {
        self.solve(2.0 * PI * f).map_err(|e| Error::AtFrequency { freq_hz: f, source: Box::new(e) })
    }
}

pub fn sweep(c: &Circuit, f_start: f64, f_stop: f64, points: usize, omega_m: f64, order: usize) -> Result<SweepResult> {
    let grid = frequency_grid(f_start, f_stop, points)?;
    LptvSolver::new(c, omega_m, order)?.sweep(&grid)
}

/// Outcome of the truncation-order ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergedOrder {
    pub order: usize,
    /// `max |S(K) - S(K+2)|` at the returned order.
    pub residual: f64,
}

/// Smallest `K` in `[k_start, K_MAX]` with `max |S(K) - S(K+2)| < tol`.
pub fn converge_k(c: &Circuit, omega0: f64, omega_m: f64, k_start: usize, tol: f64) -> Result<ConvergedOrder> {
    if k_start < 1 {
        return Err(Error::validation("k_start", "must be >= 1"));
    }
    let base = LptvSolver::with_samples(c, omega_m, k_start, 2 * (K_MAX + 2), DEFAULT_SAMPLES)?;
    let mut cache: Vec<Option<HarmonicSMatrix>> = vec![None; K_MAX + 3];
    let mut get = |k: usize| -> Result<HarmonicSMatrix> {
        if cache[k].is_none() {
            cache[k] = Some(base.with_order(k)?.solve(omega0)?);
        }
        Ok(cache[k].clone().expect("just filled"))
    };
    let mut last = f64::NAN;
    for k in k_start..=K_MAX {
        let residual = get(k)?.max_abs_diff(&get(k + 2)?);
        if residual < tol {
            return Ok(ConvergedOrder { order: k, residual });
        }
        last = residual;
    }
    Err(Error::NonConvergence(format!(
        "truncation order exceeded K_MAX = {K_MAX}; residual {last:.3e} >= tol {tol:.3e}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_wye, ModSpec, VaractorSpec, WyeBranch};
    use approx::assert_relative_eq;

    const WM: f64 = 2.0 * PI * 3e6;

    fn reference(phases: [f64; 3]) -> Circuit {
        build_wye(&vec![WyeBranch::default(); 3], &phases).unwrap()
    }

    /// Classical single-frequency nodal analysis, written independently.
    fn classical_s(c: &Circuit, omega: f64) -> DMatrix<Complex64> {
        let n = c.node_count() - 1;
        let mut y = DMatrix::from_element(n, n, ZERO);
        let mut add = |a: usize, b: usize, v: Complex64| {
            if a > 0 {
                y[(a - 1, a - 1)] += v;
            }
            if b > 0 {
                y[(b - 1, b - 1)] += v;
            }
            if a > 0 && b > 0 {
                y[(a - 1, b - 1)] -= v;
                y[(b - 1, a - 1)] -= v;
            }
        };
        for e in c.elements() {
            let v = match &e.kind {
                ElementKind::Port { z0, .. } => Complex64::new(1.0 / z0, 0.0),
                ElementKind::ModulatedVaractor { varactor, .. } => Complex64::i() * omega * varactor.c_zero_bias,
                _ => lti_admittance(e, omega).unwrap(),
            };
            add(e.nodes.0, e.nodes.1, v);
        }
        let t = c.port_terminals();
        let p = t.len();
        let mut s = DMatrix::from_element(p, p, ZERO);
        let inv = y.try_inverse().unwrap();
        for j in 0..p {
            for i in 0..p {
                let z = inv[(t[i].0 - 1, t[j].0 - 1)];
                let v = z * 2.0 / t[j].2.sqrt();
                s[(i, j)] = v / t[i].2.sqrt() - if i == j { 1.0 } else { 0.0 };
            }
        }
        s
    }

    #[test]
    fn k0_reduces_to_classical_nodal_analysis() {
        let c = reference([0.0, 120.0, 240.0]).with_modulation_off();
        let w = 2.0 * PI * 2.52e9;
        let s = solve_harmonic_sparams(&c, w, WM, 0).unwrap();
        let reference = classical_s(&c, w);
        for i in 0..3 {
            for j in 0..3 {
                assert!((s.s(i + 1, j + 1, 0) - reference[(i, j)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn single_modulated_capacitor_block_entries() {
        let mut b = Circuit::builder();
        let n1 = b.node("n1");
        b.port(1, n1, 50.0);
        let drive = ModSpec::default();
        b.varactor("D", n1, GROUND, VaractorSpec::default(), drive);
        let c = b.build().unwrap();
        let k = 3;
        let solver = LptvSolver::new(&c, WM, k).unwrap();
        let w0 = 2.0 * PI * 1e9;
        let sys = solver.assemble(w0).unwrap();
        let cf = fourier_series(&crate::modulation::varactor_waveform(&drive, &VaractorSpec::default()).unwrap(), 2 * k).unwrap();
        for q in -3i64..=3 {
            for p in -3i64..=3 {
                let wq = w0 + q as f64 * WM;
                let mut expect = Complex64::i() * wq * cf.c(q - p) + cf.g(q - p);
                if p == q {
                    expect += 1.0 / 50.0;
                }
                let got = sys.block(q, p)[(0, 0)];
                assert!((got - expect).norm() <= 1e-14 * expect.norm(), "q={q} p={p}");
            }
        }
    }

    #[test]
    fn off_diagonal_blocks_only_where_modulated() {
        let c = reference([0.0, 120.0, 240.0]);
        let sys = assemble(&c, 2.0 * PI * 2.5e9, WM, 2).unwrap();
        let var_nodes: Vec<NodeId> = c
            .modulated_elements()
            .flat_map(|e| [e.nodes.0, e.nodes.1])
            .collect();
        for q in -2i64..=2 {
            for p in -2i64..=2 {
                if p == q {
                    continue;
                }
                let blk = sys.block(q, p);
                for r in 0..sys.unknowns {
                    for col in 0..sys.unknowns {
                        let nonzero = blk[(r, col)] != ZERO;
                        let allowed = c.modulated_elements().any(|e| {
                            let ns = [e.nodes.0, e.nodes.1];
                            ns.contains(&(r + 1)) && ns.contains(&(col + 1))
                        });
                        if nonzero {
                            assert!(allowed, "unexpected coupling {r},{col} in block ({q},{p})");
                        }
                    }
                }
                assert!(var_nodes.iter().any(|&n| blk[(n - 1, n - 1)] != ZERO));
            }
        }
        let off = assemble(&c.with_modulation_off(), 2.0 * PI * 2.5e9, WM, 2).unwrap();
        assert!((0..5).all(|q| (0..5).all(|p| p == q || off.block(q - 2, p - 2).iter().all(|v| *v == ZERO))));
    }

    #[test]
    fn modulation_off_is_reciprocal_and_carrier_only() {
        let c = reference([0.0, 120.0, 240.0]).with_modulation_off();
        let s = solve_harmonic_sparams(&c, 2.0 * PI * 2.51e9, WM, 4).unwrap();
        for i in 1..=3 {
            for j in 1..=3 {
                assert!((s.s(i, j, 0) - s.s(j, i, 0)).norm() < 1e-12);
                for k in [-4, -1, 1, 3] {
                    assert_eq!(s.s(i, j, k), ZERO);
                }
            }
        }
        assert!((s.s(2, 1, 0) - s.s(3, 1, 0)).norm() < 1e-12);
    }

    #[test]
    fn zero_depth_equals_k0_exactly() {
        let var = VaractorSpec { c_reverse_off: 1e-12, c_zero_bias: 1e-12, ..VaractorSpec::default() };
        let drive = ModSpec { amplitude_pp: 2.0, dc_bias: -5.0, ..ModSpec::default() };
        let br = WyeBranch { varactor: var, drive, ..WyeBranch::default() };
        let c = build_wye(&vec![br; 3], &[0.0, 120.0, 240.0]).unwrap();
        let w = 2.0 * PI * 2.52e9;
        let s8 = solve_harmonic_sparams(&c, w, WM, 8).unwrap();
        let s0 = solve_harmonic_sparams(&c, w, WM, 0).unwrap();
        for i in 1..=3 {
            for j in 1..=3 {
                assert_eq!(s8.s(i, j, 0), s0.s(i, j, 0));
            }
        }
    }

    #[test]
    fn two_point_sweep_matches_independent_solves() {
        let c = reference([0.0, 120.0, 240.0]);
        let sw = sweep(&c, 2.5e9, 2.52e9, 2, WM, 3).unwrap();
        let a = solve_harmonic_sparams(&c, 2.0 * PI * 2.5e9, WM, 3).unwrap();
        let b = solve_harmonic_sparams(&c, 2.0 * PI * 2.52e9, WM, 3).unwrap();
        assert_eq!(sw.points[0], a);
        assert_eq!(sw.points[1], b);
    }

    #[test]
    fn parallel_and_sequential_sweeps_identical() {
        let c = reference([0.0, 120.0, 240.0]);
        let solver = LptvSolver::new(&c, WM, 2).unwrap();
        let grid = frequency_grid(2.49e9, 2.53e9, 9).unwrap();
        assert_eq!(solver.sweep(&grid).unwrap(), solver.sweep_sequential(&grid).unwrap());
    }

    #[test]
    fn sweep_rejects_bad_ranges() {
        let c = reference([0.0, 120.0, 240.0]);
        assert!(sweep(&c, 0.0, 1e9, 3, WM, 1).is_err());
        assert!(sweep(&c, 2e9, 1e9, 3, WM, 1).is_err());
        assert!(sweep(&c, 1e9, 2e9, 1, WM, 1).is_err());
    }

    #[test]
    fn mismatched_modulation_rejected() {
        let c = reference([0.0, 120.0, 240.0]);
        assert!(matches!(LptvSolver::new(&c, 2.0 * PI * 4e6, 2), Err(Error::Unsupported(_))));
        let mut b = Circuit::builder();
        let n1 = b.node("n1");
        let n2 = b.node("n2");
        b.port(1, n1, 50.0).port(2, n2, 50.0);
        b.varactor("D1", n1, n2, VaractorSpec::default(), ModSpec::default());
        b.varactor("D2", n2, GROUND, VaractorSpec::default(), ModSpec { freq: 5e6, ..ModSpec::default() });
        b.resistor("R", n1, GROUND, 10.0);
        let c = b.build().unwrap();
        assert!(matches!(LptvSolver::new(&c, WM, 1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn singular_system_reports_frequency() {
        // parallel tank whose admittance cancels exactly at omega = 1
        let mut b = Circuit::builder();
        let n1 = b.node("n1");
        let n2 = b.node("n2");
        b.port(1, n1, 50.0);
        b.resistor("R", n1, GROUND, 50.0);
        b.inductor("L", n2, GROUND, 1.0);
        b.capacitor("C", n2, GROUND, 1.0);
        let c = b.build().unwrap();
        match solve_harmonic_sparams(&c, 1.0, WM, 0) {
            Err(Error::Singular { omega0, condition }) => {
                assert_eq!(omega0, 1.0);
                assert!(condition.is_infinite());
            }
            other => panic!("expected singular system, got {other:?}"),
        }
        assert!(solve_harmonic_sparams(&c, 1.5, WM, 0).is_ok());
    }

    #[test]
    fn converge_k_trivial_cases() {
        let c = reference([0.0, 120.0, 240.0]);
        let w = 2.0 * PI * 2.52e9;
        let off = converge_k(&c.with_modulation_off(), w, WM, 3, 1e-12).unwrap();
        assert_eq!(off.order, 3);
        assert_eq!(off.residual, 0.0);
        let any = converge_k(&c, w, WM, 2, f64::INFINITY).unwrap();
        assert_eq!(any.order, 2);
        assert!(converge_k(&c, w, WM, 0, 1.0).is_err());
    }

    #[test]
    fn passivity_of_reference_circuit() {
        let c = reference([0.0, 120.0, 240.0]);
        let solver = LptvSolver::new(&c, WM, 8).unwrap();
        for f in [2.45e9, 2.5e9, 2.52e9, 2.53e9] {
            let s = solver.solve(2.0 * PI * f).unwrap();
            for j in 1..=3 {
                let p = s.scattered_power(j);
                assert!(p <= 1.0 + 1e-9, "f={f} j={j} p={p}");
            }
        }
    }

    #[test]
    fn conversion_carrier_column_matches_carrier_view() {
        let c = reference([0.0, 120.0, 240.0]);
        let s = solve_harmonic_sparams(&c, 2.0 * PI * 2.52e9, WM, 2).unwrap();
        let full = s.conversion().unwrap();
        assert_relative_eq!(full[(s.wave_index(2, 1), s.wave_index(1, 0))].re, s.s(2, 1, 1).re);
    }
}
