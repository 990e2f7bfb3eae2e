//! Time-domain periodic steady state, used as an independent check on the
//! conversion-matrix solver.
//!
//! The network is written in charge/flux form `d(E(t) x)/dt + A(t) x = b(t)`
//! with node voltages, inductor currents and, for each BVD resonator, the
//! motional current and motional-capacitor voltage as unknowns. Time-varying
//! capacitors enter through their charge `q = C(t) v`, so charge is conserved
//! across capacitance steps. The trapezoidal rule
//!
//! ```text
//! (E[n+1] + h/2 A[n+1]) x[n+1] = (E[n] - h/2 A[n]) x[n] + h/2 (b[n] + b[n+1])
//! ```
//!
//! is stepped from rest over whole common periods of drive and modulation
//! until two successive periods agree, then phasors are extracted by DFT
//! over one more period. Drive and modulation must be commensurate.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::circuit::{Circuit, ElementKind, NodeId, GROUND};
use crate::error::{Error, Result};
use crate::modulation::VaractorDrive;
use crate::solver::LptvSolver;

/// Largest accepted denominator of `f0 / f_m`.
pub const MAX_DENOMINATOR: u64 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TransientOptions {
    /// Time steps per carrier cycle (at least 64).
    pub steps_per_cycle: usize,
    /// Period-to-period relative RMS change that counts as steady state.
    pub tol: f64,
    pub max_periods: usize,
    /// Sidebands `[-K, K]` to extract.
    pub sidebands: usize,
    /// Repeat at half the step and combine the two phasor sets by Richardson
    /// extrapolation (the trapezoidal error is second order).
    pub extrapolate: bool,
    /// Incident wave amplitude (sqrt(W)).
    pub amplitude: f64,
    pub keep_waveforms: bool,
}

impl Default for TransientOptions {
    fn default() -> Self {
        TransientOptions {
            steps_per_cycle: 128,
            tol: 1e-8,
            max_periods: 2000,
            sidebands: 8,
            extrapolate: true,
            amplitude: 1.0,
            keep_waveforms: false,
        }
    }
}

/// Energy bookkeeping over the extraction period, in joules.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyAudit {
    /// Delivered by the Thevenin source of the driven port.
    pub source: f64,
    /// Absorbed by the port reference resistances.
    pub ports: f64,
    /// Dissipated in resistors, motional resistances and varactor conductance.
    pub resistive: f64,
    /// Net energy absorbed by time-varying capacitances (modulation work).
    pub pump: f64,
    /// Change of energy stored in LTI reactances over the period.
    pub stored: f64,
}

impl EnergyAudit {
    /// `|source - (ports + resistive + pump + stored)| / |source|`.
    pub fn relative_residual(&self) -> f64 {
        let rhs = self.ports + self.resistive + self.pump + self.stored;
        if self.source == 0.0 {
            rhs.abs()
        } else {
            ((self.source - rhs) / self.source).abs()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientResult {
    /// Common period of drive and modulation.
    pub period: f64,
    pub f0: f64,
    pub f_m: f64,
    pub drive_port: usize,
    pub ports: usize,
    pub sidebands: usize,
    pub steps_per_period: usize,
    pub periods_run: usize,
    /// Relative RMS change between the last two periods.
    pub residual: f64,
    /// Incident wave phasor at the drive port.
    pub incident: Complex64,
    /// Outgoing wave phasors, `b[(port - 1) * (2K+1) + k + K]`.
    pub b: Vec<Complex64>,
    pub energy: EnergyAudit,
    /// Node voltages over the extraction period, `[step][node - 1]`, when
    /// requested.
    pub node_waveforms: Vec<Vec<f64>>,
    pub node_names: Vec<String>,
}

impl TransientResult {
    /// `b / a` for 1-based `port` and sideband `k`.
    pub fn s(&self, port: usize, k: i64) -> Complex64 {
        self.b[(port - 1) * (2 * self.sidebands + 1) + (k + self.sidebands as i64) as usize] / self.incident
    }

    /// Sample times of [`node_waveforms`](Self::node_waveforms).
    pub fn times(&self) -> Vec<f64> {
        let h = self.period / self.steps_per_period as f64;
        (0..self.node_waveforms.len()).map(|n| n as f64 * h).collect()
    }

    /// Writes `time,<node>,...` rows for the stored waveforms.
    pub fn write_waveforms_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut header = String::from("time_s");
        for n in &self.node_names {
            header.push(',');
            header.push_str(n);
        }
        let io = |e| Error::io(path, e);
        writeln!(w, "{header}").map_err(io)?;
        for (t, row) in self.times().iter().zip(&self.node_waveforms) {
            write!(w, "{t:.12e}").map_err(io)?;
            for v in row {
                write!(w, ",{v:.12e}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// `(p, q)` with `f0 / f_m = p / q`, `q <= MAX_DENOMINATOR`.
pub fn commensurate_ratio(f0: f64, f_m: f64) -> Option<(u64, u64)> {
    let r = f0 / f_m;
    (1..=MAX_DENOMINATOR).find_map(|q| {
        let p = (r * q as f64).round();
        ((r * q as f64 - p).abs() <= 1e-9 * r * q as f64 && p >= 1.0).then_some((p as u64, q))
    })
}

#[derive(Clone, Copy)]
enum Branch {
    Conductance { a: NodeId, b: NodeId, g: f64 },
    Capacitor { a: NodeId, b: NodeId, c: f64 },
    Inductor { a: NodeId, b: NodeId, l: f64, cur: usize },
    Motional { a: NodeId, b: NodeId, rm: f64, lm: f64, cm: f64, cur: usize, volt: usize },
    Varactor { a: NodeId, b: NodeId, index: usize },
    Port { node: NodeId, reference: NodeId, z0: f64 },
}

struct Network {
    dim: usize,
    nodes: usize,
    branches: Vec<Branch>,
    drives: Vec<VaractorDrive>,
    e_const: DMatrix<f64>,
    a_const: DMatrix<f64>,
}

fn node_index(n: NodeId) -> Option<usize> {
    (n != GROUND).then(|| n - 1)
}

fn stamp2(m: &mut DMatrix<f64>, a: NodeId, b: NodeId, v: f64) {
    let (ia, ib) = (node_index(a), node_index(b));
    if let Some(i) = ia {
        m[(i, i)] += v;
    }
    if let Some(j) = ib {
        m[(j, j)] += v;
    }
    if let (Some(i), Some(j)) = (ia, ib) {
        m[(i, j)] -= v;
        m[(j, i)] -= v;
    }
}

/// Current unknown `cur` flowing from `a` to `b` leaves node `a`.
fn stamp_incidence(m: &mut DMatrix<f64>, a: NodeId, b: NodeId, cur: usize) {
    if let Some(i) = node_index(a) {
        m[(i, cur)] += 1.0;
        m[(cur, i)] -= 1.0;
    }
    if let Some(j) = node_index(b) {
        m[(j, cur)] -= 1.0;
        m[(cur, j)] += 1.0;
    }
}

impl Network {
    fn new(c: &Circuit) -> Result<Self> {
        let nodes = c.node_count() - 1;
        let mut dim = nodes;
        let mut branches = Vec::new();
        let mut drives = Vec::new();
        for e in c.elements() {
            let (a, b) = e.nodes;
            let br = match &e.kind {
                ElementKind::Resistor { ohms } => Branch::Conductance { a, b, g: 1.0 / ohms },
                ElementKind::Capacitor { farads } => Branch::Capacitor { a, b, c: *farads },
                ElementKind::Inductor { henries } => {
                    dim += 1;
                    Branch::Inductor { a, b, l: *henries, cur: dim - 1 }
                }
                ElementKind::BvdResonator(p) => {
                    branches.push(Branch::Capacitor { a, b, c: p.c0 });
                    dim += 2;
                    Branch::Motional { a, b, rm: p.rm, lm: p.lm, cm: p.cm, cur: dim - 2, volt: dim - 1 }
                }
                ElementKind::ModulatedVaractor { varactor, drive } => {
                    let d = VaractorDrive::new(drive, varactor)?;
                    if drive.is_active() && drive.rise_fraction == 0.0 && !d.is_constant() {
                        return Err(Error::Unsupported(format!(
                            "varactor '{}' switches C and G discontinuously (rise_fraction = 0)",
                            e.name
                        )));
                    }
                    drives.push(d);
                    Branch::Varactor { a, b, index: drives.len() - 1 }
                }
                ElementKind::Port { z0, .. } => Branch::Port { node: a, reference: b, z0: *z0 },
            };
            branches.push(br);
        }
        let mut e_const = DMatrix::zeros(dim, dim);
        let mut a_const = DMatrix::zeros(dim, dim);
        for br in &branches {
            match *br {
                Branch::Conductance { a, b, g } => stamp2(&mut a_const, a, b, g),
                Branch::Capacitor { a, b, c } => stamp2(&mut e_const, a, b, c),
                Branch::Port { node, reference, z0, .. } => stamp2(&mut a_const, node, reference, 1.0 / z0),
                Branch::Inductor { a, b, l, cur } => {
                    stamp_incidence(&mut a_const, a, b, cur);
                    e_const[(cur, cur)] = l;
                }
                Branch::Motional { a, b, rm, lm, cm, cur, volt } => {
                    stamp_incidence(&mut a_const, a, b, cur);
                    e_const[(cur, cur)] = lm;
                    a_const[(cur, cur)] = rm;
                    a_const[(cur, volt)] = 1.0;
                    e_const[(volt, volt)] = cm;
                    a_const[(volt, cur)] = -1.0;
                }
                Branch::Varactor { .. } => {}
            }
        }
        Ok(Network { dim, nodes, branches, drives, e_const, a_const })
    }

    fn matrices(&self, states: &[(f64, f64)]) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut e = self.e_const.clone();
        let mut a = self.a_const.clone();
        for br in &self.branches {
            if let Branch::Varactor { a: na, b: nb, index } = *br {
                let (c, g) = states[index];
                stamp2(&mut e, na, nb, c);
                stamp2(&mut a, na, nb, g);
            }
        }
        (e, a)
    }
}

fn voltage(x: &DVector<f64>, n: NodeId) -> f64 {
    node_index(n).map_or(0.0, |i| x[i])
}

struct RunSetup<'a> {
    net: &'a Network,
    steps: usize,
    /// Carrier cycles and modulation cycles per common period.
    p: u64,
    q: u64,
    h: f64,
    drive: (NodeId, NodeId, f64),
    source_amp: f64,
}

struct PeriodOutput {
    x_end: DVector<f64>,
    nodes: Vec<f64>,
    b_acc: Option<Vec<Complex64>>,
    energy: EnergyAudit,
}

impl RunSetup<'_> {
    fn states_at(&self, n: usize) -> Vec<(f64, f64)> {
        let step = (n % self.steps) as u64;
        // modulation cycles since the period start, exact in integers
        let u = ((step * self.q) % self.steps as u64) as f64 / self.steps as f64;
        self.net.drives.iter().map(|d| d.state_at_cycle(u)).collect()
    }

    fn source(&self, n: usize) -> f64 {
        let step = ((n % self.steps) as u64 * self.p) % self.steps as u64;
        self.source_amp * (2.0 * PI * step as f64 / self.steps as f64).sin()
    }

    /// Advances one common period from `x0`. With `extract`, accumulates DFT
    /// sums for the listed `(port node, reference, frequency index)` pairs
    /// and audits energy.
    fn period(
        &self,
        x0: &DVector<f64>,
        extract: Option<&[(NodeId, NodeId, u64)]>,
        table: &[Complex64],
        keep: bool,
    ) -> Result<PeriodOutput> {
        let net = self.net;
        let half_h = 0.5 * self.h;
        let mut x = x0.clone();
        let mut x_next = DVector::zeros(net.dim);
        let mut states = self.states_at(0);
        let (e, a) = net.matrices(&states);
        let mut rhs_mat = &e - &a * half_h;
        let mut lhs = (e + a * half_h).lu();
        let mut nodes = Vec::with_capacity(if keep || extract.is_none() { self.steps * net.nodes } else { 0 });
        let mut b_acc = extract.map(|ex| vec![Complex64::new(0.0, 0.0); ex.len()]);
        let mut energy = EnergyAudit::default();
        let (dn, dr, z0) = self.drive;

        let mut src = self.source(0);
        for n in 0..self.steps {
            if nodes.capacity() > 0 {
                nodes.extend(x.iter().take(net.nodes));
            }
            if let (Some(acc), Some(ex)) = (b_acc.as_mut(), extract) {
                for (slot, &(np, nr, fidx)) in acc.iter_mut().zip(ex) {
                    let v = voltage(&x, np) - voltage(&x, nr);
                    let idx = ((n as u64 * fidx) % self.steps as u64) as usize;
                    *slot += table[idx] * v;
                }
            }
            // right-hand side with the step-n matrix, solved in place
            x_next.gemv(1.0, &rhs_mat, &x, 0.0);
            let next_states = self.states_at(n + 1);
            let changed = next_states != states;
            if changed {
                let (e, a) = net.matrices(&next_states);
                lhs = (&e + &a * half_h).lu();
                rhs_mat = e - a * half_h;
            }
            let src_next = self.source(n + 1);
            let inject = half_h * (src + src_next) / z0;
            if let Some(i) = node_index(dn) {
                x_next[i] += inject;
            }
            if let Some(i) = node_index(dr) {
                x_next[i] -= inject;
            }
            if !lhs.solve_mut(&mut x_next) {
                return Err(Error::NonConvergence(format!("singular transient step matrix at step {n}")));
            }
            if extract.is_some() {
                self.audit(&mut energy, &x, &x_next, &states, &next_states, 0.5 * (src + src_next));
            }
            if changed {
                states = next_states;
            }
            std::mem::swap(&mut x, &mut x_next);
            src = src_next;
        }
        Ok(PeriodOutput { x_end: x, nodes, b_acc, energy })
    }

    fn audit(
        &self,
        en: &mut EnergyAudit,
        x0: &DVector<f64>,
        x1: &DVector<f64>,
        s0: &[(f64, f64)],
        s1: &[(f64, f64)],
        src_mid: f64,
    ) {
        let h = self.h;
        let mid = |n: NodeId| 0.5 * (voltage(x0, n) + voltage(x1, n));
        let across = |x: &DVector<f64>, a: NodeId, b: NodeId| voltage(x, a) - voltage(x, b);
        for br in &self.net.branches {
            match *br {
                Branch::Conductance { a, b, g } => {
                    let v = mid(a) - mid(b);
                    en.resistive += g * v * v * h;
                }
                Branch::Capacitor { a, b, c } => {
                    let v = mid(a) - mid(b);
                    en.stored += v * c * (across(x1, a, b) - across(x0, a, b));
                }
                Branch::Inductor { a, b, cur, .. } => {
                    let v = mid(a) - mid(b);
                    en.stored += v * 0.5 * (x0[cur] + x1[cur]) * h;
                }
                Branch::Motional { a, b, rm, cur, .. } => {
                    let v = mid(a) - mid(b);
                    let i = 0.5 * (x0[cur] + x1[cur]);
                    en.resistive += rm * i * i * h;
                    en.stored += (v * i - rm * i * i) * h;
                }
                Branch::Varactor { a, b, index } => {
                    let v = mid(a) - mid(b);
                    let (v0, v1) = (across(x0, a, b), across(x1, a, b));
                    let (c0, g0) = s0[index];
                    let (c1, g1) = s1[index];
                    en.pump += v * (c1 * v1 - c0 * v0);
                    en.resistive += v * 0.5 * (g0 * v0 + g1 * v1) * h;
                }
                Branch::Port { node, reference, z0, .. } => {
                    let v = mid(node) - mid(reference);
                    let vs = if (node, reference) == (self.drive.0, self.drive.1) { src_mid } else { 0.0 };
                    let i = (vs - v) / z0;
                    en.source += vs * i * h;
                    en.ports += i * i * z0 * h;
                }
            }
        }
    }
}

/// Periodic steady state for a single-tone drive at `f0` into `drive_port`.
pub fn transient_pss(
    c: &Circuit,
    f0: f64,
    omega_m: f64,
    drive_port: usize,
    opts: &TransientOptions,
) -> Result<TransientResult> {
    if opts.extrapolate {
        let coarse = run_pss(c, f0, omega_m, drive_port, opts.steps_per_cycle, opts)?;
        let fine = run_pss(c, f0, omega_m, drive_port, 2 * opts.steps_per_cycle, opts)?;
        let b = coarse
            .b
            .iter()
            .zip(&fine.b)
            .map(|(c, f)| (4.0 * f - c) / 3.0)
            .collect();
        Ok(TransientResult { b, ..fine })
    } else {
        run_pss(c, f0, omega_m, drive_port, opts.steps_per_cycle, opts)
    }
}

fn run_pss(
    c: &Circuit,
    f0: f64,
    omega_m: f64,
    drive_port: usize,
    steps_per_cycle: usize,
    opts: &TransientOptions,
) -> Result<TransientResult> {
    if steps_per_cycle < 64 {
        return Err(Error::validation("steps_per_cycle", "at least 64 samples per carrier cycle are required"));
    }
    if !(f0 > 0.0) || !(omega_m > 0.0) {
        return Err(Error::validation("f0", "carrier and modulation frequencies must be > 0"));
    }
    if drive_port == 0 || drive_port > c.port_count() {
        return Err(Error::validation("drive_port", format!("port {drive_port} does not exist")));
    }
    let f_m = omega_m / (2.0 * PI);
    if let Some(fm) = c.modulation_freq()? {
        if ((fm - f_m) / fm).abs() > 1e-9 {
            return Err(Error::Unsupported(format!("omega_m does not match circuit modulation at {fm} Hz")));
        }
    }
    let (p, q) = commensurate_ratio(f0, f_m).ok_or_else(|| {
        Error::Unsupported(format!(
            "f0 / f_m = {} is not a ratio with denominator <= {MAX_DENOMINATOR}",
            f0 / f_m
        ))
    })?;
    let k = opts.sidebands as i64;
    if (p as i64) <= k * q as i64 {
        return Err(Error::validation("sidebands", "lowest extracted sideband must be above dc"));
    }

    let net = Network::new(c)?;
    let period = q as f64 / f_m;
    let steps = p as usize * steps_per_cycle;
    let terminals = c.port_terminals();
    let (dn, dr, z0d, _) = terminals[drive_port - 1];
    let setup = RunSetup {
        net: &net,
        steps,
        p,
        q,
        h: period / steps as f64,
        drive: (dn, dr, z0d),
        source_amp: 2.0 * z0d.sqrt() * opts.amplitude,
    };

    let table: Vec<Complex64> = (0..steps)
        .map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 / steps as f64))
        .collect();

    let mut x = DVector::zeros(net.dim);
    let mut prev: Option<Vec<f64>> = None;
    let mut periods = 0;
    let mut residual = f64::INFINITY;
    loop {
        if periods >= opts.max_periods {
            return Err(Error::NonConvergence(format!(
                "no periodic steady state after {periods} periods (relative change {residual:.3e})"
            )));
        }
        let out = setup.period(&x, None, &table, false)?;
        periods += 1;
        x = out.x_end;
        if let Some(p) = &prev {
            let (mut num, mut den) = (0.0, 0.0);
            for (a, b) in out.nodes.iter().zip(p) {
                num += (a - b) * (a - b);
                den += a * a;
            }
            residual = if den == 0.0 { num.sqrt() } else { (num / den).sqrt() };
            if residual < opts.tol {
                break;
            }
        }
        prev = Some(out.nodes);
    }

    let width = 2 * opts.sidebands + 1;
    let extract: Vec<(NodeId, NodeId, u64)> = terminals
        .iter()
        .flat_map(|&(np, nr, _, _)| {
            (-k..=k).map(move |kk| (np, nr, (p as i64 + kk * q as i64) as u64))
        })
        .collect();
    let out = setup.period(&x, Some(&extract), &table, opts.keep_waveforms)?;
    let acc = out.b_acc.expect("extraction requested");
    let incident = Complex64::new(0.0, -opts.amplitude);
    let scale: Vec<f64> = terminals.iter().map(|t| 10f64.powf(-t.3 / 20.0)).collect();
    let mut b = vec![Complex64::new(0.0, 0.0); terminals.len() * width];
    for (i, &(_, _, z0, _)) in terminals.iter().enumerate() {
        for kk in 0..width {
            let v = acc[i * width + kk] * (2.0 / steps as f64);
            let mut w = v / z0.sqrt();
            if i + 1 == drive_port && kk == opts.sidebands {
                w -= incident;
            }
            b[i * width + kk] = w * scale[i] * scale[drive_port - 1];
        }
    }
    let node_waveforms = if opts.keep_waveforms {
        out.nodes.chunks(net.nodes).map(|c| c.to_vec()).collect()
    } else {
        Vec::new()
    };
    Ok(TransientResult {
        period,
        f0,
        f_m,
        drive_port,
        ports: terminals.len(),
        sidebands: opts.sidebands,
        steps_per_period: steps,
        periods_run: periods + 1,
        residual,
        incident,
        b,
        energy: out.energy,
        node_waveforms,
        node_names: (1..c.node_count()).map(|n| c.node_name(n).to_string()).collect(),
    })
}

/// Thresholds and scope of an oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSettings {
    pub max_db: f64,
    pub max_phase_deg: f64,
    /// Entries below this magnitude in both solvers are reported but not judged.
    pub floor_db: f64,
    /// Compare sidebands `|k| <= compare_sidebands`.
    pub compare_sidebands: usize,
    pub drive_ports: Vec<usize>,
    pub transient: TransientOptions,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            max_db: 0.1,
            max_phase_deg: 1.0,
            floor_db: -60.0,
            compare_sidebands: 1,
            drive_ports: vec![1],
            transient: TransientOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEntry {
    pub f_hz: f64,
    pub i: usize,
    pub j: usize,
    pub k: i64,
    pub harmonic: Complex64,
    pub transient: Complex64,
    pub db_delta: f64,
    pub phase_delta_deg: f64,
    /// False when both magnitudes are under the floor.
    pub judged: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub entries: Vec<OracleEntry>,
    /// Frequencies where the transient run failed, with the reason.
    pub failures: Vec<(f64, String)>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.entries.iter().all(|e| e.pass)
    }

    pub fn exceedances(&self) -> usize {
        self.entries.iter().filter(|e| !e.pass).count() + self.failures.len()
    }

    pub fn max_db_delta(&self) -> f64 {
        self.entries.iter().filter(|e| e.judged).map(|e| e.db_delta).fold(0.0, f64::max)
    }

    pub fn max_phase_delta(&self) -> f64 {
        self.entries.iter().filter(|e| e.judged).map(|e| e.phase_delta_deg).fold(0.0, f64::max)
    }
}

/// Compares conversion-matrix (order `order`) and transient results at each
/// commensurate frequency.
pub fn compare_oracle(
    c: &Circuit,
    freqs: &[f64],
    omega_m: f64,
    order: usize,
    settings: &OracleSettings,
) -> Result<OracleReport> {
    let solver = LptvSolver::new(c, omega_m, order)?;
    let kc = settings.compare_sidebands.min(order).min(settings.transient.sidebands) as i64;
    let mut report = OracleReport { entries: Vec::new(), failures: Vec::new() };
    for &f in freqs {
        let hb = match solver.solve(2.0 * PI * f) {
            Ok(s) => s,
            Err(e) => {
                report.failures.push((f, format!("harmonic solve: {e}")));
                continue;
            }
        };
        for &j in &settings.drive_ports {
            let tr = match transient_pss(c, f, omega_m, j, &settings.transient) {
                Ok(t) => t,
                Err(e) => {
                    report.failures.push((f, e.to_string()));
                    continue;
                }
            };
            for i in 1..=hb.ports {
                for k in -kc..=kc {
                    let a = hb.s(i, j, k);
                    let b = tr.s(i, k);
                    let (da, db) = (20.0 * a.norm().log10(), 20.0 * b.norm().log10());
                    let judged = da > settings.floor_db || db > settings.floor_db;
                    let db_delta = (da - db).abs();
                    let phase = (a * b.conj()).arg().to_degrees().abs();
                    let pass = !judged || (db_delta <= settings.max_db && phase <= settings.max_phase_deg);
                    report.entries.push(OracleEntry {
                        f_hz: f,
                        i,
                        j,
                        k,
                        harmonic: a,
                        transient: b,
                        db_delta,
                        phase_delta_deg: phase,
                        judged,
                        pass,
                    });
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rc_divider() -> Circuit {
        let mut b = Circuit::builder();
        let n1 = b.node("n1");
        let n2 = b.node("n2");
        b.port(1, n1, 50.0).resistor("R", n1, n2, 50.0).capacitor("C", n2, GROUND, 1e-12);
        b.build().unwrap()
    }

    fn rc_s11(f: f64) -> Complex64 {
        let zin = Complex64::new(50.0, -1.0 / (2.0 * PI * f * 1e-12));
        (zin - 50.0) / (zin + 50.0)
    }

    const F0: f64 = 2.5e9;
    const WM_RC: f64 = 2.0 * PI * 500e6;

    fn opts(spc: usize, extrapolate: bool) -> TransientOptions {
        TransientOptions { steps_per_cycle: spc, extrapolate, sidebands: 1, ..TransientOptions::default() }
    }

    #[test]
    fn ratio_detection() {
        assert_eq!(commensurate_ratio(2502e6, 3e6), Some((834, 1)));
        assert_eq!(commensurate_ratio(2.5e9 + 1e6, 3e6), Some((2501, 3)));
        assert_eq!(commensurate_ratio(2.5e9 + 0.1e6, 3e6), None);
    }

    #[test]
    fn rc_divider_matches_one_pole_response() {
        let t = transient_pss(&rc_divider(), F0, WM_RC, 1, &opts(256, true)).unwrap();
        let err = (t.s(1, 0) - rc_s11(F0)).norm() / rc_s11(F0).norm();
        assert!(err < 1e-6, "relative error {err:e}");
        // node 2 follows 1/(1 + j w C (R + Z0)) of the source
        let w = 2.0 * PI * F0;
        let h = Complex64::new(1.0, w * 1e-12 * 100.0).inv();
        let v1 = (t.s(1, 0) + 1.0) * 50f64.sqrt();
        let zc = Complex64::new(0.0, -1.0 / (w * 1e-12));
        let v2 = v1 * zc / (zc + 50.0);
        let vs = Complex64::new(2.0 * 50f64.sqrt(), 0.0);
        assert!(((v2 / vs) - h).norm() < 1e-6 * h.norm());
    }

    #[test]
    fn trapezoid_error_is_second_order() {
        let exact = rc_s11(F0);
        let e1 = (transient_pss(&rc_divider(), F0, WM_RC, 1, &opts(128, false)).unwrap().s(1, 0) - exact).norm();
        let e2 = (transient_pss(&rc_divider(), F0, WM_RC, 1, &opts(256, false)).unwrap().s(1, 0) - exact).norm();
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
        // with extrapolation, halving the step changes the phasor by < 1e-6
        let a = transient_pss(&rc_divider(), F0, WM_RC, 1, &opts(128, true)).unwrap().s(1, 0);
        let b = transient_pss(&rc_divider(), F0, WM_RC, 1, &opts(256, true)).unwrap().s(1, 0);
        assert!((a - b).norm() / b.norm() < 1e-6);
    }

    #[test]
    fn zero_drive_stays_at_rest() {
        let o = TransientOptions { amplitude: 0.0, keep_waveforms: true, ..opts(64, false) };
        let t = transient_pss(&rc_divider(), F0, WM_RC, 1, &o).unwrap();
        assert!(t.node_waveforms.iter().flatten().all(|&v| v == 0.0));
        assert!(t.b.iter().all(|b| b.norm() == 0.0));
    }

    #[test]
    fn energy_audit_closes_for_lti() {
        let t = transient_pss(&rc_divider(), F0, WM_RC, 1, &opts(128, false)).unwrap();
        assert!(t.energy.source > 0.0);
        assert_eq!(t.energy.pump, 0.0);
        assert!(t.energy.relative_residual() < 1e-9, "{:?}", t.energy);
    }

    #[test]
    fn rejects_incommensurate_and_discontinuous() {
        let c = rc_divider();
        assert!(matches!(
            transient_pss(&c, 2.5e9 + 0.1e6, 2.0 * PI * 3e6, 1, &opts(64, false)),
            Err(Error::Unsupported(_))
        ));
        assert!(transient_pss(&c, F0, WM_RC, 1, &opts(32, false)).is_err());

        use crate::circuit::{ModSpec, VaractorSpec};
        let mut b = Circuit::builder();
        let n1 = b.node("n1");
        b.port(1, n1, 50.0);
        b.varactor("D", n1, GROUND, VaractorSpec::default(), ModSpec { rise_fraction: 0.0, ..ModSpec::default() });
        let sharp = b.build().unwrap();
        assert!(matches!(
            transient_pss(&sharp, 2502e6, 2.0 * PI * 3e6, 1, &opts(64, false)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn lti_report_at_noise_level() {
        let settings = OracleSettings {
            transient: TransientOptions { steps_per_cycle: 256, ..opts(256, true) },
            ..OracleSettings::default()
        };
        let r = compare_oracle(&rc_divider(), &[F0, 2.0e9], WM_RC, 1, &settings).unwrap();
        assert!(r.passed());
        assert!(r.max_db_delta() < 1e-5);
        assert_relative_eq!(r.max_phase_delta(), 0.0, epsilon = 1e-4);
    }
}
