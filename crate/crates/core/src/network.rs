//! Matching-network embedding and synthesis, circulator figures of merit and
//! power accounting over harmonic S-data.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::circuit::Circuit;
use crate::error::{Error, Result};
use crate::solver::{HarmonicSMatrix, LptvSolver, SweepResult};

/// Series-L / shunt-C L-section. The shunt capacitor sits on the port
/// (instrument) side, the series inductor toward the device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingNetwork {
    pub l_series: f64,
    pub c_shunt: f64,
}

impl Default for MatchingNetwork {
    fn default() -> Self {
        Self::identity()
    }
}

impl MatchingNetwork {
    pub fn new(l_series: f64, c_shunt: f64) -> Self {
        MatchingNetwork { l_series, c_shunt }
    }

    pub fn identity() -> Self {
        MatchingNetwork { l_series: 0.0, c_shunt: 0.0 }
    }

    pub fn is_identity(&self) -> bool {
        self.l_series == 0.0 && self.c_shunt == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_series >= 0.0 && self.l_series.is_finite()) {
            return Err(Error::validation("l_series", "must be >= 0"));
        }
        if !(self.c_shunt >= 0.0 && self.c_shunt.is_finite()) {
            return Err(Error::validation("c_shunt", "must be >= 0"));
        }
        Ok(())
    }

    /// ABCD matrix from the port side to the device side.
    pub fn abcd(&self, omega: f64) -> [[Complex64; 2]; 2] {
        let j = Complex64::i();
        let zl = j * omega * self.l_series;
        let yc = j * omega * self.c_shunt;
        let one = Complex64::new(1.0, 0.0);
        [[one, zl], [yc, one + yc * zl]]
    }

    /// Two-port S-parameters `[[s_pp, s_pd], [s_dp, s_dd]]` (`p` = port side,
    /// `d` = device side) referenced to `z0` on both sides.
    pub fn s_params(&self, omega: f64, z0: f64) -> [[Complex64; 2]; 2] {
        let [[a, b], [c, d]] = self.abcd(omega);
        let bz = b / z0;
        let cz = c * z0;
        let den = a + bz + cz + d;
        let det = a * d - b * c;
        [
            [(a + bz - cz - d) / den, 2.0 * det / den],
            [Complex64::new(2.0, 0.0) / den, (-a + bz - cz + d) / den],
        ]
    }

    /// Impedance seen at the port side with `z_load` on the device side.
    pub fn transform(&self, z_load: Complex64, omega: f64) -> Complex64 {
        let [[a, b], [c, d]] = self.abcd(omega);
        (a * z_load + b) / (c * z_load + d)
    }
}

/// Re-references every port through its L-section. `networks` holds one
/// entry per port. Needs the full conversion matrix unless every network is
/// the identity, in which case the input is returned unchanged.
pub fn embed_matching(s: &HarmonicSMatrix, networks: &[MatchingNetwork]) -> Result<HarmonicSMatrix> {
    if networks.len() != s.ports {
        return Err(Error::validation(
            "networks",
            format!("expected {} matching networks, got {}", s.ports, networks.len()),
        ));
    }
    for m in networks {
        m.validate()?;
    }
    if networks.iter().all(MatchingNetwork::is_identity) {
        return Ok(s.clone());
    }
    let full = s.conversion().ok_or_else(|| {
        Error::Contract("embedding requires the full conversion matrix (solver output)".into())
    })?;
    let k = s.order as i64;
    let waves = full.nrows();
    let mut pp = vec![Complex64::new(0.0, 0.0); waves];
    let mut pd = pp.clone();
    let mut dp = pp.clone();
    let mut dd = pp.clone();
    for port in 1..=s.ports {
        for q in -k..=k {
            let idx = s.wave_index(port, q);
            let omega = s.omega0 + q as f64 * s.omega_m;
            let m = networks[port - 1].s_params(omega, s.z0[port - 1]);
            pp[idx] = m[0][0];
            pd[idx] = m[0][1];
            dp[idx] = m[1][0];
            dd[idx] = m[1][1];
        }
    }
    // a_d = (I - D_dd S)^-1 D_dp a_p,  b_p = D_pp a_p + D_pd S a_d
    let mut lhs = DMatrix::<Complex64>::identity(waves, waves);
    for r in 0..waves {
        for c in 0..waves {
            lhs[(r, c)] -= dd[r] * full[(r, c)];
        }
    }
    let rhs = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(dp));
    let t = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular { omega0: s.omega0, condition: f64::INFINITY })?;
    let mut out = full * t;
    for r in 0..waves {
        for c in 0..waves {
            out[(r, c)] *= pd[r];
        }
        out[(r, r)] += pp[r];
    }
    Ok(HarmonicSMatrix::from_conversion(s.omega0, s.omega_m, s.order, s.z0.clone(), out))
}

pub fn embed_matching_sweep(sweep: &SweepResult, networks: &[MatchingNetwork]) -> Result<SweepResult> {
    let points = sweep
        .points
        .iter()
        .map(|p| embed_matching(p, networks))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { freqs: sweep.freqs.clone(), points })
}

/// Input impedance at `port` from the carrier reflection coefficient.
pub fn input_impedance(s: &HarmonicSMatrix, port: usize) -> Complex64 {
    let g = s.s(port, port, 0);
    s.z0[port - 1] * (1.0 + g) / (1.0 - g)
}

/// Closed-form series-L / shunt-C section transforming `z_in` to `z0` at `f0`.
pub fn l_match(z_in: Complex64, f0: f64, z0: f64) -> Result<MatchingNetwork> {
    let (r, x) = (z_in.re, z_in.im);
    if !(r > 0.0) || !x.is_finite() {
        return Err(Error::validation("z_in", format!("real part must be > 0, got {z_in}")));
    }
    if !(f0 > 0.0) || !(z0 > 0.0) {
        return Err(Error::validation("f0", "frequency and z0 must be > 0"));
    }
    if r > z0 {
        return Err(Error::NoMatch(format!(
            "Re(z_in) = {r} exceeds z0 = {z0}; the dual (shunt-first) section is required"
        )));
    }
    let omega = 2.0 * PI * f0;
    // After the series inductor the load must sit on the 1/z0 conductance
    // circle with positive (inductive) reactance for the shunt C to cancel.
    let x_target = (r * (z0 - r)).sqrt();
    let mut l = (x_target - x) / omega;
    if l < 0.0 {
        if l > -1e-12 * (x_target.abs() + x.abs()) / omega {
            l = 0.0;
        } else {
            return Err(Error::NoMatch(format!(
                "reactance {x} ohm above {x_target} ohm would need a negative series inductor"
            )));
        }
    }
    let c = x_target / (r * r + x_target * x_target) / omega;
    let m = MatchingNetwork::new(l, c);
    let z = m.transform(z_in, omega);
    if (z - z0).norm() > 1e-3 * z0 {
        return Err(Error::NoMatch(format!("verification failed: transformed impedance {z}")));
    }
    Ok(m)
}

/// Port roles for circulator metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortRoles {
    pub drive: usize,
    pub through: usize,
    pub isolated: usize,
}

impl Default for PortRoles {
    fn default() -> Self {
        PortRoles { drive: 1, through: 2, isolated: 3 }
    }
}

impl PortRoles {
    fn validate(&self, ports: usize) -> Result<()> {
        let all = [self.drive, self.through, self.isolated];
        if all.iter().any(|&p| p == 0 || p > ports) {
            return Err(Error::validation("ports", format!("roles {all:?} outside 1..={ports}")));
        }
        if self.drive == self.through || self.drive == self.isolated || self.through == self.isolated {
            return Err(Error::validation("ports", format!("roles {all:?} must be distinct")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchObjective {
    /// Maximize isolation relative to the through path.
    MaxIsolation,
    /// Minimize the drive-port reflection.
    MinReturnLoss,
}

/// Result of [`optimize_match`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOutcome {
    pub network: MatchingNetwork,
    /// Objective in dB: `|S_iso| / |S_through|` or `|S_drive,drive|` (lower is better).
    pub objective_db: f64,
    pub start: MatchingNetwork,
    pub start_db: f64,
    /// False when the search did not improve on the start point.
    pub improved: bool,
    /// True when the closed-form start failed and the identity was used.
    pub fallback_start: bool,
}

/// Upper bounds of the matching search box.
pub const MAX_L_NH: f64 = 100.0;
pub const MAX_C_PF: f64 = 100.0;

/// Nelder–Mead over `(l_series, c_shunt)` starting from [`l_match`] at the
/// drive port. The same network is applied at every port.
///
/// `MaxIsolation` minimizes `|S_iso,drive| / |S_through,drive|` in dB, so a
/// network that simply shorts the ports is not rewarded.
pub fn optimize_match(
    solver: &LptvSolver,
    f0: f64,
    objective: MatchObjective,
    roles: PortRoles,
) -> Result<MatchOutcome> {
    let ports = solver.circuit().port_count();
    roles.validate(ports)?;
    let device = solver.solve(2.0 * PI * f0)?;
    let (start, fallback_start) = match l_match(input_impedance(&device, roles.drive), f0, device.z0[roles.drive - 1]) {
        Ok(m) => (m, false),
        Err(_) => (MatchingNetwork::identity(), true),
    };
    let eval = |m: MatchingNetwork| -> f64 {
        match embed_matching(&device, &vec![m; ports]) {
            Ok(s) => {
                let db = |i: usize| 20.0 * s.s(i, roles.drive, 0).norm().max(1e-300).log10();
                match objective {
                    MatchObjective::MaxIsolation => db(roles.isolated) - db(roles.through),
                    MatchObjective::MinReturnLoss => db(roles.drive),
                }
            }
            Err(_) => f64::INFINITY,
        }
    };
    // search in nH / pF; points outside the box are clamped and penalized
    const L_UNIT: f64 = 1e-9;
    const C_UNIT: f64 = 1e-12;
    let clamp = |x: &[f64]| [x[0].clamp(0.0, MAX_L_NH), x[1].clamp(0.0, MAX_C_PF)];
    let to_net = |x: &[f64]| {
        let [l, c] = clamp(x);
        MatchingNetwork::new(l * L_UNIT, c * C_UNIT)
    };
    let f = |x: &[f64]| {
        let [l, c] = clamp(x);
        let penalty = 1e3 * ((x[0] - l).powi(2) + (x[1] - c).powi(2));
        eval(to_net(x)) + penalty
    };
    let x0 = [start.l_series / L_UNIT, start.c_shunt / C_UNIT];
    let steps = [
        if x0[0] > 0.0 { 0.1 * x0[0] } else { 0.5 },
        if x0[1] > 0.0 { 0.1 * x0[1] } else { 0.5 },
    ];
    let start_db = eval(start);
    let best = nelder_mead(f, &x0, &steps, 1e-10, 2000);
    if best.value < start_db {
        Ok(MatchOutcome {
            network: to_net(&best.point),
            objective_db: eval(to_net(&best.point)),
            start,
            start_db,
            improved: true,
            fallback_start,
        })
    } else {
        Ok(MatchOutcome {
            network: start,
            objective_db: start_db,
            start,
            start_db,
            improved: false,
            fallback_start,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Derivative-free simplex minimization. Deterministic for a fixed start.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], steps: &[f64], ftol: f64, max_iter: usize) -> Minimum {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = f(&x);
        simplex.push((x, v));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = (simplex[n].1 - simplex[0].1).abs();
        let size = simplex
            .iter()
            .skip(1)
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= ftol * (simplex[0].1.abs() + ftol) && size < 1e-12 * (1.0 + norm_inf(&simplex[0].0)) {
            break;
        }
        if size == 0.0 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|(x, _)| x[d]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect()
        };
        let xr = along(alpha);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(rho);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(-rho);
                let v = f(&x);
                (x, v)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, v) in simplex.iter_mut().skip(1) {
                    for d in 0..n {
                        x[d] = best[d] + sigma * (x[d] - best[d]);
                    }
                    *v = f(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (point, value) = simplex.swap_remove(0);
    Minimum { point, value, iterations }
}

fn norm_inf(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Circulator figures of merit over a sweep. dB quantities are positive
/// losses/isolations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirculatorMetrics {
    /// Frequency of maximum isolation.
    pub f_notch_hz: f64,
    pub insertion_loss_db: f64,
    pub isolation_db: f64,
    /// Return loss at the notch frequency.
    pub return_loss_db: f64,
    pub level_db: f64,
    /// Width of the isolation notch at `level_db`; `None` if undefined.
    pub bandwidth_hz: Option<f64>,
    /// Fraction of incident power leaving in `k != 0` sidebands at the
    /// frequency of lowest insertion loss.
    pub intermod_fraction: f64,
}

impl CirculatorMetrics {
    pub fn bw_at_level(&self) -> Option<f64> {
        self.bandwidth_hz
    }
}

fn loss_db(v: Complex64) -> f64 {
    -20.0 * v.norm().log10()
}

pub fn metrics(sweep: &SweepResult, roles: PortRoles, level_db: f64) -> Result<CirculatorMetrics> {
    if sweep.is_empty() {
        return Err(Error::validation("sweep", "empty"));
    }
    roles.validate(sweep.ports())?;
    let PortRoles { drive, through, isolated } = roles;
    let il: Vec<f64> = sweep.points.iter().map(|p| loss_db(p.s(through, drive, 0))).collect();
    let iso: Vec<f64> = sweep.points.iter().map(|p| loss_db(p.s(isolated, drive, 0))).collect();
    let n_il = argmin(&il);
    let n_iso = argmax(&iso);
    let at_il = &sweep.points[n_il];
    let k = at_il.order as i64;
    let intermod = (1..=at_il.ports)
        .flat_map(|i| (-k..=k).filter(|&q| q != 0).map(move |q| (i, q)))
        .map(|(i, q)| at_il.s(i, drive, q).norm_sqr())
        .fold(0.0, |a, b| a + b);
    Ok(CirculatorMetrics {
        f_notch_hz: sweep.freqs[n_iso],
        insertion_loss_db: il[n_il],
        isolation_db: iso[n_iso],
        return_loss_db: loss_db(sweep.points[n_iso].s(drive, drive, 0)),
        level_db,
        bandwidth_hz: bandwidth_at_level(&sweep.freqs, &iso, level_db),
        intermod_fraction: intermod,
    })
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] < v[b] { i } else { b })
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// Width of the region around the peak of `curve_db` that stays at or above
/// `level_db`, with crossings located by linear interpolation. `None` when the
/// peak does not reach the level or a crossing lies outside the grid.
pub fn bandwidth_at_level(freqs: &[f64], curve_db: &[f64], level_db: f64) -> Option<f64> {
    if freqs.is_empty() {
        return None;
    }
    let peak = argmax(curve_db);
    if !(curve_db[peak] >= level_db) {
        return None;
    }
    let cross = |a: usize, b: usize| {
        let (ya, yb) = (curve_db[a], curve_db[b]);
        if ya.is_infinite() || yb.is_infinite() {
            return if ya.is_infinite() { freqs[a] } else { freqs[b] };
        }
        freqs[a] + (level_db - ya) * (freqs[b] - freqs[a]) / (yb - ya)
    };
    let mut l = peak;
    while l > 0 && curve_db[l - 1] >= level_db {
        l -= 1;
    }
    if l == 0 {
        return None;
    }
    let mut r = peak;
    while r + 1 < curve_db.len() && curve_db[r + 1] >= level_db {
        r += 1;
    }
    if r + 1 == curve_db.len() {
        return None;
    }
    Some(cross(r, r + 1) - cross(l - 1, l))
}

/// Split of incident power for one drive port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBalance {
    /// Reflected plus transmitted at the carrier.
    pub carrier: f64,
    /// Leaving in `k != 0` sidebands at any port.
    pub sideband: f64,
    pub dissipated: f64,
}

pub fn power_balance(s: &HarmonicSMatrix, drive: usize) -> Result<PowerBalance> {
    if drive == 0 || drive > s.ports {
        return Err(Error::validation("drive", format!("port {drive} outside 1..={}", s.ports)));
    }
    let k = s.order as i64;
    let carrier: f64 = (1..=s.ports).map(|i| s.s(i, drive, 0).norm_sqr()).sum();
    let sideband: f64 = (1..=s.ports)
        .flat_map(|i| (-k..=k).filter(|&q| q != 0).map(move |q| (i, q)))
        .map(|(i, q)| s.s(i, drive, q).norm_sqr())
        .sum();
    let total = carrier + sideband;
    if total > 1.0 + 1e-9 {
        return Err(Error::Passivity { total });
    }
    Ok(PowerBalance { carrier, sideband, dissipated: (1.0 - total).max(0.0) })
}

/// Convenience: device response with the same matching network at every port.
pub fn matched_sweep(sweep: &SweepResult, network: MatchingNetwork) -> Result<SweepResult> {
    let ports = sweep.ports();
    embed_matching_sweep(sweep, &vec![network; ports])
}

/// Circuit input impedance at `port` and `f0` with all modulation active.
pub fn device_input_impedance(c: &Circuit, omega_m: f64, order: usize, f0: f64, port: usize) -> Result<Complex64> {
    let s = LptvSolver::new(c, omega_m, order)?.solve(2.0 * PI * f0)?;
    Ok(input_impedance(&s, port))
}
