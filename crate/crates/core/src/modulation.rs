//! Varactor drive waveforms and their truncated Fourier series.
//!
//! The commanded voltage `v(t)` is mapped pointwise to a capacitance and a
//! conductance: forward bias (`v > 0`) gives `(c_forward, 1/r_on)`, reverse
//! bias interpolates linearly from `c_zero_bias` at 0 V to `c_reverse_off` at
//! the most negative drive voltage. The resulting piecewise state is then
//! averaged over a sliding window of `rise_fraction` periods, which turns each
//! jump into a linear ramp of exactly that width.
//!
//! [`VaractorDrive`] evaluates this waveform in closed form at any instant.
//! The conversion-matrix solver uses its uniformly sampled form and the DFT
//! of those samples; the transient oracle evaluates it directly.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::circuit::{ModShape, ModSpec, VaractorSpec};
use crate::error::{Error, Result};

/// Reverse voltage beyond which the drive is clamped.
pub const BREAKDOWN_CLAMP_V: f64 = -13.0;

/// Default number of samples per modulation period.
pub const DEFAULT_SAMPLES: usize = 1 << 17;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Profile {
    Const(f64),
    /// `alpha + beta * sin(2*pi*u)`
    Sine { alpha: f64, beta: f64 },
}

impl Profile {
    fn value(&self, u: f64) -> f64 {
        match *self {
            Profile::Const(c) => c,
            Profile::Sine { alpha, beta } => alpha + beta * (2.0 * PI * u).sin(),
        }
    }

    fn integral(&self, u0: f64, u1: f64) -> f64 {
        match *self {
            Profile::Const(c) => c * (u1 - u0),
            Profile::Sine { alpha, beta } => {
                alpha * (u1 - u0) - beta / (2.0 * PI) * ((2.0 * PI * u1).cos() - (2.0 * PI * u0).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: f64,
    end: f64,
    c: Profile,
    g: f64,
}

/// Closed-form `(C, G)` waveform of one modulated varactor.
#[derive(Debug, Clone)]
pub struct VaractorDrive {
    freq: f64,
    phase_cycles: f64,
    window: f64,
    segments: Vec<Segment>,
    /// Cumulative integral of `(C, G)` at each segment start, in cycles.
    prefix: Vec<(f64, f64)>,
    total: (f64, f64),
    clamped: bool,
}

impl VaractorDrive {
    pub fn new(drive: &ModSpec, varactor: &VaractorSpec) -> Result<Self> {
        drive.validate()?;
        varactor.validate()?;
        let half = 0.5 * drive.amplitude_pp;
        let (v_hi, v_lo) = match drive.shape {
            ModShape::Off => (drive.dc_bias, drive.dc_bias),
            _ => (drive.dc_bias + half, drive.dc_bias - half),
        };
        let clamped = v_lo < BREAKDOWN_CLAMP_V;
        let v_ref = v_lo.max(BREAKDOWN_CLAMP_V);
        let state = |v: f64| -> (f64, f64) {
            if v > 0.0 {
                (varactor.c_forward, 1.0 / varactor.r_on)
            } else if v_ref < 0.0 {
                let v = v.max(BREAKDOWN_CLAMP_V);
                (
                    varactor.c_zero_bias + (varactor.c_reverse_off - varactor.c_zero_bias) * v / v_ref,
                    0.0,
                )
            } else {
                (varactor.c_zero_bias, 0.0)
            }
        };
        let constant = |v: f64| {
            let (c, g) = state(v);
            vec![Segment { start: 0.0, end: 1.0, c: Profile::Const(c), g }]
        };

        let segments = match drive.shape {
            ModShape::Off => constant(drive.dc_bias),
            _ if half == 0.0 => constant(drive.dc_bias),
            ModShape::Square => {
                let (c_hi, g_hi) = state(v_hi);
                let (c_lo, g_lo) = state(v_lo);
                vec![
                    Segment { start: 0.0, end: drive.duty, c: Profile::Const(c_hi), g: g_hi },
                    Segment { start: drive.duty, end: 1.0, c: Profile::Const(c_lo), g: g_lo },
                ]
            }
            ModShape::Sine => {
                let v = |u: f64| drive.dc_bias + half * (2.0 * PI * u).sin();
                let mut cuts = vec![0.0, 1.0];
                for level in [0.0, BREAKDOWN_CLAMP_V] {
                    let s = (level - drive.dc_bias) / half;
                    if s.abs() <= 1.0 {
                        let t = s.asin();
                        for theta in [t, PI - t] {
                            let u = (theta / (2.0 * PI)).rem_euclid(1.0);
                            cuts.push(u);
                        }
                    }
                }
                cuts.sort_by(f64::total_cmp);
                cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
                cuts.windows(2)
                    .filter(|w| w[1] > w[0])
                    .map(|w| {
                        let vm = v(0.5 * (w[0] + w[1]));
                        let (c, g) = if !(BREAKDOWN_CLAMP_V..=0.0).contains(&vm) {
                            let (c, g) = state(vm);
                            (Profile::Const(c), g)
                        } else {
                            let slope = (varactor.c_reverse_off - varactor.c_zero_bias) / v_ref;
                            (
                                Profile::Sine {
                                    alpha: varactor.c_zero_bias + slope * drive.dc_bias,
                                    beta: slope * half,
                                },
                                0.0,
                            )
                        };
                        Segment { start: w[0], end: w[1], c, g }
                    })
                    .collect()
            }
        };

        let mut prefix = Vec::with_capacity(segments.len());
        let mut acc = (0.0, 0.0);
        for s in &segments {
            prefix.push(acc);
            acc.0 += s.c.integral(s.start, s.end);
            acc.1 += s.g * (s.end - s.start);
        }
        Ok(VaractorDrive {
            freq: drive.freq,
            phase_cycles: drive.phase / 360.0,
            window: if drive.is_active() { drive.rise_fraction } else { 0.0 },
            segments,
            prefix,
            total: acc,
            clamped,
        })
    }

    /// True when the drive reached past the breakdown clamp.
    pub fn clamped(&self) -> bool {
        self.clamped
    }

    pub fn is_constant(&self) -> bool {
        self.segments.len() == 1 && matches!(self.segments[0].c, Profile::Const(_))
    }

    pub fn freq(&self) -> f64 {
        self.freq
    }

    /// `(C, G)` at time `t` seconds.
    pub fn state(&self, t: f64) -> (f64, f64) {
        self.state_at_cycle(t * self.freq)
    }

    /// `(C, G)` at `u` modulation cycles from the origin (any real `u`).
    pub fn state_at_cycle(&self, u: f64) -> (f64, f64) {
        if self.is_constant() {
            let s = &self.segments[0];
            return (s.c.value(0.0), s.g);
        }
        let u = (u + self.phase_cycles).rem_euclid(1.0);
        if self.window == 0.0 {
            return self.hard(u);
        }
        let h = 0.5 * self.window;
        let (c1, g1) = self.integral_to(u + h);
        let (c0, g0) = self.integral_to(u - h);
        ((c1 - c0) / self.window, (g1 - g0) / self.window)
    }

    fn segment_index(&self, u: f64) -> usize {
        self.segments.partition_point(|s| s.start <= u).saturating_sub(1)
    }

    /// Unsmoothed state; averages the one-sided limits at a breakpoint.
    fn hard(&self, u: f64) -> (f64, f64) {
        let i = self.segment_index(u);
        let s = &self.segments[i];
        let right = (s.c.value(u), s.g);
        if u == s.start {
            let prev = &self.segments[(i + self.segments.len() - 1) % self.segments.len()];
            let left = (prev.c.value(u), prev.g);
            return (0.5 * (left.0 + right.0), 0.5 * (left.1 + right.1));
        }
        right
    }

    fn integral_to(&self, u: f64) -> (f64, f64) {
        let whole = u.floor();
        let frac = u - whole;
        let i = self.segment_index(frac);
        let s = &self.segments[i];
        let (pc, pg) = self.prefix[i];
        (
            whole * self.total.0 + pc + s.c.integral(s.start, frac),
            whole * self.total.1 + pg + s.g * (frac - s.start),
        )
    }
}

/// One modulation period of `C(t)` and `G(t)`, uniformly sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicElementWaveform {
    pub period: f64,
    pub c: Vec<f64>,
    pub g: Vec<f64>,
    /// The drive exceeded the breakdown clamp and was limited.
    pub clamped: bool,
}

impl PeriodicElementWaveform {
    pub fn from_samples(period: f64, c: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        let n = c.len();
        if n != g.len() {
            return Err(Error::validation("samples", "C and G lengths differ"));
        }
        if n < 256 || !n.is_power_of_two() {
            return Err(Error::validation("samples", format!("count must be a power of two >= 256, got {n}")));
        }
        if c.iter().chain(&g).any(|v| !(*v >= 0.0)) {
            return Err(Error::validation("samples", "C and G must be non-negative"));
        }
        Ok(PeriodicElementWaveform { period, c, g, clamped: false })
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }
}

/// Samples the varactor waveform with [`DEFAULT_SAMPLES`] points.
pub fn varactor_waveform(drive: &ModSpec, varactor: &VaractorSpec) -> Result<PeriodicElementWaveform> {
    varactor_waveform_with(drive, varactor, DEFAULT_SAMPLES)
}

pub fn varactor_waveform_with(
    drive: &ModSpec,
    varactor: &VaractorSpec,
    samples: usize,
) -> Result<PeriodicElementWaveform> {
    if samples < 256 || !samples.is_power_of_two() {
        return Err(Error::validation("samples", format!("must be a power of two >= 256, got {samples}")));
    }
    let d = VaractorDrive::new(drive, varactor)?;
    let (c, g): (Vec<f64>, Vec<f64>) = (0..samples)
        .map(|n| d.state_at_cycle(n as f64 / samples as f64))
        .unzip();
    let period = if drive.freq > 0.0 { 1.0 / drive.freq } else { f64::INFINITY };
    Ok(PeriodicElementWaveform { period, c, g, clamped: d.clamped() })
}

/// Fourier coefficients `c_k`, `g_k` for `k` in `[-order, order]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoeffs {
    pub order: usize,
    c: Vec<Complex64>,
    g: Vec<Complex64>,
}

impl FourierCoeffs {
    fn idx(&self, k: i64) -> usize {
        assert!(k.unsigned_abs() as usize <= self.order, "harmonic {k} outside order {}", self.order);
        (k + self.order as i64) as usize
    }

    pub fn c(&self, k: i64) -> Complex64 {
        self.c[self.idx(k)]
    }

    pub fn g(&self, k: i64) -> Complex64 {
        self.g[self.idx(k)]
    }

    /// Coefficient of `C(t)` or zero outside the stored order.
    pub fn c_or_zero(&self, k: i64) -> Complex64 {
        if k.unsigned_abs() as usize <= self.order {
            self.c(k)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    pub fn g_or_zero(&self, k: i64) -> Complex64 {
        if k.unsigned_abs() as usize <= self.order {
            self.g(k)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// True when every `k != 0` coefficient is exactly zero.
    pub fn is_constant(&self) -> bool {
        let zero = Complex64::new(0.0, 0.0);
        (1..=self.order as i64).all(|k| self.c(k) == zero && self.g(k) == zero)
    }
}

/// `c_k = (1/N) sum_n C_n exp(-j 2 pi k n / N)`, likewise `g_k`.
pub fn fourier_series(w: &PeriodicElementWaveform, order: usize) -> Result<FourierCoeffs> {
    let n = w.len();
    if 2 * order + 1 > n {
        return Err(Error::validation(
            "order",
            format!("2K+1 = {} exceeds the {} available samples", 2 * order + 1, n),
        ));
    }
    Ok(FourierCoeffs {
        order,
        c: dft_symmetric(&w.c, order),
        g: dft_symmetric(&w.g, order),
    })
}

fn dft_symmetric(x: &[f64], order: usize) -> Vec<Complex64> {
    let n = x.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut out = vec![zero; 2 * order + 1];
    let first = x[0];
    if x.iter().all(|&v| v == first) {
        out[order] = Complex64::new(first, 0.0);
        return out;
    }
    let inv_n = 1.0 / n as f64;
    let mut mean = Compensated::default();
    x.iter().for_each(|&v| mean.add(v));
    out[order] = Complex64::new(mean.value() * inv_n, 0.0);
    if order == 0 {
        return out;
    }
    let table: Vec<(f64, f64)> = (0..n)
        .map(|m| {
            let a = 2.0 * PI * m as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .collect();
    for k in 1..=order {
        let (mut re, mut im) = (Compensated::default(), Compensated::default());
        let mut idx = 0usize;
        for &v in x {
            let (cs, sn) = table[idx];
            re.add(v * cs);
            im.add(-v * sn);
            idx += k;
            if idx >= n {
                idx -= n;
            }
        }
        let ck = Complex64::new(re.value() * inv_n, im.value() * inv_n);
        out[order + k] = ck;
        out[order - k] = ck.conj();
    }
    out
}

/// Neumaier-compensated running sum; plain summation of 2^17 samples loses
/// about 1e-12 relative.
#[derive(Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}
