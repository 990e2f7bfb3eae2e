//! Circuit elements, Butterworth–Van Dyke resonator parameters and the wye
//! circulator topology.
//!
//! A [`Circuit`] is a node/element graph. Node 0 is ground. Every other node
//! must be reachable from ground and touched by at least two element
//! terminals. Ports are numbered `1..=P` and carry their own reference
//! impedance.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::MatchingNetwork;

pub type NodeId = usize;

/// The ground node.
pub const GROUND: NodeId = 0;

/// `kt2 = COUPLING_FACTOR * cm / (c0 + cm)`.
const COUPLING_FACTOR: f64 = PI * PI / 8.0;

/// Motional branch `rm + j*omega*lm + 1/(j*omega*cm)` shunted by the plate
/// capacitance `c0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvdParams {
    pub rm: f64,
    pub lm: f64,
    pub cm: f64,
    pub c0: f64,
}

impl BvdParams {
    /// Builds parameters directly. `rm == 0` is accepted as the lossless
    /// idealization; everything else must be strictly positive.
    pub fn new(rm: f64, lm: f64, cm: f64, c0: f64) -> Result<Self> {
        let p = BvdParams { rm, lm, cm, c0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rm >= 0.0 && self.rm.is_finite()) {
            return Err(Error::validation("rm", format!("must be >= 0, got {}", self.rm)));
        }
        for (name, v) in [("lm", self.lm), ("cm", self.cm), ("c0", self.c0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(name, format!("must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn series_resonance_hz(&self) -> f64 {
        1.0 / (2.0 * PI * (self.lm * self.cm).sqrt())
    }

    pub fn parallel_resonance_hz(&self) -> f64 {
        self.series_resonance_hz() * (1.0 + self.cm / self.c0).sqrt()
    }

    /// Unloaded quality factor at series resonance (infinite when `rm == 0`).
    pub fn quality_factor(&self) -> f64 {
        2.0 * PI * self.series_resonance_hz() * self.lm / self.rm
    }

    pub fn coupling_kt2(&self) -> f64 {
        COUPLING_FACTOR * self.cm / (self.c0 + self.cm)
    }

    pub fn admittance(&self, omega: f64) -> Complex64 {
        bvd_admittance(self, omega)
    }
}

/// Derives BVD parameters from series resonance, quality factor, coupling and
/// plate capacitance. `q = f64::INFINITY` yields the lossless model `rm = 0`.
pub fn derive_bvd(fs: f64, q: f64, kt2: f64, c0: f64) -> Result<BvdParams> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::validation("fs", format!("must be > 0, got {fs}")));
    }
    if !(q > 0.0) {
        return Err(Error::validation("q", format!("must be > 0, got {q}")));
    }
    if !(kt2 > 0.0 && kt2 < 1.0) {
        return Err(Error::validation("kt2", format!("must lie in (0, 1), got {kt2}")));
    }
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::validation("c0", format!("must be > 0, got {c0}")));
    }
    let ratio = kt2 / COUPLING_FACTOR;
    let cm = ratio * c0 / (1.0 - ratio);
    let ws = 2.0 * PI * fs;
    let lm = 1.0 / (ws * ws * cm);
    let rm = if q.is_infinite() { 0.0 } else { ws * lm / q };
    BvdParams::new(rm, lm, cm, c0)
}

/// `Y = j*omega*c0 + 1 / (rm + j*omega*lm + 1/(j*omega*cm))`.
pub fn bvd_admittance(p: &BvdParams, omega: f64) -> Complex64 {
    let j = Complex64::i();
    let motional = Complex64::new(p.rm, omega * p.lm - 1.0 / (omega * p.cm));
    j * omega * p.c0 + motional.inv()
}

/// Admittance of a capacitor `c_series` in series with a BVD resonator.
pub fn series_branch_admittance(p: &BvdParams, c_series: f64, omega: f64) -> Complex64 {
    let z = Complex64::new(0.0, -1.0 / (omega * c_series)) + bvd_admittance(p, omega).inv();
    z.inv()
}

/// Frequency of maximum conductance of the series branch
/// (`c_series` + BVD) inside `[f_lo, f_hi]`.
pub fn branch_conductance_peak(p: &BvdParams, c_series: f64, f_lo: f64, f_hi: f64) -> f64 {
    let g = |f: f64| series_branch_admittance(p, c_series, 2.0 * PI * f).re;
    // coarse scan, then golden section on the bracketing cells
    let n = 4000;
    let step = (f_hi - f_lo) / n as f64;
    let mut best: usize = 0;
    let mut best_g = f64::NEG_INFINITY;
    for i in 0..=n {
        let v = g(f_lo + step * i as f64);
        if v > best_g {
            best_g = v;
            best = i;
        }
    }
    let mut a = f_lo + step * best.saturating_sub(1) as f64;
    let mut b = (f_lo + step * (best + 1) as f64).min(f_hi);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    while b - a > 1e-3 {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
    }
    0.5 * (a + b)
}

/// Varactor large-signal model reduced to its two operating regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaractorSpec {
    /// Capacitance at the peak negative drive voltage.
    pub c_reverse_off: f64,
    /// Capacitance at 0 V.
    pub c_zero_bias: f64,
    /// Forward-bias on-resistance.
    pub r_on: f64,
    /// Residual capacitance in forward bias.
    pub c_forward: f64,
}

impl Default for VaractorSpec {
    fn default() -> Self {
        VaractorSpec {
            c_reverse_off: 0.2e-12,
            c_zero_bias: 1.0e-12,
            r_on: 1.0,
            c_forward: 10.0e-12,
        }
    }
}

impl VaractorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_reverse_off > 0.0) {
            return Err(Error::validation("c_reverse_off", "must be > 0"));
        }
        if !(self.c_reverse_off <= self.c_zero_bias) {
            return Err(Error::validation(
                "c_reverse_off",
                format!(
                    "must not exceed c_zero_bias ({} > {})",
                    self.c_reverse_off, self.c_zero_bias
                ),
            ));
        }
        if !(self.r_on > 0.0 && self.r_on.is_finite()) {
            return Err(Error::validation("r_on", "must be > 0"));
        }
        if !(self.c_forward >= 0.0 && self.c_forward.is_finite()) {
            return Err(Error::validation("c_forward", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModShape {
    Square,
    Sine,
    Off,
}

impl std::str::FromStr for ModShape {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "square" => Ok(ModShape::Square),
            "sine" => Ok(ModShape::Sine),
            "off" => Ok(ModShape::Off),
            other => Err(format!("unknown shape '{other}' (expected square, sine or off)")),
        }
    }
}

impl std::fmt::Display for ModShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModShape::Square => "square",
            ModShape::Sine => "sine",
            ModShape::Off => "off",
        })
    }
}

/// Commanded modulation voltage across a varactor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModSpec {
    pub shape: ModShape,
    pub freq: f64,
    pub amplitude_pp: f64,
    pub dc_bias: f64,
    pub duty: f64,
    /// Phase advance in degrees: the drive is `f(omega_m t + phase)`.
    pub phase: f64,
    pub rise_fraction: f64,
}

impl Default for ModSpec {
    fn default() -> Self {
        ModSpec {
            shape: ModShape::Square,
            freq: 3.0e6,
            amplitude_pp: 7.0,
            dc_bias: 0.0,
            duty: 0.5,
            phase: 0.0,
            rise_fraction: 0.05,
        }
    }
}

impl ModSpec {
    pub fn off() -> Self {
        ModSpec {
            shape: ModShape::Off,
            ..ModSpec::default()
        }
    }

    pub fn is_active(&self) -> bool {
        self.shape != ModShape::Off
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return Err(Error::validation("duty", format!("must lie in (0, 1), got {}", self.duty)));
        }
        if !(self.rise_fraction >= 0.0 && self.rise_fraction < 0.25) {
            return Err(Error::validation(
                "rise_fraction",
                format!("must lie in [0, 0.25), got {}", self.rise_fraction),
            ));
        }
        if self.is_active() && !(self.freq > 0.0 && self.freq.is_finite()) {
            return Err(Error::validation("freq", format!("must be > 0, got {}", self.freq)));
        }
        if !(self.amplitude_pp >= 0.0 && self.amplitude_pp.is_finite()) {
            return Err(Error::validation("amplitude_pp", "must be >= 0"));
        }
        if !self.dc_bias.is_finite() || !self.phase.is_finite() {
            return Err(Error::validation("dc_bias", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElementKind {
    Resistor { ohms: f64 },
    Inductor { henries: f64 },
    Capacitor { farads: f64 },
    BvdResonator(BvdParams),
    ModulatedVaractor { varactor: VaractorSpec, drive: ModSpec },
    /// Source-terminated port. `pad_db` is an ideal matched attenuator in
    /// front of the port (0 disables it).
    Port { number: usize, z0: f64, pad_db: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub kind: ElementKind,
    pub nodes: (NodeId, NodeId),
}

impl Element {
    pub fn is_modulated(&self) -> bool {
        matches!(self.kind, ElementKind::ModulatedVaractor { .. })
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("element '{}': {what} must be > 0, got {v}", self.name))
            }
        };
        match &self.kind {
            ElementKind::Resistor { ohms } => positive("resistance", *ohms),
            ElementKind::Inductor { henries } => positive("inductance", *henries),
            ElementKind::Capacitor { farads } => positive("capacitance", *farads),
            ElementKind::BvdResonator(p) => p
                .validate()
                .map_err(|e| format!("element '{}': {e}", self.name)),
            ElementKind::ModulatedVaractor { varactor, drive } => varactor
                .validate()
                .and_then(|_| drive.validate())
                .map_err(|e| format!("element '{}': {e}", self.name)),
            ElementKind::Port { z0, pad_db, .. } => {
                positive("reference impedance", *z0)?;
                if *pad_db >= 0.0 && pad_db.is_finite() {
                    Ok(())
                } else {
                    Err(format!("element '{}': pad loss must be >= 0 dB", self.name))
                }
            }
        }
    }
}

/// Admittance of an unmodulated two-terminal element.
pub fn lti_admittance(e: &Element, omega: f64) -> Result<Complex64> {
    let j = Complex64::i();
    match &e.kind {
        ElementKind::Resistor { ohms } => Ok(Complex64::new(1.0 / ohms, 0.0)),
        ElementKind::Inductor { henries } => Ok((j * omega * henries).inv()),
        ElementKind::Capacitor { farads } => Ok(j * omega * farads),
        ElementKind::BvdResonator(p) => Ok(bvd_admittance(p, omega)),
        ElementKind::ModulatedVaractor { .. } => Err(Error::Contract(format!(
            "element '{}' is modulated and has no LTI admittance",
            e.name
        ))),
        ElementKind::Port { .. } => Err(Error::Contract(format!(
            "element '{}' is a port, not a branch element",
            e.name
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    node_names: Vec<String>,
    elements: Vec<Element>,
    /// Element index of port `p` at position `p - 1`.
    ports: Vec<usize>,
}

impl Circuit {
    pub fn builder() -> CircuitBuilder {
        CircuitBuilder::new()
    }

    /// Number of nodes including ground.
    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.node_names[id]
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.node_names.iter().position(|n| n == name)
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn port_count(&self) -> usize {
        self.ports.len()
    }

    /// Port element for 1-based port number `p`.
    pub fn port(&self, p: usize) -> &Element {
        &self.elements[self.ports[p - 1]]
    }

    /// `(node+, node-, z0, pad_db)` for each port in order.
    pub fn port_terminals(&self) -> Vec<(NodeId, NodeId, f64, f64)> {
        self.ports
            .iter()
            .map(|&i| {
                let e = &self.elements[i];
                match e.kind {
                    ElementKind::Port { z0, pad_db, .. } => (e.nodes.0, e.nodes.1, z0, pad_db),
                    _ => unreachable!("port index points at a non-port element"),
                }
            })
            .collect()
    }

    pub fn modulated_elements(&self) -> impl Iterator<Item = &Element> {
        self.elements.iter().filter(|e| e.is_modulated())
    }

    /// Frequency shared by all active modulations, `None` if nothing is
    /// modulated. Distinct frequencies are rejected.
    pub fn modulation_freq(&self) -> Result<Option<f64>> {
        let mut freq: Option<f64> = None;
        for e in self.modulated_elements() {
            if let ElementKind::ModulatedVaractor { drive, .. } = &e.kind {
                if !drive.is_active() {
                    continue;
                }
                match freq {
                    None => freq = Some(drive.freq),
                    Some(f) if ((f - drive.freq) / f).abs() > 1e-12 => {
                        return Err(Error::Unsupported(format!(
                            "modulation periods differ ({f} Hz vs {} Hz on '{}')",
                            drive.freq, e.name
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(freq)
    }

    /// Copy with every modulation switched off; varactors sit at their dc bias.
    pub fn with_modulation_off(&self) -> Circuit {
        let mut c = self.clone();
        for e in &mut c.elements {
            if let ElementKind::ModulatedVaractor { drive, .. } = &mut e.kind {
                drive.shape = ModShape::Off;
            }
        }
        c
    }
}

/// Incremental circuit construction with validation on [`build`](Self::build).
#[derive(Debug, Clone)]
pub struct CircuitBuilder {
    node_names: Vec<String>,
    index: BTreeMap<String, NodeId>,
    elements: Vec<Element>,
}

impl Default for CircuitBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl CircuitBuilder {
    pub fn new() -> Self {
        let mut index = BTreeMap::new();
        index.insert("gnd".to_string(), GROUND);
        CircuitBuilder {
            node_names: vec!["gnd".to_string()],
            index,
            elements: Vec::new(),
        }
    }

    /// Returns the id for `name`, creating the node on first use. `"gnd"` and
    /// `"0"` both name ground.
    pub fn node(&mut self, name: &str) -> NodeId {
        if name == "0" {
            return GROUND;
        }
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.node_names.len();
        self.node_names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ElementKind, a: NodeId, b: NodeId) -> &mut Self {
        self.elements.push(Element {
            name: name.into(),
            kind,
            nodes: (a, b),
        });
        self
    }

    pub fn resistor(&mut self, name: &str, a: NodeId, b: NodeId, ohms: f64) -> &mut Self {
        self.add(name, ElementKind::Resistor { ohms }, a, b)
    }

    pub fn inductor(&mut self, name: &str, a: NodeId, b: NodeId, henries: f64) -> &mut Self {
        self.add(name, ElementKind::Inductor { henries }, a, b)
    }

    pub fn capacitor(&mut self, name: &str, a: NodeId, b: NodeId, farads: f64) -> &mut Self {
        self.add(name, ElementKind::Capacitor { farads }, a, b)
    }

    pub fn bvd(&mut self, name: &str, a: NodeId, b: NodeId, p: BvdParams) -> &mut Self {
        self.add(name, ElementKind::BvdResonator(p), a, b)
    }

    pub fn varactor(&mut self, name: &str, a: NodeId, b: NodeId, varactor: VaractorSpec, drive: ModSpec) -> &mut Self {
        self.add(name, ElementKind::ModulatedVaractor { varactor, drive }, a, b)
    }

    /// Port `number` from `node` to ground.
    pub fn port(&mut self, number: usize, node: NodeId, z0: f64) -> &mut Self {
        self.port_with_pad(number, node, z0, 0.0)
    }

    pub fn port_with_pad(&mut self, number: usize, node: NodeId, z0: f64, pad_db: f64) -> &mut Self {
        self.add(format!("P{number}"), ElementKind::Port { number, z0, pad_db }, node, GROUND)
    }

    pub fn build(&self) -> Result<Circuit> {
        let n = self.node_names.len();
        let mut errors = Vec::new();

        let mut degree = vec![0usize; n];
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for e in &self.elements {
            let (a, b) = e.nodes;
            if a >= n || b >= n {
                errors.push(format!("element '{}' references unknown node", e.name));
                continue;
            }
            if a == b {
                errors.push(format!("element '{}' has both terminals on node '{}'", e.name, self.node_names[a]));
            }
            degree[a] += 1;
            degree[b] += 1;
            adj[a].push(b);
            adj[b].push(a);
            if let Err(msg) = e.validate() {
                errors.push(msg);
            }
        }

        if degree[GROUND] == 0 {
            errors.push("missing ground: no element connects to node 'gnd'".to_string());
        }
        for (id, &deg) in degree.iter().enumerate().skip(1) {
            if deg < 2 {
                errors.push(format!(
                    "dangling node '{}' ({} terminal connection{})",
                    self.node_names[id],
                    deg,
                    if deg == 1 { "" } else { "s" }
                ));
            }
        }
        if degree[GROUND] > 0 {
            let mut seen = vec![false; n];
            let mut stack = vec![GROUND];
            seen[GROUND] = true;
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            for id in 1..n {
                if !seen[id] && degree[id] >= 2 {
                    errors.push(format!("node '{}' is not connected to ground", self.node_names[id]));
                }
            }
        }

        let mut numbered: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.elements.iter().enumerate() {
            if let ElementKind::Port { number, .. } = e.kind {
                numbered.entry(number).or_default().push(i);
            }
        }
        for (num, idx) in &numbered {
            if idx.len() > 1 {
                errors.push(format!("duplicate port index {num}"));
            }
        }
        let numbers: Vec<usize> = numbered.keys().copied().collect();
        if numbers.is_empty() {
            errors.push("circuit has no ports".to_string());
        } else if numbers != (1..=numbers.len()).collect::<Vec<_>>() {
            errors.push(format!("port numbers {numbers:?} are not contiguous from 1"));
        }

        if !errors.is_empty() {
            return Err(Error::Circuit(errors));
        }
        Ok(Circuit {
            node_names: self.node_names.clone(),
            elements: self.elements.clone(),
            ports: numbered.values().map(|v| v[0]).collect(),
        })
    }
}

/// One branch of the wye: port → optional L-section → varactor → FBAR → star.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WyeBranch {
    pub bvd: BvdParams,
    pub varactor: VaractorSpec,
    pub drive: ModSpec,
    pub z0: f64,
    pub pad_db: f64,
    pub matching: MatchingNetwork,
}

impl Default for WyeBranch {
    fn default() -> Self {
        WyeBranch {
            bvd: derive_bvd(2.5e9, 1250.0, 0.03, 1.0e-12).expect("default BVD parameters are valid"),
            varactor: VaractorSpec::default(),
            drive: ModSpec::default(),
            z0: 50.0,
            pad_db: 0.0,
            matching: MatchingNetwork::identity(),
        }
    }
}

/// Builds the three-branch wye. Branch `m` (port `m + 1`) is modulated with
/// phase `phases[m]` degrees.
pub fn build_wye(branches: &[WyeBranch], phases: &[f64]) -> Result<Circuit> {
    if branches.len() != 3 {
        return Err(Error::validation("branches", format!("expected 3, got {}", branches.len())));
    }
    if phases.len() != 3 {
        return Err(Error::validation("phases", format!("expected 3, got {}", phases.len())));
    }
    let mut b = Circuit::builder();
    let star = b.node("star");
    for (m, (branch, &phase)) in branches.iter().zip(phases).enumerate() {
        let n = m + 1;
        let port = b.node(&format!("p{n}"));
        b.port_with_pad(n, port, branch.z0, branch.pad_db);
        let mut device = port;
        if branch.matching.c_shunt > 0.0 {
            b.capacitor(&format!("Cm{n}"), port, GROUND, branch.matching.c_shunt);
        }
        if branch.matching.l_series > 0.0 {
            device = b.node(&format!("a{n}"));
            b.inductor(&format!("Lm{n}"), port, device, branch.matching.l_series);
        }
        let mid = b.node(&format!("b{n}"));
        let drive = ModSpec { phase, ..branch.drive };
        b.varactor(&format!("D{n}"), device, mid, branch.varactor, drive);
        b.bvd(&format!("X{n}"), mid, star, branch.bvd);
    }
    b.build()
}
