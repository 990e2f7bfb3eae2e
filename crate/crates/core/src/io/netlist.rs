//! Netlist files: TOML-style sections of `key = value` pairs.
//!
//! ```toml
//! [fbar]
//! fs_hz = 2.5e9
//! q = 1250
//!
//! [modulation]
//! shape = "square"
//! phases_deg = [0, 120, 240]
//!
//! [sweep]
//! points = 201
//! ```
//!
//! Every key has a documented default; `[fbar]` and `[sweep]` must be
//! present. Keys that were filled in from defaults are listed in
//! [`Netlist::defaults`]. All problems found in a file are reported together.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use toml::{Spanned, Value};

use crate::circuit::{build_wye, derive_bvd, Circuit, ModShape, ModSpec, VaractorSpec, WyeBranch};
use crate::error::{Diagnostic, Error, Result};
use crate::network::MatchingNetwork;

/// Bias-filter inductor and capacitor of the modulation feed.
pub const BIAS_FILTER_L: f64 = 29e-9;
pub const BIAS_FILTER_C: f64 = 100e-9;

/// Largest accepted `harmonics_k`.
pub const MAX_HARMONICS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub f_start: f64,
    pub f_stop: f64,
    pub points: usize,
    pub harmonics: usize,
}

/// A key filled in from its default.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultedKey {
    pub section: &'static str,
    pub key: &'static str,
    pub value: String,
}

impl fmt::Display for DefaultedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {} = {} (default)", self.section, self.key, self.value)
    }
}

/// A parsed and validated netlist.
#[derive(Debug, Clone)]
pub struct Netlist {
    /// Branch description shared by the three wye branches (unmatched).
    pub branch: WyeBranch,
    pub phases: [f64; 3],
    /// From `[match]`, applied by embedding.
    pub matching: Option<MatchingNetwork>,
    pub sweep: SweepSettings,
    /// The device without matching.
    pub circuit: Circuit,
    pub defaults: Vec<DefaultedKey>,
    /// Informational notes produced while parsing.
    pub notes: Vec<String>,
}

impl Netlist {
    /// Modulation angular frequency (also used when modulation is off).
    pub fn omega_m(&self) -> f64 {
        2.0 * PI * self.branch.drive.freq
    }

    pub fn modulation_active(&self) -> bool {
        self.branch.drive.is_active()
    }

    /// Same device with the varactors held at their 0 V operating point.
    pub fn circuit_without_modulation(&self) -> Result<Circuit> {
        let branch = WyeBranch { drive: ModSpec { shape: ModShape::Off, ..self.branch.drive }, ..self.branch };
        build_wye(&[branch; 3], &self.phases)
    }

    /// Device with the `[match]` network placed in the netlist.
    pub fn matched_circuit(&self) -> Result<Circuit> {
        let matching = self.matching.unwrap_or_else(MatchingNetwork::identity);
        build_wye(&[WyeBranch { matching, ..self.branch }; 3], &self.phases)
    }

    /// `defaults` as log lines.
    pub fn provenance(&self) -> Vec<String> {
        self.defaults.iter().map(|d| d.to_string()).collect()
    }
}

pub fn read_netlist(path: &Path) -> Result<Netlist> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_netlist(&text)
}

type Section = BTreeMap<Spanned<String>, Spanned<Value>>;
type Document = BTreeMap<Spanned<String>, Spanned<Section>>;

#[derive(Clone, Copy)]
enum Kind {
    Real,
    Count,
    Text,
    Triple,
}

struct KeySpec {
    key: &'static str,
    kind: Kind,
    default: &'static str,
}

const fn spec(key: &'static str, kind: Kind, default: &'static str) -> KeySpec {
    KeySpec { key, kind, default }
}

const SECTIONS: &[(&str, bool, &[KeySpec])] = &[
    (
        "fbar",
        true,
        &[
            spec("fs_hz", Kind::Real, "2.5e9"),
            spec("q", Kind::Real, "1250"),
            spec("kt2", Kind::Real, "0.03"),
            spec("c0_f", Kind::Real, "1e-12"),
        ],
    ),
    (
        "varactor",
        false,
        &[
            spec("c_zero_bias_f", Kind::Real, "1e-12"),
            spec("c_reverse_off_f", Kind::Real, "2e-13"),
            spec("r_on_ohm", Kind::Real, "1"),
            spec("c_forward_f", Kind::Real, "1e-11"),
        ],
    ),
    (
        "modulation",
        false,
        &[
            spec("shape", Kind::Text, "square"),
            spec("freq_hz", Kind::Real, "3e6"),
            spec("vpp", Kind::Real, "7"),
            spec("dc_bias_v", Kind::Real, "0"),
            spec("duty", Kind::Real, "0.5"),
            spec("rise_fraction", Kind::Real, "0.05"),
            spec("phases_deg", Kind::Triple, "[0, 120, 240]"),
        ],
    ),
    ("ports", false, &[spec("z0_ohm", Kind::Real, "50"), spec("hpf_loss_db", Kind::Real, "0")]),
    ("match", false, &[spec("l_series_h", Kind::Real, "0"), spec("c_shunt_f", Kind::Real, "0")]),
    (
        "sweep",
        true,
        &[
            spec("f_start_hz", Kind::Real, "2.4e9"),
            spec("f_stop_hz", Kind::Real, "2.6e9"),
            spec("points", Kind::Count, "201"),
            spec("harmonics_k", Kind::Count, "8"),
        ],
    ),
];

#[derive(Debug, Clone)]
enum Parsed {
    Real(f64),
    Count(usize),
    Text(String),
    Triple([f64; 3]),
}

/// Values keyed by `(section, key)`, with the source line when given.
struct Values {
    map: BTreeMap<(&'static str, &'static str), (Parsed, Option<usize>)>,
    sections_present: Vec<&'static str>,
}

impl Values {
    fn real(&self, s: &str, k: &str) -> f64 {
        match self.get(s, k) {
            Parsed::Real(v) => *v,
            other => unreachable!("{s}.{k} is {other:?}"),
        }
    }

    fn count(&self, s: &str, k: &str) -> usize {
        match self.get(s, k) {
            Parsed::Count(v) => *v,
            other => unreachable!("{s}.{k} is {other:?}"),
        }
    }

    fn get(&self, s: &str, k: &str) -> &Parsed {
        &self
            .map
            .iter()
            .find(|((ss, kk), _)| *ss == s && *kk == k)
            .expect("every key has a value")
            .1
             .0
    }

    fn line(&self, s: &str, k: &str) -> Option<usize> {
        self.map.iter().find(|((ss, kk), _)| *ss == s && *kk == k).and_then(|(_, v)| v.1)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn as_real(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn convert(kind: Kind, v: &Value) -> std::result::Result<Parsed, String> {
    match kind {
        Kind::Real => as_real(v).map(Parsed::Real).ok_or_else(|| format!("expected a number, got {}", v.type_str())),
        Kind::Count => match v {
            Value::Integer(i) if *i >= 0 => Ok(Parsed::Count(*i as usize)),
            _ => Err(format!("expected a non-negative integer, got {v}")),
        },
        Kind::Text => v.as_str().map(|s| Parsed::Text(s.to_string())).ok_or_else(|| format!("expected a string, got {v}")),
        Kind::Triple => {
            let arr = v.as_array().ok_or_else(|| format!("expected an array of 3 numbers, got {v}"))?;
            if arr.len() != 3 {
                return Err(format!("expected exactly 3 entries, got {}", arr.len()));
            }
            let mut out = [0.0; 3];
            for (slot, item) in out.iter_mut().zip(arr) {
                *slot = as_real(item).ok_or_else(|| format!("expected numbers, got {item}"))?;
            }
            Ok(Parsed::Triple(out))
        }
    }
}

fn default_value(kind: Kind, text: &str) -> Parsed {
    match kind {
        Kind::Real => Parsed::Real(text.parse().expect("valid default")),
        Kind::Count => Parsed::Count(text.parse().expect("valid default")),
        Kind::Text => Parsed::Text(text.to_string()),
        Kind::Triple => Parsed::Triple([0.0, 120.0, 240.0]),
    }
}

/// Parses and validates a netlist. Syntax errors stop parsing; all other
/// problems are collected into one [`Error::Parse`].
pub fn parse_netlist(text: &str) -> Result<Netlist> {
    let doc: Document = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start));
        Error::Parse(vec![Diagnostic { line, key: None, message: e.message().trim().to_string() }])
    })?;

    let mut diags = Vec::new();
    let mut values = Values { map: BTreeMap::new(), sections_present: Vec::new() };
    let mut defaults = Vec::new();

    for (name, body) in &doc {
        if !SECTIONS.iter().any(|(s, _, _)| s == name.get_ref()) {
            diags.push(Diagnostic {
                line: Some(line_of(text, name.span().start)),
                key: Some(format!("[{}]", name.get_ref())),
                message: "unknown section".into(),
            });
            continue;
        }
        for key in body.get_ref().keys() {
            let (_, _, keys) = SECTIONS.iter().find(|(s, _, _)| s == name.get_ref()).unwrap();
            if !keys.iter().any(|k| k.key == key.get_ref()) {
                diags.push(Diagnostic {
                    line: Some(line_of(text, key.span().start)),
                    key: Some(format!("{}.{}", name.get_ref(), key.get_ref())),
                    message: "unknown key".into(),
                });
            }
        }
    }

    for &(section, required, keys) in SECTIONS {
        let body = doc.iter().find(|(n, _)| n.get_ref() == section).map(|(_, b)| b.get_ref());
        if body.is_some() {
            values.sections_present.push(section);
        } else if required {
            diags.push(Diagnostic { line: None, key: Some(format!("[{section}]")), message: "missing required section".into() });
        }
        for k in keys {
            let given = body.and_then(|b| b.iter().find(|(name, _)| name.get_ref() == k.key));
            let entry = match given {
                Some((_, v)) => {
                    let line = line_of(text, v.span().start);
                    match convert(k.kind, v.get_ref()) {
                        Ok(p) => (p, Some(line)),
                        Err(message) => {
                            diags.push(Diagnostic { line: Some(line), key: Some(format!("{section}.{}", k.key)), message });
                            (default_value(k.kind, k.default), Some(line))
                        }
                    }
                }
                None => {
                    // [match] only contributes when present
                    if section != "match" || body.is_some() {
                        defaults.push(DefaultedKey { section, key: k.key, value: k.default.to_string() });
                    }
                    (default_value(k.kind, k.default), None)
                }
            };
            values.map.insert((section, k.key), entry);
        }
    }

    let (netlist, more) = assemble(&values, defaults);
    diags.extend(more);
    match netlist {
        Some(n) if diags.is_empty() => Ok(n),
        _ => {
            diags.sort_by_key(|d| (d.line.unwrap_or(usize::MAX), d.key.clone()));
            Err(Error::Parse(diags))
        }
    }
}

/// Range checks and construction. Each check is independent so that every
/// problem is reported.
fn assemble(v: &Values, defaults: Vec<DefaultedKey>) -> (Option<Netlist>, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let mut check = |section: &str, key: &str, ok: bool, message: &str| {
        if !ok {
            diags.push(Diagnostic {
                line: v.line(section, key),
                key: Some(format!("{section}.{key}")),
                message: message.to_string(),
            });
        }
    };
    let positive = |x: f64| x > 0.0 && x.is_finite();

    let fs = v.real("fbar", "fs_hz");
    let q = v.real("fbar", "q");
    let kt2 = v.real("fbar", "kt2");
    let c0 = v.real("fbar", "c0_f");
    check("fbar", "fs_hz", positive(fs), "must be > 0");
    check("fbar", "q", q > 0.0, "must be > 0 (inf for a lossless resonator)");
    check("fbar", "kt2", kt2 > 0.0 && kt2 < 8.0 / (PI * PI), "must lie in (0, 8/pi^2)");
    check("fbar", "c0_f", positive(c0), "must be > 0");

    let varactor = VaractorSpec {
        c_zero_bias: v.real("varactor", "c_zero_bias_f"),
        c_reverse_off: v.real("varactor", "c_reverse_off_f"),
        r_on: v.real("varactor", "r_on_ohm"),
        c_forward: v.real("varactor", "c_forward_f"),
    };
    check("varactor", "c_zero_bias_f", positive(varactor.c_zero_bias), "must be > 0");
    check("varactor", "c_reverse_off_f", positive(varactor.c_reverse_off), "must be > 0");
    check(
        "varactor",
        "c_reverse_off_f",
        !(varactor.c_reverse_off > varactor.c_zero_bias),
        "must not exceed c_zero_bias_f",
    );
    check("varactor", "r_on_ohm", positive(varactor.r_on), "must be > 0");
    check("varactor", "c_forward_f", varactor.c_forward >= 0.0 && varactor.c_forward.is_finite(), "must be >= 0");

    let shape = match v.get("modulation", "shape") {
        Parsed::Text(s) => s.parse::<ModShape>(),
        _ => unreachable!(),
    };
    if let Err(e) = &shape {
        check("modulation", "shape", false, e);
    }
    let drive = ModSpec {
        shape: shape.unwrap_or(ModShape::Square),
        freq: v.real("modulation", "freq_hz"),
        amplitude_pp: v.real("modulation", "vpp"),
        dc_bias: v.real("modulation", "dc_bias_v"),
        duty: v.real("modulation", "duty"),
        phase: 0.0,
        rise_fraction: v.real("modulation", "rise_fraction"),
    };
    check("modulation", "freq_hz", positive(drive.freq), "must be > 0");
    check("modulation", "vpp", drive.amplitude_pp >= 0.0 && drive.amplitude_pp.is_finite(), "must be >= 0");
    check("modulation", "dc_bias_v", drive.dc_bias.is_finite(), "must be finite");
    check("modulation", "duty", drive.duty > 0.0 && drive.duty < 1.0, "must lie in (0, 1)");
    check(
        "modulation",
        "rise_fraction",
        drive.rise_fraction >= 0.0 && drive.rise_fraction < 0.25,
        "must lie in [0, 0.25)",
    );
    let phases = match v.get("modulation", "phases_deg") {
        Parsed::Triple(p) => *p,
        _ => unreachable!(),
    };
    check("modulation", "phases_deg", phases.iter().all(|p| p.is_finite()), "entries must be finite");

    let z0 = v.real("ports", "z0_ohm");
    let pad_db = v.real("ports", "hpf_loss_db");
    check("ports", "z0_ohm", positive(z0), "must be > 0");
    check("ports", "hpf_loss_db", pad_db >= 0.0 && pad_db.is_finite(), "must be >= 0");

    let matching = v.sections_present.contains(&"match").then(|| {
        MatchingNetwork::new(v.real("match", "l_series_h"), v.real("match", "c_shunt_f"))
    });
    if let Some(m) = matching {
        check("match", "l_series_h", m.l_series >= 0.0 && m.l_series.is_finite(), "must be >= 0");
        check("match", "c_shunt_f", m.c_shunt >= 0.0 && m.c_shunt.is_finite(), "must be >= 0");
    }

    let sweep = SweepSettings {
        f_start: v.real("sweep", "f_start_hz"),
        f_stop: v.real("sweep", "f_stop_hz"),
        points: v.count("sweep", "points"),
        harmonics: v.count("sweep", "harmonics_k"),
    };
    check("sweep", "f_start_hz", positive(sweep.f_start), "must be > 0");
    check("sweep", "f_stop_hz", sweep.f_stop >= sweep.f_start && sweep.f_stop.is_finite(), "must be >= f_start_hz");
    check("sweep", "points", sweep.points >= 1, "must be >= 1");
    check(
        "sweep",
        "points",
        sweep.points > 1 || sweep.f_start == sweep.f_stop,
        "a single point needs f_start_hz == f_stop_hz",
    );
    check("sweep", "harmonics_k", sweep.harmonics <= MAX_HARMONICS, "must be <= 128");
    if drive.is_active() && positive(drive.freq) && positive(sweep.f_start) {
        check(
            "sweep",
            "harmonics_k",
            sweep.f_start - sweep.harmonics as f64 * drive.freq > 0.0,
            "lowest sideband f_start_hz - K * freq_hz must stay above 0",
        );
    }

    if !diags.is_empty() {
        return (None, diags);
    }

    let bvd = match derive_bvd(fs, q, kt2, c0) {
        Ok(b) => b,
        Err(e) => {
            diags.push(Diagnostic { line: v.line("fbar", "fs_hz"), key: Some("fbar".into()), message: e.to_string() });
            return (None, diags);
        }
    };
    let branch = WyeBranch { bvd, varactor, drive, z0, pad_db, matching: MatchingNetwork::identity() };
    let circuit = match build_wye(&[branch; 3], &phases) {
        Ok(c) => c,
        Err(e) => {
            diags.push(Diagnostic { line: None, key: None, message: e.to_string() });
            return (None, diags);
        }
    };

    let mut notes = Vec::new();
    let f_bias = 1.0 / (2.0 * PI * (BIAS_FILTER_L * BIAS_FILTER_C).sqrt());
    if drive.is_active() {
        notes.push(format!(
            "bias filter {:.0} nH / {:.0} nF resonates at {:.3} MHz; modulation at {:.3} MHz",
            BIAS_FILTER_L * 1e9,
            BIAS_FILTER_C * 1e9,
            f_bias / 1e6,
            drive.freq / 1e6
        ));
    }
    if let Ok(d) = crate::modulation::VaractorDrive::new(&drive, &varactor) {
        if d.clamped() {
            notes.push("drive reaches the -13 V breakdown clamp; values below it are clamped".into());
        }
    }

    (Some(Netlist { branch, phases, matching, sweep, circuit, defaults, notes }), diags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const FULL: &str = "\
# FBAR circulator, every key given
[fbar]
fs_hz = 2.5e9
q = 1250
kt2 = 0.03
c0_f = 1e-12

[varactor]
c_zero_bias_f = 1e-12
c_reverse_off_f = 0.2e-12
r_on_ohm = 1
c_forward_f = 10e-12

[modulation]
shape = \"square\"
freq_hz = 3e6
vpp = 7
dc_bias_v = 0
duty = 0.5
rise_fraction = 0.05
phases_deg = [0, 120, 240]

[ports]
z0_ohm = 50
hpf_loss_db = 0

[match]
l_series_h = 5.9e-9
c_shunt_f = 1e-12

[sweep]
f_start_hz = 2.4e9
f_stop_hz = 2.6e9
points = 201
harmonics_k = 8
";

    #[test]
    fn full_file_has_no_defaults() {
        let n = parse_netlist(FULL).unwrap();
        assert!(n.defaults.is_empty(), "{:?}", n.defaults);
        assert_eq!(n.circuit.port_count(), 3);
        assert_eq!(n.phases, [0.0, 120.0, 240.0]);
        assert_eq!(n.matching, Some(MatchingNetwork::new(5.9e-9, 1e-12)));
        assert_eq!(n.branch.drive.shape, ModShape::Square);
        assert_relative_eq!(n.branch.bvd.cm, 24.92e-15, max_relative = 1e-3);
        assert_eq!(n.sweep, SweepSettings { f_start: 2.4e9, f_stop: 2.6e9, points: 201, harmonics: 8 });
        assert!(n.notes.iter().any(|s| s.contains("2.955 MHz")), "{:?}", n.notes);
        assert_eq!(n.matched_circuit().unwrap().node_count(), 11);
    }

    #[test]
    fn minimal_file_defaults_everything_and_logs_it() {
        let n = parse_netlist("[fbar]\n[sweep]\n").unwrap();
        let full = parse_netlist(FULL).unwrap();
        assert_eq!(n.branch, full.branch);
        assert_eq!(n.sweep, full.sweep);
        assert_eq!(n.matching, None);
        let logged: Vec<String> = n.defaults.iter().map(|d| format!("{}.{}", d.section, d.key)).collect();
        let expected: Vec<String> = SECTIONS
            .iter()
            .filter(|(s, _, _)| *s != "match")
            .flat_map(|(s, _, keys)| keys.iter().map(move |k| format!("{s}.{}", k.key)))
            .collect();
        assert_eq!(logged, expected);
    }

    #[test]
    fn only_missing_keys_are_logged() {
        let n = parse_netlist("[fbar]\nq = 900\n[sweep]\npoints = 11\n[match]\nl_series_h = 1e-9\n").unwrap();
        let logged: Vec<String> = n.defaults.iter().map(|d| format!("{}.{}", d.section, d.key)).collect();
        assert!(!logged.contains(&"fbar.q".to_string()));
        assert!(!logged.contains(&"sweep.points".to_string()));
        assert!(logged.contains(&"match.c_shunt_f".to_string()));
        assert!(logged.contains(&"fbar.fs_hz".to_string()));
        assert_eq!(n.defaults[0].to_string(), "[fbar] fs_hz = 2.5e9 (default)");
    }

    fn diagnostics(text: &str) -> Vec<Diagnostic> {
        match parse_netlist(text) {
            Err(Error::Parse(d)) => d,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duty_out_of_range_is_key_addressed() {
        let d = diagnostics("[fbar]\n[modulation]\nduty = 1.5\n[sweep]\n");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].key.as_deref(), Some("modulation.duty"));
        assert_eq!(d[0].line, Some(3));
    }

    #[test]
    fn independent_errors_are_batched() {
        let text = "[fbar]\nfs_hz = -1\nbogus = 3\n[modulation]\nduty = 1.5\nshape = \"triangle\"\nphases_deg = [0, 120]\n[extra]\nx = 1\n[sweep]\npoints = 0\n";
        let d = diagnostics(text);
        let keys: Vec<&str> = d.iter().filter_map(|d| d.key.as_deref()).collect();
        for k in ["fbar.fs_hz", "fbar.bogus", "modulation.duty", "modulation.shape", "modulation.phases_deg", "[extra]", "sweep.points"] {
            assert!(keys.contains(&k), "missing {k} in {keys:?}");
        }
        let lines: Vec<usize> = d.iter().filter_map(|d| d.line).collect();
        assert!(lines.windows(2).all(|w| w[0] <= w[1]));
        let msg = Error::Parse(d).to_string();
        assert!(msg.contains("line 3: fbar.bogus: unknown key"), "{msg}");
    }

    #[test]
    fn missing_sections_and_syntax_errors() {
        let d = diagnostics("[modulation]\n");
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|d| d.message == "missing required section"));
        let d = diagnostics("[fbar]\nfs_hz = = 3\n[sweep]\n");
        assert_eq!(d[0].line, Some(2));
    }

    #[test]
    fn wrong_types_are_reported() {
        let d = diagnostics("[fbar]\nfs_hz = \"fast\"\n[sweep]\npoints = 2.5\n");
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].key.as_deref(), Some("fbar.fs_hz"));
        assert_eq!(d[1].key.as_deref(), Some("sweep.points"));
    }

    #[test]
    fn modulation_off_variant() {
        let n = parse_netlist(FULL).unwrap();
        let off = n.circuit_without_modulation().unwrap();
        assert!(off.modulated_elements().all(|e| !matches!(
            &e.kind,
            crate::circuit::ElementKind::ModulatedVaractor { drive, .. } if drive.is_active()
        )));
    }
}
