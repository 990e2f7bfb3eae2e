//! File formats: netlists in, Touchstone and CSV out (and back in).

pub mod csv;
pub mod netlist;
pub mod touchstone;

pub use self::csv::{read_sidebands_csv, write_metrics_csv, write_sidebands_csv};
pub use netlist::{parse_netlist, read_netlist, Netlist, SweepSettings};
pub use touchstone::{read_touchstone, write_touchstone, Touchstone};

/// C-style scientific notation with 13 significant digits (`-1.234567890123e+09`).
pub fn format_sci(x: f64) -> String {
    if x == 0.0 {
        // normalise -0.0 so output does not depend on sign of zero
        return "0.000000000000e+00".to_string();
    }
    let s = format!("{x:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}
