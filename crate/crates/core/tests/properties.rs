use std::f64::consts::PI;

use proptest::prelude::*;

use circsim_core::io::parse_netlist;
use circsim_core::network::embed_matching;
use circsim_core::{
    build_wye, derive_bvd, Complex64, LptvSolver, MatchingNetwork, ModShape, ModSpec, VaractorSpec, WyeBranch,
};

const WM: f64 = 2.0 * PI * 3e6;

fn branch(q: f64, kt2: f64, c_off: f64, vpp: f64, rise: f64, shape: ModShape) -> WyeBranch {
    WyeBranch {
        bvd: derive_bvd(2.5e9, q, kt2, 1e-12).unwrap(),
        varactor: VaractorSpec { c_reverse_off: c_off, ..VaractorSpec::default() },
        drive: ModSpec { shape, amplitude_pp: vpp, rise_fraction: rise, ..ModSpec::default() },
        ..WyeBranch::default()
    }
}

fn shape() -> impl Strategy<Value = ModShape> {
    prop_oneof![Just(ModShape::Square), Just(ModShape::Sine)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn bvd_round_trip_within_1ppm(fs in 1e8f64..1e10, q in 50.0f64..1e4, kt2 in 0.005f64..0.3, c0 in 0.1e-12f64..10e-12) {
        let p = derive_bvd(fs, q, kt2, c0).unwrap();
        prop_assert!((p.series_resonance_hz() / fs - 1.0).abs() < 1e-6);
        prop_assert!((p.quality_factor() / q - 1.0).abs() < 1e-6);
        prop_assert!((p.coupling_kt2() / kt2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_antiresonance_above_fs(q in 200.0f64..5000.0, kt2 in 0.02f64..0.08, lossless in any::<bool>()) {
        let q = if lossless { f64::INFINITY } else { q };
        let p = derive_bvd(2.5e9, q, kt2, 1e-12).unwrap();
        let (fs, fp) = (p.series_resonance_hz(), p.parallel_resonance_hz());
        // with loss, the series pole of Im{Y} becomes a zero within fs/Q of fs;
        // count from just past it
        let lo = if lossless { fs } else { fs * (1.0 + 1.0 / q) };
        let hi = fp + 0.01 * (fp - fs);
        let n = 20_000;
        let im = |f: f64| p.admittance(2.0 * PI * f).im;
        let at = |m: usize| lo + (hi - lo) * (m as f64 + 0.5) / n as f64;
        let crossings = (0..n - 1).filter(|&m| im(at(m)).signum() != im(at(m + 1)).signum()).count();
        prop_assert_eq!(crossings, 1);
    }

    #[test]
    fn random_modulated_wye_is_passive(
        q in 200.0f64..3000.0,
        c_off in 0.1e-12f64..0.9e-12,
        vpp in 0.5f64..12.0,
        rise in 0.02f64..0.2,
        shape in shape(),
        phases in prop::array::uniform3(0.0f64..360.0),
        f in 2.45e9f64..2.56e9,
    ) {
        let c = build_wye(&[branch(q, 0.03, c_off, vpp, rise, shape); 3], &phases).unwrap();
        let s = LptvSolver::new(&c, WM, 4).unwrap().solve(2.0 * PI * f).unwrap();
        for j in 1..=3 {
            prop_assert!(s.scattered_power(j) <= 1.0 + 1e-9, "drive {} power {}", j, s.scattered_power(j));
        }
    }

    #[test]
    fn unmodulated_wye_is_reciprocal(q in 200.0f64..3000.0, c_off in 0.1e-12f64..0.9e-12, f in 2.4e9f64..2.6e9) {
        let c = build_wye(&[branch(q, 0.03, c_off, 7.0, 0.05, ModShape::Off); 3], &[0.0, 120.0, 240.0]).unwrap();
        let s = LptvSolver::new(&c, WM, 2).unwrap().solve(2.0 * PI * f).unwrap();
        for i in 1..=3 {
            for j in 1..=3 {
                prop_assert!((s.s(i, j, 0) - s.s(j, i, 0)).norm() < 1e-10);
                for k in [-2i64, -1, 1, 2] {
                    prop_assert!(s.s(i, j, k).norm() == 0.0);
                }
            }
        }
    }

    #[test]
    fn relabelling_branches_permutes_s(
        phases in prop::array::uniform3(0.0f64..360.0),
        f in 2.50e9f64..2.54e9,
        c_offs in prop::array::uniform3(0.15e-12f64..0.5e-12),
    ) {
        let branches: Vec<WyeBranch> = c_offs.iter().map(|&c| branch(1250.0, 0.03, c, 7.0, 0.05, ModShape::Square)).collect();
        let a = build_wye(&branches, &phases).unwrap();
        // branch m of b is branch m - 1 of a (cyclic)
        let rot = |m: usize| (m + 2) % 3;
        let b = build_wye(
            &[branches[rot(0)], branches[rot(1)], branches[rot(2)]],
            &[phases[rot(0)], phases[rot(1)], phases[rot(2)]],
        )
        .unwrap();
        let sa = LptvSolver::new(&a, WM, 4).unwrap().solve(2.0 * PI * f).unwrap();
        let sb = LptvSolver::new(&b, WM, 4).unwrap().solve(2.0 * PI * f).unwrap();
        let to_b = |p: usize| p % 3 + 1;
        for i in 1..=3 {
            for j in 1..=3 {
                for k in -4i64..=4 {
                    prop_assert!((sa.s(i, j, k) - sb.s(to_b(i), to_b(j), k)).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn common_phase_shift_rotates_sidebands(shift in 0.0f64..360.0, f in 2.50e9f64..2.54e9) {
        let br = [branch(1250.0, 0.03, 0.2e-12, 7.0, 0.05, ModShape::Square); 3];
        let a = build_wye(&br, &[0.0, 120.0, 240.0]).unwrap();
        let b = build_wye(&br, &[shift, 120.0 + shift, 240.0 + shift]).unwrap();
        let sa = LptvSolver::new(&a, WM, 4).unwrap().solve(2.0 * PI * f).unwrap();
        let sb = LptvSolver::new(&b, WM, 4).unwrap().solve(2.0 * PI * f).unwrap();
        for i in 1..=3 {
            for k in -4i64..=4 {
                let expected = sa.s(i, 1, k) * Complex64::from_polar(1.0, k as f64 * shift.to_radians());
                prop_assert!((sb.s(i, 1, k) - expected).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_depth_matches_lti(vpp in 0.5f64..10.0, f in 2.45e9f64..2.55e9, dc in -3.0f64..-0.1) {
        // with c_reverse_off == c_zero_bias and a reverse dc bias large enough
        // that the drive never reaches forward conduction, C(t) is constant
        let mut br = branch(1250.0, 0.03, 1e-12, vpp.min(-2.0 * dc * 0.99), 0.05, ModShape::Sine);
        br.varactor.c_zero_bias = 1e-12;
        br.drive.dc_bias = dc;
        let c = build_wye(&[br; 3], &[0.0, 120.0, 240.0]).unwrap();
        let off = build_wye(&[WyeBranch { drive: ModSpec { dc_bias: dc, ..ModSpec::off() }, ..br }; 3], &[0.0, 120.0, 240.0]).unwrap();
        let s = LptvSolver::new(&c, WM, 4).unwrap().solve(2.0 * PI * f).unwrap();
        let l = LptvSolver::new(&off, WM, 0).unwrap().solve(2.0 * PI * f).unwrap();
        for i in 1..=3 {
            for j in 1..=3 {
                prop_assert!((s.s(i, j, 0) - l.s(i, j, 0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn lossless_embedding_keeps_scattered_power(l in 0.0f64..20e-9, c in 0.0f64..5e-12, f in 2.45e9f64..2.55e9) {
        // lossless resonators, varactors held at 0 V (no conductance)
        let br = WyeBranch {
            bvd: derive_bvd(2.5e9, f64::INFINITY, 0.03, 1e-12).unwrap(),
            drive: ModSpec::off(),
            ..WyeBranch::default()
        };
        let wye = build_wye(&[br; 3], &[0.0, 120.0, 240.0]).unwrap();
        let device = LptvSolver::new(&wye, WM, 2).unwrap().solve(2.0 * PI * f).unwrap();
        let matched = embed_matching(&device, &[MatchingNetwork::new(l, c); 3]).unwrap();
        for j in 1..=3 {
            prop_assert!((matched.scattered_power(j) - device.scattered_power(j)).abs() < 1e-9);
        }
    }

    #[test]
    fn provenance_lists_exactly_the_omitted_keys(mask in prop::collection::vec(any::<bool>(), 4)) {
        let keys = [("fs_hz", "2.5e9"), ("q", "1250"), ("kt2", "0.03"), ("c0_f", "1e-12")];
        let mut text = String::from("[fbar]\n");
        for (&(k, v), &given) in keys.iter().zip(&mask) {
            if given {
                text.push_str(&format!("{k} = {v}\n"));
            }
        }
        text.push_str("[sweep]\npoints = 11\n");
        let n = parse_netlist(&text).unwrap();
        let fbar: Vec<&str> = n.defaults.iter().filter(|d| d.section == "fbar").map(|d| d.key).collect();
        let expected: Vec<&str> = keys.iter().zip(&mask).filter(|(_, &g)| !g).map(|(k, _)| k.0).collect();
        prop_assert_eq!(fbar, expected);
        prop_assert!(!n.defaults.iter().any(|d| d.section == "sweep" && d.key == "points"));
    }
}
