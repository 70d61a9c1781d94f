use std::sync::{Arc, OnceLock};

use approx::assert_relative_eq;
use proptest::prelude::*;

use caplab::calculus::Calibration;
use caplab::config::{parse_shape, Spacing};
use caplab::experiments::least_squares;
use caplab::field::GridField;
use caplab::grid::{build_domain, dilate, rasterize_set, volume, GridDomain, ShapeSpec};
use caplab::wstar::{quadratic_certificate, triangle_certificate};

fn disc() -> &'static Arc<GridDomain> {
    static D: OnceLock<Arc<GridDomain>> = OnceLock::new();
    D.get_or_init(|| build_domain(&ShapeSpec::centered_ball(1, 1.0), 1.0 / 16.0).unwrap())
}

/// Smooth test function `a x² + b xy + c sin(k y)`.
fn smooth(c: [f64; 4]) -> GridField {
    GridField::from_fn(disc(), move |p| c[0] * p[0] * p[0] + c[1] * p[0] * p[1] + c[2] * (c[3] * p[1]).sin())
}

fn coeffs() -> impl Strategy<Value = [f64; 4]> {
    [-2.0..2.0f64, -2.0..2.0f64, -1.0..1.0f64, 0.5..4.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn certificate_triangle_inequality(a in coeffs(), b in coeffs()) {
        let cal = Calibration::analytic(1).unwrap();
        let d = 4.0 / 16.0;
        let cf = quadratic_certificate(&smooth(a), &cal, d).unwrap();
        let cg = quadratic_certificate(&smooth(b), &cal, d).unwrap();
        let sum = triangle_certificate(&cf, &cg, &cal).unwrap();
        prop_assert!(sum.domination_margin >= -1e-9);
        prop_assert!(sum.norm() <= cf.norm() + cg.norm() + 1e-9);
    }

    #[test]
    fn certificate_is_homogeneous(a in coeffs(), t in -5.0..5.0f64) {
        let cal = Calibration::analytic(1).unwrap();
        let f = smooth(a);
        let n1 = quadratic_certificate(&f, &cal, 0.25).unwrap().norm();
        let nt = quadratic_certificate(&f.map(|x| t * x), &cal, 0.25).unwrap().norm();
        prop_assert!((nt - t.abs() * n1).abs() <= 1e-9 * (1.0 + nt));
    }

    #[test]
    fn spacing_fractions(p in 1u32..50, q in 1u32..2000) {
        let s: Spacing = format!("{p}/{q}").parse().unwrap();
        prop_assert_eq!(s.0, p as f64 / q as f64);
        let d: Spacing = format!("{}", s.0).parse().unwrap();
        prop_assert_eq!(d.0, s.0);
    }

    #[test]
    fn spacing_rejects_nonpositive(v in -10.0..=0.0f64) {
        let text = v.to_string();
        prop_assert!(text.parse::<Spacing>().is_err());
    }

    #[test]
    fn shape_strings_round_trip(r in 0.01..5.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64) {
        let s = parse_shape(&format!("ball:{r}@{x},{y}")).unwrap();
        prop_assert_eq!(s, ShapeSpec::ball(&[x, y], r));
        let inverted = format!("annulus:{}:{}", r, r / 2.0);
        prop_assert!(parse_shape(&inverted).is_err());
    }

    #[test]
    fn least_squares_recovers_lines(a in -10.0..10.0f64, b in -3.0..3.0f64, k in 3usize..12) {
        let xs: Vec<f64> = (0..k).map(|i| i as f64 * 0.7 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| a + b * x).collect();
        let (fb, fa, rms) = least_squares(&xs, &ys);
        assert_relative_eq!(fa, a, epsilon = 1e-9);
        assert_relative_eq!(fb, b, epsilon = 1e-9);
        prop_assert!(rms < 1e-9);
    }

    #[test]
    fn dilation_grows_volume(r in 0.05..0.6f64, cells in 0usize..4) {
        let e = rasterize_set(&ShapeSpec::centered_ball(1, r), disc());
        let d = dilate(&e, cells);
        prop_assert!(e.is_subset_of(&d));
        prop_assert!(volume(&d) >= volume(&e));
    }
}
