use std::f64::consts::PI;

use fredholm_core::special_functions::{
    bessel_i, bessel_j, bessel_zero, j_pair_with, BesselOrder, JScheme, ASYMPTOTIC_LIMIT,
    SERIES_LIMIT,
};
use fredholm_core::verify::bessel_ode_residual;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn bessel_equation_residual(nu in 0.05f64..=0.5, x in 0.1f64..=60.0) {
        prop_assert!(bessel_ode_residual(nu, x) <= 1e-9 * (1.0 + x * x));
    }

    #[test]
    fn half_order_closed_forms(x in 0.1f64..=50.0) {
        let half = BesselOrder::new(0.5).unwrap();
        let scale = (2.0 / (PI * x)).sqrt();
        prop_assert!((bessel_j(half, x).unwrap() - scale * x.sin()).abs() <= 1e-10);
        let i_ref = scale * x.sinh();
        prop_assert!((bessel_i(half, x).unwrap() - i_ref).abs() <= 1e-10 * i_ref.max(1.0));
    }

    #[test]
    fn zeros_interlace_across_orders(a in 0.05f64..0.5, gap in 0.01f64..0.45, n in 1usize..60) {
        let b = (a + gap).min(0.5);
        let lo = BesselOrder::new(a).unwrap();
        let hi = BesselOrder::new(b).unwrap();
        let z = |o, k| bessel_zero(o, k).unwrap().value;
        prop_assert!(z(lo, n) < z(hi, n));
        prop_assert!(z(hi, n) < z(lo, n + 1));
    }

    #[test]
    fn series_and_recurrence_agree_at_first_switch(nu in 0.05f64..=0.5, dx in -0.5f64..0.5) {
        let x = SERIES_LIMIT + dx;
        let (a, a1) = j_pair_with(JScheme::Series, nu, x);
        let (b, b1) = j_pair_with(JScheme::Miller, nu, x);
        prop_assert!((a - b).abs() <= 1e-11 && (a1 - b1).abs() <= 1e-11);
    }

    #[test]
    fn recurrence_and_asymptotic_agree_at_second_switch(nu in 0.05f64..=0.5, dx in -1.0f64..1.0) {
        let x = ASYMPTOTIC_LIMIT + dx;
        let (a, a1) = j_pair_with(JScheme::Miller, nu, x);
        let (b, b1) = j_pair_with(JScheme::Hankel, nu, x);
        prop_assert!((a - b).abs() <= 1e-11 && (a1 - b1).abs() <= 1e-11);
    }
}

#[test]
fn zero_spacing_tends_to_pi() {
    let order = BesselOrder::new(0.4).unwrap();
    let d = bessel_zero(order, 200).unwrap().value - bessel_zero(order, 199).unwrap().value;
    assert!((d - PI).abs() < 1e-5);
}
