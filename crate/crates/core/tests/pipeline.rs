use fredholm_core::closed_loop_sim::{conjugate_check, harmonic_initial, SimConfig};
use fredholm_core::fredholm_transform::assemble;
use fredholm_core::kernel_builder::{build_kernel, kernel_eval, DecayConfig, TailClosure};
use fredholm_core::spectral_basis::{quadrature_cross_gram, DegenerateParams};

fn setup(alpha: f64, lambda: f64) -> (DegenerateParams, DecayConfig) {
    (
        DegenerateParams::new(alpha).unwrap(),
        DecayConfig::with_default_margin(lambda).unwrap(),
    )
}

#[test]
fn psi_projections_match_transform_entries() {
    let (p, config) = setup(0.5, 5.0);
    let (modes, data) = build_kernel(&p, &config, 12, TailClosure::Truncated).unwrap();
    let sys = assemble(&data).unwrap();
    let omega = modes[11].zero + 1.0;
    let projections = quadrature_cross_gram(
        &p,
        omega,
        12,
        12,
        |k, x| modes[k].phi(&p, x),
        |n, x| data.psi(n + 1, x),
        1e-11,
    )
    .unwrap();
    for k in 0..12 {
        for n in 0..12 {
            let expected = if k == n { 1.0 } else { 0.0 } - sys.t_mat[(k, n)];
            assert!((projections[(k, n)] - expected).abs() < 1e-8, "({k}, {n})");
        }
    }
}

#[test]
fn kernel_norm_matches_quadrature() {
    let (p, config) = setup(0.25, 20.0);
    let (_, data) = build_kernel(&p, &config, 10, TailClosure::Truncated).unwrap();
    for n in 1..=10 {
        let omega = data.xi[n - 1].mode.zero + 1.0;
        let q = quadrature_cross_gram(
            &p,
            omega,
            1,
            1,
            |_, x| data.psi(n, x),
            |_, x| data.psi(n, x),
            1e-11,
        )
        .unwrap();
        assert!((q[(0, 0)] - data.psi_norm_squared(n)).abs() < 1e-8, "n={n}");
    }
}

#[test]
fn feedback_row_is_kernel_trace() {
    // K f = ∫ k(1, y) f(y) dy, so for f = φ_m the feedback is ψ_m(1)
    let (p, config) = setup(0.5, 5.0);
    let (_, data) = build_kernel(&p, &config, 16, TailClosure::Truncated).unwrap();
    for n in 1..=16 {
        assert!((data.psi(n, 1.0) - data.psi1[n - 1]).abs() < 1e-12);
    }
    let value = kernel_eval(&data, 1.0, 0.3).unwrap();
    let direct: f64 = (1..=16)
        .map(|n| data.psi1[n - 1] * data.xi[n - 1].mode.phi(&p, 0.3))
        .sum();
    assert!((value - direct).abs() < 1e-12);
}

#[test]
fn closures_agree_on_leading_coefficients() {
    let (p, config) = setup(0.5, 5.0);
    let (_, truncated) = build_kernel(&p, &config, 64, TailClosure::Truncated).unwrap();
    let (_, asymptotic) = build_kernel(
        &p,
        &config,
        64,
        TailClosure::Asymptotic {
            passive_modes: 2000,
        },
    )
    .unwrap();
    // the truncated system converges to the untruncated one as N grows
    let (_, coarse) = build_kernel(&p, &config, 16, TailClosure::Truncated).unwrap();
    let gap = |a: &[f64]| {
        (0..4)
            .map(|i| (a[i] - asymptotic.d[i]).abs())
            .fold(0.0, f64::max)
    };
    assert!(gap(&truncated.d) < gap(&coarse.d));
}

#[test]
fn conjugacy_error_shrinks_with_integrator_tolerance() {
    let (p, config) = setup(0.5, 5.0);
    let (modes, data) = build_kernel(&p, &config, 24, TailClosure::Truncated).unwrap();
    let sys = assemble(&data).unwrap();
    let u0 = harmonic_initial(24);
    let loose = SimConfig {
        integrator_tol: 1e-5,
        ..SimConfig::default()
    };
    let tight = SimConfig {
        integrator_tol: 1e-9,
        ..SimConfig::default()
    };
    let a = conjugate_check(&sys, &modes, &config, &u0, &loose).unwrap();
    let b = conjugate_check(&sys, &modes, &config, &u0, &tight).unwrap();
    assert!(b < a, "{b:e} !< {a:e}");
}

#[test]
fn zero_lambda_conjugacy_is_integrator_error_only() {
    let p = DegenerateParams::new(0.5).unwrap();
    let config = DecayConfig::new(0.0, 0.0).unwrap();
    let (modes, data) = build_kernel(&p, &config, 16, TailClosure::Truncated).unwrap();
    let sys = assemble(&data).unwrap();
    let cfg = SimConfig::default();
    let dev = conjugate_check(&sys, &modes, &config, &harmonic_initial(16), &cfg).unwrap();
    assert!(dev < 10.0 * cfg.integrator_tol, "{dev:e}");
}

#[test]
fn exports_are_reproducible() {
    let (p, config) = setup(0.5, 5.0);
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let (_, data) = build_kernel(&p, &config, 16, TailClosure::Truncated).unwrap();
        let sys = assemble(&data).unwrap();
        data.write_mode_table(&dir.path().join(format!("{name}_modes.csv")))
            .unwrap();
        data.write_kernel_grid(&dir.path().join(format!("{name}_grid.csv")), 9)
            .unwrap();
        sys.write_spectrum(&dir.path().join(format!("{name}_spec.csv")))
            .unwrap();
    }
    for f in ["modes", "grid", "spec"] {
        let a = std::fs::read(dir.path().join(format!("a_{f}.csv"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b_{f}.csv"))).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let grid = std::fs::read_to_string(dir.path().join("a_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 81);
}
