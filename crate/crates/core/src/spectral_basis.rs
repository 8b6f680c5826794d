//! Eigenpairs of `A u = (x^α u_x)_x` with Dirichlet conditions on `(0, 1)`
//! and the weighted-`L²` tools built on them.
//!
//! With `ν = (1−α)/(2−α)` and `κ = (2−α)/2`, the normalised eigenfunctions are
//! `φ_n(x) = √(2κ)/J_ν'(j_{ν,n}) · x^{(1−α)/2} J_ν(j_{ν,n} x^κ)` with
//! eigenvalues `λ_n = (κ j_{ν,n})²`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::quadrature::{InnerProduct, QuadratureError, Rule};
use crate::special_functions::{j_pair, BesselOrder, SpecialFunctionError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SpectralError {
    #[error("degeneracy exponent alpha must satisfy 0 <= alpha < 1, got {0}")]
    InvalidAlpha(f64),

    #[error("number of modes must be at least 1")]
    NoModes,

    #[error("eigenfunctions are evaluated on (0, 1], got x = {0}")]
    OutsideInterval(f64),

    #[error(transparent)]
    Special(#[from] SpecialFunctionError),

    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// The degeneracy exponent `α` with its derived Bessel order `ν` and scale `κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegenerateParams {
    pub alpha: f64,
    pub nu: f64,
    pub kappa: f64,
}

impl DegenerateParams {
    /// `α = 0` is admitted as the classical heat equation (`ν = 1/2`, `κ = 1`).
    pub fn new(alpha: f64) -> Result<Self, SpectralError> {
        if !(alpha.is_finite() && (0.0..1.0).contains(&alpha)) {
            return Err(SpectralError::InvalidAlpha(alpha));
        }
        Ok(Self {
            alpha,
            nu: (1.0 - alpha) / (2.0 - alpha),
            kappa: (2.0 - alpha) / 2.0,
        })
    }

    pub fn order(&self) -> BesselOrder {
        BesselOrder::new(self.nu).expect("nu lies in (0, 1/2] for alpha in [0, 1)")
    }

    /// `(2κ)^{1/2}`, the normalisation shared by `φ_n` and `ξ̃_n`.
    #[inline]
    pub fn norm_factor(&self) -> f64 {
        (2.0 * self.kappa).sqrt()
    }

    /// Quadrature context using the `y = x^κ` substitution.
    pub fn inner_product(&self) -> InnerProduct {
        InnerProduct::new(self.kappa)
    }
}

/// One eigenpair of `−A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenMode {
    pub n: usize,
    /// `j_{ν,n}`
    pub zero: f64,
    /// `λ_n = (κ j_{ν,n})²`
    pub lambda: f64,
    /// `J_ν'(j_{ν,n})`
    pub jprime: f64,
    /// `φ_n'(1) = (2κ)^{1/2} κ j_{ν,n}`
    pub boundary_trace: f64,
}

impl EigenMode {
    pub fn new(params: &DegenerateParams, n: usize) -> Result<Self, SpectralError> {
        let order = params.order();
        let zero = crate::special_functions::bessel_zero(order, n)?.value;
        let (j, j1) = j_pair(params.nu, zero);
        let jprime = params.nu / zero * j - j1;
        Ok(Self {
            n,
            zero,
            lambda: (params.kappa * zero).powi(2),
            jprime,
            boundary_trace: params.norm_factor() * params.kappa * zero,
        })
    }

    /// `φ_n(x)` without domain checks; `x` must lie in `(0, 1]`.
    #[inline]
    pub fn phi(&self, params: &DegenerateParams, x: f64) -> f64 {
        let y = x.powf(params.kappa);
        let amp = params.norm_factor() / self.jprime;
        amp * x.powf(0.5 * (1.0 - params.alpha)) * j_pair(params.nu, self.zero * y).0
    }

    /// `φ_n'(x)` for `x` in `(0, 1]`.
    pub fn phi_prime(&self, params: &DegenerateParams, x: f64) -> f64 {
        let (alpha, kappa, nu) = (params.alpha, params.kappa, params.nu);
        let arg = self.zero * x.powf(kappa);
        let (j, j1) = j_pair(nu, arg);
        let jp = nu / arg * j - j1;
        let amp = params.norm_factor() / self.jprime;
        amp * (0.5 * (1.0 - alpha) * x.powf(-0.5 * (1.0 + alpha)) * j
            + x.powf(0.5 * (1.0 - alpha)) * self.zero * jp * kappa * x.powf(-0.5 * alpha))
    }
}

/// Modes `1..=count`, built in parallel.
pub fn build_modes(
    params: &DegenerateParams,
    count: usize,
) -> Result<Vec<EigenMode>, SpectralError> {
    if count == 0 {
        return Err(SpectralError::NoModes);
    }
    (1..=count)
        .into_par_iter()
        .map(|n| EigenMode::new(params, n))
        .collect()
}

/// Mode table `n, j_nu_n, lambda_n, jprime, boundary_trace`.
pub fn write_mode_table(path: &std::path::Path, modes: &[EigenMode]) -> std::io::Result<()> {
    crate::export::write_csv(
        path,
        &["n", "j_nu_n", "lambda_n", "jprime", "boundary_trace"],
        modes
            .iter()
            .map(|m| vec![m.n as f64, m.zero, m.lambda, m.jprime, m.boundary_trace]),
    )
}

/// `φ_n(x)` with the domain check `0 < x ≤ 1`.
pub fn eval_phi(mode: &EigenMode, params: &DegenerateParams, x: f64) -> Result<f64, SpectralError> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(SpectralError::OutsideInterval(x));
    }
    Ok(mode.phi(params, x))
}

/// `∫₀¹ f g dx` through the self-checking `y = x^κ` quadrature.
pub fn inner_product_quadrature<F, G>(
    params: &DegenerateParams,
    f: F,
    g: G,
) -> Result<f64, SpectralError>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    Ok(params.inner_product().integrate(f, g)?)
}

/// Matrix `M[r][c] = ∫₀¹ row_r(x) col_c(x) dx` for two function families whose
/// `y`-frequencies are at most `omega`. Both families are sampled on a rule and
/// on its refinement; the matrix is accepted once the two agree entrywise to
/// `tolerance`.
pub fn quadrature_cross_gram<R, C>(
    params: &DegenerateParams,
    omega: f64,
    rows: usize,
    cols: usize,
    row_fn: R,
    col_fn: C,
    tolerance: f64,
) -> Result<DMatrix<f64>, SpectralError>
where
    R: Fn(usize, f64) -> f64 + Sync,
    C: Fn(usize, f64) -> f64 + Sync,
{
    let ip = params.inner_product();
    let mut panels = ip.panels_for_frequency(omega);
    let assemble = |rule: &Rule| {
        let row_samples: Vec<Vec<f64>> = (0..rows)
            .into_par_iter()
            .map(|r| rule.sample(|x| row_fn(r, x)))
            .collect();
        let col_samples: Vec<Vec<f64>> = (0..cols)
            .into_par_iter()
            .map(|c| rule.sample(|x| col_fn(c, x)))
            .collect();
        DMatrix::from_fn(rows, cols, |r, c| {
            rule.dot(&row_samples[r], &col_samples[c])
        })
    };
    let mut coarse = assemble(&ip.rule(panels));
    loop {
        let fine = assemble(&ip.rule(2 * panels));
        let difference = (&fine - &coarse).amax();
        if difference <= tolerance {
            return Ok(fine);
        }
        panels *= 2;
        if panels >= ip.max_panels {
            return Err(QuadratureError::NotConverged {
                difference,
                tolerance,
                panels,
            }
            .into());
        }
        coarse = fine;
    }
}

/// Quadrature Gram matrix `⟨φ_n, φ_k⟩` of the given modes.
pub fn eigenfunction_gram(
    modes: &[EigenMode],
    params: &DegenerateParams,
) -> Result<DMatrix<f64>, SpectralError> {
    let omega = modes.iter().map(|m| m.zero).fold(0.0, f64::max);
    quadrature_cross_gram(
        params,
        omega,
        modes.len(),
        modes.len(),
        |r, x| modes[r].phi(params, x),
        |c, x| modes[c].phi(params, x),
        1e-11,
    )
}

/// Quadrature coefficients `b_n = ⟨x^{1−α}, φ_n⟩` of the lifting function.
///
/// Since `A x^{1−α} = 0`, integrating `x^{1−α} A φ_n` by parts gives
/// `b_n = −φ_n'(1)/λ_n`.
pub fn lifting_coefficients(
    modes: &[EigenMode],
    params: &DegenerateParams,
) -> Result<Vec<f64>, SpectralError> {
    let omega = modes.iter().map(|m| m.zero).fold(0.0, f64::max);
    let gram = quadrature_cross_gram(
        params,
        omega,
        1,
        modes.len(),
        |_, x| x.powf(1.0 - params.alpha),
        |c, x| modes[c].phi(params, x),
        1e-11,
    )?;
    Ok(gram.row(0).iter().copied().collect())
}

/// Hardy–Poincaré pair `(∫ f², 4/(1−α)² ∫ x^α f′²)` for `f` vanishing at both ends.
pub fn hardy_poincare_check<F, D>(
    f: F,
    f_prime: D,
    params: &DegenerateParams,
) -> Result<(f64, f64), SpectralError>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let ip = params.inner_product();
    let lhs = ip.integrate(&f, &f)?;
    let weighted = ip.integrate(|x| x.powf(params.alpha) * f_prime(x), &f_prime)?;
    let constant = 4.0 / (1.0 - params.alpha).powi(2);
    Ok((lhs, constant * weighted))
}

/// Residual of the strong form `(x^α φ_n')' + λ_n φ_n` at `x`, with the outer
/// derivative taken by a five-point central difference of step `h`.
pub fn strong_form_residual(mode: &EigenMode, params: &DegenerateParams, x: f64, h: f64) -> f64 {
    let flux = |s: f64| s.powf(params.alpha) * mode.phi_prime(params, s);
    let d = (-flux(x + 2.0 * h) + 8.0 * flux(x + h) - 8.0 * flux(x - h) + flux(x - 2.0 * h))
        / (12.0 * h);
    d + mode.lambda * mode.phi(params, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn classical_limit_modes() {
        let params = DegenerateParams::new(0.0).unwrap();
        assert_eq!(params.nu, 0.5);
        assert_eq!(params.kappa, 1.0);
        let m = EigenMode::new(&params, 1).unwrap();
        assert!((m.zero - PI).abs() < 1e-14);
        assert!((m.lambda - PI * PI).abs() < 1e-12);
        assert!((m.boundary_trace - 2f64.sqrt() * PI).abs() < 1e-13);
    }

    #[test]
    fn half_degenerate_params() {
        let params = DegenerateParams::new(0.5).unwrap();
        assert!((params.nu - 1.0 / 3.0).abs() < 1e-16);
        assert_eq!(params.kappa, 0.75);
        let m = EigenMode::new(&params, 1).unwrap();
        assert!((m.lambda - (0.75 * 2.902_586_5_f64).powi(2)).abs() < 1e-5);
        assert!((m.lambda - 4.739).abs() < 1e-3);
    }

    #[test]
    fn alpha_out_of_range() {
        assert!(DegenerateParams::new(1.0).is_err());
        assert!(DegenerateParams::new(-0.1).is_err());
        assert!(DegenerateParams::new(1.5).is_err());
        assert!(build_modes(&DegenerateParams::new(0.2).unwrap(), 0).is_err());
    }

    #[test]
    fn phi_vanishes_at_right_end() {
        let params = DegenerateParams::new(0.5).unwrap();
        for m in build_modes(&params, 20).unwrap() {
            assert!(eval_phi(&m, &params, 1.0).unwrap().abs() < 1e-10);
        }
        let m = EigenMode::new(&params, 1).unwrap();
        assert!(eval_phi(&m, &params, 0.0).is_err());
        assert!(eval_phi(&m, &params, 1.01).is_err());
    }

    #[test]
    fn classical_limit_is_a_sine_series() {
        let params = DegenerateParams::new(0.0).unwrap();
        for m in build_modes(&params, 6).unwrap() {
            let sign = (m.n as f64 * PI).cos().signum();
            for &x in &[0.1, 0.33, 0.5, 0.77] {
                let expected = sign * 2f64.sqrt() * (m.n as f64 * PI * x).sin();
                assert!((m.phi(&params, x) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn phi_decays_like_x_to_one_minus_alpha() {
        let params = DegenerateParams::new(0.5).unwrap();
        let m = EigenMode::new(&params, 2).unwrap();
        let r1 = m.phi(&params, 1e-6) / 1e-6f64.powf(0.5);
        let r2 = m.phi(&params, 1e-8) / 1e-8f64.powf(0.5);
        assert!((r1 / r2 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn phi_prime_matches_finite_difference() {
        let params = DegenerateParams::new(0.25).unwrap();
        let m = EigenMode::new(&params, 3).unwrap();
        for &x in &[0.2, 0.5, 0.9] {
            let h = 1e-6;
            let fd = (m.phi(&params, x + h) - m.phi(&params, x - h)) / (2.0 * h);
            assert!((fd - m.phi_prime(&params, x)).abs() < 1e-7);
        }
        // boundary trace is φ_n'(1)
        assert!((m.phi_prime(&params, 1.0) - m.boundary_trace).abs() < 1e-10);
    }

    #[test]
    fn hardy_poincare_examples() {
        let params = DegenerateParams::new(0.5).unwrap();
        let (lhs, rhs) =
            hardy_poincare_check(|x| x * (1.0 - x), |x| 1.0 - 2.0 * x, &params).unwrap();
        assert!(lhs <= rhs);
        assert!((lhs - 1.0 / 30.0).abs() < 1e-12);
        let (z0, z1) = hardy_poincare_check(|_| 0.0, |_| 0.0, &params).unwrap();
        assert_eq!((z0, z1), (0.0, 0.0));

        let m = EigenMode::new(&params, 1).unwrap();
        let (l, r) =
            hardy_poincare_check(|x| m.phi(&params, x), |x| m.phi_prime(&params, x), &params)
                .unwrap();
        assert!((l - 1.0).abs() < 1e-9);
        assert!((r - 16.0 * m.lambda).abs() < 1e-7 * m.lambda);
    }

    #[test]
    fn lifting_coefficients_classical_closed_form() {
        let params = DegenerateParams::new(0.0).unwrap();
        let modes = build_modes(&params, 6).unwrap();
        let b = lifting_coefficients(&modes, &params).unwrap();
        for (m, b) in modes.iter().zip(&b) {
            // ⟨x, ±√2 sin nπx⟩ against −φ_n'(1)/λ_n
            assert!((b + m.boundary_trace / m.lambda).abs() < 1e-10);
            assert!((b.abs() - 2f64.sqrt() / (m.n as f64 * PI)).abs() < 1e-10);
        }
    }
}
