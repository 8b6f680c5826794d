//! Bessel functions of the first kind `J_ν`, modified Bessel functions `I_ν`,
//! their derivatives and the positive zeros `j_{ν,n}` for fractional orders
//! `0 < ν ≤ 1/2`.
//!
//! `J_ν` is evaluated with one of three schemes depending on the argument:
//!
//! | range            | scheme                                                   |
//! |------------------|----------------------------------------------------------|
//! | `x ≤ 8`          | ascending power series                                   |
//! | `8 < x < 30`     | Miller backward recurrence, normalised by the Neumann    |
//! |                  | sum `(x/2)^ν = Σ_k (ν+2k) Γ(ν+k)/k! J_{ν+2k}(x)`          |
//! | `x ≥ 30`         | Hankel asymptotic expansion                              |
//!
//! Every scheme returns the pair `(J_ν, J_{ν+1})`, from which the derivative
//! follows through `J_ν' = (ν/x) J_ν − J_{ν+1}`. The second derivative comes
//! from the Bessel ODE `x²y″ + xy′ + (x²−ν²)y = 0`.
//!
//! `I_ν` only ever appears with moderate arguments, so the all-positive power
//! series is used throughout.

use std::f64::consts::PI;

use thiserror::Error;

/// Upper end of the power-series range for `J_ν`.
pub const SERIES_LIMIT: f64 = 8.0;
/// Lower end of the Hankel asymptotic range for `J_ν`.
pub const ASYMPTOTIC_LIMIT: f64 = 30.0;

const MAX_SERIES_TERMS: usize = 2000;
const ZERO_MAX_ITER: usize = 100;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SpecialFunctionError {
    #[error("Bessel order must satisfy 0 < nu <= 1/2, got {0}")]
    InvalidOrder(f64),

    #[error("{function} is not defined at x = {x}")]
    Domain { function: &'static str, x: f64 },

    #[error("zero index must be at least 1")]
    ZeroIndex,

    #[error("zero j_(nu={nu}, n={n}) did not converge after {iterations} iterations (|J| = {residual:e})")]
    ZeroNotConverged {
        nu: f64,
        n: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("no sign change of J_{nu} found near the McMahon estimate {guess} for n = {n}")]
    NoBracket { nu: f64, n: usize, guess: f64 },
}

/// A validated fractional Bessel order `0 < ν ≤ 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct BesselOrder(f64);

impl BesselOrder {
    pub fn new(nu: f64) -> Result<Self, SpecialFunctionError> {
        if nu.is_finite() && nu > 0.0 && nu <= 0.5 {
            Ok(Self(nu))
        } else {
            Err(SpecialFunctionError::InvalidOrder(nu))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// A refined positive zero of `J_ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselZero {
    pub order: BesselOrder,
    pub index: usize,
    pub value: f64,
}

// ---------------------------------------------------------------------------
// Gamma function
// ---------------------------------------------------------------------------

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural logarithm of `|Γ(z)|` by the Lanczos approximation (g = 7, 9 terms),
/// with reflection for `z < 1/2`.
pub fn ln_gamma(z: f64) -> f64 {
    if z < 0.5 {
        // Γ(z)Γ(1−z) = π / sin(πz)
        return (PI / (PI * z).sin().abs()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// `Γ(z)` for real `z`, not a non-positive integer.
pub fn gamma(z: f64) -> f64 {
    if z < 0.5 {
        return PI / ((PI * z).sin() * gamma(1.0 - z));
    }
    let z = z - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
}

/// Digamma function `ψ(x)` for `x > 0`, by upward shift and the asymptotic
/// Bernoulli series.
pub fn digamma(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let tail = inv2
        * (1.0 / 12.0
            - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    shift + x.ln() - 0.5 / x - tail
}

// ---------------------------------------------------------------------------
// J_ν
// ---------------------------------------------------------------------------

/// `(x/2)^μ / Γ(μ+1)` evaluated in log space.
fn leading_power(mu: f64, x: f64) -> f64 {
    (mu * (0.5 * x).ln() - ln_gamma(mu + 1.0)).exp()
}

fn series_j(mu: f64, x: f64) -> f64 {
    if x == 0.0 {
        return if mu == 0.0 { 1.0 } else { 0.0 };
    }
    let q = -0.25 * x * x;
    let mut term = leading_power(mu, x);
    let mut sum = term;
    for m in 1..MAX_SERIES_TERMS {
        let m = m as f64;
        term *= q / (m * (m + mu));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Miller backward recurrence for `(J_ν(x), J_{ν+1}(x))`.
fn miller_j_pair(nu: f64, x: f64) -> (f64, f64) {
    let start = (x + 20.0 + 12.0 * x.cbrt()).ceil() as usize;
    // Even top index so the Neumann sum picks up J_{ν+2k} consistently.
    let top = start + (start % 2);

    // weight(k) = (ν+2k) Γ(ν+k)/k!, with Γ(ν+k)/k! built by the ratio (ν+k−1)/k.
    let mut gamma_ratio = vec![0.0; top / 2 + 1];
    gamma_ratio[0] = gamma(nu);
    for k in 1..=top / 2 {
        gamma_ratio[k] = gamma_ratio[k - 1] * (nu + k as f64 - 1.0) / k as f64;
    }

    let mut upper = 0.0; // y_{μ+1}
    let mut current = 1e-300; // y_μ at μ = ν + top
    let mut neumann = 0.0;
    let mut j_nu1 = 0.0;
    let mut index = top;
    let j_nu = loop {
        if index.is_multiple_of(2) {
            let k = index / 2;
            neumann += (nu + index as f64) * gamma_ratio[k] * current;
        }
        if index == 1 {
            j_nu1 = current;
        }
        if index == 0 {
            break current;
        }
        let mu = nu + index as f64;
        let lower = (2.0 * mu / x) * current - upper;
        upper = current;
        current = lower;
        index -= 1;
        if current.abs() > 1e250 {
            upper *= 1e-250;
            current *= 1e-250;
            neumann *= 1e-250;
            j_nu1 *= 1e-250;
        }
    };
    let scale = (nu * (0.5 * x).ln()).exp() / neumann;
    (j_nu * scale, j_nu1 * scale)
}

/// Hankel expansion returning `(P, Q)` with `J_μ(x) = √(2/(πx)) (P cos χ − Q sin χ)`.
fn hankel_pq(mu: f64, x: f64) -> (f64, f64) {
    let four_mu2 = 4.0 * mu * mu;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term: f64 = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        term *= (four_mu2 - odd * odd) / (k as f64 * 8.0 * x);
        let mag = term.abs();
        if mag > last {
            break;
        }
        last = mag;
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        if mag < 1e-17 {
            break;
        }
    }
    (p, q)
}

fn hankel_j(mu: f64, x: f64) -> f64 {
    let (p, q) = hankel_pq(mu, x);
    let phase = (0.5 * mu + 0.25) * PI;
    // cos(x − phase), sin(x − phase) expanded so the large argument is reduced exactly once.
    let (sx, cx) = x.sin_cos();
    let (sp, cp) = phase.sin_cos();
    let cos_chi = cx * cp + sx * sp;
    let sin_chi = sx * cp - cx * sp;
    (2.0 / (PI * x)).sqrt() * (p * cos_chi - q * sin_chi)
}

/// `(J_ν(x), J_{ν+1}(x))` for `ν ≥ 0`, `x ≥ 0`, switching scheme by argument.
pub(crate) fn j_pair(nu: f64, x: f64) -> (f64, f64) {
    if x <= SERIES_LIMIT {
        (series_j(nu, x), series_j(nu + 1.0, x))
    } else if x < ASYMPTOTIC_LIMIT {
        miller_j_pair(nu, x)
    } else {
        (hankel_j(nu, x), hankel_j(nu + 1.0, x))
    }
}

/// Scheme-selectable evaluation, exposed for switchover-band tests.
#[doc(hidden)]
pub fn j_pair_with(scheme: JScheme, nu: f64, x: f64) -> (f64, f64) {
    match scheme {
        JScheme::Series => (series_j(nu, x), series_j(nu + 1.0, x)),
        JScheme::Miller => miller_j_pair(nu, x),
        JScheme::Hankel => (hankel_j(nu, x), hankel_j(nu + 1.0, x)),
    }
}

#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JScheme {
    Series,
    Miller,
    Hankel,
}

fn check_nonnegative(function: &'static str, x: f64) -> Result<(), SpecialFunctionError> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(SpecialFunctionError::Domain { function, x })
    }
}

/// `J_ν(x)` for `x ≥ 0`.
pub fn bessel_j(order: BesselOrder, x: f64) -> Result<f64, SpecialFunctionError> {
    check_nonnegative("J_nu", x)?;
    Ok(j_pair(order.value(), x).0)
}

/// `J_ν'(x)` for `x ≥ 0`. Diverges like `x^{ν−1}` at the origin, where `+∞` is returned.
pub fn bessel_j_prime(order: BesselOrder, x: f64) -> Result<f64, SpecialFunctionError> {
    check_nonnegative("J_nu'", x)?;
    if x == 0.0 {
        return Ok(f64::INFINITY);
    }
    let nu = order.value();
    let (j, j1) = j_pair(nu, x);
    Ok(nu / x * j - j1)
}

/// `J_ν''(x)` for `x > 0`, from the Bessel ODE.
pub fn bessel_j_second(order: BesselOrder, x: f64) -> Result<f64, SpecialFunctionError> {
    if !(x.is_finite() && x > 0.0) {
        return Err(SpecialFunctionError::Domain {
            function: "J_nu''",
            x,
        });
    }
    let nu = order.value();
    let (j, j1) = j_pair(nu, x);
    let jp = nu / x * j - j1;
    Ok(-jp / x - (1.0 - nu * nu / (x * x)) * j)
}

// ---------------------------------------------------------------------------
// I_ν
// ---------------------------------------------------------------------------

fn series_i(mu: f64, x: f64) -> f64 {
    if x == 0.0 {
        return if mu == 0.0 { 1.0 } else { 0.0 };
    }
    let q = 0.25 * x * x;
    let mut term = leading_power(mu, x);
    let mut sum = term;
    for m in 1..MAX_SERIES_TERMS {
        let m = m as f64;
        term *= q / (m * (m + mu));
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
    }
    sum
}

/// `I_ν(x)` for `x ≥ 0`.
pub fn bessel_i(order: BesselOrder, x: f64) -> Result<f64, SpecialFunctionError> {
    check_nonnegative("I_nu", x)?;
    Ok(series_i(order.value(), x))
}

/// `I_ν'(x) = (ν/x) I_ν(x) + I_{ν+1}(x)` for `x > 0`.
pub fn bessel_i_prime(order: BesselOrder, x: f64) -> Result<f64, SpecialFunctionError> {
    check_nonnegative("I_nu'", x)?;
    if x == 0.0 {
        return Ok(f64::INFINITY);
    }
    let nu = order.value();
    Ok(nu / x * series_i(nu, x) + series_i(nu + 1.0, x))
}

// ---------------------------------------------------------------------------
// Zeros
// ---------------------------------------------------------------------------

/// McMahon estimate `β − (4ν²−1)/(8β)` with `β = π(n + ν/2 − 1/4)`.
pub fn mcmahon_guess(order: BesselOrder, n: usize) -> f64 {
    let nu = order.value();
    let beta = PI * (n as f64 + 0.5 * nu - 0.25);
    beta - (4.0 * nu * nu - 1.0) / (8.0 * beta)
}

/// The `n`-th positive zero of `J_ν`: McMahon seed, sign-change bracket, then
/// Newton steps that fall back to bisection whenever they leave the bracket.
pub fn bessel_zero(order: BesselOrder, n: usize) -> Result<BesselZero, SpecialFunctionError> {
    if n == 0 {
        return Err(SpecialFunctionError::ZeroIndex);
    }
    let nu = order.value();
    let guess = mcmahon_guess(order, n);
    let f = |x: f64| j_pair(nu, x).0;

    // Neighbouring zeros sit roughly π away from the seed, so a half-width below π/2
    // cannot capture two sign changes.
    let mut bracket = None;
    for half_width in [0.3, 0.6, 0.9, 1.2, 1.5] {
        let lo = (guess - half_width).max(1e-3);
        let hi = guess + half_width;
        let (flo, fhi) = (f(lo), f(hi));
        if flo == 0.0 {
            return Ok(BesselZero {
                order,
                index: n,
                value: lo,
            });
        }
        if fhi == 0.0 {
            return Ok(BesselZero {
                order,
                index: n,
                value: hi,
            });
        }
        if flo.signum() != fhi.signum() {
            bracket = Some((lo, hi, flo));
            break;
        }
    }
    let (mut lo, mut hi, flo) = bracket.ok_or(SpecialFunctionError::NoBracket { nu, n, guess })?;
    let lo_sign = flo.signum();

    let mut x = guess.clamp(lo, hi);
    let mut residual = f64::INFINITY;
    for _ in 0..ZERO_MAX_ITER {
        let (j, j1) = j_pair(nu, x);
        residual = j.abs();
        if j == 0.0 {
            return Ok(BesselZero {
                order,
                index: n,
                value: x,
            });
        }
        if j.signum() == lo_sign {
            lo = x;
        } else {
            hi = x;
        }
        let jp = nu / x * j - j1;
        let newton = x - j / jp;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - x).abs();
        x = next;
        if step <= 4.0 * f64::EPSILON * x {
            let residual = f(x).abs();
            if residual <= 1e-12 {
                return Ok(BesselZero {
                    order,
                    index: n,
                    value: x,
                });
            }
        }
        if hi - lo <= 2.0 * f64::EPSILON * x {
            break;
        }
    }
    let final_residual = f(x).abs().min(residual);
    if final_residual <= 1e-12 {
        return Ok(BesselZero {
            order,
            index: n,
            value: x,
        });
    }
    Err(SpecialFunctionError::ZeroNotConverged {
        nu,
        n,
        iterations: ZERO_MAX_ITER,
        residual: final_residual,
    })
}

/// `J_ν(j − ε)/J_ν'(j) + ε` at a zero `j` of `J_ν`, summed from the Taylor
/// expansion of `J_ν` about `j`. Removes the leading `−ε` exactly so that
/// quantities of the form `1 + c·J_ν(j−ε)/J_ν'(j)` with `c·ε ≈ 1` keep full
/// relative precision. Intended for `|ε| ≲ 1`.
///
/// Taylor coefficients `a_m` of `J_ν(j + t)` follow from the ODE:
/// `j²(m+1)(m+2) a_{m+2} = −[j(m+1)(2m+1) a_{m+1} + (m² + j² − ν²) a_m + 2j a_{m−1} + a_{m−2}]`,
/// with `a_0 = 0`.
pub fn zero_offset_remainder(order: BesselOrder, zero: f64, eps: f64) -> f64 {
    let nu = order.value();
    let j = zero;
    let h = -eps;
    // Normalised so a_1 = 1; only ratios a_m / a_1 enter.
    let mut a = [0.0f64; 4]; // a_{m-2}, a_{m-1}, a_m, a_{m+1}
    a[2] = 0.0; // a_0
    a[3] = 1.0; // a_1
    let mut sum = 0.0;
    let mut hpow = h; // h^{m+1}
    let mut m = 0usize;
    loop {
        let mf = m as f64;
        let next = -(j * (mf + 1.0) * (2.0 * mf + 1.0) * a[3]
            + (mf * mf + j * j - nu * nu) * a[2]
            + 2.0 * j * a[1]
            + a[0])
            / (j * j * (mf + 1.0) * (mf + 2.0));
        hpow *= h;
        let term = next * hpow;
        sum += term;
        a = [a[1], a[2], a[3], next];
        m += 1;
        if (term.abs() <= 1e-18 * sum.abs().max(f64::MIN_POSITIVE) && m > 4) || m > 400 {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn half() -> BesselOrder {
        BesselOrder::new(0.5).unwrap()
    }

    fn third() -> BesselOrder {
        BesselOrder::new(1.0 / 3.0).unwrap()
    }

    #[test]
    fn gamma_reference_values() {
        assert_relative_eq!(gamma(0.5), PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(gamma(5.0), 24.0, max_relative = 1e-13);
        for &z in &[0.1, 0.37, 1.2, 3.7, 11.3] {
            assert_relative_eq!(gamma(z + 1.0), z * gamma(z), max_relative = 1e-13);
            assert_relative_eq!(ln_gamma(z), gamma(z).ln(), epsilon = 1e-13);
        }
    }

    #[test]
    fn digamma_reference_values() {
        // ψ(1) = −γ, ψ(1/2) = −γ − 2 ln 2
        let euler = 0.577_215_664_901_532_9;
        assert_relative_eq!(digamma(1.0), -euler, max_relative = 1e-13);
        assert_relative_eq!(digamma(0.5), -euler - 2.0 * 2f64.ln(), max_relative = 1e-13);
        assert_relative_eq!(digamma(101.0) - digamma(100.0), 0.01, max_relative = 1e-12);
    }

    #[test]
    fn order_validation() {
        assert!(BesselOrder::new(0.0).is_err());
        assert!(BesselOrder::new(0.51).is_err());
        assert!(BesselOrder::new(f64::NAN).is_err());
        assert!(BesselOrder::new(0.5).is_ok());
    }

    #[test]
    fn j_half_at_pi_and_half_pi() {
        assert!(bessel_j(half(), PI).unwrap().abs() < 1e-15);
        assert_relative_eq!(
            bessel_j(half(), PI / 2.0).unwrap(),
            2.0 / PI,
            max_relative = 1e-14
        );
    }

    #[test]
    fn j_vanishes_at_origin() {
        assert_eq!(bessel_j(third(), 0.0).unwrap(), 0.0);
        assert_eq!(bessel_i(third(), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn j_prime_half_at_pi() {
        let expected = -(2.0f64).sqrt() / PI;
        let got = bessel_j_prime(half(), PI).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-13);
        let h = 1e-6;
        let fd =
            (bessel_j(half(), PI + h).unwrap() - bessel_j(half(), PI - h).unwrap()) / (2.0 * h);
        assert!((fd - got).abs() < 1e-9);
    }

    #[test]
    fn j_prime_diverges_near_origin() {
        let nu = 1.0 / 3.0;
        let small = [1e-4, 1e-6, 1e-8];
        for &x in &small {
            let jp = bessel_j_prime(third(), x).unwrap();
            // leading term: ν (x/2)^{ν−1} / (2 Γ(ν+1))
            let lead = nu * (0.5 * x).powf(nu - 1.0) / (2.0 * gamma(nu + 1.0));
            assert_relative_eq!(jp, lead, max_relative = 1e-6);
        }
        assert!(bessel_j_prime(third(), 0.0).unwrap().is_infinite());
    }

    #[test]
    fn second_derivative_domain() {
        assert!(bessel_j_second(third(), 0.0).is_err());
        assert!(bessel_j(third(), -1.0).is_err());
        assert!(bessel_i(third(), -0.5).is_err());
    }

    #[test]
    fn second_derivative_at_zero_relation() {
        for n in [1, 5, 40] {
            let z = bessel_zero(third(), n).unwrap().value;
            let jp = bessel_j_prime(third(), z).unwrap();
            let jpp = bessel_j_second(third(), z).unwrap();
            assert!((jpp + jp / z).abs() < 1e-13);
        }
    }

    #[test]
    fn i_half_closed_form() {
        let expected = (2.0 / PI).sqrt() * 1f64.sinh();
        assert_relative_eq!(
            bessel_i(half(), 1.0).unwrap(),
            expected,
            max_relative = 1e-14
        );
    }

    #[test]
    fn zeros_of_half_order_are_multiples_of_pi() {
        for n in 1..=50 {
            let z = bessel_zero(half(), n).unwrap();
            assert_relative_eq!(z.value, n as f64 * PI, max_relative = 1e-14);
        }
    }

    #[test]
    fn first_zero_of_third_order_matches_bisection() {
        // 60 bisections of the power series over [2.5, 3.5].
        let (mut lo, mut hi) = (2.5f64, 3.5f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if series_j(1.0 / 3.0, lo).signum() == series_j(1.0 / 3.0, mid).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        let z = bessel_zero(third(), 1).unwrap().value;
        assert!((z - oracle).abs() < 1e-13, "{z} vs {oracle}");
        assert!((z - 2.9026).abs() < 1e-4);
    }

    #[test]
    fn zero_index_must_be_positive() {
        assert_eq!(
            bessel_zero(third(), 0),
            Err(SpecialFunctionError::ZeroIndex)
        );
    }

    #[test]
    fn taylor_remainder_matches_direct_evaluation() {
        let order = third();
        for n in [1, 3, 10] {
            let z = bessel_zero(order, n).unwrap().value;
            let jp = bessel_j_prime(order, z).unwrap();
            for eps in [1e-3, 0.05, 0.4, 0.9] {
                let direct = bessel_j(order, z - eps).unwrap() / jp + eps;
                let series = zero_offset_remainder(order, z, eps);
                assert!(
                    (direct - series).abs() < 1e-13,
                    "n={n} eps={eps}: {direct} vs {series}"
                );
            }
        }
    }
}
