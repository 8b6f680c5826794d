//! Modal construction of the backstepping kernel
//! `k(x, y) = Σ_n ψ_n(x) φ_n(y)` with `ψ_n = φ_n − c_n ξ̃_n`.
//!
//! `ξ̃_n` solves `(x^α ξ')' + (λ_n − λ) ξ = 0` with `ξ(0) = 0` and the same
//! normalisation as `φ_n`:
//!
//! ```text
//! ξ̃_n(x) = √(2κ)/J_ν'(j_{ν,n}) · x^{(1−α)/2} J_ν(s_n x^κ),   s_n = √(λ_n − λ)/κ   (λ_n > λ)
//! ξ̃_n(x) = √(2κ)/J_ν'(j_{ν,n}) · x^{(1−α)/2} I_ν(t_n x^κ),   t_n = √(λ − λ_n)/κ   (λ_n < λ)
//! ```
//!
//! Writing `B_n` for the boundary value `J_ν(s_n)` (resp. `I_ν(t_n)`), the
//! Lommel integral gives the closed-form Gram entries
//!
//! ```text
//! G[k][n] = ⟨ξ̃_n, φ_k⟩ = −2κ² j_{ν,k} B_n / ((λ_k − λ_n + λ) J_ν'(j_{ν,n})),
//! ```
//!
//! identical on both branches. The coefficients `c_n = 1 + d_n` are fixed by
//! the modal boundary identity `Σ_n φ_n'(1) c_n G[k][n] = φ_k'(1)` for every `k`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::export::write_csv;
use crate::special_functions::{bessel_i_prime, digamma, j_pair, zero_offset_remainder};
use crate::spectral_basis::{build_modes, DegenerateParams, EigenMode, SpectralError};

/// Passive modes used by [`TailClosure::Asymptotic`] unless overridden.
pub const DEFAULT_PASSIVE_MODES: usize = 2000;
/// Systems with a 2-norm condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum KernelError {
    #[error(transparent)]
    Resonance(#[from] Resonance),

    #[error(transparent)]
    Spectral(#[from] SpectralError),

    #[error("target decay rate must be finite and nonnegative, got {0}")]
    InvalidLambda(f64),

    #[error("resonance margin must be finite and nonnegative, got {0}")]
    InvalidMargin(f64),

    #[error("kernel functions are evaluated on (0, 1], got x = {0}")]
    OutsideInterval(f64),

    #[error("coefficient system is ill-conditioned (condition number {condition:e}); increase the truncation or move lambda away from resonance")]
    IllConditioned { condition: f64 },

    #[error("tail closure needs {needed} modes but only {available} were supplied")]
    InsufficientModes { needed: usize, available: usize },
}

/// Target decay rate and the minimum distance kept from resonant values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayConfig {
    pub lambda: f64,
    pub resonance_margin: f64,
}

impl DecayConfig {
    pub fn new(lambda: f64, resonance_margin: f64) -> Result<Self, KernelError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(KernelError::InvalidLambda(lambda));
        }
        if !(resonance_margin.is_finite() && resonance_margin >= 0.0) {
            return Err(KernelError::InvalidMargin(resonance_margin));
        }
        Ok(Self {
            lambda,
            resonance_margin,
        })
    }

    /// Margin `1e-6·λ`.
    pub fn with_default_margin(lambda: f64) -> Result<Self, KernelError> {
        Self::new(lambda, 1e-6 * lambda)
    }
}

// ---------------------------------------------------------------------------
// Non-resonance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResonantValue {
    /// `λ = λ_n`
    Eigenvalue { n: usize },
    /// `λ = λ_n − λ_k`: the Gram denominator `λ_k − λ_n + λ` vanishes.
    Difference { n: usize, k: usize },
    /// `λ = λ_n + λ_k`
    Sum { n: usize, k: usize },
}

impl std::fmt::Display for ResonantValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Eigenvalue { n } => write!(f, "lambda_{n}"),
            Self::Difference { n, k } => write!(f, "lambda_{n} - lambda_{k}"),
            Self::Sum { n, k } => write!(f, "lambda_{n} + lambda_{k}"),
        }
    }
}

/// A failed non-resonance check.
#[derive(Error, Debug, Clone, PartialEq, Serialize)]
#[error("lambda = {lambda} is resonant with {value} (distance {distance:e}); try lambda = {suggested_lambda}")]
pub struct Resonance {
    pub lambda: f64,
    pub value: ResonantValue,
    pub distance: f64,
    pub suggested_lambda: f64,
}

/// Outcome of a passed non-resonance check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonresonanceReport {
    pub checked_modes: usize,
    pub closest: ResonantValue,
    pub margin: f64,
}

/// Mode count needed to cover every resonant value near `λ` for a truncation `n`.
pub fn nonresonance_check_range(params: &DegenerateParams, lambda: f64, n: usize) -> usize {
    // Consecutive gaps λ_{n+1} − λ_n ≈ 2κ²π² n exceed λ beyond this index.
    let gap_index = (lambda / (2.0 * params.kappa.powi(2) * PI * PI)).ceil() as usize + 2;
    (n + lambda.sqrt().ceil() as usize).max(gap_index)
}

fn resonant_values(modes: &[EigenMode]) -> Vec<(f64, ResonantValue)> {
    let mut values = Vec::with_capacity(modes.len() * modes.len());
    for m in modes {
        values.push((m.lambda, ResonantValue::Eigenvalue { n: m.n }));
    }
    for a in modes {
        for b in modes {
            if a.n > b.n {
                values.push((
                    a.lambda - b.lambda,
                    ResonantValue::Difference { n: a.n, k: b.n },
                ));
            }
            if a.n >= b.n {
                values.push((a.lambda + b.lambda, ResonantValue::Sum { n: a.n, k: b.n }));
            }
        }
    }
    values
}

fn resonance_threshold(margin: f64, lambda: f64, value: f64) -> f64 {
    // A zero margin still rejects values equal up to rounding.
    margin.max(64.0 * f64::EPSILON * lambda.abs().max(value.abs()))
}

/// Checks `λ ≠ λ_n`, `λ ≠ λ_n − λ_k` and `λ ≠ λ_n + λ_k` for all supplied modes,
/// each with at least `resonance_margin` of clearance.
///
/// On failure the error carries the offending value and the nearest `λ` that
/// passes the same check.
pub fn check_nonresonance(
    modes: &[EigenMode],
    config: &DecayConfig,
) -> Result<NonresonanceReport, Resonance> {
    let lambda = config.lambda;
    let values = resonant_values(modes);
    let mut closest: Option<(f64, ResonantValue)> = None;
    for &(value, kind) in &values {
        let distance = (lambda - value).abs();
        if distance <= resonance_threshold(config.resonance_margin, lambda, value) {
            return Err(Resonance {
                lambda,
                value: kind,
                distance,
                suggested_lambda: suggest_perturbation(&values, lambda, config.resonance_margin),
            });
        }
        if closest.is_none_or(|(d, _)| distance < d) {
            closest = Some((distance, kind));
        }
    }
    let (margin, closest) = closest.expect("at least one mode");
    Ok(NonresonanceReport {
        checked_modes: modes.len(),
        closest,
        margin,
    })
}

/// Smallest perturbation of `λ` (either direction) that clears every resonant value.
fn suggest_perturbation(values: &[(f64, ResonantValue)], lambda: f64, margin: f64) -> f64 {
    let clear = |candidate: f64| {
        values
            .iter()
            .all(|&(v, _)| (candidate - v).abs() > resonance_threshold(margin, candidate, v))
    };
    let step = margin.max(1e-9 * lambda.abs().max(1.0));
    let mut candidates: Vec<f64> = values
        .iter()
        .filter(|(v, _)| (lambda - v).abs() <= 4.0 * step + 1e-12 * lambda.abs())
        .flat_map(|&(v, _)| [v + 2.0 * step, v - 2.0 * step])
        .filter(|c| *c > 0.0)
        .collect();
    candidates.sort_by(|a, b| (a - lambda).abs().total_cmp(&(b - lambda).abs()));
    candidates
        .into_iter()
        .find(|&c| clear(c))
        .unwrap_or(lambda + 4.0 * step)
}

// ---------------------------------------------------------------------------
// ξ̃_n
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `λ_n > λ`, Bessel `J_ν`
    Oscillatory,
    /// `λ_n < λ`, modified Bessel `I_ν`
    Modified,
}

/// Per-mode data for `ξ̃_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiTilde {
    pub mode: EigenMode,
    pub branch: Branch,
    /// `s_n` or `t_n`
    pub arg: f64,
    /// `B_n = J_ν(s_n)` or `I_ν(t_n)`
    pub boundary: f64,
    /// `J_ν'(s_n)` or `I_ν'(t_n)`
    pub boundary_slope: f64,
    /// `ε_n = j_{ν,n} − s_n` on the oscillatory branch
    pub eps: Option<f64>,
}

impl XiTilde {
    pub fn new(mode: &EigenMode, params: &DegenerateParams, config: &DecayConfig) -> Self {
        let lambda = config.lambda;
        let kappa = params.kappa;
        let order = params.order();
        if mode.lambda > lambda {
            let arg = (mode.lambda - lambda).sqrt() / kappa;
            let (j, j1) = j_pair(params.nu, arg);
            Self {
                mode: *mode,
                branch: Branch::Oscillatory,
                arg,
                boundary: j,
                boundary_slope: params.nu / arg * j - j1,
                // j − s = (j² − s²)/(j + s) = (λ/κ²)/(j + s)
                eps: Some(lambda / (kappa * kappa) / (mode.zero + arg)),
            }
        } else {
            let arg = (lambda - mode.lambda).sqrt() / kappa;
            Self {
                mode: *mode,
                branch: Branch::Modified,
                arg,
                boundary: crate::special_functions::bessel_i(order, arg)
                    .expect("nonnegative argument"),
                boundary_slope: bessel_i_prime(order, arg).expect("nonnegative argument"),
                eps: None,
            }
        }
    }

    /// `ξ̃_n(x)` without domain checks.
    pub fn eval(&self, params: &DegenerateParams, x: f64) -> f64 {
        let y = x.powf(params.kappa);
        let bessel = match self.branch {
            Branch::Oscillatory => j_pair(params.nu, self.arg * y).0,
            Branch::Modified => crate::special_functions::bessel_i(params.order(), self.arg * y)
                .expect("nonnegative argument"),
        };
        params.norm_factor() / self.mode.jprime * x.powf(0.5 * (1.0 - params.alpha)) * bessel
    }

    /// `β_n = ξ̃_n(1)`, signed with `J_ν'(j_{ν,n})`.
    pub fn beta(&self, params: &DegenerateParams) -> f64 {
        params.norm_factor() * self.boundary / self.mode.jprime
    }

    /// `‖ξ̃_n‖²_{L²}` from the Lommel integral `∫₀¹ y B(ay)² dy`.
    pub fn norm_squared(&self, params: &DegenerateParams) -> f64 {
        let nu2 = params.nu * params.nu;
        let a = self.arg;
        let (b, db) = (self.boundary, self.boundary_slope);
        let lommel = match self.branch {
            Branch::Oscillatory => (1.0 - nu2 / (a * a)) * b * b + db * db,
            Branch::Modified => (1.0 + nu2 / (a * a)) * b * b - db * db,
        };
        lommel / (self.mode.jprime * self.mode.jprime)
    }

    /// `1 − ⟨ξ̃_n, φ_n⟩`, evaluated without cancellation on the oscillatory branch.
    pub fn diagonal_defect(&self, params: &DegenerateParams, config: &DecayConfig) -> f64 {
        let lambda = config.lambda;
        if lambda == 0.0 {
            return 0.0;
        }
        let scale = 2.0 * params.kappa.powi(2) * self.mode.zero / lambda;
        match self.eps {
            Some(eps) if eps <= 1.0 => {
                // B_n/J'(j) = −ε + R with the Taylor remainder R, and
                // 1 − scale·ε = −ε/(2j − ε) since ε(2j − ε) = λ/κ².
                let remainder = zero_offset_remainder(params.order(), self.mode.zero, eps);
                -eps / (2.0 * self.mode.zero - eps) + scale * remainder
            }
            _ => 1.0 + scale * self.boundary / self.mode.jprime,
        }
    }
}

/// `ξ̃_n(x)` with the domain check `0 < x ≤ 1`.
pub fn xi_tilde_eval(
    mode: &EigenMode,
    params: &DegenerateParams,
    config: &DecayConfig,
    x: f64,
) -> Result<f64, KernelError> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(KernelError::OutsideInterval(x));
    }
    Ok(XiTilde::new(mode, params, config).eval(params, x))
}

/// `ε_n = j_{ν,n} − √(λ_n − λ)/κ`; absent when `λ_n < λ`.
pub fn epsilon_n(mode: &EigenMode, params: &DegenerateParams, config: &DecayConfig) -> Option<f64> {
    XiTilde::new(mode, params, config).eps
}

// ---------------------------------------------------------------------------
// Gram entries
// ---------------------------------------------------------------------------

fn gram_denominator(
    row: &EigenMode,
    col: &EigenMode,
    config: &DecayConfig,
) -> Result<f64, KernelError> {
    let denom = row.lambda - col.lambda + config.lambda;
    let threshold = resonance_threshold(
        config.resonance_margin,
        config.lambda,
        col.lambda - row.lambda,
    );
    if row.n != col.n && denom.abs() <= threshold {
        return Err(Resonance {
            lambda: config.lambda,
            value: ResonantValue::Difference { n: col.n, k: row.n },
            distance: denom.abs(),
            suggested_lambda: config.lambda + 2.0 * threshold.max(1e-9),
        }
        .into());
    }
    Ok(denom)
}

/// Closed-form `G[k][n] = ⟨ξ̃_n, φ_k⟩` for precomputed `ξ̃_n`.
pub fn gram_value(
    row: &EigenMode,
    xi: &XiTilde,
    params: &DegenerateParams,
    config: &DecayConfig,
) -> Result<f64, KernelError> {
    if config.lambda == 0.0 {
        return Ok(if row.n == xi.mode.n { 1.0 } else { 0.0 });
    }
    if row.n == xi.mode.n {
        return Ok(1.0 - xi.diagonal_defect(params, config));
    }
    let denom = gram_denominator(row, &xi.mode, config)?;
    Ok(-2.0 * params.kappa.powi(2) * row.zero * xi.boundary / (denom * xi.mode.jprime))
}

/// `G[k][n] = ⟨ξ̃_n, φ_k⟩` for modes numbered from 1.
pub fn gram_entry(
    n: usize,
    k: usize,
    modes: &[EigenMode],
    params: &DegenerateParams,
    config: &DecayConfig,
) -> Result<f64, KernelError> {
    let available = modes.len();
    let lookup = |i: usize| {
        modes
            .get(i.wrapping_sub(1))
            .ok_or(KernelError::InsufficientModes {
                needed: i,
                available,
            })
    };
    let (col, row) = (lookup(n)?, lookup(k)?);
    gram_value(row, &XiTilde::new(col, params, config), params, config)
}

/// Gram block with rows `k ∈ rows` and columns given by `xis`.
pub fn gram_block(
    rows: &[EigenMode],
    xis: &[XiTilde],
    params: &DegenerateParams,
    config: &DecayConfig,
) -> Result<DMatrix<f64>, KernelError> {
    let mut g = DMatrix::zeros(rows.len(), xis.len());
    for (c, xi) in xis.iter().enumerate() {
        for (r, row) in rows.iter().enumerate() {
            g[(r, c)] = gram_value(row, xi, params, config)?;
        }
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Coefficient system
// ---------------------------------------------------------------------------

/// How the modes beyond the truncation `N` enter the coefficient system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailClosure {
    /// Only modes `n ≤ N` exist. The truncated identity holds exactly, which is
    /// the consistent choice for an `N`-mode feedback realisation.
    Truncated,
    /// Modes `N < n ≤ passive_modes` enter with `d_n = D/n²`, `D` tied to the mean
    /// of `n² d_n` over the last quarter of active modes, and the remaining infinite
    /// tail is summed asymptotically. Approximates the untruncated coefficients.
    Asymptotic { passive_modes: usize },
}

/// Kernel coefficients at truncation `N`.
#[derive(Debug, Clone)]
pub struct KernelData {
    pub params: DegenerateParams,
    pub config: DecayConfig,
    pub closure: TailClosure,
    pub xi: Vec<XiTilde>,
    pub eps: Vec<Option<f64>>,
    pub beta: Vec<f64>,
    pub d: Vec<f64>,
    pub c: Vec<f64>,
    pub psi1: Vec<f64>,
    /// `G[k][n] = ⟨ξ̃_n, φ_k⟩`, `k, n ≤ N`
    pub gram: DMatrix<f64>,
    /// `D` in `d_n ≈ D/n²` for the asymptotic closure
    pub tail_amplitude: Option<f64>,
    /// 2-norm condition number of the solved system
    pub condition: f64,
}

impl KernelData {
    pub fn truncation(&self) -> usize {
        self.d.len()
    }

    pub fn modes(&self) -> impl Iterator<Item = &EigenMode> {
        self.xi.iter().map(|x| &x.mode)
    }

    /// `Σ_{n > N/2} d_n²`
    pub fn tail_norm(&self) -> f64 {
        let n = self.truncation();
        self.d[n / 2..].iter().map(|d| d * d).sum()
    }

    /// `ψ_n(x) = φ_n(x) − c_n ξ̃_n(x)` for `n` numbered from 1.
    pub fn psi(&self, n: usize, x: f64) -> f64 {
        let xi = &self.xi[n - 1];
        xi.mode.phi(&self.params, x) - self.c[n - 1] * xi.eval(&self.params, x)
    }

    /// `‖φ_n − ξ̃_n‖²`
    pub fn closeness(&self, n: usize) -> f64 {
        let xi = &self.xi[n - 1];
        let defect = xi.diagonal_defect(&self.params, &self.config);
        // 1 − 2G_nn + ‖ξ̃‖² = 2·defect + (‖ξ̃‖² − 1)
        2.0 * defect + (xi.norm_squared(&self.params) - 1.0)
    }

    /// `‖ψ_n‖² = 1 − 2 c_n G_nn + c_n² ‖ξ̃_n‖²`
    pub fn psi_norm_squared(&self, n: usize) -> f64 {
        let xi = &self.xi[n - 1];
        let c = self.c[n - 1];
        let g = 1.0 - xi.diagonal_defect(&self.params, &self.config);
        1.0 - 2.0 * c * g + c * c * xi.norm_squared(&self.params)
    }

    /// Partial sums of `‖ψ_n‖²`; the last entry approximates `‖k‖²_{L²((0,1)²)}`.
    pub fn kernel_norm_partial_sums(&self) -> Vec<f64> {
        (1..=self.truncation())
            .scan(0.0, |acc, n| {
                *acc += self.psi_norm_squared(n);
                Some(*acc)
            })
            .collect()
    }

    /// `k(x, y) = Σ_{n ≤ N} ψ_n(x) φ_n(y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (1..=self.truncation())
            .map(|n| self.psi(n, x) * self.xi[n - 1].mode.phi(&self.params, y))
            .sum()
    }

    /// `‖ψ_N‖`, the size of the last retained term (`‖φ_N‖ = 1`).
    pub fn truncation_indicator(&self) -> f64 {
        self.psi_norm_squared(self.truncation()).max(0.0).sqrt()
    }
}

impl KernelData {
    /// Per-mode table `n, eps_n, beta_n, d_n, c_n, psi1_n`; `eps_n` is NaN on
    /// the modified branch.
    pub fn write_mode_table(&self, path: &Path) -> std::io::Result<()> {
        write_csv(
            path,
            &["n", "eps_n", "beta_n", "d_n", "c_n", "psi1_n"],
            (0..self.truncation()).map(|i| {
                vec![
                    (i + 1) as f64,
                    self.eps[i].unwrap_or(f64::NAN),
                    self.beta[i],
                    self.d[i],
                    self.c[i],
                    self.psi1[i],
                ]
            }),
        )
    }

    /// `k(x, y)` on the grid `x, y ∈ {1/points, 2/points, …, 1}`.
    pub fn write_kernel_grid(&self, path: &Path, points: usize) -> std::io::Result<()> {
        let grid: Vec<f64> = (1..=points).map(|i| i as f64 / points as f64).collect();
        let n = self.truncation();
        let psi: Vec<Vec<f64>> = grid
            .iter()
            .map(|&x| (1..=n).map(|k| self.psi(k, x)).collect())
            .collect();
        let phi: Vec<Vec<f64>> = grid
            .iter()
            .map(|&y| self.modes().map(|m| m.phi(&self.params, y)).collect())
            .collect();
        let rows = (0..points).flat_map(|i| (0..points).map(move |j| (i, j)));
        write_csv(
            path,
            &["x", "y", "k"],
            rows.map(|(i, j)| {
                let k: f64 = psi[i].iter().zip(&phi[j]).map(|(a, b)| a * b).sum();
                vec![grid[i], grid[j], k]
            }),
        )
    }
}

/// `k(x, y)` for `x, y ∈ (0, 1]`.
pub fn kernel_eval(data: &KernelData, x: f64, y: f64) -> Result<f64, KernelError> {
    for v in [x, y] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(KernelError::OutsideInterval(v));
        }
    }
    Ok(data.eval(x, y))
}

fn lu_solve_refined(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DVector<f64>, f64), KernelError> {
    let sv = a.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(condition <= MAX_CONDITION) {
        return Err(KernelError::IllConditioned { condition });
    }
    let lu = a.clone().lu();
    let mut x = lu
        .solve(b)
        .ok_or(KernelError::IllConditioned { condition })?;
    let residual = b - a * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    Ok((x, condition))
}

/// Asymptotic value of `Σ_{n > M} φ_n'(1) G[k][n] / φ_k'(1)`.
///
/// For large `n`, `φ_n'(1) G[k][n] = φ_k'(1) λ G_nn / (λ_k − λ_n + λ)` with
/// `G_nn → 1` and `λ_n ≈ κ²π²(n + c)² − κ²(4ν² − 1)/4`, `c = ν/2 − 1/4`; the
/// partial-fraction sum is closed by digamma differences.
fn far_tail_ratio(params: &DegenerateParams, lambda: f64, row_lambda: f64, passive: usize) -> f64 {
    let (nu, kappa) = (params.nu, params.kappa);
    let shift = 0.5 * nu - 0.25;
    let scale = kappa * kappa * PI * PI;
    let a2 = (row_lambda + lambda + kappa * kappa * (4.0 * nu * nu - 1.0) / 4.0) / scale;
    let x = passive as f64 + 1.0 + shift;
    let sum = if a2 > 1e-12 {
        let a = a2.sqrt();
        (digamma(x + a) - digamma(x - a)) / (2.0 * a)
    } else {
        // ψ'(x) ≈ 1/x + 1/(2x²) + 1/(6x³)
        1.0 / x + 0.5 / (x * x) + 1.0 / (6.0 * x * x * x)
    };
    -lambda / scale * sum
}

/// Solves for `d_n` (`c_n = 1 + d_n`) at truncation `N = gram.nrows()`.
///
/// `modes` must hold at least `N` modes, and `passive_modes` modes for the
/// asymptotic closure.
pub fn solve_coefficients(
    modes: &[EigenMode],
    gram: &DMatrix<f64>,
    params: &DegenerateParams,
    config: &DecayConfig,
    closure: TailClosure,
) -> Result<KernelData, KernelError> {
    let n = gram.nrows();
    if modes.len() < n {
        return Err(KernelError::InsufficientModes {
            needed: n,
            available: modes.len(),
        });
    }
    let xi: Vec<XiTilde> = modes[..n]
        .iter()
        .map(|m| XiTilde::new(m, params, config))
        .collect();
    let traces: Vec<f64> = modes[..n].iter().map(|m| m.boundary_trace).collect();

    let (d, tail_amplitude, condition) = if config.lambda == 0.0 {
        (vec![0.0; n], None, 1.0)
    } else {
        match closure {
            TailClosure::Truncated => {
                let a = DMatrix::from_fn(n, n, |k, j| gram[(k, j)] * traces[j]);
                let rhs = DVector::from_fn(n, |k, _| {
                    traces[k] - (0..n).map(|j| traces[j] * gram[(k, j)]).sum::<f64>()
                });
                let (sol, cond) = lu_solve_refined(&a, &rhs)?;
                (sol.iter().copied().collect(), None, cond)
            }
            TailClosure::Asymptotic { passive_modes } => {
                if passive_modes <= n {
                    return Err(KernelError::InsufficientModes {
                        needed: n + 1,
                        available: passive_modes,
                    });
                }
                if modes.len() < passive_modes {
                    return Err(KernelError::InsufficientModes {
                        needed: passive_modes,
                        available: modes.len(),
                    });
                }
                let passive_xi: Vec<XiTilde> = modes[n..passive_modes]
                    .iter()
                    .map(|m| XiTilde::new(m, params, config))
                    .collect();
                let passive_gram = gram_block(&modes[..n], &passive_xi, params, config)?;
                let passive_traces: Vec<f64> = modes[n..passive_modes]
                    .iter()
                    .map(|m| m.boundary_trace)
                    .collect();

                let mut a = DMatrix::zeros(n + 1, n + 1);
                let mut rhs = DVector::zeros(n + 1);
                for k in 0..n {
                    for j in 0..n {
                        a[(k, j)] = gram[(k, j)] * traces[j];
                    }
                    let mut passive_sum = 0.0;
                    let mut tail_column = 0.0;
                    for (j, &g) in passive_traces.iter().enumerate() {
                        let idx = (n + j + 1) as f64;
                        let term = g * passive_gram[(k, j)];
                        passive_sum += term;
                        tail_column += term / (idx * idx);
                    }
                    a[(k, n)] = tail_column;
                    let active_sum: f64 = (0..n).map(|j| traces[j] * gram[(k, j)]).sum();
                    let far = traces[k]
                        * far_tail_ratio(params, config.lambda, modes[k].lambda, passive_modes);
                    rhs[k] = traces[k] - active_sum - passive_sum - far;
                }
                let quarter = (n / 4).max(1);
                a[(n, n)] = 1.0;
                for j in n - quarter..n {
                    let idx = (j + 1) as f64;
                    a[(n, j)] = -idx * idx / quarter as f64;
                }
                let (sol, cond) = lu_solve_refined(&a, &rhs)?;
                (sol.iter().take(n).copied().collect(), Some(sol[n]), cond)
            }
        }
    };

    let c: Vec<f64> = d.iter().map(|d| 1.0 + d).collect();
    let beta: Vec<f64> = xi.iter().map(|x| x.beta(params)).collect();
    let psi1 = c.iter().zip(&beta).map(|(c, b)| -c * b).collect();
    Ok(KernelData {
        params: *params,
        config: *config,
        closure,
        eps: xi.iter().map(|x| x.eps).collect(),
        xi,
        beta,
        d,
        c,
        psi1,
        gram: gram.clone(),
        tail_amplitude,
        condition,
    })
}

/// Modes, non-resonance check, Gram matrix and coefficients in one call.
///
/// `λ = 0` skips the non-resonance check (the kernel vanishes identically).
pub fn build_kernel(
    params: &DegenerateParams,
    config: &DecayConfig,
    truncation: usize,
    closure: TailClosure,
) -> Result<(Vec<EigenMode>, KernelData), KernelError> {
    let check_range = nonresonance_check_range(params, config.lambda, truncation);
    let needed = match closure {
        TailClosure::Truncated => check_range,
        TailClosure::Asymptotic { passive_modes } => check_range.max(passive_modes),
    };
    let modes = build_modes(params, needed)?;
    if config.lambda > 0.0 {
        check_nonresonance(&modes[..check_range], config)?;
    }
    let xis: Vec<XiTilde> = modes[..truncation]
        .iter()
        .map(|m| XiTilde::new(m, params, config))
        .collect();
    let gram = gram_block(&modes[..truncation], &xis, params, config)?;
    let data = solve_coefficients(&modes, &gram, params, config, closure)?;
    Ok((modes, data))
}
