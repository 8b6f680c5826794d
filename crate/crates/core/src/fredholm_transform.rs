//! Truncated matrix form of the transformation `T f = f − ∫₀¹ k(·, y) f(y) dy`,
//! the feedback functional `K`, and the identity checks that tie them together.
//!
//! In the eigenbasis `T[k][n] = δ_{kn} − ⟨ψ_n, φ_k⟩ = c_n G[k][n]`,
//! `K f = Σ ψ_n(1) a_n` for `f = Σ a_n φ_n`, and the boundary control enters
//! mode `k` with weight `g_k = φ_k'(1)`.
//!
//! Integrating `(x^α u_x)_x φ_k` by parts with `u(1) = U` gives
//! `a_k' = −λ_k a_k − φ_k'(1) U`, so the closed loop is `M = −Λ − g pᵀ`.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;
use thiserror::Error;

use crate::export::write_csv;
use crate::kernel_builder::KernelData;

/// Relative roundoff floor below which residual comparisons are not meaningful.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TransformError {
    #[error("transformation matrix is singular to working precision (smallest singular value {sigma_min:e})")]
    Singular { sigma_min: f64 },
}

/// Assembled truncated transformation. Immutable after [`assemble`].
#[derive(Debug, Clone)]
pub struct TransformSystem {
    /// `T[k][n] = c_n G[k][n]`
    pub t_mat: DMatrix<f64>,
    /// `T⁻¹`, for export and diagnostics
    pub t_inv: DMatrix<f64>,
    /// Invertible part `T̃[k][n] = G[k][n]`
    pub t_tilde: DMatrix<f64>,
    /// Hilbert–Schmidt part `C[k][n] = d_n G[k][n]`
    pub compact: DMatrix<f64>,
    /// Feedback row, `p_n = ψ_n(1)`
    pub p: DVector<f64>,
    /// Control vector, `g_k = φ_k'(1)`
    pub g: DVector<f64>,
    /// Open-loop eigenvalues `λ_k`
    pub lambdas: DVector<f64>,
    /// Target decay rate
    pub lambda: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_min_tilde: f64,
    pub compact_frobenius: f64,
}

/// Builds `T`, `T⁻¹`, `p` and `g` from kernel coefficients.
pub fn assemble(kernel: &KernelData) -> Result<TransformSystem, TransformError> {
    let n = kernel.truncation();
    let gram = &kernel.gram;
    let t_tilde = gram.clone();
    let compact = DMatrix::from_fn(n, n, |k, j| kernel.d[j] * gram[(k, j)]);
    let t_mat = &t_tilde + &compact;

    let sv = t_mat.clone().singular_values();
    let (sigma_min, sigma_max) = (sv.min(), sv.max());
    if !(sigma_min > f64::EPSILON * sigma_max * n as f64) {
        return Err(TransformError::Singular { sigma_min });
    }
    let t_inv = t_mat
        .clone()
        .lu()
        .try_inverse()
        .ok_or(TransformError::Singular { sigma_min })?;

    Ok(TransformSystem {
        sigma_min_tilde: t_tilde.clone().singular_values().min(),
        compact_frobenius: compact.norm(),
        t_inv,
        t_tilde,
        compact,
        t_mat,
        p: DVector::from_vec(kernel.psi1.clone()),
        g: DVector::from_iterator(n, kernel.modes().map(|m| m.boundary_trace)),
        lambdas: DVector::from_iterator(n, kernel.modes().map(|m| m.lambda)),
        lambda: kernel.config.lambda,
        sigma_min,
        sigma_max,
    })
}

/// Summary of the matrix-level identity checks.
#[derive(Debug, Clone, Serialize)]
pub struct TransformSummary {
    pub n_modes: usize,
    pub lambda: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub condition: f64,
    pub sigma_min_tilde: f64,
    pub compact_frobenius: f64,
    pub inverse_residual: f64,
    pub tb_residual_max: f64,
    pub operator_identity_residual: f64,
    pub spectrum_match_error: f64,
}

impl TransformSystem {
    pub fn n_modes(&self) -> usize {
        self.p.len()
    }

    /// `K f = Σ p_n a_n`.
    pub fn apply_k(&self, a: &DVector<f64>) -> f64 {
        self.p.dot(a)
    }

    /// `cond₂(T) = σ_max/σ_min`
    pub fn condition(&self) -> f64 {
        self.sigma_max / self.sigma_min
    }

    /// `max |T T⁻¹ − I|` entrywise.
    pub fn inverse_residual(&self) -> f64 {
        let n = self.n_modes();
        (&self.t_mat * &self.t_inv - DMatrix::<f64>::identity(n, n)).amax()
    }

    /// Relative residuals `r_k/φ_k'(1)` of `Σ_n ⟨ψ_n, φ_k⟩ φ_n'(1) = 0`.
    pub fn tb_residual(&self) -> Vec<f64> {
        // ⟨ψ_n, φ_k⟩ = δ_{kn} − T[k][n]
        let tg = &self.t_mat * &self.g;
        (0..self.n_modes())
            .map(|k| (self.g[k] - tg[k]) / self.g[k])
            .collect()
    }

    /// `M = −Λ − g pᵀ`.
    pub fn closed_loop_matrix(&self) -> DMatrix<f64> {
        let mut m = -(&self.g * self.p.transpose());
        for k in 0..self.n_modes() {
            m[(k, k)] -= self.lambdas[k];
        }
        m
    }

    /// Entrywise `T M − (−Λ − λ) T`.
    pub fn operator_identity_matrix(&self) -> DMatrix<f64> {
        let n = self.n_modes();
        let mut r = &self.t_mat * self.closed_loop_matrix();
        for k in 0..n {
            for j in 0..n {
                r[(k, j)] += (self.lambdas[k] + self.lambda) * self.t_mat[(k, j)];
            }
        }
        r
    }

    /// Frobenius norm of the leading `N/2` block of [`Self::operator_identity_matrix`],
    /// divided by `‖T‖₂ · max_{k ≤ N/2} (λ_k + λ)`.
    pub fn operator_identity_residual(&self) -> f64 {
        let half = (self.n_modes() / 2).max(1);
        let r = self.operator_identity_matrix();
        let block = r.view((0, 0), (half, half));
        let scale = self.sigma_max * (self.lambdas[half - 1] + self.lambda);
        block.norm() / scale
    }

    /// Eigenvalues of `M` sorted by decreasing real part.
    pub fn spectrum(&self) -> Vec<Complex<f64>> {
        let mut ev: Vec<Complex<f64>> = self
            .closed_loop_matrix()
            .complex_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
        ev
    }

    /// Maximum relative distance between the slowest `N/2` eigenvalues of `M`
    /// and `−(λ_k + λ)`, `k ≤ N/2`.
    pub fn spectrum_match_error(&self) -> f64 {
        let half = (self.n_modes() / 2).max(1);
        self.spectrum()
            .iter()
            .take(half)
            .enumerate()
            .map(|(k, ev)| {
                let target = -(self.lambdas[k] + self.lambda);
                (ev - Complex::new(target, 0.0)).norm() / target.abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest violation of `σ_min ≤ ‖T a‖/‖a‖ ≤ σ_max` over `samples` random
    /// vectors, relative to the bound. Zero when every sample complies.
    pub fn norm_equivalence_violation(&self, seed: u64, samples: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.n_modes();
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let a = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let ratio = (&self.t_mat * &a).norm() / a.norm();
            worst = worst
                .max((self.sigma_min - ratio) / self.sigma_min)
                .max((ratio - self.sigma_max) / self.sigma_max);
        }
        worst.max(0.0)
    }

    pub fn summary(&self) -> TransformSummary {
        TransformSummary {
            n_modes: self.n_modes(),
            lambda: self.lambda,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            condition: self.condition(),
            sigma_min_tilde: self.sigma_min_tilde,
            compact_frobenius: self.compact_frobenius,
            inverse_residual: self.inverse_residual(),
            tb_residual_max: self.tb_residual().iter().fold(0.0, |m, r| m.max(r.abs())),
            operator_identity_residual: self.operator_identity_residual(),
            spectrum_match_error: self.spectrum_match_error(),
        }
    }

    /// `T` as rows `k, n, T[k][n]` (1-based indices).
    pub fn write_t_matrix(&self, path: &Path) -> std::io::Result<()> {
        let n = self.n_modes();
        let rows = (0..n).flat_map(|k| (0..n).map(move |j| (k, j)));
        write_csv(
            path,
            &["k", "n", "t"],
            rows.map(|(k, j)| vec![(k + 1) as f64, (j + 1) as f64, self.t_mat[(k, j)]]),
        )
    }

    /// Closed-loop spectrum next to the target values `−(λ_k + λ)`.
    pub fn write_spectrum(&self, path: &Path) -> std::io::Result<()> {
        let lambda = self.lambda;
        write_csv(
            path,
            &["k", "re", "im", "target"],
            self.spectrum()
                .into_iter()
                .zip(self.lambdas.iter())
                .enumerate()
                .map(|(k, (ev, lk))| vec![(k + 1) as f64, ev.re, ev.im, -(lk + lambda)]),
        )
    }

    /// Per-mode residual vectors: relative TB residual, row norms of the
    /// operator-identity residual, and the feedback row.
    pub fn write_residuals(&self, path: &Path) -> std::io::Result<()> {
        let tb = self.tb_residual();
        let op = self.operator_identity_matrix();
        write_csv(
            path,
            &["k", "tb_relative", "operator_identity_row", "p"],
            (0..self.n_modes()).map(|k| vec![(k + 1) as f64, tb[k], op.row(k).norm(), self.p[k]]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_builder::{build_kernel, DecayConfig, TailClosure};
    use crate::spectral_basis::DegenerateParams;

    fn system(alpha: f64, lambda: f64, n: usize) -> TransformSystem {
        let p = DegenerateParams::new(alpha).unwrap();
        let config = if lambda == 0.0 {
            DecayConfig::new(0.0, 0.0).unwrap()
        } else {
            DecayConfig::with_default_margin(lambda).unwrap()
        };
        let (_, data) = build_kernel(&p, &config, n, TailClosure::Truncated).unwrap();
        assemble(&data).unwrap()
    }

    #[test]
    fn zero_lambda_is_identity() {
        let sys = system(0.5, 0.0, 16);
        assert!((&sys.t_mat - DMatrix::<f64>::identity(16, 16)).amax() == 0.0);
        assert!(sys.p.amax() < 1e-10);
        assert!(sys.tb_residual().iter().all(|r| *r == 0.0));
        assert_eq!(sys.apply_k(&DVector::zeros(16)), 0.0);
    }

    #[test]
    fn fredholm_split_adds_up() {
        let sys = system(0.5, 5.0, 32);
        assert!((&sys.t_tilde + &sys.compact - &sys.t_mat).amax() < 1e-15);
        assert!(sys.sigma_min_tilde > 0.0);
        assert!(sys.compact_frobenius.is_finite());
        assert!(sys.inverse_residual() < 1e-10 * 32.0);
    }

    #[test]
    fn closed_loop_trace_is_rank_one_update() {
        let sys = system(0.25, 20.0, 24);
        let m = sys.closed_loop_matrix();
        let expected: f64 = -sys.lambdas.sum() - sys.g.dot(&sys.p);
        assert!((m.trace() - expected).abs() < 1e-9 * expected.abs());
    }

    #[test]
    fn identities_hold_at_truncation() {
        let sys = system(0.5, 5.0, 32);
        assert!(sys.tb_residual().iter().all(|r| r.abs() < 1e-8));
        assert!(sys.operator_identity_residual() < 1e-6);
        assert!(sys.spectrum_match_error() < 1e-3);
        assert_eq!(sys.norm_equivalence_violation(7, 64), 0.0);
    }

    #[test]
    fn feedback_obeys_cauchy_schwarz() {
        let sys = system(0.5, 5.0, 16);
        let a = DVector::from_fn(16, |i, _| 1.0 / (i + 1) as f64);
        assert!(sys.apply_k(&a).abs() <= sys.p.norm() * a.norm());
    }
}
