//! Composite Gauss–Legendre quadrature on `(0, 1)` after the substitution
//! `y = x^κ`.
//!
//! Eigenfunctions of the degenerate operator behave like `x^{(1−α)/2} J_ν(c x^κ)`.
//! In the variable `y` the Bessel factor oscillates with constant frequency `c`,
//! and the product of two such functions times the Jacobian is `y J_ν(c y) J_ν(c' y)`,
//! which is smooth. Other integrands keep mild power singularities at the
//! origin; geometric grading of the first panel handles those.

use thiserror::Error;

/// Gauss–Legendre points per panel.
pub const GAUSS_POINTS: usize = 20;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum QuadratureError {
    #[error(
        "quadrature did not converge: successive refinements differ by {difference:e} (tolerance {tolerance:e}) at {panels} panels"
    )]
    NotConverged {
        difference: f64,
        tolerance: f64,
        panels: usize,
    },
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// A fixed quadrature rule in `x ∈ (0, 1)`: `∫₀¹ f dx ≈ Σ wᵢ f(xᵢ)`.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Rule built in `y = x^κ`: `panels` uniform panels on `[0, 1]`, with the
    /// first one further split geometrically towards `y = 0`.
    pub fn graded(kappa: f64, panels: usize) -> Self {
        let (gl_nodes, gl_weights) = gauss_legendre(GAUSS_POINTS);
        let h = 1.0 / panels as f64;
        let mut breaks = Vec::new();
        // Geometric grading of [0, h] with ratio 0.15 down to ~1e-14.
        let mut edge = h;
        let mut inner = vec![h];
        while edge > 1e-14 {
            edge *= 0.15;
            inner.push(edge);
        }
        inner.push(0.0);
        inner.reverse();
        breaks.extend(inner);
        for i in 2..=panels {
            breaks.push(i as f64 * h);
        }

        let inv_kappa = 1.0 / kappa;
        let mut nodes = Vec::with_capacity(breaks.len() * GAUSS_POINTS);
        let mut weights = Vec::with_capacity(breaks.len() * GAUSS_POINTS);
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (t, wt) in gl_nodes.iter().zip(&gl_weights) {
                let y = mid + half * t;
                // x = y^{1/κ}, dx = (1/κ) y^{1/κ − 1} dy
                let x = y.powf(inv_kappa);
                nodes.push(x);
                weights.push(wt * half * inv_kappa * y.powf(inv_kappa - 1.0));
            }
        }
        Self { nodes, weights }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// `Σ wᵢ uᵢ vᵢ` for function values already sampled on the nodes.
    pub fn dot(&self, u: &[f64], v: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(u.iter().zip(v))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }
}

/// Self-checking inner product `∫₀¹ f g dx`: evaluates on `panels` and
/// `2·panels` and accepts once the two agree to `tolerance` (absolute,
/// scaled by `max(1, ∫|fg|)`), doubling up to `max_panels`.
#[derive(Debug, Clone)]
pub struct InnerProduct {
    kappa: f64,
    pub initial_panels: usize,
    pub max_panels: usize,
    pub tolerance: f64,
}

impl InnerProduct {
    pub fn new(kappa: f64) -> Self {
        Self {
            kappa,
            initial_panels: 16,
            max_panels: 1024,
            tolerance: 1e-10,
        }
    }

    /// Smallest panel count (from the doubling ladder) that resolves
    /// oscillations with `y`-frequency up to `omega`.
    pub fn panels_for_frequency(&self, omega: f64) -> usize {
        let mut panels = self.initial_panels;
        // 20-point rule per panel: keep about a half-wavelength or less per panel.
        while (panels as f64) < omega / 2.0 && panels < self.max_panels {
            panels *= 2;
        }
        panels
    }

    pub fn rule(&self, panels: usize) -> Rule {
        Rule::graded(self.kappa, panels)
    }

    pub fn integrate<F, G>(&self, f: F, g: G) -> Result<f64, QuadratureError>
    where
        F: Fn(f64) -> f64,
        G: Fn(f64) -> f64,
    {
        self.integrate_from(self.initial_panels, |x| f(x) * g(x))
    }

    pub fn integrate_from<F: Fn(f64) -> f64>(
        &self,
        start_panels: usize,
        h: F,
    ) -> Result<f64, QuadratureError> {
        let mut panels = start_panels.max(1);
        let mut coarse = self.rule(panels).integrate(&h);
        loop {
            let fine_rule = self.rule(2 * panels);
            let fine = fine_rule.integrate(&h);
            let scale = fine_rule.integrate(|x| h(x).abs()).max(1.0);
            let difference = (fine - coarse).abs();
            if difference <= self.tolerance * scale {
                return Ok(fine);
            }
            panels *= 2;
            if panels >= self.max_panels {
                return Err(QuadratureError::NotConverged {
                    difference,
                    tolerance: self.tolerance * scale,
                    panels,
                });
            }
            coarse = fine;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(GAUSS_POINTS);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        // ∫ t^{38} dt = 2/39 (degree 2n−1 = 39 is the exactness limit)
        let m: f64 = x.iter().zip(&w).map(|(t, w)| w * t.powi(38)).sum();
        assert!((m - 2.0 / 39.0).abs() < 1e-14);
    }

    #[test]
    fn constant_one_has_unit_norm() {
        for kappa in [1.0, 0.875, 0.75, 0.625] {
            let ip = InnerProduct::new(kappa);
            let v = ip.integrate(|_| 1.0, |_| 1.0).unwrap();
            assert!((v - 1.0).abs() < 1e-13, "kappa={kappa}: {v}");
        }
    }

    #[test]
    fn power_singularity_is_resolved() {
        // ∫ x^{-1/3} dx = 3/2 with κ = 0.75
        let ip = InnerProduct::new(0.75);
        let v = ip.integrate(|x| x.powf(-1.0 / 3.0), |_| 1.0).unwrap();
        assert!((v - 1.5).abs() < 1e-11);
    }

    #[test]
    fn non_convergence_is_reported() {
        let mut ip = InnerProduct::new(1.0);
        ip.max_panels = 4;
        ip.initial_panels = 1;
        let err = ip.integrate(|x| (400.0 * x).sin(), |_| 1.0);
        assert!(matches!(err, Err(QuadratureError::NotConverged { .. })));
    }
}
