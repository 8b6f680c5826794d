//! Time integration of the modal closed loop `a' = M a` and of the target
//! system `v_k' = −(λ_k + λ) v_k`, plus decay-rate fitting.
//!
//! The closed loop is stiff (`λ_N/λ₁ ~ N²`), so it is integrated with the
//! (2,2) diagonal Padé scheme
//!
//! ```text
//! (I − hM/2 + h²M²/12) a_{n+1} = (I + hM/2 + h²M²/12) a_n,
//! ```
//!
//! which is the two-stage Gauss–Legendre method for linear systems: A-stable
//! and fourth order. Local error is estimated by step doubling. Step sizes are
//! `dt/2^m`, which keeps the output grid exact and lets every level reuse one
//! cached LU factorisation.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::Serialize;
use thiserror::Error;

use crate::export::write_csv;
use crate::fredholm_transform::TransformSystem;
use crate::kernel_builder::DecayConfig;
use crate::spectral_basis::{inner_product_quadrature, DegenerateParams, EigenMode, SpectralError};

/// Deepest halving of `dt` before the integrator gives up.
pub const MAX_LEVEL: u32 = 48;
/// Modal coefficients written to trajectory CSVs.
pub const EXPORTED_COEFFS: usize = 8;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation setting `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("initial condition has {got} coefficients, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("step rejection cascade at t = {time}: error estimate {estimate:e} exceeds tolerance {tolerance:e} at step {step:e} (stiffness ratio lambda_N/lambda_1 = {stiffness:.3e})")]
    StepRejection {
        time: f64,
        step: f64,
        estimate: f64,
        tolerance: f64,
        stiffness: f64,
    },

    #[error("norm underflowed inside the fit window at t = {time}")]
    Underflow { time: f64 },

    #[error("fit window [{start}, {end}] holds {points} samples; at least 2 are needed")]
    SparseWindow { start: f64, end: f64, points: usize },

    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub t_final: f64,
    pub dt: f64,
    pub integrator_tol: f64,
    pub fit_window: (f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_final: 2.0,
            dt: 0.01,
            integrator_tol: 1e-8,
            fit_window: (0.5, 2.0),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field, reason: String| Err(SimError::InvalidConfig { field, reason });
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return bad("t_final", format!("must be positive, got {}", self.t_final));
        }
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= self.t_final) {
            return bad("dt", format!("must lie in (0, t_final], got {}", self.dt));
        }
        if !(self.integrator_tol.is_finite() && self.integrator_tol > 0.0) {
            return bad(
                "integrator_tol",
                format!("must be positive, got {}", self.integrator_tol),
            );
        }
        let (start, end) = self.fit_window;
        if !(0.0 < start && start < end && end <= self.t_final) {
            return bad(
                "fit_window",
                format!(
                    "need 0 < start < end <= t_final, got ({start}, {end}) with t_final {}",
                    self.t_final
                ),
            );
        }
        if self.dt > (end - start) / 50.0 * (1.0 + 1e-12) {
            return bad(
                "dt",
                format!(
                    "must be at most (end - start)/50 = {} for the rate fit",
                    (end - start) / 50.0
                ),
            );
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.t_final / self.dt - 1e-9).ceil() as usize
    }
}

/// Least-squares fit of `log ‖a(t)‖ ≈ intercept − rate·t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub intercept: f64,
    /// `exp(intercept)/‖a(0)‖`, the constant in `‖a(t)‖ ≤ C ‖a(0)‖ e^{−rate·t}`
    pub constant: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub coeffs: Vec<DVector<f64>>,
    pub l2_norm: Vec<f64>,
    pub control: Vec<f64>,
    pub fit: DecayFit,
    /// Accepted and rejected integrator steps (both zero for exact solutions)
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl Trajectory {
    pub fn fitted_rate(&self) -> f64 {
        self.fit.rate
    }

    /// `t, l2_norm, control, a_1, …, a_8`.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let shown = self
            .coeffs
            .first()
            .map_or(0, |a| a.len().min(EXPORTED_COEFFS));
        let names: Vec<String> = (1..=shown).map(|i| format!("a{i}")).collect();
        let mut header = vec!["t", "l2_norm", "control"];
        header.extend(names.iter().map(String::as_str));
        write_csv(
            path,
            &header,
            (0..self.times.len()).map(|i| {
                let mut row = vec![self.times[i], self.l2_norm[i], self.control[i]];
                row.extend(self.coeffs[i].iter().take(shown));
                row
            }),
        )
    }
}

/// Least-squares slope and intercept of `log l2` over `window`.
pub fn fit_decay_rate(times: &[f64], l2: &[f64], window: (f64, f64)) -> Result<DecayFit, SimError> {
    let (start, end) = window;
    let slack = 1e-9 * end.abs().max(1.0);
    let mut pts = Vec::new();
    for (&t, &v) in times.iter().zip(l2) {
        if t >= start - slack && t <= end + slack {
            if !(v > f64::MIN_POSITIVE) {
                return Err(SimError::Underflow { time: t });
            }
            pts.push((t, v.ln()));
        }
    }
    if pts.len() < 2 {
        return Err(SimError::SparseWindow {
            start,
            end,
            points: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mean_t) * (y - mean_y)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mean_t).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    let initial = l2.first().copied().unwrap_or(1.0);
    Ok(DecayFit {
        rate: -slope,
        intercept,
        constant: intercept.exp() / initial,
    })
}

/// Local error of the scheme is `O(h⁵)`, so halving the step divides it by 32.
const ORDER: i32 = 4;

struct Pade22<'a> {
    m: &'a DMatrix<f64>,
    m2: DMatrix<f64>,
    dt: f64,
    factors: HashMap<u32, LU<f64, Dyn, Dyn>>,
}

impl<'a> Pade22<'a> {
    fn new(m: &'a DMatrix<f64>, dt: f64) -> Self {
        Self {
            m,
            m2: m * m,
            dt,
            factors: HashMap::new(),
        }
    }

    fn step(&mut self, level: u32, a: &DVector<f64>) -> DVector<f64> {
        let h = self.dt / 2f64.powi(level as i32);
        let (m, m2, n) = (self.m, &self.m2, self.m.nrows());
        let lu = self.factors.entry(level).or_insert_with(|| {
            (DMatrix::<f64>::identity(n, n) - m * (0.5 * h) + m2 * (h * h / 12.0)).lu()
        });
        let rhs = a + (m * a) * (0.5 * h) + (m2 * a) * (h * h / 12.0);
        lu.solve(&rhs)
            .expect("the Padé denominator is nonsingular for a dissipative M")
    }
}

/// Samples on the `dt` grid with accepted and rejected step counts.
pub type Samples = (Vec<f64>, Vec<DVector<f64>>, usize, usize);

/// Integrates `a' = M a` from `a0`.
pub fn integrate_linear(
    m: &DMatrix<f64>,
    a0: &DVector<f64>,
    cfg: &SimConfig,
    stiffness: f64,
) -> Result<Samples, SimError> {
    cfg.validate()?;
    if a0.len() != m.nrows() {
        return Err(SimError::DimensionMismatch {
            expected: m.nrows(),
            got: a0.len(),
        });
    }
    let mut stepper = Pade22::new(m, cfg.dt);
    let full: u64 = 1 << MAX_LEVEL;
    let mut times = vec![0.0];
    let mut coeffs = vec![a0.clone()];
    let mut a = a0.clone();
    let mut level = 0u32;
    let (mut accepted, mut rejected) = (0usize, 0usize);

    for interval in 0..cfg.steps() {
        let t0 = interval as f64 * cfg.dt;
        let mut pos: u64 = 0;
        while pos < full {
            let span = full >> level;
            let coarse = stepper.step(level, &a);
            let half = stepper.step(level + 1, &a);
            let fine = stepper.step(level + 1, &half);
            let estimate = (&fine - &coarse).norm() / (2f64.powi(ORDER) - 1.0);
            let tolerance = cfg.integrator_tol * fine.norm().max(a.norm()).max(1e-300);
            if estimate <= tolerance {
                a = fine;
                pos += span;
                accepted += 1;
                // grow when the error is comfortably small and the coarser step stays on its grid
                if level > 0
                    && estimate <= tolerance / 2f64.powi(ORDER + 1)
                    && pos.is_multiple_of(span << 1)
                {
                    level -= 1;
                }
            } else {
                rejected += 1;
                level += 1;
                if level + 1 >= MAX_LEVEL {
                    return Err(SimError::StepRejection {
                        time: t0 + cfg.dt * pos as f64 / full as f64,
                        step: cfg.dt / 2f64.powi(level as i32),
                        estimate,
                        tolerance,
                        stiffness,
                    });
                }
            }
        }
        times.push((interval + 1) as f64 * cfg.dt);
        coeffs.push(a.clone());
    }
    Ok((times, coeffs, accepted, rejected))
}

fn stiffness_ratio(lambdas: &DVector<f64>) -> f64 {
    lambdas[lambdas.len() - 1] / lambdas[0]
}

/// Closed loop `a' = (−Λ − g pᵀ) a` with control `U = pᵀ a`.
pub fn simulate_closed_loop(
    sys: &TransformSystem,
    u0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    simulate_matrix(
        &sys.closed_loop_matrix(),
        &sys.p,
        u0,
        cfg,
        stiffness_ratio(&sys.lambdas),
    )
}

/// Uncontrolled system `a' = −Λ a`, integrated with the same scheme.
pub fn simulate_open_loop(
    lambdas: &DVector<f64>,
    u0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    let m = DMatrix::from_diagonal(&(-lambdas));
    simulate_matrix(
        &m,
        &DVector::zeros(lambdas.len()),
        u0,
        cfg,
        stiffness_ratio(lambdas),
    )
}

fn simulate_matrix(
    m: &DMatrix<f64>,
    p: &DVector<f64>,
    u0: &DVector<f64>,
    cfg: &SimConfig,
    stiffness: f64,
) -> Result<Trajectory, SimError> {
    let (times, coeffs, accepted, rejected) = integrate_linear(m, u0, cfg, stiffness)?;
    let l2_norm: Vec<f64> = coeffs.iter().map(|a| a.norm()).collect();
    let control = coeffs.iter().map(|a| p.dot(a)).collect();
    let fit = fit_decay_rate(&times, &l2_norm, cfg.fit_window)?;
    Ok(Trajectory {
        times,
        coeffs,
        l2_norm,
        control,
        fit,
        accepted_steps: accepted,
        rejected_steps: rejected,
    })
}

/// Exact target solution `v_k(t) = v_k(0) e^{−(λ_k + λ) t}` on the `dt` grid.
pub fn simulate_target(
    modes: &[EigenMode],
    config: &DecayConfig,
    v0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    if v0.len() > modes.len() {
        return Err(SimError::DimensionMismatch {
            expected: modes.len(),
            got: v0.len(),
        });
    }
    let times: Vec<f64> = (0..=cfg.steps()).map(|i| i as f64 * cfg.dt).collect();
    let coeffs: Vec<DVector<f64>> = times
        .iter()
        .map(|&t| {
            DVector::from_fn(v0.len(), |k, _| {
                v0[k] * (-(modes[k].lambda + config.lambda) * t).exp()
            })
        })
        .collect();
    let l2_norm: Vec<f64> = coeffs.iter().map(|a| a.norm()).collect();
    let fit = fit_decay_rate(&times, &l2_norm, cfg.fit_window)?;
    Ok(Trajectory {
        control: vec![0.0; times.len()],
        times,
        coeffs,
        l2_norm,
        fit,
        accepted_steps: 0,
        rejected_steps: 0,
    })
}

/// Maximum of `‖T a(t) − v(t)‖/‖v(t)‖` over all samples, where `a` is the
/// closed-loop trajectory from `u0` and `v` the target trajectory from `T u0`.
pub fn conjugate_check(
    sys: &TransformSystem,
    modes: &[EigenMode],
    config: &DecayConfig,
    u0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<f64, SimError> {
    let closed = simulate_closed_loop(sys, u0, cfg)?;
    conjugacy_deviation(sys, modes, config, &closed, cfg)
}

/// [`conjugate_check`] for an existing closed-loop trajectory.
pub fn conjugacy_deviation(
    sys: &TransformSystem,
    modes: &[EigenMode],
    config: &DecayConfig,
    closed: &Trajectory,
    cfg: &SimConfig,
) -> Result<f64, SimError> {
    let v0 = &sys.t_mat * &closed.coeffs[0];
    let target = simulate_target(modes, config, &v0, cfg)?;
    Ok(closed
        .coeffs
        .iter()
        .zip(&target.coeffs)
        .map(|(a, v)| (&sys.t_mat * a - v).norm() / v.norm())
        .fold(0.0, f64::max))
}

/// Modal coefficients `⟨f, φ_n⟩` of a pointwise initial condition.
pub fn project_initial<F: Fn(f64) -> f64>(
    params: &DegenerateParams,
    modes: &[EigenMode],
    f: F,
) -> Result<DVector<f64>, SimError> {
    let values: Result<Vec<f64>, SpectralError> = modes
        .iter()
        .map(|m| inner_product_quadrature(params, &f, |x| m.phi(params, x)))
        .collect();
    Ok(DVector::from_vec(values?))
}

/// Default initial condition `Σ_n φ_n / n`.
pub fn harmonic_initial(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| 1.0 / (i + 1) as f64)
}

/// Decay summary of one closed-loop run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub alpha: f64,
    pub lambda: f64,
    pub n_modes: usize,
    pub fitted_rate: f64,
    /// Slowest closed-loop pole `λ₁ + λ` of the truncated model
    pub truncated_rate: f64,
    /// Rate guaranteed for the full system
    pub guaranteed_rate: f64,
    pub c_estimate: f64,
    pub condition: f64,
    pub conjugacy_deviation: f64,
    pub target_fitted_rate: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Closed-loop run, target run and conjugacy check for one configuration.
pub fn run_experiment(
    params: &DegenerateParams,
    sys: &TransformSystem,
    modes: &[EigenMode],
    config: &DecayConfig,
    u0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<(RunSummary, Trajectory, Trajectory), SimError> {
    let closed = simulate_closed_loop(sys, u0, cfg)?;
    let v0 = &sys.t_mat * u0;
    let target = simulate_target(modes, config, &v0, cfg)?;
    let deviation = conjugacy_deviation(sys, modes, config, &closed, cfg)?;
    let summary = RunSummary {
        alpha: params.alpha,
        lambda: config.lambda,
        n_modes: sys.n_modes(),
        fitted_rate: closed.fit.rate,
        truncated_rate: modes[0].lambda + config.lambda,
        guaranteed_rate: config.lambda,
        c_estimate: closed.fit.constant,
        condition: sys.condition(),
        conjugacy_deviation: deviation,
        target_fitted_rate: target.fit.rate,
        accepted_steps: closed.accepted_steps,
        rejected_steps: closed.rejected_steps,
    };
    Ok((summary, closed, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fredholm_transform::assemble;
    use crate::kernel_builder::{build_kernel, TailClosure};
    use crate::spectral_basis::build_modes;

    fn lambdas(alpha: f64, n: usize) -> (Vec<EigenMode>, DVector<f64>) {
        let p = DegenerateParams::new(alpha).unwrap();
        let modes = build_modes(&p, n).unwrap();
        let l = DVector::from_iterator(n, modes.iter().map(|m| m.lambda));
        (modes, l)
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = SimConfig {
            fit_window: (0.5, 3.0),
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(SimError::InvalidConfig {
                field: "fit_window",
                ..
            })
        ));
        let coarse = SimConfig {
            dt: 0.1,
            ..Default::default()
        };
        assert!(matches!(
            coarse.validate(),
            Err(SimError::InvalidConfig { field: "dt", .. })
        ));
    }

    #[test]
    fn pure_exponential_fit_is_exact() {
        let times: Vec<f64> = (0..=200).map(|i| i as f64 * 0.01).collect();
        let l2: Vec<f64> = times.iter().map(|t| 3.0 * (-7.5 * t).exp()).collect();
        let fit = fit_decay_rate(&times, &l2, (0.5, 2.0)).unwrap();
        assert!((fit.rate - 7.5).abs() < 1e-10);
        assert!((fit.constant - 1.0).abs() < 1e-10);
    }

    #[test]
    fn two_mode_fit_moves_to_slower_rate() {
        let times: Vec<f64> = (0..=400).map(|i| i as f64 * 0.01).collect();
        let l2: Vec<f64> = times
            .iter()
            .map(|t| ((-2.0 * t).exp().powi(2) + (-6.0 * t).exp().powi(2)).sqrt())
            .collect();
        let early = fit_decay_rate(&times, &l2, (0.0 + 0.01, 1.0)).unwrap().rate;
        let late = fit_decay_rate(&times, &l2, (3.0, 4.0)).unwrap().rate;
        assert!(early > 2.0 && early < 6.0);
        assert!(late < early && (late - 2.0).abs() < 1e-3);
    }

    #[test]
    fn underflow_is_reported() {
        let times = vec![0.0, 1.0, 2.0];
        assert!(matches!(
            fit_decay_rate(&times, &[1.0, 0.0, 0.0], (0.5, 2.0)),
            Err(SimError::Underflow { .. })
        ));
    }

    #[test]
    fn open_loop_single_mode_decays_at_first_eigenvalue() {
        let (_, l) = lambdas(0.5, 16);
        let mut e1 = DVector::zeros(16);
        e1[0] = 1.0;
        let traj = simulate_open_loop(&l, &e1, &SimConfig::default()).unwrap();
        for (t, a) in traj.times.iter().zip(&traj.coeffs) {
            assert!((a[0] - (-l[0] * t).exp()).abs() < 1e-5 * (-l[0] * t).exp());
        }
        assert!((traj.fitted_rate() - l[0]).abs() < 1e-6 * l[0]);
    }

    #[test]
    fn open_loop_is_dissipative() {
        let (_, l) = lambdas(0.25, 32);
        let traj = simulate_open_loop(&l, &harmonic_initial(32), &SimConfig::default()).unwrap();
        let n0 = traj.l2_norm[0];
        for (t, v) in traj.times.iter().zip(&traj.l2_norm) {
            assert!(*v <= n0 * (-l[0] * t).exp() * (1.0 + 1e-7));
        }
    }

    #[test]
    fn target_is_exact_and_dissipative() {
        let (modes, _) = lambdas(0.5, 8);
        let config = DecayConfig::with_default_margin(5.0).unwrap();
        let mut v0 = DVector::zeros(8);
        v0[0] = 1.0;
        let traj = simulate_target(&modes, &config, &v0, &SimConfig::default()).unwrap();
        let at_one = traj.l2_norm[100];
        assert!((at_one - (-(modes[0].lambda + 5.0)).exp()).abs() < 1e-14);
        let full =
            simulate_target(&modes, &config, &harmonic_initial(8), &SimConfig::default()).unwrap();
        let weighted: Vec<f64> = full
            .times
            .iter()
            .zip(&full.l2_norm)
            .map(|(t, v)| v * v * (10.0 * t).exp())
            .collect();
        assert!(weighted.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-14)));
    }

    #[test]
    fn conjugacy_and_rate_at_moderate_size() {
        let p = DegenerateParams::new(0.5).unwrap();
        let config = DecayConfig::with_default_margin(5.0).unwrap();
        let (modes, data) = build_kernel(&p, &config, 24, TailClosure::Truncated).unwrap();
        let sys = assemble(&data).unwrap();
        let cfg = SimConfig::default();
        let (summary, _, _) =
            run_experiment(&p, &sys, &modes, &config, &harmonic_initial(24), &cfg).unwrap();
        assert!(summary.conjugacy_deviation < 1e-4);
        assert!(summary.fitted_rate >= 0.95 * summary.truncated_rate);
    }

    #[test]
    fn projection_recovers_modal_coefficients() {
        let p = DegenerateParams::new(0.5).unwrap();
        let modes = build_modes(&p, 6).unwrap();
        let f = |x: f64| modes[1].phi(&p, x) - 0.5 * modes[4].phi(&p, x);
        let a = project_initial(&p, &modes, f).unwrap();
        assert!((a[1] - 1.0).abs() < 1e-9 && (a[4] + 0.5).abs() < 1e-9 && a[0].abs() < 1e-9);
    }
}
