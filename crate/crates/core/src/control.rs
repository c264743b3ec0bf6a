//! Periodic event-triggering mechanism and the two impulsive jump maps.
//!
//! The trigger is evaluated only on the sampling grid: the first event is the
//! first `ιΔ` (ι ≥ 1) with `W(y(ιΔ)) > ψ₁ W(y(0))`, and each later event is the
//! first `t_s + ιΔ` with `W > ψ₂ W(y(t_s))`, where `W(y(t)) = e^{γt} yᵀPy`.
//! Inter-event gaps are therefore whole multiples of Δ, which rules out Zeno
//! behaviour by construction.

use crate::error::{PeticError, Result};
use crate::linalg::{self, Matrix};
use crate::model::StackedSystem;
use crate::scalar::Scalar;
use crate::topology;

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerParams<T> {
    /// Sampling period Δ.
    pub delta: T,
    pub psi1: T,
    pub psi2: T,
    pub gamma: T,
    /// Symmetric positive definite weight of `W`.
    pub p: Matrix<T>,
}

impl<T: Scalar> TriggerParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > T::zero()) || !self.delta.is_finite() {
            return Err(PeticError::config("trigger.delta", "sampling period must be > 0"));
        }
        if !(self.psi1 >= T::one()) {
            return Err(PeticError::config("trigger.psi1", "ψ₁ ≥ 1 required"));
        }
        if !(self.psi2 >= T::one()) {
            return Err(PeticError::config("trigger.psi2", "ψ₂ ≥ 1 required"));
        }
        if !(self.gamma > T::zero()) || !self.gamma.is_finite() {
            return Err(PeticError::config("trigger.gamma", "γ > 0 required"));
        }
        if !self.p.is_symmetric(T::of(1e-12)) {
            return Err(PeticError::config("trigger.p", "P must be symmetric"));
        }
        linalg::cholesky(&self.p)
            .map_err(|_| PeticError::config("trigger.p", "P must be positive definite"))?;
        Ok(())
    }

    pub fn p_extreme_eigenvalues(&self) -> Result<(T, T)> {
        let e = linalg::symmetric_eigen(&self.p)?;
        Ok((e.values[0], *e.values.last().expect("non-empty P")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlMode<T> {
    /// Additive jump `y ← (I + e^{-αΓ}KH̃ΦΘ) y⁻`; requires negative gains.
    NoDelay,
    /// Replacement jump `y ← e^{-αΓ}K̃H̃ΦΘ y(t_s⁻ − τ_s)` with `0 ≤ τ_s < Δ`.
    Delayed { actuation_delay: T },
    /// No triggering, no impulses.
    Uncontrolled,
}

impl<T: Scalar> ControlMode<T> {
    pub fn name(&self) -> &'static str {
        match self {
            ControlMode::NoDelay => "no_delay",
            ControlMode::Delayed { .. } => "delayed",
            ControlMode::Uncontrolled => "uncontrolled",
        }
    }

    pub fn actuation_delay(&self) -> T {
        match self {
            ControlMode::Delayed { actuation_delay } => *actuation_delay,
            _ => T::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord<T> {
    /// Event index `s`, starting at 0.
    pub index: usize,
    /// Integrator step index of `t_s`.
    pub step: usize,
    pub t: T,
    /// `t_s − t_{s−1}`, with `t_{−1} = 0`.
    pub gap: T,
    /// Integer number of Δ periods in the gap.
    pub gap_periods: usize,
    /// `W(y(t_s⁻)) / W_ref` at detection.
    pub w_ratio: T,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog<T> {
    pub events: Vec<EventRecord<T>>,
}

impl<T: Scalar> EventLog<T> {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Records an event at integrator step `step`, with Δ equal to `period_steps` steps.
    pub fn push(&mut self, step: usize, h: T, period_steps: usize, w_ratio: T) {
        let prev_step = self.events.last().map_or(0, |e| e.step);
        let gap_steps = step - prev_step;
        self.events.push(EventRecord {
            index: self.events.len(),
            step,
            t: T::of(step as f64) * h,
            gap: T::of(gap_steps as f64) * h,
            gap_periods: gap_steps / period_steps,
            w_ratio,
        });
    }

    /// Count of entries violating the grid invariants: instants strictly increasing,
    /// `t_0 ≥ Δ`, and every gap a positive whole number of periods.
    pub fn zeno_violations(&self, period_steps: usize) -> usize {
        let mut prev = 0usize;
        let mut bad = 0;
        for e in &self.events {
            let gap = e.step.saturating_sub(prev);
            if e.step <= prev || gap < period_steps || gap % period_steps != 0 {
                bad += 1;
            }
            prev = e.step;
        }
        bad
    }

    pub fn min_gap(&self) -> Option<T> {
        self.events.iter().map(|e| e.gap).reduce(T::min)
    }
}

/// `W(y(t)) = e^{γt} yᵀ P y`.
pub fn lyapunov_w<T: Scalar>(t: T, y: &[T], params: &TriggerParams<T>) -> T {
    let py = params.p.mul_vec_unchecked(y);
    (params.gamma * t).exp() * linalg::dot(y, &py)
}

/// Strict `W_now > ψ W_ref`, with ψ₁ before the first event and ψ₂ after.
pub fn should_trigger<T: Scalar>(w_now: T, w_ref: T, is_first: bool, params: &TriggerParams<T>) -> Result<bool> {
    if w_now < T::zero() || w_ref < T::zero() {
        return Err(PeticError::Invariant(format!(
            "Lyapunov values must be non-negative (W = {w_now}, W_ref = {w_ref})"
        )));
    }
    let psi = if is_first { params.psi1 } else { params.psi2 };
    Ok(w_now > psi * w_ref)
}

fn check_negative_gains<T: Scalar>(sys: &StackedSystem<T>) -> Result<()> {
    for (i, &k) in sys.gains.iter().enumerate() {
        if !(k < T::zero()) {
            return Err(PeticError::config(
                format!("agent.{}.gain", i + 1),
                format!("no-delay impulsive gain must be negative, got {k}"),
            ));
        }
    }
    Ok(())
}

/// `y(t_s) = y⁻ + e^{-αΓ(t_s)} K H̃ Φ Θ y⁻`.
pub fn impulse_no_delay<T: Scalar>(y_minus: &[T], t_s: T, sys: &StackedSystem<T>) -> Result<Vec<T>> {
    check_negative_gains(sys)?;
    Ok(apply_no_delay(y_minus, t_s, sys))
}

pub(crate) fn apply_no_delay<T: Scalar>(y_minus: &[T], t_s: T, sys: &StackedSystem<T>) -> Vec<T> {
    let decay = topology::energy_decay_diagonal(&sys.energy_profiles(), sys.alpha, t_s, sys.m);
    let jump = sys.coupling.mul_vec_unchecked(y_minus);
    y_minus
        .iter()
        .zip(jump)
        .zip(decay)
        .map(|((&y, j), g)| y + g * j)
        .collect()
}

/// `y(t_s) = e^{-αΓ(t_s)} K̃ H̃ Φ Θ y(t_s⁻ − τ_s)`; the pre-jump state is discarded.
pub fn impulse_with_delay<T: Scalar>(
    y_delayed: &[T],
    t_s: T,
    tau_s: T,
    delta: T,
    sys: &StackedSystem<T>,
) -> Result<Vec<T>> {
    if !(tau_s >= T::zero()) || !(tau_s < delta) {
        return Err(PeticError::config(
            "control.actuation_delay",
            format!("actuation delay must satisfy 0 ≤ τ_s < Δ (delay bound), got τ_s = {tau_s}, Δ = {delta}"),
        ));
    }
    Ok(apply_delayed(y_delayed, t_s, sys))
}

pub(crate) fn apply_delayed<T: Scalar>(y_delayed: &[T], t_s: T, sys: &StackedSystem<T>) -> Vec<T> {
    let decay = topology::energy_decay_diagonal(&sys.energy_profiles(), sys.alpha, t_s, sys.m);
    sys.coupling
        .mul_vec_unchecked(y_delayed)
        .into_iter()
        .zip(decay)
        .map(|(j, g)| g * j)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_stacked, AgentSpec, LeaderSpec, NonlinearitySpec};
    use crate::topology::{EnergyProfile, TopologySpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(p: Matrix<f64>, gamma: f64) -> TriggerParams<f64> {
        TriggerParams { delta: 0.009, psi1: 1.4, psi2: 1.001, gamma, p }
    }

    /// N = m = 1, H = 1, Φ = Θ = 1; `tau` sets the energy decay.
    fn scalar_system(gain: f64, h: f64, alpha: f64, tau: f64) -> StackedSystem<f64> {
        let agent = AgentSpec {
            n: 1,
            c: Matrix::zeros(1, 1),
            d: Matrix::zeros(1, 1),
            f: NonlinearitySpec::zero(),
            xi: Matrix::identity(1),
            phi: Matrix::identity(1),
            theta: Matrix::identity(1),
            gain,
            offset: vec![0.0],
            energy: EnergyProfile::constant(tau).unwrap(),
        };
        let leader = LeaderSpec {
            n0: 1,
            c0: Matrix::zeros(1, 1),
            d0: Matrix::zeros(1, 1),
            f: NonlinearitySpec::zero(),
        };
        let topo = TopologySpec::from_matrix(Matrix::from_diag(&[h]), alpha).unwrap();
        build_stacked(&leader, &[agent], &topo, 1).unwrap()
    }

    fn two_agent_system(gains: [f64; 2]) -> StackedSystem<f64> {
        let mk = |g: f64, tau: f64| AgentSpec {
            n: 2,
            c: Matrix::zeros(2, 2),
            d: Matrix::zeros(2, 2),
            f: NonlinearitySpec::zero(),
            xi: Matrix::identity(2),
            phi: Matrix::identity(2),
            theta: Matrix::identity(2),
            gain: g,
            offset: vec![0.0; 2],
            energy: EnergyProfile::new(tau, 0.01).unwrap(),
        };
        let leader = LeaderSpec {
            n0: 2,
            c0: Matrix::zeros(2, 2),
            d0: Matrix::zeros(2, 2),
            f: NonlinearitySpec::zero(),
        };
        let h = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, -1.0]]).unwrap();
        let topo = TopologySpec::from_matrix(h, 2.0).unwrap();
        build_stacked(&leader, &[mk(gains[0], 0.1), mk(gains[1], 0.3)], &topo, 2).unwrap()
    }

    #[test]
    fn w_examples() {
        let p = params(Matrix::identity(2), 0.0019);
        assert_eq!(lyapunov_w(3.0, &[0.0, 0.0], &p), 0.0);
        assert_eq!(lyapunov_w(0.0, &[3.0, 4.0], &p), 25.0);
        let p = params(Matrix::identity(2).scale(0.95), 0.0019);
        assert_abs_diff_eq!(lyapunov_w(1.0, &[1.0, 0.0], &p), 0.0019f64.exp() * 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(lyapunov_w(1.0, &[1.0, 0.0], &p), 0.951_806, epsilon = 1e-6);
    }

    #[test]
    fn trigger_examples() {
        let p = params(Matrix::identity(1), 0.0019);
        assert!(!should_trigger(1.0, 1.0, false, &p).unwrap());
        assert!(!should_trigger(0.0, 0.0, true, &p).unwrap());
        assert!(should_trigger(1.5, 1.0, true, &p).unwrap());
        assert!(!should_trigger(1.39, 1.0, true, &p).unwrap());
        assert!(matches!(should_trigger(-1.0, 1.0, true, &p), Err(PeticError::Invariant(_))));
    }

    #[test]
    fn psi_one_detects_strict_increase() {
        let mut p = params(Matrix::identity(1), 0.1);
        p.psi1 = 1.0;
        p.psi2 = 1.0;
        assert!(should_trigger(1.0 + 1e-12, 1.0, false, &p).unwrap());
        assert!(!should_trigger(1.0, 1.0, true, &p).unwrap());
    }

    #[test]
    fn params_validation() {
        let mut p = params(Matrix::identity(2), 0.1);
        assert!(p.validate().is_ok());
        p.psi2 = 0.5;
        assert!(p.validate().unwrap_err().to_string().contains("ψ₂ ≥ 1"));
        let mut p = params(Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap(), 0.1);
        assert!(p.validate().is_err());
        p.p = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]]).unwrap();
        assert!(p.validate().unwrap_err().to_string().contains("symmetric"));
    }

    #[test]
    fn no_delay_scalar_jump() {
        let sys = scalar_system(-0.5, 1.0, 1.0, 0.0);
        assert_eq!(impulse_no_delay(&[2.0], 1.0, &sys).unwrap(), vec![1.0]);
        assert_eq!(impulse_no_delay(&[0.0], 1.0, &sys).unwrap(), vec![0.0]);
        let zero_h = scalar_system(-0.5, 0.0, 1.0, 0.0);
        assert_eq!(impulse_no_delay(&[3.0], 1.0, &zero_h).unwrap(), vec![3.0]);
    }

    #[test]
    fn no_delay_rejects_nonnegative_gain() {
        let sys = scalar_system(0.5, 1.0, 1.0, 0.0);
        assert!(matches!(impulse_no_delay(&[1.0], 1.0, &sys), Err(PeticError::Config { .. })));
    }

    #[test]
    fn delayed_scalar_replacement() {
        // e^{-ατ} = 0.1 with α = 1
        let sys = scalar_system(0.55, 1.0, 1.0, 10f64.ln());
        let out = impulse_with_delay(&[2.0], 0.5, 0.04, 0.09, &sys).unwrap();
        assert_abs_diff_eq!(out[0], 0.11, epsilon = 1e-15);
        assert_eq!(impulse_with_delay(&[0.0], 0.5, 0.04, 0.09, &sys).unwrap(), vec![0.0]);
        let zero_gain = scalar_system(0.0, 1.0, 1.0, 0.0);
        assert_eq!(impulse_with_delay(&[5.0], 0.5, 0.0, 0.09, &zero_gain).unwrap(), vec![0.0]);
    }

    #[test]
    fn delayed_rejects_long_delay() {
        let sys = scalar_system(0.55, 1.0, 1.0, 0.0);
        assert!(impulse_with_delay(&[1.0], 0.5, 0.09, 0.09, &sys).is_err());
        assert!(impulse_with_delay(&[1.0], 0.5, -0.01, 0.09, &sys).is_err());
    }

    #[test]
    fn jumps_commute_with_stacking_permutation() {
        let sys = two_agent_system([-0.7, -1.3]);
        let y = [0.3, -1.2, 2.0, 0.4];
        let t = 0.8;
        let agent_major = impulse_no_delay(&y, t, &sys).unwrap();

        // Same jump assembled component-major: I_m ⊗ (diag(k) H), Γ = I_m ⊗ diag(τ).
        let (n, m) = (2, 2);
        let perm = topology::agent_to_component_major(n, m);
        let kh_small = &Matrix::from_diag(&sys.gains) * &sys.h;
        let kh_c = Matrix::identity(m).kron(&kh_small);
        let taus: Vec<f64> = sys.energy_profiles().iter().map(|p| p.tau(t)).collect();
        let decay_c = Matrix::identity(m)
            .kron(&Matrix::from_diag(&taus.iter().map(|&tau| (-sys.alpha * tau).exp()).collect::<Vec<_>>()));
        let mut y_c = vec![0.0; 4];
        for (k, &pk) in perm.iter().enumerate() {
            y_c[pk] = y[k];
        }
        let jump_c = (&decay_c * &kh_c).mul_vec(&y_c).unwrap();
        for (k, &pk) in perm.iter().enumerate() {
            assert_abs_diff_eq!(agent_major[k], y_c[pk] + jump_c[pk], epsilon = 1e-14);
        }
    }

    #[test]
    fn event_log_invariants() {
        let mut log = EventLog::<f64>::default();
        log.push(3, 0.003, 3, 1.5);
        log.push(9, 0.003, 3, 1.01);
        log.push(12, 0.003, 3, 1.2);
        assert_eq!(log.zeno_violations(3), 0);
        assert_eq!(log.events[1].gap_periods, 2);
        assert_abs_diff_eq!(log.min_gap().unwrap(), 0.009, epsilon = 1e-15);

        let mut bad = EventLog::<f64>::default();
        bad.push(2, 0.003, 3, 1.5);
        bad.push(6, 0.003, 3, 1.5);
        assert_eq!(bad.zeno_violations(3), 2);
    }

    proptest! {
        #[test]
        fn no_delay_jump_is_linear(y in proptest::collection::vec(-10f64..10.0, 4), a in -5f64..5.0) {
            let sys = two_agent_system([-0.7, -1.3]);
            let ay: Vec<f64> = y.iter().map(|v| a * v).collect();
            let j1 = impulse_no_delay(&ay, 0.4, &sys).unwrap();
            let j2 = impulse_no_delay(&y, 0.4, &sys).unwrap();
            for k in 0..4 {
                prop_assert!((j1[k] - a * j2[k]).abs() <= 1e-12 * (1.0 + j1[k].abs()));
            }
        }

        #[test]
        fn delayed_output_ignores_current_state(yd in proptest::collection::vec(-10f64..10.0, 4)) {
            // The map has no dependence on y⁻, so only the delayed state enters.
            let sys = two_agent_system([-0.7, 0.55]);
            let a = impulse_with_delay(&yd, 0.4, 0.04, 0.09, &sys).unwrap();
            let b = apply_delayed(&yd, 0.4, &sys);
            prop_assert_eq!(a, b);
        }
    }
}
