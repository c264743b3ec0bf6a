//! Stability certificate quantities, assumption checks and trajectory post-processing.

use serde::{Deserialize, Serialize};

use crate::control::{ControlMode, EventLog, TriggerParams};
use crate::error::{PeticError, Result};
use crate::linalg::{self, Matrix};
use crate::model::{self, StackedSystem};
use crate::scalar::Scalar;
use crate::simulator::{EnsembleStats, Problem};

/// Reported γ̄ when the jump annihilates the state (λ₁ = 0).
pub const GAMMA_BAR_CAP: f64 = 1e3;

/// Monte Carlo slack used by [`decay_check`].
pub const DEFAULT_DECAY_SLACK: f64 = 1.5;

/// `P ΦCΘ + (ΦCΘ)ᵀ P + (ΦDΘ)ᵀ P ΦDΘ + PᵀP + Θᵀ diag(L_fi² I_{n_i}) Θ`.
pub fn bracket_matrix<T: Scalar>(sys: &StackedSystem<T>, p: &Matrix<T>) -> Result<Matrix<T>> {
    let a = &sys.drift_matrix;
    let d = &sys.diffusion_matrix;
    let pa = p.matmul(a)?;
    let dtpd = d.transpose().matmul(&p.matmul(d)?)?;
    let ptp = p.transpose().matmul(p)?;
    let mut l_diag = Vec::with_capacity(sys.theta.rows());
    for (agent, &l) in sys.agents.iter().zip(&sys.lipschitz) {
        l_diag.extend(std::iter::repeat_n(l * l, agent.n));
    }
    let lterm = sys.theta.transpose().matmul(&sys.theta.scale_rows(&l_diag))?;
    let s = &(&(&(&pa + &pa.transpose()) + &dtpd) + &ptp) + &lterm;
    Ok(s.symmetrized())
}

fn check_p<T: Scalar>(sys: &StackedSystem<T>, p: &Matrix<T>) -> Result<()> {
    if p.shape() != (sys.dim, sys.dim) {
        return Err(PeticError::config(
            "trigger.p",
            format!("P is {:?}, expected {}x{}", p.shape(), sys.dim, sys.dim),
        ));
    }
    linalg::cholesky(p).map_err(|_| PeticError::config("trigger.p", "P must be symmetric positive definite"))?;
    Ok(())
}

/// Drift growth constant `λ = max(0, λ_max(S, P))`.
pub fn compute_lambda<T: Scalar>(sys: &StackedSystem<T>, p: &Matrix<T>) -> Result<T> {
    check_p(sys, p)?;
    let s = bracket_matrix(sys, p)?;
    Ok(linalg::generalized_max_eigenvalue(&s, p)?.max(T::zero()))
}

/// `λ_max(AᵀPA, P)` clamped at zero.
fn jump_constant<T: Scalar>(a: &Matrix<T>, p: &Matrix<T>) -> Result<T> {
    let s = a.transpose().matmul(&p.matmul(a)?)?.symmetrized();
    Ok(linalg::generalized_max_eigenvalue(&s, p)?.max(T::zero()))
}

/// Jump contraction constant with `A = e^{ατ} I + K H̃ Φ Θ`.
pub fn compute_lambda1<T: Scalar>(sys: &StackedSystem<T>, p: &Matrix<T>, alpha: T, tau: T) -> Result<T> {
    check_p(sys, p)?;
    let a = &Matrix::identity(sys.dim).scale((alpha * tau).exp()) + &sys.coupling;
    jump_constant(&a, p)
}

/// Delayed jump constant with `A = K̃ H̃ Φ Θ`.
pub fn compute_lambda1_tilde<T: Scalar>(sys: &StackedSystem<T>, p: &Matrix<T>) -> Result<T> {
    check_p(sys, p)?;
    jump_constant(&sys.coupling, p)
}

/// Output of the certifying formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate<T> {
    pub feasible: bool,
    /// γ̄ (no delay) or γ̄′ (delayed).
    pub gamma_bar: T,
    /// The configured γ.
    pub gamma: T,
    /// `0 < γ ≤ γ̄`.
    pub gamma_certified: bool,
    /// Overshoot constant `M = ψ₁ e^{(λ+γ)Δ} λ_max(P)/λ_min(P)`.
    pub m: T,
}

fn overshoot<T: Scalar>(lambda: T, params: &TriggerParams<T>) -> Result<T> {
    let (lo, hi) = params.p_extreme_eigenvalues()?;
    Ok(params.psi1 * ((lambda + params.gamma) * params.delta).exp() * hi / lo)
}

fn finish<T: Scalar>(gamma_bar: T, lambda: T, params: &TriggerParams<T>) -> Result<Certificate<T>> {
    let feasible = gamma_bar > T::zero();
    Ok(Certificate {
        feasible,
        gamma_bar,
        gamma: params.gamma,
        gamma_certified: feasible && params.gamma > T::zero() && params.gamma <= gamma_bar,
        m: overshoot(lambda, params)?,
    })
}

/// `γ̄ = (2ατ − ln ψ₂ − ln λ₁ − λΔ)/Δ`; feasible iff `γ̄ > 0`.
pub fn certify_no_delay<T: Scalar>(
    lambda: T,
    lambda1: T,
    params: &TriggerParams<T>,
    alpha: T,
    tau: T,
) -> Result<Certificate<T>> {
    let gamma_bar = if lambda1 == T::zero() {
        T::of(GAMMA_BAR_CAP)
    } else {
        let two = T::of(2.0);
        ((two * alpha * tau - params.psi2.ln() - lambda1.ln() - lambda * params.delta) / params.delta)
            .min(T::of(GAMMA_BAR_CAP))
    };
    finish(gamma_bar, lambda, params)
}

/// `γ̄′ = ((2αβ − λ)Δ − ln ψ₂ − ln λ̃₁)/(2Δ)`; feasible iff `γ̄′ > 0`.
pub fn certify_delayed<T: Scalar>(
    lambda: T,
    lambda1_tilde: T,
    params: &TriggerParams<T>,
    alpha: T,
    beta: T,
) -> Result<Certificate<T>> {
    let gamma_bar = if lambda1_tilde == T::zero() {
        T::of(GAMMA_BAR_CAP)
    } else {
        let two = T::of(2.0);
        (((two * alpha * beta - lambda) * params.delta - params.psi2.ln() - lambda1_tilde.ln()) / (two * params.delta))
            .min(T::of(GAMMA_BAR_CAP))
    };
    finish(gamma_bar, lambda, params)
}

/// Energy floor `τ = min_i τ_i(0)` used for the no-delay certificate.
pub fn energy_floor<T: Scalar>(sys: &StackedSystem<T>) -> T {
    sys.agents.iter().map(|a| a.energy.floor()).fold(T::infinity(), T::min)
}

/// Minimum power `β = min_i β_i`, the largest rate with `e^{−ατᵢ(t)} ≤ e^{−αβt}` for every agent.
pub fn min_power<T: Scalar>(sys: &StackedSystem<T>) -> T {
    sys.agents.iter().map(|a| a.energy.min_power()).fold(T::infinity(), T::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayVerdict<T> {
    pub pass: bool,
    /// `slack / worst_ratio`; ≥ 1 iff pass.
    pub margin: T,
    /// Largest `Ê|y(t)|² / (M e^{−γt} Ê|y(0)|²)` over the grid.
    pub worst_ratio: T,
    pub worst_t: T,
    /// Least-squares slope of `ln Ê|y(t)|²` (negative when decaying).
    pub fitted_exponent: Option<T>,
}

/// Checks `mean_sq(t) ≤ slack · M e^{−γt} · initial` on every sample.
pub fn decay_check<T: Scalar>(
    times: &[T],
    mean_sq: &[T],
    initial: T,
    gamma: T,
    m: T,
    slack: T,
) -> Result<DecayVerdict<T>> {
    if times.is_empty() || times.len() != mean_sq.len() {
        return Err(PeticError::Usage("decay check needs a non-empty mean-square series".into()));
    }
    let mut worst_ratio = T::zero();
    let mut worst_t = times[0];
    for (&t, &v) in times.iter().zip(mean_sq) {
        let bound = m * (-gamma * t).exp() * initial;
        let ratio = if bound > T::zero() {
            v / bound
        } else if v == T::zero() {
            T::zero()
        } else {
            T::infinity()
        };
        if !(ratio <= worst_ratio) {
            worst_ratio = ratio;
            worst_t = t;
        }
    }
    let margin = if worst_ratio > T::zero() { slack / worst_ratio } else { T::infinity() };
    Ok(DecayVerdict {
        pass: worst_ratio <= slack,
        margin,
        worst_ratio,
        worst_t,
        fitted_exponent: log_slope(times, mean_sq),
    })
}

/// [`decay_check`] against the ensemble's own `Ê|y(0)|²`.
pub fn decay_check_stats<T: Scalar>(stats: &EnsembleStats<T>, gamma: T, m: T, slack: T) -> Result<DecayVerdict<T>> {
    let initial = *stats
        .mean_sq
        .first()
        .ok_or_else(|| PeticError::Usage("ensemble has no included runs".into()))?;
    decay_check(&stats.times, &stats.mean_sq, initial, gamma, m, slack)
}

fn log_slope<T: Scalar>(times: &[T], values: &[T]) -> Option<T> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > T::zero() && v.is_finite())
        .map(|(t, v)| (t.to_f64_lossy(), v.to_f64_lossy().ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum();
    Some(T::of(sxy / sxx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerReport {
    /// Fixed-period updates `floor(T/Δ)`.
    pub baseline: usize,
    pub counts: Vec<usize>,
    pub mean_count: f64,
    /// `1 − mean/baseline`.
    pub reduction: f64,
}

pub fn trigger_report<T: Scalar>(logs: &[EventLog<T>], delta: T, horizon: T) -> TriggerReport {
    let baseline = ((horizon / delta).to_f64_lossy() + 1e-9).floor() as usize;
    let counts: Vec<usize> = logs.iter().map(EventLog::len).collect();
    let mean_count = if counts.is_empty() {
        0.0
    } else {
        counts.iter().sum::<usize>() as f64 / counts.len() as f64
    };
    let reduction = if baseline == 0 { 0.0 } else { 1.0 - mean_count / baseline as f64 };
    TriggerReport {
        baseline,
        counts,
        mean_count,
        reduction,
    }
}

/// One verdict line of the certificate report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    /// Config path or agent the check refers to.
    pub subject: String,
    pub pass: bool,
    /// Mandatory checks decide the exit status.
    pub mandatory: bool,
    pub residual: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub mode: String,
    pub dim: usize,
    pub agents: usize,
    pub lambda: f64,
    pub lambda1: Option<f64>,
    pub lambda1_tilde: Option<f64>,
    /// γ̄ (no delay) or γ̄′ (delayed).
    pub gamma_bar: f64,
    pub gamma: f64,
    pub gamma_certified: bool,
    pub feasible: bool,
    #[serde(rename = "M")]
    pub m: f64,
    pub alpha: f64,
    /// Energy floor τ (no delay) or minimum power β (delayed).
    pub energy_parameter: f64,
    pub checks: Vec<AssumptionCheck>,
    /// All mandatory checks pass.
    pub ok: bool,
}

impl CertificateReport {
    /// Recomputes γ̄ from the stored scalars; used as a consistency check.
    pub fn recomputed_gamma_bar(&self, delta: f64, psi2: f64) -> Option<f64> {
        let (a, e, l) = (self.alpha, self.energy_parameter, self.lambda);
        match (self.lambda1, self.lambda1_tilde) {
            (Some(l1), _) if l1 > 0.0 => Some(((2.0 * a * e - psi2.ln() - l1.ln() - l * delta) / delta).min(GAMMA_BAR_CAP)),
            (_, Some(l1t)) if l1t > 0.0 => {
                Some((((2.0 * a * e - l) * delta - psi2.ln() - l1t.ln()) / (2.0 * delta)).min(GAMMA_BAR_CAP))
            }
            (Some(_), _) | (_, Some(_)) => Some(GAMMA_BAR_CAP),
            _ => None,
        }
    }
}

fn check(name: &str, subject: impl Into<String>, pass: bool, mandatory: bool, residual: Option<f64>, detail: String) -> AssumptionCheck {
    AssumptionCheck {
        name: name.into(),
        subject: subject.into(),
        pass,
        mandatory,
        residual,
        detail,
    }
}

/// Full certificate with every assumption verdict. `strict` makes the
/// matching condition mandatory.
pub fn certify_problem<T: Scalar>(problem: &Problem<T>, strict: bool) -> Result<CertificateReport> {
    let sys = &problem.sys;
    let params = &problem.trigger;
    let lambda = compute_lambda(sys, &params.p)?;
    let mut checks = Vec::new();

    for (i, a) in sys.agents.iter().enumerate() {
        let subject = format!("agent.{}", i + 1);
        let m = model::check_matching(a, &sys.leader)?;
        checks.push(check(
            "matching",
            subject.clone(),
            m.pass,
            strict,
            Some(m.residual.to_f64_lossy()),
            "Xi C0 = C Xi and Xi D0 = D Xi".into(),
        ));
        let e = model::check_embedding(a)?;
        checks.push(check(
            "embedding",
            subject.clone(),
            e.pass,
            true,
            Some(e.residual.to_f64_lossy()),
            format!("rank(Phi) = {} of {}, |Theta Phi - I| residual", e.rank, a.n),
        ));
        let ratio = model::sampled_lipschitz_ratio(&a.f, a.n, 2000, 10.0, 0x1234 + i as u64).to_f64_lossy();
        checks.push(check(
            "lipschitz",
            subject.clone(),
            ratio <= 1.0 + 1e-12,
            true,
            Some(ratio),
            format!("sampled |f(z)|/(L|z|) with L = {}", a.f.lipschitz().to_f64_lossy()),
        ));
        let scale = (linalg::norm(sys.agent_slice(&problem.y0, i)).to_f64_lossy() / (sys.m as f64).sqrt()).max(1e-3);
        let ld = sys.sampled_diffusion_bound(i, scale, 500, 0x5678 + i as u64).to_f64_lossy();
        checks.push(check(
            "diffusion bound",
            subject,
            ld.is_finite(),
            false,
            Some(ld),
            "sampled L_D, informational".into(),
        ));
    }

    let report = match problem.mode {
        ControlMode::NoDelay | ControlMode::Uncontrolled => {
            let tau = energy_floor(sys);
            let lambda1 = compute_lambda1(sys, &params.p, sys.alpha, tau)?;
            let cert = certify_no_delay(lambda, lambda1, params, sys.alpha, tau)?;
            let gains_ok = sys.gains.iter().all(|&k| k < T::zero());
            checks.push(check(
                "negative gains",
                "agent.*.gain",
                gains_ok,
                matches!(problem.mode, ControlMode::NoDelay),
                None,
                "no-delay impulsive gains k_i < 0".into(),
            ));
            checks.push(check(
                "energy floor",
                "agent.*.energy",
                tau >= T::zero(),
                true,
                Some(tau.to_f64_lossy()),
                "tau_i(t) >= tau for all t".into(),
            ));
            let slack = (T::of(2.0) * sys.alpha * tau - params.psi2.ln() - lambda1.ln() - lambda * params.delta).to_f64_lossy();
            checks.push(check(
                "no-delay certificate",
                "trigger",
                cert.feasible,
                true,
                Some(slack),
                "2 alpha tau - ln psi2 - ln lambda1 - lambda Delta > 0".into(),
            ));
            (cert, Some(lambda1.to_f64_lossy()), None, tau)
        }
        ControlMode::Delayed { actuation_delay } => {
            let beta = min_power(sys);
            let l1t = compute_lambda1_tilde(sys, &params.p)?;
            let cert = certify_delayed(lambda, l1t, params, sys.alpha, beta)?;
            checks.push(check(
                "delay bound",
                "control.actuation_delay",
                actuation_delay >= T::zero() && actuation_delay < params.delta,
                true,
                Some((params.delta - actuation_delay).to_f64_lossy()),
                "0 <= tau_s < Delta".into(),
            ));
            checks.push(check(
                "minimum power",
                "agent.*.energy",
                beta >= T::zero(),
                true,
                Some(beta.to_f64_lossy()),
                "tau_i(t) >= beta_i t".into(),
            ));
            let slack = ((T::of(2.0) * sys.alpha * beta - lambda) * params.delta - params.psi2.ln() - l1t.ln()).to_f64_lossy();
            checks.push(check(
                "delayed certificate",
                "trigger",
                cert.feasible,
                true,
                Some(slack),
                "(2 alpha beta - lambda) Delta - ln psi2 - ln lambda1_tilde > 0".into(),
            ));
            (cert, None, Some(l1t.to_f64_lossy()), beta)
        }
    };
    let (cert, lambda1, lambda1_tilde, energy) = report;
    checks.push(check(
        "gamma certified",
        "trigger.gamma",
        cert.gamma_certified,
        true,
        Some((cert.gamma_bar - cert.gamma).to_f64_lossy()),
        format!("0 < gamma <= gamma_bar = {}", cert.gamma_bar.to_f64_lossy()),
    ));
    let ok = checks.iter().all(|c| c.pass || !c.mandatory);
    Ok(CertificateReport {
        mode: problem.mode.name().into(),
        dim: sys.dim,
        agents: sys.n_agents,
        lambda: lambda.to_f64_lossy(),
        lambda1,
        lambda1_tilde,
        gamma_bar: cert.gamma_bar.to_f64_lossy(),
        gamma: cert.gamma.to_f64_lossy(),
        gamma_certified: cert.gamma_certified,
        feasible: cert.feasible,
        m: cert.m.to_f64_lossy(),
        alpha: sys.alpha.to_f64_lossy(),
        energy_parameter: energy.to_f64_lossy(),
        checks,
        ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::tests::linear_system;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(p: Matrix<f64>) -> TriggerParams<f64> {
        TriggerParams {
            delta: 0.009,
            psi1: 1.4,
            psi2: 1.001,
            gamma: 0.0019,
            p,
        }
    }

    fn scalar_sys(gain: f64) -> StackedSystem<f64> {
        linear_system(Matrix::zeros(1, 1), Matrix::zeros(1, 1), gain)
    }

    /// `P^{-1/2} S P^{-1/2}` through nalgebra's symmetric eigensolver.
    fn oracle_max(s: &Matrix<f64>, p: &Matrix<f64>) -> f64 {
        let n = s.rows();
        let sn = nalgebra::DMatrix::from_row_slice(n, n, s.as_slice());
        let pn = nalgebra::DMatrix::from_row_slice(n, n, p.as_slice());
        let e = pn.symmetric_eigen();
        let inv_sqrt = nalgebra::DMatrix::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v.sqrt()));
        let r = &e.eigenvectors * inv_sqrt * e.eigenvectors.transpose();
        let c = &r * sn * &r;
        c.symmetric_eigen().eigenvalues.max()
    }

    fn coupled_sys() -> StackedSystem<f64> {
        use crate::model::{build_stacked, AgentSpec, LeaderSpec, NonlinearitySpec, SineTerm};
        use crate::topology::{EnergyProfile, TopologySpec};
        let c = Matrix::from_rows(&[vec![0.0, 1.0], vec![-2.0, 0.3]]).unwrap();
        let d = Matrix::from_diag(&[0.2, 0.1]);
        let mk = |g: f64| AgentSpec {
            n: 2,
            c: c.clone(),
            d: d.clone(),
            f: NonlinearitySpec::sine_bank(vec![SineTerm { output: 1, coef: 0.5, freq: 0.3, input: 0 }]),
            xi: Matrix::identity(2),
            phi: Matrix::identity(2),
            theta: Matrix::identity(2),
            gain: g,
            offset: vec![0.0; 2],
            energy: EnergyProfile::new(0.01, 0.004).unwrap(),
        };
        let leader = LeaderSpec { n0: 2, c0: c.clone(), d0: d.clone(), f: NonlinearitySpec::zero() };
        let h = Matrix::from_rows(&[vec![-1.0, 0.0], vec![1.0, -2.0]]).unwrap();
        let topo = TopologySpec::from_matrix(h, 3.0).unwrap();
        build_stacked(&leader, &[mk(-0.4), mk(-0.3)], &topo, 2).unwrap()
    }

    #[test]
    fn lambda_trivial_case() {
        let sys = scalar_sys(-0.5);
        assert_abs_diff_eq!(compute_lambda(&sys, &Matrix::identity(1)).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn lambda1_examples() {
        let sys = scalar_sys(-0.5);
        assert_abs_diff_eq!(compute_lambda1(&sys, &Matrix::identity(1), 1.0, 0.0).unwrap(), 0.25, epsilon = 1e-15);
        let tiny = scalar_sys(-0.0);
        assert_eq!(compute_lambda1(&tiny, &Matrix::identity(1), 1.0, 0.0).unwrap(), 1.0);
        let sys = scalar_sys(0.55);
        assert_abs_diff_eq!(compute_lambda1_tilde(&sys, &Matrix::identity(1)).unwrap(), 0.3025, epsilon = 1e-15);
        assert_eq!(compute_lambda1_tilde(&tiny, &Matrix::identity(1)).unwrap(), 0.0);
    }

    #[test]
    fn rejects_indefinite_p() {
        let sys = scalar_sys(-0.5);
        let err = compute_lambda(&sys, &Matrix::from_diag(&[-1.0])).unwrap_err();
        assert!(matches!(err, PeticError::Config { .. }));
    }

    #[test]
    fn certificate_examples() {
        // boundary: ψ₂ = 1, λ₁ = 1, τ = 0, λΔ = 0
        let mut p = params(Matrix::identity(1));
        p.psi2 = 1.0;
        let c = certify_no_delay(0.0, 1.0, &p, 12.34, 0.0).unwrap();
        assert_eq!(c.gamma_bar, 0.0);
        assert!(!c.feasible);

        // constants as printed alongside the bundled no-delay scenario
        let p = params(Matrix::identity(24).scale(0.95));
        let c = certify_no_delay(10.99, 0.98, &p, 12.34, 0.003).unwrap();
        let oracle = (2.0 * 12.34 * 0.003 - 1.001f64.ln() - 0.98f64.ln() - 10.99 * 0.009) / 0.009;
        assert_abs_diff_eq!(c.gamma_bar, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(c.m, 1.4 * ((10.99 + 0.0019) * 0.009f64).exp(), epsilon = 1e-12);

        let mut p = params(Matrix::identity(1));
        p.psi2 = 1.0;
        let c = certify_delayed(2.0, 1.0, &p, 1.0, 1.0).unwrap();
        assert_eq!(c.gamma_bar, 0.0);
        assert!(!c.feasible);
    }

    #[test]
    fn annihilating_jump_is_capped() {
        let p = params(Matrix::identity(1));
        let c = certify_no_delay(5.0, 0.0, &p, 1.0, 0.0).unwrap();
        assert_eq!(c.gamma_bar, GAMMA_BAR_CAP);
        assert!(c.feasible && c.gamma_certified);
        let c = certify_delayed(5.0, 0.0, &p, 1.0, 0.0).unwrap();
        assert_eq!(c.gamma_bar, GAMMA_BAR_CAP);
    }

    #[test]
    fn delayed_gamma_bar_grows_with_delta() {
        let base = TriggerParams { delta: 0.09, psi1: 1.2, psi2: 1.1, gamma: 0.03, p: Matrix::identity(1) };
        let f = |delta: f64| {
            let mut p = base.clone();
            p.delta = delta;
            certify_delayed(8.19, 1.16, &p, 2000.0, 0.0047).unwrap().gamma_bar
        };
        for &d in &[0.01, 0.05, 0.09, 0.2] {
            let h = 1e-6;
            let fd = (f(d + h) - f(d - h)) / (2.0 * h);
            assert!(fd > 0.0, "d = {d}, fd = {fd}");
        }
    }

    #[test]
    fn generalized_eigenvalues_match_oracle() {
        let sys = coupled_sys();
        let p = Matrix::from_rows(&[
            vec![2.0, 0.3, 0.0, 0.1],
            vec![0.3, 1.5, 0.2, 0.0],
            vec![0.0, 0.2, 1.0, 0.1],
            vec![0.1, 0.0, 0.1, 0.8],
        ])
        .unwrap();
        let s = bracket_matrix(&sys, &p).unwrap();
        assert_abs_diff_eq!(compute_lambda(&sys, &p).unwrap(), oracle_max(&s, &p).max(0.0), epsilon = 1e-9);
        let a = &Matrix::identity(4).scale((3.0f64 * 0.01).exp()) + &sys.coupling;
        let s1 = a.transpose().matmul(&p.matmul(&a).unwrap()).unwrap();
        assert_abs_diff_eq!(compute_lambda1(&sys, &p, 3.0, 0.01).unwrap(), oracle_max(&s1, &p), epsilon = 1e-9);
    }

    #[test]
    fn lipschitz_term_uses_agent_dimensions() {
        // L = 0.5 · 0.3 per agent enters as L² on Θᵀ Θ
        let sys = coupled_sys();
        let s = bracket_matrix(&sys, &Matrix::identity(4)).unwrap();
        let mut no_l = sys.clone();
        no_l.lipschitz = vec![0.0, 0.0];
        let s0 = bracket_matrix(&no_l, &Matrix::identity(4)).unwrap();
        let diff = &s - &s0;
        assert_abs_diff_eq!(diff[(0, 0)], 0.15f64.powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(diff[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bound_curve_passes_with_margin_slack() {
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let (m, gamma, e0) = (2.5, 0.3, 4.0);
        let curve: Vec<f64> = times.iter().map(|t| m * (-gamma * t).exp() * e0).collect();
        let v = decay_check(&times, &curve, e0, gamma, m, 1.5).unwrap();
        assert!(v.pass);
        assert_abs_diff_eq!(v.margin, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v.fitted_exponent.unwrap(), -0.3, epsilon = 1e-12);
    }

    #[test]
    fn decay_check_edges() {
        let v = decay_check(&[0.0, 1.0], &[0.0, 0.0], 0.0, 0.1, 2.0, 1.5).unwrap();
        assert!(v.pass);
        let grow = decay_check(&[0.0, 1.0, 2.0], &[1.0, 5.0, 50.0], 1.0, 0.1, 2.0, 1.5).unwrap();
        assert!(!grow.pass);
        assert_eq!(grow.worst_t, 2.0);
        assert!(matches!(decay_check::<f64>(&[], &[], 1.0, 0.1, 1.0, 1.5), Err(PeticError::Usage(_))));
    }

    #[test]
    fn trigger_report_examples() {
        let r = trigger_report::<f64>(&[EventLog::default(), EventLog::default()], 0.009, 5.0);
        assert_eq!(r.baseline, 555);
        assert_eq!(r.reduction, 1.0);
        let r = trigger_report::<f64>(&[EventLog::default()], 0.09, 5.0);
        assert_eq!(r.baseline, 55);
    }

    #[test]
    fn report_is_internally_consistent() {
        let sys = coupled_sys();
        let trigger = TriggerParams { delta: 0.01, psi1: 1.2, psi2: 1.01, gamma: 0.01, p: Matrix::identity(4) };
        let sim = crate::simulator::SimParams { step: 0.001, horizon: 1.0, n_runs: 1, master_seed: 0, record_stride: 1, init_noise: 0.0 };
        let problem = Problem::new(sys, trigger, ControlMode::NoDelay, sim, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let r = certify_problem(&problem, false).unwrap();
        let g = r.recomputed_gamma_bar(0.01, 1.01).unwrap();
        assert!((g - r.gamma_bar).abs() <= 1e-12 * g.abs().max(1.0));
        assert!(r.checks.iter().any(|c| c.name == "no-delay certificate"));
        assert!(r.lambda >= 0.0);
        let json = serde_json::to_string(&r).unwrap();
        let back: CertificateReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn jump_constants_are_scale_invariant(c in prop_oneof![Just(0.5f64), Just(2.0)], alpha in 0.1f64..5.0, tau in 0.0f64..0.1) {
            let sys = coupled_sys();
            let p = Matrix::from_diag(&[1.0, 0.7, 1.3, 0.9]);
            let cp = p.scale(c);
            let l1 = compute_lambda1(&sys, &p, alpha, tau).unwrap();
            prop_assert!((l1 - compute_lambda1(&sys, &cp, alpha, tau).unwrap()).abs() <= 1e-10 * l1.max(1.0));
            let lt = compute_lambda1_tilde(&sys, &p).unwrap();
            prop_assert!((lt - compute_lambda1_tilde(&sys, &cp).unwrap()).abs() <= 1e-10 * lt.max(1.0));
            let tp = TriggerParams { delta: 0.01, psi1: 1.2, psi2: 1.01, gamma: 0.01, p: p.clone() };
            let tcp = TriggerParams { p: cp, ..tp.clone() };
            let m1 = certify_no_delay(1.0, l1, &tp, alpha, tau).unwrap().m;
            let m2 = certify_no_delay(1.0, l1, &tcp, alpha, tau).unwrap().m;
            prop_assert!((m1 - m2).abs() <= 1e-12 * m1);
        }

        #[test]
        fn lambda_shifts_by_p_squared(c in 0.2f64..3.0) {
            // With C = D = 0 and P = cI the bracket is c² I + L term; λ = c + L²/c.
            let sys = linear_system(Matrix::zeros(2, 2), Matrix::zeros(2, 2), -0.5);
            let l = compute_lambda(&sys, &Matrix::identity(2).scale(c)).unwrap();
            prop_assert!((l - c).abs() < 1e-12);
        }

        #[test]
        fn lambda_is_nonnegative(a in -3f64..3.0, d in -1f64..1.0, p in 0.1f64..2.0) {
            let sys = linear_system(Matrix::from_diag(&[a]), Matrix::from_diag(&[d]), -0.5);
            prop_assert!(compute_lambda(&sys, &Matrix::from_diag(&[p])).unwrap() >= 0.0);
        }

        #[test]
        fn feasibility_is_monotone_in_alpha(alpha in 0.0f64..50.0, bump in 0.0f64..50.0, l in 0.0f64..20.0, l1 in 0.1f64..2.0) {
            let p = params(Matrix::identity(1));
            let a = certify_no_delay(l, l1, &p, alpha, 0.003).unwrap();
            let b = certify_no_delay(l, l1, &p, alpha + bump, 0.003).unwrap();
            prop_assert!(b.gamma_bar >= a.gamma_bar);
            prop_assert!(!a.feasible || b.feasible);
        }
    }
}
