//! Euler–Maruyama integration of the stacked virtual system with impulses at
//! triggered instants, plus Monte Carlo ensembles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::control::{self, ControlMode, EventLog, TriggerParams};
use crate::error::{PeticError, Result};
use crate::linalg;
use crate::model::StackedSystem;
use crate::scalar::Scalar;

/// `|y|` above this declares divergence.
pub const BLOWUP_NORM: f64 = 1e12;

/// More than this fraction of diverged runs fails the ensemble.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams<T> {
    pub step: T,
    pub horizon: T,
    pub n_runs: usize,
    pub master_seed: u64,
    pub record_stride: usize,
    /// Standard deviation of an optional Gaussian perturbation of `y(0)`; 0 disables it.
    pub init_noise: T,
}

/// Integer `a / h` when `h` divides `a` up to rounding noise.
pub fn grid_steps<T: Scalar>(a: T, h: T) -> Option<usize> {
    let r = (a / h).to_f64_lossy();
    let n = r.round();
    let tol = (64.0 * T::epsilon().to_f64_lossy()).max(1e-9);
    if n >= 0.0 && (r - n).abs() <= tol * n.max(1.0) {
        Some(n as usize)
    } else {
        None
    }
}

impl<T: Scalar> SimParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > T::zero()) || !self.step.is_finite() {
            return Err(PeticError::config("sim.step", "integrator step must be > 0"));
        }
        if !(self.horizon > T::zero()) || !self.horizon.is_finite() {
            return Err(PeticError::config("sim.horizon", "horizon must be > 0"));
        }
        if self.n_runs == 0 {
            return Err(PeticError::config("sim.runs", "at least one run required"));
        }
        if self.record_stride == 0 {
            return Err(PeticError::config("sim.record_stride", "record stride must be ≥ 1"));
        }
        if !(self.init_noise >= T::zero()) {
            return Err(PeticError::config("sim.init_noise", "perturbation scale must be ≥ 0"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.step).to_f64_lossy().round() as usize
    }

    /// Number of integrator steps per sampling period Δ.
    pub fn period_steps(&self, delta: T) -> Result<usize> {
        match grid_steps(delta, self.step) {
            Some(n) if n >= 1 => Ok(n),
            _ => Err(PeticError::config(
                "sim.step",
                format!("sampling period Δ = {delta} is not an integer multiple of step h = {}", self.step),
            )),
        }
    }

    /// Number of integrator steps in the actuation delay.
    pub fn delay_steps(&self, tau_s: T) -> Result<usize> {
        grid_steps(tau_s, self.step).ok_or_else(|| {
            PeticError::config(
                "sim.step",
                format!("actuation delay τ_s = {tau_s} is not an integer multiple of step h = {}", self.step),
            )
        })
    }
}

/// When impulses fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Trigger checks on the Δ-grid.
    EventTriggered,
    /// Impulse at every Δ instant, the fixed-period baseline.
    FixedPeriod,
}

/// A validated, ready-to-simulate configuration.
#[derive(Debug, Clone)]
pub struct Problem<T> {
    pub sys: StackedSystem<T>,
    pub trigger: TriggerParams<T>,
    pub mode: ControlMode<T>,
    pub sim: SimParams<T>,
    pub y0: Vec<T>,
    pub schedule: Schedule,
}

impl<T: Scalar> Problem<T> {
    pub fn new(
        sys: StackedSystem<T>,
        trigger: TriggerParams<T>,
        mode: ControlMode<T>,
        sim: SimParams<T>,
        y0: Vec<T>,
    ) -> Result<Self> {
        let p = Problem {
            sys,
            trigger,
            mode,
            sim,
            y0,
            schedule: Schedule::EventTriggered,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.trigger.validate()?;
        self.sim.validate()?;
        if self.trigger.p.shape() != (self.sys.dim, self.sys.dim) {
            return Err(PeticError::config(
                "trigger.p",
                format!("P is {:?}, expected {}x{}", self.trigger.p.shape(), self.sys.dim, self.sys.dim),
            ));
        }
        if self.y0.len() != self.sys.dim {
            return Err(PeticError::Dimension(format!(
                "initial virtual state has length {}, expected {}",
                self.y0.len(),
                self.sys.dim
            )));
        }
        self.sim.period_steps(self.trigger.delta)?;
        match self.mode {
            ControlMode::NoDelay => {
                for (i, &k) in self.sys.gains.iter().enumerate() {
                    if !(k < T::zero()) {
                        return Err(PeticError::config(
                            format!("agent.{}.gain", i + 1),
                            format!("no-delay impulsive gain must be negative, got {k}"),
                        ));
                    }
                }
            }
            ControlMode::Delayed { actuation_delay } => {
                if !(actuation_delay >= T::zero()) || !(actuation_delay < self.trigger.delta) {
                    return Err(PeticError::config(
                        "control.actuation_delay",
                        format!(
                            "actuation delay must satisfy 0 ≤ τ_s < Δ (delay bound), got τ_s = {actuation_delay}, Δ = {}",
                            self.trigger.delta
                        ),
                    ));
                }
                self.sim.delay_steps(actuation_delay)?;
            }
            ControlMode::Uncontrolled => {}
        }
        Ok(())
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    /// Fixed-period update count over the horizon, `floor(T/Δ)`.
    pub fn baseline_updates(&self) -> usize {
        let r = (self.sim.horizon / self.trigger.delta).to_f64_lossy();
        (r + 1e-9).floor() as usize
    }
}

/// Recorded path of one run. Samples are right-continuous: the value stored at
/// an event instant is the post-impulse state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub dim: usize,
    /// Integrator step index of each sample.
    pub steps: Vec<usize>,
    pub times: Vec<T>,
    /// Row-major `times.len() × dim`.
    pub states: Vec<T>,
    pub norm_sq: Vec<T>,
    pub events: EventLog<T>,
    pub seed: u64,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[T] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// Per-agent reconstructed error states `z_i = Θ_i y_i` at sample `k`.
    pub fn z_at(&self, sys: &StackedSystem<T>, k: usize) -> Vec<Vec<T>> {
        sys.project_all(self.state(k))
    }

    /// `τ_i(t)` for every sample and agent.
    pub fn energy_trace(&self, sys: &StackedSystem<T>) -> Vec<Vec<T>> {
        let profiles = sys.energy_profiles();
        self.times
            .iter()
            .map(|&t| profiles.iter().map(|p| p.tau(t)).collect())
            .collect()
    }

    fn push(&mut self, step: usize, t: T, y: &[T]) {
        self.steps.push(step);
        self.times.push(t);
        self.states.extend_from_slice(y);
        self.norm_sq.push(linalg::norm_sq(y));
    }
}

/// A finished or aborted run. On blow-up the trajectory holds everything up to
/// the last finite sample.
#[derive(Debug)]
pub struct RunOutcome<T> {
    pub trajectory: Trajectory<T>,
    pub failure: Option<PeticError>,
}

impl<T> RunOutcome<T> {
    pub fn diverged(&self) -> bool {
        matches!(self.failure, Some(PeticError::BlowUp { .. }))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of run `index` under `master`.
pub fn run_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ splitmix64(index as u64))
}

/// Wiener increments keyed by (run seed, step index), independent of how the
/// path is consumed.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(run_seed: u64) -> Self {
        NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(run_seed),
        }
    }

    /// Standard normal draw for step `k`.
    pub fn normal(&mut self, k: u64) -> f64 {
        self.rng.set_stream(k);
        self.rng.set_word_pos(0);
        self.rng.sample(StandardNormal)
    }

    /// `dW ~ N(0, h)` for step `k`.
    pub fn increment<T: Scalar>(&mut self, k: u64, h: T) -> T {
        T::of(self.normal(k)) * h.sqrt()
    }
}

/// One explicit Euler–Maruyama step `y + drift(y)·h + diffusion(y)·dW`.
pub fn em_step<T: Scalar>(y: &[T], t: T, h: T, dw: T, sys: &StackedSystem<T>) -> Result<Vec<T>> {
    let mut drift = vec![T::zero(); sys.dim];
    let mut diff = vec![T::zero(); sys.dim];
    let mut out = vec![T::zero(); sys.dim];
    em_step_into(y, t + h, h, dw, sys, &mut drift, &mut diff, &mut out)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn em_step_into<T: Scalar>(
    y: &[T],
    t_next: T,
    h: T,
    dw: T,
    sys: &StackedSystem<T>,
    drift: &mut [T],
    diff: &mut [T],
    out: &mut [T],
) -> Result<()> {
    sys.drift_into(y, drift);
    sys.diffusion_into(y, diff);
    for i in 0..y.len() {
        out[i] = y[i] + drift[i] * h + diff[i] * dw;
    }
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PeticError::BlowUp {
            t: t_next.to_f64_lossy(),
            detail: "non-finite state after integrator step".into(),
        })
    }
}

fn initial_state<T: Scalar>(problem: &Problem<T>, seed: u64) -> Vec<T> {
    let mut y = problem.y0.clone();
    if problem.sim.init_noise > T::zero() {
        let mut noise = NoiseSource::new(seed ^ 0xA5A5_A5A5_A5A5_A5A5);
        for (i, v) in y.iter_mut().enumerate() {
            *v += problem.sim.init_noise * T::of(noise.normal(i as u64));
        }
    }
    y
}

fn blowup_detail<T: Scalar>(log: &EventLog<T>, what: &str) -> String {
    match log.events.last() {
        Some(e) => format!(
            "{what}; last event s = {} at t = {}, W ratio {}",
            e.index,
            e.t.to_f64_lossy(),
            e.w_ratio.to_f64_lossy()
        ),
        None => format!("{what}; no events before divergence"),
    }
}

/// Simulates one path. Never panics on divergence: the failure is returned
/// alongside the partial trajectory.
pub fn simulate<T: Scalar>(problem: &Problem<T>, seed: u64) -> RunOutcome<T> {
    let sys = &problem.sys;
    let sim = &problem.sim;
    let h = sim.step;
    let n_steps = sim.n_steps();
    let period = sim.period_steps(problem.trigger.delta).expect("validated problem");
    let delay = match problem.mode {
        ControlMode::Delayed { actuation_delay } => sim.delay_steps(actuation_delay).expect("validated problem"),
        _ => 0,
    };
    let controlled = !matches!(problem.mode, ControlMode::Uncontrolled);

    let mut traj = Trajectory {
        dim: sys.dim,
        steps: Vec::with_capacity(n_steps / sim.record_stride + 2),
        times: Vec::new(),
        states: Vec::new(),
        norm_sq: Vec::new(),
        events: EventLog::default(),
        seed,
    };

    let mut y = initial_state(problem, seed);
    traj.push(0, T::zero(), &y);

    // ring[k % len] holds the pre-impulse state at step k
    let ring_len = delay + 1;
    let mut ring = vec![vec![T::zero(); sys.dim]; ring_len];
    ring[0].copy_from_slice(&y);

    let mut w_ref = control::lyapunov_w(T::zero(), &y, &problem.trigger);
    let mut ref_step = 0usize;
    let mut noise = NoiseSource::new(seed);
    let (mut drift, mut diff, mut next) = (vec![T::zero(); sys.dim], vec![T::zero(); sys.dim], vec![T::zero(); sys.dim]);
    let threshold = T::of(BLOWUP_NORM);

    for k in 1..=n_steps {
        let t = T::of(k as f64) * h;
        let dw = noise.increment((k - 1) as u64, h);
        if let Err(e) = em_step_into(&y, t, h, dw, sys, &mut drift, &mut diff, &mut next) {
            let failure = match e {
                PeticError::BlowUp { t, detail } => PeticError::BlowUp {
                    t,
                    detail: blowup_detail(&traj.events, &detail),
                },
                other => other,
            };
            return RunOutcome { trajectory: traj, failure: Some(failure) };
        }
        std::mem::swap(&mut y, &mut next);
        ring[k % ring_len].copy_from_slice(&y);

        if controlled && (k - ref_step).is_multiple_of(period) {
            let w = control::lyapunov_w(t, &y, &problem.trigger);
            let fire = match problem.schedule {
                Schedule::FixedPeriod => true,
                Schedule::EventTriggered => {
                    match control::should_trigger(w, w_ref, traj.events.is_empty(), &problem.trigger) {
                        Ok(f) => f,
                        Err(e) => return RunOutcome { trajectory: traj, failure: Some(e) },
                    }
                }
            };
            if fire {
                let ratio = if w_ref > T::zero() { w / w_ref } else { T::infinity() };
                y = match problem.mode {
                    ControlMode::NoDelay => control::apply_no_delay(&y, t, sys),
                    ControlMode::Delayed { .. } => control::apply_delayed(&ring[(k - delay) % ring_len], t, sys),
                    ControlMode::Uncontrolled => unreachable!(),
                };
                traj.events.push(k, h, period, ratio);
                w_ref = control::lyapunov_w(t, &y, &problem.trigger);
                ref_step = k;
            }
        }

        let norm_sq = linalg::norm_sq(&y);
        if !(norm_sq.sqrt() <= threshold) {
            traj.push(k, t, &y);
            let failure = PeticError::BlowUp {
                t: t.to_f64_lossy(),
                detail: blowup_detail(&traj.events, &format!("|y| = {:e} exceeds {BLOWUP_NORM:e}", norm_sq.sqrt().to_f64_lossy())),
            };
            return RunOutcome { trajectory: traj, failure: Some(failure) };
        }
        if k.is_multiple_of(sim.record_stride) || k == n_steps {
            traj.push(k, t, &y);
        }
    }
    RunOutcome { trajectory: traj, failure: None }
}

/// Simulates one path, turning divergence into an error.
pub fn run_trajectory<T: Scalar>(problem: &Problem<T>, seed: u64) -> Result<Trajectory<T>> {
    let out = simulate(problem, seed);
    match out.failure {
        None => Ok(out.trajectory),
        Some(e) => Err(e),
    }
}

/// All runs of the ensemble in run order, executed in parallel.
pub fn run_ensemble_outcomes<T: Scalar>(problem: &Problem<T>) -> Vec<RunOutcome<T>> {
    let master = problem.sim.master_seed;
    (0..problem.sim.n_runs)
        .into_par_iter()
        .map(|i| simulate(problem, run_seed(master, i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats<T> {
    pub times: Vec<T>,
    /// Sample mean of `|y(t)|²` over the included runs.
    pub mean_sq: Vec<T>,
    pub runs: usize,
    pub excluded: usize,
    /// Event count of each included run.
    pub counts: Vec<usize>,
    pub gap_mean: Option<T>,
    pub gap_min: Option<T>,
    pub gap_max: Option<T>,
    pub zeno_violations: usize,
    pub first_error: Option<String>,
    pub logs: Vec<EventLog<T>>,
}

impl<T: Scalar> EnsembleStats<T> {
    /// Reduces outcomes by sum-then-divide in run order. Diverged runs are excluded.
    pub fn from_outcomes(outcomes: &[RunOutcome<T>], period_steps: usize) -> Self {
        let mut included = outcomes.iter().filter(|o| o.failure.is_none());
        let first_error = outcomes.iter().find_map(|o| o.failure.as_ref().map(|e| e.to_string()));
        let zeno_violations = outcomes.iter().map(|o| o.trajectory.events.zeno_violations(period_steps)).sum();
        let mut stats = EnsembleStats {
            times: Vec::new(),
            mean_sq: Vec::new(),
            runs: outcomes.len(),
            excluded: outcomes.iter().filter(|o| o.failure.is_some()).count(),
            counts: Vec::new(),
            gap_mean: None,
            gap_min: None,
            gap_max: None,
            zeno_violations,
            first_error,
            logs: Vec::new(),
        };
        let Some(first) = included.next() else {
            return stats;
        };
        stats.times = first.trajectory.times.clone();
        let mut sum = first.trajectory.norm_sq.clone();
        let mut gaps = Vec::new();
        let mut absorb = |o: &RunOutcome<T>, stats: &mut EnsembleStats<T>| {
            stats.counts.push(o.trajectory.events.len());
            gaps.extend(o.trajectory.events.events.iter().map(|e| e.gap));
            stats.logs.push(o.trajectory.events.clone());
        };
        absorb(first, &mut stats);
        for o in included {
            for (s, &v) in sum.iter_mut().zip(&o.trajectory.norm_sq) {
                *s += v;
            }
            absorb(o, &mut stats);
        }
        let n = T::of(stats.counts.len() as f64);
        stats.mean_sq = sum.into_iter().map(|s| s / n).collect();
        if !gaps.is_empty() {
            let total: T = gaps.iter().copied().sum();
            stats.gap_mean = Some(total / T::of(gaps.len() as f64));
            stats.gap_min = gaps.iter().copied().reduce(T::min);
            stats.gap_max = gaps.iter().copied().reduce(T::max);
        }
        stats
    }

    pub fn included(&self) -> usize {
        self.runs - self.excluded
    }

    pub fn mean_count(&self) -> Option<T> {
        if self.counts.is_empty() {
            None
        } else {
            Some(T::of(self.counts.iter().sum::<usize>() as f64 / self.counts.len() as f64))
        }
    }

    pub fn exclusion_exceeded(&self) -> bool {
        self.excluded as f64 > MAX_EXCLUDED_FRACTION * self.runs as f64
    }
}

/// Runs the ensemble; more than 10% diverged runs is an error.
pub fn run_ensemble<T: Scalar>(problem: &Problem<T>) -> Result<EnsembleStats<T>> {
    let period = problem.sim.period_steps(problem.trigger.delta)?;
    let stats = EnsembleStats::from_outcomes(&run_ensemble_outcomes(problem), period);
    if stats.exclusion_exceeded() || stats.included() == 0 {
        return Err(PeticError::EnsembleFailure {
            excluded: stats.excluded,
            runs: stats.runs,
            first_error: stats.first_error,
        });
    }
    Ok(stats)
}
