//! Leader/follower dynamics, error coordinates, the virtual-state embedding,
//! and assembly of the stacked `mN`-dimensional virtual system.
//!
//! Follower `i` with state `x_i ∈ R^{n_i}` tracks the leader via the error
//! `z_i = x_i - Ξ_i x_0 - x̄_i*` and is lifted into the common virtual space
//! by `y_i = Φ_i z_i`, recovered exactly as `z_i = Θ_i y_i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{PeticError, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;
use crate::topology::{self, EnergyProfile, TopologySpec};

/// Tolerance for the algebraic identity checks (matching, embedding).
pub const IDENTITY_TOL: f64 = 1e-10;

/// `output[output] += coef · sin(freq · input[input])`, indices zero-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineTerm<T> {
    pub output: usize,
    pub coef: T,
    pub freq: T,
    pub input: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearityKind<T> {
    Zero,
    SineBank(Vec<SineTerm<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearitySpec<T> {
    pub kind: NonlinearityKind<T>,
    pub lipschitz_override: Option<T>,
}

impl<T: Scalar> NonlinearitySpec<T> {
    pub fn zero() -> Self {
        NonlinearitySpec {
            kind: NonlinearityKind::Zero,
            lipschitz_override: None,
        }
    }

    pub fn sine_bank(terms: Vec<SineTerm<T>>) -> Self {
        NonlinearitySpec {
            kind: NonlinearityKind::SineBank(terms),
            lipschitz_override: None,
        }
    }

    pub fn with_lipschitz(mut self, l: T) -> Self {
        self.lipschitz_override = Some(l);
        self
    }

    pub fn validate(&self, dim: usize, path: &str) -> Result<()> {
        if let NonlinearityKind::SineBank(terms) = &self.kind {
            for (k, term) in terms.iter().enumerate() {
                if term.output >= dim || term.input >= dim {
                    return Err(PeticError::config(
                        format!("{path}.terms[{k}]"),
                        format!("index out of range for a {dim}-dimensional state"),
                    ));
                }
                if !term.coef.is_finite() || !term.freq.is_finite() {
                    return Err(PeticError::config(format!("{path}.terms[{k}]"), "non-finite coefficient"));
                }
            }
        }
        if let Some(l) = self.lipschitz_override {
            if !(l > T::zero()) || !l.is_finite() {
                return Err(PeticError::config(
                    format!("{path}.lipschitz"),
                    "Lipschitz override must be > 0 (Lipschitz condition)",
                ));
            }
        }
        Ok(())
    }

    pub fn eval(&self, z: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); z.len()];
        self.eval_add_into(z, &mut out);
        out
    }

    /// Adds `f(z)` onto `out`.
    pub fn eval_add_into(&self, z: &[T], out: &mut [T]) {
        if let NonlinearityKind::SineBank(terms) = &self.kind {
            for t in terms {
                out[t.output] += t.coef * (t.freq * z[t.input]).sin();
            }
        }
    }

    /// Per output, the sum of `|coef · freq|` over its terms; the maximum over outputs.
    ///
    /// Each output reads distinct inputs in the bundled models, where this is the
    /// tight bound `|f(z)| <= L |z|`.
    pub fn derived_lipschitz(&self) -> T {
        match &self.kind {
            NonlinearityKind::Zero => T::zero(),
            NonlinearityKind::SineBank(terms) => {
                let max_out = terms.iter().map(|t| t.output).max().map_or(0, |m| m + 1);
                let mut per_output = vec![T::zero(); max_out];
                for t in terms {
                    per_output[t.output] += (t.coef * t.freq).abs();
                }
                per_output.into_iter().fold(T::zero(), T::max)
            }
        }
    }

    pub fn lipschitz(&self) -> T {
        self.lipschitz_override.unwrap_or_else(|| self.derived_lipschitz())
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            NonlinearityKind::Zero => true,
            NonlinearityKind::SineBank(terms) => terms.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderSpec<T> {
    pub n0: usize,
    pub c0: Matrix<T>,
    pub d0: Matrix<T>,
    pub f: NonlinearitySpec<T>,
}

impl<T: Scalar> LeaderSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.n0;
        if self.c0.shape() != (n, n) {
            return Err(PeticError::config("leader.c", format!("must be {n}x{n}")));
        }
        if self.d0.shape() != (n, n) {
            return Err(PeticError::config("leader.d", format!("must be {n}x{n}")));
        }
        self.f.validate(n, "leader.nonlinearity")?;
        if self.f.eval(&vec![T::zero(); n]).iter().any(|v| *v != T::zero()) {
            return Err(PeticError::config("leader.nonlinearity", "f_x0(0) must be 0 (Lipschitz condition)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec<T> {
    pub n: usize,
    pub c: Matrix<T>,
    pub d: Matrix<T>,
    pub f: NonlinearitySpec<T>,
    /// `n × n0` matching matrix.
    pub xi: Matrix<T>,
    /// `m × n` lift.
    pub phi: Matrix<T>,
    /// `n × m` projection.
    pub theta: Matrix<T>,
    /// `k_i` (no-delay, negative) or `k̃_i` (delayed, any sign).
    pub gain: T,
    /// Desired relative position `x̄_i*`.
    pub offset: Vec<T>,
    pub energy: EnergyProfile<T>,
}

impl<T: Scalar> AgentSpec<T> {
    pub fn validate_shapes(&self, n0: usize, m: usize, path: &str) -> Result<()> {
        let n = self.n;
        type Shape = (usize, usize);
        let checks: [(&str, Shape, Shape); 5] = [
            ("c", self.c.shape(), (n, n)),
            ("d", self.d.shape(), (n, n)),
            ("xi", self.xi.shape(), (n, n0)),
            ("phi", self.phi.shape(), (m, n)),
            ("theta", self.theta.shape(), (n, m)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(PeticError::config(
                    format!("{path}.{name}"),
                    format!("expected {}x{}, got {}x{}", want.0, want.1, got.0, got.1),
                ));
            }
        }
        if self.offset.len() != n {
            return Err(PeticError::config(format!("{path}.offset"), format!("expected length {n}")));
        }
        if !self.gain.is_finite() {
            return Err(PeticError::config(format!("{path}.gain"), "gain must be finite"));
        }
        self.f.validate(n, &format!("{path}.nonlinearity"))
    }

    pub fn lift(&self, z: &[T]) -> Vec<T> {
        self.phi.mul_vec_unchecked(z)
    }

    pub fn project(&self, y: &[T]) -> Vec<T> {
        self.theta.mul_vec_unchecked(y)
    }

    pub fn has_offset(&self) -> bool {
        self.offset.iter().any(|v| *v != T::zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingReport<T> {
    /// `max(|Ξ C0 − C Ξ|, |Ξ D0 − D Ξ|)` in the max-abs-entry norm.
    pub residual: T,
    pub pass: bool,
}

/// Matching condition: `Ξ_i C_0 = C_i Ξ_i` and `Ξ_i D_0 = D_i Ξ_i`.
pub fn check_matching<T: Scalar>(agent: &AgentSpec<T>, leader: &LeaderSpec<T>) -> Result<MatchingReport<T>> {
    if agent.xi.shape() != (agent.n, leader.n0)
        || agent.c.shape() != (agent.n, agent.n)
        || agent.d.shape() != (agent.n, agent.n)
        || leader.c0.shape() != (leader.n0, leader.n0)
        || leader.d0.shape() != (leader.n0, leader.n0)
    {
        return Err(PeticError::config(
            "agent.xi",
            format!("Xi must be {}x{} with square C, D", agent.n, leader.n0),
        ));
    }
    let rc = (&(&agent.xi * &leader.c0) - &(&agent.c * &agent.xi)).max_abs();
    let rd = (&(&agent.xi * &leader.d0) - &(&agent.d * &agent.xi)).max_abs();
    let residual = rc.max(rd);
    Ok(MatchingReport {
        residual,
        pass: residual <= T::of(IDENTITY_TOL),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingReport<T> {
    pub rank: usize,
    /// `|Θ Φ − I|` max-abs-entry.
    pub residual: T,
    pub pass: bool,
}

/// Embedding condition: `rank(Φ_i) = n_i` and `Θ_i Φ_i = I`.
pub fn check_embedding<T: Scalar>(agent: &AgentSpec<T>) -> Result<EmbeddingReport<T>> {
    let (m, n) = agent.phi.shape();
    if m < n {
        return Err(PeticError::config(
            "agent.phi",
            format!("virtual dimension m = {m} must be >= n_i = {n}"),
        ));
    }
    if agent.theta.shape() != (n, m) {
        return Err(PeticError::config("agent.theta", format!("expected {n}x{m}")));
    }
    let rank = linalg::numerical_rank(&agent.phi, T::of(IDENTITY_TOL))?;
    let residual = (&(&agent.theta * &agent.phi) - &Matrix::identity(n)).max_abs();
    Ok(EmbeddingReport {
        rank,
        residual,
        pass: rank == n && residual <= T::of(IDENTITY_TOL),
    })
}

/// `z_i = x_i − Ξ_i x_0 − x̄_i*`.
pub fn error_state<T: Scalar>(x_i: &[T], x0: &[T], agent: &AgentSpec<T>) -> Result<Vec<T>> {
    if x_i.len() != agent.n {
        return Err(PeticError::Dimension(format!(
            "follower state has length {}, expected {}",
            x_i.len(),
            agent.n
        )));
    }
    let xi_x0 = agent.xi.mul_vec(x0)?;
    Ok(x_i
        .iter()
        .zip(&xi_x0)
        .zip(&agent.offset)
        .map(|((&x, &l), &o)| x - l - o)
        .collect())
}

/// Largest sampled `|f(z)| / (L |z|)` over `samples` Gaussian draws of scale `scale`;
/// The Lipschitz condition holds on the sample iff the result is `<= 1`.
pub fn sampled_lipschitz_ratio<T: Scalar>(
    f: &NonlinearitySpec<T>,
    dim: usize,
    samples: usize,
    scale: f64,
    seed: u64,
) -> T {
    let l = f.lipschitz();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = T::zero();
    for _ in 0..samples {
        let z: Vec<T> = (0..dim)
            .map(|_| T::of(scale * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let nz = linalg::norm(&z);
        if nz == T::zero() {
            continue;
        }
        let nf = linalg::norm(&f.eval(&z));
        let ratio = if l > T::zero() {
            nf / (l * nz)
        } else if nf == T::zero() {
            T::zero()
        } else {
            T::infinity()
        };
        worst = worst.max(ratio);
    }
    worst
}

/// Block-assembled virtual system under agent-major stacking.
#[derive(Debug, Clone)]
pub struct StackedSystem<T> {
    pub m: usize,
    pub n_agents: usize,
    pub dim: usize,
    /// `dim × Σn_i`.
    pub phi: Matrix<T>,
    /// `Σn_i × dim`.
    pub theta: Matrix<T>,
    pub c: Matrix<T>,
    pub d: Matrix<T>,
    pub gains: Vec<T>,
    /// `diag(k) ⊗ I_m`.
    pub k: Matrix<T>,
    pub h: Matrix<T>,
    /// `H ⊗ I_m`.
    pub h_tilde: Matrix<T>,
    /// Per-agent Lipschitz bounds `L_fi`.
    pub lipschitz: Vec<T>,
    /// `Φ C Θ`.
    pub drift_matrix: Matrix<T>,
    /// `Φ D Θ`.
    pub diffusion_matrix: Matrix<T>,
    /// `Φ Θ`.
    pub phi_theta: Matrix<T>,
    /// `K H̃ Φ Θ`, the state coupling applied at impulse instants.
    pub coupling: Matrix<T>,
    /// Stacked `Φ_i C_i x̄_i*`; zero without formation offsets.
    pub drift_affine: Vec<T>,
    /// Stacked `Φ_i D_i x̄_i*`; zero without formation offsets.
    pub diffusion_affine: Vec<T>,
    pub alpha: T,
    pub agents: Vec<AgentSpec<T>>,
    pub leader: LeaderSpec<T>,
    /// Start row of agent `i` in the original-coordinate stack `Σn_i`.
    pub orig_offsets: Vec<usize>,
}

pub fn build_stacked<T: Scalar>(
    leader: &LeaderSpec<T>,
    agents: &[AgentSpec<T>],
    topo: &TopologySpec<T>,
    m: usize,
) -> Result<StackedSystem<T>> {
    leader.validate()?;
    topo.validate()?;
    if agents.is_empty() {
        return Err(PeticError::config("agent", "at least one follower is required"));
    }
    if topo.n_agents != agents.len() {
        return Err(PeticError::config(
            "topology",
            format!("topology has {} agents but {} are defined", topo.n_agents, agents.len()),
        ));
    }
    for (i, a) in agents.iter().enumerate() {
        let path = format!("agent.{}", i + 1);
        if a.n > m {
            return Err(PeticError::config(
                format!("{path}.n"),
                format!("n_i = {} exceeds virtual dimension m = {m}", a.n),
            ));
        }
        a.validate_shapes(leader.n0, m, &path)?;
        let emb = check_embedding(a)?;
        if !emb.pass {
            return Err(PeticError::config(
                format!("{path}.phi"),
                format!(
                    "embedding condition violated: rank(Phi) = {} (need {}), |Theta Phi - I| = {:e}",
                    emb.rank, a.n, emb.residual.to_f64_lossy()
                ),
            ));
        }
    }

    let n_agents = agents.len();
    let dim = m * n_agents;
    let phis: Vec<&Matrix<T>> = agents.iter().map(|a| &a.phi).collect();
    let thetas: Vec<&Matrix<T>> = agents.iter().map(|a| &a.theta).collect();
    let cs: Vec<&Matrix<T>> = agents.iter().map(|a| &a.c).collect();
    let ds: Vec<&Matrix<T>> = agents.iter().map(|a| &a.d).collect();
    let phi = Matrix::block_diag(&phis);
    let theta = Matrix::block_diag(&thetas);
    let c = Matrix::block_diag(&cs);
    let d = Matrix::block_diag(&ds);

    let eye_m = Matrix::identity(m);
    let gains: Vec<T> = agents.iter().map(|a| a.gain).collect();
    let k = Matrix::from_diag(&gains).kron(&eye_m);
    let h = topology::information_matrix(topo);
    let h_tilde = h.kron(&eye_m);

    let drift_matrix = &(&phi * &c) * &theta;
    let diffusion_matrix = &(&phi * &d) * &theta;
    let phi_theta = &phi * &theta;
    let coupling = &(&k * &h_tilde) * &phi_theta;

    let mut drift_affine = Vec::with_capacity(dim);
    let mut diffusion_affine = Vec::with_capacity(dim);
    for a in agents {
        drift_affine.extend(a.lift(&a.c.mul_vec_unchecked(&a.offset)));
        diffusion_affine.extend(a.lift(&a.d.mul_vec_unchecked(&a.offset)));
    }

    let mut orig_offsets = Vec::with_capacity(n_agents);
    let mut acc = 0;
    for a in agents {
        orig_offsets.push(acc);
        acc += a.n;
    }

    Ok(StackedSystem {
        m,
        n_agents,
        dim,
        phi,
        theta,
        c,
        d,
        gains,
        k,
        h,
        h_tilde,
        lipschitz: agents.iter().map(|a| a.f.lipschitz()).collect(),
        drift_matrix,
        diffusion_matrix,
        phi_theta,
        coupling,
        drift_affine,
        diffusion_affine,
        alpha: topo.alpha,
        agents: agents.to_vec(),
        leader: leader.clone(),
        orig_offsets,
    })
}

impl<T: Scalar> StackedSystem<T> {
    pub fn energy_profiles(&self) -> Vec<EnergyProfile<T>> {
        self.agents.iter().map(|a| a.energy).collect()
    }

    pub fn has_affine_terms(&self) -> bool {
        self.agents.iter().any(AgentSpec::has_offset)
    }

    /// Virtual block of agent `i` inside a stacked vector.
    pub fn agent_slice<'a>(&self, y: &'a [T], i: usize) -> &'a [T] {
        &y[i * self.m..(i + 1) * self.m]
    }

    /// Stacked lift of per-agent error states.
    pub fn lift_all(&self, zs: &[Vec<T>]) -> Result<Vec<T>> {
        if zs.len() != self.n_agents {
            return Err(PeticError::Dimension(format!(
                "{} error states for {} agents",
                zs.len(),
                self.n_agents
            )));
        }
        let mut y = Vec::with_capacity(self.dim);
        for (a, z) in self.agents.iter().zip(zs) {
            if z.len() != a.n {
                return Err(PeticError::Dimension(format!("error state length {} != {}", z.len(), a.n)));
            }
            y.extend(a.lift(z));
        }
        Ok(y)
    }

    /// Per-agent `z_i = Θ_i y_i`.
    pub fn project_all(&self, y: &[T]) -> Vec<Vec<T>> {
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| a.project(self.agent_slice(y, i)))
            .collect()
    }

    fn check_finite(y: &[T], t: T) -> Result<()> {
        if y.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(PeticError::BlowUp {
                t: t.to_f64_lossy(),
                detail: "non-finite state".into(),
            })
        }
    }

    /// `Φ C Θ y + Φ f(Θ y)` plus the formation drift term.
    pub fn eval_drift(&self, y: &[T], t: T) -> Result<Vec<T>> {
        Self::check_finite(y, t)?;
        let mut out = vec![T::zero(); self.dim];
        self.drift_into(y, &mut out);
        Ok(out)
    }

    /// `Φ D Θ y` plus the formation diffusion term; one shared scalar Wiener channel.
    pub fn eval_diffusion(&self, y: &[T], t: T) -> Result<Vec<T>> {
        Self::check_finite(y, t)?;
        let mut out = vec![T::zero(); self.dim];
        self.diffusion_into(y, &mut out);
        Ok(out)
    }

    pub(crate) fn drift_into(&self, y: &[T], out: &mut [T]) {
        self.drift_matrix.mul_vec_into(y, out);
        let m = self.m;
        for (i, a) in self.agents.iter().enumerate() {
            if a.f.is_zero() {
                continue;
            }
            let yi = &y[i * m..(i + 1) * m];
            let z = a.project(yi);
            let fz = a.f.eval(&z);
            let lifted = a.lift(&fz);
            for (o, v) in out[i * m..(i + 1) * m].iter_mut().zip(lifted) {
                *o += v;
            }
        }
        for (o, &v) in out.iter_mut().zip(&self.drift_affine) {
            *o += v;
        }
    }

    pub(crate) fn diffusion_into(&self, y: &[T], out: &mut [T]) {
        self.diffusion_matrix.mul_vec_into(y, out);
        for (o, &v) in out.iter_mut().zip(&self.diffusion_affine) {
            *o += v;
        }
    }

    /// Sampled `L_D` for agent `i`: max `|Φ D Θ y + Φ D x̄*| / |y|` over Gaussian `y`.
    pub fn sampled_diffusion_bound(&self, i: usize, scale: f64, samples: usize, seed: u64) -> T {
        let a = &self.agents[i];
        let lin = &(&a.phi * &a.d) * &a.theta;
        let aff = a.lift(&a.d.mul_vec_unchecked(&a.offset));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = T::zero();
        for _ in 0..samples {
            let y: Vec<T> = (0..self.m)
                .map(|_| T::of(scale * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let ny = linalg::norm(&y);
            if ny == T::zero() {
                continue;
            }
            let v: Vec<T> = lin.mul_vec_unchecked(&y).iter().zip(&aff).map(|(&a, &b)| a + b).collect();
            worst = worst.max(linalg::norm(&v) / ny);
        }
        worst
    }
}
