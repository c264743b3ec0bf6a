//! Energy-weighted time-varying follower graph.
//!
//! Edge weights decay with each agent's energy consumption,
//! `a_ij(t) = ā_ij · exp(-α τ_i(t))`, and the same factor scales the leader
//! link `b_i(t)`. The static information-exchange matrix is `H = -L + B`.
//!
//! Stacked quantities use agent-major ordering: the virtual state is
//! `y = [y_1; …; y_N]` with each `y_i ∈ R^m`, so agent-indexed matrices are
//! lifted as `X ⊗ I_m`. The component-major lift `I_m ⊗ X` is the same
//! operator conjugated by the perfect-shuffle permutation.

use crate::error::{PeticError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Affine energy consumption `τ(t) = tau0 + beta·t`.
///
/// `beta = 0` gives a constant profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyProfile<T> {
    pub tau0: T,
    pub beta: T,
}

impl<T: Scalar> EnergyProfile<T> {
    pub fn new(tau0: T, beta: T) -> Result<Self> {
        if !(tau0 >= T::zero()) || !tau0.is_finite() {
            return Err(PeticError::Domain(format!("tau0 must be >= 0, got {tau0}")));
        }
        if !(beta >= T::zero()) || !beta.is_finite() {
            return Err(PeticError::Domain(format!("beta must be >= 0, got {beta}")));
        }
        Ok(EnergyProfile { tau0, beta })
    }

    pub fn constant(tau: T) -> Result<Self> {
        Self::new(tau, T::zero())
    }

    #[inline]
    pub fn tau(&self, t: T) -> T {
        self.tau0 + self.beta * t
    }

    /// Uniform lower bound `τ_i(t) >= floor` for `t >= 0`.
    pub fn floor(&self) -> T {
        self.tau0
    }

    /// Slope bound `τ_i(t) >= beta·t`.
    pub fn min_power(&self) -> T {
        self.beta
    }
}

/// `ā · exp(-α τ)`; also gives the leader link `b_i(t)`.
pub fn edge_weight<T: Scalar>(base: T, alpha: T, tau: T) -> Result<T> {
    if tau < T::zero() {
        return Err(PeticError::Domain(format!(
            "energy consumption cannot be negative (tau = {tau})"
        )));
    }
    if base < T::zero() {
        return Err(PeticError::Domain(format!("base weight must be >= 0, got {base}")));
    }
    if !(alpha > T::zero()) {
        return Err(PeticError::Domain(format!("alpha must be > 0, got {alpha}")));
    }
    Ok(base * (-alpha * tau).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySpec<T> {
    pub n_agents: usize,
    pub abar: Option<Matrix<T>>,
    pub bbar: Option<Vec<T>>,
    pub alpha: T,
    /// Takes precedence over `-L + B` when present.
    pub h_override: Option<Matrix<T>>,
}

impl<T: Scalar> TopologySpec<T> {
    pub fn from_weights(abar: Matrix<T>, bbar: Vec<T>, alpha: T) -> Result<Self> {
        let spec = TopologySpec {
            n_agents: bbar.len(),
            abar: Some(abar),
            bbar: Some(bbar),
            alpha,
            h_override: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_matrix(h: Matrix<T>, alpha: T) -> Result<Self> {
        let spec = TopologySpec {
            n_agents: h.rows(),
            abar: None,
            bbar: None,
            alpha,
            h_override: Some(h),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_agents;
        if n == 0 {
            return Err(PeticError::config("topology", "at least one follower is required"));
        }
        if !(self.alpha > T::zero()) || !self.alpha.is_finite() {
            return Err(PeticError::config("topology.alpha", "alpha must be > 0"));
        }
        match (&self.abar, &self.bbar) {
            (Some(a), Some(b)) => {
                if a.shape() != (n, n) || b.len() != n {
                    return Err(PeticError::config(
                        "topology.abar",
                        format!("abar must be {n}x{n} and bbar length {n}"),
                    ));
                }
                for i in 0..n {
                    if a[(i, i)] != T::zero() {
                        return Err(PeticError::config(
                            format!("topology.abar[{i}][{i}]"),
                            "diagonal of abar must be zero",
                        ));
                    }
                    for j in 0..n {
                        if !(a[(i, j)] >= T::zero()) {
                            return Err(PeticError::config(
                                format!("topology.abar[{i}][{j}]"),
                                "base weights must be >= 0",
                            ));
                        }
                    }
                }
                if b.iter().any(|v| !(*v >= T::zero())) {
                    return Err(PeticError::config("topology.bbar", "leader weights must be >= 0"));
                }
                if b.iter().all(|v| *v == T::zero()) {
                    return Err(PeticError::config(
                        "topology.bbar",
                        "B must not be the zero matrix (some follower must hear the leader)",
                    ));
                }
            }
            (None, None) => {
                if self.h_override.is_none() {
                    return Err(PeticError::config(
                        "topology",
                        "either `h` or both `abar` and `bbar` must be given",
                    ));
                }
            }
            _ => {
                return Err(PeticError::config(
                    "topology",
                    "`abar` and `bbar` must be given together",
                ))
            }
        }
        if let Some(h) = &self.h_override {
            if h.shape() != (n, n) {
                return Err(PeticError::config("topology.h", format!("h must be {n}x{n}")));
            }
            if !h.is_finite() {
                return Err(PeticError::config("topology.h", "h must be finite"));
            }
        }
        Ok(())
    }

    /// Laplacian-like matrix `L` of the base weights when they are given.
    pub fn laplacian(&self) -> Option<Matrix<T>> {
        let a = self.abar.as_ref()?;
        let n = self.n_agents;
        let mut l = a.scale(-T::one());
        for i in 0..n {
            l[(i, i)] = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        }
        Some(l)
    }

    /// Time-varying adjacency `A(t)` for the given per-agent profiles.
    pub fn adjacency_at(&self, profiles: &[EnergyProfile<T>], t: T) -> Option<Matrix<T>> {
        let a = self.abar.as_ref()?;
        let decay: Vec<T> = profiles.iter().map(|p| (-self.alpha * p.tau(t)).exp()).collect();
        Some(a.scale_rows(&decay))
    }

    /// Diagonal of the time-varying leader-link matrix `B(t)`.
    pub fn leader_weights_at(&self, profiles: &[EnergyProfile<T>], t: T) -> Option<Vec<T>> {
        let b = self.bbar.as_ref()?;
        Some(
            b.iter()
                .zip(profiles)
                .map(|(&bi, p)| bi * (-self.alpha * p.tau(t)).exp())
                .collect(),
        )
    }
}

/// `H` verbatim from the override, else `-L + B`.
pub fn information_matrix<T: Scalar>(spec: &TopologySpec<T>) -> Matrix<T> {
    if let Some(h) = &spec.h_override {
        return h.clone();
    }
    let l = spec.laplacian().expect("validated spec carries abar");
    let b = spec.bbar.as_ref().expect("validated spec carries bbar");
    &(-&l) + &Matrix::from_diag(b)
}

/// `Γ(t) = diag(τ_1(t), …, τ_N(t)) ⊗ I_m` (agent-major).
pub fn gamma_matrix<T: Scalar>(profiles: &[EnergyProfile<T>], t: T, m: usize) -> Matrix<T> {
    Matrix::from_diag(&gamma_diagonal(profiles, t, m))
}

pub fn gamma_diagonal<T: Scalar>(profiles: &[EnergyProfile<T>], t: T, m: usize) -> Vec<T> {
    profiles
        .iter()
        .flat_map(|p| std::iter::repeat_n(p.tau(t), m))
        .collect()
}

/// Diagonal of `exp(-α Γ(t))`.
pub fn energy_decay_diagonal<T: Scalar>(
    profiles: &[EnergyProfile<T>],
    alpha: T,
    t: T,
    m: usize,
) -> Vec<T> {
    profiles
        .iter()
        .flat_map(|p| std::iter::repeat_n((-alpha * p.tau(t)).exp(), m))
        .collect()
}

/// Perfect-shuffle permutation taking agent-major index `i·m + c` to
/// component-major index `c·N + i`.
pub fn agent_to_component_major(n_agents: usize, m: usize) -> Vec<usize> {
    let mut perm = vec![0; n_agents * m];
    for i in 0..n_agents {
        for c in 0..m {
            perm[i * m + c] = c * n_agents + i;
        }
    }
    perm
}
