//! TOML scenario files: strict schema, validation with config paths, and
//! compilation into a [`Problem`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{ControlMode, TriggerParams};
use crate::error::{PeticError, Result};
use crate::linalg::Matrix;
use crate::model::{self, AgentSpec, LeaderSpec, NonlinearitySpec, SineTerm};
use crate::scalar::Scalar;
use crate::simulator::{Problem, SimParams};
use crate::topology::{EnergyProfile, TopologySpec};

pub const UAV_UGV_NO_DELAY: &str = include_str!("../scenarios/uav_ugv_no_delay.toml");
pub const UAV_UGV_DELAYED: &str = include_str!("../scenarios/uav_ugv_delayed.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(rename = "virtual")]
    pub virtual_space: VirtualConfig,
    pub leader: LeaderConfig,
    pub topology: TopologyConfig,
    #[serde(rename = "agent")]
    pub agents: Vec<AgentConfig>,
    pub trigger: TriggerConfig,
    pub control: ControlConfig,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtualConfig {
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineTermConfig {
    /// Zero-based output component.
    pub output: usize,
    pub coef: f64,
    pub freq: f64,
    /// Zero-based input component.
    pub input: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    #[serde(default)]
    pub terms: Vec<SineTermConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

impl NonlinearityConfig {
    fn to_spec<T: Scalar>(&self) -> NonlinearitySpec<T> {
        let terms: Vec<SineTerm<T>> = self
            .terms
            .iter()
            .map(|t| SineTerm {
                output: t.output,
                coef: T::of(t.coef),
                freq: T::of(t.freq),
                input: t.input,
            })
            .collect();
        let spec = if terms.is_empty() { NonlinearitySpec::zero() } else { NonlinearitySpec::sine_bank(terms) };
        match self.lipschitz {
            Some(l) => spec.with_lipschitz(T::of(l)),
            None => spec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderConfig {
    pub n: usize,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<NonlinearityConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub alpha: f64,
    /// Information matrix `H = −L + B` given directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abar: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbar: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub tau0: f64,
    #[serde(default)]
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub gain: f64,
    pub offset: Vec<f64>,
    pub initial: Vec<f64>,
    pub energy: EnergyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<NonlinearityConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PConfig {
    /// `c · I_dim`.
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerConfig {
    pub delta: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub gamma: f64,
    pub p: PConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    NoDelay,
    Delayed,
    Uncontrolled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub mode: ModeConfig,
    #[serde(default)]
    pub actuation_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub step: f64,
    pub horizon: f64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub init_noise: f64,
}

fn default_runs() -> usize {
    100
}

fn default_stride() -> usize {
    1
}

fn matrix<T: Scalar>(rows: &[Vec<f64>], path: &str) -> Result<Matrix<T>> {
    if rows.is_empty() {
        return Err(PeticError::config(path, "matrix is empty"));
    }
    let m = Matrix::from_rows(rows).map_err(|e| PeticError::config(path, e.to_string()))?;
    if !m.is_finite() {
        return Err(PeticError::config(path, "matrix entries must be finite"));
    }
    Ok(m.cast())
}

fn vector<T: Scalar>(v: &[f64], len: usize, path: &str) -> Result<Vec<T>> {
    if v.len() != len {
        return Err(PeticError::config(path, format!("expected length {len}, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(PeticError::config(path, "entries must be finite"));
    }
    Ok(v.iter().map(|&x| T::of(x)).collect())
}

fn energy<T: Scalar>(e: &EnergyConfig, path: &str) -> Result<EnergyProfile<T>> {
    EnergyProfile::new(T::of(e.tau0), T::of(e.beta)).map_err(|err| PeticError::config(path, err.to_string()))
}

impl Scenario {
    /// Parses TOML text. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PeticError::Parse(e.to_string()))
    }

    /// Parses and validates a scenario file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let s = Self::parse(&text)?;
        s.validate()?;
        Ok(s)
    }

    /// A bundled scenario by name.
    pub fn bundled(name: &str) -> Result<Self> {
        let text = match name {
            "uav_ugv_no_delay" => UAV_UGV_NO_DELAY,
            "uav_ugv_delayed" => UAV_UGV_DELAYED,
            _ => return Err(PeticError::Usage(format!("unknown bundled scenario `{name}`"))),
        };
        Self::parse(text)
    }

    pub fn bundled_names() -> &'static [&'static str] {
        &["uav_ugv_no_delay", "uav_ugv_delayed"]
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PeticError::Parse(e.to_string()))
    }

    /// Checks every constraint by compiling once in f64.
    pub fn validate(&self) -> Result<()> {
        self.compile::<f64>().map(|_| ())
    }

    pub fn dim(&self) -> usize {
        self.virtual_space.m * self.agents.len()
    }

    /// Same scenario with control switched off.
    pub fn uncontrolled(&self) -> Self {
        let mut s = self.clone();
        s.control.mode = ModeConfig::Uncontrolled;
        s.control.actuation_delay = 0.0;
        s
    }

    pub fn leader_spec<T: Scalar>(&self) -> Result<LeaderSpec<T>> {
        let l = &self.leader;
        let spec = LeaderSpec {
            n0: l.n,
            c0: matrix(&l.c, "leader.c")?,
            d0: matrix(&l.d, "leader.d")?,
            f: l.nonlinearity.clone().unwrap_or_default().to_spec(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn agent_specs<T: Scalar>(&self) -> Result<Vec<AgentSpec<T>>> {
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let path = format!("agent.{}", i + 1);
                Ok(AgentSpec {
                    n: a.n,
                    c: matrix(&a.c, &format!("{path}.c"))?,
                    d: matrix(&a.d, &format!("{path}.d"))?,
                    f: a.nonlinearity.clone().unwrap_or_default().to_spec(),
                    xi: matrix(&a.xi, &format!("{path}.xi"))?,
                    phi: matrix(&a.phi, &format!("{path}.phi"))?,
                    theta: matrix(&a.theta, &format!("{path}.theta"))?,
                    gain: T::of(a.gain),
                    offset: vector(&a.offset, a.n, &format!("{path}.offset"))?,
                    energy: energy(&a.energy, &format!("{path}.energy"))?,
                })
            })
            .collect()
    }

    pub fn topology_spec<T: Scalar>(&self) -> Result<TopologySpec<T>> {
        let t = &self.topology;
        let alpha = T::of(t.alpha);
        match (&t.h, &t.abar, &t.bbar) {
            (Some(h), None, None) => TopologySpec::from_matrix(matrix(h, "topology.h")?, alpha),
            (None, Some(a), Some(b)) => {
                let bbar = vector(b, self.agents.len(), "topology.bbar")?;
                TopologySpec::from_weights(matrix(a, "topology.abar")?, bbar, alpha)
            }
            _ => Err(PeticError::config("topology", "give either `h` or both `abar` and `bbar`")),
        }
    }

    pub fn trigger_params<T: Scalar>(&self) -> Result<TriggerParams<T>> {
        let t = &self.trigger;
        let dim = self.dim();
        let p = match &t.p {
            PConfig::Scalar(c) => {
                if !(*c > 0.0) {
                    return Err(PeticError::config("trigger.p", "P must be positive definite"));
                }
                Matrix::identity(dim).scale(T::of(*c))
            }
            PConfig::Matrix(rows) => matrix(rows, "trigger.p")?,
        };
        let params = TriggerParams {
            delta: T::of(t.delta),
            psi1: T::of(t.psi1),
            psi2: T::of(t.psi2),
            gamma: T::of(t.gamma),
            p,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn control_mode<T: Scalar>(&self) -> ControlMode<T> {
        match self.control.mode {
            ModeConfig::NoDelay => ControlMode::NoDelay,
            ModeConfig::Delayed => ControlMode::Delayed {
                actuation_delay: T::of(self.control.actuation_delay),
            },
            ModeConfig::Uncontrolled => ControlMode::Uncontrolled,
        }
    }

    pub fn sim_params<T: Scalar>(&self) -> SimParams<T> {
        let s = &self.sim;
        SimParams {
            step: T::of(s.step),
            horizon: T::of(s.horizon),
            n_runs: s.runs,
            master_seed: s.seed,
            record_stride: s.record_stride,
            init_noise: T::of(s.init_noise),
        }
    }

    /// Initial virtual state from the leader and follower initial values.
    pub fn initial_virtual_state<T: Scalar>(&self, agents: &[AgentSpec<T>]) -> Result<Vec<T>> {
        let x0: Vec<T> = vector(&self.leader.initial, self.leader.n, "leader.initial")?;
        let mut y = Vec::with_capacity(self.dim());
        for (i, (cfg, a)) in self.agents.iter().zip(agents).enumerate() {
            let xi: Vec<T> = vector(&cfg.initial, cfg.n, &format!("agent.{}.initial", i + 1))?;
            let z = model::error_state(&xi, &x0, a)?;
            y.extend(a.lift(&z));
        }
        Ok(y)
    }

    pub fn compile<T: Scalar>(&self) -> Result<Problem<T>> {
        if self.agents.is_empty() {
            return Err(PeticError::config("agent", "at least one follower is required"));
        }
        let m = self.virtual_space.m;
        if m == 0 {
            return Err(PeticError::config("virtual.m", "virtual dimension must be ≥ 1"));
        }
        let leader = self.leader_spec::<T>()?;
        let agents = self.agent_specs::<T>()?;
        let topo = self.topology_spec::<T>()?;
        if topo.n_agents != agents.len() {
            return Err(PeticError::config(
                "topology",
                format!("topology has {} followers, {} agents configured", topo.n_agents, agents.len()),
            ));
        }
        let sys = model::build_stacked(&leader, &agents, &topo, m)?;
        let y0 = self.initial_virtual_state(&agents)?;
        let trigger = self.trigger_params::<T>()?;
        if self.control.mode != ModeConfig::Delayed && self.control.actuation_delay != 0.0 {
            return Err(PeticError::config(
                "control.actuation_delay",
                "an actuation delay is only meaningful in delayed mode",
            ));
        }
        Problem::new(sys, trigger, self.control_mode(), self.sim_params(), y0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_load() {
        for name in Scenario::bundled_names() {
            let s = Scenario::bundled(name).unwrap();
            let p = s.compile::<f64>().unwrap();
            assert_eq!(p.sys.dim, 24);
            assert_eq!(p.sys.n_agents, 4);
            assert_eq!(p.sys.m, 6);
        }
        let s = Scenario::bundled("uav_ugv_no_delay").unwrap();
        let p = s.compile::<f64>().unwrap();
        assert_eq!(p.trigger.p, Matrix::identity(24).scale(0.95));
    }

    #[test]
    fn initial_virtual_state_subtracts_leader_and_offset() {
        let s = Scenario::bundled("uav_ugv_no_delay").unwrap();
        let p = s.compile::<f64>().unwrap();
        // UAV 1: η = (7.11, -2.78, 2.4), leader η = (1.55, -1.5, 10.01), offset (3, 3, 0)
        let y1 = &p.y0[0..6];
        let expect = [7.11 - 1.55 - 3.0, -2.78 + 1.5 - 3.0, 2.4 - 10.01, 2.0 - 2.3, 1.52 + 3.15, 0.51 - 1.1];
        for (a, b) in y1.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // UGV 3 lifts into (ηx, ηy, 0, vx, vy, 0)
        let y3 = &p.y0[12..18];
        assert_eq!(y3[2], 0.0);
        assert_eq!(y3[5], 0.0);
        assert!((y3[0] - (10.51 - 1.55 - 2.0)).abs() < 1e-12);
        assert!((y3[3] - (2.0 - 2.3)).abs() < 1e-12);
    }

    #[test]
    fn round_trip_is_exact() {
        for name in Scenario::bundled_names() {
            let s = Scenario::bundled(name).unwrap();
            let text = s.to_toml().unwrap();
            assert_eq!(Scenario::parse(&text).unwrap(), s);
        }
    }

    #[test]
    fn empty_and_unknown_keys_fail_to_parse() {
        assert!(matches!(Scenario::parse(""), Err(PeticError::Parse(_))));
        let text = UAV_UGV_NO_DELAY.replace("[sim]", "[sim]\nbogus = 1");
        let err = Scenario::parse(&text).unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("line"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let mut s = Scenario::bundled("uav_ugv_no_delay").unwrap();
        s.trigger.psi2 = 0.5;
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("trigger.psi2") && err.contains("ψ₂ ≥ 1"), "{err}");

        let mut s = Scenario::bundled("uav_ugv_no_delay").unwrap();
        s.agents[1].gain = 0.3;
        assert!(s.validate().unwrap_err().to_string().contains("agent.2.gain"));

        let mut s = Scenario::bundled("uav_ugv_delayed").unwrap();
        s.control.actuation_delay = 0.09;
        assert!(s.validate().unwrap_err().to_string().contains("delay bound"));

        let mut s = Scenario::bundled("uav_ugv_no_delay").unwrap();
        s.agents[2].theta[0][0] = 0.0;
        assert!(s.validate().unwrap_err().to_string().contains("agent.3"));

        let mut s = Scenario::bundled("uav_ugv_no_delay").unwrap();
        s.agents[0].offset.pop();
        assert!(s.validate().unwrap_err().to_string().contains("agent.1.offset"));
    }

    #[test]
    fn weights_form_is_accepted() {
        let mut s = Scenario::bundled("uav_ugv_no_delay").unwrap();
        let h = s.compile::<f64>().unwrap().sys.h;
        s.topology.h = None;
        s.topology.abar = Some(vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ]);
        s.topology.bbar = Some(vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.compile::<f64>().unwrap().sys.h, h);
    }

    #[test]
    fn compiles_in_f32() {
        let p = Scenario::bundled("uav_ugv_delayed").unwrap().compile::<f32>().unwrap();
        assert_eq!(p.sys.dim, 24);
    }
}
