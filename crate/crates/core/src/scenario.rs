//! Scenario configuration: a human-editable TOML schema, built-in presets,
//! and resolution into validated runtime structures.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode::{ModeProcess, SojournLaw};
use crate::plant::{
    double_integrator_2d, FormationSpec, ModeMatrices, Nonlinearity, UncertaintyLaw, WorldState,
};
use crate::smc::{stabilizing_gain, ControllerGains, PreparedGains};
use crate::topology::{build_topology, coupling, leader_reachable, topology_preset, CouplingMatrices};
use crate::trigger::{v_operator_norm, TriggerConfig};

/// Built-in scenario names, in the order `presets` lists them.
pub const PRESETS: [&str; 3] = ["paper-sec4", "no-fault", "continuous-smc"];

/// Which control law drives the followers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerVariant {
    /// continuous law evaluated every integration step
    Continuous,
    /// sample-based event trigger with zero-order hold and delays
    EventTriggered,
    /// periodic sampled-data baseline: every sample released, zero delay,
    /// zero trigger-error margin
    Sampled,
}

/// Exogenous leader input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LeaderInput {
    Zero,
    Sine { amplitude: f64, frequency: f64 },
}

impl LeaderInput {
    pub fn eval(&self, t: f64, n_u: usize) -> DVector<f64> {
        match *self {
            LeaderInput::Zero => DVector::zeros(n_u),
            LeaderInput::Sine { amplitude, frequency } => {
                DVector::from_element(n_u, amplitude * (frequency * t).sin())
            }
        }
    }
}

/// One per-mode communication topology: a named preset or explicit matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySpec {
    Preset(String),
    Custom { adjacency: Vec<Vec<f64>>, leader_gains: Vec<f64> },
}

/// Formation shape; `circle` reproduces the R-radius regular polygon with the
/// leader at the centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FormationConfig {
    Circle { radius: f64 },
    Explicit { offsets: Vec<Vec<f64>> },
}

/// Initial states. Followers accept either (px, py) pairs (zero velocity) or
/// full state vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub leader: Vec<f64>,
    pub followers: Vec<Vec<f64>>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            leader: vec![0.0, 0.0],
            followers: vec![
                vec![-6.0, 13.0],
                vec![-14.0, 7.0],
                vec![-13.0, -13.0],
                vec![8.0, -11.0],
                vec![5.0, 4.0],
            ],
        }
    }
}

/// Semi-Markov switching specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeProcessSpec {
    pub initial_mode: usize,
    /// row-stochastic with zero diagonal; defaults to uniform off-diagonal
    pub embedded_chain: Option<Vec<Vec<f64>>>,
    /// one law per mode; a single entry is broadcast
    pub sojourn: Vec<SojournLaw>,
}

impl Default for ModeProcessSpec {
    fn default() -> Self {
        ModeProcessSpec {
            initial_mode: 0,
            embedded_chain: None,
            sojourn: vec![SojournLaw::Exponential { rate: 1.0 }],
        }
    }
}

/// Plant matrices; omitted entries fall back to the planar double-integrator
/// preset with position-channel diffusion and velocity-channel uncertainty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantMatsSpec {
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub d: Option<Vec<Vec<f64>>>,
    pub e: Option<Vec<Vec<f64>>>,
    pub m: Option<Vec<Vec<f64>>>,
    pub n: Option<Vec<Vec<f64>>>,
}

/// Actuator-fault settings; the efficiency table is drawn per run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSpec {
    pub enabled: bool,
    pub onset: f64,
    pub efficiency_range: [f64; 2],
    pub resample_period: f64,
    pub bias_amplitude: f64,
}

impl Default for FaultSpec {
    fn default() -> Self {
        FaultSpec {
            enabled: true,
            onset: 3.0,
            efficiency_range: [0.5, 1.0],
            resample_period: 1.0,
            bias_amplitude: 0.05,
        }
    }
}

/// Controller gain settings; `k` omitted means pole placement per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsSpec {
    /// explicit per-mode gains; empty = derive by pole placement
    pub k: Vec<Vec<Vec<f64>>>,
    pub omega: f64,
    pub zeta: f64,
    /// shared symmetric positive definite weighting (agent block)
    pub p_hat: Option<Vec<Vec<f64>>>,
    pub alpha: f64,
    pub theta_reach: f64,
    pub rho: f64,
    pub kappa: f64,
    pub cond_cap: f64,
    /// 0 = pure sign reaching term; > 0 smooths inside the layer
    pub boundary_layer: f64,
}

impl Default for GainsSpec {
    fn default() -> Self {
        GainsSpec {
            k: Vec::new(),
            omega: 2.0,
            zeta: 1.0,
            p_hat: None,
            alpha: 0.3,
            theta_reach: 0.2,
            rho: 2.0,
            kappa: 1.0,
            cond_cap: 1e8,
            boundary_layer: 0.2,
        }
    }
}

/// Event-trigger settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerSpec {
    pub sample_period: f64,
    /// threshold applied to every mode unless `sigma_per_mode` is set
    pub sigma: f64,
    pub sigma_per_mode: Option<Vec<f64>>,
    /// agent-block weighting; defaults to identity
    pub phi: Option<Vec<Vec<f64>>>,
    pub delay_bound: f64,
    pub v_margin_scale: f64,
    pub per_agent: bool,
}

impl Default for TriggerSpec {
    fn default() -> Self {
        TriggerSpec {
            sample_period: 0.01,
            sigma: 0.1,
            sigma_per_mode: None,
            phi: None,
            delay_bound: 0.005,
            v_margin_scale: 1.2,
            per_agent: false,
        }
    }
}

/// Complete scenario description as read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub controller: ControllerVariant,
    pub theta_band: f64,
    pub n_followers: usize,
    /// one topology per mode
    pub topologies: Vec<TopologySpec>,
    pub formation: FormationConfig,
    pub initial: InitialConfig,
    pub mode_process: ModeProcessSpec,
    pub plant: PlantMatsSpec,
    /// optional full per-mode plant overrides
    pub plant_per_mode: Vec<PlantMatsSpec>,
    pub uncertainty: UncertaintyLaw,
    pub nonlinearity: Nonlinearity,
    pub leader_input: LeaderInput,
    pub fault: FaultSpec,
    pub gains: GainsSpec,
    pub trigger: TriggerSpec,
    /// one Brownian path shared by all agents (the modelled default) or
    /// independent paths per agent
    pub shared_noise: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "paper-sec4".into(),
            horizon: 10.0,
            dt: 1e-3,
            seed: 0,
            controller: ControllerVariant::EventTriggered,
            theta_band: 1.0,
            n_followers: 5,
            topologies: vec![
                TopologySpec::Preset("ring".into()),
                TopologySpec::Preset("two-hub".into()),
                TopologySpec::Preset("chain".into()),
            ],
            formation: FormationConfig::Circle { radius: 10.0 },
            initial: InitialConfig::default(),
            mode_process: ModeProcessSpec::default(),
            plant: PlantMatsSpec::default(),
            plant_per_mode: Vec::new(),
            uncertainty: UncertaintyLaw::Sinusoidal { amplitude: 0.5 },
            nonlinearity: Nonlinearity::Tanh { kappa: 1.0 },
            leader_input: LeaderInput::Sine { amplitude: 2.0, frequency: 10.0 },
            fault: FaultSpec::default(),
            gains: GainsSpec::default(),
            trigger: TriggerSpec::default(),
            shared_noise: true,
        }
    }
}

/// Look up a built-in scenario.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    match name {
        "paper-sec4" => Some(ScenarioConfig::default()),
        "no-fault" => {
            let mut c = ScenarioConfig::default();
            c.name = "no-fault".into();
            c.fault.enabled = false;
            Some(c)
        }
        "continuous-smc" => {
            let mut c = ScenarioConfig::default();
            c.name = "continuous-smc".into();
            c.controller = ControllerVariant::Continuous;
            Some(c)
        }
        _ => None,
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Load a preset by name, or parse the file at the given path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some(p) = preset(name_or_path) {
            return Ok(p);
        }
        let text = std::fs::read_to_string(name_or_path).map_err(|e| {
            Error::Config(format!("'{name_or_path}' is neither a preset nor a readable file: {e}"))
        })?;
        Self::from_toml(&text)
    }
}

/// FNV-1a over the canonical TOML serialization; stable across platforms.
pub fn config_hash(config: &ScenarioConfig) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in config.to_toml().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Circular formation offsets: h_i = R [cos(2 pi i / n), sin(2 pi i / n)] for
/// i = 1..n, zero velocity components.
pub fn formation_offsets(radius: f64, n: usize) -> Result<FormationSpec> {
    if !(radius > 0.0) || n == 0 {
        return Err(Error::Config(format!("circle formation needs radius > 0 and n >= 1, got {radius}, {n}")));
    }
    let offsets = (1..=n)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            DVector::from_vec(vec![radius * angle.cos(), 0.0, radius * angle.sin(), 0.0])
        })
        .collect();
    FormationSpec::new(offsets)
}

fn mat_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    if r == 0 {
        return Err(Error::Config(format!("{what}: empty matrix")));
    }
    let c = rows[0].len();
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn resolve_plant(spec: &PlantMatsSpec) -> Result<ModeMatrices> {
    let (a_def, b_def) = double_integrator_2d();
    let a = match &spec.a {
        Some(rows) => mat_from_rows(rows, "plant.a")?,
        None => a_def,
    };
    let n_x = a.nrows();
    let b = match &spec.b {
        Some(rows) => mat_from_rows(rows, "plant.b")?,
        None => {
            if n_x != 4 {
                return Err(Error::Config("plant.b must be given when plant.a is not 4x4".into()));
            }
            b_def
        }
    };
    let d = match &spec.d {
        Some(rows) => mat_from_rows(rows, "plant.d")?,
        None => {
            let mut d = DMatrix::zeros(n_x, n_x);
            for i in (0..n_x).step_by(2) {
                d[(i, i)] = 0.01;
            }
            d
        }
    };
    let e = match &spec.e {
        Some(rows) => mat_from_rows(rows, "plant.e")?,
        None => DMatrix::identity(n_x, n_x),
    };
    let m = match &spec.m {
        Some(rows) => mat_from_rows(rows, "plant.m")?,
        None => {
            let mut m = DMatrix::zeros(n_x, n_x);
            for i in (1..n_x).step_by(2) {
                m[(i, i)] = 0.2;
            }
            m
        }
    };
    let n = match &spec.n {
        Some(rows) => mat_from_rows(rows, "plant.n")?,
        None => DMatrix::from_diagonal_element(n_x, n_x, 0.2),
    };
    ModeMatrices::new(a, b, d, e, m, n)
}

fn resolve_topology(spec: &TopologySpec, n_followers: usize) -> Result<crate::topology::Topology> {
    let topo = match spec {
        TopologySpec::Preset(name) => topology_preset(name)
            .ok_or_else(|| Error::Config(format!("unknown topology preset '{name}'")))?,
        TopologySpec::Custom { adjacency, leader_gains } => build_topology(
            mat_from_rows(adjacency, "topology.adjacency")?,
            DVector::from_vec(leader_gains.clone()),
        )?,
    };
    if topo.n_followers() != n_followers {
        return Err(Error::Config(format!(
            "topology has {} followers, scenario declares {n_followers}",
            topo.n_followers()
        )));
    }
    Ok(topo)
}

/// Runtime-ready scenario with every component validated and cached.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub n_followers: usize,
    pub n_modes: usize,
    pub steps: usize,
    pub steps_per_sample: usize,
    pub couplings: Vec<CouplingMatrices>,
    pub plant_modes: Vec<ModeMatrices>,
    pub gains: PreparedGains,
    pub trigger: TriggerConfig,
    pub process: ModeProcess,
    pub formation: FormationSpec,
    pub initial: WorldState,
    pub hash: String,
    /// |blkdiag(B'P^B)(H (x) K)| per mode, the v lower-bound factor
    pub v_op_norms: Vec<f64>,
    /// |N| per mode for the held-value law
    pub n_norms: Vec<f64>,
}

impl ScenarioConfig {
    /// Validate everything and build the runtime scenario.
    pub fn resolve(&self) -> Result<Scenario> {
        if self.horizon < 0.0 || !self.horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be >= 0, got {}", self.horizon)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        let steps_f = self.horizon / self.dt;
        let steps = steps_f.round() as usize;
        if (steps_f - steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
            return Err(Error::Config(format!(
                "horizon {} must be a whole number of dt = {} steps",
                self.horizon, self.dt
            )));
        }
        let ratio = self.trigger.sample_period / self.dt;
        let steps_per_sample = ratio.round() as usize;
        if steps_per_sample == 0 || (ratio - steps_per_sample as f64).abs() > 1e-12 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "dt = {} must divide the sample period {} exactly",
                self.dt, self.trigger.sample_period
            )));
        }
        if self.n_followers == 0 {
            return Err(Error::Config("need at least one follower".into()));
        }
        let n_modes = self.topologies.len();
        if n_modes == 0 {
            return Err(Error::Config("need at least one topology mode".into()));
        }

        // topologies, each satisfying leader reachability
        let mut couplings = Vec::with_capacity(n_modes);
        for (r, spec) in self.topologies.iter().enumerate() {
            let topo = resolve_topology(spec, self.n_followers)?;
            if !leader_reachable(&topo) {
                return Err(Error::AssumptionViolated(format!(
                    "mode {r}: the leader cannot reach every follower"
                )));
            }
            couplings.push(coupling(&topo));
        }

        // plant matrices per mode
        let plant_modes: Vec<ModeMatrices> = if self.plant_per_mode.is_empty() {
            let shared = resolve_plant(&self.plant)?;
            vec![shared; n_modes]
        } else {
            if self.plant_per_mode.len() != n_modes {
                return Err(Error::Config(format!(
                    "plant_per_mode has {} entries for {n_modes} modes",
                    self.plant_per_mode.len()
                )));
            }
            self.plant_per_mode.iter().map(resolve_plant).collect::<Result<_>>()?
        };
        let n_x = plant_modes[0].n_x();
        let n_u = plant_modes[0].n_u();
        for mm in &plant_modes {
            if mm.n_x() != n_x || mm.n_u() != n_u {
                return Err(Error::DimensionMismatch(
                    "all modes must share the same state and input dimensions".into(),
                ));
            }
        }

        // switching process
        let chain = match &self.mode_process.embedded_chain {
            Some(rows) => mat_from_rows(rows, "mode_process.embedded_chain")?,
            None => {
                if n_modes == 1 {
                    DMatrix::zeros(1, 1)
                } else {
                    let off = 1.0 / (n_modes as f64 - 1.0);
                    DMatrix::from_fn(n_modes, n_modes, |i, j| if i == j { 0.0 } else { off })
                }
            }
        };
        let laws = match self.mode_process.sojourn.len() {
            0 => return Err(Error::Config("mode_process.sojourn must not be empty".into())),
            1 => vec![self.mode_process.sojourn[0].clone(); n_modes],
            k if k == n_modes => self.mode_process.sojourn.clone(),
            k => {
                return Err(Error::Config(format!(
                    "mode_process.sojourn has {k} entries for {n_modes} modes"
                )))
            }
        };
        let process = ModeProcess::new(chain, laws)?;
        if self.mode_process.initial_mode >= n_modes {
            return Err(Error::InvalidMode { index: self.mode_process.initial_mode, n_modes });
        }

        // controller gains
        let p_hat_block = match &self.gains.p_hat {
            Some(rows) => mat_from_rows(rows, "gains.p_hat")?,
            None => DMatrix::identity(n_x, n_x),
        };
        let k_mats: Vec<DMatrix<f64>> = if self.gains.k.is_empty() {
            couplings
                .iter()
                .zip(&plant_modes)
                .map(|(c, mm)| stabilizing_gain(mm, &c.h_matrix, self.gains.omega, self.gains.zeta))
                .collect::<Result<_>>()?
        } else {
            if self.gains.k.len() != n_modes {
                return Err(Error::Config(format!(
                    "gains.k has {} entries for {n_modes} modes",
                    self.gains.k.len()
                )));
            }
            self.gains
                .k
                .iter()
                .map(|rows| mat_from_rows(rows, "gains.k"))
                .collect::<Result<_>>()?
        };
        let gains = ControllerGains {
            k_mats,
            p_hat: vec![p_hat_block; n_modes],
            alpha: vec![self.gains.alpha; n_modes],
            theta_reach: vec![self.gains.theta_reach; n_modes],
            rho: self.gains.rho,
            kappa: self.gains.kappa,
            cond_cap: self.gains.cond_cap,
            boundary_layer: self.gains.boundary_layer,
        }
        .prepare(&plant_modes)?;
        crate::smc::validate_diffusion_annihilation(&gains, &plant_modes, 1e-9)?;

        // trigger
        let sigma = match &self.trigger.sigma_per_mode {
            Some(v) => {
                if v.len() != n_modes {
                    return Err(Error::Config(format!(
                        "trigger.sigma_per_mode has {} entries for {n_modes} modes",
                        v.len()
                    )));
                }
                v.clone()
            }
            None => vec![self.trigger.sigma; n_modes],
        };
        let phi_block = match &self.trigger.phi {
            Some(rows) => mat_from_rows(rows, "trigger.phi")?,
            None => {
                // velocity-weighted default: the trigger reacts to velocity
                // novelty, which collapses once the formation is reached
                let mut phi = DMatrix::identity(n_x, n_x);
                for i in (0..n_x).step_by(2) {
                    phi[(i, i)] = 0.01;
                }
                phi
            }
        };
        if phi_block.nrows() != n_x {
            return Err(Error::DimensionMismatch(format!(
                "trigger.phi block is {}x{}, state dimension is {n_x}",
                phi_block.nrows(),
                phi_block.ncols()
            )));
        }
        let trigger = TriggerConfig {
            sample_period: self.trigger.sample_period,
            sigma,
            phi: vec![phi_block; n_modes],
            delay_bound: self.trigger.delay_bound,
            v_margin_scale: self.trigger.v_margin_scale,
            per_agent: self.trigger.per_agent,
        };
        trigger.validate()?;

        // uncertainty, nonlinearity and fault parameters
        self.uncertainty.validate()?;
        if self.fault.enabled {
            let [lo, hi] = self.fault.efficiency_range;
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(Error::Config(format!(
                    "fault efficiency range must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]"
                )));
            }
            if self.fault.onset < 0.0 || !(self.fault.resample_period > 0.0) {
                return Err(Error::Config("fault onset must be >= 0 with a positive resample period".into()));
            }
        }

        // formation and initial state
        let formation = match &self.formation {
            FormationConfig::Circle { radius } => formation_offsets(*radius, self.n_followers)?,
            FormationConfig::Explicit { offsets } => {
                let vs: Vec<DVector<f64>> =
                    offsets.iter().map(|o| DVector::from_vec(o.clone())).collect();
                if vs.len() != self.n_followers || vs.iter().any(|v| v.len() != n_x) {
                    return Err(Error::DimensionMismatch(
                        "explicit offsets must supply one n_x vector per follower".into(),
                    ));
                }
                FormationSpec::new(vs)?
            }
        };
        let expand = |v: &[f64], what: &str| -> Result<DVector<f64>> {
            if v.len() == n_x {
                Ok(DVector::from_vec(v.to_vec()))
            } else if 2 * v.len() == n_x {
                // positions only; interleave zero velocities
                let mut full = DVector::zeros(n_x);
                for (axis, &p) in v.iter().enumerate() {
                    full[2 * axis] = p;
                }
                Ok(full)
            } else {
                Err(Error::DimensionMismatch(format!(
                    "{what}: expected {n_x} components or {} positions, got {}",
                    n_x / 2,
                    v.len()
                )))
            }
        };
        if self.initial.followers.len() != self.n_followers {
            return Err(Error::DimensionMismatch(format!(
                "{} initial follower states for {} followers",
                self.initial.followers.len(),
                self.n_followers
            )));
        }
        let initial = WorldState {
            time: 0.0,
            leader: expand(&self.initial.leader, "initial.leader")?,
            followers: self
                .initial
                .followers
                .iter()
                .enumerate()
                .map(|(i, v)| expand(v, &format!("initial.followers[{i}]")))
                .collect::<Result<_>>()?,
        };

        let v_op_norms = (0..n_modes)
            .map(|r| v_operator_norm(&gains, &couplings[r], &trigger.phi[r], r))
            .collect();
        let n_norms = plant_modes
            .iter()
            .map(|mm| mm.n_mat.clone().svd(false, false).singular_values.max())
            .collect();

        Ok(Scenario {
            config: self.clone(),
            n_followers: self.n_followers,
            n_modes,
            steps,
            steps_per_sample,
            couplings,
            plant_modes,
            gains,
            trigger,
            process,
            formation,
            initial,
            hash: config_hash(self),
            v_op_norms,
            n_norms,
        })
    }
}
