//! Stochastic agent dynamics: mode-dependent linear matrices, structured
//! uncertainty, bounded nonlinearity, state-multiplicative Brownian noise and
//! actuator faults, integrated with an Euler-Maruyama step.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-9;

/// Per-mode plant matrices. `e_mat` may be singular; integration requires it
/// invertible, certificate checking does not.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrices {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub d_mat: DMatrix<f64>,
    pub e_mat: DMatrix<f64>,
    pub m_mat: DMatrix<f64>,
    pub n_mat: DMatrix<f64>,
    e_inv: Option<DMatrix<f64>>,
}

impl ModeMatrices {
    pub fn new(
        a_mat: DMatrix<f64>,
        b_mat: DMatrix<f64>,
        d_mat: DMatrix<f64>,
        e_mat: DMatrix<f64>,
        m_mat: DMatrix<f64>,
        n_mat: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a_mat.nrows();
        if a_mat.ncols() != n {
            return Err(Error::DimensionMismatch("A must be square".into()));
        }
        for (name, m) in [("D", &d_mat), ("E", &e_mat), ("M", &m_mat), ("N", &n_mat)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        if b_mat.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows, expected {n}",
                b_mat.nrows()
            )));
        }
        let n_u = b_mat.ncols();
        if n_u == 0 || n_u > n {
            return Err(Error::DimensionMismatch(format!("B must have 1..={n} columns, got {n_u}")));
        }
        let sv = b_mat.clone().svd(false, false).singular_values;
        if sv[n_u - 1] <= RANK_TOL {
            return Err(Error::Config(format!(
                "B must have full column rank (smallest singular value {:.3e})",
                sv[n_u - 1]
            )));
        }
        let e_inv = invert_if_regular(&e_mat);
        Ok(ModeMatrices { a_mat, b_mat, d_mat, e_mat, m_mat, n_mat, e_inv })
    }

    pub fn n_x(&self) -> usize {
        self.a_mat.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b_mat.ncols()
    }

    pub fn e_invertible(&self) -> bool {
        self.e_inv.is_some()
    }
}

fn invert_if_regular(e: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sv = e.clone().svd(false, false).singular_values;
    let min = sv[sv.len() - 1];
    let max = sv[0];
    if min <= RANK_TOL * max.max(1.0) {
        None
    } else {
        e.clone().try_inverse()
    }
}

/// Planar double-integrator with state layout (px, vx, py, vy).
pub fn double_integrator_2d() -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, 0.0, 0.0,
        ],
    );
    let b = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    (a, b)
}

/// Time-varying norm-bounded uncertainty factor F(t), |F| < 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UncertaintyLaw {
    Zero,
    /// F(t) = amplitude * sin(t) * I.
    Sinusoidal { amplitude: f64 },
    /// Diagonal random walk, each entry clipped to [-amplitude, amplitude].
    RandomWalkClipped { amplitude: f64, step: f64 },
}

impl UncertaintyLaw {
    pub fn validate(&self) -> Result<()> {
        let amp = match *self {
            UncertaintyLaw::Zero => 0.0,
            UncertaintyLaw::Sinusoidal { amplitude } => amplitude,
            UncertaintyLaw::RandomWalkClipped { amplitude, .. } => amplitude,
        };
        if (0.0..1.0).contains(&amp) {
            Ok(())
        } else {
            Err(Error::Config(format!("uncertainty amplitude must lie in [0, 1), got {amp}")))
        }
    }
}

/// Stateful generator of F(t) samples along one trajectory.
#[derive(Debug, Clone)]
pub struct UncertaintyProcess {
    law: UncertaintyLaw,
    n_x: usize,
    walk: DVector<f64>,
}

impl UncertaintyProcess {
    pub fn new(law: UncertaintyLaw, n_x: usize) -> Result<Self> {
        law.validate()?;
        Ok(UncertaintyProcess { law, n_x, walk: DVector::zeros(n_x) })
    }

    /// F at time t; the random walk advances by one dt-step per call.
    pub fn sample(&mut self, t: f64, dt: f64, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
        match self.law {
            UncertaintyLaw::Zero => DMatrix::zeros(self.n_x, self.n_x),
            UncertaintyLaw::Sinusoidal { amplitude } => {
                DMatrix::from_diagonal_element(self.n_x, self.n_x, amplitude * t.sin())
            }
            UncertaintyLaw::RandomWalkClipped { amplitude, step } => {
                for k in 0..self.n_x {
                    let z: f64 = StandardNormal.sample(rng);
                    self.walk[k] = (self.walk[k] + step * dt.sqrt() * z).clamp(-amplitude, amplitude);
                }
                DMatrix::from_diagonal(&self.walk)
            }
        }
    }
}

/// Piecewise-constant actuator-efficiency fault with additive bias, inert
/// before `onset`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultProfile {
    onset: f64,
    /// efficiency table, one row per follower, one entry per resample window
    table: Vec<Vec<f64>>,
    resample_period: f64,
    bias_amplitude: f64,
    n_u: usize,
}

impl FaultProfile {
    /// Fault that never fires.
    pub fn none(n_followers: usize, n_u: usize) -> Self {
        FaultProfile {
            onset: f64::INFINITY,
            table: vec![vec![1.0]; n_followers],
            resample_period: 1.0,
            bias_amplitude: 0.0,
            n_u,
        }
    }

    pub fn new(
        onset: f64,
        table: Vec<Vec<f64>>,
        resample_period: f64,
        bias_amplitude: f64,
        n_u: usize,
    ) -> Result<Self> {
        if onset < 0.0 {
            return Err(Error::Config(format!("fault onset must be >= 0, got {onset}")));
        }
        if resample_period <= 0.0 {
            return Err(Error::Config("fault resample period must be positive".into()));
        }
        for (i, row) in table.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::Config(format!("empty efficiency table for follower {i}")));
            }
            for &eta in row {
                if !(eta > 0.0 && eta <= 1.0) {
                    return Err(Error::Config(format!(
                        "efficiency must lie in (0, 1], got {eta} for follower {i}"
                    )));
                }
            }
        }
        Ok(FaultProfile { onset, table, resample_period, bias_amplitude, n_u })
    }

    /// Draw an efficiency table from U[lo, hi] per follower per window.
    pub fn sampled(
        onset: f64,
        horizon: f64,
        resample_period: f64,
        range: (f64, f64),
        bias_amplitude: f64,
        n_followers: usize,
        n_u: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        let windows = if horizon > onset {
            ((horizon - onset) / resample_period).ceil() as usize + 1
        } else {
            1
        };
        let table = (0..n_followers)
            .map(|_| (0..windows).map(|_| rng.random_range(range.0..=range.1)).collect())
            .collect();
        FaultProfile::new(onset, table, resample_period, bias_amplitude, n_u)
    }

    pub fn onset(&self) -> f64 {
        self.onset
    }

    /// eta_i(t): 1 before onset, then the table window containing t.
    pub fn efficiency(&self, follower: usize, t: f64) -> f64 {
        if t < self.onset {
            return 1.0;
        }
        let row = &self.table[follower];
        let w = ((t - self.onset) / self.resample_period) as usize;
        row[w.min(row.len() - 1)]
    }

    /// u_b(t): zero before onset, small rotating bias after.
    pub fn bias(&self, t: f64) -> DVector<f64> {
        if t < self.onset || self.bias_amplitude == 0.0 {
            return DVector::zeros(self.n_u);
        }
        DVector::from_fn(self.n_u, |k, _| {
            if k % 2 == 0 {
                self.bias_amplitude * t.sin()
            } else {
                self.bias_amplitude * t.cos()
            }
        })
    }
}

/// u_f = eta_i(t) * u + u_b(t); the identity map before the fault onset.
pub fn apply_fault(u: &DVector<f64>, fp: &FaultProfile, follower: usize, t: f64) -> DVector<f64> {
    if t < fp.onset {
        return u.clone();
    }
    fp.efficiency(follower, t) * u + fp.bias(t)
}

/// Full system state: leader plus followers at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub time: f64,
    pub leader: DVector<f64>,
    pub followers: Vec<DVector<f64>>,
}

impl WorldState {
    pub fn n_followers(&self) -> usize {
        self.followers.len()
    }

    pub fn is_finite(&self) -> bool {
        self.leader.iter().all(|v| v.is_finite())
            && self.followers.iter().all(|x| x.iter().all(|v| v.is_finite()))
    }
}

/// Static formation offsets h_i relative to the leader.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationSpec {
    offsets: Vec<DVector<f64>>,
}

impl FormationSpec {
    /// Offsets must carry zero velocity components (indices 1, 3, ...),
    /// consistent with a constant formation shape.
    pub fn new(offsets: Vec<DVector<f64>>) -> Result<Self> {
        for (i, h) in offsets.iter().enumerate() {
            for k in (1..h.len()).step_by(2) {
                if h[k] != 0.0 {
                    return Err(Error::Config(format!(
                        "offset {i} has nonzero velocity component at index {k}; static formations require zero velocity offsets"
                    )));
                }
            }
        }
        Ok(FormationSpec { offsets })
    }

    pub fn offsets(&self) -> &[DVector<f64>] {
        &self.offsets
    }
}

/// y_i = x_i - x_0 - h_i for every follower.
pub fn tracking_error(w: &WorldState, fs: &FormationSpec) -> Result<Vec<DVector<f64>>> {
    if fs.offsets.len() != w.followers.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} offsets for {} followers",
            fs.offsets.len(),
            w.followers.len()
        )));
    }
    w.followers
        .iter()
        .zip(&fs.offsets)
        .map(|(x, h)| {
            if x.len() != w.leader.len() || h.len() != x.len() {
                return Err(Error::DimensionMismatch("state/offset dimensions disagree".into()));
            }
            Ok(x - &w.leader - h)
        })
        .collect()
}

/// Bounded inherent nonlinearity entering through the input channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Nonlinearity {
    Zero,
    /// f_j = kappa * tanh(x_j) on the first n_u state components, so |f| <= kappa |x|.
    Tanh { kappa: f64 },
    /// f_j = e^t sin(10 t); unbounded in t, kept for completeness.
    ExpSine,
}

/// Evaluate the nonlinearity as an n_u-vector.
pub fn nonlinearity(kind: &Nonlinearity, t: f64, x: &DVector<f64>, n_u: usize) -> DVector<f64> {
    match *kind {
        Nonlinearity::Zero => DVector::zeros(n_u),
        Nonlinearity::Tanh { kappa } => {
            DVector::from_fn(n_u, |k, _| if k < x.len() { kappa * x[k].tanh() } else { 0.0 })
        }
        Nonlinearity::ExpSine => DVector::from_element(n_u, t.exp() * (10.0 * t).sin()),
    }
}

/// Controls entering one integration step: faulted follower inputs plus the
/// leader's exogenous input.
pub struct ControlInputs<'a> {
    pub followers: &'a [DVector<f64>],
    pub leader: &'a DVector<f64>,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values[0]
}

/// Deterministic part of dx/dt for all agents:
/// (A + M F N) x_i + B (u_i + f(t, x_i)); the leader gets its exogenous input
/// in place of a feedback control.
pub fn drift(
    w: &WorldState,
    inputs: &ControlInputs,
    mm: &ModeMatrices,
    f_uncertainty: &DMatrix<f64>,
    nonlin: &Nonlinearity,
    t: f64,
) -> Result<Vec<DVector<f64>>> {
    let fnorm = spectral_norm(f_uncertainty);
    if fnorm >= 1.0 {
        return Err(Error::UncertaintyNormViolation { norm: fnorm });
    }
    if inputs.followers.len() != w.followers.len() {
        return Err(Error::DimensionMismatch("one control per follower required".into()));
    }
    let delta_a = &mm.m_mat * f_uncertainty * &mm.n_mat;
    let a_eff = &mm.a_mat + delta_a;
    let n_u = mm.n_u();
    let mut out = Vec::with_capacity(w.followers.len() + 1);
    let lead_f = nonlinearity(nonlin, t, &w.leader, n_u);
    out.push(&a_eff * &w.leader + &mm.b_mat * (inputs.leader + lead_f));
    for (x, u) in w.followers.iter().zip(inputs.followers) {
        let f = nonlinearity(nonlin, t, x, n_u);
        out.push(&a_eff * x + &mm.b_mat * (u + f));
    }
    Ok(out)
}

/// Brownian increment source; either one shared scalar path or independent
/// paths per agent.
pub struct NoiseSource<'a> {
    pub rng: &'a mut ChaCha12Rng,
    pub shared: bool,
}

impl NoiseSource<'_> {
    /// Increments for (leader, followers): sqrt(dt) * z.
    fn increments(&mut self, n_followers: usize, dt: f64) -> Vec<f64> {
        let sd = dt.sqrt();
        if self.shared {
            let z: f64 = StandardNormal.sample(self.rng);
            vec![sd * z; n_followers + 1]
        } else {
            (0..=n_followers)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(self.rng);
                    sd * z
                })
                .collect()
        }
    }
}

/// One Euler-Maruyama step: x+ = x + E^-1 (drift dt + D x dW).
pub fn step(
    w: &WorldState,
    inputs: &ControlInputs,
    mm: &ModeMatrices,
    f_uncertainty: &DMatrix<f64>,
    nonlin: &Nonlinearity,
    noise: &mut NoiseSource,
    dt: f64,
) -> Result<WorldState> {
    assert!(dt > 0.0, "dt must be positive");
    let e_inv = mm.e_inv.as_ref().ok_or(Error::SingularMassMatrix)?;
    let drifts = drift(w, inputs, mm, f_uncertainty, nonlin, w.time)?;
    let dw = noise.increments(w.followers.len(), dt);
    let advance = |x: &DVector<f64>, dx: &DVector<f64>, dw: f64| -> DVector<f64> {
        x + e_inv * (dx * dt + &mm.d_mat * x * dw)
    };
    let leader = advance(&w.leader, &drifts[0], dw[0]);
    let followers: Vec<DVector<f64>> = w
        .followers
        .iter()
        .enumerate()
        .map(|(i, x)| advance(x, &drifts[i + 1], dw[i + 1]))
        .collect();
    let next = WorldState { time: w.time + dt, leader, followers };
    if !next.is_finite() {
        return Err(Error::NonFiniteState { t: next.time, last_good: w.time });
    }
    Ok(next)
}
