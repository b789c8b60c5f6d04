//! Distributed integral sliding surface and the continuous sliding-mode
//! fault-tolerant control law.
//!
//! Per follower i in mode r:
//!
//! ```text
//! s_i(t) = B'P^ E y_i(t) - int_0^t B'P^ A y_i ds - int_0^t B'P^ B K c_i(s) ds
//! ```
//!
//! with the coupling c_i = (H y)_i evaluated on tracking errors, so every
//! term vanishes on formation. The control law adds a signed reaching term
//! whose gain covers uncertainty, mode-switching and nonlinearity bounds.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::plant::ModeMatrices;
use crate::topology::CouplingMatrices;

/// Per-mode controller parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    /// feedback gains K_i, one n_u x n_x matrix per mode
    pub k_mats: Vec<DMatrix<f64>>,
    /// symmetric positive definite P^_i per mode
    pub p_hat: Vec<DMatrix<f64>>,
    /// tracking-error reaching weight per mode
    pub alpha: Vec<f64>,
    /// constant reaching margin per mode, > 0
    pub theta_reach: Vec<f64>,
    /// nominal inverse actuator efficiency
    pub rho: f64,
    /// nonlinearity Lipschitz bound
    pub kappa: f64,
    /// cap on cond(B'P^B) before the configuration is rejected
    pub cond_cap: f64,
    /// boundary-layer width for the reaching term: 0 keeps the pure sign
    /// function (the finite-time reaching argument assumes it); > 0 smooths
    /// to s/(|s| + delta) componentwise and trades ideal sliding for less
    /// chattering
    pub boundary_layer: f64,
}

/// Gains with the per-mode products cached for the hot loop.
#[derive(Debug, Clone)]
pub struct PreparedGains {
    pub gains: ControllerGains,
    /// B' P^ per mode
    pub bp: Vec<DMatrix<f64>>,
    /// B' P^ B per mode
    pub bpb: Vec<DMatrix<f64>>,
    /// (B' P^ B)^-1 per mode
    pub bpb_inv: Vec<DMatrix<f64>>,
    /// cond(B' P^ B) per mode
    pub cond: Vec<f64>,
    /// |(B'P^B)^-1 B'P^ M| per mode
    pub unc_norm: Vec<f64>,
    /// B'P^ E per mode (boundary term of the surface)
    pub bpe: Vec<DMatrix<f64>>,
    /// B'P^ A per mode
    pub bpa: Vec<DMatrix<f64>>,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values[0]
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols()
        && (m - m.transpose()).norm() <= 1e-10 * m.norm().max(1.0)
        && m.clone().cholesky().is_some()
}

impl ControllerGains {
    /// Validate against the per-mode plant matrices and cache products.
    pub fn prepare(self, modes: &[ModeMatrices]) -> Result<PreparedGains> {
        let n_modes = modes.len();
        if self.k_mats.len() != n_modes
            || self.p_hat.len() != n_modes
            || self.alpha.len() != n_modes
            || self.theta_reach.len() != n_modes
        {
            return Err(Error::DimensionMismatch(format!(
                "gains must supply one entry per mode ({n_modes})"
            )));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if self.boundary_layer < 0.0 {
            return Err(Error::Config(format!(
                "boundary_layer must be >= 0, got {}",
                self.boundary_layer
            )));
        }
        for (i, th) in self.theta_reach.iter().enumerate() {
            if !(*th > 0.0) {
                return Err(Error::Config(format!("theta_reach[{i}] must be positive, got {th}")));
            }
        }
        for (i, al) in self.alpha.iter().enumerate() {
            if *al < 0.0 {
                return Err(Error::Config(format!("alpha[{i}] must be >= 0, got {al}")));
            }
        }
        let mut bp = Vec::with_capacity(n_modes);
        let mut bpb = Vec::with_capacity(n_modes);
        let mut bpb_inv = Vec::with_capacity(n_modes);
        let mut cond = Vec::with_capacity(n_modes);
        let mut unc_norm = Vec::with_capacity(n_modes);
        let mut bpe = Vec::with_capacity(n_modes);
        let mut bpa = Vec::with_capacity(n_modes);
        for (r, mm) in modes.iter().enumerate() {
            let p = &self.p_hat[r];
            if !is_spd(p) {
                return Err(Error::Config(format!("p_hat[{r}] must be symmetric positive definite")));
            }
            if p.nrows() != mm.n_x() {
                return Err(Error::DimensionMismatch(format!(
                    "p_hat[{r}] is {}x{}, plant has n_x = {}",
                    p.nrows(),
                    p.ncols(),
                    mm.n_x()
                )));
            }
            let k = &self.k_mats[r];
            if k.nrows() != mm.n_u() || k.ncols() != mm.n_x() {
                return Err(Error::DimensionMismatch(format!(
                    "k_mats[{r}] is {}x{}, expected {}x{}",
                    k.nrows(),
                    k.ncols(),
                    mm.n_u(),
                    mm.n_x()
                )));
            }
            let bp_r = mm.b_mat.transpose() * p;
            let bpb_r = &bp_r * &mm.b_mat;
            let sv = bpb_r.clone().svd(false, false).singular_values;
            let c = sv[0] / sv[sv.len() - 1].max(f64::MIN_POSITIVE);
            if !c.is_finite() || c > self.cond_cap {
                return Err(Error::NonsingularityLoss { mode: r, cond: c, cap: self.cond_cap });
            }
            let inv = bpb_r.clone().try_inverse().ok_or(Error::NonsingularityLoss {
                mode: r,
                cond: c,
                cap: self.cond_cap,
            })?;
            unc_norm.push(spectral_norm(&(&inv * &bp_r * &mm.m_mat)));
            bpe.push(&bp_r * &mm.e_mat);
            bpa.push(&bp_r * &mm.a_mat);
            bp.push(bp_r);
            bpb.push(bpb_r);
            bpb_inv.push(inv);
            cond.push(c);
        }
        Ok(PreparedGains { gains: self, bp, bpb, bpb_inv, cond, unc_norm, bpe, bpa })
    }
}

impl PreparedGains {
    pub fn n_modes(&self) -> usize {
        self.bp.len()
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode < self.n_modes() {
            Ok(())
        } else {
            Err(Error::InvalidMode { index: mode, n_modes: self.n_modes() })
        }
    }

    /// |B'P^ D| residual per mode; the surface derivation needs this to vanish.
    pub fn diffusion_residual(&self, modes: &[ModeMatrices]) -> Vec<f64> {
        modes.iter().zip(&self.bp).map(|(mm, bp)| (bp * &mm.d_mat).norm()).collect()
    }
}

/// Reject configurations whose diffusion does not satisfy B'P^D = 0.
pub fn validate_diffusion_annihilation(
    prepared: &PreparedGains,
    modes: &[ModeMatrices],
    tol: f64,
) -> Result<()> {
    for (r, res) in prepared.diffusion_residual(modes).iter().enumerate() {
        if *res > tol {
            return Err(Error::Config(format!(
                "mode {r}: |B'P^D| = {res:.3e} exceeds {tol:.1e}; the integral surface requires the \
                 diffusion to vanish under B'P^ (choose D with zero rows on the actuated channels \
                 or adjust P^)"
            )));
        }
    }
    Ok(())
}

/// Componentwise sign with sgn(0) = 0.
pub fn sgn(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Reaching direction: pure sign for delta = 0, else the boundary-layer
/// smoothing s/(|s| + delta) componentwise.
pub fn reach_direction(v: &DVector<f64>, delta: f64) -> DVector<f64> {
    if delta == 0.0 {
        sgn(v)
    } else {
        v.map(|x| x / (x.abs() + delta))
    }
}

/// Coupling terms c_i = sum_j H_ij y_j, one per follower.
pub fn coupling_terms(y: &[DVector<f64>], topo: &CouplingMatrices) -> Vec<DVector<f64>> {
    let n = y.len();
    let n_x = if n > 0 { y[0].len() } else { 0 };
    (0..n)
        .map(|i| {
            let mut acc = DVector::zeros(n_x);
            for (j, yj) in y.iter().enumerate() {
                let w = topo.h_matrix[(i, j)];
                if w != 0.0 {
                    acc += w * yj;
                }
            }
            acc
        })
        .collect()
}

/// Integral sliding surface state, maintained incrementally on the
/// integration grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceState {
    /// accumulated integral per follower (both integral terms combined)
    integral: Vec<DVector<f64>>,
    /// current surface values s_i
    s: Vec<DVector<f64>>,
}

impl SurfaceState {
    /// At t = 0 the integrals are empty and s_i = B'P^ E y_i(0).
    pub fn new(y0: &[DVector<f64>], g: &PreparedGains, mode: usize) -> Result<Self> {
        g.check_mode(mode)?;
        let n_u = g.bpb[mode].nrows();
        let integral = vec![DVector::zeros(n_u); y0.len()];
        let s = y0.iter().map(|y| &g.bpe[mode] * y).collect();
        Ok(SurfaceState { integral, s })
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.s
    }

    /// Stacked surface vector.
    pub fn stacked(&self) -> DVector<f64> {
        stack(&self.s)
    }

    /// Advance both integral terms one explicit rectangle step using the
    /// integrand at `y_left` (the left grid endpoint).
    pub fn advance(
        &mut self,
        y_left: &[DVector<f64>],
        topo: &CouplingMatrices,
        g: &PreparedGains,
        mode: usize,
        dt: f64,
    ) -> Result<()> {
        g.check_mode(mode)?;
        let coup = coupling_terms(y_left, topo);
        let bpbk = &g.bpb[mode] * &g.gains.k_mats[mode];
        for (i, y) in y_left.iter().enumerate() {
            self.integral[i] += dt * (&g.bpa[mode] * y + &bpbk * &coup[i]);
        }
        Ok(())
    }

    /// Recompute s from the current tracking errors and the accumulated integral.
    pub fn refresh(&mut self, y_now: &[DVector<f64>], g: &PreparedGains, mode: usize) -> Result<()> {
        g.check_mode(mode)?;
        for (i, y) in y_now.iter().enumerate() {
            self.s[i] = &g.bpe[mode] * y - &self.integral[i];
        }
        Ok(())
    }
}

/// One combined surface update: rectangle step at `y`, then s recomputed at `y`.
pub fn surface_update(
    ss: &mut SurfaceState,
    y: &[DVector<f64>],
    topo: &CouplingMatrices,
    g: &PreparedGains,
    mode: usize,
    dt: f64,
) -> Result<()> {
    ss.advance(y, topo, g, mode, dt)?;
    ss.refresh(y, g, mode)
}

/// Magnitude of the mode-switching gain term:
/// 0.5 |sum_{j != r} pi_rj(h) (B'P^B)^-1| with the current mode's product.
fn switching_gain(hazard_row: &[f64], mode: usize, bpb_inv: &DMatrix<f64>) -> f64 {
    let rate_sum: f64 =
        hazard_row.iter().enumerate().filter(|(j, _)| *j != mode).map(|(_, r)| r).sum();
    0.5 * spectral_norm(&(rate_sum * bpb_inv))
}

/// Continuous sliding-mode fault-tolerant law, one control per follower:
/// u_i = K (H y)_i - rho (unc |N y_i| + switch |s_i| + alpha |y_i| + theta) sgn(s_i).
pub fn smc_law(
    y: &[DVector<f64>],
    s: &[DVector<f64>],
    g: &PreparedGains,
    mm: &ModeMatrices,
    topo: &CouplingMatrices,
    hazard_row: &[f64],
    mode: usize,
) -> Result<Vec<DVector<f64>>> {
    g.check_mode(mode)?;
    let coup = coupling_terms(y, topo);
    let k = &g.gains.k_mats[mode];
    let sw = switching_gain(hazard_row, mode, &g.bpb_inv[mode]);
    let rho = g.gains.rho;
    let alpha = g.gains.alpha[mode];
    let theta = g.gains.theta_reach[mode];
    let delta = g.gains.boundary_layer;
    Ok(y
        .iter()
        .zip(s)
        .zip(&coup)
        .map(|((yi, si), ci)| {
            let gain = g.unc_norm[mode] * (&mm.n_mat * yi).norm()
                + sw * si.norm()
                + alpha * yi.norm()
                + theta;
            k * ci - rho * gain * reach_direction(si, delta)
        })
        .collect())
}

/// Known fault and disturbance terms for the equivalent-control diagnostic.
pub struct MatchedTerms<'a> {
    pub delta_a: &'a DMatrix<f64>,
    pub nonlin: &'a DVector<f64>,
    pub bias: &'a DVector<f64>,
    pub efficiency: f64,
}

/// Equivalent control u_eq that keeps sdot = 0 on the nominal surface.
/// Analysis aid only; never part of the control path.
pub fn equivalent_control(
    y: &[DVector<f64>],
    g: &PreparedGains,
    topo: &CouplingMatrices,
    terms: &MatchedTerms,
    mode: usize,
) -> Result<Vec<DVector<f64>>> {
    g.check_mode(mode)?;
    let coup = coupling_terms(y, topo);
    let k = &g.gains.k_mats[mode];
    let proj = &g.bpb_inv[mode] * &g.bp[mode];
    let inv_eta = 1.0 / terms.efficiency;
    Ok(y
        .iter()
        .zip(&coup)
        .map(|(yi, ci)| inv_eta * (k * ci - &proj * (terms.delta_a * yi) - terms.nonlin - terms.bias))
        .collect())
}

/// sdot for one follower under the matched-term model, used to verify the
/// equivalent control cancels exactly:
/// sdot_i = B'P^ [(dA - B K c(.)) y + B (eta u + u_b + f)].
pub fn surface_derivative(
    y: &[DVector<f64>],
    u: &[DVector<f64>],
    g: &PreparedGains,
    mm: &ModeMatrices,
    topo: &CouplingMatrices,
    terms: &MatchedTerms,
    mode: usize,
) -> Result<Vec<DVector<f64>>> {
    g.check_mode(mode)?;
    let coup = coupling_terms(y, topo);
    let k = &g.gains.k_mats[mode];
    Ok(y
        .iter()
        .zip(u)
        .zip(&coup)
        .map(|((yi, ui), ci)| {
            let inner = terms.efficiency * ui + terms.bias + terms.nonlin;
            &g.bp[mode] * (terms.delta_a * yi - &mm.b_mat * (k * ci)) + &g.bpb[mode] * inner
        })
        .collect())
}

/// Reaching diagnostics over a recorded surface trace.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ReachingReport {
    /// V(t) = 1/2 sum_i s_i' (B'P^B)^-1 s_i on the grid
    pub lyapunov: Vec<f64>,
    /// first grid time with |s| <= band, if any
    pub first_hit: Option<f64>,
    /// fraction of steps outside the band where V decreased
    pub decreasing_fraction: f64,
    pub band: f64,
}

/// Scan a per-step series of (per-follower surface blocks, mode) pairs.
pub fn reaching_monitor(
    s_series: &[(Vec<DVector<f64>>, usize)],
    g: &PreparedGains,
    dt: f64,
    band: f64,
) -> ReachingReport {
    let v_of = |s: &[DVector<f64>], mode: usize| -> f64 {
        s.iter().map(|si| 0.5 * (si.transpose() * &g.bpb_inv[mode] * si)[(0, 0)]).sum()
    };
    let norm_of =
        |s: &[DVector<f64>]| -> f64 { s.iter().map(|si| si.norm_squared()).sum::<f64>().sqrt() };
    let lyapunov: Vec<f64> = s_series.iter().map(|(s, m)| v_of(s, *m)).collect();
    let first_hit = s_series.iter().position(|(s, _)| norm_of(s) <= band).map(|k| k as f64 * dt);
    let mut outside = 0usize;
    let mut decreasing = 0usize;
    for k in 0..s_series.len().saturating_sub(1) {
        if norm_of(&s_series[k].0) > band {
            outside += 1;
            if lyapunov[k + 1] < lyapunov[k] {
                decreasing += 1;
            }
        }
    }
    let decreasing_fraction = if outside == 0 { 1.0 } else { decreasing as f64 / outside as f64 };
    ReachingReport { lyapunov, first_hit, decreasing_fraction, band }
}

/// Stack per-follower vectors into one column.
pub fn stack(blocks: &[DVector<f64>]) -> DVector<f64> {
    let total: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(total);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.len()).copy_from(b);
        at += b.len();
    }
    out
}

/// Split a stacked column back into n equal blocks.
pub fn unstack(v: &DVector<f64>, n: usize) -> Vec<DVector<f64>> {
    assert!(n > 0 && v.len() % n == 0, "stacked length {} not divisible by {n}", v.len());
    let block = v.len() / n;
    (0..n).map(|i| v.rows(i * block, block).into_owned()).collect()
}

/// Pole-placement style stabilizing gain for the planar double integrator:
/// K acts per axis as [-omega^2, -2 zeta omega], then the full closed loop
/// I (x) A + H (x) (B K) is verified Hurwitz (zeta is widened if needed).
pub fn stabilizing_gain(
    mm: &ModeMatrices,
    h_matrix: &DMatrix<f64>,
    omega: f64,
    zeta: f64,
) -> Result<DMatrix<f64>> {
    let n_x = mm.n_x();
    let n_u = mm.n_u();
    if n_x != 2 * n_u {
        return Err(Error::Config(format!(
            "automatic gain design expects a per-axis double integrator (n_x = 2 n_u), got n_x = {n_x}, n_u = {n_u}"
        )));
    }
    let mut z = zeta;
    for _ in 0..6 {
        let mut k = DMatrix::zeros(n_u, n_x);
        for axis in 0..n_u {
            k[(axis, 2 * axis)] = -omega * omega;
            k[(axis, 2 * axis + 1)] = -2.0 * z * omega;
        }
        let bk = &mm.b_mat * &k;
        let n = h_matrix.nrows();
        let closed = DMatrix::identity(n, n).kronecker(&mm.a_mat) + h_matrix.kronecker(&bk);
        let max_re =
            closed.complex_eigenvalues().iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
        if max_re < -1e-6 {
            return Ok(k);
        }
        z *= 1.5;
    }
    Err(Error::Config(format!(
        "could not stabilize the coupled closed loop with omega = {omega} (topology eigenvalues too skewed)"
    )))
}
