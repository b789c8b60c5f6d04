//! Assembly and eigenvalue checking of the block matrix inequalities that
//! certify stochastic admissibility of the sliding dynamics, plus the side
//! conditions (diffusion annihilation, E'P pairing, regularity,
//! impulse-freeness) and a bounded random search over candidate scalars.
//!
//! Everything here is a pure function of the supplied candidate matrices; no
//! SDP solving. Blocks whose printed symbols cannot be resolved to system
//! matrices are reported as unchecked rather than guessed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode::{hazard_row, ModeProcess};
use crate::plant::ModeMatrices;
use crate::topology::CouplingMatrices;

pub const DEFAULT_TOL: f64 = 1e-8;

/// Candidate matrices for one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCertificate {
    pub p_tilde: DMatrix<f64>,
    pub p_hat: DMatrix<f64>,
    pub q_mat: DMatrix<f64>,
    pub r_mat: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub eps1: f64,
    pub eps2: f64,
    pub k_mat: DMatrix<f64>,
    /// slack blocks of the delay decomposition (stacked dimension)
    pub h_slack: DMatrix<f64>,
    pub n_slack: DMatrix<f64>,
    /// extra candidates for the delayed-system block
    pub q1_mat: DMatrix<f64>,
    pub q2_mat: DMatrix<f64>,
}

/// Full certificate: per-mode candidates plus shared probe/delay data.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub modes: Vec<ModeCertificate>,
    /// elapsed-sojourn probe points as multiples of each mode's mean sojourn
    pub hazard_probe_factors: Vec<f64>,
    pub d_min: f64,
    pub d_bar: f64,
    /// trigger threshold entering the delayed-system block
    pub sigma1: f64,
    /// scalar in the (5,5) entry of the delayed-system block
    pub sigma2: f64,
}

fn rel_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm() / m.norm().max(1.0)
}

impl Certificate {
    /// Declared-definite blocks must be symmetric within 1e-10 relative.
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Config("certificate needs at least one mode".into()));
        }
        for (i, mc) in self.modes.iter().enumerate() {
            for (name, m) in [
                ("p_tilde", &mc.p_tilde),
                ("p_hat", &mc.p_hat),
                ("q_mat", &mc.q_mat),
                ("r_mat", &mc.r_mat),
                ("phi", &mc.phi),
                ("q1_mat", &mc.q1_mat),
                ("q2_mat", &mc.q2_mat),
            ] {
                let asym = rel_asymmetry(m);
                if asym > 1e-10 {
                    return Err(Error::AsymmetricInput(asym)).map_err(|_| {
                        Error::Config(format!(
                            "mode {i}: {name} must be symmetric (relative asymmetry {asym:.3e})"
                        ))
                    });
                }
            }
            if !(mc.eps1 > 0.0 && mc.eps2 > 0.0) {
                return Err(Error::Config(format!(
                    "mode {i}: eps1 and eps2 must be positive (got {}, {})",
                    mc.eps1, mc.eps2
                )));
            }
        }
        if !(self.d_bar > 0.0) || self.d_min < 0.0 || self.d_min > self.d_bar {
            return Err(Error::Config(format!(
                "delay bounds must satisfy 0 <= d_min <= d_bar with d_bar > 0 (got {}, {})",
                self.d_min, self.d_bar
            )));
        }
        if self.hazard_probe_factors.is_empty() {
            return Err(Error::Config("certificate needs at least one hazard probe factor".into()));
        }
        Ok(())
    }

}

/// Per-mode certificate entry as read from TOML; omitted matrices fall back
/// to identity-style defaults sized by the scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeCertificateSpec {
    pub p_tilde: Option<Vec<Vec<f64>>>,
    pub p_hat: Option<Vec<Vec<f64>>>,
    pub q: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
    pub phi: Option<Vec<Vec<f64>>>,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub k: Option<Vec<Vec<f64>>>,
    pub h_slack: Option<Vec<Vec<f64>>>,
    pub n_slack: Option<Vec<Vec<f64>>>,
    pub q1: Option<Vec<Vec<f64>>>,
    pub q2: Option<Vec<Vec<f64>>>,
}

/// Certificate file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateSpec {
    /// per-mode entries; a single entry is broadcast to every mode
    pub modes: Vec<ModeCertificateSpec>,
    pub hazard_probe_factors: Vec<f64>,
    pub d_min: f64,
    pub d_bar: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for CertificateSpec {
    fn default() -> Self {
        CertificateSpec {
            modes: vec![ModeCertificateSpec::default()],
            hazard_probe_factors: vec![0.1, 1.0, 10.0],
            d_min: 0.0,
            d_bar: 0.015,
            sigma1: 0.1,
            sigma2: 0.0,
        }
    }
}

impl CertificateSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("certificate parse error: {e}")))
    }

    /// Fill defaults against the scenario dimensions: identity weights, the
    /// scenario's own gains for omitted K entries.
    pub fn resolve(
        &self,
        n_modes: usize,
        n_x: usize,
        n_agents: usize,
        default_k: &[DMatrix<f64>],
    ) -> Result<Certificate> {
        let specs: Vec<ModeCertificateSpec> = match self.modes.len() {
            0 => return Err(Error::Config("certificate needs at least one mode entry".into())),
            1 => vec![self.modes[0].clone(); n_modes],
            k if k == n_modes => self.modes.clone(),
            k => {
                return Err(Error::Config(format!(
                    "certificate has {k} mode entries for {n_modes} modes"
                )))
            }
        };
        let nx_st = n_x * n_agents;
        let mat = |rows: &Option<Vec<Vec<f64>>>, what: &str, default: DMatrix<f64>| -> Result<DMatrix<f64>> {
            match rows {
                None => Ok(default),
                Some(rows) => {
                    let r = rows.len();
                    if r == 0 || rows.iter().any(|row| row.len() != rows[0].len()) {
                        return Err(Error::Config(format!("certificate {what}: ragged or empty matrix")));
                    }
                    Ok(DMatrix::from_fn(r, rows[0].len(), |i, j| rows[i][j]))
                }
            }
        };
        let modes = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(ModeCertificate {
                    p_tilde: mat(&s.p_tilde, "p_tilde", DMatrix::identity(nx_st, nx_st))?,
                    p_hat: mat(&s.p_hat, "p_hat", DMatrix::identity(n_x, n_x))?,
                    q_mat: mat(&s.q, "q", DMatrix::identity(nx_st, nx_st) * 0.01)?,
                    r_mat: mat(&s.r, "r", DMatrix::identity(nx_st, nx_st) * 0.01)?,
                    phi: mat(&s.phi, "phi", DMatrix::identity(nx_st, nx_st))?,
                    eps1: s.eps1.unwrap_or(1.0),
                    eps2: s.eps2.unwrap_or(1.0),
                    k_mat: mat(&s.k, "k", default_k[i].clone())?,
                    h_slack: mat(&s.h_slack, "h_slack", DMatrix::zeros(nx_st, nx_st))?,
                    n_slack: mat(&s.n_slack, "n_slack", DMatrix::zeros(nx_st, nx_st))?,
                    q1_mat: mat(&s.q1, "q1", DMatrix::identity(nx_st, nx_st) * 0.01)?,
                    q2_mat: mat(&s.q2, "q2", DMatrix::identity(nx_st, nx_st) * 0.01)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cert = Certificate {
            modes,
            hazard_probe_factors: self.hazard_probe_factors.clone(),
            d_min: self.d_min,
            d_bar: self.d_bar,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
        };
        cert.validate()?;
        Ok(cert)
    }
}

/// Verdict sense for [`check_definite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sense {
    Neg,
    Pos,
    Nsd,
    Psd,
}

/// Eigenvalue-based definiteness verdict with a signed margin (the extremal
/// eigenvalue). Input must be symmetric within tolerance.
pub fn check_definite(m: &DMatrix<f64>, sense: Sense, tol: f64) -> Result<(bool, f64)> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch("definiteness check needs a square matrix".into()));
    }
    let asym = rel_asymmetry(m);
    if asym > 1e-8 {
        return Err(Error::AsymmetricInput(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eigs = sym.symmetric_eigenvalues();
    let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (pass, margin) = match sense {
        Sense::Neg => (max < -tol, max),
        Sense::Nsd => (max <= tol, max),
        Sense::Pos => (min > tol, min),
        Sense::Psd => (min >= -tol, min),
    };
    Ok((pass, margin))
}

fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Stacked lift I_N (x) M.
fn lift(m: &DMatrix<f64>, n_agents: usize) -> DMatrix<f64> {
    DMatrix::identity(n_agents, n_agents).kronecker(m)
}

/// y(t)-block of the admissibility inequality at one hazard probe:
/// sum_j pi_ij E' P~_j E + sym(P~_i E' . (A + B K(H .))) + D' P~_i D + Q_i.
/// All arguments are stacked-dimension matrices except `pi_row`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_sigma1(
    a: &DMatrix<f64>,
    bk_coupled: &DMatrix<f64>,
    d: &DMatrix<f64>,
    e: &DMatrix<f64>,
    q: &DMatrix<f64>,
    p_tilde_all: &[DMatrix<f64>],
    pi_row: &[f64],
    mode: usize,
) -> DMatrix<f64> {
    let n = a.nrows();
    let mut acc = DMatrix::zeros(n, n);
    for (j, pj) in p_tilde_all.iter().enumerate() {
        acc += pi_row[j] * (e.transpose() * pj * e);
    }
    let p_bar = &p_tilde_all[mode] * e;
    let a_closed = a + bk_coupled;
    acc += &p_bar * &a_closed + a_closed.transpose() * &p_bar;
    acc += d.transpose() * &p_tilde_all[mode] * d;
    acc += q;
    sym_part(&acc)
}

/// A named symmetric block destined for a "< 0" test.
#[derive(Debug, Clone)]
pub struct NamedBlock {
    pub name: String,
    pub matrix: DMatrix<f64>,
    /// carried alongside margins in the report
    pub note: Option<String>,
}

/// Assemble every admissibility block for one mode at one hazard probe.
/// Returns (phi_r11, uncertainty 2x2, delay 5x5 as printed).
#[allow(clippy::too_many_arguments)]
fn assemble_mode_blocks(
    cert: &Certificate,
    mc: &ModeCertificate,
    mm: &ModeMatrices,
    topo: &CouplingMatrices,
    pi_row: &[f64],
    p_tilde_lifted: &[DMatrix<f64>],
    mode: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n_agents = topo.h_matrix.nrows();
    let nx = mm.n_x() * n_agents;
    let nu = mm.n_u() * n_agents;
    let a = lift(&mm.a_mat, n_agents);
    let b = lift(&mm.b_mat, n_agents);
    let d = lift(&mm.d_mat, n_agents);
    let e = lift(&mm.e_mat, n_agents);
    let m_unc = lift(&mm.m_mat, n_agents);
    let n_unc = lift(&mm.n_mat, n_agents);
    let p_hat = lift(&mc.p_hat, n_agents);
    let bk = &b * topo.h_matrix.kronecker(&mc.k_mat);
    let q = cert_stacked(&mc.q_mat, nx);
    let sigma1 = assemble_sigma1(&a, &bk, &d, &e, &q, p_tilde_lifted, pi_row, mode);

    // uncertainty columns, F probed at the norm-bound boundary F = I
    let p_bar = &p_tilde_lifted[mode] * &e;
    let mut sigma2 = DMatrix::zeros(nx, nu + 3 * nx);
    sigma2.view_mut((0, 0), (nx, nu)).copy_from(&b);
    sigma2.view_mut((0, nu), (nx, nx)).copy_from(&(p_bar.transpose() * &m_unc));
    sigma2.view_mut((0, nu + nx), (nx, nx)).copy_from(&(mc.eps1 * n_unc.transpose()));
    sigma2.view_mut((0, nu + 2 * nx), (nx, nx)).copy_from(&(n_unc.transpose() * m_unc.transpose()));

    let bpb = b.transpose() * &p_hat * &b;
    let mut sigma3 = DMatrix::zeros(nu + 3 * nx, nu + 3 * nx);
    sigma3.view_mut((0, 0), (nu, nu)).copy_from(&(-&bpb));
    for (blk, scale) in [(0usize, mc.eps1), (1, mc.eps1), (2, mc.eps2 * mc.eps2)] {
        let at = nu + blk * nx;
        sigma3.view_mut((at, at), (nx, nx)).copy_from(&(-scale * DMatrix::<f64>::identity(nx, nx)));
    }

    let dim = nx + nu + 3 * nx;
    let mut phi_r11 = DMatrix::zeros(dim, dim);
    phi_r11.view_mut((0, 0), (nx, nx)).copy_from(&sigma1);
    phi_r11.view_mut((0, nx), (nx, nu + 3 * nx)).copy_from(&sigma2);
    phi_r11.view_mut((nx, 0), (nu + 3 * nx, nx)).copy_from(&sigma2.transpose());
    phi_r11.view_mut((nx, nx), (nu + 3 * nx, nu + 3 * nx)).copy_from(&sigma3);

    // [[-P^-1, M], [*, -eps2 I]]
    let p_hat_inv = p_hat.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(nx, nx) * 1e12);
    let mut unc = DMatrix::zeros(2 * nx, 2 * nx);
    unc.view_mut((0, 0), (nx, nx)).copy_from(&(-&p_hat_inv));
    unc.view_mut((0, nx), (nx, nx)).copy_from(&m_unc);
    unc.view_mut((nx, 0), (nx, nx)).copy_from(&m_unc.transpose());
    unc.view_mut((nx, nx), (nx, nx))
        .copy_from(&(-mc.eps2 * DMatrix::<f64>::identity(nx, nx)));
    let unc = sym_part(&unc);

    // delay block, 5x5 over stacked-state blocks, diagonal entries as printed
    // (the (4,4) and (5,5) entries are positive whenever R > 0, so this block
    // cannot be negative definite; it is reported, not repaired)
    let h_s = cert_stacked(&mc.h_slack, nx);
    let n_s = cert_stacked(&mc.n_slack, nx);
    let r = cert_stacked(&mc.r_mat, nx);
    let mut delay = DMatrix::zeros(5 * nx, 5 * nx);
    delay.view_mut((0, 0), (nx, nx)).copy_from(&sigma1);
    let he = &h_s * &e;
    delay.view_mut((0, nx), (nx, nx)).copy_from(&he);
    delay.view_mut((nx, 0), (nx, nx)).copy_from(&he.transpose());
    delay.view_mut((nx, nx), (nx, nx)).copy_from(&sym_part(&((&n_s - &h_s) * &e)));
    delay
        .view_mut((2 * nx, 2 * nx), (nx, nx))
        .copy_from(&sym_part(&(&q - &n_s * &e)));
    delay.view_mut((3 * nx, 3 * nx), (nx, nx)).copy_from(&(&r / cert.d_bar));
    delay
        .view_mut((4 * nx, 4 * nx), (nx, nx))
        .copy_from(&sym_part(&(cert.d_bar * e.transpose() * &r * &e)));

    (phi_r11, unc, delay)
}

fn cert_stacked(m: &DMatrix<f64>, nx_stacked: usize) -> DMatrix<f64> {
    if m.nrows() == nx_stacked {
        m.clone()
    } else {
        // agent-block supplied; lift it
        let n_agents = nx_stacked / m.nrows();
        lift(m, n_agents)
    }
}

/// All admissibility blocks across modes and hazard probes.
pub fn assemble_admissibility(
    cert: &Certificate,
    modes: &[ModeMatrices],
    couplings: &[CouplingMatrices],
    process: &ModeProcess,
) -> Result<Vec<NamedBlock>> {
    cert.validate()?;
    if cert.modes.len() != modes.len() || couplings.len() != modes.len() {
        return Err(Error::DimensionMismatch(format!(
            "certificate, plant and coupling mode counts disagree: {}, {}, {}",
            cert.modes.len(),
            modes.len(),
            couplings.len()
        )));
    }
    let n_agents = couplings[0].h_matrix.nrows();
    let nx = modes[0].n_x() * n_agents;
    let p_lifted: Vec<DMatrix<f64>> =
        cert.modes.iter().map(|mc| cert_stacked(&mc.p_tilde, nx)).collect();
    let mut out = Vec::new();
    for (i, ((mc, mm), topo)) in cert.modes.iter().zip(modes).zip(couplings).enumerate() {
        for &factor in &cert.hazard_probe_factors {
            let h_probe = factor * process.sojourn_law(i).mean();
            let pi_row = hazard_row(process, i, h_probe)?;
            let (phi_r11, unc, delay) =
                assemble_mode_blocks(cert, mc, mm, topo, &pi_row, &p_lifted, i);
            out.push(NamedBlock {
                name: format!("adm_main[mode={i},probe={factor}]"),
                matrix: phi_r11,
                note: None,
            });
            out.push(NamedBlock {
                name: format!("adm_uncertainty[mode={i},probe={factor}]"),
                matrix: unc,
                note: None,
            });
            out.push(NamedBlock {
                name: format!("adm_delay_5x5[mode={i},probe={factor}]"),
                matrix: delay,
                note: Some(
                    "as printed: the R/d and d E'RE diagonal entries are positive definite for \
                     R > 0, so this block cannot pass; reported for completeness"
                        .into(),
                ),
            });
        }
    }
    Ok(out)
}

/// Delayed event-triggered admissibility block: the resolvable (1,1) entry of
/// the printed outer matrix, with C := 0 and the gamma row omitted.
pub fn assemble_delayed_block(
    cert: &Certificate,
    mc: &ModeCertificate,
    mm: &ModeMatrices,
    topo: &CouplingMatrices,
) -> DMatrix<f64> {
    let n_agents = topo.h_matrix.nrows();
    let nx = mm.n_x() * n_agents;
    let a = lift(&mm.a_mat, n_agents);
    let b = lift(&mm.b_mat, n_agents);
    let p = cert_stacked(&mc.p_tilde, nx);
    let bk = &b * topo.h_matrix.kronecker(&mc.k_mat);
    let q = cert_stacked(&mc.q_mat, nx);
    let q1 = cert_stacked(&mc.q1_mat, nx);
    let q2 = cert_stacked(&mc.q2_mat, nx);
    let phi = cert_stacked(&mc.phi, nx);
    let eye = DMatrix::<f64>::identity(nx, nx);
    let mut xi = DMatrix::zeros(5 * nx, 5 * nx);
    xi.view_mut((0, 0), (nx, nx))
        .copy_from(&(p.transpose() * &a + a.transpose() * &p + &q1 + &q));
    let pbk = p.transpose() * &bk;
    xi.view_mut((0, nx), (nx, nx)).copy_from(&pbk);
    xi.view_mut((nx, 0), (nx, nx)).copy_from(&pbk.transpose());
    xi.view_mut((0, 4 * nx), (nx, nx)).copy_from(&pbk);
    xi.view_mut((4 * nx, 0), (nx, nx)).copy_from(&pbk.transpose());
    xi.view_mut((nx, nx), (nx, nx)).copy_from(&(cert.sigma1 * &phi - &q));
    xi.view_mut((2 * nx, 2 * nx), (nx, nx)).copy_from(&(&q2 - &q1));
    xi.view_mut((3 * nx, 3 * nx), (nx, nx)).copy_from(&(-&q2));
    xi.view_mut((4 * nx, 4 * nx), (nx, nx))
        .copy_from(&(-&phi + cert.sigma2 * cert.sigma2 * eye));
    sym_part(&xi)
}

/// Side-condition residuals and the regularity/impulse verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SideConditions {
    /// |B'P^D| per mode
    pub bpd_residual: Vec<f64>,
    /// |E'P - P'E| per mode (P := p_tilde)
    pub ep_residual: Vec<f64>,
    /// min eigenvalue of sym(E'P) per mode (must be >= 0)
    pub ep_psd_margin: Vec<f64>,
    /// det(sE - A) not identically zero, probed pointwise
    pub regular: Vec<bool>,
    /// deg det(sE - A) == rank(E) via probe polynomial fit
    pub impulse_free: Vec<bool>,
}

/// Probe points for regularity checks; fixed so reports are reproducible.
fn probe_points(n: usize, seed: u64) -> Vec<f64> {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
}

/// Fit det(sE - A) on probe points and return (regular, impulse_free).
fn regularity_verdict(e: &DMatrix<f64>, a: &DMatrix<f64>) -> (bool, bool) {
    let n = e.nrows();
    let probes = probe_points(8, 0x5eed);
    let dets: Vec<f64> = probes.iter().map(|&s| (s * e - a).determinant()).collect();
    let scale = dets.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let regular = scale > 1e-12;
    if !regular {
        return (false, false);
    }
    // least-squares polynomial fit of degree n over the probes
    let vand = DMatrix::from_fn(probes.len(), n + 1, |r, c| probes[r].powi(c as i32));
    let rhs = DVector::from_vec(dets);
    let coeffs = vand
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(n + 1));
    let cmax = coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max).max(1e-300);
    let degree = (0..=n).rev().find(|&k| coeffs[k].abs() > 1e-8 * cmax).unwrap_or(0);
    let rank_e = e.rank(1e-9);
    (regular, degree == rank_e)
}

/// Evaluate the side conditions for all modes against per-agent matrices.
pub fn check_side_conditions(cert: &Certificate, modes: &[ModeMatrices]) -> SideConditions {
    let mut bpd = Vec::new();
    let mut ep_res = Vec::new();
    let mut ep_margin = Vec::new();
    let mut regular = Vec::new();
    let mut impulse_free = Vec::new();
    for (mc, mm) in cert.modes.iter().zip(modes) {
        bpd.push((mm.b_mat.transpose() * &mc.p_hat * &mm.d_mat).norm());
        // per-agent projections of the stacked candidates when needed
        let p_agent = if mc.p_tilde.nrows() == mm.n_x() {
            mc.p_tilde.clone()
        } else {
            mc.p_tilde.view((0, 0), (mm.n_x(), mm.n_x())).into_owned()
        };
        let ep = mm.e_mat.transpose() * &p_agent;
        let pe = p_agent.transpose() * &mm.e_mat;
        ep_res.push((&ep - &pe).norm());
        ep_margin.push(sym_part(&ep).symmetric_eigenvalues().min());
        let (reg, imp) = regularity_verdict(&mm.e_mat, &mm.a_mat);
        regular.push(reg);
        impulse_free.push(imp);
    }
    SideConditions {
        bpd_residual: bpd,
        ep_residual: ep_res,
        ep_psd_margin: ep_margin,
        regular,
        impulse_free,
    }
}

/// One checked inequality in the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityResult {
    pub name: String,
    pub margin: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Aggregate feasibility verdict with per-inequality margins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub inequalities: Vec<InequalityResult>,
    pub side_conditions: SideConditions,
    pub unchecked: Vec<String>,
    /// definiteness of declared blocks + phi_r11 + uncertainty blocks
    pub core_pass: bool,
    /// every checked inequality including the as-printed delay blocks
    pub all_pass: bool,
    pub tol: f64,
}

impl std::fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "certificate feasibility (tol {:.1e})", self.tol)?;
        for ineq in &self.inequalities {
            writeln!(
                f,
                "  [{}] {:<44} margin {:+.6e}{}",
                if ineq.pass { "pass" } else { "FAIL" },
                ineq.name,
                ineq.margin,
                ineq.note.as_deref().map(|n| format!("  ({n})")).unwrap_or_default()
            )?;
        }
        for (i, (res, marg)) in self
            .side_conditions
            .bpd_residual
            .iter()
            .zip(&self.side_conditions.ep_psd_margin)
            .enumerate()
        {
            writeln!(
                f,
                "  side[mode={i}] |B'P^D| = {res:.3e}, |E'P-P'E| = {:.3e}, min eig sym(E'P) = {marg:+.3e}, regular = {}, impulse-free = {}",
                self.side_conditions.ep_residual[i],
                self.side_conditions.regular[i],
                self.side_conditions.impulse_free[i],
            )?;
        }
        for u in &self.unchecked {
            writeln!(f, "  unchecked: {u}")?;
        }
        writeln!(f, "  core blocks pass: {}", self.core_pass)?;
        writeln!(f, "  all printed blocks pass: {}", self.all_pass)
    }
}

/// Check a certificate end to end: declared definiteness, admissibility
/// blocks at every probe, the delayed-system resolvable block and the side
/// conditions.
pub fn check_certificate(
    cert: &Certificate,
    modes: &[ModeMatrices],
    couplings: &[CouplingMatrices],
    process: &ModeProcess,
    tol: f64,
) -> Result<FeasibilityReport> {
    cert.validate()?;
    let mut inequalities = Vec::new();
    // declared-definite candidate blocks
    for (i, mc) in cert.modes.iter().enumerate() {
        for (name, m, sense) in [
            (format!("cert_p_tilde_pos[mode={i}]"), &mc.p_tilde, Sense::Pos),
            (format!("cert_p_hat_pos[mode={i}]"), &mc.p_hat, Sense::Pos),
            (format!("cert_q_pos[mode={i}]"), &mc.q_mat, Sense::Pos),
            (format!("cert_r_pos[mode={i}]"), &mc.r_mat, Sense::Pos),
            (format!("cert_phi_pos[mode={i}]"), &mc.phi, Sense::Pos),
        ] {
            let (pass, margin) = check_definite(m, sense, tol)?;
            inequalities.push(InequalityResult { name, margin, pass, note: None });
        }
    }
    let core_until = inequalities.len();
    let _ = core_until;
    for block in assemble_admissibility(cert, modes, couplings, process)? {
        let (pass, margin) = check_definite(&block.matrix, Sense::Neg, tol)?;
        inequalities.push(InequalityResult { name: block.name, margin, pass, note: block.note });
    }
    for (i, mc) in cert.modes.iter().enumerate() {
        let xi = assemble_delayed_block(cert, mc, &modes[i], &couplings[i]);
        let (pass, margin) = check_definite(&xi, Sense::Neg, tol)?;
        inequalities.push(InequalityResult {
            name: format!("delayed_main[mode={i}]"),
            margin,
            pass,
            note: Some("C := 0; gamma row omitted".into()),
        });
    }
    let side_conditions = check_side_conditions(cert, modes);
    let unchecked = vec![
        "delayed-system outer rows (M, L2, L1, tau ell R couplings): the printed symbols C, D K, \
         H bar, G bar and gamma have no definition tying them to the closed-loop matrices"
            .to_string(),
    ];
    let core_pass = inequalities
        .iter()
        .filter(|iq| !iq.name.starts_with("adm_delay") && !iq.name.starts_with("delayed_main"))
        .all(|iq| iq.pass);
    let all_pass = inequalities.iter().all(|iq| iq.pass);
    Ok(FeasibilityReport { inequalities, side_conditions, unchecked, core_pass, all_pass, tol })
}

/// Outcome of a bounded random search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchReport {
    pub best_params: Vec<f64>,
    pub best_margin: f64,
    /// true when a candidate with margin < -tol was found; a false value
    /// never claims infeasibility, only "none found in budget"
    pub feasible: bool,
    pub evaluated: usize,
}

/// Sample `budget` candidates uniformly inside `bounds` and keep the one
/// whose worst block eigenvalue is smallest.
pub fn random_search<F>(
    assembler: F,
    bounds: &[(f64, f64)],
    budget: usize,
    tol: f64,
    rng: &mut ChaCha12Rng,
) -> Result<SearchReport>
where
    F: Fn(&[f64]) -> Vec<DMatrix<f64>>,
{
    if budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    let mut best_params = Vec::new();
    let mut best_margin = f64::INFINITY;
    for _ in 0..budget {
        let params: Vec<f64> =
            bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
        let blocks = assembler(&params);
        let mut worst = f64::NEG_INFINITY;
        for b in blocks {
            let (_, margin) = check_definite(&b, Sense::Neg, tol)?;
            worst = worst.max(margin);
        }
        if worst < best_margin {
            best_margin = worst;
            best_params = params;
        }
    }
    Ok(SearchReport { best_params, best_margin, feasible: best_margin < -tol, evaluated: budget })
}

/// Random search over a certificate family: the mapper turns a parameter
/// vector into a full candidate, whose core blocks (declared definiteness,
/// admissibility and uncertainty blocks at every probe) are scored by their
/// worst eigenvalue. Returns the best candidate alongside the report.
#[allow(clippy::too_many_arguments)]
pub fn search_certificate<F>(
    mapper: F,
    bounds: &[(f64, f64)],
    budget: usize,
    modes: &[ModeMatrices],
    couplings: &[CouplingMatrices],
    process: &ModeProcess,
    tol: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(Option<Certificate>, SearchReport)>
where
    F: Fn(&[f64]) -> Certificate,
{
    let assembler = |params: &[f64]| -> Vec<DMatrix<f64>> {
        let cert = mapper(params);
        let mut blocks = Vec::new();
        if cert.validate().is_err() {
            // invalid candidates score as badly infeasible
            blocks.push(DMatrix::identity(1, 1));
            return blocks;
        }
        for mc in &cert.modes {
            for m in [&mc.p_tilde, &mc.p_hat, &mc.q_mat, &mc.r_mat, &mc.phi] {
                blocks.push(-m.clone());
            }
        }
        match assemble_admissibility(&cert, modes, couplings, process) {
            Ok(named) => {
                for b in named {
                    if !b.name.contains("delay") {
                        blocks.push(b.matrix);
                    }
                }
            }
            Err(_) => blocks.push(DMatrix::identity(1, 1)),
        }
        blocks
    };
    let report = random_search(assembler, bounds, budget, tol, rng)?;
    let best = if report.feasible { Some(mapper(&report.best_params)) } else { None };
    Ok((best, report))
}
