//! Sample-based event generator between sampler and zero-order hold, with
//! network-delay bookkeeping and the held-value sliding-mode law.
//!
//! A sample y(kh) is transmitted exactly when
//!
//! ```text
//! [y(kh) - y(last released)]' Phi [..] > sigma * y(kh)' Phi y(kh)
//! ```
//!
//! Released packets arrive after a bounded random delay and are latched by a
//! zero-order hold; the controller only ever sees held values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::smc::{coupling_terms, reach_direction, stack, PreparedGains};
use crate::topology::CouplingMatrices;

/// Event-trigger parameters. `phi` is the per-agent weighting block; the
/// centralized trigger uses its block-diagonal lift over all followers.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerConfig {
    /// sampling period h
    pub sample_period: f64,
    /// per-mode threshold sigma(i) in [0, 1)
    pub sigma: Vec<f64>,
    /// per-mode symmetric positive definite weighting block (n_x x n_x)
    pub phi: Vec<DMatrix<f64>>,
    /// upper bound on the network-induced delay, < sample_period
    pub delay_bound: f64,
    /// multiplier >= 1 on the lower bound for the reaching margin v
    pub v_margin_scale: f64,
    /// one trigger per agent instead of one on the stacked error
    pub per_agent: bool,
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_period > 0.0) {
            return Err(Error::Config("sample_period must be positive".into()));
        }
        for (i, s) in self.sigma.iter().enumerate() {
            if !(0.0..1.0).contains(s) {
                return Err(Error::Config(format!("sigma[{i}] must lie in [0, 1), got {s}")));
            }
        }
        for (i, phi) in self.phi.iter().enumerate() {
            let sym = (phi - phi.transpose()).norm() <= 1e-10 * phi.norm().max(1.0);
            if !sym || phi.clone().cholesky().is_none() {
                return Err(Error::Config(format!("phi[{i}] must be symmetric positive definite")));
            }
        }
        if self.delay_bound < 0.0 || self.delay_bound >= self.sample_period {
            return Err(Error::Config(format!(
                "delay bound {} must lie in [0, sample_period) for the single-packet-in-flight regime",
                self.delay_bound
            )));
        }
        if self.v_margin_scale < 1.0 {
            return Err(Error::Config("v_margin_scale must be >= 1".into()));
        }
        Ok(())
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode < self.sigma.len() {
            Ok(())
        } else {
            Err(Error::InvalidMode { index: mode, n_modes: self.sigma.len() })
        }
    }

    /// Phi lifted to a stacked vector of `n` agent blocks.
    pub fn phi_stacked(&self, mode: usize, n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n).kronecker(&self.phi[mode])
    }
}

/// The quadratic release rule; pure so audits can reuse it verbatim.
pub fn release_rule(y_now: &DVector<f64>, y_last: &DVector<f64>, phi: &DMatrix<f64>, sigma: f64) -> bool {
    let e = y_now - y_last;
    let lhs = (e.transpose() * phi * &e)[(0, 0)];
    let rhs = sigma * (y_now.transpose() * phi * y_now)[(0, 0)];
    lhs > rhs
}

/// A released sample in flight or latched.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub y: DVector<f64>,
    pub s: DVector<f64>,
    pub release_time: f64,
    pub arrival_time: f64,
}

/// One sampler/trigger/hold pipeline (the stacked error, or one agent block).
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerState {
    last_released_y: DVector<f64>,
    last_released_s: DVector<f64>,
    last_release_time: f64,
    held: Packet,
    pending: Option<Packet>,
    pub samples_seen: u64,
    pub releases: u64,
}

/// Row of the event log; times are simulated seconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub time: f64,
    /// follower index for per-agent triggers; None for the stacked trigger
    pub agent: Option<usize>,
    pub released: bool,
    pub delay: f64,
}

impl TriggerState {
    /// The initial output is transmitted successfully at t = 0 with no delay.
    pub fn new(y0: DVector<f64>, s0: DVector<f64>) -> Self {
        let held = Packet { y: y0.clone(), s: s0.clone(), release_time: 0.0, arrival_time: 0.0 };
        TriggerState {
            last_released_y: y0,
            last_released_s: s0,
            last_release_time: 0.0,
            held,
            pending: None,
            samples_seen: 1,
            releases: 1,
        }
    }

    pub fn last_release_time(&self) -> f64 {
        self.last_release_time
    }

    pub fn last_released_sample(&self) -> &DVector<f64> {
        &self.last_released_y
    }

    /// Unconditionally latch a zero-delay packet (sampled-data baseline).
    pub fn force_latch(&mut self, packet: Packet) {
        self.last_released_y = packet.y.clone();
        self.last_released_s = packet.s.clone();
        self.last_release_time = packet.release_time;
        self.pending = None;
        self.held = packet;
    }
}

/// Release decision for an on-grid sample against the last released one.
pub fn should_release(
    y_now: &DVector<f64>,
    ts: &TriggerState,
    phi: &DMatrix<f64>,
    tc: &TriggerConfig,
    mode: usize,
) -> Result<bool> {
    tc.check_mode(mode)?;
    Ok(release_rule(y_now, &ts.last_released_y, phi, tc.sigma[mode]))
}

/// Feed one on-grid sample through the trigger. On release the packet is
/// enqueued with arrival t + delay, delay ~ U[0, delay_bound]. Returns the
/// log record.
#[allow(clippy::too_many_arguments)]
pub fn process_sample(
    t: f64,
    y_now: &DVector<f64>,
    s_now: &DVector<f64>,
    ts: &mut TriggerState,
    phi: &DMatrix<f64>,
    tc: &TriggerConfig,
    mode: usize,
    agent: Option<usize>,
    rng: &mut ChaCha12Rng,
) -> Result<EventRecord> {
    ts.samples_seen += 1;
    if !should_release(y_now, ts, phi, tc, mode)? {
        return Ok(EventRecord { time: t, agent, released: false, delay: 0.0 });
    }
    if let Some(p) = &ts.pending {
        if p.arrival_time > t {
            return Err(Error::PendingCollision { t, arrival: p.arrival_time });
        }
        // due but not yet delivered; latch before replacing
        deliver_due(ts, t);
    }
    let delay = if tc.delay_bound > 0.0 { rng.random_range(0.0..=tc.delay_bound) } else { 0.0 };
    let packet =
        Packet { y: y_now.clone(), s: s_now.clone(), release_time: t, arrival_time: t + delay };
    ts.last_released_y = y_now.clone();
    ts.last_released_s = s_now.clone();
    ts.last_release_time = t;
    ts.releases += 1;
    if delay == 0.0 {
        ts.held = packet;
    } else {
        ts.pending = Some(packet);
    }
    Ok(EventRecord { time: t, agent, released: true, delay })
}

/// Latch any packet whose arrival time has passed.
pub fn deliver_due(ts: &mut TriggerState, t: f64) {
    if let Some(p) = &ts.pending {
        if p.arrival_time <= t {
            ts.held = ts.pending.take().unwrap();
        }
    }
}

/// Newest payload with arrival <= t (the zero-order-hold content).
pub fn held_values(t: f64, ts: &TriggerState) -> (&DVector<f64>, &DVector<f64>) {
    if let Some(p) = &ts.pending {
        if p.arrival_time <= t {
            return (&p.y, &p.s);
        }
    }
    (&ts.held.y, &ts.held.s)
}

/// Phi-weighted magnitude of the worst admissible trigger error:
/// sqrt(sigma * y' Phi y) bounds |Phi^{1/2} e| for every error the rule
/// admits, so v = |T Phi^{-1/2}| * sqrt(sigma y' Phi y) dominates |T e|.
pub fn trigger_error_bound(y_held: &DVector<f64>, phi: &DMatrix<f64>, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let quad = (y_held.transpose() * phi * y_held)[(0, 0)];
    (sigma * quad).max(0.0).sqrt()
}

/// Event-triggered sliding-mode law computed from held values only:
/// u_i = K (H y*)_i - { unc |N| |y*_i| + switch_j |s*_i| + alpha |y*_i| + v } sgn(s*_i)
/// with v >= |B'P^B K(H .) e| bounded via the trigger threshold
/// (`v_op_norm` must be the Phi^{-1/2}-weighted operator norm).
#[allow(clippy::too_many_arguments)]
pub fn event_smc_law(
    y_held: &[DVector<f64>],
    s_held: &[DVector<f64>],
    g: &PreparedGains,
    topo: &CouplingMatrices,
    tc: &TriggerConfig,
    hazard_row: &[f64],
    mode: usize,
    v_op_norm: f64,
    n_norm: f64,
) -> Result<Vec<DVector<f64>>> {
    tc.check_mode(mode)?;
    let coup = coupling_terms(y_held, topo);
    let k = &g.gains.k_mats[mode];
    // per-summand-mode inverse products, as printed in the delayed law
    let rate_weighted: f64 = {
        let mut acc = DMatrix::zeros(g.bpb_inv[mode].nrows(), g.bpb_inv[mode].ncols());
        for (j, rate) in hazard_row.iter().enumerate() {
            if j != mode {
                acc += *rate * &g.bpb_inv[j];
            }
        }
        if acc.nrows() == 0 {
            0.0
        } else {
            acc.svd(false, false).singular_values[0]
        }
    };
    let switch_gain = 0.5 * rate_weighted;
    let alpha = g.gains.alpha[mode];
    let stacked = stack(y_held);
    let phi_st = tc.phi_stacked(mode, y_held.len());
    let e_bound = trigger_error_bound(&stacked, &phi_st, tc.sigma[mode]);
    let v = tc.v_margin_scale * v_op_norm * e_bound;
    let delta = g.gains.boundary_layer;
    Ok(y_held
        .iter()
        .zip(s_held)
        .zip(&coup)
        .map(|((yi, si), ci)| {
            let gain = g.unc_norm[mode] * n_norm * yi.norm()
                + switch_gain * si.norm()
                + alpha * yi.norm()
                + v;
            k * ci - gain * reach_direction(si, delta)
        })
        .collect())
}

/// Spectral norm of blkdiag(B'P^B) (H (x) K) Phi^{-1/2}, the factor in the
/// lower bound for v under the Phi-weighted trigger-error bound.
pub fn v_operator_norm(
    g: &PreparedGains,
    topo: &CouplingMatrices,
    phi_block: &DMatrix<f64>,
    mode: usize,
) -> f64 {
    let n = topo.h_matrix.nrows();
    if n == 0 {
        return 0.0;
    }
    let bpbk = &g.bpb[mode] * &g.gains.k_mats[mode];
    let op = topo.h_matrix.kronecker(&bpbk);
    // Phi^{-1/2} on the agent block, lifted over agents
    let eig = phi_block.clone().symmetric_eigen();
    let inv_sqrt_block = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(1e-300).sqrt()))
        * eig.eigenvectors.transpose();
    let weighted = op * DMatrix::identity(n, n).kronecker(&inv_sqrt_block);
    weighted.svd(false, false).singular_values[0]
}

/// Post-hoc audit of the trigger inequality at inter-release samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterReleaseReport {
    pub max_violation: f64,
    pub violations: usize,
    pub samples_audited: usize,
}

/// One audited sample: the stacked (or per-agent) error at an on-grid sample
/// time, the last released value before it, and the active mode.
pub struct AuditSample<'a> {
    pub y_now: &'a DVector<f64>,
    pub y_last_released: &'a DVector<f64>,
    pub mode: usize,
}

/// Check e' Phi e <= sigma y' Phi y over inter-release samples; violations
/// beyond `tol` are counted.
pub fn inter_release_monitor(samples: &[AuditSample], tc: &TriggerConfig, n_blocks: usize, tol: f64) -> InterReleaseReport {
    let mut max_violation = 0.0f64;
    let mut violations = 0usize;
    for s in samples {
        let phi = if s.y_now.len() == tc.phi[s.mode].nrows() {
            tc.phi[s.mode].clone()
        } else {
            tc.phi_stacked(s.mode, n_blocks)
        };
        let e = s.y_now - s.y_last_released;
        let lhs = (e.transpose() * &phi * &e)[(0, 0)];
        let rhs = tc.sigma[s.mode] * (s.y_now.transpose() * &phi * s.y_now)[(0, 0)];
        let gap = lhs - rhs;
        if gap > tol {
            violations += 1;
        }
        max_violation = max_violation.max(gap);
    }
    InterReleaseReport { max_violation: max_violation.max(0.0), violations, samples_audited: samples.len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cfg(sigma: f64, delay_bound: f64) -> TriggerConfig {
        TriggerConfig {
            sample_period: 0.01,
            sigma: vec![sigma],
            phi: vec![DMatrix::identity(2, 2)],
            delay_bound,
            v_margin_scale: 1.2,
            per_agent: false,
        }
    }

    #[test]
    fn resampling_last_released_never_triggers() {
        let tc = cfg(0.1, 0.0);
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let ts = TriggerState::new(y0.clone(), DVector::zeros(2));
        assert!(!should_release(&y0, &ts, &tc.phi[0], &tc, 0).unwrap());
    }

    #[test]
    fn quadratic_rule_plugin_cases() {
        let tc = cfg(0.1, 0.0);
        let ts = TriggerState::new(DVector::from_vec(vec![1.0, 0.0]), DVector::zeros(2));
        // e'e = 0.04 <= 0.1 * 1.44 -> no release
        let near = DVector::from_vec(vec![1.2, 0.0]);
        assert!(!should_release(&near, &ts, &tc.phi[0], &tc, 0).unwrap());
        // e'e = 0.25 > 0.1 * 2.25 -> release
        let far = DVector::from_vec(vec![1.5, 0.0]);
        assert!(should_release(&far, &ts, &tc.phi[0], &tc, 0).unwrap());
    }

    #[test]
    fn invalid_mode_rejected() {
        let tc = cfg(0.1, 0.0);
        let ts = TriggerState::new(DVector::zeros(2), DVector::zeros(2));
        assert!(should_release(&DVector::zeros(2), &ts, &tc.phi[0], &tc, 3).is_err());
    }

    #[test]
    fn no_release_only_advances_counters() {
        let tc = cfg(0.5, 0.0);
        let mut ts = TriggerState::new(DVector::from_vec(vec![1.0, 0.0]), DVector::zeros(2));
        let before = ts.clone();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let rec = process_sample(
            0.01,
            &DVector::from_vec(vec![1.01, 0.0]),
            &DVector::zeros(2),
            &mut ts,
            &tc.phi[0],
            &tc,
            0,
            None,
            &mut rng,
        )
        .unwrap();
        assert!(!rec.released);
        assert_eq!(ts.samples_seen, before.samples_seen + 1);
        assert_eq!(ts.releases, before.releases);
        assert_eq!(ts.last_released_sample(), before.last_released_sample());
        assert_eq!(held_values(0.01, &ts), held_values(0.01, &before));
    }

    #[test]
    fn zero_delay_updates_hold_immediately() {
        let tc = cfg(0.0, 0.0);
        let mut ts = TriggerState::new(DVector::zeros(2), DVector::zeros(2));
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let y = DVector::from_vec(vec![2.0, -1.0]);
        let s = DVector::from_vec(vec![0.5, 0.0]);
        let rec = process_sample(0.01, &y, &s, &mut ts, &tc.phi[0], &tc, 0, None, &mut rng).unwrap();
        assert!(rec.released);
        assert_eq!(rec.delay, 0.0);
        let (hy, hs) = held_values(0.01, &ts);
        assert_eq!(hy, &y);
        assert_eq!(hs, &s);
    }

    #[test]
    fn delayed_packet_arrives_within_bound() {
        let tc = cfg(0.0, 0.005);
        let mut ts = TriggerState::new(DVector::zeros(2), DVector::zeros(2));
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let y = DVector::from_vec(vec![1.0, 1.0]);
        let rec =
            process_sample(0.01, &y, &DVector::zeros(2), &mut ts, &tc.phi[0], &tc, 0, None, &mut rng)
                .unwrap();
        assert!(rec.released);
        assert!(rec.delay >= 0.0 && rec.delay <= 0.005);
        // before arrival the hold still returns y(0)
        if rec.delay > 0.0 {
            let (hy, _) = held_values(0.01, &ts);
            assert_eq!(hy, &DVector::zeros(2));
        }
        // at arrival the packet is visible
        let (hy, _) = held_values(0.01 + rec.delay, &ts);
        assert_eq!(hy, &y);
        // and deliver_due latches it
        deliver_due(&mut ts, 0.01 + rec.delay);
        let (hy, _) = held_values(10.0, &ts);
        assert_eq!(hy, &y);
    }

    #[test]
    fn held_values_match_linear_scan_oracle() {
        // random event sequence; oracle = newest packet with arrival <= t
        let tc = cfg(0.05, 0.005);
        let h = tc.sample_period;
        let mut ts = TriggerState::new(DVector::zeros(2), DVector::zeros(2));
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut walk = DVector::zeros(2);
        let mut log: Vec<Packet> = vec![Packet {
            y: DVector::zeros(2),
            s: DVector::zeros(2),
            release_time: 0.0,
            arrival_time: 0.0,
        }];
        let mut walk_rng = ChaCha12Rng::seed_from_u64(22);
        for k in 1..200u64 {
            let t = k as f64 * h;
            deliver_due(&mut ts, t);
            walk[0] += walk_rng.random_range(-0.3..0.3);
            walk[1] += walk_rng.random_range(-0.3..0.3);
            let s = DVector::from_vec(vec![walk[0] * 0.1, 0.0]);
            let rec =
                process_sample(t, &walk, &s, &mut ts, &tc.phi[0], &tc, 0, None, &mut rng).unwrap();
            if rec.released {
                log.push(Packet {
                    y: walk.clone(),
                    s,
                    release_time: t,
                    arrival_time: t + rec.delay,
                });
            }
            // probe a few times within the sample interval
            for frac in [0.0, 0.3, 0.9] {
                let tp = t + frac * h;
                let oracle = log
                    .iter()
                    .filter(|p| p.arrival_time <= tp)
                    .max_by(|a, b| a.arrival_time.partial_cmp(&b.arrival_time).unwrap())
                    .unwrap();
                let (hy, _) = held_values(tp, &ts);
                assert_eq!(hy, &oracle.y, "t = {tp}");
            }
        }
        assert!(ts.releases > 1, "the walk must trigger at least once");
        assert!(ts.releases <= ts.samples_seen);
    }

    #[test]
    fn trigger_error_bound_zero_for_zero_sigma() {
        let phi = DMatrix::identity(4, 4);
        let y = DVector::from_vec(vec![3.0, 1.0, -2.0, 0.5]);
        assert_eq!(trigger_error_bound(&y, &phi, 0.0), 0.0);
        // identity Phi: bound = sqrt(sigma) |y|
        let b = trigger_error_bound(&y, &phi, 0.25);
        assert!((b - 0.5 * y.norm()).abs() < 1e-12);
        // the weighted bound dominates |T e| for every admissible e
        let mut rng = <ChaCha12Rng as rand::SeedableRng>::seed_from_u64(40);
        for _ in 0..200 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let phi = &a * a.transpose() + DMatrix::identity(4, 4) * 0.05;
            let t_op = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-3.0..3.0));
            let y = DVector::from_fn(4, |_, _| rng.random_range(-4.0..4.0));
            let sigma: f64 = rng.random_range(0.01..0.9);
            // admissible e: scaled so e'Phi e = sigma y'Phi y exactly
            let direction = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let quad_e = (direction.transpose() * &phi * &direction)[(0, 0)];
            let quad_y = (y.transpose() * &phi * &y)[(0, 0)];
            let e = direction * (sigma * quad_y / quad_e).sqrt();
            let eig = phi.clone().symmetric_eigen();
            let inv_sqrt = &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|l: f64| 1.0 / l.sqrt()))
                * eig.eigenvectors.transpose();
            let weighted_norm = (&t_op * inv_sqrt).svd(false, false).singular_values[0];
            let v = weighted_norm * trigger_error_bound(&y, &phi, sigma);
            assert!(
                (&t_op * &e).norm() <= v + 1e-9,
                "v must dominate |T e| for admissible errors"
            );
        }
    }

    #[test]
    fn zero_sigma_audit_requires_exact_hold() {
        let tc = cfg(0.0, 0.0);
        let y_last = DVector::from_vec(vec![1.0, 0.0]);
        let same = AuditSample { y_now: &y_last, y_last_released: &y_last, mode: 0 };
        let report = inter_release_monitor(&[same], &tc, 1, 1e-12);
        assert_eq!(report.violations, 0);
        let moved = DVector::from_vec(vec![1.1, 0.0]);
        let bad = AuditSample { y_now: &moved, y_last_released: &y_last, mode: 0 };
        let report = inter_release_monitor(&[bad], &tc, 1, 1e-12);
        assert_eq!(report.violations, 1);
        assert!(report.max_violation > 0.0);
    }

    #[test]
    fn release_while_packet_in_flight_is_a_collision() {
        // an (invalid) delay bound above the sample period can strand a packet
        let tc = TriggerConfig {
            sample_period: 0.01,
            sigma: vec![0.0],
            phi: vec![DMatrix::identity(2, 2)],
            delay_bound: 0.02,
            v_margin_scale: 1.0,
            per_agent: false,
        };
        let mut ts = TriggerState::new(DVector::zeros(2), DVector::zeros(2));
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let y1 = DVector::from_vec(vec![1.0, 0.0]);
        let rec = process_sample(0.01, &y1, &DVector::zeros(2), &mut ts, &tc.phi[0], &tc, 0, None, &mut rng)
            .unwrap();
        assert!(rec.released);
        if rec.delay > 0.01 {
            let y2 = DVector::from_vec(vec![2.0, 0.0]);
            let err = process_sample(0.02, &y2, &DVector::zeros(2), &mut ts, &tc.phi[0], &tc, 0, None, &mut rng);
            assert!(matches!(err, Err(Error::PendingCollision { .. })));
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.1, 0.005).validate().is_ok());
        assert!(cfg(1.0, 0.0).validate().is_err());
        assert!(cfg(-0.1, 0.0).validate().is_err());
        assert!(cfg(0.1, 0.01).validate().is_err(), "delay bound must stay below h");
        let mut bad_phi = cfg(0.1, 0.0);
        bad_phi.phi[0][(0, 0)] = -1.0;
        assert!(bad_phi.validate().is_err());
        let mut bad_margin = cfg(0.1, 0.0);
        bad_margin.v_margin_scale = 0.5;
        assert!(bad_margin.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// should_release agrees with a from-scratch evaluation of the
            /// quadratic inequality on random SPD weightings.
            #[test]
            fn release_rule_matches_direct_evaluation(
                y_last in proptest::collection::vec(-5.0f64..5.0, 3),
                y_now in proptest::collection::vec(-5.0f64..5.0, 3),
                seed_mat in proptest::collection::vec(-1.0f64..1.0, 9),
                sigma in 0.0f64..1.0,
            ) {
                let a = DMatrix::from_vec(3, 3, seed_mat);
                let phi = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
                let yl = DVector::from_vec(y_last);
                let yn = DVector::from_vec(y_now);
                // independent scalar-loop evaluation
                let mut lhs = 0.0;
                let mut rhs = 0.0;
                for r in 0..3 {
                    for c in 0..3 {
                        lhs += (yn[r] - yl[r]) * phi[(r, c)] * (yn[c] - yl[c]);
                        rhs += yn[r] * phi[(r, c)] * yn[c];
                    }
                }
                let expected = lhs > sigma * rhs;
                prop_assert_eq!(release_rule(&yn, &yl, &phi, sigma), expected);
            }

            /// releases never exceed samples over random walks.
            #[test]
            fn releases_bounded_by_samples(seed in 0u64..500, sigma in 0.0f64..0.5) {
                let tc = TriggerConfig {
                    sample_period: 0.01,
                    sigma: vec![sigma],
                    phi: vec![DMatrix::identity(2, 2)],
                    delay_bound: 0.0,
                    v_margin_scale: 1.0,
                    per_agent: false,
                };
                let mut ts = TriggerState::new(DVector::zeros(2), DVector::zeros(2));
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                let mut y = DVector::zeros(2);
                for k in 1..100u64 {
                    let t = k as f64 * 0.01;
                    y[0] += rng.random_range(-1.0..1.0);
                    y[1] += rng.random_range(-1.0..1.0);
                    process_sample(t, &y, &DVector::zeros(2), &mut ts, &tc.phi[0], &tc, 0, None, &mut rng).unwrap();
                }
                prop_assert!(ts.releases <= ts.samples_seen);
            }
        }
    }
}
