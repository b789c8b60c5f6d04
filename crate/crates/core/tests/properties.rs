//! Trace-level properties: reaching behaviour, no-lookahead replay of the
//! event pipeline, trigger economics under threshold sweeps, and the link
//! between passing certificates and closed-loop behaviour.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use etsmc::mode::hazard_row;
use etsmc::plant::Nonlinearity;
use etsmc::scenario::{preset, ControllerVariant, LeaderInput, Scenario, ScenarioConfig};
use etsmc::sim::run;
use etsmc::smc::{reaching_monitor, stack, unstack};
use etsmc::trigger::event_smc_law;

fn with_initial_velocities(cfg: &mut ScenarioConfig) {
    cfg.initial.followers = vec![
        vec![-6.0, 3.0, 13.0, -2.0],
        vec![-14.0, -1.5, 7.0, 4.0],
        vec![-13.0, 2.0, -13.0, 1.0],
        vec![8.0, -3.0, -11.0, -1.0],
        vec![5.0, 1.0, 4.0, 2.5],
    ];
}

/// Reaching hypotheses: deterministic plant, pure sign term, matched
/// uncertainty on, no exogenous forcing that the printed gain does not
/// dominate (leader input, per-agent nonlinearity mismatch, fault bias).
fn reaching_scenario() -> Scenario {
    let mut cfg = preset("paper-sec4").unwrap();
    cfg.controller = ControllerVariant::Continuous;
    cfg.plant.d = Some(vec![vec![0.0; 4]; 4]);
    cfg.gains.boundary_layer = 0.0;
    cfg.leader_input = LeaderInput::Zero;
    cfg.nonlinearity = Nonlinearity::Zero;
    cfg.fault.enabled = false;
    with_initial_velocities(&mut cfg);
    cfg.resolve().unwrap()
}

#[test]
fn surface_norm_decreases_outside_chattering_band() {
    let sc = reaching_scenario();
    let trace = run(&sc, 0).unwrap();
    let mut outside = 0usize;
    for m in 0..trace.len() - 1 {
        let s_now: f64 = trace.surfaces.iter().map(|s| s[m].norm_squared()).sum::<f64>().sqrt();
        let s_next: f64 =
            trace.surfaces.iter().map(|s| s[m + 1].norm_squared()).sum::<f64>().sqrt();
        let u_inf = trace
            .controls
            .iter()
            .flat_map(|u| u[m].iter().cloned())
            .fold(0.0f64, |a, b| a.max(b.abs()));
        let band = 10.0 * trace.dt * u_inf;
        if s_now > band {
            outside += 1;
            assert!(
                s_next < s_now,
                "t = {:.3}: |s| grew from {s_now:.4e} to {s_next:.4e} outside the band {band:.2e}",
                trace.time[m]
            );
        }
    }
    assert!(outside > 100, "the run must include a genuine reaching phase, got {outside} steps");
}

#[test]
fn reaching_monitor_reports_finite_first_hit_on_preset() {
    let sc = reaching_scenario();
    let trace = run(&sc, 1).unwrap();
    let series: Vec<(Vec<DVector<f64>>, usize)> = (0..trace.len())
        .map(|m| {
            let blocks: Vec<DVector<f64>> =
                trace.surfaces.iter().map(|s| s[m].clone()).collect();
            (blocks, trace.modes[m])
        })
        .collect();
    let report = reaching_monitor(&series, &sc.gains, trace.dt, 0.5);
    let hit = report.first_hit.expect("the surface must enter the band");
    assert!(hit.is_finite() && hit < sc.config.horizon);
    assert!((0.0..=1.0).contains(&report.decreasing_fraction));
    assert!(report.decreasing_fraction > 0.9, "V should mostly decrease outside the band");
}

/// Reconstruct held values from the event log alone and re-derive every
/// recorded control: proves no control ever saw a packet that had not
/// arrived by its grid time.
#[test]
fn controls_never_look_ahead_of_packet_arrivals() {
    let sc = preset("paper-sec4").unwrap().resolve().unwrap();
    let trace = run(&sc, 9).unwrap();
    let n = trace.n_followers;
    let grid = |t: f64| -> usize { (t / trace.dt).round() as usize };
    // packet log: (release time, arrival time, stacked y, stacked s)
    let packets: Vec<(f64, f64, DVector<f64>, DVector<f64>)> = trace
        .events
        .iter()
        .filter(|e| e.released && e.agent.is_none())
        .map(|e| {
            let m = grid(e.time);
            let y = stack(&trace.errors.iter().map(|s| s[m].clone()).collect::<Vec<_>>());
            let s = stack(&trace.surfaces.iter().map(|s| s[m].clone()).collect::<Vec<_>>());
            (e.time, e.time + e.delay, y, s)
        })
        .collect();
    assert!(packets.len() > 10);
    let mut checked = 0usize;
    for m in 0..trace.len() {
        let t = trace.time[m];
        let (_, _, y_held, s_held) = packets
            .iter()
            .filter(|(_, arrival, _, _)| *arrival <= t)
            .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
            .expect("initial packet always arrived");
        let mode = trace.modes[m];
        // elapsed sojourn from the epoch log
        let epoch_start = trace
            .mode_epochs
            .iter()
            .rev()
            .find(|(st, _)| *st <= t + 1e-12)
            .map(|(st, _)| *st)
            .unwrap();
        let hrow = hazard_row(&sc.process, mode, t - epoch_start).unwrap();
        let u = event_smc_law(
            &unstack(y_held, n),
            &unstack(s_held, n),
            &sc.gains,
            &sc.couplings[mode],
            &sc.trigger,
            &hrow,
            mode,
            sc.v_op_norms[mode],
            sc.n_norms[mode],
        )
        .unwrap();
        for i in 0..n {
            assert_eq!(
                u[i], trace.controls[i][m],
                "step {m}: replayed control disagrees with the recorded one"
            );
        }
        checked += 1;
    }
    assert_eq!(checked, trace.len());
}

#[test]
fn releases_non_increasing_in_sigma() {
    let mut counts = Vec::new();
    for sigma in [0.0, 0.05, 0.1, 0.2] {
        let mut cfg = preset("paper-sec4").unwrap();
        cfg.trigger.sigma = sigma;
        let sc = cfg.resolve().unwrap();
        let trace = run(&sc, 2).unwrap();
        counts.push(trace.events.iter().filter(|e| e.released).count());
    }
    for w in counts.windows(2) {
        assert!(w[1] <= w[0], "raising sigma must not add releases: {counts:?}");
    }
}

#[test]
fn zero_sigma_without_delay_releases_every_sample() {
    let mut cfg = preset("paper-sec4").unwrap();
    cfg.trigger.sigma = 0.0;
    cfg.trigger.delay_bound = 0.0;
    let sc = cfg.resolve().unwrap();
    let trace = run(&sc, 2).unwrap();
    let released = trace.events.iter().filter(|e| e.released).count();
    assert_eq!(released, trace.events.len());
}

#[test]
fn inter_release_times_are_sample_multiples() {
    let sc = preset("paper-sec4").unwrap().resolve().unwrap();
    let trace = run(&sc, 3).unwrap();
    let h = trace.sample_period;
    let mut releases: Vec<f64> = trace
        .events
        .iter()
        .filter(|e| e.released)
        .map(|e| e.time)
        .collect();
    releases.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in releases.windows(2) {
        let gap = w[1] - w[0];
        assert!(gap >= h - 1e-12, "inter-event gap {gap} below one sample period (Zeno)");
        let ratio = gap / h;
        assert!((ratio - ratio.round()).abs() < 1e-9, "gap {gap} is not a multiple of h = {h}");
    }
}

/// Solve A'P + PA = -I via the vectorized Kronecker system.
fn lyapunov_weight(a_cl: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a_cl.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(A'P + PA) = (I (x) A' + A' (x) I) vec(P)
    let system = eye.kronecker(&a_cl.transpose()) + a_cl.transpose().kronecker(&eye);
    let rhs = DVector::from_fn(n * n, |k, _| if k % (n + 1) == 0 { -1.0 } else { 0.0 });
    let sol = system.lu().solve(&rhs)?;
    let p = DMatrix::from_fn(n, n, |i, j| sol[j * n + i]);
    Some((&p + p.transpose()) * 0.5)
}

/// Certificates that pass the core admissibility blocks must correspond to
/// sliding dynamics whose mean squared error decays. Failure semantics: a
/// passing certificate with growing error indicts the certificate checker,
/// not the plant.
#[test]
fn passing_certificate_implies_decaying_sliding_dynamics() {
    use etsmc::lmi::{check_certificate, Certificate, ModeCertificate, DEFAULT_TOL};
    let sc = preset("paper-sec4").unwrap().resolve().unwrap();
    let n = sc.n_followers;
    let nx = sc.plant_modes[0].n_x() * n;
    // closed-loop matrices per mode and a shared Lyapunov weight
    let a_cl: Vec<DMatrix<f64>> = (0..sc.n_modes)
        .map(|r| {
            let a = DMatrix::identity(n, n).kronecker(&sc.plant_modes[r].a_mat);
            let bk = DMatrix::identity(n, n).kronecker(&sc.plant_modes[r].b_mat)
                * sc.couplings[r].h_matrix.kronecker(&sc.gains.gains.k_mats[r]);
            a + bk
        })
        .collect();
    let mut p_shared = DMatrix::zeros(nx, nx);
    for a in &a_cl {
        p_shared += lyapunov_weight(a).expect("closed loop is Hurwitz");
    }
    p_shared /= sc.n_modes as f64;
    let cert = Certificate {
        modes: (0..sc.n_modes)
            .map(|r| ModeCertificate {
                p_tilde: p_shared.clone(),
                p_hat: DMatrix::identity(4, 4),
                q_mat: DMatrix::identity(nx, nx) * 1e-4,
                r_mat: DMatrix::identity(nx, nx) * 1e-4,
                phi: DMatrix::identity(nx, nx),
                eps1: 8.0,
                eps2: 8.0,
                k_mat: sc.gains.gains.k_mats[r].clone(),
                h_slack: DMatrix::zeros(nx, nx),
                n_slack: DMatrix::zeros(nx, nx),
                q1_mat: DMatrix::identity(nx, nx) * 1e-4,
                q2_mat: DMatrix::identity(nx, nx) * 1e-4,
            })
            .collect(),
        hazard_probe_factors: vec![0.1, 1.0, 10.0],
        d_min: 0.0,
        d_bar: 0.015,
        sigma1: 0.1,
        sigma2: 0.0,
    };
    let report =
        check_certificate(&cert, &sc.plant_modes, &sc.couplings, &sc.process, DEFAULT_TOL).unwrap();
    if !report.core_pass {
        // documented soft semantics: nothing to link when the candidate fails
        println!("certificate does not pass the core blocks; behavioural link skipped\n{report}");
        return;
    }
    // simulate the sliding error dynamics with diffusion on, 32 seeds
    let dt = 1e-3;
    let steps = 10_000usize;
    let d_st = DMatrix::identity(n, n).kronecker(&sc.plant_modes[0].d_mat);
    let m_st = DMatrix::identity(n, n).kronecker(&sc.plant_modes[0].m_mat);
    let n_st = DMatrix::identity(n, n).kronecker(&sc.plant_modes[0].n_mat);
    let b_st = DMatrix::identity(n, n).kronecker(&sc.plant_modes[0].b_mat);
    let bpb_inv = &sc.gains.bpb_inv[0];
    let proj = DMatrix::<f64>::identity(nx, nx)
        - &b_st
            * DMatrix::identity(n, n).kronecker(&(bpb_inv.clone()))
            * DMatrix::identity(n, n).kronecker(&sc.gains.bp[0]);
    let y0: DVector<f64> = stack(
        &sc.initial
            .followers
            .iter()
            .zip(sc.formation.offsets())
            .map(|(x, h)| x - &sc.initial.leader - h)
            .collect::<Vec<_>>(),
    );
    let mut early_sum = 0.0f64;
    let mut late_sum = 0.0f64;
    for seed in 0..32u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut y = y0.clone();
        let mut traj_rng = ChaCha12Rng::seed_from_u64(seed + 1000);
        let traj = etsmc::mode::sample_trajectory(&sc.process, 10.0, 0, &mut traj_rng).unwrap();
        for m in 0..steps {
            let t = m as f64 * dt;
            let mode = etsmc::mode::mode_at(&traj, t).unwrap();
            let f = (t).sin() * 0.5;
            let delta_a = &m_st * f * &n_st;
            let acl = &a_cl[mode] + &proj * delta_a;
            let z: f64 = StandardNormal.sample(&mut rng);
            y = &y + (&acl * &y) * dt + (&d_st * &y) * (dt.sqrt() * z);
            let t_next = t + dt;
            if (2.0..6.0).contains(&t_next) {
                early_sum += y.norm_squared();
            } else if t_next >= 6.0 {
                late_sum += y.norm_squared();
            }
        }
    }
    let early = early_sum / (32.0 * 4000.0);
    let late = late_sum / (32.0 * 4000.0);
    assert!(
        late < early,
        "passing certificate but mean |y|^2 grew: [2,6) -> {early:.4e}, [6,10] -> {late:.4e}"
    );
    println!("core-passing certificate: mean |y|^2 {early:.4e} -> {late:.4e} over 32 seeds");
}

#[test]
fn per_agent_trigger_mode_runs_and_audits_clean() {
    let mut cfg = preset("paper-sec4").unwrap();
    cfg.trigger.per_agent = true;
    cfg.horizon = 3.0;
    let sc = cfg.resolve().unwrap();
    let trace = run(&sc, 6).unwrap();
    // per-agent logs carry agent indices
    assert!(trace.events.iter().all(|e| e.agent.is_some()));
    let report = etsmc::sim::inter_release_audit(&trace, &sc);
    assert_eq!(report.violations, 0);
    assert!(report.samples_audited > 0);
}

#[test]
fn weibull_switching_scenario_runs() {
    use etsmc::mode::SojournLaw;
    let mut cfg = preset("paper-sec4").unwrap();
    cfg.mode_process.sojourn = vec![SojournLaw::Weibull { scale: 1.0, shape: 2.0 }; 3];
    cfg.horizon = 3.0;
    let sc = cfg.resolve().unwrap();
    let trace = run(&sc, 12).unwrap();
    assert!(trace.mode_epochs.len() > 1, "fast weibull switching should produce epochs");
}

/// Independent Euler integration of the tracking error from the recorded
/// controls: the stored state series must satisfy the plant dynamics.
#[test]
fn trace_states_consistent_with_recorded_controls() {
    // deterministic variant so the replay needs no noise reconstruction
    let mut cfg = preset("paper-sec4").unwrap();
    cfg.plant.d = Some(vec![vec![0.0; 4]; 4]);
    cfg.uncertainty = etsmc::plant::UncertaintyLaw::Zero;
    cfg.fault.enabled = false;
    cfg.horizon = 2.0;
    let sc = cfg.resolve().unwrap();
    let trace = run(&sc, 8).unwrap();
    let mm = &sc.plant_modes[0];
    let n_u = mm.n_u();
    for m in 0..trace.len() - 1 {
        let t = trace.time[m];
        for i in 0..trace.n_followers {
            let x = &trace.followers[i][m];
            let u = &trace.controls[i][m];
            let f = etsmc::plant::nonlinearity(&sc.config.nonlinearity, t, x, n_u);
            let dx = &mm.a_mat * x + &mm.b_mat * (u + f);
            let expected = x + dx * trace.dt;
            let got = &trace.followers[i][m + 1];
            assert!(
                (&expected - got).norm() < 1e-12,
                "step {m}, agent {i}: recorded state does not satisfy the dynamics"
            );
        }
    }
}
