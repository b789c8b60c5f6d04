//! End-to-end scenario execution: the step loop, recorded traces, scalar
//! metrics and the CSV/JSON output files.
//!
//! Loop order per grid instant: advance mode, sample/trigger, deliver due
//! packets, compute control from held (or current) values, record, apply the
//! fault, integrate, advance the surface integrals. Controls recorded at a
//! grid instant therefore never see packets that arrive later.

use std::io::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mode::{hazard_row, mode_at, sample_trajectory, ModeTrajectory};
use crate::plant::{
    apply_fault, tracking_error, ControlInputs, FaultProfile, NoiseSource, UncertaintyProcess,
};
use crate::scenario::{ControllerVariant, Scenario};
use crate::smc::{smc_law, unstack, SurfaceState};
use crate::trigger::{
    deliver_due, event_smc_law, held_values, process_sample, EventRecord, Packet, TriggerState,
};

/// Everything recorded during one run, on the shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub seed: u64,
    pub config_hash: String,
    pub dt: f64,
    pub sample_period: f64,
    pub n_followers: usize,
    pub time: Vec<f64>,
    pub leader: Vec<DVector<f64>>,
    /// [agent][step]
    pub followers: Vec<Vec<DVector<f64>>>,
    pub errors: Vec<Vec<DVector<f64>>>,
    pub controls: Vec<Vec<DVector<f64>>>,
    pub surfaces: Vec<Vec<DVector<f64>>>,
    /// active mode per step
    pub modes: Vec<usize>,
    /// (switch time, mode) per epoch
    pub mode_epochs: Vec<(f64, usize)>,
    /// [agent][step] actuator efficiency
    pub efficiencies: Vec<Vec<f64>>,
    pub events: Vec<EventRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// max_i |y_i| at one step.
    pub fn max_error_norm(&self, step: usize) -> f64 {
        self.errors.iter().map(|series| series[step].norm()).fold(0.0, f64::max)
    }
}

/// Scalar summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub seed: u64,
    pub config_hash: String,
    /// first time after which max_i |y_i| stays inside the band; None when
    /// the band never holds to the end
    pub settling_time: Option<f64>,
    pub theta_band: f64,
    /// max_i sup |y_i| over the last fifth of the run
    pub steady_error: f64,
    pub release_counts: Vec<u64>,
    pub total_releases: u64,
    pub total_samples: u64,
    /// released events per one-second window
    pub release_rate: Vec<f64>,
    pub fault: FaultSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaultSummary {
    pub enabled: bool,
    pub onset: f64,
    pub min_efficiency: f64,
    pub mean_efficiency_post_onset: f64,
    pub bias_amplitude: f64,
}

/// Independent per-purpose random streams derived from one seed.
struct RngSet {
    mode: ChaCha12Rng,
    brownian: ChaCha12Rng,
    delay: ChaCha12Rng,
    fault: ChaCha12Rng,
    uncertainty: ChaCha12Rng,
}

impl RngSet {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(k);
            rng
        };
        RngSet {
            mode: stream(0),
            brownian: stream(1),
            delay: stream(2),
            fault: stream(3),
            uncertainty: stream(4),
        }
    }
}

fn materialize_fault(sc: &Scenario, rng: &mut ChaCha12Rng) -> Result<FaultProfile> {
    let f = &sc.config.fault;
    let n_u = sc.plant_modes[0].n_u();
    if !f.enabled {
        return Ok(FaultProfile::none(sc.n_followers, n_u));
    }
    FaultProfile::sampled(
        f.onset,
        sc.config.horizon,
        f.resample_period,
        (f.efficiency_range[0], f.efficiency_range[1]),
        f.bias_amplitude,
        sc.n_followers,
        n_u,
        rng,
    )
}

/// Run one scenario with the given seed. Deterministic: the same seed always
/// yields the same trace.
pub fn run(sc: &Scenario, seed: u64) -> Result<Trace> {
    let n = sc.n_followers;
    let n_x = sc.plant_modes[0].n_x();
    let n_u = sc.plant_modes[0].n_u();
    let dt = sc.config.dt;
    let steps = sc.steps;
    let mut rngs = RngSet::new(seed);

    // one dt of margin so grid times that round past the horizon stay inside
    let trajectory: ModeTrajectory = sample_trajectory(
        &sc.process,
        sc.config.horizon.max(dt) + dt,
        sc.config.mode_process.initial_mode,
        &mut rngs.mode,
    )?;
    let fault = materialize_fault(sc, &mut rngs.fault)?;
    let mut uncertainty = UncertaintyProcess::new(sc.config.uncertainty.clone(), n_x)?;

    let mut world = sc.initial.clone();
    let mut y = tracking_error(&world, &sc.formation)?;
    let mode0 = mode_at(&trajectory, 0.0)?;
    let mut surface = SurfaceState::new(&y, &sc.gains, mode0)?;

    // event pipeline: one stacked trigger, or one per agent
    let eventful = matches!(
        sc.config.controller,
        ControllerVariant::EventTriggered | ControllerVariant::Sampled
    );
    let forced = matches!(sc.config.controller, ControllerVariant::Sampled);
    let per_agent = sc.trigger.per_agent;
    let mut events: Vec<EventRecord> = Vec::new();
    let mut triggers: Vec<TriggerState> = if eventful {
        if per_agent {
            (0..n)
                .map(|i| TriggerState::new(y[i].clone(), surface.values()[i].clone()))
                .collect()
        } else {
            vec![TriggerState::new(crate::smc::stack(&y), surface.stacked())]
        }
    } else {
        Vec::new()
    };
    if eventful {
        // the initial output is transmitted successfully
        if per_agent {
            for i in 0..n {
                events.push(EventRecord { time: 0.0, agent: Some(i), released: true, delay: 0.0 });
            }
        } else {
            events.push(EventRecord { time: 0.0, agent: None, released: true, delay: 0.0 });
        }
    }

    // the sampled-data baseline carries no trigger-error margin in its law
    let law_trigger_cfg = if forced {
        let mut tc = sc.trigger.clone();
        tc.sigma = vec![0.0; tc.sigma.len()];
        tc
    } else {
        sc.trigger.clone()
    };

    let mut trace = Trace {
        seed,
        config_hash: sc.hash.clone(),
        dt,
        sample_period: sc.trigger.sample_period,
        n_followers: n,
        time: Vec::with_capacity(steps + 1),
        leader: Vec::with_capacity(steps + 1),
        followers: vec![Vec::with_capacity(steps + 1); n],
        errors: vec![Vec::with_capacity(steps + 1); n],
        controls: vec![Vec::with_capacity(steps + 1); n],
        surfaces: vec![Vec::with_capacity(steps + 1); n],
        modes: Vec::with_capacity(steps + 1),
        mode_epochs: trajectory
            .switch_times()
            .iter()
            .zip(trajectory.modes())
            .map(|(&t, &m)| (t, m))
            .filter(|(t, _)| *t <= sc.config.horizon)
            .collect(),
        efficiencies: vec![Vec::with_capacity(steps + 1); n],
        events,
    };

    for m in 0..=steps {
        let t = m as f64 * dt;
        let mode = mode_at(&trajectory, t)?;
        let elapsed = trajectory.elapsed_at(t)?;
        let hrow = hazard_row(&sc.process, mode, elapsed)?;

        if eventful && m > 0 && m % sc.steps_per_sample == 0 {
            if per_agent {
                for i in 0..n {
                    deliver_due(&mut triggers[i], t);
                    let rec = if forced {
                        force_release(t, &y[i], &surface.values()[i], &mut triggers[i], Some(i))
                    } else {
                        process_sample(
                            t,
                            &y[i],
                            &surface.values()[i],
                            &mut triggers[i],
                            &sc.trigger.phi[mode],
                            &sc.trigger,
                            mode,
                            Some(i),
                            &mut rngs.delay,
                        )?
                    };
                    trace.events.push(rec);
                }
            } else {
                deliver_due(&mut triggers[0], t);
                let y_st = crate::smc::stack(&y);
                let s_st = surface.stacked();
                let rec = if forced {
                    force_release(t, &y_st, &s_st, &mut triggers[0], None)
                } else {
                    let phi = sc.trigger.phi_stacked(mode, n);
                    process_sample(
                        t,
                        &y_st,
                        &s_st,
                        &mut triggers[0],
                        &phi,
                        &sc.trigger,
                        mode,
                        None,
                        &mut rngs.delay,
                    )?
                };
                trace.events.push(rec);
            }
        }
        if eventful {
            for ts in &mut triggers {
                deliver_due(ts, t);
            }
        }

        let u = match sc.config.controller {
            ControllerVariant::Continuous => smc_law(
                &y,
                surface.values(),
                &sc.gains,
                &sc.plant_modes[mode],
                &sc.couplings[mode],
                &hrow,
                mode,
            )?,
            ControllerVariant::EventTriggered | ControllerVariant::Sampled => {
                let (y_held, s_held) = gather_held(&triggers, t, per_agent, n);
                event_smc_law(
                    &y_held,
                    &s_held,
                    &sc.gains,
                    &sc.couplings[mode],
                    &law_trigger_cfg,
                    &hrow,
                    mode,
                    sc.v_op_norms[mode],
                    sc.n_norms[mode],
                )?
            }
        };

        trace.time.push(t);
        trace.leader.push(world.leader.clone());
        trace.modes.push(mode);
        for i in 0..n {
            trace.followers[i].push(world.followers[i].clone());
            trace.errors[i].push(y[i].clone());
            trace.controls[i].push(u[i].clone());
            trace.surfaces[i].push(surface.values()[i].clone());
            trace.efficiencies[i].push(fault.efficiency(i, t));
        }

        if m == steps {
            break;
        }

        let u_f: Vec<DVector<f64>> =
            u.iter().enumerate().map(|(i, ui)| apply_fault(ui, &fault, i, t)).collect();
        let u0 = sc.config.leader_input.eval(t, n_u);
        let f_unc = uncertainty.sample(t, dt, &mut rngs.uncertainty);
        let inputs = ControlInputs { followers: &u_f, leader: &u0 };
        let mut noise = NoiseSource { rng: &mut rngs.brownian, shared: sc.config.shared_noise };
        let y_pre = y;
        world = crate::plant::step(
            &world,
            &inputs,
            &sc.plant_modes[mode],
            &f_unc,
            &sc.config.nonlinearity,
            &mut noise,
            dt,
        )
        .map_err(|e| match e {
            Error::NonFiniteState { t: bad, .. } => Error::NonFiniteState { t: bad, last_good: t },
            other => other,
        })?;
        y = tracking_error(&world, &sc.formation)?;
        surface.advance(&y_pre, &sc.couplings[mode], &sc.gains, mode, dt)?;
        surface.refresh(&y, &sc.gains, mode)?;
    }

    Ok(trace)
}

/// Unconditional release with zero delay (periodic sampled-data baseline).
fn force_release(
    t: f64,
    y: &DVector<f64>,
    s: &DVector<f64>,
    ts: &mut TriggerState,
    agent: Option<usize>,
) -> EventRecord {
    ts.samples_seen += 1;
    ts.releases += 1;
    ts.force_latch(Packet { y: y.clone(), s: s.clone(), release_time: t, arrival_time: t });
    EventRecord { time: t, agent, released: true, delay: 0.0 }
}

/// Assemble per-follower held blocks from the trigger pipeline(s).
fn gather_held(
    triggers: &[TriggerState],
    t: f64,
    per_agent: bool,
    n: usize,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    if per_agent {
        let mut ys = Vec::with_capacity(n);
        let mut ss = Vec::with_capacity(n);
        for ts in triggers {
            let (y, s) = held_values(t, ts);
            ys.push(y.clone());
            ss.push(s.clone());
        }
        (ys, ss)
    } else {
        let (y_st, s_st) = held_values(t, &triggers[0]);
        (unstack(y_st, n), unstack(s_st, n))
    }
}

/// Metrics over a finished trace.
pub fn compute_metrics(trace: &Trace, theta_band: f64, fault_spec: &crate::scenario::FaultSpec) -> Metrics {
    let len = trace.len();
    let n = trace.n_followers;
    // settling: last step violating the band decides the settling index
    let mut settle_idx = Some(0usize);
    for m in (0..len).rev() {
        if trace.max_error_norm(m) >= theta_band {
            settle_idx = if m + 1 < len { Some(m + 1) } else { None };
            break;
        }
    }
    let settling_time = settle_idx.map(|k| trace.time.get(k).copied().unwrap_or(0.0));
    let tail_start = (len as f64 * 0.8).floor() as usize;
    let steady_error =
        (tail_start..len).map(|m| trace.max_error_norm(m)).fold(0.0, f64::max);

    let total_samples: u64 = {
        let released_slots: std::collections::BTreeSet<_> =
            trace.events.iter().map(|e| (e.time.to_bits(), e.agent)).collect();
        released_slots.len() as u64
    };
    let mut release_counts = vec![0u64; n];
    let mut total_releases = 0u64;
    for e in trace.events.iter().filter(|e| e.released) {
        total_releases += 1;
        match e.agent {
            Some(i) => release_counts[i] += 1,
            None => release_counts.iter_mut().for_each(|c| *c += 1),
        }
    }
    let horizon = trace.time.last().copied().unwrap_or(0.0);
    let windows = horizon.ceil().max(1.0) as usize;
    let mut release_rate = vec![0.0; windows];
    for e in trace.events.iter().filter(|e| e.released) {
        let w = (e.time.floor() as usize).min(windows - 1);
        release_rate[w] += 1.0;
    }

    let post_onset: Vec<f64> = (0..len)
        .filter(|&m| trace.time[m] >= fault_spec.onset)
        .flat_map(|m| (0..n).map(move |i| trace.efficiencies[i][m]))
        .collect();
    let min_eff =
        trace.efficiencies.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let fault = FaultSummary {
        enabled: fault_spec.enabled,
        onset: fault_spec.onset,
        min_efficiency: if min_eff.is_finite() { min_eff } else { 1.0 },
        mean_efficiency_post_onset: if post_onset.is_empty() {
            1.0
        } else {
            post_onset.iter().sum::<f64>() / post_onset.len() as f64
        },
        bias_amplitude: fault_spec.bias_amplitude,
    };

    Metrics {
        seed: trace.seed,
        config_hash: trace.config_hash.clone(),
        settling_time,
        theta_band,
        steady_error,
        release_counts,
        total_releases,
        total_samples,
        release_rate,
        fault,
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write trace.csv, events.csv, modes.csv, metrics.json and config.toml.
pub fn write_outputs(trace: &Trace, metrics: &Metrics, config_echo: &str, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("trace.csv"))?);
    writeln!(w, "time,series,agent,value")?;
    let n = trace.n_followers;
    for m in 0..trace.len() {
        let t = fmt_f(trace.time[m]);
        for (k, v) in trace.leader[m].iter().enumerate() {
            writeln!(w, "{t},state{k},0,{}", fmt_f(*v))?;
        }
        for i in 0..n {
            let agent = i + 1;
            for (k, v) in trace.followers[i][m].iter().enumerate() {
                writeln!(w, "{t},state{k},{agent},{}", fmt_f(*v))?;
            }
            for (k, v) in trace.errors[i][m].iter().enumerate() {
                writeln!(w, "{t},err{k},{agent},{}", fmt_f(*v))?;
            }
            for (k, v) in trace.controls[i][m].iter().enumerate() {
                writeln!(w, "{t},ctrl{k},{agent},{}", fmt_f(*v))?;
            }
            for (k, v) in trace.surfaces[i][m].iter().enumerate() {
                writeln!(w, "{t},surf{k},{agent},{}", fmt_f(*v))?;
            }
            writeln!(w, "{t},eta,{agent},{}", fmt_f(trace.efficiencies[i][m]))?;
        }
        writeln!(w, "{t},mode,0,{}", fmt_f(trace.modes[m] as f64))?;
    }
    w.flush()?;

    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("events.csv"))?);
    writeln!(w, "time,agent,released,delay")?;
    for e in &trace.events {
        let agent = e.agent.map(|i| (i + 1) as i64).unwrap_or(-1);
        writeln!(w, "{},{agent},{},{}", fmt_f(e.time), u8::from(e.released), fmt_f(e.delay))?;
    }
    w.flush()?;

    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("modes.csv"))?);
    writeln!(w, "time,mode")?;
    for (t, mode) in &trace.mode_epochs {
        writeln!(w, "{},{mode}", fmt_f(*t))?;
    }
    w.flush()?;

    let json = serde_json::to_string_pretty(metrics)
        .map_err(|e| Error::Config(format!("metrics serialization: {e}")))?;
    std::fs::write(dir.join("metrics.json"), json)?;
    std::fs::write(dir.join("config.toml"), config_echo)?;
    Ok(())
}

/// Parse a trace.csv back into (time, series, agent, value) rows.
pub fn read_trace_csv(path: &Path) -> Result<Vec<(f64, String, i64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 || line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (t, series, agent, value) = (
            parts.next().ok_or_else(|| Error::Config(format!("trace.csv line {ln}: missing time")))?,
            parts.next().ok_or_else(|| Error::Config(format!("trace.csv line {ln}: missing series")))?,
            parts.next().ok_or_else(|| Error::Config(format!("trace.csv line {ln}: missing agent")))?,
            parts.next().ok_or_else(|| Error::Config(format!("trace.csv line {ln}: missing value")))?,
        );
        rows.push((
            t.parse().map_err(|e| Error::Config(format!("trace.csv line {ln}: {e}")))?,
            series.to_string(),
            agent.parse().map_err(|e| Error::Config(format!("trace.csv line {ln}: {e}")))?,
            value.parse().map_err(|e| Error::Config(format!("trace.csv line {ln}: {e}")))?,
        ));
    }
    Ok(rows)
}

/// Audit the trigger inequality at every inter-release sample of a finished
/// trace: between releases the quadratic error must stay under the threshold.
pub fn inter_release_audit(trace: &Trace, sc: &Scenario) -> crate::trigger::InterReleaseReport {
    use crate::trigger::AuditSample;
    let n = trace.n_followers;
    let sample_every = sc.steps_per_sample;
    // released payloads per pipeline (None = stacked), in time order
    let grid_index = |t: f64| -> usize { (t / trace.dt).round() as usize };
    let stacked_at =
        |m: usize| -> DVector<f64> { crate::smc::stack(&trace.errors.iter().map(|s| s[m].clone()).collect::<Vec<_>>()) };
    let mut samples_y: Vec<(usize, Option<usize>, DVector<f64>, DVector<f64>)> = Vec::new();
    // (sample grid index, agent, y_now, y_last_released) for non-release samples
    if sc.trigger.per_agent {
        let mut last_release: Vec<usize> = vec![0; n];
        let mut sample_steps: Vec<usize> =
            (0..trace.len()).filter(|m| m % sample_every == 0).collect();
        sample_steps.retain(|&m| m > 0);
        let released: std::collections::BTreeSet<(usize, usize)> = trace
            .events
            .iter()
            .filter(|e| e.released)
            .filter_map(|e| e.agent.map(|a| (grid_index(e.time), a)))
            .collect();
        for m in sample_steps {
            for a in 0..n {
                if released.contains(&(m, a)) {
                    last_release[a] = m;
                } else {
                    samples_y.push((
                        m,
                        Some(a),
                        trace.errors[a][m].clone(),
                        trace.errors[a][last_release[a]].clone(),
                    ));
                }
            }
        }
    } else {
        let mut last_release = 0usize;
        let released: std::collections::BTreeSet<usize> = trace
            .events
            .iter()
            .filter(|e| e.released && e.agent.is_none())
            .map(|e| grid_index(e.time))
            .collect();
        for m in (0..trace.len()).filter(|m| m % sample_every == 0 && *m > 0) {
            if released.contains(&m) {
                last_release = m;
            } else {
                samples_y.push((m, None, stacked_at(m), stacked_at(last_release)));
            }
        }
    }
    let audits: Vec<AuditSample> = samples_y
        .iter()
        .map(|(m, _, y_now, y_last)| AuditSample {
            y_now,
            y_last_released: y_last,
            mode: trace.modes[*m],
        })
        .collect();
    crate::trigger::inter_release_monitor(&audits, &sc.trigger, n, 1e-9)
}

/// Result of one batch replica.
#[derive(Debug, Clone, Serialize)]
pub struct BatchEntry {
    pub seed: u64,
    pub metrics: Metrics,
}

/// Run `count` independent replicas with seeds base..base+count in parallel.
pub fn batch(sc: &Scenario, base_seed: u64, count: usize) -> Result<Vec<BatchEntry>> {
    (0..count)
        .into_par_iter()
        .map(|k| {
            let seed = base_seed + k as u64;
            let trace = run(sc, seed)?;
            let metrics = compute_metrics(&trace, sc.config.theta_band, &sc.config.fault);
            Ok(BatchEntry { seed, metrics })
        })
        .collect()
}
