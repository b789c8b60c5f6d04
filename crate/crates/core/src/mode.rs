//! Semi-Markov switching signal: sojourn laws, elapsed-time-dependent
//! transition rates, and seeded trajectory sampling.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sojourn-time distribution for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SojournLaw {
    /// Constant hazard `rate`.
    Exponential { rate: f64 },
    /// Hazard (shape/scale) * (h/scale)^(shape-1); genuinely semi-Markov for shape != 1.
    Weibull { scale: f64, shape: f64 },
}

impl SojournLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SojournLaw::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            SojournLaw::Weibull { scale, shape } => {
                scale > 0.0 && shape > 0.0 && scale.is_finite() && shape.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("sojourn law parameters must be strictly positive: {self:?}")))
        }
    }

    /// Hazard rate g(h) / (1 - G(h)) at elapsed sojourn h.
    pub fn hazard(&self, h: f64) -> f64 {
        match *self {
            SojournLaw::Exponential { rate } => rate,
            SojournLaw::Weibull { scale, shape } => {
                if h == 0.0 && shape < 1.0 {
                    f64::INFINITY
                } else {
                    (shape / scale) * (h / scale).powf(shape - 1.0)
                }
            }
        }
    }

    /// Cumulative distribution G(h).
    pub fn cdf(&self, h: f64) -> f64 {
        match *self {
            SojournLaw::Exponential { rate } => 1.0 - (-rate * h).exp(),
            SojournLaw::Weibull { scale, shape } => 1.0 - (-(h / scale).powf(shape)).exp(),
        }
    }

    /// Density g(h).
    pub fn pdf(&self, h: f64) -> f64 {
        self.hazard(h) * (1.0 - self.cdf(h))
    }

    /// Mean sojourn time.
    pub fn mean(&self) -> f64 {
        match *self {
            SojournLaw::Exponential { rate } => 1.0 / rate,
            SojournLaw::Weibull { scale, shape } => scale * libm::tgamma(1.0 + 1.0 / shape),
        }
    }

    /// Inverse-CDF sample of a sojourn time.
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> f64 {
        let u: f64 = rng.random_range(0.0..1.0);
        match *self {
            SojournLaw::Exponential { rate } => -(1.0 - u).ln() / rate,
            SojournLaw::Weibull { scale, shape } => scale * (-(1.0 - u).ln()).powf(1.0 / shape),
        }
    }
}

/// Semi-Markov mode process: embedded jump chain plus per-mode sojourn laws.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeProcess {
    n_modes: usize,
    embedded_chain: DMatrix<f64>,
    sojourn_laws: Vec<SojournLaw>,
}

impl ModeProcess {
    pub fn new(embedded_chain: DMatrix<f64>, sojourn_laws: Vec<SojournLaw>) -> Result<Self> {
        let n = sojourn_laws.len();
        if n == 0 {
            return Err(Error::Config("mode process needs at least one mode".into()));
        }
        if embedded_chain.nrows() != n || embedded_chain.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "embedded chain is {}x{}, expected {n}x{n}",
                embedded_chain.nrows(),
                embedded_chain.ncols()
            )));
        }
        for law in &sojourn_laws {
            law.validate()?;
        }
        for i in 0..n {
            if embedded_chain[(i, i)] != 0.0 {
                return Err(Error::Config(format!("embedded chain must have zero diagonal (q_{i}{i} != 0)")));
            }
            let mut row_sum = 0.0;
            for j in 0..n {
                let q = embedded_chain[(i, j)];
                if q < 0.0 || !q.is_finite() {
                    return Err(Error::Config(format!("embedded chain entry q_{i}{j} = {q} invalid")));
                }
                row_sum += q;
            }
            // a single mode has nowhere to jump; its (empty) row stays all-zero
            if n > 1 && (row_sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("embedded chain row {i} sums to {row_sum}, expected 1")));
            }
        }
        Ok(ModeProcess { n_modes: n, embedded_chain, sojourn_laws })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn embedded_chain(&self) -> &DMatrix<f64> {
        &self.embedded_chain
    }

    pub fn sojourn_law(&self, mode: usize) -> &SojournLaw {
        &self.sojourn_laws[mode]
    }

    fn check_mode(&self, m: usize) -> Result<()> {
        if m < self.n_modes {
            Ok(())
        } else {
            Err(Error::InvalidMode { index: m, n_modes: self.n_modes })
        }
    }
}

/// Transition rate pi_ij(h) at elapsed sojourn h: q_ij * hazard_i(h) off the
/// diagonal and -hazard_i(h) on it, so each row sums to zero.
pub fn hazard(p: &ModeProcess, i: usize, j: usize, h: f64) -> Result<f64> {
    p.check_mode(i)?;
    p.check_mode(j)?;
    let lambda = p.sojourn_laws[i].hazard(h);
    if i == j {
        Ok(-lambda)
    } else {
        Ok(p.embedded_chain[(i, j)] * lambda)
    }
}

/// Full row pi_i.(h) of transition rates.
pub fn hazard_row(p: &ModeProcess, i: usize, h: f64) -> Result<Vec<f64>> {
    p.check_mode(i)?;
    (0..p.n_modes).map(|j| hazard(p, i, j, h)).collect()
}

/// Piecewise-constant mode signal r(t), right-continuous at switch times.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTrajectory {
    /// Epoch start times; switch_times[0] == 0.
    switch_times: Vec<f64>,
    modes: Vec<usize>,
    horizon: f64,
}

impl ModeTrajectory {
    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Epoch index containing t (right-continuous).
    fn epoch_index(&self, t: f64) -> Result<usize> {
        if t < 0.0 || t > self.horizon {
            return Err(Error::OutOfRange { t, horizon: self.horizon });
        }
        // rightmost switch time <= t
        let mut lo = 0usize;
        let mut hi = self.switch_times.len();
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.switch_times[mid] <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    /// Elapsed sojourn time in the current epoch at t.
    pub fn elapsed_at(&self, t: f64) -> Result<f64> {
        let k = self.epoch_index(t)?;
        Ok(t - self.switch_times[k])
    }
}

/// Mode of the epoch containing t; at a switch instant, the post-switch mode.
pub fn mode_at(tr: &ModeTrajectory, t: f64) -> Result<usize> {
    Ok(tr.modes[tr.epoch_index(t)?])
}

/// Sample one switching trajectory over [0, horizon]: draw a sojourn from the
/// current mode's law, then the next mode from the embedded chain row.
pub fn sample_trajectory(
    p: &ModeProcess,
    horizon: f64,
    initial_mode: usize,
    rng: &mut ChaCha12Rng,
) -> Result<ModeTrajectory> {
    if !(horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    p.check_mode(initial_mode)?;
    let mut switch_times = vec![0.0];
    let mut modes = vec![initial_mode];
    if p.n_modes == 1 {
        return Ok(ModeTrajectory { switch_times, modes, horizon });
    }
    let mut t = 0.0;
    let mut current = initial_mode;
    loop {
        let sojourn = p.sojourn_laws[current].sample(rng);
        t += sojourn;
        if t >= horizon {
            break;
        }
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut next = current;
        for j in 0..p.n_modes {
            if j == current {
                continue;
            }
            acc += p.embedded_chain[(current, j)];
            if u < acc {
                next = j;
                break;
            }
        }
        // guard against rounding when the row sums to 1 - eps
        if next == current {
            next = (0..p.n_modes).rev().find(|&j| j != current && p.embedded_chain[(current, j)] > 0.0)
                .ok_or_else(|| Error::Config(format!("mode {current} has no outgoing transitions")))?;
        }
        switch_times.push(t);
        modes.push(next);
        current = next;
    }
    Ok(ModeTrajectory { switch_times, modes, horizon })
}
