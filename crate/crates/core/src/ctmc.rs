//! Switching-time sampling for the regime chain and the Poisson-dominated
//! switching-count probabilities.

use rand::Rng;

use crate::model::{GeneratorMatrix, RegimeIndex};
use crate::rng::exponential;
use crate::{Error, Result};

/// One regime switch: the chain jumps to `to` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchEvent {
    pub time: f64,
    pub to: RegimeIndex,
}

/// Ordered switching times and destinations of one realized chain path on
/// [start_time, horizon].
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchPath {
    start_time: f64,
    start_regime: RegimeIndex,
    horizon: f64,
    events: Vec<SwitchEvent>,
}

/// One constant-regime leg of a path, covering [from, to).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub from: f64,
    pub to: f64,
    pub regime: RegimeIndex,
}

impl SwitchPath {
    pub fn new(
        start_time: f64,
        start_regime: RegimeIndex,
        horizon: f64,
        events: Vec<SwitchEvent>,
    ) -> Result<Self> {
        let mut prev_time = start_time;
        let mut prev_regime = start_regime;
        for e in &events {
            if !(e.time > prev_time && e.time <= horizon) {
                return Err(Error::invalid(format!(
                    "switch times must be strictly increasing within ({start_time}, {horizon}]: got {}",
                    e.time
                )));
            }
            if e.to == prev_regime {
                return Err(Error::invalid(format!(
                    "consecutive regimes must differ: regime {} repeated at t = {}",
                    e.to, e.time
                )));
            }
            prev_time = e.time;
            prev_regime = e.to;
        }
        Ok(Self {
            start_time,
            start_regime,
            horizon,
            events,
        })
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn start_regime(&self) -> RegimeIndex {
        self.start_regime
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn events(&self) -> &[SwitchEvent] {
        &self.events
    }

    pub fn switch_count(&self) -> usize {
        self.events.len()
    }

    /// Time and destination of the m-th switch (1-based), if it occurred.
    pub fn nth_switch(&self, m: usize) -> Option<SwitchEvent> {
        if m == 0 {
            None
        } else {
            self.events.get(m - 1).copied()
        }
    }

    /// Regime occupied at time `t` (right-continuous).
    pub fn regime_at(&self, t: f64) -> RegimeIndex {
        let mut regime = self.start_regime;
        for e in &self.events {
            if e.time <= t {
                regime = e.to;
            } else {
                break;
            }
        }
        regime
    }

    /// Constant-regime legs covering [start_time, cut], where
    /// `cut <= horizon`. The final leg ends exactly at `cut`.
    pub fn legs_until(&self, cut: f64) -> Vec<Leg> {
        let mut legs = Vec::with_capacity(self.events.len() + 1);
        let mut from = self.start_time;
        let mut regime = self.start_regime;
        for e in &self.events {
            if e.time >= cut {
                break;
            }
            if e.time > from {
                legs.push(Leg {
                    from,
                    to: e.time,
                    regime,
                });
            }
            from = e.time;
            regime = e.to;
        }
        if cut > from || legs.is_empty() {
            legs.push(Leg {
                from,
                to: cut,
                regime,
            });
        }
        legs
    }

    pub fn legs(&self) -> Vec<Leg> {
        self.legs_until(self.horizon)
    }
}

fn draw_destination<R: Rng + ?Sized>(
    row: &[f64],
    i: usize,
    exit_rate: f64,
    rng: &mut R,
) -> usize {
    let mut u = rng.random::<f64>() * exit_rate;
    let p = row.len();
    let mut fallback = i;
    for j in 0..p {
        if j == i {
            continue;
        }
        let rate = row[j];
        if rate > 0.0 {
            fallback = j;
            u -= rate;
            if u <= 0.0 {
                return j;
            }
        }
    }
    fallback
}

/// Samples the chain path of a constant generator by exponential holding
/// times. An absorbing start regime yields an event-free path.
pub fn sample_switch_path<R: Rng + ?Sized>(
    q: &GeneratorMatrix,
    start_regime: RegimeIndex,
    start_time: f64,
    horizon: f64,
    rng: &mut R,
) -> SwitchPath {
    assert!(q.is_constant(), "sample_switch_path requires a constant generator");
    debug_assert!(start_time <= horizon);
    let p = q.regimes();
    let mut row = Vec::new();
    let mut entries = Vec::new();
    q.entries_at(0.0, &mut entries);

    let mut events = Vec::new();
    let mut t = start_time;
    let mut i = start_regime.zero_based();
    loop {
        let exit = -entries[i * p + i];
        if exit <= 0.0 {
            break;
        }
        t += exponential(rng, exit);
        if t > horizon {
            break;
        }
        row.clear();
        row.extend_from_slice(&entries[i * p..(i + 1) * p]);
        let j = draw_destination(&row, i, exit, rng);
        events.push(SwitchEvent {
            time: t,
            to: RegimeIndex::from_zero_based(j),
        });
        i = j;
    }
    SwitchPath {
        start_time,
        start_regime,
        horizon,
        events,
    }
}

/// Samples the chain of a state-dependent generator along a known state
/// trajectory by thinning: candidate events arrive at the constant majorant
/// rate (p - 1) * rate_bound and are accepted with probability
/// (-q_ii(x)) / majorant, which is statistically exact.
pub fn sample_switch_path_thinning<R: Rng + ?Sized>(
    q: &GeneratorMatrix,
    path_state: impl Fn(f64) -> f64,
    start_regime: RegimeIndex,
    start_time: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<SwitchPath> {
    let p = q.regimes();
    let majorant = (p.saturating_sub(1)) as f64 * q.rate_bound();
    let mut events = Vec::new();
    let mut t = start_time;
    let mut i = start_regime.zero_based();
    let mut entries = Vec::new();

    if majorant > 0.0 {
        loop {
            t += exponential(rng, majorant);
            if t > horizon {
                break;
            }
            let x = path_state(t);
            q.entries_at(x, &mut entries);
            let mut exit = 0.0;
            for j in 0..p {
                if j == i {
                    continue;
                }
                let rate = entries[i * p + j];
                if rate > q.rate_bound() + 1e-12 {
                    return Err(Error::RateBoundViolated {
                        time: t,
                        state: x,
                        rate,
                        bound: q.rate_bound(),
                    });
                }
                exit += rate;
            }
            if exit > majorant {
                return Err(Error::RateBoundViolated {
                    time: t,
                    state: x,
                    rate: exit,
                    bound: majorant,
                });
            }
            if rng.random::<f64>() * majorant < exit {
                let row = &entries[i * p..(i + 1) * p];
                let j = draw_destination(row, i, exit, rng);
                events.push(SwitchEvent {
                    time: t,
                    to: RegimeIndex::from_zero_based(j),
                });
                i = j;
            }
        }
    }
    Ok(SwitchPath {
        start_time,
        start_regime,
        horizon,
        events,
    })
}

/// Probability that a Poisson(c * delta) count stays below `m`, i.e. the
/// partial sum sum_{k=0}^{m-1} e^{-c delta} (c delta)^k / k!.
///
/// This dominates the chance of seeing fewer than m regime switches over a
/// window of length `delta` when all exit rates are at most `c`.
pub fn switch_tail_probability(c: f64, delta: f64, m: usize) -> f64 {
    debug_assert!(c >= 0.0 && delta >= 0.0);
    if m == 0 {
        return 0.0;
    }
    let lambda = c * delta;
    if lambda == 0.0 {
        return 1.0;
    }
    let mut term = (-lambda).exp();
    let mut sum = term;
    for k in 1..m {
        term *= lambda / k as f64;
        sum += term;
    }
    sum.min(1.0)
}
