//! Brute-force Monte Carlo for the fully coupled switching diffusion: the
//! independent truth source the other backends are verified against.
//!
//! GBM models evolve exactly (one lognormal draw per regime leg), so the
//! initial-value estimates carry no time-discretization bias. General
//! coefficients use Euler-Maruyama; state-dependent switching is folded in
//! by thinning against the declared rate bound. Heat-source path integrals
//! use the trapezoid rule on the realized mesh, whose nodes include every
//! switch time. Paths draw from counter-based substreams and partial
//! moments merge in fixed chunk order, so every estimate is bit-identical
//! for a given (seed, n_paths, scheme) regardless of thread count.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::ctmc::{sample_switch_path, SwitchPath};
use crate::math::Moments;
use crate::model::{
    GbmRegimeModel, GeneralCoefficients, GeneratorMatrix, ProblemKind, ProblemSpec, RegimeIndex,
    SpatialDomain,
};
use crate::rng::{exponential, substream, Stream};
use crate::{Error, Result};

/// Monte Carlo estimate with its reproducibility token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Path discretization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// Exact lognormal legs between switches (GBM models only).
    /// `monitor_step` sub-samples legs when a boundary problem needs exit
    /// monitoring.
    ExactGbmBridging { monitor_step: Option<f64> },
    /// Euler-Maruyama with fixed step; exits are monitored on the step mesh.
    EulerMaruyama { step: f64 },
}

/// Dynamics backing the oracle.
pub enum Dynamics<'a> {
    Gbm(&'a GbmRegimeModel),
    General {
        coefficients: &'a GeneralCoefficients,
        generator: &'a GeneratorMatrix,
    },
}

/// Monte Carlo oracle for one problem and dynamics.
pub struct Oracle<'a> {
    problem: &'a ProblemSpec,
    dynamics: Dynamics<'a>,
    scheme: Scheme,
}

/// Paths per reduction chunk; fixed so the merge tree never depends on the
/// worker count.
const CHUNK: usize = 4096;

fn reduce_paths(
    n_paths: usize,
    seed: u64,
    per_path: impl Fn(u64, &mut Stream) -> Result<f64> + Sync,
) -> Result<PathEstimate> {
    let n_chunks = n_paths.div_ceil(CHUNK);
    let partials: Vec<Result<Moments>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut moments = Moments::new();
            let start = chunk * CHUNK;
            let end = (start + CHUNK).min(n_paths);
            for k in start..end {
                let mut rng = substream(seed, k as u64);
                moments.push(per_path(k as u64, &mut rng)?);
            }
            Ok(moments)
        })
        .collect();
    let mut total = Moments::new();
    for partial in partials {
        total.merge(&partial?);
    }
    Ok(PathEstimate {
        mean: total.mean(),
        stderr: total.stderr(),
        n_paths,
        seed,
    })
}

/// State carried along one realized path.
struct PathState {
    time: f64,
    x: f64,
    regime: RegimeIndex,
    /// Accumulated log of the discount factor (nonpositive for r >= 0).
    log_discount: f64,
    /// Accumulated trapezoid value of the discounted heat source.
    source_integral: f64,
    switches: usize,
}

impl PathState {
    fn new(time: f64, x: f64, regime: RegimeIndex) -> Self {
        Self {
            time,
            x,
            regime,
            log_discount: 0.0,
            source_integral: 0.0,
            switches: 0,
        }
    }

    fn discount(&self) -> f64 {
        self.log_discount.exp()
    }
}

impl<'a> Oracle<'a> {
    pub fn new(problem: &'a ProblemSpec, dynamics: Dynamics<'a>, scheme: Scheme) -> Result<Self> {
        match (&dynamics, scheme) {
            (Dynamics::General { .. }, Scheme::ExactGbmBridging { .. }) => {
                return Err(Error::invalid(
                    "exact bridging requires a GBM regime model; use Euler-Maruyama",
                ));
            }
            (Dynamics::General { generator, .. }, Scheme::EulerMaruyama { step }) => {
                if !step.is_finite() || step <= 0.0 {
                    return Err(Error::invalid(format!(
                        "Euler-Maruyama step must be positive, got {step}"
                    )));
                }
                if !generator.rate_bound().is_finite() {
                    return Err(Error::invalid("generator rate bound must be finite"));
                }
            }
            (Dynamics::Gbm(_), Scheme::EulerMaruyama { step }) => {
                if !step.is_finite() || step <= 0.0 {
                    return Err(Error::invalid(format!(
                        "Euler-Maruyama step must be positive, got {step}"
                    )));
                }
            }
            (Dynamics::Gbm(_), Scheme::ExactGbmBridging { .. }) => {}
        }
        Ok(Self {
            problem,
            dynamics,
            scheme,
        })
    }

    /// Estimates the target value: discounted terminal payoff minus the
    /// discounted heat-source integral under the fully coupled dynamics.
    pub fn value(
        &self,
        t: f64,
        x: f64,
        i: RegimeIndex,
        n_paths: usize,
        seed: u64,
    ) -> Result<PathEstimate> {
        reduce_paths(n_paths, seed, |_, rng| {
            let state = self.evolve(t, x, i, None, rng)?;
            let payoff = self.problem.payoff.eval(state.x, state.regime);
            Ok(state.discount() * payoff - state.source_integral)
        })
    }

    /// Estimates the plain restricted iterate: each path stops at its m-th
    /// switch (capped at the horizon), where the supplied level-0 evaluator
    /// is paid. `m = 0` is the degenerate identity.
    #[allow(clippy::too_many_arguments)]
    pub fn restricted_w(
        &self,
        m: usize,
        w0_eval: &(dyn Fn(f64, f64, RegimeIndex) -> f64 + Sync),
        t: f64,
        x: f64,
        i: RegimeIndex,
        n_paths: usize,
        seed: u64,
    ) -> Result<PathEstimate> {
        if m == 0 {
            return Ok(PathEstimate {
                mean: w0_eval(t, x, i),
                stderr: 0.0,
                n_paths,
                seed,
            });
        }
        reduce_paths(n_paths, seed, |_, rng| {
            let state = self.evolve(t, x, i, Some(m), rng)?;
            let inner = w0_eval(state.time, state.x, state.regime);
            if !inner.is_finite() {
                return Err(Error::non_finite(format!(
                    "level-0 evaluator at t = {}, x = {}",
                    state.time, state.x
                )));
            }
            Ok(state.discount() * inner - state.source_integral)
        })
    }

    /// Estimates the survival-weighted restricted iterate: the terminal
    /// payoff is paid only on paths with at most m switches; the source
    /// integral always runs to the (m+1)-th switch or the horizon.
    pub fn restricted_u(
        &self,
        m: usize,
        t: f64,
        x: f64,
        i: RegimeIndex,
        n_paths: usize,
        seed: u64,
    ) -> Result<PathEstimate> {
        reduce_paths(n_paths, seed, |_, rng| {
            let state = self.evolve(t, x, i, Some(m + 1), rng)?;
            if state.switches > m {
                Ok(-state.source_integral)
            } else {
                let payoff = self.problem.payoff.eval(state.x, state.regime);
                Ok(state.discount() * payoff - state.source_integral)
            }
        })
    }

    /// Estimates the boundary-problem value: exits are monitored discretely;
    /// the first monitored exit pays the boundary data, paths alive at the
    /// horizon pay the terminal payoff (a tie at the horizon pays the
    /// payoff).
    pub fn value_with_exit(
        &self,
        t: f64,
        x: f64,
        i: RegimeIndex,
        n_paths: usize,
        seed: u64,
    ) -> Result<PathEstimate> {
        if self.problem.kind != ProblemKind::InitialBoundary {
            return Err(Error::invalid(
                "value_with_exit requires an initial-boundary problem",
            ));
        }
        let SpatialDomain::Interval { lo, hi } = self.problem.domain else {
            return Err(Error::invalid("boundary problems need a bounded interval"));
        };
        let psi = self
            .problem
            .boundary
            .as_ref()
            .ok_or_else(|| Error::invalid("boundary problems need exit data"))?;
        if !self.problem.contains(x) {
            return Ok(PathEstimate {
                mean: psi(t, x, i),
                stderr: 0.0,
                n_paths,
                seed,
            });
        }
        reduce_paths(n_paths, seed, |_, rng| {
            let outcome = self.evolve_monitored(t, x, i, lo, hi, rng)?;
            match outcome {
                Exit::Interior(state) => {
                    let payoff = self.problem.payoff.eval(state.x, state.regime);
                    Ok(state.discount() * payoff - state.source_integral)
                }
                Exit::Hit(state) => {
                    let pay = psi(state.time, state.x, state.regime);
                    if !pay.is_finite() {
                        return Err(Error::non_finite(format!(
                            "boundary data at t = {}, x = {}",
                            state.time, state.x
                        )));
                    }
                    Ok(state.discount() * pay - state.source_integral)
                }
            }
        })
    }

    fn evolve(
        &self,
        t: f64,
        x: f64,
        i: RegimeIndex,
        stop_after: Option<usize>,
        rng: &mut Stream,
    ) -> Result<PathState> {
        match &self.dynamics {
            Dynamics::Gbm(model) => {
                let path = sample_switch_path(model.generator(), i, t, self.problem.horizon, rng);
                Ok(self.evolve_gbm_legs(model, &path, x, stop_after, rng))
            }
            Dynamics::General {
                coefficients,
                generator,
            } => {
                let Scheme::EulerMaruyama { step } = self.scheme else {
                    unreachable!("validated in Oracle::new");
                };
                self.evolve_em(coefficients, generator, t, x, i, step, stop_after, None, rng)
                    .map(|outcome| match outcome {
                        Exit::Interior(state) => state,
                        Exit::Hit(_) => unreachable!("no exit monitoring requested"),
                    })
            }
        }
    }

    /// Exact lognormal evolution along the sampled legs, stopping after the
    /// given switch count when requested.
    fn evolve_gbm_legs(
        &self,
        model: &GbmRegimeModel,
        path: &SwitchPath,
        x: f64,
        stop_after: Option<usize>,
        rng: &mut Stream,
    ) -> PathState {
        let cut = match stop_after {
            Some(m) => path
                .nth_switch(m)
                .map(|e| e.time)
                .unwrap_or(self.problem.horizon),
            None => self.problem.horizon,
        };
        let mut state = PathState::new(path.start_time(), x, path.start_regime());
        for leg in path.legs_until(cut) {
            let duration = leg.to - leg.from;
            let rate = model.rate(leg.regime);
            let vol = model.vol(leg.regime);
            let alpha = model.adjustment(leg.regime);
            let z: f64 = rng.sample(StandardNormal);
            let x_next =
                state.x * ((rate - alpha - 0.5 * vol * vol) * duration + vol * duration.sqrt() * z).exp();
            self.accumulate_source_leg(&mut state, leg.from, leg.to, x_next, leg.regime, rate);
            state.x = x_next;
            state.time = leg.to;
        }
        state.regime = path.regime_at(cut);
        state.switches = path
            .events()
            .iter()
            .take_while(|e| e.time <= cut)
            .count();
        state
    }

    /// Trapezoid contribution of the heat source over one constant-regime
    /// leg, with the discount evaluated at both endpoints.
    fn accumulate_source_leg(
        &self,
        state: &mut PathState,
        from: f64,
        to: f64,
        x_next: f64,
        regime: RegimeIndex,
        rate: f64,
    ) {
        let duration = to - from;
        let phi_a = (self.problem.source)(from, state.x, regime);
        let phi_b = (self.problem.source)(to, x_next, regime);
        if phi_a != 0.0 || phi_b != 0.0 {
            let disc_a = state.log_discount.exp();
            let disc_b = (state.log_discount - rate * duration).exp();
            state.source_integral += 0.5 * duration * (disc_a * phi_a + disc_b * phi_b);
        }
        state.log_discount -= rate * duration;
    }
}

enum Exit {
    Interior(PathState),
    Hit(PathState),
}

impl<'a> Oracle<'a> {
    /// Euler-Maruyama evolution with thinned switching; `exit` enables
    /// monitoring against the open interval (lo, hi).
    #[allow(clippy::too_many_arguments)]
    fn evolve_em(
        &self,
        coeffs: &GeneralCoefficients,
        q: &GeneratorMatrix,
        t: f64,
        x: f64,
        i: RegimeIndex,
        step: f64,
        stop_after: Option<usize>,
        exit: Option<(f64, f64)>,
        rng: &mut Stream,
    ) -> Result<Exit> {
        let horizon = self.problem.horizon;
        let p = q.regimes();
        let majorant = (p.saturating_sub(1)) as f64 * q.rate_bound();
        let mut state = PathState::new(t, x, i);
        let mut entries = Vec::new();
        let mut next_candidate = if majorant > 0.0 {
            t + exponential(rng, majorant)
        } else {
            f64::INFINITY
        };

        let mut grid_next = t + step;
        loop {
            if let Some(m) = stop_after {
                if state.switches >= m {
                    break;
                }
            }
            if state.time >= horizon {
                break;
            }
            let target = grid_next.min(next_candidate).min(horizon);
            let dt = target - state.time;
            if dt > 0.0 {
                let b = (coeffs.drift)(state.time, state.x, state.regime);
                let sig = (coeffs.diffusion)(state.time, state.x, state.regime);
                let r_a = (coeffs.rate)(state.time, state.x, state.regime);
                if !(b.is_finite() && sig.is_finite() && r_a.is_finite()) {
                    return Err(Error::non_finite(format!(
                        "coefficients at t = {}, x = {}",
                        state.time, state.x
                    )));
                }
                let z: f64 = rng.sample(StandardNormal);
                let x_next = state.x + b * dt + sig * dt.sqrt() * z;
                let r_b = (coeffs.rate)(target, x_next, state.regime);
                let phi_a = (self.problem.source)(state.time, state.x, state.regime);
                let phi_b = (self.problem.source)(target, x_next, state.regime);
                if phi_a != 0.0 || phi_b != 0.0 {
                    let disc_a = state.log_discount.exp();
                    let disc_b = (state.log_discount - 0.5 * (r_a + r_b) * dt).exp();
                    state.source_integral += 0.5 * dt * (disc_a * phi_a + disc_b * phi_b);
                }
                state.log_discount -= 0.5 * (r_a + r_b) * dt;
                state.x = x_next;
                state.time = target;

                if state.time < horizon {
                    if let Some((lo, hi)) = exit {
                        if state.x <= lo || state.x >= hi {
                            return Ok(Exit::Hit(state));
                        }
                    } else if !self.problem.contains(state.x) {
                        return Err(Error::DomainExit {
                            time: state.time,
                            state: state.x,
                        });
                    }
                }
            }
            if state.time >= horizon {
                break;
            }
            if state.time == next_candidate {
                q.entries_at(state.x, &mut entries);
                let iz = state.regime.zero_based();
                let mut exit_rate = 0.0;
                for jz in 0..p {
                    if jz == iz {
                        continue;
                    }
                    let rate = entries[iz * p + jz];
                    if rate > q.rate_bound() + 1e-12 {
                        return Err(Error::RateBoundViolated {
                            time: state.time,
                            state: state.x,
                            rate,
                            bound: q.rate_bound(),
                        });
                    }
                    exit_rate += rate;
                }
                if exit_rate > majorant {
                    return Err(Error::RateBoundViolated {
                        time: state.time,
                        state: state.x,
                        rate: exit_rate,
                        bound: majorant,
                    });
                }
                if rng.random::<f64>() * majorant < exit_rate {
                    let mut u = rng.random::<f64>() * exit_rate;
                    let mut dest = iz;
                    for jz in 0..p {
                        if jz == iz {
                            continue;
                        }
                        let rate = entries[iz * p + jz];
                        if rate > 0.0 {
                            dest = jz;
                            u -= rate;
                            if u <= 0.0 {
                                break;
                            }
                        }
                    }
                    state.regime = RegimeIndex::from_zero_based(dest);
                    state.switches += 1;
                }
                next_candidate = state.time + exponential(rng, majorant);
            }
            if state.time == grid_next {
                grid_next += step;
            }
        }
        Ok(Exit::Interior(state))
    }

    /// Boundary-monitored evolution dispatching on the scheme.
    fn evolve_monitored(
        &self,
        t: f64,
        x: f64,
        i: RegimeIndex,
        lo: f64,
        hi: f64,
        rng: &mut Stream,
    ) -> Result<Exit> {
        match (&self.dynamics, self.scheme) {
            (Dynamics::Gbm(model), Scheme::ExactGbmBridging { monitor_step }) => {
                let h = monitor_step.ok_or_else(|| {
                    Error::invalid(
                        "exit monitoring under exact bridging needs a monitor step",
                    )
                })?;
                if !h.is_finite() || h <= 0.0 {
                    return Err(Error::invalid(format!(
                        "monitor step must be positive, got {h}"
                    )));
                }
                let path = sample_switch_path(model.generator(), i, t, self.problem.horizon, rng);
                let mut state = PathState::new(t, x, i);
                for leg in path.legs() {
                    let duration = leg.to - leg.from;
                    let n_sub = (duration / h).ceil().max(1.0) as usize;
                    let dt = duration / n_sub as f64;
                    let rate = model.rate(leg.regime);
                    let vol = model.vol(leg.regime);
                    let alpha = model.adjustment(leg.regime);
                    let drift = (rate - alpha - 0.5 * vol * vol) * dt;
                    let step_vol = vol * dt.sqrt();
                    for sub in 0..n_sub {
                        let from = leg.from + sub as f64 * dt;
                        let to = if sub + 1 == n_sub {
                            leg.to
                        } else {
                            leg.from + (sub + 1) as f64 * dt
                        };
                        let z: f64 = rng.sample(StandardNormal);
                        let x_next = state.x * (drift + step_vol * z).exp();
                        self.accumulate_source_leg(&mut state, from, to, x_next, leg.regime, rate);
                        state.x = x_next;
                        state.time = to;
                        state.regime = leg.regime;
                        if state.time < self.problem.horizon && (state.x <= lo || state.x >= hi) {
                            return Ok(Exit::Hit(state));
                        }
                    }
                }
                state.regime = path.regime_at(self.problem.horizon);
                Ok(Exit::Interior(state))
            }
            (Dynamics::Gbm(model), Scheme::EulerMaruyama { step }) => {
                let coeffs = model.coefficients();
                self.evolve_em(
                    &coeffs,
                    model.generator(),
                    t,
                    x,
                    i,
                    step,
                    None,
                    Some((lo, hi)),
                    rng,
                )
            }
            (
                Dynamics::General {
                    coefficients,
                    generator,
                },
                Scheme::EulerMaruyama { step },
            ) => self.evolve_em(
                coefficients,
                generator,
                t,
                x,
                i,
                step,
                None,
                Some((lo, hi)),
                rng,
            ),
            (Dynamics::General { .. }, Scheme::ExactGbmBridging { .. }) => {
                unreachable!("validated in Oracle::new")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{zero_field, Payoff};
    use crate::semianalytic::{call_price, SemiAnalytic};
    use crate::QuadratureSpec;
    use std::sync::Arc;

    fn regime(v: usize) -> RegimeIndex {
        RegimeIndex::from_zero_based(v - 1)
    }

    fn paper_model() -> GbmRegimeModel {
        let q = GeneratorMatrix::constant(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        GbmRegimeModel::new(q, vec![0.05, 0.05], vec![0.15, 0.25], vec![0.0, 0.0]).unwrap()
    }

    fn single_regime_model() -> GbmRegimeModel {
        GbmRegimeModel::new(GeneratorMatrix::zero(1), vec![0.05], vec![0.2], vec![0.0]).unwrap()
    }

    fn call_problem() -> ProblemSpec {
        ProblemSpec::initial_value(
            1.0,
            SpatialDomain::HalfLine,
            Payoff::call(1.0),
            zero_field(),
        )
        .unwrap()
    }

    fn bridging() -> Scheme {
        Scheme::ExactGbmBridging { monitor_step: None }
    }

    #[test]
    fn single_regime_value_matches_closed_form() {
        let model = single_regime_model();
        let problem = call_problem();
        let oracle = Oracle::new(&problem, Dynamics::Gbm(&model), bridging()).unwrap();
        let est = oracle.value(0.0, 1.0, regime(1), 100_000, 21).unwrap();
        let exact = call_price(1.0, 0.05, 0.2, 1.0, 0.0, 1.0);
        assert!(
            (est.mean - exact).abs() < 3.0 * est.stderr,
            "mean {} vs {exact} (stderr {})",
            est.mean,
            est.stderr
        );
    }

    #[test]
    fn zero_payoff_and_source_give_exact_zero() {
        let model = paper_model();
        let problem = ProblemSpec::initial_value(
            1.0,
            SpatialDomain::HalfLine,
            Payoff::custom(|_, _| 0.0),
            zero_field(),
        )
        .unwrap();
        let oracle = Oracle::new(&problem, Dynamics::Gbm(&model), bridging()).unwrap();
        let est = oracle.value(0.0, 1.0, regime(1), 2000, 3).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn discount_is_exactly_one_for_zero_rates() {
        let q = GeneratorMatrix::constant(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let model = GbmRegimeModel::new(q, vec![0.0, 0.0], vec![0.15, 0.25], vec![0.0, 0.0]).unwrap();
        let problem = ProblemSpec::initial_value(
            1.0,
            SpatialDomain::HalfLine,
            Payoff::custom(|_, _| 1.0),
            zero_field(),
        )
        .unwrap();
        let oracle = Oracle::new(&problem, Dynamics::Gbm(&model), bridging()).unwrap();
        let est = oracle.value(0.0, 1.0, regime(1), 2000, 5).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn restricted_w_at_zero_is_the_evaluator_itself() {
        let model = paper_model();
        let problem = call_problem();
        let oracle = Oracle::new(&problem, Dynamics::Gbm(&model), bridging()).unwrap();
        let w0 = |_t: f64, x: f64, _i: RegimeIndex| x * 0.5 + 1.0;
        let est = oracle
            .restricted_w(0, &w0, 0.2, 1.4, regime(2), 5000, 9)
            .unwrap();
        assert_eq!(est.mean, 1.4 * 0.5 + 1.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn restricted_w_beyond_all_switches_equals_value() {
        // With at most a handful of switches per unit horizon, m = 60 is
        // never reached, and the level-0 evaluator at the horizon is the
        // payoff itself, so both estimators see identical paths.
        let model = paper_model();
        let problem = call_problem();
        let oracle = Oracle::new(&problem, Dynamics::Gbm(&model), bridging()).unwrap();
        let w0 = |t: f64, x: f64, _i: RegimeIndex| {
            assert!((t - 1.0).abs() < 1e-12, "must only be evaluated at the horizon");
            (x - 1.0_f64).max(0.0)
        };
        let a = oracle
            .restricted_w(60, &w0, 0.0, 1.0, regime(1), 20_000, 13)
            .unwrap();
        let b = oracle.value(0.0, 1.0, regime(1), 20_000, 13).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.stderr, b.stderr);
    }

    #[test]
    fn restricted_u_without_switching_equals_value() {
        let model = GbmRegimeModel::new(
            GeneratorMatrix::zero(2),
            vec![0.05, 0.05],
            vec![0.15, 0.25],
            vec![0.0, 0.0],
        )
        .unwrap();
        let problem = call_problem();
        let oracle = Oracle::new(&problem, Dynamics::Gbm(&model), bridging()).unwrap();
        let a = oracle.restricted_u(0, 0.0, 1.0, regime(1), 10_000, 17).unwrap();
        let b = oracle.value(0.0, 1.0, regime(1), 10_000, 17).unwrap();
        assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn restricted_u_matches_semianalytic_u0() {
        let model = paper_model();
        let problem = call_problem();
        let oracle = Oracle::new(&problem, Dynamics::Gbm(&model), bridging()).unwrap();
        let eng = SemiAnalytic::new(&model, Payoff::call(1.0), 1.0, QuadratureSpec::default())
            .unwrap();
        let exact = eng.u0(0.0, 1.0, regime(1)).unwrap();
        let est = oracle.restricted_u(0, 0.0, 1.0, regime(1), 200_000, 19).unwrap();
        assert!(
            (est.mean - exact).abs() < 3.0 * est.stderr,
            "mean {} vs u0 {exact} (stderr {})",
            est.mean,
            est.stderr
        );
    }

    #[test]
    fn restricted_u_is_pathwise_monotone_in_m() {
        let model = paper_model();
        let problem = call_problem();
        let oracle = Oracle::new(&problem, Dynamics::Gbm(&model), bridging()).unwrap();
        for seed in 0..500 {
            let mut prev = f64::NEG_INFINITY;
            for m in 0..4 {
                let est = oracle.restricted_u(m, 0.0, 1.0, regime(1), 1, seed).unwrap();
                assert!(
                    est.mean >= prev - 1e-15,
                    "seed {seed}, m {m}: {} < {prev}",
                    est.mean
                );
                prev = est.mean;
            }
        }
    }

    #[test]
    fn coupling_fraction_matches_tail_probability() {
        // restricted_w(m) and value differ exactly on paths with >= m
        // switches. The payoff is strictly increasing so that stopped and
        // terminal values never collide by accident.
        let model = paper_model();
        let problem = ProblemSpec::initial_value(
            1.0,
            SpatialDomain::HalfLine,
            Payoff::custom(|x, _| x),
            zero_field(),
        )
        .unwrap();
        let oracle = Oracle::new(&problem, Dynamics::Gbm(&model), bridging()).unwrap();
        let w0 = |_t: f64, x: f64, _i: RegimeIndex| x;
        let m = 2;
        let n = 4000;
        let mut differing = 0;
        for seed in 0..n {
            let a = oracle.restricted_w(m, &w0, 0.0, 1.0, regime(1), 1, seed).unwrap();
            let b = oracle.value(0.0, 1.0, regime(1), 1, seed).unwrap();
            let mut rng = substream(seed, 0);
            let count =
                sample_switch_path(model.generator(), regime(1), 0.0, 1.0, &mut rng).switch_count();
            if a.mean != b.mean {
                assert!(count >= m, "seed {seed}: values differ with {count} switches");
                differing += 1;
            }
        }
        let p = 1.0 - crate::ctmc::switch_tail_probability(1.0, 1.0, m);
        let p_hat = differing as f64 / n as f64;
        let three_sigma = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (p_hat - p).abs() < three_sigma + 0.01,
            "fraction {p_hat} vs tail complement {p}"
        );
    }

    #[test]
    fn stderr_scales_as_inverse_square_root() {
        let model = paper_model();
        let problem = call_problem();
        let oracle = Oracle::new(&problem, Dynamics::Gbm(&model), bridging()).unwrap();
        let small = oracle.value(0.0, 1.0, regime(1), 20_000, 23).unwrap();
        let large = oracle.value(0.0, 1.0, regime(1), 80_000, 23).unwrap();
        let ratio = small.stderr / large.stderr;
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn estimates_are_deterministic_for_a_seed() {
        let model = paper_model();
        let problem = call_problem();
        let oracle = Oracle::new(&problem, Dynamics::Gbm(&model), bridging()).unwrap();
        let a = oracle.value(0.0, 1.0, regime(1), 30_000, 99).unwrap();
        let b = oracle.value(0.0, 1.0, regime(1), 30_000, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn euler_matches_bridging_for_gbm() {
        let model = single_regime_model();
        let problem = call_problem();
        let em = Oracle::new(
            &problem,
            Dynamics::Gbm(&model),
            Scheme::EulerMaruyama { step: 1e-3 },
        )
        .unwrap();
        let est = em.value(0.0, 1.0, regime(1), 40_000, 31).unwrap();
        let exact = call_price(1.0, 0.05, 0.2, 1.0, 0.0, 1.0);
        assert!(
            (est.mean - exact).abs() < 3.0 * est.stderr + 2e-3,
            "mean {} vs {exact}",
            est.mean
        );
    }

    #[test]
    fn state_dependent_switching_runs_under_euler() {
        // Rates q_12(x) = min(x, 2)/2, q_21 = 0.4; the run must finish and
        // produce a finite estimate bracketed by the two closed forms.
        let q = GeneratorMatrix::state_dependent(2, 1.0, |x, buf| {
            let r12 = (x.min(2.0)) / 2.0;
            buf.copy_from_slice(&[-r12, r12, 0.4, -0.4]);
        })
        .unwrap();
        let model = paper_model();
        let coeffs = model.coefficients();
        let problem = call_problem();
        let oracle = Oracle::new(
            &problem,
            Dynamics::General {
                coefficients: &coeffs,
                generator: &q,
            },
            Scheme::EulerMaruyama { step: 2e-3 },
        )
        .unwrap();
        let est = oracle.value(0.0, 1.0, regime(1), 20_000, 37).unwrap();
        let lo = call_price(1.0, 0.05, 0.15, 1.0, 0.0, 1.0);
        let hi = call_price(1.0, 0.05, 0.25, 1.0, 0.0, 1.0);
        assert!(est.mean > lo && est.mean < hi, "estimate {}", est.mean);
    }

    fn boundary_problem(lo: f64, hi: f64) -> ProblemSpec {
        ProblemSpec::initial_boundary(
            1.0,
            lo,
            hi,
            Payoff::call(1.0),
            zero_field(),
            Arc::new(move |t, x, _| if t >= 1.0 { (x - 1.0_f64).max(0.0) } else { 0.0 }),
            2,
        )
        .unwrap()
    }

    #[test]
    fn boundary_start_on_the_boundary_pays_exit_data() {
        let model = paper_model();
        let problem = boundary_problem(0.5, 2.0);
        let oracle = Oracle::new(
            &problem,
            Dynamics::Gbm(&model),
            Scheme::ExactGbmBridging {
                monitor_step: Some(1e-3),
            },
        )
        .unwrap();
        let est = oracle.value_with_exit(0.3, 0.5, regime(1), 100, 41).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn boundary_with_unreachable_walls_matches_plain_value() {
        let model = paper_model();
        let wide = ProblemSpec::initial_boundary(
            1.0,
            1e-6,
            1e6,
            Payoff::call(1.0),
            zero_field(),
            Arc::new(|t, x, _| if t >= 1.0 { (x - 1.0_f64).max(0.0) } else { 0.0 }),
            2,
        )
        .unwrap();
        let oracle = Oracle::new(
            &wide,
            Dynamics::Gbm(&model),
            Scheme::ExactGbmBridging {
                monitor_step: Some(0.01),
            },
        )
        .unwrap();
        let plain_problem = call_problem();
        let plain = Oracle::new(&plain_problem, Dynamics::Gbm(&model), bridging()).unwrap();
        let a = oracle.value_with_exit(0.0, 1.0, regime(1), 50_000, 43).unwrap();
        let b = plain.value(0.0, 1.0, regime(1), 50_000, 43).unwrap();
        let combined = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
        assert!(
            (a.mean - b.mean).abs() < 3.0 * combined,
            "{} vs {}",
            a.mean,
            b.mean
        );
    }

    #[test]
    fn euler_path_leaving_the_half_line_is_a_domain_exit() {
        // strong downward drift pushes the Euler state through zero
        let q = GeneratorMatrix::zero(1);
        let coeffs = GeneralCoefficients {
            drift: std::sync::Arc::new(|_, _, _| -50.0),
            diffusion: std::sync::Arc::new(|_, x, _| 0.2 * x),
            rate: std::sync::Arc::new(|_, _, _| 0.05),
            source: zero_field(),
            rate_magnitude_bound: 0.05,
        };
        let problem = call_problem();
        let oracle = Oracle::new(
            &problem,
            Dynamics::General {
                coefficients: &coeffs,
                generator: &q,
            },
            Scheme::EulerMaruyama { step: 1e-2 },
        )
        .unwrap();
        let err = oracle.value(0.0, 0.1, regime(1), 16, 53).unwrap_err();
        assert!(matches!(err, crate::Error::DomainExit { .. }), "{err}");
    }

    #[test]
    fn bridging_with_general_dynamics_is_rejected() {
        let model = paper_model();
        let coeffs = model.coefficients();
        let q = GeneratorMatrix::zero(2);
        let problem = call_problem();
        let err = Oracle::new(
            &problem,
            Dynamics::General {
                coefficients: &coeffs,
                generator: &q,
            },
            bridging(),
        );
        assert!(err.is_err());
    }
}
