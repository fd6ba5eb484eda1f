//! Hard upper and lower bounding functions.
//!
//! From any iterate family f_m the bound field N_m and the rate field M_r
//! yield computable functions U_m and L_m that are guaranteed to bracket the
//! unknown solution: essential extrema of N_m and M_r over a truncated grid
//! feed the correction term N / (1 - M) times the discounted-time factor.
//! With a state-independent rate the factor is the closed-form annuity; with
//! a regime-independent rate M_r vanishes identically and only the annuity
//! remains.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::math::Moments;
use crate::model::{GeneralCoefficients, GeneratorMatrix, RegimeIndex};
use crate::rng::substream;
use crate::{Error, Result};

/// Discounted time integral under a constant rate: (1 - e^{-r d}) / r, with
/// the analytic limit d at r = 0.
pub fn annuity(rate: f64, delta: f64) -> f64 {
    debug_assert!(delta >= 0.0);
    if rate == 0.0 {
        delta
    } else {
        -(-rate * delta).exp_m1() / rate
    }
}

/// Truncated grid over which essential extrema are approximated. The
/// truncation is the dominating approximation of the bound pipeline and is
/// reported alongside any scalars computed from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_x: usize,
    pub n_t: usize,
}

impl TruncationGrid {
    /// Default window for call-like payoffs: x in [K/4, 4K] with 501 space
    /// points and 101 time points.
    pub fn default_for_strike(strike: f64) -> Self {
        Self {
            x_lo: 0.25 * strike,
            x_hi: 4.0 * strike,
            n_x: 501,
            n_t: 101,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_lo > 0.0 && self.x_hi > self.x_lo) {
            return Err(Error::invalid(format!(
                "truncation grid needs 0 < x_lo < x_hi, got [{}, {}]",
                self.x_lo, self.x_hi
            )));
        }
        if self.n_x < 2 || self.n_t < 2 {
            return Err(Error::invalid(
                "truncation grid needs at least 2 points per axis",
            ));
        }
        Ok(())
    }

    pub fn x_points(&self) -> Vec<f64> {
        let step = (self.x_hi - self.x_lo) / (self.n_x - 1) as f64;
        (0..self.n_x).map(|j| self.x_lo + j as f64 * step).collect()
    }

    pub fn t_points(&self, horizon: f64) -> Vec<f64> {
        (0..self.n_t)
            .map(|k| horizon * k as f64 / (self.n_t - 1) as f64)
            .collect()
    }
}

/// Per-iteration bound scalars: extrema of the positive and negative parts
/// of N_m, and of M_r.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundScalars {
    pub n_upper: Vec<f64>,
    pub n_lower: Vec<f64>,
    pub m_upper: f64,
    pub m_lower: f64,
    /// Grid the extrema were taken over.
    pub grid: TruncationGrid,
}

impl BoundScalars {
    pub fn max_iteration(&self) -> usize {
        self.n_upper.len().saturating_sub(1)
    }
}

/// The bound field N_m at one point, given the iterate family: the full
/// generator row against the level-0 iterate for m = 0, the off-diagonal
/// row against the last iterate difference for m >= 1.
pub fn bound_function_n(
    m: usize,
    t: f64,
    x: f64,
    i: RegimeIndex,
    iterates: &dyn Fn(usize, f64, f64, RegimeIndex) -> f64,
    q: &GeneratorMatrix,
) -> f64 {
    let p = q.regimes();
    let mut total = 0.0;
    for jz in 0..p {
        let j = RegimeIndex::from_zero_based(jz);
        let rate = q.entry(i, j, x);
        if m == 0 {
            total += rate * iterates(0, t, x, j);
        } else if j != i && rate != 0.0 {
            total += rate * (iterates(m, t, x, j) - iterates(m - 1, t, x, j));
        }
    }
    total
}

/// Essential extrema of a field over the truncated grid: the supremum of
/// its positive part and the infimum of its negative part, so the first
/// component is >= 0 and the second <= 0.
pub fn essential_extrema(
    field: &(dyn Fn(f64, f64, RegimeIndex) -> f64 + Sync),
    grid: &TruncationGrid,
    regimes: usize,
    horizon: f64,
) -> Result<(f64, f64)> {
    grid.validate()?;
    let xs = grid.x_points();
    let ts = grid.t_points(horizon);
    let per_slice: Vec<Result<(f64, f64)>> = ts
        .par_iter()
        .map(|&t| {
            let mut sup_plus = 0.0_f64;
            let mut inf_minus = 0.0_f64;
            for &x in &xs {
                for iz in 0..regimes {
                    let i = RegimeIndex::from_zero_based(iz);
                    let v = field(t, x, i);
                    if !v.is_finite() {
                        return Err(Error::non_finite(format!(
                            "bound field at t = {t}, x = {x}, regime {i}"
                        )));
                    }
                    sup_plus = sup_plus.max(v);
                    inf_minus = inf_minus.min(v);
                }
            }
            Ok((sup_plus, inf_minus))
        })
        .collect();
    let mut sup_plus = 0.0_f64;
    let mut inf_minus = 0.0_f64;
    for slice in per_slice {
        let (s, i) = slice?;
        sup_plus = sup_plus.max(s);
        inf_minus = inf_minus.min(i);
    }
    Ok((sup_plus, inf_minus))
}

/// The rate field M_r at one point for state-independent per-regime rates:
/// the generator row against the per-regime annuities. Vanishes identically
/// when the rate does not depend on the regime.
pub fn m_r_function(
    t: f64,
    x: f64,
    i: RegimeIndex,
    q: &GeneratorMatrix,
    rates: &[f64],
    horizon: f64,
) -> f64 {
    let p = q.regimes();
    let mut total = 0.0;
    for jz in 0..p {
        let j = RegimeIndex::from_zero_based(jz);
        total += q.entry(i, j, x) * annuity(rates[jz], horizon - t);
    }
    total
}

/// Extrema of M_r over the grid for state-independent rates.
pub fn m_r_scalars(
    q: &GeneratorMatrix,
    rates: &[f64],
    grid: &TruncationGrid,
    horizon: f64,
) -> Result<(f64, f64)> {
    let field = |t: f64, x: f64, i: RegimeIndex| m_r_function(t, x, i, q, rates, horizon);
    essential_extrema(&field, grid, q.regimes(), horizon)
}

/// Monte Carlo estimate of the discounted-time factor
/// E[int_t^T Theta^i ds] for a state-dependent rate: single-regime
/// Euler-Maruyama paths of the regime-i dynamics, trapezoid in time.
/// Returns (mean, stderr).
#[allow(clippy::too_many_arguments)]
pub fn discounted_time_factor_mc(
    coeffs: &GeneralCoefficients,
    t: f64,
    x: f64,
    i: RegimeIndex,
    horizon: f64,
    step: f64,
    n_paths: usize,
    seed: u64,
) -> (f64, f64) {
    let n_steps = ((horizon - t) / step).ceil().max(1.0) as usize;
    let dt = (horizon - t) / n_steps as f64;
    let mut moments = Moments::new();
    for k in 0..n_paths {
        let mut rng = substream(seed, k as u64);
        let mut state_x = x;
        let mut time = t;
        let mut log_disc = 0.0_f64;
        let mut integral = 0.0_f64;
        for _ in 0..n_steps {
            let b = (coeffs.drift)(time, state_x, i);
            let sig = (coeffs.diffusion)(time, state_x, i);
            let r_a = (coeffs.rate)(time, state_x, i);
            let z: f64 = rng.sample(StandardNormal);
            let x_next = state_x + b * dt + sig * dt.sqrt() * z;
            let r_b = (coeffs.rate)(time + dt, x_next, i);
            let disc_a = log_disc.exp();
            let disc_b = (log_disc - 0.5 * (r_a + r_b) * dt).exp();
            integral += 0.5 * dt * (disc_a + disc_b);
            log_disc -= 0.5 * (r_a + r_b) * dt;
            state_x = x_next;
            time += dt;
        }
        moments.push(integral);
    }
    (moments.mean(), moments.stderr())
}

/// Extrema of M_r for a state-dependent rate, estimated pointwise by
/// [`discounted_time_factor_mc`] on the (coarse) probe grid; the upper
/// extremum is inflated and the lower deflated by three standard errors, so
/// the resulting bounds stay conservative.
#[allow(clippy::too_many_arguments)]
pub fn m_r_scalars_mc(
    q: &GeneratorMatrix,
    coeffs: &GeneralCoefficients,
    grid: &TruncationGrid,
    horizon: f64,
    step: f64,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    grid.validate()?;
    let p = q.regimes();
    let xs = grid.x_points();
    let ts = grid.t_points(horizon);
    let mut sup_plus = 0.0_f64;
    let mut inf_minus = 0.0_f64;
    for &t in &ts {
        for &x in &xs {
            // One factor estimate per destination regime, shared across rows.
            let factors: Vec<(f64, f64)> = (0..p)
                .map(|jz| {
                    discounted_time_factor_mc(
                        coeffs,
                        t,
                        x,
                        RegimeIndex::from_zero_based(jz),
                        horizon,
                        step,
                        n_paths,
                        seed ^ (jz as u64).wrapping_mul(0x9e3779b97f4a7c15),
                    )
                })
                .collect();
            for iz in 0..p {
                let i = RegimeIndex::from_zero_based(iz);
                let mut value = 0.0;
                let mut noise = 0.0;
                for (jz, &(mean, stderr)) in factors.iter().enumerate() {
                    let rate = q.entry(i, RegimeIndex::from_zero_based(jz), x);
                    value += rate * mean;
                    noise += (rate * stderr).abs();
                }
                sup_plus = sup_plus.max(value + 3.0 * noise);
                inf_minus = inf_minus.min(value - 3.0 * noise);
            }
        }
    }
    Ok((sup_plus, inf_minus.min(0.0)))
}

/// Computes all bound scalars for iterations 0..=m_max from an iterate
/// family over the grid; rates must be state-independent (per regime).
pub fn compute_bound_scalars(
    iterates: &(dyn Fn(usize, f64, f64, RegimeIndex) -> f64 + Sync),
    m_max: usize,
    q: &GeneratorMatrix,
    rates: &[f64],
    grid: &TruncationGrid,
    horizon: f64,
) -> Result<BoundScalars> {
    let mut n_upper = Vec::with_capacity(m_max + 1);
    let mut n_lower = Vec::with_capacity(m_max + 1);
    for m in 0..=m_max {
        let field =
            |t: f64, x: f64, i: RegimeIndex| bound_function_n(m, t, x, i, &iterates, q);
        let (sup, inf) = essential_extrema(&field, grid, q.regimes(), horizon)?;
        n_upper.push(sup);
        n_lower.push(inf);
    }
    let (m_upper, m_lower) = m_r_scalars(q, rates, grid, horizon)?;
    Ok(BoundScalars {
        n_upper,
        n_lower,
        m_upper,
        m_lower,
        grid: *grid,
    })
}

/// Hard bounds around the iterate value f_m at one point, using the
/// closed-form annuity of the (state-independent) regime rate:
///
/// U = f + N_U / (1 - M_U) * annuity,  L = f + N_L / (1 - M_L) * annuity.
///
/// Fails with `SandwichUnavailable` when M_U >= 1.
pub fn hard_bounds(
    f_m_value: f64,
    m: usize,
    scalars: &BoundScalars,
    rate_i: f64,
    t: f64,
    horizon: f64,
) -> Result<(f64, f64)> {
    if scalars.m_upper >= 1.0 {
        return Err(Error::SandwichUnavailable {
            m_upper: scalars.m_upper,
        });
    }
    let factor = annuity(rate_i, horizon - t);
    hard_bounds_with_factor(f_m_value, m, scalars, factor)
}

/// As [`hard_bounds`] with a caller-supplied discounted-time factor (for
/// state-dependent rates, typically a Monte Carlo estimate inflated by its
/// error in the conservative direction).
pub fn hard_bounds_with_factor(
    f_m_value: f64,
    m: usize,
    scalars: &BoundScalars,
    factor: f64,
) -> Result<(f64, f64)> {
    if scalars.m_upper >= 1.0 {
        return Err(Error::SandwichUnavailable {
            m_upper: scalars.m_upper,
        });
    }
    debug_assert!(m < scalars.n_upper.len());
    let upper = f_m_value + scalars.n_upper[m] / (1.0 - scalars.m_upper) * factor;
    let lower = f_m_value + scalars.n_lower[m] / (1.0 - scalars.m_lower) * factor;
    Ok((lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GbmRegimeModel;

    fn regime(v: usize) -> RegimeIndex {
        RegimeIndex::from_zero_based(v - 1)
    }

    #[test]
    fn annuity_reference_values() {
        assert_eq!(annuity(0.0, 1.0), 1.0);
        assert_eq!(annuity(0.05, 0.0), 0.0);
        assert!((annuity(0.05, 1.0) - 0.9754115099857198).abs() < 1e-7);
        assert!((annuity(0.10, 1.0) - 0.9516258196404043).abs() < 1e-12);
        // continuity at the removable singularity
        assert!((annuity(1e-13, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn essential_extrema_clamp_signs() {
        let grid = TruncationGrid {
            x_lo: 0.5,
            x_hi: 2.0,
            n_x: 11,
            n_t: 3,
        };
        let minus = |_: f64, _: f64, _: RegimeIndex| -5.0;
        let plus = |_: f64, _: f64, _: RegimeIndex| 5.0;
        assert_eq!(essential_extrema(&minus, &grid, 2, 1.0).unwrap(), (0.0, -5.0));
        assert_eq!(essential_extrema(&plus, &grid, 2, 1.0).unwrap(), (5.0, 0.0));
    }

    #[test]
    fn essential_extrema_converge_under_refinement() {
        let field = |_: f64, x: f64, _: RegimeIndex| x.sin();
        let coarse = TruncationGrid {
            x_lo: 1e-3,
            x_hi: 2.0 * std::f64::consts::PI,
            n_x: 501,
            n_t: 2,
        };
        let fine = TruncationGrid { n_x: 5001, ..coarse };
        let (sup_c, inf_c) = essential_extrema(&field, &coarse, 1, 1.0).unwrap();
        let (sup_f, inf_f) = essential_extrema(&field, &fine, 1, 1.0).unwrap();
        assert!((sup_c - 1.0).abs() < 1e-3 && (inf_c + 1.0).abs() < 1e-3);
        assert!((sup_f - 1.0).abs() < 1e-5 && (inf_f + 1.0).abs() < 1e-5);
        assert!((sup_f - 1.0).abs() <= (sup_c - 1.0).abs());
    }

    #[test]
    fn essential_extrema_reject_nan_fields() {
        let grid = TruncationGrid {
            x_lo: 0.5,
            x_hi: 2.0,
            n_x: 5,
            n_t: 2,
        };
        let field = |_: f64, x: f64, _: RegimeIndex| (x - 1.0).ln();
        assert!(matches!(
            essential_extrema(&field, &grid, 1, 1.0),
            Err(Error::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn bound_field_vanishes_for_zero_generator() {
        let q = GeneratorMatrix::zero(3);
        let f = |_m: usize, _t: f64, x: f64, _i: RegimeIndex| x * x;
        for m in 0..4 {
            assert_eq!(bound_function_n(m, 0.3, 1.2, regime(2), &f, &q), 0.0);
        }
    }

    #[test]
    fn m_r_vanishes_for_regime_independent_rates() {
        let q = GeneratorMatrix::constant(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        for &(t, x) in &[(0.0, 0.5), (0.4, 1.0), (0.9, 3.2)] {
            for i in [regime(1), regime(2)] {
                let v = m_r_function(t, x, i, &q, &[0.05, 0.05], 1.0);
                assert!(v.abs() < 1e-15, "M_r = {v}");
            }
        }
    }

    #[test]
    fn m_r_reference_value_for_distinct_rates() {
        let q = GeneratorMatrix::constant(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let got = m_r_function(0.0, 1.0, regime(1), &q, &[0.05, 0.10], 1.0);
        // -annuity(0.05, 1) + annuity(0.10, 1), frozen
        assert!((got - (-0.02378569034531555)).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn hard_bounds_collapse_without_coupling() {
        let scalars = BoundScalars {
            n_upper: vec![0.0],
            n_lower: vec![0.0],
            m_upper: 0.0,
            m_lower: 0.0,
            grid: TruncationGrid::default_for_strike(1.0),
        };
        let (lo, hi) = hard_bounds(0.37, 0, &scalars, 0.05, 0.0, 1.0).unwrap();
        assert_eq!(lo, 0.37);
        assert_eq!(hi, 0.37);
    }

    #[test]
    fn hard_bounds_match_the_simplified_form_for_flat_rates() {
        // With regime-independent rates M_r = 0 and the full formula must
        // reduce to f +- N * annuity exactly.
        let scalars = BoundScalars {
            n_upper: vec![0.0, 0.02],
            n_lower: vec![0.0, -0.015],
            m_upper: 0.0,
            m_lower: 0.0,
            grid: TruncationGrid::default_for_strike(1.0),
        };
        let f = 0.2;
        let (lo, hi) = hard_bounds(f, 1, &scalars, 0.05, 0.0, 1.0).unwrap();
        let a = annuity(0.05, 1.0);
        assert!((hi - (f + 0.02 * a)).abs() < 1e-12);
        assert!((lo - (f - 0.015 * a)).abs() < 1e-12);
    }

    #[test]
    fn hard_bounds_monotone_in_the_scalars() {
        let grid = TruncationGrid::default_for_strike(1.0);
        let base = BoundScalars {
            n_upper: vec![0.01],
            n_lower: vec![-0.01],
            m_upper: 0.1,
            m_lower: -0.1,
            grid,
        };
        let bigger = BoundScalars {
            n_upper: vec![0.02],
            ..base.clone()
        };
        let (_, hi_base) = hard_bounds(0.5, 0, &base, 0.05, 0.0, 1.0).unwrap();
        let (_, hi_big) = hard_bounds(0.5, 0, &bigger, 0.05, 0.0, 1.0).unwrap();
        assert!(hi_big > hi_base);
    }

    #[test]
    fn hard_bounds_fail_when_the_sandwich_hypothesis_breaks() {
        let scalars = BoundScalars {
            n_upper: vec![0.01],
            n_lower: vec![-0.01],
            m_upper: 1.0,
            m_lower: 0.0,
            grid: TruncationGrid::default_for_strike(1.0),
        };
        assert!(matches!(
            hard_bounds(0.5, 0, &scalars, 0.05, 0.0, 1.0),
            Err(Error::SandwichUnavailable { .. })
        ));
    }

    #[test]
    fn discounted_time_factor_matches_annuity_for_constant_rate() {
        let model = GbmRegimeModel::new(
            GeneratorMatrix::zero(1),
            vec![0.07],
            vec![0.2],
            vec![0.0],
        )
        .unwrap();
        let coeffs = model.coefficients();
        let (mean, stderr) =
            discounted_time_factor_mc(&coeffs, 0.0, 1.0, regime(1), 1.0, 1e-2, 2000, 5);
        let exact = annuity(0.07, 1.0);
        // constant rate: zero variance, only trapezoid bias remains
        assert!(stderr < 1e-12);
        assert!((mean - exact).abs() < 1e-5, "{mean} vs {exact}");
    }
}
