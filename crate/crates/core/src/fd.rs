//! Finite-difference backend for the untangled iteration.
//!
//! Each iteration m solves one independent linear parabolic terminal-value
//! problem per regime: the coupling term is frozen as a heat source built
//! from iterate m-1, so the regimes never talk to each other within an
//! iteration. The marching scheme is theta-weighted (Crank-Nicolson by
//! default) with a fully implicit Rannacher start to damp the payoff-kink
//! oscillation, one tridiagonal solve per time level.

use std::sync::Arc;

use rayon::prelude::*;

use crate::model::{
    GeneralCoefficients, GeneratorMatrix, Payoff, ProblemKind, ProblemSpec, RegimeIndex,
};
use crate::semianalytic::IterateVariant;
use crate::{Error, Result};

/// Coordinate in which the lattice is uniform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Log,
}

/// Space-time lattice: uniform nodes in the transformed coordinate and
/// uniform time levels on [0, horizon].
#[derive(Debug, Clone)]
pub struct Lattice {
    transform: Transform,
    /// Physical x at the nodes, strictly increasing.
    nodes: Vec<f64>,
    /// Transformed coordinate at node 0 and spacing.
    xi_lo: f64,
    dxi: f64,
    n_t: usize,
    horizon: f64,
}

impl Lattice {
    /// Log-spaced nodes over [x_lo, x_hi]; requires x_lo > 0.
    pub fn log(x_lo: f64, x_hi: f64, n_x: usize, n_t: usize, horizon: f64) -> Result<Self> {
        if !(x_lo.is_finite() && x_hi.is_finite()) || x_lo <= 0.0 || x_hi <= x_lo {
            return Err(Error::invalid(format!(
                "log lattice needs 0 < x_lo < x_hi, got [{x_lo}, {x_hi}]"
            )));
        }
        Self::build(Transform::Log, x_lo.ln(), x_hi.ln(), n_x, n_t, horizon)
    }

    /// Uniformly spaced nodes over [x_lo, x_hi].
    pub fn uniform(x_lo: f64, x_hi: f64, n_x: usize, n_t: usize, horizon: f64) -> Result<Self> {
        if !(x_lo.is_finite() && x_hi.is_finite()) || x_hi <= x_lo {
            return Err(Error::invalid(format!(
                "lattice needs x_lo < x_hi, got [{x_lo}, {x_hi}]"
            )));
        }
        Self::build(Transform::Identity, x_lo, x_hi, n_x, n_t, horizon)
    }

    fn build(
        transform: Transform,
        xi_lo: f64,
        xi_hi: f64,
        n_x: usize,
        n_t: usize,
        horizon: f64,
    ) -> Result<Self> {
        if n_x < 3 || n_t < 1 {
            return Err(Error::invalid(format!(
                "lattice needs at least 3 nodes and 1 time step, got {n_x} x {n_t}"
            )));
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let dxi = (xi_hi - xi_lo) / (n_x - 1) as f64;
        let nodes = (0..n_x)
            .map(|j| {
                let xi = xi_lo + j as f64 * dxi;
                match transform {
                    Transform::Identity => xi,
                    Transform::Log => xi.exp(),
                }
            })
            .collect();
        Ok(Self {
            transform,
            nodes,
            xi_lo,
            dxi,
            n_t,
            horizon,
        })
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_x(&self) -> usize {
        self.nodes.len()
    }

    /// Number of time steps; the lattice has n_t + 1 levels.
    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_t as f64
    }

    pub fn time_at(&self, level: usize) -> f64 {
        self.horizon * level as f64 / self.n_t as f64
    }

    fn xi_of(&self, x: f64) -> f64 {
        match self.transform {
            Transform::Identity => x,
            Transform::Log => x.ln(),
        }
    }
}

type BoundaryFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Dirichlet data at the two lattice ends as functions of time.
#[derive(Clone)]
pub struct DirichletBoundary {
    pub lo: BoundaryFn,
    pub hi: BoundaryFn,
}

impl DirichletBoundary {
    pub fn constant(lo: f64, hi: f64) -> Self {
        Self {
            lo: Arc::new(move |_| lo),
            hi: Arc::new(move |_| hi),
        }
    }
}

/// The four scalar fields of one regime's linear parabolic operator, all
/// functions of (t, physical x).
pub struct RegimeOperator<'a> {
    pub drift: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    pub diffusion: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    pub potential: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    pub source: &'a (dyn Fn(f64, f64) -> f64 + Sync),
}

/// Rows of the spatial operator A f = mu f_xi + D f_xixi - potential f in
/// the transformed coordinate, plus the source, all at one time level.
struct LevelCoefficients {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    source: Vec<f64>,
}

impl LevelCoefficients {
    fn assemble(op: &RegimeOperator, lattice: &Lattice, t: f64) -> Result<Self> {
        let n = lattice.n_x();
        let h = lattice.dxi;
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut source = vec![0.0; n];
        for j in 0..n {
            let x = lattice.nodes[j];
            let b = (op.drift)(t, x);
            let sig = (op.diffusion)(t, x);
            let pot = (op.potential)(t, x);
            let src = (op.source)(t, x);
            if !(b.is_finite() && sig.is_finite() && pot.is_finite() && src.is_finite()) {
                return Err(Error::non_finite(format!(
                    "operator coefficients at t = {t}, x = {x}"
                )));
            }
            let (mu, dd) = match lattice.transform {
                Transform::Identity => (b, 0.5 * sig * sig),
                Transform::Log => {
                    let s2 = sig * sig / (x * x);
                    (b / x - 0.5 * s2, 0.5 * s2)
                }
            };
            lower[j] = dd / (h * h) - mu / (2.0 * h);
            diag[j] = -2.0 * dd / (h * h) - pot;
            upper[j] = dd / (h * h) + mu / (2.0 * h);
            source[j] = src;
        }
        Ok(Self {
            lower,
            diag,
            upper,
            source,
        })
    }

    /// (A f)_j for an interior node, using the full value row.
    fn apply(&self, values: &[f64], j: usize) -> f64 {
        self.lower[j] * values[j - 1] + self.diag[j] * values[j] + self.upper[j] * values[j + 1]
    }
}

/// Thomas solve of a tridiagonal system; `sub`, `diag`, `sup` and `rhs` are
/// the interior rows. Overwrites `rhs` with the solution.
fn solve_tridiagonal(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &mut [f64],
    scratch: &mut Vec<f64>,
    level: usize,
) -> Result<()> {
    let n = diag.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let mut pivot = diag[0];
    if !pivot.is_finite() || pivot.abs() < 1e-300 {
        return Err(Error::SingularSystem {
            level,
            row: 0,
            pivot,
        });
    }
    scratch[0] = sup[0] / pivot;
    rhs[0] /= pivot;
    for i in 1..n {
        pivot = diag[i] - sub[i] * scratch[i - 1];
        if !pivot.is_finite() || pivot.abs() < 1e-300 {
            return Err(Error::SingularSystem {
                level,
                row: i,
                pivot,
            });
        }
        if i < n - 1 {
            scratch[i] = sup[i] / pivot;
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
    Ok(())
}

/// Backward sweep for one regime: terminal data at the last level, one
/// tridiagonal solve per step. Returns values[level][node] over the full
/// lattice; columns 0 and n-1 carry the Dirichlet data by assignment.
///
/// `theta` = 0.5 is Crank-Nicolson; the first `rannacher_steps` steps from
/// the terminal level run fully implicit regardless.
pub fn solve_single_regime(
    op: &RegimeOperator,
    terminal: &(dyn Fn(f64) -> f64 + Sync),
    boundary: &DirichletBoundary,
    lattice: &Lattice,
    theta: f64,
    rannacher_steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!(
            "theta must lie in [0, 1], got {theta}"
        )));
    }
    let n = lattice.n_x();
    let n_t = lattice.n_t;
    let dt = lattice.dt();

    let mut values = vec![vec![0.0; n]; n_t + 1];
    for j in 0..n {
        let g = terminal(lattice.nodes[j]);
        if !g.is_finite() {
            return Err(Error::non_finite(format!(
                "terminal data at x = {}",
                lattice.nodes[j]
            )));
        }
        values[n_t][j] = g;
    }

    let mut coeff_next = LevelCoefficients::assemble(op, lattice, lattice.time_at(n_t))?;
    let mut sub = vec![0.0; n - 2];
    let mut diag = vec![0.0; n - 2];
    let mut sup = vec![0.0; n - 2];
    let mut rhs = vec![0.0; n - 2];
    let mut scratch = Vec::new();

    for step in 0..n_t {
        let level = n_t - 1 - step;
        let t = lattice.time_at(level);
        let theta_step = if step < rannacher_steps { 1.0 } else { theta };
        let coeff_here = LevelCoefficients::assemble(op, lattice, t)?;

        let lo = (boundary.lo)(t);
        let hi = (boundary.hi)(t);
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::non_finite(format!("boundary data at t = {t}")));
        }

        {
            let next = &values[level + 1];
            for j in 1..n - 1 {
                let explicit = if theta_step < 1.0 {
                    (1.0 - theta_step) * coeff_next.apply(next, j)
                } else {
                    0.0
                };
                let src =
                    theta_step * coeff_here.source[j] + (1.0 - theta_step) * coeff_next.source[j];
                rhs[j - 1] = next[j] + dt * explicit - dt * src;
                sub[j - 1] = -theta_step * dt * coeff_here.lower[j];
                diag[j - 1] = 1.0 - theta_step * dt * coeff_here.diag[j];
                sup[j - 1] = -theta_step * dt * coeff_here.upper[j];
            }
            // Dirichlet values enter the first and last interior rows.
            rhs[0] += theta_step * dt * coeff_here.lower[1] * lo;
            rhs[n - 3] += theta_step * dt * coeff_here.upper[n - 2] * hi;
        }

        solve_tridiagonal(&sub, &diag, &sup, &mut rhs, &mut scratch, level)?;

        let row = &mut values[level];
        row[0] = lo;
        row[n - 1] = hi;
        row[1..n - 1].copy_from_slice(&rhs);
        coeff_next = coeff_here;
    }
    Ok(values)
}

/// One iterate over all regimes on a shared lattice.
#[derive(Clone)]
pub struct GridSolution {
    iteration: usize,
    variant: IterateVariant,
    lattice: Arc<Lattice>,
    /// values[regime][level][node]
    values: Vec<Vec<Vec<f64>>>,
}

impl GridSolution {
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn variant(&self) -> IterateVariant {
        self.variant
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn regimes(&self) -> usize {
        self.values.len()
    }

    pub fn node_value(&self, i: RegimeIndex, level: usize, node: usize) -> f64 {
        self.values[i.zero_based()][level][node]
    }

    /// Piecewise-linear interpolation, linear in physical x within a cell
    /// and linear in t between adjacent levels.
    pub fn evaluate(&self, t: f64, x: f64, i: RegimeIndex) -> Result<f64> {
        let lat = &self.lattice;
        let nodes = lat.nodes();
        let n = nodes.len();
        let eps_t = 1e-12 * lat.horizon;
        if !(t >= -eps_t && t <= lat.horizon + eps_t) || !(x >= nodes[0] && x <= nodes[n - 1]) {
            return Err(Error::OutOfHull { time: t, state: x });
        }
        let grid = &self.values[i.zero_based()];

        let tau = t.clamp(0.0, lat.horizon) / lat.dt();
        let k = (tau.floor() as usize).min(lat.n_t - 1);
        let wt = tau - k as f64;

        let xi = lat.xi_of(x);
        let pos = (xi - lat.xi_lo) / lat.dxi;
        let j = (pos.floor() as usize).min(n - 2);
        let wx = ((x - nodes[j]) / (nodes[j + 1] - nodes[j])).clamp(0.0, 1.0);

        let at = |level: usize| grid[level][j] * (1.0 - wx) + grid[level][j + 1] * wx;
        Ok(at(k) * (1.0 - wt) + at(k + 1) * wt)
    }
}

/// Scheme parameters for the iteration driver.
#[derive(Debug, Clone, Copy)]
pub struct SystemConfig {
    pub theta: f64,
    pub rannacher_steps: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            rannacher_steps: 2,
        }
    }
}

/// Dirichlet data for one regime and iteration: the problem's own exit data
/// for boundary problems, otherwise the payoff's asymptotic value, locally
/// discounted. Artificial-boundary error decays with the distance to the
/// region of interest, so half-line lattices must be generously wide.
fn boundary_for(
    problem: &ProblemSpec,
    coeffs: &GeneralCoefficients,
    q: &GeneratorMatrix,
    lattice: &Lattice,
    i: RegimeIndex,
    survival_weighted: bool,
) -> DirichletBoundary {
    let horizon = problem.horizon;
    let x_lo = lattice.nodes()[0];
    let x_hi = *lattice.nodes().last().unwrap();

    if let (ProblemKind::InitialBoundary, Some(psi)) = (problem.kind, problem.boundary.clone()) {
        let psi_hi = psi.clone();
        return DirichletBoundary {
            lo: Arc::new(move |t| psi(t, x_lo, i)),
            hi: Arc::new(move |t| psi_hi(t, x_hi, i)),
        };
    }

    let q_lo = if survival_weighted { q.entry(i, i, x_lo) } else { 0.0 };
    let q_hi = if survival_weighted { q.entry(i, i, x_hi) } else { 0.0 };
    match problem.payoff {
        Payoff::Call { strike } => {
            let rate = coeffs.rate.clone();
            let drift = coeffs.drift.clone();
            DirichletBoundary {
                lo: Arc::new(|_| 0.0),
                hi: Arc::new(move |t| {
                    let r = rate(t, x_hi, i);
                    let alpha = r - drift(t, x_hi, i) / x_hi;
                    let tail = horizon - t;
                    (x_hi * (-alpha * tail).exp() - strike * (-r * tail).exp())
                        * (q_hi * tail).exp()
                }),
            }
        }
        Payoff::Custom(_) => {
            let g_lo = problem.payoff.eval(x_lo, i);
            let g_hi = problem.payoff.eval(x_hi, i);
            let rate = coeffs.rate.clone();
            let rate_hi = coeffs.rate.clone();
            DirichletBoundary {
                lo: Arc::new(move |t| {
                    g_lo * (-(rate(t, x_lo, i) - q_lo) * (horizon - t)).exp()
                }),
                hi: Arc::new(move |t| {
                    g_hi * (-(rate_hi(t, x_hi, i) - q_hi) * (horizon - t)).exp()
                }),
            }
        }
    }
}

/// Runs the untangled iteration: for m = 0..=m_max, p independent
/// single-regime solves whose source freezes the coupling term at iterate
/// m-1. Returns one grid per iteration.
pub fn iterate_system(
    problem: &ProblemSpec,
    coeffs: &GeneralCoefficients,
    q: &GeneratorMatrix,
    m_max: usize,
    lattice: Arc<Lattice>,
    variant: IterateVariant,
    config: SystemConfig,
) -> Result<Vec<GridSolution>> {
    let p = q.regimes();
    if (lattice.horizon() - problem.horizon).abs() > 1e-12 * problem.horizon {
        return Err(Error::invalid(format!(
            "lattice horizon {} does not match problem horizon {}",
            lattice.horizon(),
            problem.horizon
        )));
    }
    let mut iterates: Vec<GridSolution> = Vec::with_capacity(m_max + 1);

    for m in 0..=m_max {
        let prev = iterates.last();
        let per_regime: Vec<Vec<Vec<f64>>> = (0..p)
            .into_par_iter()
            .map(|iz| {
                let i = RegimeIndex::from_zero_based(iz);
                // Iteration 0 of the plain family keeps the bare rate; the
                // survival-weighted family and all later iterations add the
                // holding potential -q_ii.
                let with_qii = m > 0 || variant == IterateVariant::U;
                let rate = &coeffs.rate;
                let potential = move |t: f64, x: f64| {
                    let r = rate(t, x, i);
                    if with_qii {
                        r - q.entry(i, i, x)
                    } else {
                        r
                    }
                };
                let phi = &coeffs.source;
                let lat = lattice.clone();
                let source = move |t: f64, x: f64| {
                    let mut s = phi(t, x, i);
                    if let Some(prev) = prev {
                        // The solver only queries lattice points; recover the
                        // indices exactly and read the previous iterate.
                        let level = (t / lat.dt()).round() as usize;
                        let node = ((lat.xi_of(x) - lat.xi_lo) / lat.dxi).round() as usize;
                        let mut buf = Vec::new();
                        q.entries_at(x, &mut buf);
                        for jz in 0..p {
                            if jz != iz {
                                s -= buf[iz * p + jz] * prev.values[jz][level][node];
                            }
                        }
                    }
                    s
                };
                let drift = |t: f64, x: f64| (coeffs.drift)(t, x, i);
                let diffusion = |t: f64, x: f64| (coeffs.diffusion)(t, x, i);
                let op = RegimeOperator {
                    drift: &drift,
                    diffusion: &diffusion,
                    potential: &potential,
                    source: &source,
                };
                let terminal = |x: f64| problem.payoff.eval(x, i);
                let boundary = boundary_for(
                    problem,
                    coeffs,
                    q,
                    &lattice,
                    i,
                    m == 0 && variant == IterateVariant::U,
                );
                solve_single_regime(
                    &op,
                    &terminal,
                    &boundary,
                    &lattice,
                    config.theta,
                    config.rannacher_steps,
                )
            })
            .collect::<Result<_>>()?;
        iterates.push(GridSolution {
            iteration: m,
            variant,
            lattice: lattice.clone(),
            values: per_regime,
        });
    }
    Ok(iterates)
}
