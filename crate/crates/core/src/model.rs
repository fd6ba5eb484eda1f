//! Problem description: regimes, generator matrix, coefficients, payoff and
//! boundary data, together with validation of the standing assumptions on
//! the generator (the q-property).

use std::fmt;
use std::sync::Arc;

use crate::{Error, Result};

/// 1-based regime label in {1, ..., p}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegimeIndex(usize);

impl RegimeIndex {
    /// Validated constructor: `value` must lie in {1, ..., regimes}.
    pub fn new(value: usize, regimes: usize) -> Result<Self> {
        if value == 0 || value > regimes {
            return Err(Error::invalid(format!(
                "regime index {value} outside {{1, ..., {regimes}}}"
            )));
        }
        Ok(Self(value))
    }

    pub fn from_zero_based(k: usize) -> Self {
        Self(k + 1)
    }

    /// The 1-based label.
    pub fn get(self) -> usize {
        self.0
    }

    /// 0-based position for array access.
    pub fn zero_based(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for RegimeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Evaluable scalar field on (t, x, regime).
#[allow(clippy::type_complexity)]
pub type Field = Arc<dyn Fn(f64, f64, RegimeIndex) -> f64 + Send + Sync>;

/// Field that is identically zero.
pub fn zero_field() -> Field {
    Arc::new(|_, _, _| 0.0)
}

type GeneratorEval = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

enum GeneratorKind {
    /// Row-major p x p entries.
    Constant(Vec<f64>),
    /// Fills a row-major p x p buffer for a given state.
    StateDependent(GeneratorEval),
}

/// Transition-rate matrix of the regime chain, constant or state-dependent.
///
/// `rate_bound` is the declared supremum over states of the off-diagonal
/// entries. For constant matrices it is computed; for callbacks it is
/// trusted and spot-checked wherever the matrix is evaluated.
pub struct GeneratorMatrix {
    regimes: usize,
    rate_bound: f64,
    kind: GeneratorKind,
}

impl GeneratorMatrix {
    pub fn constant(rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = rows.len();
        if p == 0 {
            return Err(Error::invalid("generator matrix needs at least one regime"));
        }
        let mut entries = Vec::with_capacity(p * p);
        for row in &rows {
            if row.len() != p {
                return Err(Error::invalid(format!(
                    "generator matrix must be square: got a row of length {} for p = {p}",
                    row.len()
                )));
            }
            entries.extend_from_slice(row);
        }
        let mut bound = 0.0_f64;
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    bound = bound.max(entries[i * p + j]);
                }
            }
        }
        Ok(Self {
            regimes: p,
            rate_bound: bound,
            kind: GeneratorKind::Constant(entries),
        })
    }

    /// Zero generator: the chain never switches.
    pub fn zero(regimes: usize) -> Self {
        Self {
            regimes,
            rate_bound: 0.0,
            kind: GeneratorKind::Constant(vec![0.0; regimes * regimes]),
        }
    }

    pub fn state_dependent(
        regimes: usize,
        rate_bound: f64,
        eval: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if regimes == 0 {
            return Err(Error::invalid("generator matrix needs at least one regime"));
        }
        if !rate_bound.is_finite() || rate_bound < 0.0 {
            return Err(Error::invalid(format!(
                "declared rate bound must be finite and nonnegative, got {rate_bound}"
            )));
        }
        Ok(Self {
            regimes,
            rate_bound,
            kind: GeneratorKind::StateDependent(Arc::new(eval)),
        })
    }

    pub fn regimes(&self) -> usize {
        self.regimes
    }

    pub fn rate_bound(&self) -> f64 {
        self.rate_bound
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, GeneratorKind::Constant(_))
    }

    /// Writes the p x p entries at state `x` into `buf` (row-major).
    pub fn entries_at(&self, x: f64, buf: &mut Vec<f64>) {
        let p = self.regimes;
        buf.resize(p * p, 0.0);
        match &self.kind {
            GeneratorKind::Constant(entries) => buf.copy_from_slice(entries),
            GeneratorKind::StateDependent(eval) => eval(x, buf),
        }
    }

    /// Single entry q_ij at state `x`.
    pub fn entry(&self, i: RegimeIndex, j: RegimeIndex, x: f64) -> f64 {
        let p = self.regimes;
        match &self.kind {
            GeneratorKind::Constant(entries) => entries[i.zero_based() * p + j.zero_based()],
            GeneratorKind::StateDependent(eval) => {
                let mut buf = vec![0.0; p * p];
                eval(x, &mut buf);
                buf[i.zero_based() * p + j.zero_based()]
            }
        }
    }

    /// Total exit rate -q_ii at state `x`.
    pub fn exit_rate(&self, i: RegimeIndex, x: f64) -> f64 {
        -self.entry(i, i, x)
    }

    /// Scaled copy gamma * Q of a constant generator.
    pub fn scaled(&self, gamma: f64) -> Result<Self> {
        match &self.kind {
            GeneratorKind::Constant(entries) => Ok(Self {
                regimes: self.regimes,
                rate_bound: self.rate_bound * gamma,
                kind: GeneratorKind::Constant(entries.iter().map(|q| q * gamma).collect()),
            }),
            GeneratorKind::StateDependent(_) => Err(Error::invalid(
                "scaled() is only provided for constant generators",
            )),
        }
    }
}

impl fmt::Debug for GeneratorMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            GeneratorKind::Constant(entries) => f
                .debug_struct("GeneratorMatrix")
                .field("regimes", &self.regimes)
                .field("entries", entries)
                .finish(),
            GeneratorKind::StateDependent(_) => f
                .debug_struct("GeneratorMatrix")
                .field("regimes", &self.regimes)
                .field("rate_bound", &self.rate_bound)
                .field("entries", &"<state-dependent>")
                .finish(),
        }
    }
}

/// Row-sum tolerance used by the q-property check.
pub const ROW_SUM_TOL_CONSTANT: f64 = 1e-12;
/// Looser tolerance for evaluated callbacks (floating-point evaluation noise).
pub const ROW_SUM_TOL_CALLBACK: f64 = 1e-10;

/// Clauses of the q-property that a generator can violate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QPropertyClause {
    /// (a) off-diagonal entries must be nonnegative.
    OffDiagonalSign,
    /// (b) each row must sum to zero.
    RowSum,
    /// (c) every entry must be finite.
    Boundedness,
    /// declared rate bound must dominate every sampled off-diagonal entry.
    RateBound,
}

impl fmt::Display for QPropertyClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QPropertyClause::OffDiagonalSign => write!(f, "(a) off-diagonal sign"),
            QPropertyClause::RowSum => write!(f, "(b) zero row sum"),
            QPropertyClause::Boundedness => write!(f, "(c) boundedness"),
            QPropertyClause::RateBound => write!(f, "declared rate bound"),
        }
    }
}

/// One violated clause with the offending entry and probe state.
#[derive(Debug, Clone)]
pub struct QPropertyViolation {
    pub clause: QPropertyClause,
    /// 1-based row of the offending entry.
    pub row: usize,
    /// 1-based column; equals `row` for row-sum violations.
    pub col: usize,
    /// Probe state for state-dependent generators.
    pub state: Option<f64>,
    pub value: f64,
}

impl fmt::Display for QPropertyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "clause {} violated at entry ({}, {}) with value {:e}",
            self.clause, self.row, self.col, self.value
        )?;
        if let Some(x) = self.state {
            write!(f, " at state x = {x}")?;
        }
        Ok(())
    }
}

/// Outcome of the q-property check; empty iff all clauses hold at all probes.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    violations: Vec<QPropertyViolation>,
    probes_checked: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[QPropertyViolation] {
        &self.violations
    }

    pub fn probes_checked(&self) -> usize {
        self.probes_checked
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            write!(f, "q-property holds ({} probe(s) checked)", self.probes_checked)
        } else {
            writeln!(f, "q-property violated:")?;
            for v in &self.violations {
                writeln!(f, "  {v}")?;
            }
            Ok(())
        }
    }
}

/// Checks the q-property clause by clause.
///
/// Violations are collected, not thrown. A constant matrix is checked once;
/// a state-dependent matrix is checked at each probe state, so the caller
/// must supply a nonempty probe list for callbacks.
pub fn validate_generator(q: &GeneratorMatrix, probe_states: &[f64]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let p = q.regimes();
    let mut buf = Vec::new();

    let mut check_at = |state: Option<f64>, report: &mut ValidationReport| {
        let x = state.unwrap_or(0.0);
        q.entries_at(x, &mut buf);
        let row_tol = if q.is_constant() {
            ROW_SUM_TOL_CONSTANT
        } else {
            ROW_SUM_TOL_CALLBACK
        };
        for i in 0..p {
            let mut row_sum = 0.0;
            for j in 0..p {
                let value = buf[i * p + j];
                row_sum += value;
                if !value.is_finite() {
                    report.violations.push(QPropertyViolation {
                        clause: QPropertyClause::Boundedness,
                        row: i + 1,
                        col: j + 1,
                        state,
                        value,
                    });
                    continue;
                }
                if i != j {
                    if value < 0.0 {
                        report.violations.push(QPropertyViolation {
                            clause: QPropertyClause::OffDiagonalSign,
                            row: i + 1,
                            col: j + 1,
                            state,
                            value,
                        });
                    }
                    if value > q.rate_bound() + ROW_SUM_TOL_CONSTANT {
                        report.violations.push(QPropertyViolation {
                            clause: QPropertyClause::RateBound,
                            row: i + 1,
                            col: j + 1,
                            state,
                            value,
                        });
                    }
                }
            }
            if row_sum.abs() > row_tol {
                report.violations.push(QPropertyViolation {
                    clause: QPropertyClause::RowSum,
                    row: i + 1,
                    col: i + 1,
                    state,
                    value: row_sum,
                });
            }
        }
    };

    if q.is_constant() {
        check_at(None, &mut report);
        report.probes_checked = 1;
    } else {
        debug_assert!(
            !probe_states.is_empty(),
            "state-dependent generators need probe states"
        );
        for &x in probe_states {
            check_at(Some(x), &mut report);
        }
        report.probes_checked = probe_states.len();
    }
    report
}

/// Jump destination distribution out of regime `i` at state `x`.
///
/// Returns a length-p vector whose j-th component is q_ij / (-q_ii), with a
/// zero at `i` itself.
pub fn jump_distribution(q: &GeneratorMatrix, i: RegimeIndex, x: f64) -> Result<Vec<f64>> {
    let p = q.regimes();
    let mut buf = Vec::new();
    q.entries_at(x, &mut buf);
    let exit = -buf[i.zero_based() * p + i.zero_based()];
    if exit == 0.0 {
        return Err(Error::AbsorbingRegime {
            regime: i.get(),
            state: x,
        });
    }
    if exit < 0.0 {
        return Err(Error::invalid(format!(
            "negative exit rate {exit} at regime {i}: generator violates the q-property"
        )));
    }
    let mut probs = vec![0.0; p];
    for j in 0..p {
        if j != i.zero_based() {
            probs[j] = buf[i.zero_based() * p + j] / exit;
        }
    }
    Ok(probs)
}

/// Per-regime geometric Brownian motion parameters with a constant generator.
#[derive(Debug)]
pub struct GbmRegimeModel {
    generator: GeneratorMatrix,
    rate: Vec<f64>,
    vol: Vec<f64>,
    adjustment: Vec<f64>,
}

impl GbmRegimeModel {
    pub fn new(
        generator: GeneratorMatrix,
        rate: Vec<f64>,
        vol: Vec<f64>,
        adjustment: Vec<f64>,
    ) -> Result<Self> {
        let p = generator.regimes();
        if !generator.is_constant() {
            return Err(Error::invalid(
                "GBM regime model requires a constant (state-independent) generator",
            ));
        }
        if rate.len() != p || vol.len() != p || adjustment.len() != p {
            return Err(Error::invalid(format!(
                "expected {p} per-regime parameters, got r: {}, sigma: {}, alpha: {}",
                rate.len(),
                vol.len(),
                adjustment.len()
            )));
        }
        for (k, &s) in vol.iter().enumerate() {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::invalid(format!(
                    "volatility must be positive: sigma_{} = {s}",
                    k + 1
                )));
            }
        }
        Ok(Self {
            generator,
            rate,
            vol,
            adjustment,
        })
    }

    pub fn regimes(&self) -> usize {
        self.generator.regimes()
    }

    pub fn generator(&self) -> &GeneratorMatrix {
        &self.generator
    }

    pub fn rate(&self, i: RegimeIndex) -> f64 {
        self.rate[i.zero_based()]
    }

    pub fn vol(&self, i: RegimeIndex) -> f64 {
        self.vol[i.zero_based()]
    }

    pub fn adjustment(&self, i: RegimeIndex) -> f64 {
        self.adjustment[i.zero_based()]
    }

    pub fn rates(&self) -> &[f64] {
        &self.rate
    }

    /// The same model expressed through general coefficient fields.
    pub fn coefficients(&self) -> GeneralCoefficients {
        let rate = self.rate.clone();
        let vol = self.vol.clone();
        let adjustment = self.adjustment.clone();
        let r_for_bound = self.rate.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        let rate2 = rate.clone();
        GeneralCoefficients {
            drift: Arc::new(move |_t, x, i| {
                (rate[i.zero_based()] - adjustment[i.zero_based()]) * x
            }),
            diffusion: Arc::new(move |_t, x, i| vol[i.zero_based()] * x),
            rate: Arc::new(move |_t, _x, i| rate2[i.zero_based()]),
            source: zero_field(),
            rate_magnitude_bound: r_for_bound,
        }
    }
}

/// General problem coefficients: drift b, diffusion sigma, discount rate r
/// and heat source phi, each a pure function of (t, x, regime).
#[derive(Clone)]
pub struct GeneralCoefficients {
    pub drift: Field,
    pub diffusion: Field,
    pub rate: Field,
    pub source: Field,
    /// Caller-declared bound on |r|.
    pub rate_magnitude_bound: f64,
}

/// Terminal payoff g(x, i). The call payoff is built in because closed forms
/// and asymptotic boundary values exist for it.
#[derive(Clone)]
pub enum Payoff {
    Call { strike: f64 },
    Custom(Arc<dyn Fn(f64, RegimeIndex) -> f64 + Send + Sync>),
}

impl Payoff {
    pub fn call(strike: f64) -> Self {
        Payoff::Call { strike }
    }

    pub fn custom(g: impl Fn(f64, RegimeIndex) -> f64 + Send + Sync + 'static) -> Self {
        Payoff::Custom(Arc::new(g))
    }

    pub fn eval(&self, x: f64, i: RegimeIndex) -> f64 {
        match self {
            Payoff::Call { strike } => (x - strike).max(0.0),
            Payoff::Custom(g) => g(x, i),
        }
    }
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payoff::Call { strike } => write!(f, "Call {{ strike: {strike} }}"),
            Payoff::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    InitialValue,
    InitialBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpatialDomain {
    /// (0, +infinity)
    HalfLine,
    /// Bounded open interval (lo, hi) with attainable boundaries.
    Interval { lo: f64, hi: f64 },
}

/// A complete problem statement: horizon, domain, payoff, heat source and,
/// for boundary problems, exit data.
#[derive(Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub horizon: f64,
    pub domain: SpatialDomain,
    pub payoff: Payoff,
    pub source: Field,
    pub boundary: Option<Field>,
}

impl ProblemSpec {
    pub fn initial_value(horizon: f64, domain: SpatialDomain, payoff: Payoff, source: Field) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if let SpatialDomain::Interval { lo, hi } = domain {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "domain interval must satisfy lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(Self {
            kind: ProblemKind::InitialValue,
            horizon,
            domain,
            payoff,
            source,
            boundary: None,
        })
    }

    /// Boundary problems require a bounded interval and exit data compatible
    /// with the payoff at the terminal time.
    pub fn initial_boundary(
        horizon: f64,
        lo: f64,
        hi: f64,
        payoff: Payoff,
        source: Field,
        boundary: Field,
        regimes: usize,
    ) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!(
                "domain interval must satisfy lo < hi, got ({lo}, {hi})"
            )));
        }
        for k in 0..regimes {
            let i = RegimeIndex::from_zero_based(k);
            for x in [lo, hi] {
                let g = payoff.eval(x, i);
                let psi = boundary(horizon, x, i);
                if (g - psi).abs() > 1e-9 * (1.0 + g.abs()) {
                    return Err(Error::invalid(format!(
                        "incompatible data: g({x}, {i}) = {g} but boundary value at the \
                         terminal time is {psi}"
                    )));
                }
            }
        }
        Ok(Self {
            kind: ProblemKind::InitialBoundary,
            horizon,
            domain: SpatialDomain::Interval { lo, hi },
            payoff,
            source,
            boundary: Some(boundary),
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        match self.domain {
            SpatialDomain::HalfLine => x > 0.0,
            SpatialDomain::Interval { lo, hi } => x > lo && x < hi,
        }
    }
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("kind", &self.kind)
            .field("horizon", &self.horizon)
            .field("domain", &self.domain)
            .field("payoff", &self.payoff)
            .finish_non_exhaustive()
    }
}
