//! Declarative run configuration: a flat, sectioned key-value text format.
//!
//! Lines are `key = value` under `[section]` headers; `#` starts a comment.
//! Coefficient, payoff and boundary fields may be expression strings in the
//! variables `t` and `x` (see [`crate::expr`]); per-regime expression lists
//! are separated by `;`.

use std::collections::BTreeMap;
use std::sync::Arc;

use regime_iter_core::fd::Lattice;
use regime_iter_core::bounds::TruncationGrid;
use regime_iter_core::mc::Scheme;
use regime_iter_core::model::{zero_field, Field};
use regime_iter_core::{
    GbmRegimeModel, GeneralCoefficients, GeneratorMatrix, IterateVariant, Payoff, ProblemSpec,
    QuadratureSpec, RegimeIndex, SpatialDomain,
};

use crate::expr;
use crate::CliError;

/// FNV-1a hash of the raw configuration bytes, recorded in every artifact.
pub fn config_hash(raw: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325_u64;
    for &byte in raw.as_bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Raw sections, keys in file order flattened to last-one-wins.
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
    pub hash: u64,
}

impl RawConfig {
    pub fn parse(raw: &str) -> Result<Self, CliError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (line_no, line) in raw.lines().enumerate() {
            let line = match line.find('#') {
                Some(idx) => &line[..idx],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(format!("line {}: unterminated section header", line_no + 1)))?;
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                config_err(format!("line {}: expected 'key = value', got '{line}'", line_no + 1))
            })?;
            if current.is_empty() {
                return Err(config_err(format!(
                    "line {}: key '{}' appears before any [section]",
                    line_no + 1,
                    key.trim()
                )));
            }
            sections
                .get_mut(&current)
                .unwrap()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self {
            sections,
            hash: config_hash(raw),
        })
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
    }

    fn require(&self, section: &str, key: &str) -> Result<&str, CliError> {
        self.get(section, key)
            .ok_or_else(|| config_err(format!("missing key '{key}' in section [{section}]")))
    }

    fn parse_f64(&self, section: &str, key: &str) -> Result<f64, CliError> {
        let raw = self.require(section, key)?;
        raw.parse::<f64>()
            .map_err(|_| config_err(format!("[{section}] {key}: '{raw}' is not a number")))
    }

    fn parse_f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, CliError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(raw) => raw
                .parse::<f64>()
                .map_err(|_| config_err(format!("[{section}] {key}: '{raw}' is not a number"))),
        }
    }

    fn parse_usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize, CliError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(raw) => raw
                .parse::<usize>()
                .map_err(|_| config_err(format!("[{section}] {key}: '{raw}' is not a count"))),
        }
    }

    fn parse_f64_list(&self, section: &str, key: &str) -> Result<Vec<f64>, CliError> {
        let raw = self.require(section, key)?;
        raw.split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| config_err(format!("[{section}] {key}: '{tok}' is not a number")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    SemiAnalytic,
    FiniteDifference,
    Oracle,
}

/// Which estimator the `oracle` command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Value,
    RestrictedW,
    RestrictedU,
}

/// Everything one run needs, in validated in-memory form.
pub struct RunConfig {
    pub hash: u64,
    pub regimes: usize,
    pub generator: GeneratorMatrix,
    /// Present when the model is the per-regime GBM specialization.
    pub gbm: Option<GbmRegimeModel>,
    /// General coefficient fields (built from the GBM parameters when the
    /// model block is per-regime).
    pub coefficients: GeneralCoefficients,
    pub problem: ProblemSpec,

    pub method: MethodKind,
    pub m_max: usize,
    pub variant: IterateVariant,
    pub quadrature: QuadratureSpec,
    pub lattice: (regime_iter_core::fd::Transform, usize, usize, f64, f64),
    pub n_paths: usize,
    pub scheme: Scheme,
    pub oracle_kind: OracleKind,

    pub bounds_grid: TruncationGrid,

    pub eval_t: f64,
    pub eval_x: Vec<f64>,
    pub eval_regimes: Vec<usize>,

    pub out_dir: String,
    pub float_digits: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        // [model]
        let regimes = raw
            .require("model", "regimes")?
            .parse::<usize>()
            .map_err(|_| config_err("[model] regimes: expected a positive integer"))?;
        if regimes == 0 {
            return Err(config_err("[model] regimes must be at least 1"));
        }
        let generator = parse_generator(raw.require("model", "q")?, regimes)?;

        let per_regime_gbm = raw.get("model", "r").is_some()
            && raw.get("model", "sigma").is_some()
            && raw.get("model", "alpha").is_some();

        // [problem]
        let horizon = raw.parse_f64("problem", "horizon").map_err(|_| {
            config_err("[problem] horizon: missing or invalid (the terminal time T is required)")
        })?;
        let kind = raw.require("problem", "kind")?;
        let payoff = parse_payoff(raw.require("problem", "payoff")?)?;
        let source = match raw.get("problem", "phi") {
            None => zero_field(),
            Some(src) => expression_field("problem", "phi", src)?,
        };
        let problem = match kind {
            "initial_value" => {
                let domain = parse_domain(raw.require("problem", "domain")?)?;
                ProblemSpec::initial_value(horizon, domain, payoff.clone(), source)
                    .map_err(|e| config_err(format!("[problem]: {e}")))?
            }
            "initial_boundary" => {
                let domain = parse_domain(raw.require("problem", "domain")?)?;
                let SpatialDomain::Interval { lo, hi } = domain else {
                    return Err(config_err(
                        "[problem] domain: initial_boundary requires 'interval <lo> <hi>'",
                    ));
                };
                let psi = expression_field("problem", "psi", raw.require("problem", "psi")?)?;
                ProblemSpec::initial_boundary(horizon, lo, hi, payoff.clone(), source, psi, regimes)
                    .map_err(|e| config_err(format!("[problem]: {e}")))?
            }
            other => {
                return Err(config_err(format!(
                    "[problem] kind: '{other}' is not one of initial_value | initial_boundary"
                )))
            }
        };

        // model coefficients
        let (gbm, coefficients) = if per_regime_gbm {
            let r = raw.parse_f64_list("model", "r")?;
            let sigma = raw.parse_f64_list("model", "sigma")?;
            let alpha = raw.parse_f64_list("model", "alpha")?;
            let generator_copy = parse_generator(raw.require("model", "q")?, regimes)?;
            let model = GbmRegimeModel::new(generator_copy, r, sigma, alpha)
                .map_err(|e| config_err(format!("[model]: {e}")))?;
            let coefficients = model.coefficients();
            (Some(model), coefficients)
        } else {
            let drift = expression_field_list("model", "drift", raw.require("model", "drift")?, regimes)?;
            let diffusion =
                expression_field_list("model", "diffusion", raw.require("model", "diffusion")?, regimes)?;
            let rate = expression_field_list("model", "rate", raw.require("model", "rate")?, regimes)?;
            let rate_bound = raw.parse_f64_or("model", "rate_magnitude_bound", 1.0)?;
            (
                None,
                GeneralCoefficients {
                    drift,
                    diffusion,
                    rate,
                    source: zero_field(),
                    rate_magnitude_bound: rate_bound,
                },
            )
        };

        // [method]
        let method = match raw.get("method", "type").unwrap_or("semianalytic") {
            "semianalytic" => MethodKind::SemiAnalytic,
            "fd" => MethodKind::FiniteDifference,
            "oracle" => MethodKind::Oracle,
            other => {
                return Err(config_err(format!(
                    "[method] type: '{other}' is not one of semianalytic | fd | oracle"
                )))
            }
        };
        let m_max = raw.parse_usize_or("method", "m_max", 3)?;
        let variant = match raw.get("method", "variant").unwrap_or("w") {
            "w" => IterateVariant::W,
            "u" => IterateVariant::U,
            other => {
                return Err(config_err(format!(
                    "[method] variant: '{other}' is not one of w | u"
                )))
            }
        };
        let quadrature = QuadratureSpec {
            hermite_nodes: raw.parse_usize_or("method", "hermite_nodes", 64)?,
            legendre_nodes: raw.parse_usize_or("method", "legendre_nodes", 48)?,
            path_samples: raw.parse_usize_or("method", "path_samples", 100_000)?,
        };
        quadrature
            .validate()
            .map_err(|e| config_err(format!("[method]: {e}")))?;
        let lattice = parse_lattice(raw.get("method", "lattice").unwrap_or("log 401 400 0.05 20.0"))?;
        let n_paths = raw.parse_usize_or("method", "n_paths", 1_000_000)?;
        let scheme = parse_scheme(raw.get("method", "scheme").unwrap_or("exact"))?;
        let oracle_kind = match raw.get("method", "estimator").unwrap_or("v") {
            "v" => OracleKind::Value,
            "w" => OracleKind::RestrictedW,
            "u" => OracleKind::RestrictedU,
            other => {
                return Err(config_err(format!(
                    "[method] estimator: '{other}' is not one of v | w | u"
                )))
            }
        };

        // [bounds]
        let default_grid = match payoff {
            Payoff::Call { strike } => TruncationGrid::default_for_strike(strike),
            _ => TruncationGrid::default_for_strike(1.0),
        };
        let bounds_grid = TruncationGrid {
            x_lo: raw.parse_f64_or("bounds", "x_lo", default_grid.x_lo)?,
            x_hi: raw.parse_f64_or("bounds", "x_hi", default_grid.x_hi)?,
            n_x: raw.parse_usize_or("bounds", "n_x", default_grid.n_x)?,
            n_t: raw.parse_usize_or("bounds", "n_t", default_grid.n_t)?,
        };
        bounds_grid
            .validate()
            .map_err(|e| config_err(format!("[bounds]: {e}")))?;

        // [eval]
        let eval_t = raw.parse_f64_or("eval", "t", 0.0)?;
        let eval_x = match raw.get("eval", "x") {
            None => vec![1.0],
            Some(_) => raw.parse_f64_list("eval", "x")?,
        };
        let eval_regimes = match raw.get("eval", "regimes") {
            None => (1..=regimes).collect(),
            Some(src) => src
                .split_whitespace()
                .map(|tok| {
                    let idx = tok.parse::<usize>().map_err(|_| {
                        config_err(format!("[eval] regimes: '{tok}' is not a regime index"))
                    })?;
                    RegimeIndex::new(idx, regimes)
                        .map_err(|e| config_err(format!("[eval] regimes: {e}")))?;
                    Ok(idx)
                })
                .collect::<Result<Vec<_>, CliError>>()?,
        };

        // [output], [run]
        let out_dir = raw.get("output", "dir").unwrap_or("out").to_string();
        let float_digits = raw.parse_usize_or("output", "float_digits", 17)?;
        if !(2..=17).contains(&float_digits) {
            return Err(config_err("[output] float_digits must lie in 2..=17"));
        }
        let seed = raw
            .require("run", "seed")
            .map_err(|_| config_err("missing key 'seed' in section [run] (mandatory for any run touching Monte Carlo)"))?
            .parse::<u64>()
            .map_err(|_| config_err("[run] seed: expected an unsigned 64-bit integer"))?;

        Ok(Self {
            hash: raw.hash,
            regimes,
            generator,
            gbm,
            coefficients,
            problem,
            method,
            m_max,
            variant,
            quadrature,
            lattice,
            n_paths,
            scheme,
            oracle_kind,
            bounds_grid,
            eval_t,
            eval_x,
            eval_regimes,
            out_dir,
            float_digits,
            seed,
        })
    }

    pub fn build_lattice(&self) -> Result<Lattice, CliError> {
        let (transform, n_x, n_t, x_lo, x_hi) = self.lattice;
        let horizon = self.problem.horizon;
        match transform {
            regime_iter_core::fd::Transform::Log => Lattice::log(x_lo, x_hi, n_x, n_t, horizon),
            regime_iter_core::fd::Transform::Identity => {
                Lattice::uniform(x_lo, x_hi, n_x, n_t, horizon)
            }
        }
        .map_err(|e| CliError::Config(format!("[method] lattice: {e}")))
    }

    /// For boundary problems, the lattice must coincide with the domain.
    pub fn build_problem_lattice(&self) -> Result<Lattice, CliError> {
        if let SpatialDomain::Interval { lo, hi } = self.problem.domain {
            let (_, n_x, n_t, _, _) = self.lattice;
            return Lattice::uniform(lo, hi, n_x, n_t, self.problem.horizon)
                .map_err(|e| CliError::Config(format!("[method] lattice: {e}")));
        }
        self.build_lattice()
    }
}

fn parse_generator(src: &str, regimes: usize) -> Result<GeneratorMatrix, CliError> {
    let rows: Vec<Vec<f64>> = src
        .split(';')
        .map(|row| {
            row.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| config_err(format!("[model] q: '{tok}' is not a number")))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    if rows.len() != regimes || rows.iter().any(|r| r.len() != regimes) {
        return Err(config_err(format!(
            "[model] q: expected a {regimes} x {regimes} matrix with rows separated by ';'"
        )));
    }
    GeneratorMatrix::constant(rows).map_err(|e| config_err(format!("[model] q: {e}")))
}

fn parse_payoff(src: &str) -> Result<Payoff, CliError> {
    let mut tokens = src.split_whitespace();
    match tokens.next() {
        Some("call") => {
            let strike = tokens
                .next()
                .ok_or_else(|| config_err("[problem] payoff: 'call' needs a strike"))?
                .parse::<f64>()
                .map_err(|_| config_err("[problem] payoff: invalid strike"))?;
            if strike <= 0.0 {
                return Err(config_err("[problem] payoff: strike must be positive"));
            }
            Ok(Payoff::call(strike))
        }
        Some("expr") => {
            let rest = src.trim_start_matches("expr").trim();
            let compiled = expr::parse(rest)
                .map_err(|e| config_err(format!("[problem] payoff: {e}")))?;
            Ok(Payoff::custom(move |x, _| compiled.eval(0.0, x)))
        }
        _ => Err(config_err(
            "[problem] payoff: expected 'call <strike>' or 'expr <expression in x>'",
        )),
    }
}

fn parse_domain(src: &str) -> Result<SpatialDomain, CliError> {
    let mut tokens = src.split_whitespace();
    match tokens.next() {
        Some("half_line") => Ok(SpatialDomain::HalfLine),
        Some("interval") => {
            let lo = tokens
                .next()
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| config_err("[problem] domain: interval needs '<lo> <hi>'"))?;
            let hi = tokens
                .next()
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| config_err("[problem] domain: interval needs '<lo> <hi>'"))?;
            Ok(SpatialDomain::Interval { lo, hi })
        }
        _ => Err(config_err(
            "[problem] domain: expected 'half_line' or 'interval <lo> <hi>'",
        )),
    }
}

fn parse_lattice(
    src: &str,
) -> Result<(regime_iter_core::fd::Transform, usize, usize, f64, f64), CliError> {
    let tokens: Vec<&str> = src.split_whitespace().collect();
    if tokens.len() != 5 {
        return Err(config_err(
            "[method] lattice: expected '<log|uniform> <n_x> <n_t> <x_lo> <x_hi>'",
        ));
    }
    let transform = match tokens[0] {
        "log" => regime_iter_core::fd::Transform::Log,
        "uniform" => regime_iter_core::fd::Transform::Identity,
        other => {
            return Err(config_err(format!(
                "[method] lattice: transform '{other}' is not log | uniform"
            )))
        }
    };
    let n_x = tokens[1]
        .parse::<usize>()
        .map_err(|_| config_err("[method] lattice: invalid node count"))?;
    let n_t = tokens[2]
        .parse::<usize>()
        .map_err(|_| config_err("[method] lattice: invalid step count"))?;
    let x_lo = tokens[3]
        .parse::<f64>()
        .map_err(|_| config_err("[method] lattice: invalid x_lo"))?;
    let x_hi = tokens[4]
        .parse::<f64>()
        .map_err(|_| config_err("[method] lattice: invalid x_hi"))?;
    Ok((transform, n_x, n_t, x_lo, x_hi))
}

fn parse_scheme(src: &str) -> Result<Scheme, CliError> {
    let tokens: Vec<&str> = src.split_whitespace().collect();
    match tokens.first() {
        Some(&"exact") => {
            let monitor_step = match tokens.get(1) {
                None => None,
                Some(tok) => Some(tok.parse::<f64>().map_err(|_| {
                    config_err("[method] scheme: invalid monitor step after 'exact'")
                })?),
            };
            Ok(Scheme::ExactGbmBridging { monitor_step })
        }
        Some(&"euler") => {
            let step = tokens
                .get(1)
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| config_err("[method] scheme: 'euler' needs a step"))?;
            Ok(Scheme::EulerMaruyama { step })
        }
        _ => Err(config_err(
            "[method] scheme: expected 'exact [monitor_step]' or 'euler <step>'",
        )),
    }
}

fn expression_field(section: &str, key: &str, src: &str) -> Result<Field, CliError> {
    let compiled = expr::parse(src)
        .map_err(|e| config_err(format!("[{section}] {key}: {e}")))?;
    Ok(Arc::new(move |t, x, _| compiled.eval(t, x)))
}

fn expression_field_list(
    section: &str,
    key: &str,
    src: &str,
    regimes: usize,
) -> Result<Field, CliError> {
    let exprs: Vec<expr::Expr> = src
        .split(';')
        .map(|part| expr::parse(part.trim()).map_err(|e| config_err(format!("[{section}] {key}: {e}"))))
        .collect::<Result<_, _>>()?;
    if exprs.len() != regimes {
        return Err(config_err(format!(
            "[{section}] {key}: expected {regimes} ';'-separated expressions, got {}",
            exprs.len()
        )));
    }
    Ok(Arc::new(move |t, x, i: RegimeIndex| {
        exprs[i.zero_based()].eval(t, x)
    }))
}
