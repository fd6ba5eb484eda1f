//! The five run pipelines behind the CLI commands.

use std::path::Path;
use std::sync::Arc;

use regime_iter_core::bounds::{self, BoundScalars};
use regime_iter_core::fd::{self, GridSolution, SystemConfig};
use regime_iter_core::mc::{Dynamics, Oracle, PathEstimate};
use regime_iter_core::model::validate_generator;
use regime_iter_core::semianalytic::SemiAnalytic;
use regime_iter_core::{IterateVariant, ProblemKind, RegimeIndex};

use crate::config::{MethodKind, OracleKind, RunConfig};
use crate::csvout::CsvWriter;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Solve,
    Bounds,
    Oracle,
    Report,
}

impl Command {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "validate" => Some(Self::Validate),
            "solve" => Some(Self::Solve),
            "bounds" => Some(Self::Bounds),
            "oracle" => Some(Self::Oracle),
            "report" => Some(Self::Report),
            _ => None,
        }
    }
}

pub fn run_command(command: Command, cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    match command {
        Command::Validate => validate(cfg, out_dir),
        Command::Solve => solve(cfg, out_dir),
        Command::Bounds => bounds_pipeline(cfg, out_dir),
        Command::Oracle => oracle_pipeline(cfg, out_dir),
        Command::Report => report(cfg, out_dir),
    }
}

fn metadata(cfg: &RunConfig) -> String {
    let (transform, n_x, n_t, x_lo, x_hi) = cfg.lattice;
    format!(
        "config_hash=0x{:016x} seed={} truncation=[{},{}]x{}x{} lattice={:?}[{},{}]x{}x{}",
        cfg.hash,
        cfg.seed,
        cfg.bounds_grid.x_lo,
        cfg.bounds_grid.x_hi,
        cfg.bounds_grid.n_x,
        cfg.bounds_grid.n_t,
        transform,
        x_lo,
        x_hi,
        n_x,
        n_t,
    )
}

fn engine(cfg: &RunConfig) -> Result<SemiAnalytic<'_>, CliError> {
    let model = cfg.gbm.as_ref().ok_or_else(|| {
        CliError::Config(
            "[model]: this pipeline needs the per-regime GBM form (keys r, sigma, alpha)"
                .to_string(),
        )
    })?;
    SemiAnalytic::new(
        model,
        cfg.problem.payoff.clone(),
        cfg.problem.horizon,
        cfg.quadrature,
    )
    .map_err(CliError::from)
}

fn fd_iterates(cfg: &RunConfig, variant: IterateVariant) -> Result<Vec<GridSolution>, CliError> {
    let lattice = Arc::new(cfg.build_problem_lattice()?);
    fd::iterate_system(
        &cfg.problem,
        &cfg.coefficients,
        &cfg.generator,
        cfg.m_max,
        lattice,
        variant,
        SystemConfig::default(),
    )
    .map_err(CliError::from)
}

/// Deterministic per-(m, regime) derived seed for sampled iterate values.
fn derived_seed(seed: u64, m: usize, regime: usize) -> u64 {
    seed ^ ((m as u64) << 32 | regime as u64).wrapping_mul(0x9e3779b97f4a7c15)
}

fn validate(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let probes = cfg.bounds_grid.x_points();
    let report = validate_generator(&cfg.generator, &probes);
    let text = report.to_string();
    println!("{text}");
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    std::fs::write(out_dir.join("validation.txt"), format!("{}\n{text}\n", metadata(cfg)))
        .map_err(|e| CliError::Runtime(format!("cannot write validation report: {e}")))?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "[model] q: the generator violates the q-property ({} violation(s))",
            report.violations().len()
        )))
    }
}

/// Iterate values for one regime over an x-grid at one time, by the method
/// selected in the configuration. Returns (values, stderr) per iteration.
#[allow(clippy::type_complexity)]
fn iterate_curves(
    cfg: &RunConfig,
    fd_solutions: Option<&[GridSolution]>,
    xs: &[f64],
    t: f64,
    i: RegimeIndex,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), CliError> {
    let mut values = Vec::with_capacity(cfg.m_max + 1);
    let mut errors = Vec::with_capacity(cfg.m_max + 1);
    match cfg.method {
        MethodKind::FiniteDifference => {
            let solutions = fd_solutions.expect("finite-difference solutions prepared");
            for solution in solutions.iter().take(cfg.m_max + 1) {
                let row: Vec<f64> = xs
                    .iter()
                    .map(|&x| solution.evaluate(t, x, i))
                    .collect::<Result<_, _>>()
                    .map_err(CliError::from)?;
                values.push(row);
                errors.push(vec![0.0; xs.len()]);
            }
        }
        MethodKind::SemiAnalytic | MethodKind::Oracle => {
            let eng = engine(cfg)?;
            for m in 0..=cfg.m_max {
                if m <= 2 {
                    let row: Vec<f64> = xs
                        .iter()
                        .map(|&x| eng.iterate(m, t, x, i, cfg.variant, cfg.seed).map(|v| v.0))
                        .collect::<Result<_, _>>()
                        .map_err(CliError::from)?;
                    values.push(row);
                    errors.push(vec![0.0; xs.len()]);
                } else {
                    let seed = derived_seed(cfg.seed, m, i.get());
                    let pairs = eng
                        .sampled_grid(m, t, xs, i, cfg.variant, seed)
                        .map_err(CliError::from)?;
                    values.push(pairs.iter().map(|p| p.0).collect());
                    errors.push(pairs.iter().map(|p| p.1).collect());
                }
            }
        }
    }
    Ok((values, errors))
}

fn solve(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    match cfg.method {
        MethodKind::Oracle => Err(CliError::Config(
            "[method] type: 'oracle' belongs to the oracle command; solve needs semianalytic | fd"
                .to_string(),
        )),
        MethodKind::FiniteDifference => {
            let solutions = fd_iterates(cfg, cfg.variant)?;
            let lattice = solutions[0].lattice().clone();
            for (m, solution) in solutions.iter().enumerate() {
                for &iz in &cfg.eval_regimes {
                    let i = RegimeIndex::new(iz, cfg.regimes).map_err(CliError::from)?;
                    let path = out_dir.join(format!("grid_m{m}_regime{iz}.csv"));
                    let mut csv = CsvWriter::create(
                        &path,
                        &metadata(cfg),
                        &["t", "x", "value"],
                        cfg.float_digits,
                    )?;
                    for level in 0..=lattice.n_t() {
                        let t = lattice.time_at(level);
                        for (node, &x) in lattice.nodes().iter().enumerate() {
                            csv.row_floats(&[t, x, solution.node_value(i, level, node)])?;
                        }
                    }
                    csv.finish()?;
                }
            }
            Ok(())
        }
        MethodKind::SemiAnalytic => {
            let xs = cfg.bounds_grid.x_points();
            for &iz in &cfg.eval_regimes {
                let i = RegimeIndex::new(iz, cfg.regimes).map_err(CliError::from)?;
                let (values, errors) = iterate_curves(cfg, None, &xs, cfg.eval_t, i)?;
                let mut header: Vec<String> = vec!["x".to_string()];
                for m in 0..=cfg.m_max {
                    header.push(format!("m{m}"));
                    if m >= 3 {
                        header.push(format!("m{m}_stderr"));
                    }
                }
                let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
                let path = out_dir.join(format!("iterates_regime{iz}.csv"));
                let mut csv =
                    CsvWriter::create(&path, &metadata(cfg), &header_refs, cfg.float_digits)?;
                for (k, &x) in xs.iter().enumerate() {
                    let mut row = vec![x];
                    for m in 0..=cfg.m_max {
                        row.push(values[m][k]);
                        if m >= 3 {
                            row.push(errors[m][k]);
                        }
                    }
                    csv.row_floats(&row)?;
                }
                csv.finish()?;
            }
            Ok(())
        }
    }
}

fn compute_scalars(cfg: &RunConfig) -> Result<(BoundScalars, Vec<GridSolution>), CliError> {
    let model = cfg.gbm.as_ref().ok_or_else(|| {
        CliError::Config(
            "[model]: the bound pipeline needs per-regime rates (keys r, sigma, alpha)".to_string(),
        )
    })?;
    // The plain family backs the published bound scalars.
    let solutions = fd_iterates(cfg, IterateVariant::W)?;
    let family = |m: usize, t: f64, x: f64, i: RegimeIndex| {
        solutions[m].evaluate(t, x, i).unwrap_or(f64::NAN)
    };
    let scalars = bounds::compute_bound_scalars(
        &family,
        cfg.m_max,
        &cfg.generator,
        model.rates(),
        &cfg.bounds_grid,
        cfg.problem.horizon,
    )
    .map_err(CliError::from)?;
    Ok((scalars, solutions))
}

fn write_scalars(cfg: &RunConfig, scalars: &BoundScalars, out_dir: &Path) -> Result<(), CliError> {
    let path = out_dir.join("bound_scalars.csv");
    let mut csv = CsvWriter::create(
        &path,
        &metadata(cfg),
        &["m", "n_lower", "n_upper", "m_lower", "m_upper"],
        cfg.float_digits,
    )?;
    for m in 0..=scalars.max_iteration() {
        csv.row(&[
            m.to_string(),
            csv.format_float(scalars.n_lower[m]),
            csv.format_float(scalars.n_upper[m]),
            csv.format_float(scalars.m_lower),
            csv.format_float(scalars.m_upper),
        ])?;
    }
    csv.finish()
}

fn bounds_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let model = cfg.gbm.as_ref().ok_or_else(|| {
        CliError::Config(
            "[model]: the bound pipeline needs per-regime rates (keys r, sigma, alpha)".to_string(),
        )
    })?;
    let (scalars, solutions) = compute_scalars(cfg)?;
    write_scalars(cfg, &scalars, out_dir)?;

    let fd_ref = if cfg.method == MethodKind::FiniteDifference {
        Some(&solutions[..])
    } else {
        None
    };
    let path = out_dir.join("bound_points.csv");
    let mut csv = CsvWriter::create(
        &path,
        &metadata(cfg),
        &["t", "x", "regime", "m", "value", "stderr", "lower", "upper"],
        cfg.float_digits,
    )?;
    for &iz in &cfg.eval_regimes {
        let i = RegimeIndex::new(iz, cfg.regimes).map_err(CliError::from)?;
        let (values, errors) = iterate_curves(cfg, fd_ref, &cfg.eval_x, cfg.eval_t, i)?;
        for (k, &x) in cfg.eval_x.iter().enumerate() {
            for m in 0..=cfg.m_max {
                let (lower, upper) = bounds::hard_bounds(
                    values[m][k],
                    m,
                    &scalars,
                    model.rate(i),
                    cfg.eval_t,
                    cfg.problem.horizon,
                )
                .map_err(CliError::from)?;
                csv.row(&[
                    csv.format_float(cfg.eval_t),
                    csv.format_float(x),
                    iz.to_string(),
                    m.to_string(),
                    csv.format_float(values[m][k]),
                    csv.format_float(errors[m][k]),
                    csv.format_float(lower),
                    csv.format_float(upper),
                ])?;
            }
        }
    }
    csv.finish()
}

fn oracle_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let dynamics = match &cfg.gbm {
        Some(model) => Dynamics::Gbm(model),
        None => Dynamics::General {
            coefficients: &cfg.coefficients,
            generator: &cfg.generator,
        },
    };
    let oracle = Oracle::new(&cfg.problem, dynamics, cfg.scheme).map_err(CliError::from)?;
    let eng = match cfg.oracle_kind {
        OracleKind::RestrictedW => Some(engine(cfg)?),
        _ => None,
    };

    let path = out_dir.join("oracle.csv");
    let mut csv = CsvWriter::create(
        &path,
        &metadata(cfg),
        &["t", "x", "regime", "estimator", "m", "mean", "stderr", "n_paths", "seed"],
        cfg.float_digits,
    )?;
    for &iz in &cfg.eval_regimes {
        let i = RegimeIndex::new(iz, cfg.regimes).map_err(CliError::from)?;
        for &x in &cfg.eval_x {
            let (estimator, m_label, est): (&str, String, PathEstimate) = match cfg.oracle_kind {
                OracleKind::Value => {
                    let est = if cfg.problem.kind == ProblemKind::InitialBoundary {
                        oracle.value_with_exit(cfg.eval_t, x, i, cfg.n_paths, cfg.seed)
                    } else {
                        oracle.value(cfg.eval_t, x, i, cfg.n_paths, cfg.seed)
                    }
                    .map_err(CliError::from)?;
                    ("v", String::new(), est)
                }
                OracleKind::RestrictedU => {
                    let est = oracle
                        .restricted_u(cfg.m_max, cfg.eval_t, x, i, cfg.n_paths, cfg.seed)
                        .map_err(CliError::from)?;
                    ("u", cfg.m_max.to_string(), est)
                }
                OracleKind::RestrictedW => {
                    let eng = eng.as_ref().expect("engine prepared for restricted_w");
                    let w0_eval = |t: f64, x: f64, i: RegimeIndex| {
                        eng.w0(t, x, i).unwrap_or(f64::NAN)
                    };
                    let est = oracle
                        .restricted_w(cfg.m_max, &w0_eval, cfg.eval_t, x, i, cfg.n_paths, cfg.seed)
                        .map_err(CliError::from)?;
                    ("w", cfg.m_max.to_string(), est)
                }
            };
            csv.row(&[
                csv.format_float(cfg.eval_t),
                csv.format_float(x),
                iz.to_string(),
                estimator.to_string(),
                m_label,
                csv.format_float(est.mean),
                csv.format_float(est.stderr),
                est.n_paths.to_string(),
                est.seed.to_string(),
            ])?;
        }
    }
    csv.finish()
}

fn report(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let model = cfg.gbm.as_ref().ok_or_else(|| {
        CliError::Config(
            "[model]: the report pipeline needs per-regime rates (keys r, sigma, alpha)"
                .to_string(),
        )
    })?;
    let (scalars, solutions) = compute_scalars(cfg)?;
    write_scalars(cfg, &scalars, out_dir)?;

    let fd_ref = if cfg.method == MethodKind::FiniteDifference {
        Some(&solutions[..])
    } else {
        None
    };
    let xs = cfg.bounds_grid.x_points();
    for &iz in &cfg.eval_regimes {
        let i = RegimeIndex::new(iz, cfg.regimes).map_err(CliError::from)?;
        // figure panels live at the initial time
        let (values, _) = iterate_curves(cfg, fd_ref, &xs, 0.0, i)?;
        let mut header: Vec<String> = vec!["x".to_string()];
        for m in 0..=cfg.m_max {
            let tag = match cfg.variant {
                IterateVariant::W => "w",
                IterateVariant::U => "u",
            };
            header.push(format!("{tag}{m}"));
            header.push(format!("lower{m}"));
            header.push(format!("upper{m}"));
        }
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let path = out_dir.join(format!("report_regime{iz}.csv"));
        let mut csv = CsvWriter::create(&path, &metadata(cfg), &header_refs, cfg.float_digits)?;
        for (k, &x) in xs.iter().enumerate() {
            let mut row = vec![x];
            for (m, values_m) in values.iter().enumerate() {
                let (lower, upper) =
                    bounds::hard_bounds(values_m[k], m, &scalars, model.rate(i), 0.0, cfg.problem.horizon)
                        .map_err(CliError::from)?;
                row.push(values_m[k]);
                row.push(lower);
                row.push(upper);
            }
            csv.row_floats(&row)?;
        }
        csv.finish()?;
    }
    Ok(())
}
