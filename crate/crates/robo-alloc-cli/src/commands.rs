//! Implementation of the subcommands.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use robo_alloc::admm_engine::AdmmParams;
use robo_alloc::calibration::{self, Grid, RidgeRegressionData};
use robo_alloc::market_data::{self, ReturnPanel, WeightScheme};
use robo_alloc::mvo_core::{self, MvoInputs, Target};
use robo_alloc::robo_pipeline::{self, Objective, RiskSetting, RoboConfig, RoboParam};
use robo_alloc::views_bl::{self, CovarianceChoice, GradeViews};
use robo_alloc::{SolveReport, SolveStatus};

use crate::error::CliError;
use crate::io::{self, Sink};
use crate::schema::{MomentsFile, MvoProblem, MvoRisk, ObjectiveSpec, ProblemFile, ReportFile, RoboProblem, RoboRisk, ViewsFile};

/// Options shared by every command.
#[derive(Debug, Clone)]
pub struct Globals {
    pub sink: Sink,
    pub pretty: bool,
    pub seed: u64,
    pub tol: Option<f64>,
}

impl Globals {
    /// Writes the machine-readable artifact (unless only the pretty view goes to stdout)
    /// and the human-readable view when requested.
    fn emit(&self, machine: &[u8], human: impl FnOnce() -> String) -> Result<(), CliError> {
        if self.sink.is_file() || !self.pretty {
            self.sink.write(machine)?;
        }
        if self.pretty {
            print!("{}", human());
        }
        Ok(())
    }

    fn admm(&self) -> AdmmParams {
        let mut params = AdmmParams { seed: self.seed, ..AdmmParams::default() };
        if let Some(tol) = self.tol {
            params.eps_primal = tol;
            params.eps_dual = tol;
        }
        params
    }
}

fn pct(v: f64) -> String {
    format!("{:>9.2}%", 100.0 * v)
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::input(format!("cannot format CSV: {e}"));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::input(format!("cannot format CSV: {e}")))
}

fn load_moments(path: &Path) -> Result<(MomentsFile, DVector<f64>, DMatrix<f64>), CliError> {
    let file: MomentsFile = io::read_json(path)?;
    let (mu, sigma) = file.to_matrices()?;
    Ok((file, mu, sigma))
}

fn vector(values: &[f64], n: usize, what: &str) -> Result<DVector<f64>, CliError> {
    if values.len() != n {
        return Err(CliError::input(format!("{what}: {} entries for {n} assets", values.len())));
    }
    Ok(DVector::from_vec(values.to_vec()))
}

// ---------------------------------------------------------------------------

pub fn estimate(g: &Globals, returns: &Path, scheme: &str) -> Result<(), CliError> {
    let scheme: WeightScheme = scheme.parse()?;
    let panel = ReturnPanel::from_csv(io::open(returns)?)?;
    let est = market_data::estimate_moments(&panel, &scheme)?;
    let mut file = MomentsFile::from_matrices(panel.assets().to_vec(), &est.mu, &est.sigma);
    file.scheme = Some(scheme.label());
    file.periods = Some(panel.periods());
    g.emit(&io::to_json(&file)?, || {
        let mut s = format!("{} periods, scheme {}\n{:<16} {:>10} {:>10}\n", panel.periods(), scheme.label(), "asset", "mean", "vol");
        for (i, a) in file.assets.iter().enumerate() {
            let _ = writeln!(s, "{a:<16} {} {}", pct(est.mu[i]), pct(est.sigma[(i, i)].max(0.0).sqrt()));
        }
        s
    })
}

// ---------------------------------------------------------------------------

fn solve_mvo(g: &Globals, inputs: &MvoInputs, problem: &MvoProblem) -> Result<SolveReport, CliError> {
    let cons = problem.constraints.to_constraint_set(inputs.n())?;
    let tol = g.tol.unwrap_or(mvo_core::CALIBRATION_TOL);
    Ok(match problem.risk {
        MvoRisk::Gamma(gamma) => mvo_core::solve_gamma_problem(inputs, gamma, &cons)?,
        MvoRisk::Volatility(v) => mvo_core::calibrate_gamma_with_tol(inputs, Target::Volatility(v), &cons, tol)?.report,
        MvoRisk::ExpectedReturn(m) => mvo_core::calibrate_gamma_with_tol(inputs, Target::ExpectedReturn(m), &cons, tol)?.report,
    })
}

/// Builds the library configuration of a rebalancing problem.
pub fn robo_config(g: &Globals, problem: &RoboProblem, n: usize) -> Result<RoboConfig, CliError> {
    let strategic = vector(&problem.strategic, n, "strategic")?;
    let current = match &problem.current {
        Some(c) => vector(c, n, "current")?,
        None => strategic.clone(),
    };
    let objective = match problem.objective {
        ObjectiveSpec::MeanVariance => Objective::MeanVariance,
        ObjectiveSpec::TrackingError => Objective::TrackingError,
    };
    let risk = match problem.risk {
        RoboRisk::Gamma(gamma) => RiskSetting::Gamma(gamma),
        RoboRisk::TrackingError(te) => RiskSetting::TrackingErrorTarget(te),
    };
    let mut config = RoboConfig::new(strategic, current, objective, risk);
    config.strategic_penalties = problem.strategic_penalties.to_penalties(n, "strategic_penalties")?;
    config.current_penalties = problem.current_penalties.to_penalties(n, "current_penalties")?;
    config.extra = problem.constraints.to_constraint_set(n)?;
    config.admm = g.admm();
    if let Some(max_iter) = problem.max_iter {
        config.admm.max_iter = max_iter;
    }
    config.validate()?;
    Ok(config)
}

pub fn optimize(g: &Globals, moments: &Path, problem: &Path) -> Result<(), CliError> {
    let (file, mu, sigma) = load_moments(moments)?;
    let problem: ProblemFile = io::read_json(problem)?;
    let r = match &problem {
        ProblemFile::Mvo(p) => p.r,
        ProblemFile::Robo(p) => p.r,
    };
    let inputs = MvoInputs::new(mu, sigma, r)?;
    let outcome = match &problem {
        ProblemFile::Mvo(p) => solve_mvo(g, &inputs, p),
        ProblemFile::Robo(p) => robo_config(g, p, inputs.n()).and_then(|c| Ok(robo_pipeline::rebalance(&c, &inputs)?)),
    };
    let report = match outcome {
        Ok(report) => report,
        Err(CliError::Solver(msg)) => {
            // The failure is still documented in the output.
            let out = ReportFile::failure(file.assets.clone(), &msg);
            g.emit(&io::to_json(&out)?, || format!("status: failed ({msg})\n"))?;
            return Err(CliError::Solver(msg));
        }
        Err(e) => return Err(e),
    };
    let out = ReportFile::from_report(file.assets.clone(), &report, inputs.portfolio_return(&report.weights), inputs.volatility(&report.weights));
    g.emit(&io::to_json(&out)?, || {
        let mut s = format!("status: {}\n", report.status);
        if let Some(gamma) = report.gamma {
            let _ = writeln!(s, "gamma: {gamma:.6}");
        }
        let _ = writeln!(s, "expected return: {}\nvolatility:      {}", pct(inputs.portfolio_return(&report.weights)), pct(inputs.volatility(&report.weights)));
        for (a, w) in file.assets.iter().zip(report.weights.iter()) {
            let _ = writeln!(s, "{a:<16} {}", pct(*w));
        }
        s
    })?;
    match report.status {
        SolveStatus::Converged => Ok(()),
        other => Err(CliError::Solver(format!("solver stopped with status {other} after {} iterations", report.iterations))),
    }
}

// ---------------------------------------------------------------------------

pub fn path(g: &Globals, moments: &Path, problem: &Path, param: &str, grid: &str) -> Result<(), CliError> {
    let param = parse_param(param)?;
    let grid: Grid = grid.parse()?;
    let (file, mu, sigma) = load_moments(moments)?;
    let problem = match io::read_json::<ProblemFile>(problem)? {
        ProblemFile::Robo(p) => p,
        ProblemFile::Mvo(_) => return Err(CliError::input("path needs a `robo` problem")),
    };
    let inputs = MvoInputs::new(mu, sigma, problem.r)?;
    let config = robo_config(g, &problem, inputs.n())?;
    let mut table = robo_pipeline::regularization_path(&config, &inputs, param, &grid.values())?;
    table.assets = file.assets.clone();
    let mut bytes = Vec::new();
    table.to_csv(&mut bytes)?;
    g.emit(&bytes, || {
        let mut s = format!("{:>12}", table.param);
        for a in &table.assets {
            let _ = write!(s, " {a:>10}");
        }
        s.push_str("  status\n");
        for (k, rho) in table.grid.iter().enumerate() {
            let _ = write!(s, "{rho:>12.4e}");
            for j in 0..table.assets.len() {
                let _ = write!(s, " {}", pct(table.weights[(k, j)]));
            }
            let _ = writeln!(s, "  {}", table.status[k]);
        }
        s
    })?;
    let failed = table.status.iter().filter(|s| s.as_str() != SolveStatus::Converged.as_str()).count();
    if failed > 0 {
        return Err(CliError::Solver(format!("{failed} path point(s) did not converge")));
    }
    Ok(())
}

fn parse_param(s: &str) -> Result<RoboParam, CliError> {
    [RoboParam::StrategicL1, RoboParam::StrategicL2, RoboParam::CurrentL1, RoboParam::CurrentL2]
        .into_iter()
        .find(|p| p.label() == s)
        .ok_or_else(|| CliError::input(format!("unknown path parameter '{s}' (strategic_l1, strategic_l2, current_l1, current_l2)")))
}

// ---------------------------------------------------------------------------

/// Reads a regression panel with header `y,<regressor...>`.
fn read_regression(path: &Path) -> Result<RidgeRegressionData, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(io::open(path)?);
    let header = rdr.headers().map_err(|e| CliError::input(format!("{}: {e}", path.display())))?.clone();
    if header.len() < 2 {
        return Err(CliError::input(format!("{}: expected a target column followed by regressors", path.display())));
    }
    let k = header.len() - 1;
    let (mut y, mut x) = (Vec::new(), Vec::new());
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::input(format!("{} row {}: {e}", path.display(), line + 2)))?;
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::input(format!("{} row {}: `{field}` is not a number", path.display(), line + 2)))?;
            if j == 0 {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    let t = y.len();
    Ok(RidgeRegressionData::with_identity_penalty(DMatrix::from_row_slice(t, k, &x), DVector::from_vec(y))?)
}

pub fn calibrate(g: &Globals, data: &Path, method: &str, grid: &str, folds: usize) -> Result<(), CliError> {
    let grid: Grid = grid.parse()?;
    let data = read_regression(data)?;
    let values = grid.values();
    let scan = match method {
        "press" => calibration::scan_grid(&values, |rho| calibration::press(&data, rho))?,
        "gcv" => calibration::scan_grid(&values, |rho| calibration::gcv(&data, rho))?,
        "kfold" => calibration::kfold_cv(&data, folds, &values, g.seed)?,
        other => return Err(CliError::input(format!("unknown method '{other}' (press, gcv, kfold)"))),
    };
    let rows: Vec<Vec<String>> = scan
        .grid
        .iter()
        .zip(&scan.errors)
        .enumerate()
        .map(|(i, (rho, err))| vec![rho.to_string(), err.to_string(), u8::from(i == scan.best_index).to_string()])
        .collect();
    let bytes = csv_bytes(&["rho".into(), "error".into(), "best".into()], &rows)?;
    g.emit(&bytes, || {
        let mut s = format!("method {method}: best rho = {:.6e} (error {:.6e})\n", scan.best, scan.errors[scan.best_index]);
        for (rho, err) in scan.grid.iter().zip(&scan.errors) {
            let _ = writeln!(s, "{rho:>12.4e} {err:>14.6e}");
        }
        s
    })
}

// ---------------------------------------------------------------------------

pub fn views(g: &Globals, moments: &Path, views: &Path, moments_out: Option<&Path>) -> Result<(), CliError> {
    let (file, _, sigma) = load_moments(moments)?;
    let spec: ViewsFile = io::read_json(views)?;
    let n = file.n();
    let strategic = vector(&spec.strategic, n, "strategic")?;
    let mut grades = GradeViews::new(spec.scores.clone(), spec.tau);
    if let Some(delta) = spec.delta {
        grades.delta = delta;
    }
    if let Some(count) = spec.grade_count {
        grades.grade_count = count;
    }
    let choice: CovarianceChoice = spec.use_sigma.as_deref().unwrap_or("empirical").parse()?;
    let out = views_bl::grades_to_expected_returns(&strategic, &sigma, spec.r, spec.sharpe, &grades)?;
    let covariance = views_bl::downstream_covariance(&sigma, spec.tau, choice)?;
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| vec![file.assets[i].clone(), out.implied[i].to_string(), out.view[i].to_string(), out.blended[i].to_string()])
        .collect();
    let header = ["asset", "implied", "view", "blended"].map(String::from);
    g.emit(&csv_bytes(&header, &rows)?, || {
        let mut s = format!("{:<16} {:>10} {:>10} {:>10}\n", "asset", "implied", "view", "blended");
        for i in 0..n {
            let _ = writeln!(s, "{:<16} {} {} {}", file.assets[i], pct(out.implied[i]), pct(out.view[i]), pct(out.blended[i]));
        }
        s
    })?;
    if let Some(path) = moments_out {
        let blended = MomentsFile::from_matrices(file.assets.clone(), &out.blended, &covariance);
        io::write_atomic(path, &io::to_json(&blended)?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn stevens(g: &Globals, moments: &Path, gamma: Option<f64>, r: f64) -> Result<(), CliError> {
    let (file, mu, sigma) = load_moments(moments)?;
    let inputs = MvoInputs::new(mu, sigma, r)?;
    let gamma = match gamma {
        Some(gm) => gm,
        None => mvo_core::full_investment_gamma(&inputs)?,
    };
    let report = mvo_core::stevens_decomposition(&inputs, gamma)?;
    let n = inputs.n();
    let mut header: Vec<String> =
        ["asset", "alpha", "r2", "hedge_return", "hedge_vol", "residual_vol", "omega", "standalone_weight", "hedge_weight", "weight"]
            .map(String::from)
            .to_vec();
    header.extend(file.assets.iter().map(|a| format!("beta_{a}")));
    let rows: Vec<Vec<String>> = report
        .assets
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let mut row = vec![
                file.assets[i].clone(),
                h.alpha.to_string(),
                h.r2.to_string(),
                h.mu_hat.to_string(),
                h.sigma_hat.to_string(),
                h.s.to_string(),
                h.omega.to_string(),
                h.y_star.to_string(),
                h.z_star.to_string(),
                h.x_star.to_string(),
            ];
            let mut others = h.beta.iter();
            row.extend((0..n).map(|j| if j == i { String::new() } else { others.next().map_or(String::new(), f64::to_string) }));
            row
        })
        .collect();
    g.emit(&csv_bytes(&header, &rows)?, || {
        let mut s = format!("gamma = {gamma:.6}\n{:<16}", "");
        for label in ["alpha", "R2", "hedge ret", "hedge vol", "resid vol", "omega", "y*", "z*", "x*"] {
            let _ = write!(s, " {label:>10}");
        }
        s.push('\n');
        for (i, h) in report.assets.iter().enumerate() {
            let _ = write!(s, "{:<16}", file.assets[i]);
            for v in [h.alpha, h.r2, h.mu_hat, h.sigma_hat, h.s, h.omega, h.y_star, h.z_star, h.x_star] {
                let _ = write!(s, " {}", pct(v));
            }
            s.push('\n');
        }
        s
    })
}

