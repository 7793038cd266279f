//! The four subcommands.
//!
//! Shared conventions: effective parameters resolve as command-line flags
//! over config-file values over built-in defaults; per-point estimation
//! failures are flagged in a `status` column instead of aborting the run;
//! every output embeds the effective configuration.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::Args;

use tailquant::conditional::{LocalWindow, Sample};
use tailquant::gp::{build_exceedances, gp_fit, gp_quantile, ExceedanceSet, GpFit, GpFitOptions};
use tailquant::kernel::KernelSpec;
use tailquant::pickands::{extrapolate, rp_estimate_from_window, RpConfig, WeightScheme};
use tailquant::selection::{
    cv_bandwidth, select_hk_simultaneous, select_k_separate, yu_jones_bandwidth, SelectionGrid,
};
use tailquant::simulation::{
    reports_to_csv, run_mc, ErrorModel, EstimatorKind, EstimatorSpec, MetricReport, ParamGrid,
    Scenario, SelectionProtocol,
};
use tailquant::Error;

use crate::config::FileConfig;
use crate::data::load_sample;
use crate::output::{config_comment, kv, write_out, Cell, Format, TableDoc};
use crate::{CResult, Failure};

// ---------------------------------------------------------------- shared ---

fn pick<T: Clone>(flag: Option<T>, file: &Option<T>, default: T) -> T {
    flag.or_else(|| file.clone()).unwrap_or(default)
}

fn pick_opt<T: Clone>(flag: Option<T>, file: &Option<T>) -> Option<T> {
    flag.or_else(|| file.clone())
}

fn require<T>(v: Option<T>, flag: &str) -> CResult<T> {
    v.ok_or_else(|| Failure::Config(format!("missing required option --{flag}")))
}

fn cfg_err(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn data_err(e: Error) -> Failure {
    Failure::Data(e.to_string())
}

/// Short machine-readable code for a per-point estimation failure.
fn status_code(e: &Error) -> &'static str {
    match e {
        Error::EmptyWindow => "empty_window",
        Error::DegenerateSpacing { .. } => "degenerate_spacing",
        Error::NonMonotone { .. } => "nonmonotone_spacing",
        Error::InsufficientExceedances { .. } => "insufficient_exceedances",
        Error::LevelOrder { .. } => "level_order",
        Error::SelectionFailed(_) => "selection_failed",
        Error::BadLevel(_) => "bad_level",
        Error::BadBandwidth(_) => "bad_bandwidth",
        _ => "error",
    }
}

fn validate_level(beta: f64, flag: &str) -> CResult<f64> {
    if beta.is_finite() && beta > 0.0 && beta < 1.0 {
        Ok(beta)
    } else {
        Err(Failure::Config(format!("--{flag} must lie strictly in (0,1), got {beta}")))
    }
}

fn parse_weights(name: &str) -> CResult<WeightScheme> {
    match name {
        "rp1" => Ok(WeightScheme::Rp1),
        "rp2" => Ok(WeightScheme::Rp2),
        other => Err(Failure::Config(format!("unknown weight scheme '{other}' (rp1 or rp2)"))),
    }
}

/// Evaluation grid: `lo:hi:count` for an even univariate grid, a comma list
/// of abscissas (one point per value when the design is univariate), or
/// `;`-separated covariate vectors for any dimension.
fn parse_grid_spec(spec: &str, dim: usize) -> CResult<Vec<Vec<f64>>> {
    let num = |s: &str| -> CResult<f64> {
        let t = s.trim();
        t.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Failure::Config(format!("cannot parse '{t}' in --x-grid")))
    };
    if spec.contains(';') {
        let mut points = Vec::new();
        for part in spec.split(';').filter(|p| !p.trim().is_empty()) {
            let point: Vec<f64> = part.split(',').map(num).collect::<CResult<_>>()?;
            if point.len() != dim {
                return Err(Failure::Config(format!(
                    "--x-grid point '{}' has {} coordinates but the design has {dim}",
                    part.trim(),
                    point.len()
                )));
            }
            points.push(point);
        }
        if points.is_empty() {
            return Err(Failure::Config("--x-grid holds no points".into()));
        }
        Ok(points)
    } else if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Failure::Config(format!(
                "--x-grid range must be lo:hi:count, got '{spec}'"
            )));
        }
        if dim != 1 {
            return Err(Failure::Config(
                "range grids apply to univariate designs; give ';'-separated vectors".into(),
            ));
        }
        let lo = num(parts[0])?;
        let hi = num(parts[1])?;
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("bad grid count '{}'", parts[2].trim())))?;
        if count == 0 || (count > 1 && hi <= lo) {
            return Err(Failure::Config(format!("bad grid range '{spec}'")));
        }
        Ok((0..count)
            .map(|i| {
                let t = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
                vec![lo + (hi - lo) * t]
            })
            .collect())
    } else {
        let vals: Vec<f64> = spec
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(num)
            .collect::<CResult<_>>()?;
        if vals.is_empty() {
            return Err(Failure::Config("--x-grid holds no points".into()));
        }
        if dim == 1 {
            Ok(vals.into_iter().map(|v| vec![v]).collect())
        } else if vals.len() == dim {
            Ok(vec![vals])
        } else {
            Err(Failure::Config(format!(
                "--x-grid has {} values but the design has {dim} covariates",
                vals.len()
            )))
        }
    }
}

/// 21 evenly spaced points over the observed covariate range.
fn default_grid(s: &Sample) -> CResult<Vec<Vec<f64>>> {
    if s.dim() != 1 {
        return Err(Failure::Config(
            "multivariate designs need an explicit --x-grid".into(),
        ));
    }
    let sorted = s.sorted_x1();
    let (lo, hi) = (sorted[0], *sorted.last().unwrap());
    if hi <= lo {
        return Err(Failure::Config(
            "the design has no spread; give an explicit --x-grid".into(),
        ));
    }
    Ok((0..21).map(|i| vec![lo + (hi - lo) * i as f64 / 20.0]).collect())
}

fn grid_points(spec: Option<&str>, s: &Sample) -> CResult<Vec<Vec<f64>>> {
    match spec {
        Some(spec) => parse_grid_spec(spec, s.dim()),
        None => default_grid(s),
    }
}

/// How the bandwidth is obtained: fixed by the user, or cross-validated and
/// then adjusted to the working level.
enum Smoothing {
    Fixed(f64),
    Cv { h_cv: f64 },
}

impl Smoothing {
    /// Resolve --h / --select with flags shadowing the config file as a layer:
    /// if either flag is given the flag layer decides, otherwise the file does.
    fn resolve(
        flag_h: Option<f64>,
        flag_select: Option<&str>,
        file: &FileConfig,
        s: &Sample,
        kernel: &KernelSpec,
        h_points: usize,
    ) -> CResult<(Self, Vec<(String, String)>)> {
        let (h, select) = if flag_h.is_some() || flag_select.is_some() {
            (flag_h, flag_select.map(str::to_owned))
        } else {
            (file.h, file.select.clone())
        };
        match (h, select.as_deref()) {
            (Some(_), Some(_)) => Err(Failure::Config(
                "give either --h or --select cv, not both".into(),
            )),
            (Some(h), None) => {
                if h.is_finite() && h > 0.0 {
                    Ok((Smoothing::Fixed(h), vec![kv("h", h)]))
                } else {
                    Err(Failure::Config(format!("--h must be positive, got {h}")))
                }
            }
            (None, Some("cv")) => {
                let grid = SelectionGrid::from_design_range(s, h_points, 4.0).map_err(data_err)?;
                let sel = cv_bandwidth(s, kernel, &grid).map_err(data_err)?;
                let echo = vec![
                    kv("select", "cv"),
                    kv("h_points", h_points),
                    kv("h_cv", sel.h_cv),
                ];
                Ok((Smoothing::Cv { h_cv: sel.h_cv }, echo))
            }
            (None, Some(other)) => Err(Failure::Config(format!(
                "unknown --select mode '{other}' here (only cv)"
            ))),
            (None, None) => Err(Failure::Config("need --h or --select cv".into())),
        }
    }

    /// Bandwidth used when estimating at tail level `level`.
    fn at_level(&self, level: f64) -> f64 {
        match *self {
            Smoothing::Fixed(h) => h,
            Smoothing::Cv { h_cv } => {
                yu_jones_bandwidth(h_cv, level).expect("level validated before use")
            }
        }
    }
}

fn x_columns(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["x".to_string()]
    } else {
        (1..=dim).map(|d| format!("x{d}")).collect()
    }
}

fn point_label(point: &[f64]) -> String {
    point.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

fn out_name(path: Option<&Path>) -> String {
    path.map(|p| p.display().to_string()).unwrap_or_else(|| "stdout".into())
}

// ------------------------------------------------------------------- fit ---

#[derive(Args)]
pub struct FitArgs {
    /// input CSV with covariate column(s) `x` (or `x1`..`xp`) and response `y`
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// evaluation grid: `lo:hi:count`, a comma list, or `;`-separated vectors
    /// (default: 21 points over the observed range)
    #[arg(long, value_name = "SPEC")]
    x_grid: Option<String>,
    /// quantile level(s) in (0,1), comma separated (default 0.5)
    #[arg(long, value_delimiter = ',', value_name = "B")]
    beta: Option<Vec<f64>>,
    /// fixed bandwidth
    #[arg(long, value_name = "H")]
    h: Option<f64>,
    /// bandwidth selection when --h is absent: `cv` cross-validates a pilot
    /// bandwidth and rescales it to each requested level
    #[arg(long, value_name = "MODE")]
    select: Option<String>,
    /// candidate bandwidth count for --select cv
    #[arg(long, value_name = "M")]
    h_points: Option<usize>,
    /// emit the survival curve at this point (same syntax as one --x-grid
    /// point) instead of quantile rows
    #[arg(long, value_name = "X")]
    survival_at: Option<String>,
    /// output file (stdout if omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// output format: csv or json
    #[arg(long, value_name = "FMT")]
    format: Option<String>,
}

pub fn cmd_fit(args: FitArgs, file: &FileConfig) -> CResult<()> {
    let data_path = require(pick_opt(args.data, &file.data), "data")?;
    let s = load_sample(&data_path)?;
    let kernel = KernelSpec::triweight();
    let format = Format::parse(&pick(args.format, &file.format, "csv".into()))?;
    let out_path = pick_opt(args.out, &file.out);
    let h_points = pick(args.h_points, &file.h_points, 30);
    let betas = pick(args.beta, &file.beta, vec![0.5]);
    for &b in &betas {
        validate_level(b, "beta")?;
    }
    let (smoothing, smoothing_echo) = Smoothing::resolve(
        args.h,
        args.select.as_deref(),
        file,
        &s,
        &kernel,
        h_points,
    )?;

    let mut config = vec![
        kv("command", "fit"),
        kv("data", data_path.display()),
        kv("n", s.n()),
    ];
    config.extend(smoothing_echo);

    let survival_at = pick_opt(args.survival_at, &file.survival_at);
    if let Some(spec) = survival_at {
        // survival-curve mode: one window, the curve over its distinct values
        let mut pts = parse_grid_spec(&spec, s.dim())?;
        if pts.len() != 1 {
            return Err(Failure::Config("--survival-at takes a single point".into()));
        }
        let point = pts.pop().unwrap();
        let h = match smoothing {
            Smoothing::Fixed(h) => h,
            Smoothing::Cv { h_cv } => h_cv,
        };
        config.push(kv("survival_at", point_label(&point)));
        config.push(kv("bandwidth", h));
        let window = LocalWindow::build(&s, &kernel, h, &point).map_err(data_err)?;
        let mut ys = window.member_ys().to_vec();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        let rows: Vec<Vec<Cell>> = ys
            .iter()
            .map(|&y| {
                let surv = window.survival(y).map_err(data_err)?;
                Ok(vec![Cell::Num(y), Cell::Num(surv)])
            })
            .collect::<CResult<_>>()?;
        let doc = TableDoc {
            config,
            columns: vec!["y".into(), "survival".into()],
            rows,
        };
        let n_rows = doc.rows.len();
        write_out(out_path.as_deref(), &doc.render(format)?)?;
        eprintln!("fit: survival curve, {} rows -> {}", n_rows, out_name(out_path.as_deref()));
        return Ok(());
    }

    let points = grid_points(args.x_grid.as_deref().or(file.x_grid.as_deref()), &s)?;
    config.push(kv("beta", betas.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")));
    config.push(kv("points", points.len()));

    let mut columns = x_columns(s.dim());
    columns.extend(["beta".to_string(), "quantile".to_string(), "status".to_string()]);

    let mut rows = Vec::new();
    let mut flagged = 0usize;
    for &beta in &betas {
        let h = smoothing.at_level(beta);
        for point in &points {
            let mut row: Vec<Cell> = point.iter().map(|&v| Cell::Num(v)).collect();
            row.push(Cell::Num(beta));
            let outcome = LocalWindow::build(&s, &kernel, h, point)
                .and_then(|w| w.quantile(beta));
            match outcome {
                Ok(q) => {
                    row.push(Cell::OptNum(Some(q.value)));
                    row.push(Cell::Str(if q.pinned { "pinned" } else { "ok" }.into()));
                }
                Err(e) => {
                    flagged += 1;
                    row.push(Cell::OptNum(None));
                    row.push(Cell::Str(status_code(&e).into()));
                }
            }
            rows.push(row);
        }
    }

    let doc = TableDoc { config, columns, rows };
    let n_rows = doc.rows.len();
    write_out(out_path.as_deref(), &doc.render(format)?)?;
    eprintln!(
        "fit: {} rows ({} flagged) -> {}",
        n_rows,
        flagged,
        out_name(out_path.as_deref())
    );
    Ok(())
}

// --------------------------------------------------------------- extreme ---

#[derive(Args)]
pub struct ExtremeArgs {
    /// input CSV with covariate column(s) `x` (or `x1`..`xp`) and response `y`
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// evaluation grid (same syntax as `fit`)
    #[arg(long, value_name = "SPEC")]
    x_grid: Option<String>,
    /// extreme level(s) to extrapolate to, comma separated (default 0.01)
    #[arg(long, value_delimiter = ',', value_name = "B")]
    beta: Option<Vec<f64>>,
    /// within-sample anchor level (default 0.1); requires beta <= alpha
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
    /// number of geometric levels for the refined Pickands estimator
    #[arg(long = "J", value_name = "J")]
    j_levels: Option<usize>,
    /// level ratio in (0,1) (default 1/J)
    #[arg(long, value_name = "R")]
    r: Option<f64>,
    /// spacing weights: rp1 (flat) or rp2 (linear)
    #[arg(long, value_name = "SCHEME")]
    weights: Option<String>,
    /// exceedance count for the generalized Pareto column
    /// (default round(alpha * n*) at each point)
    #[arg(long, value_name = "K")]
    k: Option<usize>,
    /// fixed bandwidth
    #[arg(long, value_name = "H")]
    h: Option<f64>,
    /// bandwidth selection when --h is absent (cv, adjusted to the anchor level)
    #[arg(long, value_name = "MODE")]
    select: Option<String>,
    /// candidate bandwidth count for --select cv
    #[arg(long, value_name = "M")]
    h_points: Option<usize>,
    /// output file (stdout if omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// output format: csv or json
    #[arg(long, value_name = "FMT")]
    format: Option<String>,
}

pub fn cmd_extreme(args: ExtremeArgs, file: &FileConfig) -> CResult<()> {
    let data_path = require(pick_opt(args.data, &file.data), "data")?;
    let s = load_sample(&data_path)?;
    let kernel = KernelSpec::triweight();
    let format = Format::parse(&pick(args.format, &file.format, "csv".into()))?;
    let out_path = pick_opt(args.out, &file.out);
    let h_points = pick(args.h_points, &file.h_points, 30);

    let alpha = validate_level(pick(args.alpha, &file.alpha, 0.1), "alpha")?;
    let betas = pick(args.beta, &file.beta, vec![0.01]);
    for &b in &betas {
        validate_level(b, "beta")?;
        if b > alpha {
            return Err(Failure::Config(format!(
                "--beta {b} exceeds the anchor --alpha {alpha}; extrapolation goes outward"
            )));
        }
    }
    let j_levels = pick(args.j_levels, &file.j_levels, 3);
    let ratio = pick(args.r, &file.r, 1.0 / j_levels as f64);
    let scheme = parse_weights(&pick(args.weights, &file.weights, "rp1".into()))?;
    let rp_cfg = RpConfig::with_scheme(alpha, j_levels, ratio, scheme).map_err(cfg_err)?;
    let k_flag = pick_opt(args.k, &file.k);
    if k_flag == Some(0) {
        return Err(Failure::Config("--k must be at least 1".into()));
    }

    let (smoothing, smoothing_echo) = Smoothing::resolve(
        args.h,
        args.select.as_deref(),
        file,
        &s,
        &kernel,
        h_points,
    )?;
    let h = smoothing.at_level(alpha);

    let points = grid_points(args.x_grid.as_deref().or(file.x_grid.as_deref()), &s)?;

    let mut config = vec![
        kv("command", "extreme"),
        kv("data", data_path.display()),
        kv("n", s.n()),
        kv("alpha", alpha),
        kv("J", j_levels),
        kv("r", ratio),
        kv("weights", match scheme {
            WeightScheme::Rp1 => "rp1",
            WeightScheme::Rp2 => "rp2",
        }),
    ];
    config.extend(smoothing_echo);
    config.push(kv("bandwidth", h));
    if let Some(k) = k_flag {
        config.push(kv("k", k));
    }

    let mut columns = x_columns(s.dim());
    columns.extend(
        [
            "beta", "rq", "rq_status", "rp", "rp_gamma", "rp_status", "gp", "gp_gamma",
            "gp_status",
        ]
        .map(str::to_string),
    );

    let gp_opts = GpFitOptions::default();
    let mut rows = Vec::new();
    let mut flagged = 0usize;
    for point in &points {
        // per-point work shared across the beta levels
        let window = LocalWindow::build(&s, &kernel, h, point).map_err(data_err)?;
        let rp = rp_estimate_from_window(&window, &rp_cfg);
        let gp = (|| -> tailquant::Result<(ExceedanceSet, GpFit)> {
            let k = match k_flag {
                Some(k) => k,
                None => ((alpha * window.n_star() as f64).round() as usize).max(2),
            };
            let exc = build_exceedances(&s, &kernel, h, point, k)?;
            let fit = gp_fit(&exc, &gp_opts)?;
            Ok((exc, fit))
        })();

        for &beta in &betas {
            let mut row: Vec<Cell> = point.iter().map(|&v| Cell::Num(v)).collect();
            row.push(Cell::Num(beta));

            match window.quantile(beta) {
                Ok(q) => {
                    row.push(Cell::OptNum(Some(q.value)));
                    row.push(Cell::Str(if q.pinned { "pinned" } else { "ok" }.into()));
                }
                Err(e) => {
                    flagged += 1;
                    row.push(Cell::OptNum(None));
                    row.push(Cell::Str(status_code(&e).into()));
                }
            }

            match rp.as_ref().map_err(Clone::clone).and_then(|est| {
                extrapolate(est, alpha, beta).map(|q| (q, est.gamma_hat))
            }) {
                Ok((q, gamma)) => {
                    row.push(Cell::OptNum(Some(q)));
                    row.push(Cell::OptNum(Some(gamma)));
                    row.push(Cell::Str("ok".into()));
                }
                Err(e) => {
                    flagged += 1;
                    row.push(Cell::OptNum(None));
                    row.push(Cell::OptNum(None));
                    row.push(Cell::Str(status_code(&e).into()));
                }
            }

            match gp.as_ref().map_err(Clone::clone).and_then(|(exc, fit)| {
                gp_quantile(fit, exc, beta).map(|q| (q, fit.gamma))
            }) {
                Ok((q, gamma)) => {
                    row.push(Cell::OptNum(Some(q)));
                    row.push(Cell::OptNum(Some(gamma)));
                    row.push(Cell::Str("ok".into()));
                }
                Err(e) => {
                    flagged += 1;
                    row.push(Cell::OptNum(None));
                    row.push(Cell::OptNum(None));
                    row.push(Cell::Str(status_code(&e).into()));
                }
            }

            rows.push(row);
        }
    }

    let doc = TableDoc { config, columns, rows };
    let n_rows = doc.rows.len();
    write_out(out_path.as_deref(), &doc.render(format)?)?;
    eprintln!(
        "extreme: {} rows ({} flagged cells) -> {}",
        n_rows,
        flagged,
        out_name(out_path.as_deref())
    );
    Ok(())
}

// ---------------------------------------------------------------- select ---

#[derive(Args)]
pub struct SelectArgs {
    /// input CSV with covariate column(s) `x` (or `x1`..`xp`) and response `y`
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// evaluation grid (same syntax as `fit`; unused by --select cv)
    #[arg(long, value_name = "SPEC")]
    x_grid: Option<String>,
    /// what to select: cv (bandwidth), separate (k at a fixed bandwidth),
    /// simultaneous (bandwidth and k together)
    #[arg(long, value_name = "MODE")]
    select: Option<String>,
    /// tail level driving the level adjustment and the stabilized estimate
    #[arg(long, value_name = "B")]
    beta: Option<f64>,
    /// estimator stabilized by the k-rules: rq, rp1, rp2 or gp
    #[arg(long, value_name = "EST")]
    estimator: Option<String>,
    /// number of geometric levels for rp estimators
    #[arg(long = "J", value_name = "J")]
    j_levels: Option<usize>,
    /// level ratio in (0,1) (default 1/J)
    #[arg(long, value_name = "R")]
    r: Option<f64>,
    /// fixed bandwidth for --select separate (default: cv + level adjustment)
    #[arg(long, value_name = "H")]
    h: Option<f64>,
    /// candidate bandwidth count
    #[arg(long, value_name = "M")]
    h_points: Option<usize>,
    /// write per-candidate diagnostics here (cv and simultaneous modes)
    #[arg(long, value_name = "FILE")]
    trace_out: Option<PathBuf>,
    /// output file (stdout if omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// output format: csv or json
    #[arg(long, value_name = "FMT")]
    format: Option<String>,
}

/// The estimator whose trajectory over k the stability rules examine.
#[derive(Clone, Copy)]
enum StabTarget {
    Rq,
    Rp(WeightScheme, usize, f64),
    Gp,
}

impl StabTarget {
    fn parse(name: &str, j_levels: usize, ratio: f64) -> CResult<Self> {
        match name {
            "rq" => Ok(StabTarget::Rq),
            "rp1" => Ok(StabTarget::Rp(WeightScheme::Rp1, j_levels, ratio)),
            "rp2" => Ok(StabTarget::Rp(WeightScheme::Rp2, j_levels, ratio)),
            "gp" => Ok(StabTarget::Gp),
            other => Err(Failure::Config(format!(
                "unknown --estimator '{other}' (rq, rp1, rp2 or gp)"
            ))),
        }
    }

    /// Estimate at sample fraction alpha = k/n*, or None where degenerate.
    #[allow(clippy::too_many_arguments)]
    fn estimate(
        self,
        s: &Sample,
        kernel: &KernelSpec,
        window: &LocalWindow,
        h: f64,
        point: &[f64],
        beta: f64,
        k: usize,
    ) -> Option<f64> {
        let n_star = window.n_star();
        if k >= n_star {
            return None;
        }
        let alpha = k as f64 / n_star as f64;
        let v = match self {
            StabTarget::Rq => window.quantile(beta).ok().map(|q| q.value),
            StabTarget::Rp(scheme, j, r) => {
                let cfg = RpConfig::with_scheme(alpha, j, r, scheme).ok()?;
                rp_estimate_from_window(window, &cfg)
                    .ok()
                    .and_then(|e| extrapolate(&e, alpha, beta).ok())
            }
            StabTarget::Gp => {
                let exc = build_exceedances(s, kernel, h, point, k).ok()?;
                let fit = gp_fit(&exc, &GpFitOptions::default()).ok()?;
                gp_quantile(&fit, &exc, beta).ok()
            }
        };
        v.filter(|v| v.is_finite())
    }
}

pub fn cmd_select(args: SelectArgs, file: &FileConfig) -> CResult<()> {
    let mode = require(pick_opt(args.select.clone(), &file.select), "select")?;
    let data_path = require(pick_opt(args.data, &file.data), "data")?;
    let s = load_sample(&data_path)?;
    let kernel = KernelSpec::triweight();
    let format = Format::parse(&pick(args.format, &file.format, "csv".into()))?;
    let out_path = pick_opt(args.out, &file.out);
    let trace_path_opt = pick_opt(args.trace_out, &file.trace_out);
    let h_points = pick(args.h_points, &file.h_points, 50);
    let beta = validate_level(
        pick(args.beta, &file.beta.as_ref().and_then(|v| v.first().copied()), 0.01),
        "beta",
    )?;
    let j_levels = pick(args.j_levels, &file.j_levels, 3);
    let ratio = pick(args.r, &file.r, 1.0 / j_levels as f64);
    let target = StabTarget::parse(
        &pick(args.estimator, &file.estimator, "rp1".into()),
        j_levels,
        ratio,
    )?;
    if let StabTarget::Rp(scheme, j, r) = target {
        // surface weight/level configuration errors before any heavy work
        RpConfig::with_scheme(0.5, j, r, scheme).map_err(cfg_err)?;
    }

    let mut config = vec![
        kv("command", "select"),
        kv("mode", mode.clone()),
        kv("data", data_path.display()),
        kv("n", s.n()),
        kv("beta", beta),
        kv("h_points", h_points),
    ];
    if matches!(target, StabTarget::Rp(..)) {
        config.push(kv("J", j_levels));
        config.push(kv("r", ratio));
    }

    match mode.as_str() {
        "cv" => {
            let grid = SelectionGrid::from_design_range(&s, h_points, 4.0).map_err(data_err)?;
            let sel = cv_bandwidth(&s, &kernel, &grid).map_err(data_err)?;
            let h_adj = yu_jones_bandwidth(sel.h_cv, beta).map_err(cfg_err)?;
            let doc = TableDoc {
                config,
                columns: ["h_cv", "criterion", "beta", "h_adjusted"]
                    .map(str::to_string)
                    .to_vec(),
                rows: vec![vec![
                    Cell::Num(sel.h_cv),
                    Cell::Num(sel.criterion),
                    Cell::Num(beta),
                    Cell::Num(h_adj),
                ]],
            };
            write_out(out_path.as_deref(), &doc.render(format)?)?;
            if let Some(trace_path) = &trace_path_opt {
                let rows = sel
                    .scores
                    .iter()
                    .map(|sc| {
                        vec![
                            Cell::Num(sc.h),
                            Cell::OptNum(sc.criterion),
                            Cell::Int(sc.skipped_pairs as u64),
                        ]
                    })
                    .collect();
                let trace = TableDoc {
                    config: vec![kv("command", "select"), kv("mode", "cv-trace")],
                    columns: ["h", "criterion", "skipped_pairs"].map(str::to_string).to_vec(),
                    rows,
                };
                write_out(Some(trace_path), &trace.render(format)?)?;
            }
            eprintln!(
                "select cv: h_cv = {}, adjusted to {} at beta = {} -> {}",
                sel.h_cv,
                h_adj,
                beta,
                out_name(out_path.as_deref())
            );
            Ok(())
        }
        "separate" => {
            let points = grid_points(args.x_grid.as_deref().or(file.x_grid.as_deref()), &s)?;
            let h = match pick_opt(args.h, &file.h) {
                Some(h) if h.is_finite() && h > 0.0 => h,
                Some(h) => {
                    return Err(Failure::Config(format!("--h must be positive, got {h}")))
                }
                None => {
                    let grid =
                        SelectionGrid::from_design_range(&s, h_points, 4.0).map_err(data_err)?;
                    let sel = cv_bandwidth(&s, &kernel, &grid).map_err(data_err)?;
                    yu_jones_bandwidth(sel.h_cv, beta).map_err(cfg_err)?
                }
            };
            config.push(kv("h", h));

            let mut columns = x_columns(s.dim());
            columns.extend(
                ["n_star", "k", "alpha", "estimate", "score", "status"].map(str::to_string),
            );
            let mut rows = Vec::new();
            let mut flagged = 0usize;
            for point in &points {
                let mut row: Vec<Cell> = point.iter().map(|&v| Cell::Num(v)).collect();
                let outcome = LocalWindow::build(&s, &kernel, h, point).and_then(|w| {
                    let n_star = w.n_star();
                    let window = n_star.isqrt();
                    if n_star < 2 || window < 2 {
                        return Err(Error::SelectionFailed(format!(
                            "window at {} holds only {n_star} points",
                            point_label(point)
                        )));
                    }
                    let sel = select_k_separate(
                        |k| target.estimate(&s, &kernel, &w, h, point, beta, k),
                        1,
                        n_star - 1,
                        window,
                    )?;
                    Ok((n_star, sel))
                });
                match outcome {
                    Ok((n_star, sel)) => {
                        row.push(Cell::Int(n_star as u64));
                        row.push(Cell::Int(sel.k as u64));
                        row.push(Cell::Num(sel.k as f64 / n_star as f64));
                        row.push(Cell::OptNum(Some(sel.estimate)));
                        row.push(Cell::Num(sel.score));
                        row.push(Cell::Str("ok".into()));
                    }
                    Err(e) => {
                        flagged += 1;
                        row.push(Cell::OptNum(None));
                        row.push(Cell::OptNum(None));
                        row.push(Cell::OptNum(None));
                        row.push(Cell::OptNum(None));
                        row.push(Cell::OptNum(None));
                        row.push(Cell::Str(status_code(&e).into()));
                    }
                }
                rows.push(row);
            }
            let doc = TableDoc { config, columns, rows };
            let n_rows = doc.rows.len();
            write_out(out_path.as_deref(), &doc.render(format)?)?;
            eprintln!(
                "select separate: {} rows ({} flagged) -> {}",
                n_rows,
                flagged,
                out_name(out_path.as_deref())
            );
            Ok(())
        }
        "simultaneous" => {
            let points = grid_points(args.x_grid.as_deref().or(file.x_grid.as_deref()), &s)?;
            let cv_grid =
                SelectionGrid::from_design_range(&s, h_points, 4.0).map_err(data_err)?;
            let h_cv = cv_bandwidth(&s, &kernel, &cv_grid).map_err(data_err)?.h_cv;
            let h_yj = yu_jones_bandwidth(h_cv, beta).map_err(cfg_err)?;
            let sorted = s.sorted_x1();
            let h_floor =
                sorted.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max);
            let refined = SelectionGrid::refined(h_cv, h_yj, h_points, Some(h_floor))
                .map_err(data_err)?;
            config.push(kv("h_cv", h_cv));
            config.push(kv("h_adjusted", h_yj));

            let mut columns = x_columns(s.dim());
            columns.extend(
                ["h", "k", "alpha", "estimate", "stability_score", "k_score", "status"]
                    .map(str::to_string),
            );
            let mut rows = Vec::new();
            let mut trace_rows = Vec::new();
            let mut flagged = 0usize;
            for point in &points {
                let windows: CResult<Vec<LocalWindow>> = refined
                    .h_values()
                    .iter()
                    .map(|&h| LocalWindow::build(&s, &kernel, h, point).map_err(data_err))
                    .collect();
                let windows = windows?;
                let h_index: HashMap<u64, usize> = refined
                    .h_values()
                    .iter()
                    .enumerate()
                    .map(|(i, &h)| (h.to_bits(), i))
                    .collect();
                let outcome = select_hk_simultaneous(
                    |h, k| {
                        let w = &windows[h_index[&h.to_bits()]];
                        target.estimate(&s, &kernel, w, h, point, beta, k)
                    },
                    |h| windows[h_index[&h.to_bits()]].n_star(),
                    &refined,
                );
                let mut row: Vec<Cell> = point.iter().map(|&v| Cell::Num(v)).collect();
                match &outcome {
                    Ok(sel) => {
                        let n_star = windows[h_index[&sel.h_selected.to_bits()]].n_star();
                        row.push(Cell::Num(sel.h_selected));
                        row.push(Cell::Int(sel.k_selected as u64));
                        row.push(Cell::Num(sel.k_selected as f64 / n_star as f64));
                        row.push(Cell::OptNum(Some(sel.estimate)));
                        row.push(Cell::Num(sel.stability_score));
                        row.push(Cell::Num(sel.k_score));
                        row.push(Cell::Str("ok".into()));
                    }
                    Err(e) => {
                        flagged += 1;
                        for _ in 0..5 {
                            row.push(Cell::OptNum(None));
                        }
                        row.push(Cell::OptNum(None));
                        row.push(Cell::Str(status_code(e).into()));
                    }
                }
                rows.push(row);

                if trace_path_opt.is_some() {
                    if let Ok(sel) = &outcome {
                        for t in &sel.trace {
                            let mut tr: Vec<Cell> =
                                point.iter().map(|&v| Cell::Num(v)).collect();
                            tr.push(Cell::Num(t.h));
                            tr.push(Cell::Int(t.n_star as u64));
                            match &t.outcome {
                                Ok(ks) => {
                                    tr.push(Cell::Int(ks.k as u64));
                                    tr.push(Cell::OptNum(Some(ks.estimate)));
                                    tr.push(Cell::Num(ks.score));
                                    tr.push(Cell::Str("ok".into()));
                                }
                                Err(e) => {
                                    tr.push(Cell::OptNum(None));
                                    tr.push(Cell::OptNum(None));
                                    tr.push(Cell::OptNum(None));
                                    tr.push(Cell::Str(status_code(e).into()));
                                }
                            }
                            trace_rows.push(tr);
                        }
                    }
                }
            }

            let doc = TableDoc { config, columns, rows };
            let n_rows = doc.rows.len();
            write_out(out_path.as_deref(), &doc.render(format)?)?;
            if let Some(trace_path) = &trace_path_opt {
                let mut columns = x_columns(s.dim());
                columns.extend(
                    ["h", "n_star", "k", "estimate", "score", "status"].map(str::to_string),
                );
                let trace = TableDoc {
                    config: vec![kv("command", "select"), kv("mode", "simultaneous-trace")],
                    columns,
                    rows: trace_rows,
                };
                write_out(Some(trace_path), &trace.render(format)?)?;
            }
            eprintln!(
                "select simultaneous: {} rows ({} flagged) -> {}",
                n_rows,
                flagged,
                out_name(out_path.as_deref())
            );
            Ok(())
        }
        other => Err(Failure::Config(format!(
            "unknown --select mode '{other}' (cv, separate or simultaneous)"
        ))),
    }
}

// -------------------------------------------------------------- simulate ---

#[derive(Args)]
pub struct SimulateArgs {
    /// synthetic scenario: gaussian, student or beta
    #[arg(long, value_name = "NAME")]
    scenario: Option<String>,
    /// estimators to benchmark, comma separated: rq, rp1, rp2, gp,
    /// gamma_rp1, gamma_rp2, gamma_gp, oracle
    #[arg(long, value_delimiter = ',', value_name = "EST")]
    estimator: Option<Vec<String>>,
    /// extreme level for quantile estimators
    #[arg(long, value_name = "B")]
    beta: Option<f64>,
    /// number of geometric levels (comma list only with --paper-table)
    #[arg(long = "J", value_delimiter = ',', value_name = "J")]
    j_levels: Option<Vec<usize>>,
    /// level ratio (default 1/J)
    #[arg(long, value_name = "R")]
    r: Option<f64>,
    /// sample size per replication
    #[arg(long, value_name = "N")]
    n: Option<usize>,
    /// number of replications
    #[arg(long, value_name = "REPS")]
    reps: Option<usize>,
    /// base seed; replications use derived substreams
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// candidate anchor levels, comma separated (default 0.1,0.15,...,0.95)
    #[arg(long, value_delimiter = ',', value_name = "A")]
    alphas: Option<Vec<f64>>,
    /// candidate bandwidth count per replication
    #[arg(long, value_name = "M")]
    h_points: Option<usize>,
    /// number of evaluation points
    #[arg(long, value_name = "L")]
    l_points: Option<usize>,
    /// parameter selection: per_replication, average_surface or data_driven
    #[arg(long, value_name = "P")]
    protocol: Option<String>,
    /// render an aligned MSE/bias text table over the --J values instead of CSV
    #[arg(long)]
    paper_table: bool,
    /// output file (stdout if omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// output format: csv or json (ignored by --paper-table)
    #[arg(long, value_name = "FMT")]
    format: Option<String>,
}

fn parse_protocol(name: &str) -> CResult<SelectionProtocol> {
    match name {
        "per_replication" => Ok(SelectionProtocol::OracleMsePerReplication),
        "average_surface" => Ok(SelectionProtocol::OracleMseAverageSurface),
        "data_driven" => Ok(SelectionProtocol::DataDriven),
        other => Err(Failure::Config(format!(
            "unknown --protocol '{other}' (per_replication, average_surface or data_driven)"
        ))),
    }
}

fn protocol_label(p: SelectionProtocol) -> &'static str {
    match p {
        SelectionProtocol::OracleMsePerReplication => "per_replication",
        SelectionProtocol::OracleMseAverageSurface => "average_surface",
        SelectionProtocol::DataDriven => "data_driven",
    }
}

fn build_spec(kind_name: &str, beta: f64, j_levels: usize, ratio: f64) -> CResult<EstimatorSpec> {
    let kind = EstimatorKind::parse(kind_name).map_err(cfg_err)?;
    match kind {
        EstimatorKind::Rq => EstimatorSpec::rq(beta),
        EstimatorKind::Rp1 => EstimatorSpec::rp(WeightScheme::Rp1, beta, j_levels, ratio),
        EstimatorKind::Rp2 => EstimatorSpec::rp(WeightScheme::Rp2, beta, j_levels, ratio),
        EstimatorKind::Gp => EstimatorSpec::gp(beta),
        EstimatorKind::GammaRp1 => EstimatorSpec::gamma_rp(WeightScheme::Rp1, j_levels, ratio),
        EstimatorKind::GammaRp2 => EstimatorSpec::gamma_rp(WeightScheme::Rp2, j_levels, ratio),
        EstimatorKind::GammaGp => Ok(EstimatorSpec::gamma_gp()),
        EstimatorKind::Oracle => EstimatorSpec::oracle(beta),
    }
    .map_err(cfg_err)
}

pub fn cmd_simulate(args: SimulateArgs, file: &FileConfig) -> CResult<()> {
    let scenario_name = require(pick_opt(args.scenario, &file.scenario), "scenario")?;
    let model = ErrorModel::parse(&scenario_name).map_err(cfg_err)?;
    let out_path = pick_opt(args.out, &file.out);
    let n = pick(args.n, &file.n, 200);
    let reps = pick(args.reps, &file.reps, 100);
    let seed = pick(args.seed, &file.seed, 0);
    let beta = validate_level(
        pick(args.beta, &file.beta.as_ref().and_then(|v| v.first().copied()), 0.01),
        "beta",
    )?;
    let protocol = parse_protocol(&pick(
        args.protocol,
        &file.protocol,
        "per_replication".into(),
    ))?;
    let estimators = pick(
        args.estimator,
        &file.estimator.as_ref().map(|s| {
            s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
        }),
        vec!["rp1".into(), "rp2".into(), "rq".into()],
    );
    if estimators.is_empty() {
        return Err(Failure::Config("--estimator names no estimators".into()));
    }

    let j_list = pick(
        args.j_levels,
        &file.j_levels.map(|j| vec![j]),
        if args.paper_table { vec![3, 4] } else { vec![3] },
    );
    if j_list.is_empty() {
        return Err(Failure::Config("--J names no level counts".into()));
    }
    if !args.paper_table && j_list.len() > 1 {
        return Err(Failure::Config(
            "multiple --J values only make sense with --paper-table".into(),
        ));
    }

    let mut grid = ParamGrid::paper();
    if let Some(alphas) = pick_opt(args.alphas, &file.alphas) {
        grid = grid.with_alphas(alphas);
    }
    let h_points = pick(args.h_points, &file.h_points, grid.h_points);
    let l_points = pick(args.l_points, &file.l_points, grid.l_points);
    grid = grid.with_h_points(h_points).with_l_points(l_points);

    let sc = Scenario::new(model, n, seed).map_err(cfg_err)?;

    let config = vec![
        kv("command", "simulate"),
        kv("scenario", model.label()),
        kv("estimators", estimators.join(",")),
        kv("beta", beta),
        kv("J", j_list.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(",")),
        kv("r", match args.r.or(file.r) {
            Some(r) => r.to_string(),
            None => "1/J".to_string(),
        }),
        kv("n", n),
        kv("reps", reps),
        kv("seed", seed),
        kv(
            "alphas",
            grid.alphas.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","),
        ),
        kv("h_points", grid.h_points),
        kv("l_points", grid.l_points),
        kv("protocol", protocol_label(protocol)),
    ];

    // every (J, estimator) pair, J applying only to the Pickands kinds
    let mut runs: Vec<(usize, String, MetricReport)> = Vec::new();
    for &j in &j_list {
        let ratio = pick(args.r, &file.r, 1.0 / j as f64);
        for name in &estimators {
            let uses_j = name.contains("rp");
            if !uses_j && runs.iter().any(|(_, n2, _)| n2 == name) {
                continue; // rq/gp/oracle do not depend on J; run them once
            }
            let spec = build_spec(name, beta, j, ratio)?;
            let report = run_mc(&sc, &spec, reps, &grid, protocol).map_err(cfg_err)?;
            runs.push((j, name.clone(), report));
        }
    }
    let reports: Vec<MetricReport> = runs.iter().map(|(_, _, r)| r.clone()).collect();

    if args.paper_table {
        let text = render_paper_table(&config, &estimators, &j_list, &runs);
        write_out(out_path.as_deref(), &text)?;
    } else {
        let format = Format::parse(&pick(args.format, &file.format, "csv".into()))?;
        let text = match format {
            Format::Csv => {
                let mut text = config_comment(&config);
                text.push_str(&reports_to_csv(&reports));
                text
            }
            Format::Json => {
                let cfg_map: serde_json::Map<String, serde_json::Value> = config
                    .iter()
                    .map(|(k, v)| (k.clone(), serde_json::Value::from(v.as_str())))
                    .collect();
                let doc = serde_json::json!({ "config": cfg_map, "reports": reports });
                let mut s = serde_json::to_string_pretty(&doc)
                    .map_err(|e| Failure::Internal(format!("json encoding failed: {e}")))?;
                s.push('\n');
                s
            }
        };
        write_out(out_path.as_deref(), &text)?;
    }

    let failed: usize = reports.iter().map(|r| r.failed_reps).sum();
    eprintln!(
        "simulate: {} runs, {} replications each ({} dropped in total) -> {}",
        reports.len(),
        reps,
        failed,
        out_name(out_path.as_deref())
    );
    Ok(())
}

/// Aligned text table: one row per J, MSE then bias columns per estimator.
fn render_paper_table(
    config: &[(String, String)],
    estimators: &[String],
    j_list: &[usize],
    runs: &[(usize, String, MetricReport)],
) -> String {
    let mut text = config_comment(config);
    let col = 12usize;
    let block = col * estimators.len();

    text.push_str(&format!("{:<8}", ""));
    for group in ["MSE", "Bias"] {
        text.push_str(&format!("{group:^block$}"));
    }
    text.push('\n');

    text.push_str(&format!("{:<8}", "J"));
    for _ in 0..2 {
        for name in estimators {
            text.push_str(&format!("{name:>col$}"));
        }
    }
    text.push('\n');

    for &j in j_list {
        text.push_str(&format!("{j:<8}"));
        for field in 0..2 {
            for name in estimators {
                let report = runs
                    .iter()
                    .find(|(rj, rn, _)| rn == name && (*rj == j || !name.contains("rp")))
                    .map(|(_, _, r)| r);
                let value = report.map(|r| if field == 0 { r.mse } else { r.bias });
                match value {
                    Some(v) if v.is_finite() => text.push_str(&format!("{v:>col$.4}")),
                    _ => text.push_str(&format!("{:>col$}", "-")),
                }
            }
        }
        text.push('\n');
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spec_range_list_and_vectors() {
        let g = parse_grid_spec("0:1:5", 1).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], vec![0.0]);
        assert_eq!(g[4], vec![1.0]);
        assert_eq!(g[2], vec![0.5]);

        let g = parse_grid_spec("0.1,0.9", 1).unwrap();
        assert_eq!(g, vec![vec![0.1], vec![0.9]]);

        let g = parse_grid_spec("0.1,0.2;0.3,0.4", 2).unwrap();
        assert_eq!(g, vec![vec![0.1, 0.2], vec![0.3, 0.4]]);

        // a bare comma list in dimension 2 is a single point
        let g = parse_grid_spec("0.1,0.2", 2).unwrap();
        assert_eq!(g, vec![vec![0.1, 0.2]]);
    }

    #[test]
    fn grid_spec_rejects_malformed_input() {
        assert!(parse_grid_spec("0:1", 1).is_err());
        assert!(parse_grid_spec("0:1:0", 1).is_err());
        assert!(parse_grid_spec("1:0:5", 1).is_err());
        assert!(parse_grid_spec("a,b", 1).is_err());
        assert!(parse_grid_spec("0.1,0.2,0.3", 2).is_err());
        assert!(parse_grid_spec("0:1:5", 2).is_err());
        assert!(parse_grid_spec(";", 2).is_err());
    }

    #[test]
    fn unknown_names_are_config_errors() {
        assert!(matches!(parse_weights("rp3"), Err(Failure::Config(_))));
        assert!(matches!(parse_protocol("oracle"), Err(Failure::Config(_))));
        assert!(matches!(StabTarget::parse("median", 3, 0.3), Err(Failure::Config(_))));
        assert!(matches!(Format::parse("yaml"), Err(Failure::Config(_))));
    }

    #[test]
    fn level_validation() {
        assert!(validate_level(0.5, "beta").is_ok());
        assert!(validate_level(0.0, "beta").is_err());
        assert!(validate_level(1.0, "beta").is_err());
        assert!(validate_level(f64::NAN, "beta").is_err());
    }
}
