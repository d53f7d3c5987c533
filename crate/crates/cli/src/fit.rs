use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use growthpath::basis::build_basis;
use growthpath::contour::{build_chart, default_tau_grid, projected_scores, ContourChart};
use growthpath::covariate::{bootstrap_test, fit_covariate, MuSpec, TestTarget};
use growthpath::model_io::{FittedModel, ModelFile};
use growthpath::rpca::{fit_with_mean_basis, select_basis, select_mean_knots};
use growthpath::{read_csv, FitConfig, SparseDataset};
use serde::Serialize;

use crate::outputs::{parse_list, sidecar, Outputs};
use crate::{CmdResult, Failure};

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Long-format CSV with header `id,time,value[,covariate]`.
    #[arg(long)]
    pub input: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Text fit report (default: `<output>.report.txt`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Spline degree of the component basis (cross-validated when absent).
    #[arg(long)]
    pub degree: Option<usize>,
    /// Interior knots of the component basis (cross-validated when absent).
    #[arg(long)]
    pub knots: Option<usize>,
    /// Degrees tried when --degree is absent.
    #[arg(long, default_value = "2,3")]
    pub degree_candidates: String,
    /// Knot counts tried when --knots is absent.
    #[arg(long, default_value = "1,2,3,4,5")]
    pub knot_candidates: String,
    /// Interior knots of the mean basis (cross-validated when absent).
    #[arg(long)]
    pub mean_knots: Option<usize>,
    /// Lower end of the time domain (default: smallest observed time).
    #[arg(long)]
    pub domain_lo: Option<f64>,
    /// Upper end of the time domain (default: largest observed time).
    #[arg(long)]
    pub domain_hi: Option<f64>,
    /// Fit the covariate-adjusted model using the `covariate` column.
    #[arg(long)]
    pub covariate: bool,
    /// Polynomial degree of the covariate functions.
    #[arg(long, default_value_t = 1)]
    pub mu_degree: usize,
    /// Bootstrap test of a covariate effect: `mean` or `component:K`.
    #[arg(long)]
    pub test: Option<String>,
    /// Bootstrap replicates of --test.
    #[arg(long, default_value_t = 200)]
    pub bootstrap_replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub delta1: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub delta2: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 4)]
    pub max_components: usize,
    #[arg(long, default_value_t = 0.90)]
    pub r2_target: f64,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// Use uncentered values in the R² denominator.
    #[arg(long)]
    pub raw_r2: bool,
    /// Comma-separated quantile levels of the chart (default 0.05..0.95 by 0.05, 0.975, 0.99).
    #[arg(long)]
    pub tau_grid: Option<String>,
    /// Harmonics of the angular quantile curves.
    #[arg(long, default_value_t = 3)]
    pub harmonics: usize,
    /// Do not build a screening chart.
    #[arg(long)]
    pub no_chart: bool,
    /// Also export the chart's contours as CSV.
    #[arg(long)]
    pub contours: Option<PathBuf>,
}

impl FitArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            delta1: self.delta1,
            delta2: self.delta2,
            max_iter: self.max_iter,
            max_components: self.max_components,
            r2_target: self.r2_target,
            restarts: self.restarts,
            seed: self.seed,
            raw_r2_denominator: self.raw_r2,
        }
    }
}

pub fn tau_grid(text: &Option<String>) -> CmdResult<Vec<f64>> {
    match text {
        Some(t) => parse_list(t, "--tau-grid"),
        None => Ok(default_tau_grid()),
    }
}

fn load(args: &FitArgs) -> CmdResult<SparseDataset> {
    let data = read_csv(&args.input)?;
    if args.domain_lo.is_none() && args.domain_hi.is_none() {
        return Ok(data);
    }
    let d = data.domain();
    let domain = growthpath::Domain::new(args.domain_lo.unwrap_or(d.lo), args.domain_hi.unwrap_or(d.hi))?;
    Ok(data.with_domain(domain)?)
}

fn parse_target(text: &str) -> CmdResult<TestTarget> {
    if text == "mean" {
        return Ok(TestTarget::Mean);
    }
    if let Some(k) = text.strip_prefix("component:") {
        let k: usize = k
            .parse()
            .map_err(|_| Failure::Usage(format!("cannot parse component in --test {text:?}")))?;
        if k == 0 {
            return Err(Failure::Usage("components are numbered from 1".into()));
        }
        return Ok(TestTarget::Component(k - 1));
    }
    Err(Failure::Usage(format!("--test must be `mean` or `component:K`, got {text:?}")))
}

pub fn run(args: &FitArgs) -> CmdResult<()> {
    let config = args.config();
    config.validate()?;
    if args.test.is_some() && !args.covariate {
        return Err(Failure::Usage("--test requires --covariate".into()));
    }
    let target = args.test.as_deref().map(parse_target).transpose()?;
    let grid = tau_grid(&args.tau_grid)?;
    let data = load(args)?;
    let mut report = String::new();
    let _ = writeln!(
        report,
        "subjects: {}\nobservations: {}\ndomain: [{}, {}]",
        data.len(),
        data.total_observations(),
        data.domain().lo,
        data.domain().hi
    );

    let (degree, knots) = match (args.degree, args.knots) {
        (Some(d), Some(q)) => (d, q),
        (d, q) => {
            let degrees = match d {
                Some(d) => vec![d],
                None => parse_list(&args.degree_candidates, "--degree-candidates")?,
            };
            let counts = match q {
                Some(q) => vec![q],
                None => parse_list(&args.knot_candidates, "--knot-candidates")?,
            };
            let choice = select_basis(&data, &degrees, &counts, &config)?;
            let _ = writeln!(
                report,
                "basis selection: degree {} with {} interior knots (criterion {})",
                choice.degree, choice.num_interior, choice.criterion
            );
            (choice.degree, choice.num_interior)
        }
    };
    let pooled = data.pooled_times();
    let basis = build_basis(data.domain(), degree, knots, &pooled)?;
    let _ = writeln!(report, "component basis: degree {degree}, interior knots {:?}", basis.interior_knots());

    let (model, test_line) = if args.covariate {
        let spec = MuSpec::Polynomial { degree: args.mu_degree };
        let model = fit_covariate(&data, &basis, spec, &config)?;
        let line = match target {
            Some(t) => {
                let res = bootstrap_test(&data, &basis, spec, &config, t, args.bootstrap_replicates)?;
                Some(format!(
                    "bootstrap test of {:?}: statistic {}, p-value {}, replicates {}, redrawn {}",
                    res.target, res.statistic, res.p_value, res.replicates, res.failed_attempts
                ))
            }
            None => None,
        };
        (FittedModel::Covariate(model), line)
    } else {
        let mean_knots = match args.mean_knots {
            Some(q) => q,
            None => select_mean_knots(&data, degree, &(0..=8).collect::<Vec<_>>(), args.seed)?,
        };
        let mean_basis = build_basis(data.domain(), degree, mean_knots, &pooled)?;
        let _ = writeln!(report, "mean basis: degree {degree}, interior knots {:?}", mean_basis.interior_knots());
        (FittedModel::Plain(fit_with_mean_basis(&data, &mean_basis, &basis, &config)?), None)
    };

    let k = model.n_components();
    let _ = writeln!(report, "components: {k}");
    for (i, r2) in model.r_squared().iter().enumerate() {
        let _ = writeln!(report, "R2({}): {r2}", i + 1);
    }
    for e in model.convergence_log() {
        let _ = writeln!(
            report,
            "component {}: {} iterations, objective {}, restart {}, failed restarts {}, degenerate subjects {}",
            e.component,
            e.iterations,
            e.objective,
            e.restart,
            e.failed_restarts,
            e.degenerate_subjects.len()
        );
    }
    if let Some(line) = test_line {
        let _ = writeln!(report, "{line}");
    }

    let chart = if args.no_chart {
        None
    } else if k < 2 {
        let _ = writeln!(report, "no chart: the model has a single component");
        None
    } else {
        let fitted = model.scores();
        let reference = match &model {
            FittedModel::Plain(m) => projected_scores(data.subjects(), m, |i| Some(fitted.row(i).iter().copied().collect()))?,
            FittedModel::Covariate(m) => {
                projected_scores(data.subjects(), m, |i| Some(fitted.row(i).iter().copied().collect()))?
            }
        };
        let chart = build_chart(&reference, &grid, args.harmonics)?;
        let _ = writeln!(
            report,
            "chart: {} reference subjects, {} levels, {} harmonics, center ({}, {})",
            chart.reference_n,
            chart.tau_grid.len(),
            chart.harmonics,
            chart.center[0],
            chart.center[1]
        );
        Some(chart)
    };
    let mut warnings: Vec<String> = model.warnings().to_vec();
    if let Some(c) = &chart {
        warnings.extend(c.warnings.iter().cloned());
    }
    for w in &warnings {
        let _ = writeln!(report, "warning: {w}");
    }

    let file = ModelFile { model, chart };
    let mut out = Outputs::new();
    out.write(&args.output, file.to_json()?)?;
    let report_path = args.report.clone().unwrap_or_else(|| sidecar(&args.output, "report.txt"));
    out.write(&report_path, &report)?;
    if let Some(path) = &args.contours {
        let chart: &ContourChart = file
            .chart
            .as_ref()
            .ok_or_else(|| Failure::Usage("--contours needs a chart".into()))?;
        let mut buf = Vec::new();
        chart.write_contours(&mut buf, growthpath::contour::ANGULAR_GRID)?;
        out.write(path, buf)?;
    }
    out.echo(&args.output, "fit", args)?;
    out.commit();
    print!("{report}");
    Ok(())
}
