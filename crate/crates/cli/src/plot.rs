use std::fs::File;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use growthpath::contour::{build_chart, default_tau_grid, ContourChart, ScoreProjector, DEFAULT_LEVEL};
use growthpath::model_io::{FittedModel, ModelFile};
use growthpath::plot::{chart_plot, line_plot, paths_plot, power_plot, Series};
use growthpath::simharness::{left_riemann_grid, PowerReport};
use growthpath::{read_csv, Error};
use serde::Serialize;

use crate::outputs::{parse_list, Outputs};
use crate::{CmdResult, Failure};

const CURVE_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    /// Component functions of a model file.
    Components,
    /// Score scatter and quantile contours of a model file.
    Chart,
    /// Growth paths of a dataset CSV.
    Paths,
    /// Heat map of a power report CSV.
    Power,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    /// Model file (components, chart), dataset CSV (paths) or power report CSV (power).
    #[arg(long)]
    pub input: PathBuf,
    /// SVG file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Model whose mean curve is drawn as reference (paths) or subjects to
    /// project and highlight (chart, a dataset CSV).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated subject ids to highlight.
    #[arg(long)]
    pub highlight: Option<String>,
    /// Contour levels drawn on the chart.
    #[arg(long, default_value = "0.5,0.75,0.95")]
    pub levels: String,
    /// Screening level recorded in the power report.
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
    /// Replicates recorded in the power report.
    #[arg(long, default_value_t = 0)]
    pub replicates: usize,
}

fn highlights(args: &PlotArgs) -> Vec<String> {
    args.highlight
        .as_deref()
        .map(|h| h.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        .unwrap_or_default()
}

fn component_series(model: &FittedModel) -> CmdResult<Vec<Series>> {
    let domain = model.basis().domain();
    let mut grid = left_riemann_grid(domain, CURVE_POINTS);
    grid.push(domain.hi);
    let mut series = Vec::new();
    for k in 0..model.n_components() {
        let points = grid
            .iter()
            .map(|&t| {
                let v = match model {
                    FittedModel::Plain(m) => m.component_value(k, t)?,
                    FittedModel::Covariate(m) => m.component_value(k, t, m.mu.summary.mean)?,
                };
                Ok((t, v))
            })
            .collect::<growthpath::Result<Vec<_>>>()?;
        series.push(Series { label: format!("component {}", k + 1), points });
    }
    Ok(series)
}

fn mean_series(model: &FittedModel) -> CmdResult<Series> {
    let domain = model.basis().domain();
    let mut grid = left_riemann_grid(domain, CURVE_POINTS);
    grid.push(domain.hi);
    let points = grid
        .iter()
        .map(|&t| {
            let v = match model {
                FittedModel::Plain(m) => m.mean.value(t)?,
                FittedModel::Covariate(m) => m.mean_value(t, m.mu.summary.mean)?,
            };
            Ok((t, v))
        })
        .collect::<growthpath::Result<Vec<_>>>()?;
    Ok(Series { label: "mean".into(), points })
}

fn project(model: &FittedModel, s: &growthpath::Subject) -> growthpath::Result<[f64; 2]> {
    let v = match model {
        FittedModel::Plain(m) => ScoreProjector::project(m, s)?,
        FittedModel::Covariate(m) => ScoreProjector::project(m, s)?,
    };
    Ok([v[0], v[1]])
}

fn chart_svg(args: &PlotArgs) -> CmdResult<String> {
    let file = ModelFile::load(&args.input)?;
    if file.model.n_components() < 2 {
        return Err(Failure::Lib(Error::InvalidInput("chart plot needs a model with two components".into())));
    }
    let levels: Vec<f64> = parse_list(&args.levels, "--levels")?;
    let chart: ContourChart = match file.chart.clone() {
        Some(c) => c,
        None => build_chart(file.model.scores(), &default_tau_grid(), 3)?,
    };
    let ids = highlights(args);
    let mut marks = Vec::new();
    match &args.data {
        Some(path) => {
            let data = read_csv(path)?;
            for s in data.subjects().iter().filter(|s| ids.is_empty() || ids.contains(&s.id)) {
                marks.push((s.id.clone(), project(&file.model, s)?));
            }
            if let Some(missing) = ids.iter().find(|id| !data.subjects().iter().any(|s| &&s.id == id)) {
                return Err(Failure::Lib(Error::InvalidInput(format!("subject {missing} not found"))));
            }
        }
        None => {
            let scores = file.model.scores();
            for id in &ids {
                let i = file
                    .model
                    .subject_ids()
                    .iter()
                    .position(|s| s == id)
                    .ok_or_else(|| Failure::Lib(Error::InvalidInput(format!("subject {id} not found"))))?;
                marks.push((id.clone(), [scores[(i, 0)], scores[(i, 1)]]));
            }
        }
    }
    Ok(chart_plot(&chart, file.model.scores(), &levels, &marks)?)
}

pub fn run(args: &PlotArgs) -> CmdResult<()> {
    let svg = match args.kind {
        Kind::Components => {
            let file = ModelFile::load(&args.input)?;
            line_plot("Component functions", "time", "component value", &component_series(&file.model)?)?
        }
        Kind::Chart => chart_svg(args)?,
        Kind::Paths => {
            let data = read_csv(&args.input)?;
            let reference = match &args.data {
                Some(p) => Some(mean_series(&ModelFile::load(p)?.model)?),
                None => None,
            };
            paths_plot(&data, reference.as_ref(), &highlights(args))?
        }
        Kind::Power => {
            let report = PowerReport::read_csv(File::open(&args.input)?, args.level, args.replicates)?;
            power_plot(&report)?
        }
    };
    let mut out = Outputs::new();
    out.write(&args.output, svg)?;
    out.echo(&args.output, "plot", args)?;
    out.commit();
    println!("wrote {}", args.output.display());
    Ok(())
}
