use std::path::PathBuf;

use clap::Args;
use growthpath::contour::{build_chart, screen_subject, ContourChart, ScreeningResult, DEFAULT_LEVEL};
use growthpath::model_io::{FittedModel, ModelFile};
use growthpath::{read_csv, Error, Subject};
use serde::Serialize;

use crate::fit::tau_grid;
use crate::outputs::Outputs;
use crate::{CmdResult, Failure};

#[derive(Debug, Args, Serialize)]
pub struct ScreenArgs {
    /// Model file written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Subjects to screen, same CSV layout as for fitting.
    #[arg(long)]
    pub input: PathBuf,
    /// Ranks CSV to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Screening level: subjects ranked above it are flagged.
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
    /// Rebuild the chart from the model's training scores with these levels
    /// instead of using the stored chart.
    #[arg(long)]
    pub tau_grid: Option<String>,
    /// Harmonics used when the chart is rebuilt.
    #[arg(long, default_value_t = 3)]
    pub harmonics: usize,
    /// Also export the chart's contours as CSV.
    #[arg(long)]
    pub contours: Option<PathBuf>,
}

fn chart_for(file: &ModelFile, args: &ScreenArgs) -> CmdResult<ContourChart> {
    if args.tau_grid.is_none() {
        if let Some(c) = &file.chart {
            return Ok(c.clone());
        }
    }
    let grid = tau_grid(&args.tau_grid)?;
    Ok(build_chart(file.model.scores(), &grid, args.harmonics)?)
}

fn screen_one(model: &FittedModel, s: &Subject, chart: &ContourChart, level: f64) -> growthpath::Result<ScreeningResult> {
    match model {
        FittedModel::Plain(m) => screen_subject(s, m, chart, level),
        FittedModel::Covariate(m) => screen_subject(s, m, chart, level),
    }
}

fn csv_error(e: csv::Error) -> Failure {
    Failure::Lib(Error::Csv(e.to_string()))
}

pub fn run(args: &ScreenArgs) -> CmdResult<()> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(Failure::Usage(format!("--level {} outside (0, 1)", args.level)));
    }
    let file = ModelFile::load(&args.model)?;
    let k = file.model.n_components();
    if k < 2 {
        return Err(Failure::Lib(Error::InvalidInput(format!(
            "screening needs a model with at least two components, this one has {k}"
        ))));
    }
    let chart = chart_for(&file, args)?;
    let data = read_csv(&args.input)?;
    let results: Vec<(String, growthpath::Result<ScreeningResult>)> = data
        .subjects()
        .iter()
        .map(|s| (s.id.clone(), screen_one(&file.model, s, &chart, args.level)))
        .collect();

    let mut header = vec!["id".to_string()];
    header.extend((1..=k).map(|j| format!("score_{j}")));
    header.extend(["rank", "flagged", "error"].map(String::from));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_error)?;
    let (mut flagged, mut failed) = (0usize, 0usize);
    for (id, res) in &results {
        let mut row = vec![id.clone()];
        match res {
            Ok(r) => {
                row.extend(r.scores.iter().map(|v| format!("{v:?}")));
                row.extend([r.rank.to_string(), r.flagged.to_string(), String::new()]);
                flagged += r.flagged as usize;
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), k + 2));
                row.push(e.code().to_string());
                failed += 1;
            }
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    let csv = w.into_inner().map_err(|e| Failure::Lib(Error::Csv(e.to_string())))?;
    let mut out = Outputs::new();
    out.write(&args.output, csv)?;
    if let Some(path) = &args.contours {
        let mut buf = Vec::new();
        chart.write_contours(&mut buf, growthpath::contour::ANGULAR_GRID)?;
        out.write(path, buf)?;
    }
    out.echo(&args.output, "screen", args)?;
    out.commit();
    println!(
        "screened {} subjects: {flagged} flagged at level {}, {failed} could not be ranked",
        results.len(),
        args.level
    );
    Ok(())
}
