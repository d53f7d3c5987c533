use std::fs::File;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use growthpath::contour::DEFAULT_LEVEL;
use growthpath::simharness::{
    contaminate, default_score_table, generate, run_estimation, screening_power, ContaminationSpec,
    GeneratorSpec, PowerGrid, PowerOptions, ScoreLaw, StudyOptions,
};
use serde::Serialize;

use crate::fit::tau_grid;
use crate::outputs::{sidecar, Outputs};
use crate::{CmdResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Write one synthetic dataset (optionally contaminated) and its true scores.
    Data,
    /// RISE of the component functions and RMSE of the scores over replicates.
    Estimation,
    /// Flag rates of contaminated curves over a slope/shift grid.
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Scores resampled from a score table.
    Empirical,
    /// Bivariate normal scores with the table's mean and covariance.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridChoice {
    /// Slopes −4, −2, −1, 0, 1, 2, 4 by shifts −20, −12, −4, 0, 4, 12, 20.
    Default,
    /// Slopes −4, −2, 0 by shifts −20, −4, 0.
    Reduced,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Study to run (default: power when --power-grid is given, else estimation).
    #[arg(long, value_enum)]
    pub study: Option<Study>,
    #[arg(long, value_enum, default_value_t = Setting::Empirical)]
    pub setting: Setting,
    /// Two-column score table (header `r1,r2`) replacing the built-in one.
    #[arg(long)]
    pub score_table: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 500)]
    pub n_subjects: usize,
    #[arg(long, default_value_t = 6)]
    pub obs_per_subject: usize,
    /// Contamination grid of the power study.
    #[arg(long, value_enum)]
    pub power_grid: Option<GridChoice>,
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
    #[arg(long, default_value_t = 100)]
    pub curves_per_cell: usize,
    #[arg(long)]
    pub tau_grid: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub harmonics: usize,
    /// Slope A of the contamination A(t − t0) + B (data study).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub contaminate_a: f64,
    /// Shift B of the contamination (data study).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub contaminate_b: f64,
    /// Number of leading subjects contaminated (data study).
    #[arg(long, default_value_t = 0)]
    pub contaminate_n: usize,
    /// Report CSV, or the dataset CSV for the data study.
    #[arg(long)]
    pub output: PathBuf,
    /// Text table (default: `<output>.table.txt`).
    #[arg(long)]
    pub table: Option<PathBuf>,
}

fn spec(args: &SimulateArgs) -> CmdResult<GeneratorSpec> {
    let table = match &args.score_table {
        Some(p) => ScoreLaw::read_table(File::open(p)?)?,
        None => default_score_table(),
    };
    let law = match args.setting {
        Setting::Empirical => ScoreLaw::Empirical { table },
        Setting::Normal => {
            if table.len() < 2 {
                return Err(Failure::Lib(growthpath::Error::InvalidInput(
                    "score table needs at least two rows for its covariance".into(),
                )));
            }
            let (mean, cov) = ScoreLaw::table_moments(&table);
            ScoreLaw::Normal { mean, cov }
        }
    };
    let mut spec = GeneratorSpec::with_law(law)?;
    spec.noise_sd = args.noise_sd;
    spec.n_subjects = args.n_subjects;
    spec.obs_per_subject = args.obs_per_subject;
    spec.seed = args.seed;
    spec.validate()?;
    Ok(spec)
}

fn setting_name(s: Setting) -> &'static str {
    match s {
        Setting::Empirical => "empirical",
        Setting::Normal => "normal",
    }
}

pub fn run(args: &SimulateArgs) -> CmdResult<()> {
    if args.replicates == 0 {
        return Err(Failure::Usage("--replicates must be at least 1".into()));
    }
    let study = args.study.unwrap_or(if args.power_grid.is_some() { Study::Power } else { Study::Estimation });
    if args.power_grid.is_some() && study != Study::Power {
        return Err(Failure::Usage("--power-grid applies to the power study only".into()));
    }
    let spec = spec(args)?;
    let table_path = args.table.clone().unwrap_or_else(|| sidecar(&args.output, "table.txt"));
    let mut out = Outputs::new();
    match study {
        Study::Data => {
            let (mut data, truth) = generate(&spec)?;
            if args.contaminate_n > 0 {
                let c = ContaminationSpec {
                    a: args.contaminate_a,
                    b: args.contaminate_b,
                    n_curves: args.contaminate_n,
                    origin: spec.domain.lo,
                };
                data = contaminate(&data, &c)?;
            }
            let mut buf = Vec::new();
            data.to_writer(&mut buf)?;
            out.write(&args.output, buf)?;
            let mut t = String::from("id,r1,r2\n");
            for (i, s) in data.subjects().iter().enumerate() {
                t.push_str(&format!("{},{:?},{:?}\n", s.id, truth.scores[(i, 0)], truth.scores[(i, 1)]));
            }
            out.write(&sidecar(&args.output, "truth.csv"), t)?;
            println!("wrote {} subjects, {} observations", data.len(), data.total_observations());
        }
        Study::Estimation => {
            let report = run_estimation(&spec, &StudyOptions::default(), args.replicates, setting_name(args.setting))?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            out.write(&args.output, buf)?;
            let table = report.text_table();
            out.write(&table_path, &table)?;
            print!("{table}");
        }
        Study::Power => {
            let grid = match args.power_grid.unwrap_or(GridChoice::Default) {
                GridChoice::Default => PowerGrid::default(),
                GridChoice::Reduced => PowerGrid::reduced(),
            };
            let options = PowerOptions {
                level: args.level,
                replicates: args.replicates,
                curves_per_cell: args.curves_per_cell,
                tau_grid: tau_grid(&args.tau_grid)?,
                harmonics: args.harmonics,
                study: StudyOptions::default(),
            };
            let report = screening_power(&spec, &grid, &options)?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            out.write(&args.output, buf)?;
            let table = report.text_table();
            out.write(&table_path, &table)?;
            print!("{table}");
        }
    }
    out.echo(&args.output, "simulate", args)?;
    out.commit();
    Ok(())
}
