use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rampcast::matrix::FeatureMatrix;
use rampcast_cli::config::parse_list;
use rampcast_cli::pipeline::{self, Layout};
use rampcast_cli::{CliError, GridChoice, Overrides, PipelineConfig, Result};

#[derive(Parser)]
#[command(name = "rampcast", version, about = "Wind-power ramp event classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build labeled datasets and class-distribution reports for every horizon.
    Prepare(PipelineArgs),
    /// Split datasets, optionally grid-search, and fit one model per horizon.
    Train(PipelineArgs),
    /// Compare GBRT, persistence and majority-class predictions on the test splits.
    Evaluate(PipelineArgs),
    /// Print the class distribution per horizon without writing files.
    Distribution {
        #[command(flatten)]
        args: PipelineArgs,
        /// Emit the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Predict ramp classes for lag windows.
    Predict(PredictArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON pipeline configuration; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input series file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    timestamp_column: Option<String>,
    #[arg(long, value_name = "NAME")]
    power_column: Option<String>,
    /// Rated capacity of the site in MW.
    #[arg(long)]
    capacity_mw: Option<f64>,
    /// Ramp threshold as a fraction of rated capacity.
    #[arg(long)]
    threshold_fraction: Option<f64>,
    /// Ramp threshold in MW.
    #[arg(long)]
    threshold_mw: Option<f64>,
    /// Steps ahead, e.g. `1-6` or `1,3,6`.
    #[arg(long)]
    horizons: Option<String>,
    /// Lag window length.
    #[arg(long)]
    lags: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every available core.
    #[arg(long)]
    workers: Option<usize>,
    /// `none`, `standard`, or `ROUNDS/DEPTHS/FOLDS` such as `50,100,200/2,4,6/3`.
    #[arg(long)]
    grid: Option<GridChoice>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl PipelineArgs {
    fn resolve(self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        cfg.apply(&Overrides {
            data: self.data,
            timestamp_column: self.timestamp_column,
            power_column: self.power_column,
            capacity_mw: self.capacity_mw,
            threshold_fraction: self.threshold_fraction,
            threshold_mw: self.threshold_mw,
            horizons: self.horizons.as_deref().map(parse_list).transpose().map_err(CliError::Config)?,
            lags: self.lags,
            seed: self.seed,
            workers: self.workers,
            grid: self.grid,
            out: self.out,
        })?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PredictArgs {
    /// Model file; defaults to the model for `--horizon` under `--out`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    horizon: Option<usize>,
    /// Delimited feature rows; an optional header selects `lag_*` columns.
    /// Reads standard input when neither this nor `--window` is given.
    #[arg(long, conflicts_with = "window")]
    input: Option<PathBuf>,
    /// One window of comma-separated power values, oldest first.
    #[arg(long, allow_hyphen_values = true)]
    window: Option<String>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let model = match (args.model, args.horizon) {
        (Some(m), _) => m,
        (None, Some(s)) => Layout::new(&args.out).model(s),
        (None, None) => return Err(CliError::Config("pass --model or --horizon".into())),
    };
    if !args.delimiter.is_ascii() {
        return Err(CliError::Config(format!("delimiter must be ASCII, got {:?}", args.delimiter)));
    }
    let delimiter = args.delimiter as u8;
    let rows = match (args.input, args.window) {
        (_, Some(w)) => {
            let values = w
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| CliError::Config(format!("bad window value {v:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            FeatureMatrix::new(1, values.len(), values)?
        }
        (Some(path), None) => {
            let file = std::fs::File::open(&path).map_err(|e| rampcast::Error::io(&path, e))?;
            pipeline::read_feature_rows(BufReader::new(file), delimiter)?
        }
        (None, None) => pipeline::read_feature_rows(io::stdin().lock(), delimiter)?,
    };
    pipeline::cmd_predict(&model, &rows, io::stdout().lock())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let command = match cli.command {
        Command::Predict(args) => return run_predict(args),
        other => other,
    };
    let mut stdout = io::stdout().lock();
    let mut say = |line: String| {
        let _ = writeln!(stdout, "{line}");
    };
    match command {
        Command::Prepare(args) => {
            let out = pipeline::cmd_prepare(&args.resolve()?)?;
            for f in &out.dataset_files {
                say(format!("wrote {}", f.display()));
            }
            say(out.report.render_text());
        }
        Command::Train(args) => {
            let out = pipeline::cmd_train(&args.resolve()?)?;
            for g in &out.grids {
                say(g.render_table());
            }
            for f in &out.model_files {
                say(format!("wrote {}", f.display()));
            }
        }
        Command::Evaluate(args) => {
            let out = pipeline::cmd_evaluate(&args.resolve()?)?;
            say(out.text);
        }
        Command::Distribution { args, json } => {
            let report = pipeline::cmd_distribution(&args.resolve()?)?;
            if json {
                say(serde_json::to_string_pretty(&report)?);
            } else {
                say(report.render_text());
            }
        }
        Command::Predict(_) => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim_end().to_string());
            eprintln!("{}", err.to_json_line());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
