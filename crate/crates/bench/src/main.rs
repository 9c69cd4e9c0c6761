use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use vi_init::gyro_bias::{BiasMode, VarianceTranslation};
use vi_init::ingest::SegmentOptions;
use vi_init::refine::RowWeighting;
use vi_init::synth::ScenarioConfig;
use vi_init_bench::{
    ablation_csv, ablation_table, base_pipeline, parse_switch, run, run_ablation, run_csv, run_table, write_report,
    BenchError, Source, Translations, Variant,
};

#[derive(Parser)]
#[command(name = "vi-init-bench", version, about = "Visual-inertial initialization benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Initialize every segment with one configuration and report errors.
    Run {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "pnec")]
        mode: BiasMode,
        #[arg(long, default_value = "on", value_parser = parse_switch, action = ArgAction::Set)]
        refine: bool,
        /// Include mean stage timings in the JSON report.
        #[arg(long)]
        timings: bool,
    },
    /// Compare pipeline variants on the same segments.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        /// Variants as MODE:REFINE, e.g. nec:off.
        #[arg(long, value_delimiter = ',', default_value = "nec:off,nec:on,pnec:off,pnec:on")]
        variants: Vec<Variant>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// ASL-layout dataset directory.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    dataset: Option<PathBuf>,
    /// Scenario config file, or `default`.
    #[arg(long)]
    synthetic: Option<String>,
    /// Number of segments (all available for datasets if omitted).
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long)]
    kf_count: Option<usize>,
    #[arg(long)]
    kf_rate: Option<f64>,
    /// Base seed for synthetic segments.
    #[arg(long)]
    seed: Option<u64>,
    /// Track file (defaults to tracks.csv in the dataset root).
    #[arg(long)]
    tracks: Option<PathBuf>,
    /// `auto`, `groundtruth` or a translations file.
    #[arg(long, default_value = "auto")]
    translations: Translations,
    #[arg(long, default_value = "eigenvector")]
    pnec_translation: VarianceTranslation,
    #[arg(long, default_value = "correlated")]
    weighting: RowWeighting,
    /// Report file, `.json` or `.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl DataArgs {
    fn source(&self) -> Result<Source, BenchError> {
        if let Some(root) = &self.dataset {
            let mut options = SegmentOptions::default();
            options.kf_count = self.kf_count.unwrap_or(options.kf_count);
            options.kf_rate = self.kf_rate.unwrap_or(options.kf_rate);
            return Ok(Source::Dataset {
                root: root.clone(),
                tracks: self.tracks.clone(),
                translations: self.translations.clone(),
                options,
                segments: self.segments,
            });
        }
        let mut config = match self.synthetic.as_deref() {
            Some("default") | None => ScenarioConfig::default(),
            Some(path) => ScenarioConfig::from_file(path.as_ref())?,
        };
        config.kf_count = self.kf_count.unwrap_or(config.kf_count);
        config.kf_rate = self.kf_rate.unwrap_or(config.kf_rate);
        config.seed = self.seed.unwrap_or(config.seed);
        config.validate()?;
        Ok(Source::Synthetic { config, segments: self.segments.unwrap_or(100) })
    }
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Run { data, mode, refine, timings } => {
            let source = data.source()?;
            let cases = source.load()?;
            let base = base_pipeline(data.pnec_translation, data.weighting);
            let report = run(&source, &cases, Variant { mode, refine }, &base, timings)?;
            print!("{}", run_table(&report));
            if let Some(out) = &data.out {
                write_report(out, &report, || run_csv(&report))?;
            }
        }
        Command::Ablate { data, variants } => {
            let source = data.source()?;
            let cases = source.load()?;
            let base = base_pipeline(data.pnec_translation, data.weighting);
            let report = run_ablation(&source, &cases, &variants, &base);
            print!("{}", ablation_table(&report));
            if let Some(out) = &data.out {
                write_report(out, &report, || ablation_csv(&report))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
