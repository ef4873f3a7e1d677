use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clarify_cli::{
    cmd_convert, cmd_generate_clarifications, cmd_report, cmd_responsiveness, cmd_when_to_clarify, CliError,
    ConfigFile, Overrides, RunConfig,
};
use clarify_core::corpus::adapters::SourceFormat;
use clarify_core::{Method, Pool, TaskKind};

#[derive(Parser)]
#[command(name = "clarify", version, about = "Clarifying-question studies over ambiguity-annotated corpora")]
struct Cli {
    /// Log debug output to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attach oracle clarifying exchanges to ambiguous examples.
    GenerateClarifications(RunArgs),
    /// Measure Direct / Follow / Disambig performance.
    Responsiveness(RunArgs),
    /// Score uncertainty estimators by AUROC and interaction budget.
    WhenToClarify(RunArgs),
    /// Re-render a stored report.
    Report {
        /// Artifact directory or report.json.
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Convert an AmbigQA, AmbiEnt or DiscourseMT file to the unified corpus format.
    Convert {
        #[arg(long)]
        format: SourceFormat,
        input: PathBuf,
        output: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Comma-separated budget percentages, e.g. 10,20,30.
    #[arg(long, value_delimiter = ',')]
    budget: Option<Vec<f64>>,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<Method>>,
    #[arg(long)]
    pool: Option<Pool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    mock_script: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        RunConfig::build(
            file,
            Overrides {
                task: self.task,
                corpus: self.corpus,
                budgets: self.budget,
                estimators: self.estimators,
                pool: self.pool,
                seed: self.seed,
                cache_dir: self.cache_dir,
                mock_script: self.mock_script,
                out: self.out,
                parallelism: self.parallelism,
            },
        )
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let artifact = match command {
        Command::GenerateClarifications(a) => cmd_generate_clarifications(a.into_config()?)?,
        Command::Responsiveness(a) => cmd_responsiveness(a.into_config()?)?,
        Command::WhenToClarify(a) => cmd_when_to_clarify(a.into_config()?)?,
        Command::Report { path, json } => {
            print!("{}", cmd_report(&path, json)?);
            return Ok(());
        }
        Command::Convert { format, input, output } => {
            let (kept, dropped) = cmd_convert(&input, format, &output)?;
            eprintln!("{kept} examples written to {}, {dropped} dropped", output.display());
            return Ok(());
        }
    };
    print!("{}", artifact.report.render());
    if !artifact.failures.is_empty() {
        eprintln!("{} example(s) failed; see {}", artifact.failures.len(), artifact.dir.join("failures.jsonl").display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { tracing::Level::DEBUG } else { tracing::Level::WARN };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
