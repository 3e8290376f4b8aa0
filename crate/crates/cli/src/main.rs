use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aklab::bench::{
    run_ablation, run_bench, run_mapping, run_overfit, run_sweep, summarize_files, summary_csv, write_overfit,
    write_run, CurveSummary, ExperimentConfig, Mode,
};
use aklab::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "aklab", version, about = "Gaussian-process active mapping experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration under one seed.
    Run(RunArgs),
    /// Kernel × strategy matrix over all seeds.
    Bench(RunArgs),
    /// Vary one kernel parameter over `sweep.values`.
    Sweep(RunArgs),
    /// Compare the attentive-kernel variants.
    Ablate(RunArgs),
    /// Train on scattered samples and trace train/test MSLL.
    Overfit(RunArgs),
    /// Summarize metric CSV files into mean ± std of curve averages.
    Summarize(SummarizeArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML experiment file; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First seed; multi-run commands use `experiment.seeds` consecutive seeds.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Override any config field, e.g. `--set kernel.num_bases=5`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    env: Option<String>,
    /// Elevation grid file; sets `env.kind = "file"`.
    #[arg(long)]
    env_file: Option<PathBuf>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    n_candidates: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    pilot: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    num_bases: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lmin: Option<f64>,
    #[arg(long)]
    lmax: Option<f64>,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "summary")]
    label: String,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let mut sets: Vec<String> = Vec::new();
        let mut flag = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                sets.push(format!("{key}={v}"));
            }
        };
        flag("env.kind", self.env.clone());
        if let Some(path) = &self.env_file {
            flag("env.kind", Some("file".into()));
            flag("env.path", Some(format!("{:?}", path.display().to_string())));
        }
        flag("kernel.name", self.kernel.clone());
        flag("strategy.name", self.strategy.clone());
        flag("strategy.n_candidates", self.n_candidates.map(|v| v.to_string()));
        flag("experiment.n_max", self.n_max.map(|v| v.to_string()));
        flag("experiment.pilot", self.pilot.map(|v| v.to_string()));
        flag("experiment.seeds", self.seeds.map(|v| v.to_string()));
        flag("experiment.resolution", self.resolution.map(|v| v.to_string()));
        flag("kernel.num_bases", self.num_bases.map(|v| v.to_string()));
        flag("kernel.hidden", self.hidden.map(|v| v.to_string()));
        flag("kernel.lmin", self.lmin.map(|v| format!("{v:?}")));
        flag("kernel.lmax", self.lmax.map(|v| format!("{v:?}")));
        sets.extend(self.sets.iter().cloned());
        for s in &sets {
            cfg.set(s)?;
        }
        cfg.experiment.seed = self.seed;
        if let Some(v) = &self.variant {
            cfg.kernel.variant = aklab::kernels::VariantKind::parse(v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summaries(summaries: &[CurveSummary]) {
    print!("{}", summary_csv(summaries));
}

fn create_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            create_dir(&args.out_dir)?;
            match cfg.experiment.mode {
                Mode::Mapping => {
                    let out = run_mapping(&cfg, cfg.experiment.seed)?;
                    write_run(&args.out_dir, &cfg, &out)?;
                    let last = out.records.last().expect("at least the pilot record");
                    println!(
                        "{} samples, final smse {:.4} msll {:.4} rmse {:.4}",
                        last.n_samples, last.metrics.smse, last.metrics.msll, last.metrics.rmse
                    );
                }
                Mode::Overfit => overfit(&cfg, &args.out_dir)?,
            }
        }
        Command::Overfit(args) => {
            let cfg = args.resolve()?;
            create_dir(&args.out_dir)?;
            overfit(&cfg, &args.out_dir)?;
        }
        Command::Bench(args) => {
            let cfg = args.resolve()?;
            print_summaries(&run_bench(&cfg, Some(&args.out_dir))?);
        }
        Command::Sweep(args) => {
            let cfg = args.resolve()?;
            print_summaries(&run_sweep(&cfg, Some(&args.out_dir))?);
        }
        Command::Ablate(args) => {
            let cfg = args.resolve()?;
            print_summaries(&run_ablation(&cfg, Some(&args.out_dir))?);
        }
        Command::Summarize(args) => {
            let paths: Vec<&Path> = args.files.iter().map(PathBuf::as_path).collect();
            let summary = summarize_files(&args.label, &paths)?;
            create_dir(&args.out_dir)?;
            let text = summary_csv(std::slice::from_ref(&summary));
            let path = args.out_dir.join("summary.csv");
            std::fs::write(&path, &text).map_err(|e| Error::Io { path, source: e })?;
            print!("{text}");
        }
    }
    Ok(())
}

fn overfit(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(), Error> {
    let records = run_overfit(cfg, cfg.experiment.seed)?;
    write_overfit(out_dir, &records)?;
    let last = records.last().expect("initial record");
    println!(
        "{} iterations, train msll {:.4}, test msll {:.4}",
        last.iter, last.train_msll, last.test_msll
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else if e.is_numerical_error() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
