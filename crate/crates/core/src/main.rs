use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use texflow::pipeline::{self, PipelineConfig};
use texflow::{selfcheck, Error, Result};

#[derive(Parser)]
#[command(name = "texflow", version, about = "Texture anomaly detection with normalizing flows and sparse coding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set flow_epochs=20` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory [default: $TEXFLOW_OUT or ./texflow-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for patch-level parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset as MVTec-style PGM directories.
    Synth(Common),
    /// Train the patch extractor on the CutPaste task.
    PretextTrain(Common),
    /// Extract training features and fit the normalizing flow.
    FlowTrain(Common),
    /// Learn the dictionary and freeze scoring statistics.
    DictLearn(Common),
    /// Score the test split.
    Score(Common),
    /// Compute AUCs and write the report.
    Eval(Common),
    /// Run every stage.
    Run(Common),
    /// Run the gradient and oracle property checks.
    Selfcheck {
        #[arg(long)]
        threads: Option<usize>,
    },
}

impl Common {
    fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("TEXFLOW_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("texflow-out"))
    }

    fn load(&self) -> Result<PipelineConfig> {
        let mut set = self.set.clone();
        if let Some(s) = self.seed {
            set.push(format!("seed={s}"));
        }
        match &self.config {
            Some(p) => PipelineConfig::from_file(p, &set),
            None => PipelineConfig::from_json("{}", &set),
        }
        .map_err(|e| e.in_stage("config"))
    }
}

fn init_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn stage(
    c: &Common,
    name: &'static str,
    f: impl FnOnce(&PipelineConfig, &std::path::Path, &[texflow::texgen::Category]) -> Result<()>,
) -> Result<()> {
    init_threads(c.threads)?;
    let cfg = c.load()?;
    let out = c.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let cats = pipeline::load_dataset(&cfg).map_err(|e| e.in_stage("data"))?;
    f(&cfg, &out, &cats).map_err(|e| e.in_stage(name))?;
    println!("{name}: done ({})", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => {
            init_threads(c.threads)?;
            let cfg = c.load()?;
            for dir in pipeline::stage_synth(&cfg, &c.out_dir()).map_err(|e| e.in_stage("synth"))? {
                println!("wrote {}", dir.display());
            }
            Ok(())
        }
        Command::PretextTrain(c) => stage(&c, "pretext-train", pipeline::stage_pretext),
        Command::FlowTrain(c) => stage(&c, "flow-train", pipeline::stage_flow),
        Command::DictLearn(c) => stage(&c, "dict-learn", pipeline::stage_dict),
        Command::Score(c) => stage(&c, "score", pipeline::stage_score),
        Command::Eval(c) => {
            let start = Instant::now();
            let mut report = None;
            stage(&c, "eval", |cfg, out, cats| {
                report = Some(pipeline::stage_eval(cfg, out, cats, start.elapsed().as_secs_f64())?);
                Ok(())
            })?;
            print!("{}", report.expect("eval ran").report_csv());
            Ok(())
        }
        Command::Run(c) => {
            init_threads(c.threads)?;
            let cfg = c.load()?;
            let report = pipeline::run_experiment(&cfg, &c.out_dir())?;
            print!("{}", report.report_csv());
            println!("runtime: {:.1} s", report.runtime_secs);
            Ok(())
        }
        Command::Selfcheck { threads } => {
            init_threads(threads)?;
            let results = selfcheck::run_all();
            let mut failed = 0;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Error::Stage {
                    stage: "selfcheck".into(),
                    source: Box::new(Error::Numeric(format!("{failed} of {} checks failed", results.len()))),
                });
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
