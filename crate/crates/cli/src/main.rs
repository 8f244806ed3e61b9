use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use teamprod::pipeline::{Outcome, Pipeline, PipelineConfig, PipelineError, Stage};
use teamprod::synthkit::{gen_mini_corpus, gen_simpson_dataset, write_synthetic_repo, SimpsonSpec, SynthError, SyntheticPlan};

#[derive(Parser)]
#[command(name = "teamprod", version, about = "Mine repositories and relate team size to productivity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, default_value = "teamprod.toml")]
    config: PathBuf,
    /// Override the sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Recompute stages whose configuration changed.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Apply the selection filters to the catalog.
    Filter(Common),
    /// Draw the stratified sample.
    Sample(Common),
    /// Replay histories and compute per-commit metrics.
    Mine(Common),
    /// Segment histories into windows and aggregate productivity.
    Window(Common),
    /// Build co-editing networks per window.
    Network(Common),
    /// Transform, correlate and fit the regression battery.
    Stats(Common),
    /// Render the text report.
    Report(Common),
    /// Run every stage in order.
    All(Common),
    /// Generate synthetic inputs.
    #[command(subcommand)]
    Synth(Synth),
}

#[derive(Subcommand)]
enum Synth {
    /// A commit dump with a ground-truth sidecar.
    Repo {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// A grouped observation table whose pooled and within-group slopes disagree.
    Simpson {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// A small corpus of dumps plus a catalog.
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let code = match cli.command {
        Command::Synth(s) => synth(s).map_err(|e| {
            let code = match e {
                SynthError::Io(_) => 3,
                SynthError::Toml(_) => 1,
                _ => 2,
            };
            (e.to_string(), code)
        }),
        Command::Filter(c) => stages(&c, &[Stage::Filter]),
        Command::Sample(c) => stages(&c, &[Stage::Sample]),
        Command::Mine(c) => stages(&c, &[Stage::Mine]),
        Command::Window(c) => stages(&c, &[Stage::Window]),
        Command::Network(c) => stages(&c, &[Stage::Network]),
        Command::Stats(c) => stages(&c, &[Stage::Stats]),
        Command::Report(c) => stages(&c, &[Stage::Report]),
        Command::All(c) => stages(&c, &Stage::ALL),
    };
    match code {
        Ok(()) => ExitCode::SUCCESS,
        Err((msg, code)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn stages(c: &Common, which: &[Stage]) -> Result<(), (String, u8)> {
    let fail = |e: PipelineError| (e.to_string(), e.exit_code() as u8);
    let mut cfg = PipelineConfig::load(&c.config).map_err(fail)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(j) = c.jobs {
        cfg.jobs = j;
    }
    let mut p = Pipeline::new(cfg, c.force).map_err(fail)?;
    for &s in which {
        let o = p.run(s).map_err(fail)?;
        let state = if o == Outcome::Ran { "done" } else { "up to date" };
        eprintln!("{s:<8} {state}");
    }
    Ok(())
}

fn read(path: &Path) -> Result<String, SynthError> {
    Ok(fs::read_to_string(path)?)
}

fn synth(s: Synth) -> Result<(), SynthError> {
    match s {
        Synth::Repo { plan, out } => {
            let plan = match plan {
                Some(p) => SyntheticPlan::from_toml_str(&read(&p)?)?,
                None => SyntheticPlan::default(),
            };
            let (dump, commits, _) = write_synthetic_repo(&plan, &out)?;
            eprintln!("{} ({} commits)", dump.display(), commits.len());
        }
        Synth::Simpson { spec, out } => {
            let spec = match spec {
                Some(p) => toml::from_str(&read(&p)?)?,
                None => SimpsonSpec::default(),
            };
            let ds = gen_simpson_dataset(&spec)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            ds.write_csv(fs::File::create(&out)?).map_err(|e| SynthError::Io(e.into()))?;
            let mut truth = out.clone().into_os_string();
            truth.push(".truth.json");
            let sidecar = serde_json::json!({ "spec": spec, "expected_pooled_slope": ds.expected_pooled_slope });
            fs::write(PathBuf::from(truth), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        }
        Synth::Corpus { out, count, seed } => {
            let metas = gen_mini_corpus(&out, count, seed)?;
            eprintln!("{} projects in {}", metas.len(), out.display());
        }
    }
    Ok(())
}
