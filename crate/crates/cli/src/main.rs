use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bevlab_core::harness::{
    cmd_ablate_pool, cmd_bench, cmd_distill, cmd_fuse, cmd_gen, cmd_gradcheck, format_number, init_thread_pool, write_outputs,
    RunConfig, RunReport,
};
use clap::{Args, Parser, Subcommand};

/// Contrastive BEV distillation and linear-attention fusion lab.
#[derive(Parser, Debug)]
#[command(name = "bevlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run config; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override one config key, e.g. `--set icd.pool_size=9`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (default `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write a JSON mirror of the report.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic scenes as tensor and box files.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the student against the frozen teacher with the instance contrastive loss.
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fuse a lidar and an image BEV tensor file.
    Fuse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lidar: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        /// Params bundle directory; omitted means fresh weights from the seed.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Use the quadratic attention order.
        #[arg(long)]
        oracle: bool,
    },
    /// Time linear against quadratic attention.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sequence lengths.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        quadratic_max: Option<usize>,
    },
    /// Check every analytical gradient against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat distillation for each pooled crop size.
    AblatePool {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen { common, .. }
            | Command::Distill { common, .. }
            | Command::Fuse { common, .. }
            | Command::Bench { common, .. }
            | Command::Gradcheck { common }
            | Command::AblatePool { common } => common,
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    for o in &common.overrides {
        cfg.apply_override(o).with_context(|| format!("applying --set {o}"))?;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    cfg.output.json |= common.json;
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn print_summary(report: &RunReport) {
    for (k, v) in &report.summary {
        println!("{k} = {}", format_number(*v));
    }
    for n in &report.notes {
        println!("note: {n}");
    }
}

/// Runs the command; `Ok(false)` means it finished but an internal check failed.
fn run(cli: Cli) -> Result<bool> {
    init_thread_pool()?;
    let mut cfg = resolve(cli.command.common())?;
    let report = match cli.command {
        Command::Gen { count, .. } => {
            set(&mut cfg.gen.count, count);
            cfg.validate()?;
            cmd_gen(&cfg, &cfg.output.dir)?
        }
        Command::Distill { steps, .. } => {
            set(&mut cfg.optim.steps, steps);
            cmd_distill(&cfg)?
        }
        Command::Fuse { lidar, image, params, oracle, .. } => {
            set(&mut cfg.fuse.lidar, lidar);
            set(&mut cfg.fuse.image, image);
            set(&mut cfg.fuse.params, params);
            cfg.fuse.oracle |= oracle;
            let (report, path) = cmd_fuse(&cfg, &cfg.output.dir)?;
            println!("wrote {}", path.display());
            report
        }
        Command::Bench { lengths, trials, quadratic_max, .. } => {
            set(&mut cfg.bench.lengths, lengths);
            set(&mut cfg.bench.trials, trials);
            set(&mut cfg.bench.quadratic_max, quadratic_max);
            cmd_bench(&cfg)?.0
        }
        Command::Gradcheck { .. } => cmd_gradcheck(&cfg)?,
        Command::AblatePool { .. } => cmd_ablate_pool(&cfg)?,
    };
    let written = write_outputs(&report, &cfg, &cfg.output.dir)?;
    print_summary(&report);
    for p in written {
        println!("wrote {}", p.display());
    }
    let ok = match report.command.as_str() {
        "gradcheck" => report.get("all_pass") == Some(1.0),
        "distill" => report.get("teacher_frozen") == Some(1.0),
        _ => true,
    };
    Ok(ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("bevlab: checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("bevlab: {e:#}");
            ExitCode::from(2)
        }
    }
}
