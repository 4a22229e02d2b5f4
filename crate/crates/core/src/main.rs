use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tracegraph::cli;
use tracegraph::config::{RunConfig, Selection};
use tracegraph::Error;

#[derive(Parser, Debug)]
#[command(name = "tracegraph", version, about = "Cluster-transition rewards for reasoning traces")]
struct Args {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a config value, e.g. `--set sae.epochs=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set work_dir=DIR`.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SelectArg {
    All,
    Reference,
    Other,
}

impl From<SelectArg> for Selection {
    fn from(s: SelectArg) -> Self {
        match s {
            SelectArg::All => Selection::All,
            SelectArg::Reference => Selection::Reference,
            SelectArg::Other => Selection::Other,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the effective configuration as TOML.
    InitConfig,
    /// Generate a synthetic Markov-chain corpus with known latent states.
    GenSynthetic,
    /// Train the TopK sparse autoencoder on the embeddings.
    TrainSae,
    /// Fit spherical k-means on SAE codes and assign every token.
    Cluster,
    /// Count cluster transitions over reference sequences.
    BuildGraph,
    /// Score every sequence against the transition graph.
    Score {
        #[arg(long, value_enum)]
        select: Option<SelectArg>,
    },
    /// Compute entropy, DTW and KL metrics across groups.
    Metrics,
    /// Roll out the graph policy over a temperature sweep.
    Sweep,
    /// Write the transition graph as TSV.
    ExportGraph {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(args: Args) -> Result<(), Error> {
    let mut overrides = args.overrides;
    if let Some(dir) = &args.work_dir {
        overrides.push(format!("work_dir={:?}", dir.display().to_string()));
    }
    let cfg = RunConfig::load(args.config.as_deref(), &overrides, args.seed)?;
    match args.command {
        Command::InitConfig => print!("{}", cfg.to_toml()),
        Command::GenSynthetic => {
            cli::cmd_gen_synthetic(&cfg)?;
        }
        Command::TrainSae => {
            let report = cli::cmd_train_sae(&cfg)?;
            if let Some(loss) = report.epoch_losses.last() {
                println!("final_loss\t{loss}");
            }
        }
        Command::Cluster => {
            let summary = cli::cmd_cluster(&cfg)?;
            println!("inertia\t{}", summary.fit.model.inertia);
        }
        Command::BuildGraph => {
            let g = cli::cmd_build_graph(&cfg)?;
            println!("edges\t{}\ntransitions\t{}", g.num_edges(), g.total_transitions());
        }
        Command::Score { select } => {
            let (_, means) = cli::cmd_score(&cfg, select.map(Selection::from))?;
            for m in means {
                println!("{}\t{}\t{}\t{}", m.tag, m.count, m.mean_reward, m.mean_per_token_reward);
            }
        }
        Command::Metrics => {
            let report = cli::cmd_metrics(&cfg)?;
            print!("{}", report.to_json());
        }
        Command::Sweep => {
            let rows = cli::cmd_sweep(&cfg)?;
            print!("{}", tracegraph::policy::sweep_tsv(&rows));
        }
        Command::ExportGraph { out } => {
            let path = cli::cmd_export_graph(&cfg, out.as_deref())?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
