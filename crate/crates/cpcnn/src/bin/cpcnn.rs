//! Command-line front end: graph generation and inspection, block
//! compilation, mask dumps, training, evaluation, sweeps, and the gradient
//! check suite.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use cpcnn::config::{train_config_from, Config};
use cpcnn::data::{find_cifar10, load_cifar10, synth_dataset, Dataset, Split};
use cpcnn::dag::{compile_block, topo_order, write_block_graph};
use cpcnn::graph::{block_density_stats, read_graph, write_graph};
use cpcnn::mask::{build_channel_mask, relational_bipartite, write_mask_dump, mask_density};
use cpcnn::model::{build_model, Model};
use cpcnn::rng::stream;
use cpcnn::train::{
    aggregate_sweep, evaluate, run_records_csv, seeded_subset, sweep, sweep_aggregate_csv,
    sweep_csv, EpochRecord, TrainConfig, Trainer,
};
use cpcnn::{Error, Result, Seed};

#[derive(Parser)]
#[command(name = "cpcnn", version, about = "Core-periphery guided CNN toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate or inspect relational graphs.
    Graph {
        #[command(subcommand)]
        cmd: GraphCmd,
    },
    /// Compile a relational graph into a block computation graph.
    Compile {
        /// Graph file produced by `graph gen`.
        #[arg(long)]
        graph: PathBuf,
        /// Label-permutation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Channel-mask utilities.
    Mask {
        #[command(subcommand)]
        cmd: MaskCmd,
    },
    /// Train a model and write records plus a checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory for run artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint file to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train one model per (family, core count, seed) cell and write CSVs.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory for sweep CSVs.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated graph families.
        #[arg(long, default_value = "cp")]
        families: String,
        /// Comma-separated core counts.
        #[arg(long, default_value = "2,8,14")]
        core_counts: String,
        /// Comma-separated seeds, one model per seed.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
    },
    /// Finite-difference gradient checks for every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Sample a graph and write the text format.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print node, edge, and block-density statistics for a graph file.
    Stats {
        file: PathBuf,
        /// Core count for the block split (defaults to the file's core line).
        #[arg(long)]
        core: Option<u32>,
    },
}

#[derive(Subcommand)]
enum MaskCmd {
    /// Write the 0/1 channel-mask rows for a graph at given widths.
    Dump {
        /// Graph file produced by `graph gen`.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        in_channels: u32,
        #[arg(long)]
        out_channels: u32,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Configuration sourcing shared by model-building commands: an optional
/// key=value file plus repeatable `--set key=value` overrides.
#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn merged(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::new(),
        };
        cfg.apply_overrides(&self.sets)?;
        cfg.ensure_known_keys()?;
        Ok(cfg)
    }

    fn train_config(&self) -> Result<(Config, TrainConfig)> {
        let cfg = self.merged()?;
        let train = train_config_from(&cfg)?;
        Ok((cfg, train))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset root directory (else the environment variable, else `data`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset to use.
    #[arg(long, default_value = "cifar10", value_parser = ["cifar10", "synth"])]
    dataset: String,
    /// Training samples for the synthetic dataset.
    #[arg(long, default_value_t = 2048)]
    synth_train: usize,
    /// Evaluation samples for the synthetic dataset.
    #[arg(long, default_value_t = 512)]
    synth_eval: usize,
    /// Noise level for the synthetic dataset.
    #[arg(long, default_value_t = 0.15)]
    synth_noise: f64,
}

impl RunArgs {
    /// Loads (train, eval) per the dataset choice, applying seeded subset
    /// selection from the training configuration.
    fn datasets(&self, cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
        let data_seed = Seed(cfg.data_seed);
        let (train, eval) = match self.dataset.as_str() {
            "synth" => {
                let classes = cfg.model.num_classes;
                let size = cfg.model.image_size;
                let train = synth_dataset(
                    self.synth_train,
                    classes,
                    size,
                    self.synth_noise,
                    data_seed.child(stream::SYNTH).child(0),
                )?;
                let eval = synth_dataset(
                    self.synth_eval,
                    classes,
                    size,
                    self.synth_noise,
                    data_seed.child(stream::SYNTH).child(1),
                )?;
                (train, eval)
            }
            _ => {
                let dir = find_cifar10(self.data.as_deref()).ok_or_else(|| {
                    Error::Config(
                        "no CIFAR-10 data found; pass --data or set the data directory \
                         environment variable"
                            .into(),
                    )
                })?;
                (load_cifar10(&dir, Split::Train)?, load_cifar10(&dir, Split::Test)?)
            }
        };
        let train = seeded_subset(&train, cfg.train_subset, data_seed.child(stream::SUBSET).child(0))?;
        let eval = seeded_subset(&eval, cfg.eval_subset, data_seed.child(stream::SUBSET).child(1))?;
        Ok((train, eval))
    }
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_record(r: &EpochRecord, total: u32) {
    let eval = r.eval_acc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
    println!(
        "epoch {}/{} loss {:.4} acc {:.4} eval {} lr {:.6e} ({:.1}s)",
        r.epoch, total, r.train_loss, r.train_acc, eval, r.lr, r.wall_s
    );
}

/// Writes the generated graph, the per-block computation graphs, and the
/// effective configuration next to the run records.
fn write_model_description(dir: &Path, cfg: &Config, model: &Model) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.render())?;
    fs::write(dir.join("graph.txt"), write_graph(&model.graph))?;
    for (k, bg) in model.block_graphs().iter().enumerate() {
        fs::write(dir.join(format!("block{k}.txt")), write_block_graph(bg))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Graph { cmd } => match cmd {
            GraphCmd::Gen { cfg, out } => {
                let merged = cfg.merged()?;
                let model_cfg = cpcnn::config::graph_config_from(&merged)?;
                let graph = model_cfg.generate_graph()?;
                write_out(out.as_deref(), &write_graph(&graph))
            }
            GraphCmd::Stats { file, core } => {
                let graph = read_graph(&fs::read_to_string(&file)?)?;
                let n_c = core.unwrap_or(graph.core);
                let stats = block_density_stats(&graph, n_c)?;
                println!("nodes {}", graph.n);
                println!("core {n_c}");
                println!("edges {}", graph.edge_count());
                println!("d_cc {:.6}", stats.d_cc);
                println!("d_cp {:.6}", stats.d_cp);
                println!("d_pp {:.6}", stats.d_pp);
                println!("density {:.6}", stats.overall);
                Ok(())
            }
        },
        Cmd::Compile { graph, seed, out } => {
            let g = read_graph(&fs::read_to_string(&graph)?)?;
            let bg = compile_block(&g, Seed(seed).child(stream::LABELS));
            topo_order(&bg)?;
            write_out(out.as_deref(), &write_block_graph(&bg))
        }
        Cmd::Mask { cmd } => match cmd {
            MaskCmd::Dump { graph, in_channels, out_channels, out } => {
                let g = read_graph(&fs::read_to_string(&graph)?)?;
                let constraint = relational_bipartite(&g);
                let mask = build_channel_mask(&constraint, in_channels, out_channels)?;
                eprintln!("density {:.6}", mask_density(&mask));
                write_out(out.as_deref(), &write_mask_dump(&mask))
            }
        },
        Cmd::Train { run, out, resume } => {
            let (raw_cfg, cfg) = run.cfg.train_config()?;
            let (train_set, eval_set) = run.datasets(&cfg)?;
            let epochs = cfg.epochs;
            let mut trainer = match &resume {
                Some(ckpt) => Trainer::resume(cfg, ckpt)?,
                None => Trainer::new(cfg)?,
            };
            write_model_description(&out, &raw_cfg, &trainer.model)?;
            let report = trainer.model.count_report();
            println!(
                "params {} effective {} flops/image {} effective {}",
                report.params_dense,
                report.params_effective,
                report.flops_dense,
                report.flops_effective
            );
            let records = trainer.train_verbose(&train_set, Some(&eval_set), |r| {
                print_record(r, epochs)
            })?;
            fs::write(out.join("run.csv"), run_records_csv(&records))?;
            trainer.save(&out.join("model.ckpt"))?;
            if let Some(last) = records.last() {
                if let Some(acc) = last.eval_acc {
                    println!("final eval accuracy {acc:.4}");
                }
            }
            Ok(())
        }
        Cmd::Eval { run, checkpoint } => {
            let (_, cfg) = run.cfg.train_config()?;
            let (_, eval_set) = run.datasets(&cfg)?;
            let tensors = cpcnn::checkpoint::load_checkpoint(&checkpoint)?;
            let model_tensors: Vec<_> = tensors
                .into_iter()
                .filter(|t| !t.name.starts_with("optim.") && t.name != "meta.progress")
                .collect();
            let mut model = build_model(&cfg.model)?;
            model.load_named_tensors(&model_tensors)?;
            let acc = evaluate(&model, &eval_set, cfg.batch_size)?;
            println!("accuracy {acc:.6}");
            Ok(())
        }
        Cmd::Sweep { run, out, families, core_counts, seeds } => {
            let (_, cfg) = run.cfg.train_config()?;
            let fams = parse_families(&families)?;
            let cores = parse_list::<u32>(&core_counts, "core count")?;
            let seed_list = parse_list::<u64>(&seeds, "seed")?;
            let (train_set, eval_set) = run.datasets(&cfg)?;
            fs::create_dir_all(&out)?;
            let cells = sweep(&cfg, &fams, &cores, &seed_list, &train_set, &eval_set, |c| {
                println!(
                    "cell family {} core {} seed {} eval {:.4}",
                    c.family.as_str(),
                    c.core_count,
                    c.seed,
                    c.eval_acc
                );
            })?;
            fs::write(out.join("cells.csv"), sweep_csv(&cells))?;
            fs::write(out.join("aggregate.csv"), sweep_aggregate_csv(&aggregate_sweep(&cells)))?;
            Ok(())
        }
        Cmd::Gradcheck { trials, seed } => {
            let reports = cpcnn::gradcheck::run_full_suite(trials, Seed(seed))?;
            let mut worst: Option<&cpcnn::gradcheck::GradCheckReport> = None;
            for r in &reports {
                let ok = r.max_rel_err < 1e-4;
                println!(
                    "{} {} trials {} max_rel_err {:.3e}",
                    if ok { "pass" } else { "FAIL" },
                    r.op,
                    r.trials,
                    r.max_rel_err
                );
                if !ok && worst.map_or(true, |w| r.max_rel_err > w.max_rel_err) {
                    worst = Some(r);
                }
            }
            match worst {
                Some(r) => Err(Error::Internal(format!(
                    "gradient check failed for {}: max relative error {:.3e}",
                    r.op, r.max_rel_err
                ))),
                None => Ok(()),
            }
        }
    }
}

fn parse_families(raw: &str) -> Result<Vec<cpcnn::model::GraphFamily>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(cpcnn::model::GraphFamily::parse)
        .collect()
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::Config(format!("cannot parse {what} {s:?}")))
        })
        .collect()
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error code={} msg={:?}", e.code(), e.to_string());
        std::process::exit(1);
    }
}
