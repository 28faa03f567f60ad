use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use embedmix::eval::{bench_augmentor, BenchShapes};
use embedmix::experiment::{self, AugmentorKind, ExperimentConfig};
use embedmix::mixnet::{Branches, MixNet};
use embedmix::opt::OptConfig;
use embedmix::sim::{save_sequence, Augmentor, TrackerMode};
use embedmix::Rng;

#[derive(Parser)]
#[command(name = "embedmix", version, about = "Embedding mixing for online tracker updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Siamese,
    Classifier,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Dual,
    Single,
}

#[derive(Clone, Copy, ValueEnum)]
enum AugArg {
    None,
    Mixnet,
    Single,
    Opt,
}

impl AugArg {
    fn kind(self) -> AugmentorKind {
        match self {
            AugArg::None => AugmentorKind::None,
            AugArg::Mixnet => AugmentorKind::Mixnet,
            AugArg::Single => AugmentorKind::Single,
            AugArg::Opt => AugmentorKind::Opt,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a mixing network and write it as a weight file.
    Train {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "dual")]
        branches: BranchArg,
    },
    /// Track generated sequences with one augmentor and write its CSVs.
    Track {
        /// Weight file for the mixnet or single augmentor.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "none")]
        augmentor: AugArg,
        #[arg(long)]
        seqs: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize a results directory into summary.json and success_plot.csv.
    Eval {
        #[arg(long)]
        results: PathBuf,
    },
    /// Time kernel prediction against online kernel optimization.
    Bench {
        /// N,C,H,W of the sample bank.
        #[arg(long, default_value = "50,32,22,22")]
        shapes: BenchShapes,
        #[arg(long, default_value_t = 20)]
        reps: usize,
    },
    /// Full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One small end-to-end run.
    Demo {
        #[arg(long, default_value = "embedmix-demo")]
        out: PathBuf,
    },
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn pair(k: &str, v: impl ToString) -> (String, String) {
    (k.to_owned(), v.to_string())
}

fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p, overrides)?,
        None => ExperimentConfig::from_pairs(overrides)?,
    })
}

fn train(mode: Mode, config: Option<&Path>, out: &Path, branches: BranchArg) -> Result<()> {
    let mode = match mode {
        Mode::Siamese => TrackerMode::Siamese,
        Mode::Classifier => TrackerMode::Classifier,
    };
    let cfg = load_config(config, &[pair("mode", mode)])?;
    let branches = match branches {
        BranchArg::Dual => Branches::Dual,
        BranchArg::Single => Branches::Single,
    };
    let (net, velocity) = experiment::train_network(&cfg, branches, &mut |m| log(m))?;
    net.save(out, Some(&velocity)).with_context(|| format!("writing {}", out.display()))?;
    log(&format!("wrote {}", out.display()));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn track(
    weights: Option<&Path>,
    augmentor: AugArg,
    seqs: Option<usize>,
    frames: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    config: Option<&Path>,
) -> Result<()> {
    let kind = augmentor.kind();
    let mut overrides = vec![pair("augmentors", kind)];
    overrides.extend(seqs.map(|v| pair("sequences", v)));
    overrides.extend(frames.map(|v| pair("frames", v)));
    overrides.extend(seed.map(|v| pair("seed", v)));
    match (kind, weights) {
        (AugmentorKind::Mixnet, Some(w)) => overrides.push(pair("weights", w.display())),
        (AugmentorKind::Single, Some(w)) => overrides.push(pair("single_weights", w.display())),
        (_, Some(_)) => bail!("--weights only applies to the mixnet and single augmentors"),
        _ => {}
    }
    let cfg = load_config(config, &overrides)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let nets = experiment::prepare_networks(&cfg, out, &mut |m| log(m))?;
    let run = experiment::track_sequences(&cfg, kind, &nets, &mut |m| log(m))?;
    experiment::write_run(out, kind, &run)?;
    log(&format!("wrote {}", out.join(kind.frames_file()).display()));
    Ok(())
}

fn bench(shapes: BenchShapes, reps: usize) -> Result<()> {
    let mut rng = Rng::new(3);
    let dual = MixNet::<f32>::new(shapes.n, shapes.n, Branches::Dual, &mut rng)?;
    let single = MixNet::<f32>::new(shapes.n, shapes.n, Branches::Single, &mut rng)?;
    let mixnet = bench_augmentor(&shapes, &Augmentor::Net(&dual), reps)?;
    let single = bench_augmentor(&shapes, &Augmentor::Net(&single), reps)?;
    let opt = bench_augmentor(&shapes, &Augmentor::<f32>::Opt(OptConfig::default()), reps)?;
    let report = json!({
        "shapes": shapes,
        "repetitions": reps,
        "mixnet": { "median": mixnet.median, "p90": mixnet.p90 },
        "single": { "median": single.median, "p90": single.p90 },
        "opt": { "median": opt.median, "p90": opt.p90 },
        "opt_over_mixnet": opt.median / mixnet.median,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn demo(out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::parse(
        "augmentors=none,mixnet,opt\nsequences=1\nframes=60\nheight=48\nwidth=48\nobject_w=12\nobject_h=12\n\
         capacity=10\nepochs=1\nsamples_per_epoch=4\n",
    )?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let fixture = out.join("sequence_000.dmix");
    save_sequence(&cfg.sequence(0)?, &fixture)?;
    log(&format!("wrote {}", fixture.display()));
    let summary = experiment::run_with_config(&cfg, out, &mut |m| log(m))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            mode,
            config,
            out,
            branches,
        } => train(mode, config.as_deref(), &out, branches),
        Command::Track {
            weights,
            augmentor,
            seqs,
            frames,
            seed,
            out,
            config,
        } => track(weights.as_deref(), augmentor, seqs, frames, seed, &out, config.as_deref()),
        Command::Eval { results } => {
            let summary = experiment::evaluate_dir(&results)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Bench { shapes, reps } => bench(shapes, reps),
        Command::Run { config, out } => {
            let summary = experiment::run_experiment(&config, &out, &mut |m| log(m))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Demo { out } => demo(&out),
    }
}
