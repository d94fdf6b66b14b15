use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rlde_afl::harness::{
    aei, aggregate, compare, curves, load_records, run_experiment_with, summary_csv, AeiInputs,
    Algorithm, ExperimentConfig,
};
use rlde_afl::policy::PolicyWeights;
use rlde_afl::problems::{make_instance, Problem, TRAIN_IDS};
use rlde_afl::trainer::{train, TrainOutputs};

#[derive(Parser)]
#[command(name = "rlde-afl", version, about = "Learned operator control for differential evolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy on the training functions.
    Train(Common),
    /// Benchmark a trained policy.
    Evaluate(Common),
    /// Benchmark a baseline (random-action, vanilla-de, random-search).
    Baseline {
        #[arg(long)]
        algorithm: String,
        #[command(flatten)]
        common: Common,
    },
    /// Aggregated evaluation indicator against a random-search baseline.
    Aei {
        #[arg(long)]
        subject: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
    },
    /// Median and interquartile band of best-so-far per milestone.
    Curves {
        #[arg(long)]
        records: Vec<PathBuf>,
        /// Comma-separated evaluation counts; defaults to all recorded milestones.
        #[arg(long, value_delimiter = ',')]
        milestones: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-problem rank-sum verdicts and +/-/≈ counts.
    Compare {
        #[arg(long)]
        subject: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed of run 0 (training seed for `train`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    max_fe: Option<usize>,
}

impl Common {
    fn resolve(&self, algorithm: Option<Algorithm>) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::parse(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(a) = algorithm {
            c.algorithm = a;
        }
        if let Some(p) = &self.checkpoint {
            c.checkpoint = Some(p.clone());
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(r) = self.runs {
            c.runs = r;
        }
        if let Some(d) = self.dim {
            c.dim = d;
        }
        if let Some(m) = self.max_fe {
            c.max_fe = m;
        }
        Ok(c)
    }
}

fn run_benchmark(config: ExperimentConfig, out: &Path) -> Result<()> {
    config.validate()?;
    let problems = config.problems()?;
    let records = run_experiment_with(&config, &problems, Some(out))?;
    if config.runs >= 2 {
        fs::write(out.join("summary.csv"), summary_csv(&aggregate(&records)?))?;
    }
    println!("{} runs written to {}", records.len(), out.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(common) => {
            let mut config = common.resolve(None)?;
            // evaluation needs a checkpoint, training does not
            config.checkpoint = None;
            let ids = config.functions.clone().unwrap_or_else(|| TRAIN_IDS.to_vec());
            let problems = ids
                .iter()
                .map(|&f| Ok(Arc::new(make_instance(f, config.dim, config.instance_seed)?) as Arc<dyn Problem>))
                .collect::<rlde_afl::Result<Vec<_>>>()?;
            let trainer = config.trainer_config();
            let initial = common.checkpoint.as_deref().map(PolicyWeights::load).transpose()?;
            fs::create_dir_all(&common.out)?;
            fs::write(common.out.join("config.toml"), config.to_toml()?)?;
            let outputs = TrainOutputs {
                log_path: Some(common.out.join("train.csv")),
                checkpoint_dir: Some(common.out.join("checkpoints")),
            };
            train(&trainer, &problems, initial, &outputs)?;
            println!(
                "trained {} epochs on {} functions; checkpoint {}",
                trainer.epochs,
                problems.len(),
                common.out.join("checkpoints/final.json").display()
            );
        }
        Command::Evaluate(common) => {
            let config = common.resolve(Some(Algorithm::RldeAfl))?;
            if config.checkpoint.is_none() {
                bail!("evaluate needs --checkpoint or a checkpoint key in the config");
            }
            run_benchmark(config, &common.out)?;
        }
        Command::Baseline { algorithm, common } => {
            let algorithm = Algorithm::parse(&algorithm)?;
            if algorithm == Algorithm::RldeAfl {
                bail!("use `evaluate` for the learned policy");
            }
            run_benchmark(common.resolve(Some(algorithm))?, &common.out)?;
        }
        Command::Aei { subject, baseline } => {
            let s = load_records(&subject)?;
            let b = load_records(&baseline)?;
            let score = aei(&AeiInputs::from_records(&s), &AeiInputs::from_records(&b))?;
            println!("{score}");
        }
        Command::Curves { records, milestones, out } => {
            let mut all = Vec::new();
            for r in &records {
                all.extend(load_records(r)?);
            }
            let Some(first) = all.first() else {
                bail!("no records");
            };
            let ms = if milestones.is_empty() {
                first.milestones.clone()
            } else {
                milestones
            };
            let csv = curves(&all, &ms)?;
            match out {
                Some(p) => fs::write(p, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Compare { subject, baseline, alpha } => {
            let s = load_records(&subject)?;
            let b = load_records(&baseline)?;
            let name = |r: &[rlde_afl::harness::RunRecord], p: &Path| {
                r.first().map_or_else(|| p.display().to_string(), |x| x.algorithm.clone())
            };
            let table = compare(&s, &b, alpha)?;
            print!("{}", table.render(&name(&s, &subject), &name(&b, &baseline)));
        }
    }
    Ok(())
}
