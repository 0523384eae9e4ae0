#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use genretopic::dataset::scan_dataset;
use genretopic::par::Execution;
use genretopic::pipeline::{run_all, RunConfig, Stage};
use genretopic::synth::{write_fixture, FixtureSpec};

/// Acoustic topic models over genre-labelled WAV collections.
#[derive(Parser)]
#[command(name = "genretopic", version)]
struct Cli {
    /// Log stage progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the songs a dataset directory resolves to.
    Scan {
        #[arg(long)]
        data: PathBuf,
        /// Also write the resolved manifest as CSV here.
        #[arg(long)]
        manifest_out: Option<PathBuf>,
    },
    /// Extract per-clip MFCC features.
    Features(RunArgs),
    /// Fit the k-means codebook.
    Vocab(RunArgs),
    /// Train one LDA model per topic count and infer test thetas.
    Train(RunArgs),
    /// Compute word, topic, document, term and timeline genre profiles.
    Interpret(RunArgs),
    /// Classify songs from their thetas and write the accuracy grid.
    Eval(RunArgs),
    /// Render charts and the JSON report.
    Viz(RunArgs),
    /// Every stage, for every selected bucket.
    RunAll(RunArgs),
    /// Write a synthetic labelled dataset of tones and noise.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated genre labels.
        #[arg(long, value_delimiter = ',', default_values_t = ["rock".to_string(), "metal".to_string(), "pop".to_string()])]
        genres: Vec<String>,
        #[arg(long, default_value_t = 3)]
        songs_per_genre: usize,
        #[arg(long, default_value_t = 3.0)]
        seconds: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Dataset root: genre subdirectories of WAV files, or a manifest.csv.
    #[arg(long)]
    data: PathBuf,
    /// TOML or JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bucket ids to run (default: all configured buckets).
    #[arg(long, value_delimiter = ',')]
    bucket: Vec<u8>,
    #[arg(long)]
    clip_seconds: Option<f64>,
    #[arg(long)]
    codebook_size: Option<usize>,
    /// Comma-separated topic counts.
    #[arg(long, value_delimiter = ',')]
    topics: Option<Vec<usize>>,
    /// Topic count to interpret and chart.
    #[arg(long)]
    interpret_topics: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Gibbs sweeps for training.
    #[arg(long)]
    iters: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
}

/// The parsed config, and whether the file pins `interpret_topics` itself.
fn load_config(path: &Path) -> Result<(RunConfig, bool)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("[config] reading {}", path.display()))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str::<serde_json::Value>(&text).map_err(anyhow::Error::from)
    } else {
        toml::from_str::<serde_json::Value>(&text).map_err(anyhow::Error::from)
    };
    let value = parsed.with_context(|| format!("[config] parsing {}", path.display()))?;
    let pinned = value.get("interpret_topics").is_some();
    let cfg = serde_json::from_value(value)
        .with_context(|| format!("[config] parsing {}", path.display()))?;
    Ok((cfg, pinned))
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let (mut cfg, pinned) = match &self.config {
            Some(p) => load_config(p)?,
            None => (RunConfig::default(), false),
        };
        if let Some(v) = self.clip_seconds {
            cfg.clip_seconds = v;
        }
        if let Some(v) = self.codebook_size {
            cfg.codebook_size = v;
        }
        if let Some(v) = &self.topics {
            cfg.topics = v.clone();
        }
        if let Some(v) = self.interpret_topics {
            cfg.interpret_topics = v;
        } else if !pinned && !cfg.topics.contains(&cfg.interpret_topics) {
            // keep interpretation valid when only the sweep changes
            if let Some(&k) = cfg.topics.iter().max() {
                cfg.interpret_topics = k;
            }
        }
        if self.alpha.is_some() {
            cfg.alpha = self.alpha;
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.iters {
            cfg.iters = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }
}

fn run_stage(args: &RunArgs, target: Stage) -> Result<()> {
    let cfg = args.resolve()?;
    let manifest = scan_dataset(&args.data).context("[scan]")?;
    let summary = run_all(&manifest, &cfg, &args.bucket, target, args.exec())?;
    for b in &summary.buckets {
        let names = |s: &[Stage]| s.iter().map(|x| x.name()).collect::<Vec<_>>().join(",");
        println!(
            "bucket {}: computed [{}] reused [{}] -> {}",
            b.bucket_id,
            names(&b.computed),
            names(&b.reused),
            b.dir.display()
        );
    }
    if let Some(table) = &summary.accuracy {
        print!("{}", table.to_csv());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scan { data, manifest_out } => {
            let manifest = scan_dataset(&data).context("[scan]")?;
            for (genre, n) in manifest.genres() {
                println!("{genre}\t{n}");
            }
            println!("{} songs", manifest.entries.len());
            if let Some(path) = manifest_out {
                std::fs::write(&path, manifest.to_csv())
                    .with_context(|| format!("[scan] writing {}", path.display()))?;
            }
        }
        Command::Features(a) => run_stage(&a, Stage::Features)?,
        Command::Vocab(a) => run_stage(&a, Stage::Vocab)?,
        Command::Train(a) => run_stage(&a, Stage::Train)?,
        Command::Interpret(a) => run_stage(&a, Stage::Interpret)?,
        Command::Eval(a) => run_stage(&a, Stage::Eval)?,
        Command::Viz(a) | Command::RunAll(a) => run_stage(&a, Stage::Viz)?,
        Command::Fixture {
            out,
            genres,
            songs_per_genre,
            seconds,
            seed,
        } => {
            if songs_per_genre == 0 || !(seconds > 0.0) {
                bail!("[fixture] need at least one song of positive length");
            }
            let spec = FixtureSpec {
                genres,
                songs_per_genre,
                seconds,
                seed,
                ..FixtureSpec::default()
            };
            let paths = write_fixture(&out, &spec).context("[fixture]")?;
            println!("wrote {} songs under {}", paths.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
