use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tokgeo::entropy::{dirichlet_mc_entropy, nats_to_bits, unit_box_expected_entropy, ToyResult};
use tokgeo::pipeline::{
    analyze, compare_shuffles, correlate, write_synthetic_dataset, MetricSet, OutputFormat, PipelineError, RunConfig,
    RunOutcome, SynthConfig,
};
use tokgeo::shuffle::{full_shuffle_index, shuffle_tokens, shuffle_tokens_for_prompt, ShuffleSpec};
use tokgeo::synthetic::ManifoldKind;

#[derive(Parser)]
#[command(name = "tokgeo", version, about = "Geometry of layerwise token representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Profile every dump in a manifest and summarize the population.
    Analyze(RunArgs),
    /// Compare shuffle levels against the structured (S = 0) dumps.
    CompareShuffles {
        #[command(flatten)]
        run: RunArgs,
        /// Shuffle levels to compare; defaults to every level present.
        #[arg(long, value_delimiter = ',')]
        shuffles: Vec<u32>,
    },
    /// Correlate per-layer ID with next-token loss across prompts.
    Correlate {
        #[command(flatten)]
        run: RunArgs,
        /// Correlate raw ID instead of ln(ID).
        #[arg(long)]
        raw_id: bool,
        /// Also compute permutation p-values from this many shuffles.
        #[arg(long)]
        permutations: Option<usize>,
    },
    /// Block-shuffle a JSON array read from stdin (or --input).
    Shuffle {
        /// Shuffle index: 4^S blocks, or `full` for the largest S that fits.
        #[arg(long)]
        s: String,
        #[arg(long)]
        seed: u64,
        /// Use the per-prompt stream of this id.
        #[arg(long)]
        prompt_id: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Expected softmax entropy of a toy logit model.
    Toy {
        #[arg(long, value_enum)]
        model: ToyArg,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report bits instead of nats.
        #[arg(long)]
        bits: bool,
    },
    /// Write synthetic TGEO (and TGLO) fixtures plus a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        prompts: usize,
        /// Latent dimension of each layer.
        #[arg(long, value_delimiter = ',', default_value = "2,5,2")]
        layers: Vec<usize>,
        #[arg(long, default_value = "hypercube")]
        kind: ManifoldKind,
        #[arg(long, default_value_t = 16)]
        ambient: usize,
        #[arg(long, default_value_t = 1024)]
        tokens: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Vocabulary size of synthetic logits; omitted means no logits.
        #[arg(long)]
        vocab: Option<usize>,
        /// Extra shuffle levels to write.
        #[arg(long, value_delimiter = ',')]
        shuffles: Vec<u32>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ToyArg {
    UnitBox,
    Dirichlet,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of id,no,cosine,angles.
    #[arg(long, default_value = "id,no,cosine,angles")]
    metrics: MetricSet,
    /// GRIDE range scalings (powers of two >= 2).
    #[arg(long, value_delimiter = ',', default_value = "2")]
    scaling: Vec<usize>,
    /// Neighborhood sizes for the overlap.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    knn: Vec<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
}

impl RunArgs {
    fn config(self) -> RunConfig {
        let mut c = RunConfig::new(self.manifest, self.out);
        c.metrics = self.metrics;
        c.scalings = self.scaling;
        c.ks = self.knn;
        c.threads = self.threads;
        c.seed = self.seed;
        c.format = match self.format {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
        };
        c
    }
}

fn report(what: &str, config: &RunConfig, r: Result<RunOutcome, PipelineError>) -> ExitCode {
    match r {
        Ok(o) => {
            eprintln!("{what}: results in {}", config.out_dir.display());
            if o.quarantined > 0 {
                eprintln!("{what}: {} prompt(s) quarantined, see errors.json", o.quarantined);
            }
            ExitCode::from(o.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run_shuffle(s: &str, seed: u64, prompt_id: Option<String>, input: Option<PathBuf>) -> anyhow::Result<()> {
    let text = match input {
        Some(p) => std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let mut t = String::new();
            std::io::stdin().read_to_string(&mut t)?;
            t
        }
    };
    let tokens: Vec<serde_json::Value> = serde_json::from_str(&text).context("input must be a JSON array")?;
    let s = match s {
        "full" => full_shuffle_index(tokens.len()),
        other => other
            .parse()
            .with_context(|| format!("invalid shuffle index {other:?}"))?,
    };
    let spec = ShuffleSpec { s, seed };
    let out = match prompt_id {
        Some(id) => shuffle_tokens_for_prompt(&tokens, spec, &id)?,
        None => shuffle_tokens(&tokens, spec)?,
    };
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer(&mut stdout, &out)?;
    writeln!(stdout)?;
    Ok(())
}

fn run_toy(model: ToyArg, d: usize, samples: usize, seed: u64, bits: bool) -> anyhow::Result<()> {
    let mut r: ToyResult = match model {
        ToyArg::UnitBox => unit_box_expected_entropy(d, samples, seed)?,
        ToyArg::Dirichlet => dirichlet_mc_entropy(d, samples, seed)?,
    };
    if bits {
        r.expected_entropy = nats_to_bits(r.expected_entropy);
        r.reference = nats_to_bits(r.reference);
        r.std_error = nats_to_bits(r.std_error);
    }
    let mut v = serde_json::to_value(&r)?;
    v["unit"] = (if bits { "bits" } else { "nats" }).into();
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(())
}

fn fatal(e: anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Analyze(args) => {
            let c = args.config();
            report("analyze", &c, analyze(&c))
        }
        Command::CompareShuffles { run, shuffles } => {
            let mut c = run.config();
            c.shuffles = shuffles;
            report("compare-shuffles", &c, compare_shuffles(&c))
        }
        Command::Correlate {
            run,
            raw_id,
            permutations,
        } => {
            let mut c = run.config();
            c.log_id = !raw_id;
            c.permutations = permutations;
            report("correlate", &c, correlate(&c))
        }
        Command::Shuffle {
            s,
            seed,
            prompt_id,
            input,
        } => run_shuffle(&s, seed, prompt_id, input).map_or_else(fatal, |_| ExitCode::SUCCESS),
        Command::Toy {
            model,
            d,
            samples,
            seed,
            bits,
        } => run_toy(model, d, samples, seed, bits).map_or_else(fatal, |_| ExitCode::SUCCESS),
        Command::Synth {
            out,
            prompts,
            layers,
            kind,
            ambient,
            tokens,
            seed,
            vocab,
            shuffles,
        } => {
            let cfg = SynthConfig {
                out_dir: out,
                n_prompts: prompts,
                latent_dims: layers,
                kind,
                ambient_dim: ambient,
                n_tokens: tokens,
                seed,
                vocab,
                shuffles,
            };
            match write_synthetic_dataset(&cfg) {
                Ok(m) => {
                    eprintln!(
                        "synth: wrote {} dumps and manifest.json to {}",
                        m.prompts.len(),
                        cfg.out_dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fatal(e.into()),
            }
        }
    }
}
