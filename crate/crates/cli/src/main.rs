use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::builder::PossibleValuesParser;
use clap::{Parser, Subcommand};

use viptr::backbone::{build_model, count_flops, count_params, CountScope, VariantConfig, VARIANTS};
use viptr::bench::{bench_variants, ordering, BenchOptions};
use viptr::ctc::{greedy_decode, Alphabet};
use viptr::io::{
    capture_attention, dump_attention, load_checkpoint, load_image, save_checkpoint, seed_from_env, RunConfig,
};
use viptr::train::train_with;
use viptr::{Ctx, Error, Mode, Tape};

#[derive(Parser)]
#[command(name = "viptr", version, about = "Scene-text recognition backbone tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print backbone and full parameter counts.
    Count {
        #[arg(long, value_parser = PossibleValuesParser::new(VARIANTS))]
        variant: String,
    },
    /// Print multiply-accumulate totals with a per-section breakdown.
    Flops {
        #[arg(long, value_parser = PossibleValuesParser::new(VARIANTS))]
        variant: String,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
    },
    /// Transcribe one image with a checkpoint.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Train on the synthetic glyph corpus.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Measure per-image inference time at batch 4.
    Bench {
        /// Variants to compare; all registry variants when omitted.
        #[arg(long, value_parser = PossibleValuesParser::new(VARIANTS))]
        variant: Vec<String>,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(5..))]
        warmup: u64,
        #[arg(long, default_value_t = 4)]
        batch: usize,
    },
    /// Write per-block attention maps as PGM images.
    DumpAttn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only blocks whose name contains this text.
        #[arg(long)]
        blocks: Option<String>,
        /// Also write one map per head.
        #[arg(long)]
        per_head: bool,
    },
    /// Write a freshly initialized checkpoint.
    Init {
        #[arg(long, value_parser = PossibleValuesParser::new(VARIANTS))]
        variant: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Alphabet file, one symbol per line; lowercase letters and digits by default.
        #[arg(long)]
        alphabet: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.chain().any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Usage(_))));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn print_warnings(warnings: Vec<String>) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Count { variant } => {
            let cfg = VariantConfig::variant(&variant)?;
            let (_, store) = build_model::<f32>(&cfg, 0)?;
            let backbone = count_params(&store, CountScope::Backbone);
            let full = count_params(&store, CountScope::Full);
            println!("variant={variant}");
            println!("backbone_params={backbone}");
            println!("head_params={}", full - backbone);
            println!("full_params={full}");
            println!("backbone_params_m={:.3}", backbone as f64 / 1e6);
        }
        Command::Flops { variant, width, height } => {
            let cfg = VariantConfig::variant(&variant)?;
            let report = count_flops(&cfg, height, width).map_err(|e| Error::Usage(e.to_string()))?;
            println!("variant={variant}");
            println!("input={height}x{width}");
            for (name, macs) in &report.sections {
                println!("macs.{name}={macs}");
            }
            println!("backbone_macs={}", report.backbone());
            println!("total_macs={}", report.total());
            println!("backbone_gmacs={:.4}", report.backbone() as f64 / 1e9);
        }
        Command::Infer { ckpt, image } => {
            let c = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let img = load_image(&image)?;
            let shape = img.shape().to_vec();
            let batch = img.reshape(&[1, shape[0], shape[1], shape[2]])?;
            let tape = Tape::inference();
            let ctx = Ctx::new(&tape, &c.store, Mode::Eval, 0);
            let logits = c.model.logits(&ctx, &tape.constant(batch))?;
            print_warnings(ctx.take_warnings());
            println!("{}", greedy_decode(logits.value(), &c.alphabet)?[0]);
        }
        Command::Train { config } => {
            let run = RunConfig::load(&config)?;
            let cfg = run.resolve(seed_from_env()?)?;
            let out = cfg.out_dir.clone().expect("resolved configs name an output directory");
            let outcome = train_with(&cfg, |m| println!("{}", m.line()))?;
            println!("best_word_acc={:.4}", outcome.best_accuracy);
            println!("checkpoint={}", out.join("best").display());
        }
        Command::Bench { variant, width, iters, warmup, batch } => {
            let names: Vec<String> = if variant.is_empty() {
                VARIANTS.iter().map(|s| s.to_string()).collect()
            } else {
                variant
            };
            let variants = names
                .iter()
                .map(|n| Ok((n.clone(), VariantConfig::variant(n)?)))
                .collect::<Result<Vec<_>>>()?;
            let opts = BenchOptions { width, batch, warmup: warmup as usize, iters, ..BenchOptions::default() };
            if width % 4 != 0 || iters == 0 {
                return Err(Error::Usage("width must be a multiple of 4 and iters positive".into()).into());
            }
            let stats = bench_variants(&variants, &opts)?;
            println!("input=32x{width}");
            println!("batch={batch}");
            println!("iters={iters}");
            for s in &stats {
                println!("{}.mean_ms_per_image={:.4}", s.name, s.mean_ms);
                println!("{}.median_ms_per_image={:.4}", s.name, s.median_ms);
                println!("{}.std_ms_per_image={:.4}", s.name, s.std_ms);
            }
            println!("ordering={}", ordering(&stats).join("<"));
        }
        Command::DumpAttn { ckpt, image, out, blocks, per_head } => {
            let c = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let img = load_image(&image)?;
            let records = capture_attention(&c.model, &c.store, &img)?;
            let files = dump_attention(&records, &out, blocks.as_deref(), per_head)?;
            if files.is_empty() {
                return Err(Error::Usage("no block matched the --blocks filter".into()).into());
            }
            println!("maps={}", files.len());
            println!("out={}", out.display());
        }
        Command::Init { variant, out, seed, alphabet } => {
            let alphabet = match alphabet {
                Some(p) => Alphabet::load(&p)?,
                None => Alphabet::english(),
            };
            let mut cfg = VariantConfig::variant(&variant)?;
            cfg.num_classes = alphabet.num_classes();
            let (model, store) = build_model::<f32>(&cfg, seed)?;
            save_checkpoint(&out, &model, &store, &alphabet)?;
            println!("checkpoint={}", out.display());
        }
    }
    Ok(())
}
