use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use alignlab::config::ExperimentConfig;
use alignlab::corpus::MixName;
use alignlab::pipeline;
use alignlab::Result;

#[derive(Parser)]
#[command(
    name = "alignlab",
    about = "Desk-scale speech-text modality alignment lab",
    version
)]
struct Cli {
    /// Configuration file (key = value with [section] headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the global seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training mixes, test sets, and encoder corpus.
    SynthData,
    /// Frame-classification pretraining of the speech encoder.
    PretrainEncoder,
    /// Next-token pretraining of the base LM.
    PretrainLm,
    /// Instruction fine-tuning of the base LM into the chat variant.
    FinetuneChat,
    /// Train the alignment map on one mix.
    TrainAlign {
        /// Training mix (mix1, mix2, mix3).
        #[arg(long, default_value = "mix2")]
        mix: String,
        /// Trainable dimension of the alignment map (defaults to d_lm).
        #[arg(long)]
        dim: Option<usize>,
    },
    /// LoRA fine-tuning on top of a trained, frozen alignment module.
    LoraFinetune {
        #[arg(long, default_value = "mix2")]
        mix: String,
    },
    /// Main evaluation table (untrained baseline + trained mixes + LoRA).
    Eval,
    /// Rank-truncation sweep over mapped speech features.
    SvdSweep,
    /// Constrained-trainable-dimension sweep.
    DimSweep,
    /// Transfer the alignment module onto the chat LM and evaluate.
    SwapEval,
    /// Collate every per-stage report into one table.
    Report,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.global_seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    cfg.validate()?;

    match cli.command {
        Command::SynthData => pipeline::synth_data(&cfg)?,
        Command::PretrainEncoder => {
            let acc = pipeline::pretrain_encoder_stage(&cfg)?;
            println!("encoder frame accuracy: {acc:.4}");
        }
        Command::PretrainLm => {
            let ppl = pipeline::pretrain_lm_stage(&cfg)?;
            println!("held-out perplexity: {ppl:.4}");
        }
        Command::FinetuneChat => pipeline::finetune_chat_stage(&cfg)?,
        Command::TrainAlign { mix, dim } => {
            let mix = MixName::parse(&mix)?;
            let dim = dim.unwrap_or(cfg.lm.d_lm);
            let curve = pipeline::train_align_stage(&cfg, mix, dim)?;
            if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                println!("loss {first:.4} -> {last:.4} over {} steps", curve.len());
            }
        }
        Command::LoraFinetune { mix } => {
            pipeline::lora_finetune_stage(&cfg, MixName::parse(&mix)?)?
        }
        Command::Eval => print!("{}", pipeline::eval_stage(&cfg)?.to_tsv()),
        Command::SvdSweep => print!("{}", pipeline::svd_sweep_stage(&cfg)?.to_tsv()),
        Command::DimSweep => print!("{}", pipeline::dim_sweep_stage(&cfg)?.to_tsv()),
        Command::SwapEval => print!("{}", pipeline::swap_eval_stage(&cfg)?.to_tsv()),
        Command::Report => print!("{}", pipeline::report_stage(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
