//! `mint`: run decoding experiments on the toy model.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 I/O error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mint_core::harness::{self, ExperimentConfig, Mode};
use mint_core::Error;

#[derive(Parser)]
#[command(
    name = "mint",
    version,
    about = "Attention-guided token selection and contrastive decoding harness"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Attention allocation per token type over generated tokens.
    Analyze {
        /// Generation budget per prompt.
        #[arg(long)]
        max_new_tokens: Option<usize>,
        /// Number of synthetic prompts.
        #[arg(long)]
        prompts: Option<usize>,
    },
    /// Decode one prompt and write the per-step trace.
    Decode {
        /// Image whose synthetic tokens form the prompt.
        #[arg(long)]
        image_id: Option<String>,
        /// Question text after the image.
        #[arg(long)]
        question: Option<String>,
        /// Contrast strength; 0 disables the text-only subtraction.
        #[arg(long)]
        alpha: Option<f64>,
        /// Plausibility cutoff relative to the top full-image probability.
        #[arg(long)]
        beta: Option<f64>,
        /// Fraction of image tokens kept by the focus mask.
        #[arg(long)]
        keep_ratio: Option<f64>,
        /// Generation budget.
        #[arg(long)]
        max_new_tokens: Option<usize>,
    },
    /// Score a POPE-style JSONL file.
    EvalPope {
        /// POPE JSONL file.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Per-image object annotations used to build image tokens.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Score an MME-style JSONL file.
    EvalMme {
        /// MME JSONL file.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Per-image object annotations used to build image tokens.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Score captions with CHAIR; captions are generated when not given.
    EvalChair {
        /// Per-image object annotations (JSONL).
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Captions to score (JSONL); generated when absent.
        #[arg(long)]
        captions: Option<PathBuf>,
        /// Synonym map (JSON).
        #[arg(long)]
        synonyms: Option<PathBuf>,
    },
    /// Render attention heatmaps.
    Heatmap {
        /// PNG to draw under the heatmaps; a checkerboard is used otherwise.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Image id used for the prompt and file names.
        #[arg(long)]
        image_id: Option<String>,
    },
    /// Keep-ratio x contrastive on/off grid with vanilla and guess baselines.
    Ablate {
        /// Number of POPE questions per grid cell.
        #[arg(long)]
        questions: Option<usize>,
        /// POPE JSONL file; synthetic questions are generated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write synthetic POPE / MME / CHAIR datasets and their answer key.
    GenFixtures {
        /// Number of synthetic images.
        #[arg(long)]
        images: Option<usize>,
        /// Number of POPE questions.
        #[arg(long)]
        pope: Option<usize>,
        /// Number of MME cases.
        #[arg(long)]
        mme: Option<usize>,
        /// Number of CHAIR captions.
        #[arg(long)]
        chair: Option<usize>,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn build(cli: Cli) -> Result<(Mode, ExperimentConfig), Error> {
    let mut cfg = match &cli.common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    set(&mut cfg.seed, cli.common.seed);
    set(&mut cfg.output_dir, cli.common.out);
    let mode = match cli.command {
        Command::Analyze {
            max_new_tokens,
            prompts,
        } => {
            set(&mut cfg.analyze.max_new_tokens, max_new_tokens);
            set(&mut cfg.analyze.prompts, prompts);
            Mode::Analyze
        }
        Command::Decode {
            image_id,
            question,
            alpha,
            beta,
            keep_ratio,
            max_new_tokens,
        } => {
            set(&mut cfg.prompt.image_id, image_id);
            set(&mut cfg.prompt.question, question);
            set(&mut cfg.decode.alpha, alpha);
            set(&mut cfg.decode.beta, beta);
            set(&mut cfg.selection.keep_ratio, keep_ratio);
            set(&mut cfg.decode.max_new_tokens, max_new_tokens);
            Mode::Decode
        }
        Command::EvalPope { data, annotations } => {
            set_opt(&mut cfg.data.pope, data);
            set_opt(&mut cfg.data.annotations, annotations);
            Mode::EvalPope
        }
        Command::EvalMme { data, annotations } => {
            set_opt(&mut cfg.data.mme, data);
            set_opt(&mut cfg.data.annotations, annotations);
            Mode::EvalMme
        }
        Command::EvalChair {
            annotations,
            captions,
            synonyms,
        } => {
            set_opt(&mut cfg.data.annotations, annotations);
            set_opt(&mut cfg.data.captions, captions);
            set_opt(&mut cfg.data.synonyms, synonyms);
            Mode::EvalChair
        }
        Command::Heatmap { image, image_id } => {
            set_opt(&mut cfg.data.image, image);
            set(&mut cfg.prompt.image_id, image_id);
            Mode::Heatmap
        }
        Command::Ablate { questions, data } => {
            set(&mut cfg.ablation.pope_questions, questions);
            set_opt(&mut cfg.data.pope, data);
            Mode::Ablate
        }
        Command::GenFixtures {
            images,
            pope,
            mme,
            chair,
        } => {
            set(&mut cfg.fixtures.images, images);
            set(&mut cfg.fixtures.pope_questions, pope);
            set(&mut cfg.fixtures.mme_cases, mme);
            set(&mut cfg.fixtures.chair_captions, chair);
            Mode::GenFixtures
        }
    };
    Ok((mode, cfg))
}

fn exit_code(err: &Error) -> u8 {
    if err.is_config() {
        2
    } else if err.is_io() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build(cli).and_then(|(mode, cfg)| harness::run(mode, &cfg));
    match result {
        Ok(out) => {
            // a closed stdout (e.g. piped into `head`) is not a failure of the run
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}: {}", out.mode.as_str(), out.summary);
            for f in &out.files {
                let _ = writeln!(stdout, "  wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
