//! Experiment harness: configuration, synthetic datasets and the run modes
//! behind the `mint` command-line tool.
//!
//! Configuration precedence, lowest to highest: built-in defaults, the JSON
//! config file, command-line flags. Every random choice is derived from the
//! root `seed`; the model and decoder seeds in the file are overwritten with
//! derived values and echoed in each report.

mod datasets;
mod experiments;
mod fixtures;
mod io;
mod lexicon;

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::DecodeConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::selection::SelectionConfig;

pub use datasets::{mme_cases, MmeItem, PopeItem};
pub use experiments::{
    ablation_cells, run_ablation_cell, AblationCell, AblationReport, AblationRow, RunOutput,
};
pub use fixtures::{
    generate_fixtures, synonym_map, write_fixtures, AnswerKey, ChairKey, FixtureSet, FixtureSizes,
    MmeKey, PopeKey, ANNOTATIONS_FILE, ANSWER_KEY_FILE, CAPTIONS_FILE, MME_FILE,
    MME_PREDICTED_FILE, POPE_FILE, POPE_PREDICTED_FILE, SYNONYMS_FILE,
};
pub use io::{read_json, read_jsonl, write_json, write_jsonl};
pub use lexicon::{Lexicon, MIN_VOCAB, OBJECTS};

/// 64-bit FNV-1a.
pub fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Independent child seed for a named purpose.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(fnv1a(label));
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Analyze,
    Decode,
    EvalPope,
    EvalMme,
    EvalChair,
    Heatmap,
    Ablate,
    GenFixtures,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Analyze => "analyze",
            Mode::Decode => "decode",
            Mode::EvalPope => "eval-pope",
            Mode::EvalMme => "eval-mme",
            Mode::EvalChair => "eval-chair",
            Mode::Heatmap => "heatmap",
            Mode::Ablate => "ablate",
            Mode::GenFixtures => "gen-fixtures",
        }
    }
}

/// Which decoder answers dataset questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    #[default]
    Mint,
    Vanilla,
}

/// How yes/no questions are answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    /// One step; the more probable of "yes" and "no" under the final distribution.
    #[default]
    YesNo,
    /// Free generation; the answer is the leading yes/no word, if any.
    Generate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub pope: Option<PathBuf>,
    pub mme: Option<PathBuf>,
    /// Per-image object annotations; also the image content seen by the toy model.
    pub annotations: Option<PathBuf>,
    /// Captions to score; generated with the toy model when absent.
    pub captions: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    /// PNG under the heatmaps; a checkerboard placeholder when absent.
    pub image: Option<PathBuf>,
}

/// One image + question, used by `decode` and `heatmap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub image_id: String,
    pub objects: Vec<String>,
    pub question: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            image_id: "img_demo".into(),
            objects: vec!["dog".into(), "frisbee".into()],
            question: "Describe the image.".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub max_new_tokens: usize,
    /// Prompts taken from the POPE set, or synthesized when no set is given.
    pub prompts: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 20,
            prompts: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub width: u32,
    pub height: u32,
    /// Layers to render; all layers when absent.
    pub layers: Option<Vec<usize>>,
    /// Ranked heads rendered per layer, besides the head mean.
    pub max_heads: Option<usize>,
    /// Tokens generated before rendering; the query is the last position.
    pub generate_tokens: usize,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            width: 336,
            height: 336,
            layers: None,
            max_heads: Some(6),
            generate_tokens: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub keep_ratios: Vec<f64>,
    pub contrastive: Vec<bool>,
    /// Size of the synthetic POPE split used when `data.pope` is absent.
    pub pope_questions: usize,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            keep_ratios: vec![1.0, 0.75, 0.5, 0.125],
            contrastive: vec![true, false],
            pope_questions: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every other seed is derived from it.
    pub seed: u64,
    pub mode: Option<Mode>,
    pub model: ModelConfig,
    pub selection: SelectionConfig,
    pub decode: DecodeConfig,
    pub decoder: DecoderKind,
    pub answer_mode: AnswerMode,
    pub data: DataPaths,
    pub output_dir: PathBuf,
    pub prompt: PromptConfig,
    pub analyze: AnalyzeConfig,
    pub heatmap: HeatmapConfig,
    pub ablation: AblationGrid,
    pub fixtures: FixtureSizes,
    /// Logit entries kept per vector in decode traces; all when absent.
    pub trace_top: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: None,
            model: ModelConfig::default(),
            selection: SelectionConfig::default(),
            decode: DecodeConfig::default(),
            decoder: DecoderKind::default(),
            answer_mode: AnswerMode::default(),
            data: DataPaths::default(),
            output_dir: PathBuf::from("out"),
            prompt: PromptConfig::default(),
            analyze: AnalyzeConfig::default(),
            heatmap: HeatmapConfig::default(),
            ablation: AblationGrid::default(),
            fixtures: FixtureSizes::default(),
            trace_top: Some(8),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file. Unknown keys and type errors are configuration errors.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Replaces the model and decoder seeds with values derived from `seed`.
    pub fn resolve_seeds(&mut self) {
        self.model.seed = derive_seed(self.seed, "model");
        self.decode.rng_seed = derive_seed(self.seed, "decode");
    }

    pub fn lexicon(&self) -> Result<Lexicon> {
        Lexicon::new(self.model.vocab_size, self.model.eos_id)
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.selection.validate(self.model.num_layers)?;
        self.decode.validate()?;
        self.lexicon()?;
        self.fixtures.validate()?;
        let grid = &self.ablation;
        if grid.keep_ratios.is_empty() || grid.contrastive.is_empty() {
            return Err(Error::Config("ablation grid is empty".into()));
        }
        if let Some(r) = grid.keep_ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::Config(format!(
                "ablation keep ratio {r} outside (0, 1]"
            )));
        }
        if grid.pope_questions == 0 {
            return Err(Error::Config(
                "ablation.pope_questions must be positive".into(),
            ));
        }
        if self.analyze.prompts == 0 {
            return Err(Error::Config("analyze.prompts must be positive".into()));
        }
        let hm = &self.heatmap;
        if hm.width == 0 || hm.height == 0 {
            return Err(Error::Config("heatmap size must be positive".into()));
        }
        if let Some(bad) = hm
            .layers
            .iter()
            .flatten()
            .find(|&&l| l >= self.model.num_layers)
        {
            return Err(Error::Config(format!(
                "heatmap layer {bad} outside {} layers",
                self.model.num_layers
            )));
        }
        let side = (self.model.num_image_tokens as f64).sqrt().round() as usize;
        if side * side != self.model.num_image_tokens {
            return Err(Error::Config(format!(
                "num_image_tokens {} is not a square number",
                self.model.num_image_tokens
            )));
        }
        Ok(())
    }
}

/// Validates `config`, checks that the files the mode reads exist, and runs it.
pub fn run(mode: Mode, config: &ExperimentConfig) -> Result<RunOutput> {
    let mut cfg = config.clone();
    cfg.mode = Some(mode);
    cfg.resolve_seeds();
    cfg.validate()?;
    check_inputs(mode, &cfg.data)?;
    experiments::dispatch(mode, &cfg)
}

fn check_inputs(mode: Mode, data: &DataPaths) -> Result<()> {
    let require = |path: &Option<PathBuf>, what: &str| -> Result<()> {
        match path {
            None => Err(Error::Config(format!(
                "{} needs data.{what}",
                mode.as_str()
            ))),
            Some(p) => exists(p),
        }
    };
    let optional = |path: &Option<PathBuf>| path.as_deref().map_or(Ok(()), exists);
    match mode {
        Mode::EvalPope => require(&data.pope, "pope")?,
        Mode::EvalMme => require(&data.mme, "mme")?,
        Mode::EvalChair => {
            require(&data.annotations, "annotations")?;
            require(&data.synonyms, "synonyms")?;
        }
        _ => {}
    }
    for p in [
        &data.pope,
        &data.mme,
        &data.annotations,
        &data.captions,
        &data.synonyms,
        &data.image,
    ] {
        optional(p)?;
    }
    Ok(())
}

fn exists(path: &Path) -> Result<()> {
    std::fs::metadata(path).map(|_| ()).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, "model"), derive_seed(7, "model"));
        assert_ne!(derive_seed(7, "model"), derive_seed(7, "decode"));
        assert_ne!(derive_seed(7, "model"), derive_seed(8, "model"));
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn default_config_is_valid() {
        let mut cfg = ExperimentConfig::default();
        cfg.resolve_seeds();
        cfg.validate().unwrap();
    }

    #[test]
    fn config_errors_are_classified() {
        assert!(ExperimentConfig::from_json("{\"bogus\": 1}")
            .unwrap_err()
            .is_config());
        assert!(ExperimentConfig::from_json("{\"seed\": \"x\"}")
            .unwrap_err()
            .is_config());
        let cfg = ExperimentConfig::from_json(r#"{"seed": 5, "decode": {"beta": 0.2}}"#).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.decode.beta, 0.2);
        assert_eq!(cfg.decode.alpha, 1.0);

        let mut bad = ExperimentConfig::default();
        bad.ablation.keep_ratios = vec![0.0];
        assert!(bad.validate().unwrap_err().is_config());
        let mut bad = ExperimentConfig::default();
        bad.model.num_image_tokens = 12;
        assert!(bad.validate().unwrap_err().is_config());
        let mut bad = ExperimentConfig::default();
        bad.heatmap.layers = Some(vec![9]);
        assert!(bad.validate().unwrap_err().is_config());
    }

    #[test]
    fn missing_inputs_fail_before_work() {
        let mut cfg = ExperimentConfig::default();
        assert!(run(Mode::EvalPope, &cfg).unwrap_err().is_config());
        cfg.data.pope = Some(PathBuf::from("/nonexistent/pope.jsonl"));
        let err = run(Mode::EvalPope, &cfg).unwrap_err();
        assert!(err.is_io());
        assert!(err.to_string().contains("/nonexistent/pope.jsonl"));
    }
}
