//! Mode implementations. Each mode writes its artifacts under `output_dir`
//! and a pretty-JSON report that echoes the resolved configuration.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::datasets::{mme_cases, MmeItem, PopeItem};
use super::fixtures::{generate_fixtures, write_fixtures, FixtureSizes};
use super::io::{read_json, read_jsonl, write_json, write_jsonl, write_string};
use super::lexicon::Lexicon;
use super::{derive_seed, AnswerMode, DecoderKind, ExperimentConfig, Mode};
use crate::decoder::{generate, vanilla_generate, DecodeConfig, TraceRecord};
use crate::error::{Error, Result};
use crate::metrics::{
    chair_scores, mme_scores, pope_scores, CaptionRecord, ChairAnnotation, MetricReport, SynonymMap,
};
use crate::model::{ForwardBackend, Model, TokenId, TokenSequence};
use crate::selection::SelectionConfig;
use crate::taxonomy::{summarize_generation, TypeShares};
use crate::viz::{
    placeholder_base, read_png, resize_bicubic, write_gallery, GalleryEntry, GalleryOptions,
};

/// Files written by a run plus a one-line summary for the terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub mode: Mode,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    mode: Mode,
    seed: u64,
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    body: T,
}

fn write_report<T: Serialize>(cfg: &ExperimentConfig, name: &str, body: T) -> Result<PathBuf> {
    let path = cfg.output_dir.join(name);
    write_json(
        &path,
        &Report {
            mode: cfg.mode.expect("mode is set by run"),
            seed: cfg.seed,
            config: cfg,
            body,
        },
    )?;
    Ok(path)
}

pub(super) fn dispatch(mode: Mode, cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (files, summary) = match mode {
        Mode::Analyze => analyze(cfg)?,
        Mode::Decode => decode(cfg)?,
        Mode::EvalPope => eval_pope(cfg)?,
        Mode::EvalMme => eval_mme(cfg)?,
        Mode::EvalChair => eval_chair(cfg)?,
        Mode::Heatmap => heatmap(cfg)?,
        Mode::Ablate => ablate(cfg)?,
        Mode::GenFixtures => gen_fixtures(cfg)?,
    };
    Ok(RunOutput {
        mode,
        files,
        summary,
    })
}

// ---------------------------------------------------------------------------
// Shared machinery
// ---------------------------------------------------------------------------

struct Engine<'a> {
    cfg: &'a ExperimentConfig,
    model: Model,
    lexicon: Lexicon,
    objects: HashMap<String, Vec<String>>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        let objects = match &cfg.data.annotations {
            Some(path) => annotation_lookup(&read_jsonl::<ChairAnnotation>(path)?),
            None => HashMap::new(),
        };
        Ok(Self {
            cfg,
            model: Model::new(cfg.model.clone())?,
            lexicon: cfg.lexicon()?,
            objects,
        })
    }

    fn objects_of(&self, image_id: &str) -> &[String] {
        self.objects.get(image_id).map_or(&[], Vec::as_slice)
    }

    /// Answers one question with per-record randomness keyed by `key`.
    #[allow(clippy::too_many_arguments)]
    fn respond(
        &self,
        image_id: &str,
        question: &str,
        key: &str,
        decoder: DecoderKind,
        sel: &SelectionConfig,
        dec: &DecodeConfig,
        mode: AnswerMode,
    ) -> Result<Vec<TokenId>> {
        let n = self.model.dims().num_image_tokens;
        let prompt = self
            .lexicon
            .prompt(image_id, self.objects_of(image_id), question, n)?;
        let dec = DecodeConfig {
            rng_seed: derive_seed(dec.rng_seed, key),
            ..dec.clone()
        };
        match mode {
            AnswerMode::Generate => Ok(match decoder {
                DecoderKind::Mint => generate(&self.model, &prompt, sel, &dec)?.tokens,
                DecoderKind::Vanilla => {
                    vanilla_generate(
                        &self.model,
                        &prompt,
                        dec.max_new_tokens,
                        dec.sampling,
                        dec.rng_seed,
                    )?
                    .tokens
                }
            }),
            AnswerMode::YesNo => self.yes_or_no(&prompt, decoder, sel, &dec),
        }
    }

    /// Compares the first-step probabilities of "yes" and "no" (restricted to
    /// the plausibility set when it contains either); ties go to "yes".
    fn yes_or_no(
        &self,
        prompt: &TokenSequence,
        decoder: DecoderKind,
        sel: &SelectionConfig,
        dec: &DecodeConfig,
    ) -> Result<Vec<TokenId>> {
        let yes = self.lexicon.id("yes").expect("lexicon has yes");
        let no = self.lexicon.id("no").expect("lexicon has no");
        let (probs, allowed) = match decoder {
            DecoderKind::Mint => {
                let one_step = DecodeConfig {
                    max_new_tokens: 1,
                    ..dec.clone()
                };
                let mut g = generate(&self.model, prompt, sel, &one_step)?;
                let t = g.traces.pop().expect("one step was decoded");
                (t.calibrated, t.plausibility_set)
            }
            DecoderKind::Vanilla => {
                let probs = self.model.forward(prompt, None)?.logits.softmax();
                (probs, vec![yes, no])
            }
        };
        let mut candidates: Vec<TokenId> = [yes, no]
            .into_iter()
            .filter(|t| allowed.contains(t))
            .collect();
        if candidates.is_empty() {
            candidates = vec![yes, no];
        }
        let best = candidates
            .iter()
            .copied()
            .fold(None::<TokenId>, |best, t| match best {
                Some(b) if probs[b as usize] >= probs[t as usize] => Some(b),
                _ => Some(t),
            })
            .expect("candidates are nonempty");
        Ok(vec![best])
    }

    fn default_answer(&self, image_id: &str, question: &str, key: &str) -> Result<String> {
        let toks = self.respond(
            image_id,
            question,
            key,
            self.cfg.decoder,
            &self.cfg.selection,
            &self.cfg.decode,
            self.cfg.answer_mode,
        )?;
        Ok(self.lexicon.decode(&toks))
    }

    fn caption(&self, image_id: &str) -> Result<String> {
        let toks = self.respond(
            image_id,
            &self.cfg.prompt.question,
            image_id,
            self.cfg.decoder,
            &self.cfg.selection,
            &self.cfg.decode,
            AnswerMode::Generate,
        )?;
        Ok(self.lexicon.decode(&toks))
    }
}

fn annotation_lookup(anns: &[ChairAnnotation]) -> HashMap<String, Vec<String>> {
    anns.iter()
        .map(|a| (a.image_id.clone(), a.objects.iter().cloned().collect()))
        .collect()
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct PromptAllocation {
    image_id: String,
    question: String,
    text: String,
    num_generated: usize,
    gamma: Option<TypeShares>,
    gamma_by_layer: Option<Vec<TypeShares>>,
    skipped: Option<String>,
}

#[derive(Serialize)]
struct AnalyzeBody {
    max_new_tokens: usize,
    prompts: Vec<PromptAllocation>,
    analyzed: usize,
    mean_gamma: Option<TypeShares>,
    mean_gamma_by_layer: Vec<TypeShares>,
}

fn analyze(cfg: &ExperimentConfig) -> Result<(Vec<PathBuf>, String)> {
    let engine = Engine::new(cfg)?;
    let prompts: Vec<(String, Vec<String>, String)> = match &cfg.data.pope {
        Some(path) => read_jsonl::<PopeItem>(path)?
            .into_iter()
            .take(cfg.analyze.prompts)
            .map(|p| {
                let objs = engine.objects_of(&p.image_id).to_vec();
                (p.image_id, objs, p.question)
            })
            .collect(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "analyze"));
            let pool = engine.lexicon.objects();
            (0..cfg.analyze.prompts)
                .map(|i| {
                    let objs = (0..2)
                        .map(|_| pool[rng.random_range(0..pool.len())].clone())
                        .collect();
                    (format!("analyze_{i:03}"), objs, cfg.prompt.question.clone())
                })
                .collect()
        }
    };
    let n = cfg.model.num_image_tokens;
    let results: Vec<PromptAllocation> = prompts
        .par_iter()
        .enumerate()
        .map(
            |(i, (image_id, objs, question))| -> Result<PromptAllocation> {
                let prompt = engine.lexicon.prompt(image_id, objs, question, n)?;
                let seed = derive_seed(cfg.decode.rng_seed, &format!("analyze/{i}"));
                let g = vanilla_generate(
                    &engine.model,
                    &prompt,
                    cfg.analyze.max_new_tokens,
                    cfg.decode.sampling,
                    seed,
                )?;
                let text = engine.lexicon.decode(&g.tokens);
                let att = engine.model.forward(&g.sequence, None)?.attention;
                let (gamma, by_layer, skipped) =
                    match summarize_generation(&att, g.sequence.spans(), g.tokens.len()) {
                        Ok(s) => (Some(s.gamma), Some(s.gamma_by_layer), None),
                        Err(Error::InsufficientData(msg)) => (None, None, Some(msg)),
                        Err(e) => return Err(e),
                    };
                Ok(PromptAllocation {
                    image_id: image_id.clone(),
                    question: question.clone(),
                    text,
                    num_generated: g.tokens.len(),
                    gamma,
                    gamma_by_layer: by_layer,
                    skipped,
                })
            },
        )
        .collect::<Result<_>>()?;

    let done: Vec<&PromptAllocation> = results.iter().filter(|r| r.gamma.is_some()).collect();
    let mean = |f: &dyn Fn(&PromptAllocation) -> TypeShares| -> TypeShares {
        let mut acc = TypeShares::default();
        for r in &done {
            let s = f(r);
            acc.sys += s.sys;
            acc.img += s.img;
            acc.que += s.que;
            acc.out += s.out;
        }
        let k = done.len() as f64;
        TypeShares {
            sys: acc.sys / k,
            img: acc.img / k,
            que: acc.que / k,
            out: acc.out / k,
        }
    };
    let mean_gamma = (!done.is_empty()).then(|| mean(&|r| r.gamma.expect("filtered")));
    let mean_by_layer: Vec<TypeShares> = if done.is_empty() {
        Vec::new()
    } else {
        (0..cfg.model.num_layers)
            .map(|l| mean(&|r| r.gamma_by_layer.as_ref().expect("filtered")[l]))
            .collect()
    };

    let mut csv = String::from("layer,sys,img,que,out\n");
    for (l, s) in mean_by_layer.iter().enumerate() {
        writeln!(csv, "{l},{},{},{},{}", s.sys, s.img, s.que, s.out).expect("string write");
    }
    let csv_path = cfg.output_dir.join("allocation_by_layer.csv");
    write_string(&csv_path, &csv)?;
    let summary = match &mean_gamma {
        Some(g) => format!(
            "{} of {} prompts analyzed; mean allocation sys {}% img {}% que {}% out {}%",
            done.len(),
            results.len(),
            pct(g.sys),
            pct(g.img),
            pct(g.que),
            pct(g.out)
        ),
        None => format!(
            "no prompt produced two or more tokens ({} tried)",
            results.len()
        ),
    };
    let report = write_report(
        cfg,
        "analyze.json",
        AnalyzeBody {
            max_new_tokens: cfg.analyze.max_new_tokens,
            analyzed: done.len(),
            prompts: results.clone(),
            mean_gamma,
            mean_gamma_by_layer: mean_by_layer,
        },
    )?;
    Ok((vec![report, csv_path], summary))
}

// ---------------------------------------------------------------------------
// decode
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct DecodeBody<'a> {
    image_id: &'a str,
    question: &'a str,
    tokens: Vec<TokenId>,
    text: String,
    stopped_at_eos: bool,
    vanilla_tokens: Vec<TokenId>,
    vanilla_text: String,
    matches_vanilla: bool,
}

fn decode(cfg: &ExperimentConfig) -> Result<(Vec<PathBuf>, String)> {
    let engine = Engine::new(cfg)?;
    let p = &cfg.prompt;
    let n = cfg.model.num_image_tokens;
    let prompt = engine
        .lexicon
        .prompt(&p.image_id, &p.objects, &p.question, n)?;
    let mint = generate(&engine.model, &prompt, &cfg.selection, &cfg.decode)?;
    let vanilla = vanilla_generate(
        &engine.model,
        &prompt,
        cfg.decode.max_new_tokens,
        cfg.decode.sampling,
        cfg.decode.rng_seed,
    )?;
    let trace: Vec<TraceRecord> = mint
        .traces
        .iter()
        .map(|t| t.to_record(cfg.trace_top))
        .collect();
    let trace_path = cfg.output_dir.join("trace.jsonl");
    write_jsonl(&trace_path, &trace)?;
    let text = engine.lexicon.decode(&mint.tokens);
    let summary = format!("{} token(s): {text}", mint.tokens.len());
    let report = write_report(
        cfg,
        "decode.json",
        DecodeBody {
            image_id: &p.image_id,
            question: &p.question,
            text,
            stopped_at_eos: mint.stopped_at_eos,
            vanilla_text: engine.lexicon.decode(&vanilla.tokens),
            matches_vanilla: mint.tokens == vanilla.tokens,
            tokens: mint.tokens,
            vanilla_tokens: vanilla.tokens,
        },
    )?;
    Ok((vec![report, trace_path], summary))
}

// ---------------------------------------------------------------------------
// evaluation modes
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EvalBody<'a> {
    records: usize,
    generated: usize,
    metrics: &'a MetricReport,
}

fn fill_predictions<T, F>(
    items: &[T],
    existing: impl Fn(&T) -> Option<&String> + Sync,
    answer: F,
) -> Result<(Vec<String>, usize)>
where
    T: Sync,
    F: Fn(usize, &T) -> Result<String> + Sync,
{
    let preds = items
        .par_iter()
        .enumerate()
        .map(|(i, it)| match existing(it) {
            Some(p) => Ok(p.clone()),
            None => answer(i, it),
        })
        .collect::<Result<Vec<_>>>()?;
    let generated = items.iter().filter(|it| existing(it).is_none()).count();
    Ok((preds, generated))
}

fn eval_pope(cfg: &ExperimentConfig) -> Result<(Vec<PathBuf>, String)> {
    let items: Vec<PopeItem> = read_jsonl(cfg.data.pope.as_deref().expect("checked"))?;
    let engine = Engine::new(cfg)?;
    let (preds, generated) = fill_predictions(
        &items,
        |it| it.prediction.as_ref(),
        |_, it| engine.default_answer(&it.image_id, &it.question, &it.question_id),
    )?;
    let records: Vec<_> = items
        .iter()
        .zip(&preds)
        .map(|(it, p)| it.to_record(p))
        .collect();
    let report = pope_scores(&records)?;
    let filled: Vec<PopeItem> = items
        .iter()
        .zip(&preds)
        .map(|(it, p)| PopeItem {
            prediction: Some(p.clone()),
            ..it.clone()
        })
        .collect();
    let pred_path = cfg.output_dir.join("pope_predictions.jsonl");
    write_jsonl(&pred_path, &filled)?;
    let summary = format!(
        "POPE accuracy {} precision {} recall {} f1 {} over {} questions",
        pct(report.metrics["accuracy"].value),
        pct(report.metrics["precision"].value),
        pct(report.metrics["recall"].value),
        pct(report.metrics["f1"].value),
        items.len()
    );
    let path = write_report(
        cfg,
        "pope_report.json",
        EvalBody {
            records: items.len(),
            generated,
            metrics: &report,
        },
    )?;
    Ok((vec![path, pred_path], summary))
}

fn eval_mme(cfg: &ExperimentConfig) -> Result<(Vec<PathBuf>, String)> {
    let items: Vec<MmeItem> = read_jsonl(cfg.data.mme.as_deref().expect("checked"))?;
    let engine = Engine::new(cfg)?;
    let (preds, generated) = fill_predictions(
        &items,
        |it| it.prediction.as_ref(),
        |i, it| engine.default_answer(it.content_image(), &it.question, &format!("mme/{i}")),
    )?;
    let report = mme_scores(&mme_cases(&items, &preds)?)?;
    let filled: Vec<MmeItem> = items
        .iter()
        .zip(&preds)
        .map(|(it, p)| MmeItem {
            prediction: Some(p.clone()),
            ..it.clone()
        })
        .collect();
    let pred_path = cfg.output_dir.join("mme_predictions.jsonl");
    write_jsonl(&pred_path, &filled)?;
    let summary = format!(
        "MME accuracy {} accuracy+ {} over {} questions",
        pct(report.metrics["accuracy"].value),
        pct(report.metrics["accuracy_plus"].value),
        items.len()
    );
    let path = write_report(
        cfg,
        "mme_report.json",
        EvalBody {
            records: items.len(),
            generated,
            metrics: &report,
        },
    )?;
    Ok((vec![path, pred_path], summary))
}

fn eval_chair(cfg: &ExperimentConfig) -> Result<(Vec<PathBuf>, String)> {
    let annotations: Vec<ChairAnnotation> =
        read_jsonl(cfg.data.annotations.as_deref().expect("checked"))?;
    let synonyms: SynonymMap = read_json(cfg.data.synonyms.as_deref().expect("checked"))?;
    let mut files = Vec::new();
    let (captions, generated) = match &cfg.data.captions {
        Some(path) => (read_jsonl::<CaptionRecord>(path)?, 0),
        None => {
            let engine = Engine::new(cfg)?;
            let caps = annotations
                .par_iter()
                .map(|a| {
                    Ok(CaptionRecord {
                        image_id: a.image_id.clone(),
                        caption: engine.caption(&a.image_id)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let path = cfg.output_dir.join("chair_captions.jsonl");
            write_jsonl(&path, &caps)?;
            files.push(path);
            let n = caps.len();
            (caps, n)
        }
    };
    let report = chair_scores(&annotations, &captions, &synonyms)?;
    let summary = format!(
        "CHAIR_I {} CHAIR_S {} RECALL_I {} over {} captions",
        pct(report.metrics["chair_i"].value),
        pct(report.metrics["chair_s"].value),
        pct(report.metrics["recall_i"].value),
        captions.len()
    );
    let path = write_report(
        cfg,
        "chair_report.json",
        EvalBody {
            records: captions.len(),
            generated,
            metrics: &report,
        },
    )?;
    files.insert(0, path);
    Ok((files, summary))
}

// ---------------------------------------------------------------------------
// heatmap
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct HeatmapBody<'a> {
    image_id: &'a str,
    text: String,
    query: usize,
    files: &'a [GalleryEntry],
}

fn heatmap(cfg: &ExperimentConfig) -> Result<(Vec<PathBuf>, String)> {
    let engine = Engine::new(cfg)?;
    let p = &cfg.prompt;
    let hm = &cfg.heatmap;
    let prompt = engine.lexicon.prompt(
        &p.image_id,
        &p.objects,
        &p.question,
        cfg.model.num_image_tokens,
    )?;
    let g = vanilla_generate(
        &engine.model,
        &prompt,
        hm.generate_tokens,
        cfg.decode.sampling,
        cfg.decode.rng_seed,
    )?;
    let att = engine.model.forward(&g.sequence, None)?.attention;
    let base = match &cfg.data.image {
        Some(path) => resize_bicubic(&read_png(path)?, hm.width, hm.height)?,
        None => {
            let side = (cfg.model.num_image_tokens as f64).sqrt().round() as u32;
            placeholder_base(hm.width, hm.height, side)
        }
    };
    let query = g.sequence.len() - 1;
    let opts = GalleryOptions {
        image_id: p.image_id.clone(),
        layers: hm
            .layers
            .clone()
            .unwrap_or_else(|| (0..cfg.model.num_layers).collect()),
        query,
        max_heads: hm.max_heads,
    };
    let dir = cfg.output_dir.join("heatmaps");
    let index = write_gallery(&att, g.sequence.spans(), &base, &opts, &dir)?;
    let summary = format!("{} heatmap(s) in {}", index.len(), dir.display());
    let report = write_report(
        cfg,
        "heatmap.json",
        HeatmapBody {
            image_id: &p.image_id,
            text: engine.lexicon.decode(&g.tokens),
            query,
            files: &index,
        },
    )?;
    let mut files = vec![report, dir.join("index.json")];
    files.extend(index.iter().map(|e| dir.join(&e.file)));
    Ok((files, summary))
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub keep_ratio: f64,
    pub contrastive: bool,
}

impl AblationCell {
    pub fn label(&self) -> String {
        format!(
            "keep={}/cd={}",
            self.keep_ratio,
            if self.contrastive { "on" } else { "off" }
        )
    }
}

/// Grid cells in report order: ratios outer, contrastive on/off inner.
pub fn ablation_cells(cfg: &ExperimentConfig) -> Vec<AblationCell> {
    cfg.ablation
        .keep_ratios
        .iter()
        .flat_map(|&keep_ratio| {
            cfg.ablation
                .contrastive
                .iter()
                .map(move |&contrastive| AblationCell {
                    keep_ratio,
                    contrastive,
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub keep_ratio: Option<f64>,
    pub num_kept: Option<usize>,
    pub contrastive: Option<bool>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Seed from which every per-question draw of this row is derived.
    pub seed: u64,
    pub metrics: MetricReport,
    /// Generated answer tokens per question (empty for the guess row).
    #[serde(skip)]
    pub outputs: Vec<Vec<TokenId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub questions: usize,
    pub rows: Vec<AblationRow>,
    /// Whether the full-ratio, contrastive-off cell reproduced vanilla decoding
    /// token for token (absent when the grid has no such cell).
    pub neutral_matches_vanilla: Option<bool>,
}

struct AblationData {
    items: Vec<PopeItem>,
    annotations: Vec<ChairAnnotation>,
}

fn ablation_data(cfg: &ExperimentConfig) -> Result<AblationData> {
    let fixture = || {
        let sizes = FixtureSizes {
            images: cfg.ablation.pope_questions.clamp(1, 100),
            pope_questions: cfg.ablation.pope_questions,
            mme_cases: 1,
            chair_captions: 1,
        };
        generate_fixtures(cfg.seed, &sizes, &cfg.lexicon()?)
    };
    let (items, fixture_anns) = match &cfg.data.pope {
        Some(path) => (read_jsonl(path)?, None),
        None => {
            let set = fixture()?;
            (set.pope, Some(set.annotations))
        }
    };
    let annotations = match (&cfg.data.annotations, fixture_anns) {
        (Some(path), _) => read_jsonl(path)?,
        (None, Some(a)) => a,
        (None, None) => Vec::new(),
    };
    Ok(AblationData { items, annotations })
}

fn ablation_engine<'a>(cfg: &'a ExperimentConfig, data: &AblationData) -> Result<Engine<'a>> {
    Ok(Engine {
        cfg,
        model: Model::new(cfg.model.clone())?,
        lexicon: cfg.lexicon()?,
        objects: annotation_lookup(&data.annotations),
    })
}

fn score_outputs(
    engine: &Engine,
    items: &[PopeItem],
    outputs: &[Vec<TokenId>],
) -> Result<MetricReport> {
    let records: Vec<_> = items
        .iter()
        .zip(outputs)
        .map(|(it, toks)| it.to_record(&engine.lexicon.decode(toks)))
        .collect();
    pope_scores(&records)
}

fn cell_row(engine: &Engine, items: &[PopeItem], cell: &AblationCell) -> Result<AblationRow> {
    let cfg = engine.cfg;
    let sel = SelectionConfig {
        keep_ratio: cell.keep_ratio,
        ..cfg.selection.clone()
    };
    let dec = if cell.contrastive {
        cfg.decode.clone()
    } else {
        DecodeConfig {
            alpha: 0.0,
            beta: 0.0,
            ..cfg.decode.clone()
        }
    };
    let outputs = items
        .par_iter()
        .map(|it| {
            engine.respond(
                &it.image_id,
                &it.question,
                &it.question_id,
                DecoderKind::Mint,
                &sel,
                &dec,
                cfg.answer_mode,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationRow {
        label: cell.label(),
        keep_ratio: Some(cell.keep_ratio),
        num_kept: Some(sel.num_kept(cfg.model.num_image_tokens)),
        contrastive: Some(cell.contrastive),
        alpha: Some(dec.alpha),
        beta: Some(dec.beta),
        seed: dec.rng_seed,
        metrics: score_outputs(engine, items, &outputs)?,
        outputs,
    })
}

fn vanilla_row(engine: &Engine, items: &[PopeItem]) -> Result<AblationRow> {
    let cfg = engine.cfg;
    let outputs = items
        .par_iter()
        .map(|it| {
            engine.respond(
                &it.image_id,
                &it.question,
                &it.question_id,
                DecoderKind::Vanilla,
                &cfg.selection,
                &cfg.decode,
                cfg.answer_mode,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationRow {
        label: "vanilla".into(),
        keep_ratio: None,
        num_kept: None,
        contrastive: None,
        alpha: None,
        beta: None,
        seed: cfg.decode.rng_seed,
        metrics: score_outputs(engine, items, &outputs)?,
        outputs,
    })
}

fn guess_row(cfg: &ExperimentConfig, items: &[PopeItem]) -> Result<AblationRow> {
    let seed = derive_seed(cfg.seed, "guess");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<_> = items
        .iter()
        .map(|it| it.to_record(if rng.random::<bool>() { "yes" } else { "no" }))
        .collect();
    Ok(AblationRow {
        label: "guess".into(),
        keep_ratio: None,
        num_kept: None,
        contrastive: None,
        alpha: None,
        beta: None,
        seed,
        metrics: pope_scores(&records)?,
        outputs: Vec::new(),
    })
}

/// Recomputes one grid cell from the configuration alone.
pub fn run_ablation_cell(config: &ExperimentConfig, cell: &AblationCell) -> Result<AblationRow> {
    let mut cfg = config.clone();
    cfg.mode = Some(Mode::Ablate);
    cfg.resolve_seeds();
    cfg.validate()?;
    let data = ablation_data(&cfg)?;
    let engine = ablation_engine(&cfg, &data)?;
    cell_row(&engine, &data.items, cell)
}

fn ablate(cfg: &ExperimentConfig) -> Result<(Vec<PathBuf>, String)> {
    let data = ablation_data(cfg)?;
    let engine = ablation_engine(cfg, &data)?;
    let mut rows = Vec::new();
    for cell in ablation_cells(cfg) {
        rows.push(cell_row(&engine, &data.items, &cell)?);
    }
    let vanilla = vanilla_row(&engine, &data.items)?;
    let neutral_matches_vanilla = rows
        .iter()
        .find(|r| r.keep_ratio == Some(1.0) && r.contrastive == Some(false))
        .map(|r| r.outputs == vanilla.outputs);
    rows.push(vanilla);
    rows.push(guess_row(cfg, &data.items)?);

    let mut csv = String::from("label,keep_ratio,num_kept,contrastive,alpha,beta,accuracy,precision,recall,f1,yes_predictions,unparsed\n");
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in &rows {
        let m = &r.metrics;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            opt(r.keep_ratio.map(|v| v.to_string())),
            opt(r.num_kept.map(|v| v.to_string())),
            opt(r.contrastive.map(|v| v.to_string())),
            opt(r.alpha.map(|v| v.to_string())),
            opt(r.beta.map(|v| v.to_string())),
            m.metrics["accuracy"].value,
            m.metrics["precision"].value,
            m.metrics["recall"].value,
            m.metrics["f1"].value,
            m.counts["yes_predictions"],
            m.counts["unparsed"],
        )
        .expect("string write");
    }
    let csv_path = cfg.output_dir.join("ablation.csv");
    write_string(&csv_path, &csv)?;
    let body = AblationReport {
        questions: data.items.len(),
        rows,
        neutral_matches_vanilla,
    };
    let summary = format!(
        "{} rows over {} questions; neutral cell matches vanilla: {}",
        body.rows.len(),
        body.questions,
        neutral_matches_vanilla.map_or("n/a".to_string(), |b| b.to_string())
    );
    let report = write_report(cfg, "ablation.json", body)?;
    Ok((vec![report, csv_path], summary))
}

// ---------------------------------------------------------------------------
// gen-fixtures
// ---------------------------------------------------------------------------

fn gen_fixtures(cfg: &ExperimentConfig) -> Result<(Vec<PathBuf>, String)> {
    let set = generate_fixtures(cfg.seed, &cfg.fixtures, &cfg.lexicon()?)?;
    let files = write_fixtures(&set, &cfg.output_dir)?;
    let summary = format!(
        "{} images, {} POPE questions, {} MME cases, {} captions",
        set.annotations.len(),
        set.pope.len(),
        set.mme.len() / 2,
        set.captions.len()
    );
    Ok((files, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_follow_grid_order() {
        let cfg = ExperimentConfig::default();
        let cells = ablation_cells(&cfg);
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[0].label(), "keep=1/cd=on");
        assert_eq!(cells[1].label(), "keep=1/cd=off");
        assert_eq!(cells[7].label(), "keep=0.125/cd=off");
    }
}
