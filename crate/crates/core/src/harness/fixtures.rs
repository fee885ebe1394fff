//! Synthetic POPE / MME / CHAIR datasets with a sidecar answer key.
//!
//! Every image gets one to three annotated objects. POPE questions alternate
//! between a present object ("yes") and an absent one ("no"). MME cases pair
//! one present and one absent object. Captions mention a random subset of the
//! annotated objects and sometimes one absent object. The key holds canned
//! predictions and the metric values they must score, counted while the
//! predictions are drawn.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::datasets::{MmeItem, PopeItem};
use super::derive_seed;
use super::io::{write_json, write_jsonl};
use super::lexicon::{Lexicon, SYNONYMS};
use crate::error::{Error, Result};
use crate::metrics::{Answer, CaptionRecord, ChairAnnotation, SynonymMap};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSizes {
    /// Annotated images shared by all three datasets.
    pub images: usize,
    pub pope_questions: usize,
    pub mme_cases: usize,
    /// Captioned images; at most `images`.
    pub chair_captions: usize,
}

impl Default for FixtureSizes {
    fn default() -> Self {
        Self {
            images: 100,
            pope_questions: 3000,
            mme_cases: 100,
            chair_captions: 50,
        }
    }
}

impl FixtureSizes {
    pub fn validate(&self) -> Result<()> {
        if self.images == 0
            || self.pope_questions == 0
            || self.mme_cases == 0
            || self.chair_captions == 0
        {
            return Err(Error::Config("fixture sizes must be positive".into()));
        }
        if self.chair_captions > self.images {
            return Err(Error::Config(format!(
                "chair_captions ({}) exceeds images ({})",
                self.chair_captions, self.images
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PopeKey {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub unparsed: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MmeKey {
    pub correct: u64,
    pub answers: u64,
    pub both_correct: u64,
    pub cases: u64,
    pub accuracy: f64,
    pub accuracy_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChairKey {
    pub hallucinated_objects: u64,
    pub hallucinated_captions: u64,
    pub annotated_objects: u64,
    pub mentioned_annotated_objects: u64,
    pub captions: u64,
    pub chair_i: f64,
    pub chair_s: f64,
    pub recall_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub seed: u64,
    pub sizes: FixtureSizes,
    pub pope: PopeKey,
    pub mme: MmeKey,
    pub chair: ChairKey,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSet {
    pub annotations: Vec<ChairAnnotation>,
    pub pope: Vec<PopeItem>,
    /// `pope` with the key's predictions filled in.
    pub pope_predicted: Vec<PopeItem>,
    pub mme: Vec<MmeItem>,
    pub mme_predicted: Vec<MmeItem>,
    pub captions: Vec<CaptionRecord>,
    pub synonyms: SynonymMap,
    pub key: AnswerKey,
}

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const POPE_FILE: &str = "pope.jsonl";
pub const POPE_PREDICTED_FILE: &str = "pope_predicted.jsonl";
pub const MME_FILE: &str = "mme.jsonl";
pub const MME_PREDICTED_FILE: &str = "mme_predicted.jsonl";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const SYNONYMS_FILE: &str = "synonyms.json";
pub const ANSWER_KEY_FILE: &str = "answer_key.json";

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn existence_question(object: &str) -> String {
    format!("Is there a {object} in the image?")
}

/// Probability that a canned prediction is correct / unparsable.
const POPE_KEY_ACCURACY: f64 = 0.8;
const POPE_KEY_GARBLED: f64 = 0.05;
const MME_KEY_ACCURACY: f64 = 0.75;

pub fn synonym_map(lexicon: &Lexicon) -> SynonymMap {
    let mut map = SynonymMap::default();
    for obj in lexicon.objects() {
        let mut forms: BTreeSet<String> = BTreeSet::from([obj.clone()]);
        if let Some((_, extra)) = SYNONYMS.iter().find(|(o, _)| o == obj) {
            forms.extend(extra.iter().map(|s| s.to_string()));
        }
        map.0.insert(obj.clone(), forms);
    }
    map
}

pub fn generate_fixtures(seed: u64, sizes: &FixtureSizes, lexicon: &Lexicon) -> Result<FixtureSet> {
    sizes.validate()?;
    let pool = lexicon.objects();
    if pool.len() < 4 {
        return Err(Error::Config(format!(
            "fixtures need at least 4 object words, the vocabulary holds {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "fixtures"));

    let annotations: Vec<ChairAnnotation> = (0..sizes.images)
        .map(|i| {
            let count = rng.random_range(1..=3);
            ChairAnnotation {
                image_id: format!("img_{i:05}"),
                objects: pool.choose_multiple(&mut rng, count).cloned().collect(),
            }
        })
        .collect();
    let absent = |rng: &mut ChaCha8Rng, ann: &ChairAnnotation| -> String {
        let missing: Vec<&String> = pool.iter().filter(|o| !ann.objects.contains(*o)).collect();
        (*missing.choose(rng).expect("pool exceeds three objects")).clone()
    };
    let present = |rng: &mut ChaCha8Rng, ann: &ChairAnnotation| -> String {
        let objs: Vec<&String> = ann.objects.iter().collect();
        (*objs.choose(rng).expect("annotations are nonempty")).clone()
    };

    // POPE
    let mut pope = Vec::with_capacity(sizes.pope_questions);
    let mut pope_predicted = Vec::with_capacity(sizes.pope_questions);
    let mut pk = PopeKey::default();
    for i in 0..sizes.pope_questions {
        let ann = &annotations[rng.random_range(0..annotations.len())];
        let label = if i % 2 == 0 { Answer::Yes } else { Answer::No };
        let object = match label {
            Answer::Yes => present(&mut rng, ann),
            Answer::No => absent(&mut rng, ann),
        };
        let item = PopeItem {
            question_id: format!("pope_{i:05}"),
            image_id: ann.image_id.clone(),
            object: object.clone(),
            question: existence_question(&object),
            label,
            prediction: None,
        };
        let draw: f64 = rng.random();
        let (text, said) = if draw < POPE_KEY_GARBLED {
            ("I cannot tell.".to_string(), None)
        } else {
            let said = if draw < POPE_KEY_GARBLED + POPE_KEY_ACCURACY {
                label
            } else {
                label.flip()
            };
            let text = match said {
                Answer::Yes => format!("Yes, there is a {object}."),
                Answer::No => format!("No, there is no {object}."),
            };
            (text, Some(said))
        };
        pk.unparsed += u64::from(said.is_none());
        match (label, said.unwrap_or(label.flip())) {
            (Answer::Yes, Answer::Yes) => pk.tp += 1,
            (Answer::No, Answer::Yes) => pk.fp += 1,
            (Answer::Yes, Answer::No) => pk.fn_ += 1,
            (Answer::No, Answer::No) => pk.tn += 1,
        }
        pope_predicted.push(PopeItem {
            prediction: Some(text),
            ..item.clone()
        });
        pope.push(item);
    }
    pk.accuracy = ratio(pk.tp + pk.tn, sizes.pope_questions as u64);
    pk.precision = ratio(pk.tp, pk.tp + pk.fp);
    pk.recall = ratio(pk.tp, pk.tp + pk.fn_);
    pk.f1 = ratio(2 * pk.tp, 2 * pk.tp + pk.fp + pk.fn_);

    // MME
    let mut mme = Vec::with_capacity(2 * sizes.mme_cases);
    let mut mme_predicted = Vec::with_capacity(2 * sizes.mme_cases);
    let mut mk = MmeKey::default();
    for i in 0..sizes.mme_cases {
        let ann = &annotations[i % annotations.len()];
        let case_id = format!("mme_{i:05}");
        let pair = [
            (present(&mut rng, ann), Answer::Yes),
            (absent(&mut rng, ann), Answer::No),
        ];
        let mut right = 0;
        for (object, label) in pair {
            let item = MmeItem {
                image_id: case_id.clone(),
                source_image: Some(ann.image_id.clone()),
                subset: "existence".into(),
                question: format!("{} Please answer yes or no.", existence_question(&object)),
                label,
                prediction: None,
            };
            let said = if rng.random::<f64>() < MME_KEY_ACCURACY {
                label
            } else {
                label.flip()
            };
            right += u64::from(said == label);
            mme_predicted.push(MmeItem {
                prediction: Some(match said {
                    Answer::Yes => "Yes".into(),
                    Answer::No => "No".into(),
                }),
                ..item.clone()
            });
            mme.push(item);
        }
        mk.correct += right;
        mk.answers += 2;
        mk.both_correct += u64::from(right == 2);
        mk.cases += 1;
    }
    mk.accuracy = ratio(mk.correct, mk.answers);
    mk.accuracy_plus = ratio(mk.both_correct, mk.cases);

    // CHAIR
    let synonyms = synonym_map(lexicon);
    let mut captions = Vec::with_capacity(sizes.chair_captions);
    let mut ck = ChairKey::default();
    for ann in annotations.iter().take(sizes.chair_captions) {
        let mut mentioned: Vec<String> = ann
            .objects
            .iter()
            .filter(|_| rng.random::<bool>())
            .cloned()
            .collect();
        ck.mentioned_annotated_objects += mentioned.len() as u64;
        ck.annotated_objects += ann.objects.len() as u64;
        if rng.random::<f64>() < 0.3 {
            mentioned.push(absent(&mut rng, ann));
            ck.hallucinated_objects += 1;
            ck.hallucinated_captions += 1;
        }
        mentioned.shuffle(&mut rng);
        let phrases: Vec<String> = mentioned
            .iter()
            .map(|obj| {
                let forms: Vec<&String> = synonyms.0[obj].iter().collect();
                format!("a {}", forms.choose(&mut rng).expect("category has a form"))
            })
            .collect();
        let caption = if phrases.is_empty() {
            "A photo.".to_string()
        } else {
            format!("A photo with {}.", phrases.join(" and "))
        };
        captions.push(CaptionRecord {
            image_id: ann.image_id.clone(),
            caption,
        });
        ck.captions += 1;
    }
    ck.chair_i = ratio(ck.hallucinated_objects, ck.annotated_objects);
    ck.chair_s = ratio(ck.hallucinated_captions, ck.captions);
    ck.recall_i = ratio(ck.mentioned_annotated_objects, ck.annotated_objects);

    Ok(FixtureSet {
        annotations,
        pope,
        pope_predicted,
        mme,
        mme_predicted,
        captions,
        synonyms,
        key: AnswerKey {
            seed,
            sizes: sizes.clone(),
            pope: pk,
            mme: mk,
            chair: ck,
        },
    })
}

pub fn write_fixtures(set: &FixtureSet, dir: &Path) -> Result<Vec<PathBuf>> {
    let path = |name: &str| dir.join(name);
    write_jsonl(&path(ANNOTATIONS_FILE), &set.annotations)?;
    write_jsonl(&path(POPE_FILE), &set.pope)?;
    write_jsonl(&path(POPE_PREDICTED_FILE), &set.pope_predicted)?;
    write_jsonl(&path(MME_FILE), &set.mme)?;
    write_jsonl(&path(MME_PREDICTED_FILE), &set.mme_predicted)?;
    write_jsonl(&path(CAPTIONS_FILE), &set.captions)?;
    write_json(&path(SYNONYMS_FILE), &set.synonyms)?;
    write_json(&path(ANSWER_KEY_FILE), &set.key)?;
    Ok([
        ANNOTATIONS_FILE,
        POPE_FILE,
        POPE_PREDICTED_FILE,
        MME_FILE,
        MME_PREDICTED_FILE,
        CAPTIONS_FILE,
        SYNONYMS_FILE,
        ANSWER_KEY_FILE,
    ]
    .iter()
    .map(|n| path(n))
    .collect())
}
