use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{MetricReport, Ratio};
use crate::error::{Error, Result};

/// Category name → surface forms (single or multi-word). Surface sets must be
/// disjoint across categories.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SynonymMap(pub BTreeMap<String, BTreeSet<String>>);

impl SynonymMap {
    pub fn from_pairs<'a, I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, S)>,
        S: IntoIterator<Item = &'a str>,
    {
        Self(
            pairs
                .into_iter()
                .map(|(cat, forms)| {
                    (
                        cat.to_string(),
                        forms.into_iter().map(str::to_string).collect(),
                    )
                })
                .collect(),
        )
    }
}

/// Ground-truth objects for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChairAnnotation {
    pub image_id: String,
    pub objects: BTreeSet<String>,
}

/// A generated caption for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("person", "people"),
    ("man", "men"),
    ("woman", "women"),
    ("child", "children"),
    ("mouse", "mice"),
    ("foot", "feet"),
    ("tooth", "teeth"),
    ("goose", "geese"),
    ("knife", "knives"),
    ("leaf", "leaves"),
    ("wolf", "wolves"),
    ("shelf", "shelves"),
    ("sheep", "sheep"),
    ("deer", "deer"),
    ("fish", "fish"),
];

/// Plural of a single lowercase word.
fn plural(word: &str) -> String {
    if let Some((_, p)) = IRREGULAR_PLURALS.iter().find(|(s, _)| *s == word) {
        return (*p).to_string();
    }
    // compound words such as "sportsman" / "snowman"
    if let Some(stem) = word.strip_suffix("man") {
        if !stem.is_empty() {
            return format!("{stem}men");
        }
    }
    let ends_sibilant = ["s", "x", "z", "ch", "sh"]
        .iter()
        .any(|s| word.ends_with(s));
    if ends_sibilant {
        return format!("{word}es");
    }
    let mut chars = word.chars().rev();
    if let (Some('y'), Some(prev)) = (chars.next(), chars.next()) {
        if !"aeiou".contains(prev) {
            return format!("{}ies", &word[..word.len() - 1]);
        }
    }
    format!("{word}s")
}

/// Longest-match object extractor built from a [`SynonymMap`].
#[derive(Debug, Clone)]
pub struct ObjectMatcher {
    forms: HashMap<Vec<String>, String>,
    max_words: usize,
}

impl ObjectMatcher {
    pub fn new(synonyms: &SynonymMap) -> Result<Self> {
        let mut explicit: HashMap<Vec<String>, String> = HashMap::new();
        for (category, surfaces) in &synonyms.0 {
            for surface in surfaces {
                let words = tokenize(surface);
                if words.is_empty() {
                    return Err(Error::Input(format!(
                        "empty surface form for category `{category}`"
                    )));
                }
                if let Some(prev) = explicit.insert(words, category.clone()) {
                    if prev != *category {
                        return Err(Error::Input(format!(
                            "surface form `{surface}` maps to both `{prev}` and `{category}`"
                        )));
                    }
                }
            }
        }
        let mut forms = explicit.clone();
        for (words, category) in &explicit {
            let mut plural_form = words.clone();
            let last = plural_form.pop().expect("nonempty");
            plural_form.push(plural(&last));
            // an explicit surface form always beats a derived plural
            forms.entry(plural_form).or_insert_with(|| category.clone());
        }
        let max_words = forms.keys().map(Vec::len).max().unwrap_or(0);
        Ok(Self { forms, max_words })
    }

    /// Categories mentioned in `caption`, in order of appearance, one entry per mention.
    pub fn extract(&self, caption: &str) -> Vec<String> {
        let words = tokenize(caption);
        let mut found = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let longest = (1..=self.max_words.min(words.len() - i))
                .rev()
                .find_map(|len| self.forms.get(&words[i..i + len]).map(|cat| (len, cat)));
            match longest {
                Some((len, cat)) => {
                    found.push(cat.clone());
                    i += len;
                }
                None => i += 1,
            }
        }
        found
    }
}

/// Multiset of categories mentioned in `caption` (longest surface match wins,
/// simple plurals included).
pub fn extract_objects(caption: &str, synonyms: &SynonymMap) -> Result<Vec<String>> {
    Ok(ObjectMatcher::new(synonyms)?.extract(caption))
}

/// CHAIR_I, CHAIR_S and RECALL_I over a caption corpus.
///
/// Mentions are deduplicated per caption. CHAIR_I divides hallucinated
/// objects by all annotated objects; the more common variant that divides
/// by all mentioned objects is reported as `chair_i_mentioned`.
pub fn chair_scores(
    annotations: &[ChairAnnotation],
    captions: &[CaptionRecord],
    synonyms: &SynonymMap,
) -> Result<MetricReport> {
    let matcher = ObjectMatcher::new(synonyms)?;
    let mut by_image: HashMap<&str, &BTreeSet<String>> = HashMap::new();
    for a in annotations {
        if a.objects.is_empty() {
            return Err(Error::Input(format!(
                "image `{}` has no annotated objects",
                a.image_id
            )));
        }
        if by_image.insert(a.image_id.as_str(), &a.objects).is_some() {
            return Err(Error::Input(format!(
                "duplicate annotation for image `{}`",
                a.image_id
            )));
        }
    }

    let (mut hallucinated, mut annotated, mut mentioned, mut mentioned_annotated, mut bad_captions) =
        (0u64, 0u64, 0u64, 0u64, 0u64);
    for c in captions {
        let truth = by_image.get(c.image_id.as_str()).ok_or_else(|| {
            Error::Input(format!(
                "caption for image `{}` has no annotation",
                c.image_id
            ))
        })?;
        let mentions: BTreeSet<String> = matcher.extract(&c.caption).into_iter().collect();
        let wrong = mentions.iter().filter(|m| !truth.contains(*m)).count() as u64;
        hallucinated += wrong;
        bad_captions += u64::from(wrong > 0);
        annotated += truth.len() as u64;
        mentioned += mentions.len() as u64;
        mentioned_annotated += mentions.len() as u64 - wrong;
    }

    let mut report = MetricReport::default();
    report.ratio("chair_i", Ratio::from_counts(hallucinated, annotated));
    report.ratio(
        "chair_s",
        Ratio::from_counts(bad_captions, captions.len() as u64),
    );
    report.ratio(
        "recall_i",
        Ratio::from_counts(mentioned_annotated, annotated),
    );
    report.ratio(
        "chair_i_mentioned",
        Ratio::from_counts(hallucinated, mentioned),
    );
    report.set_count("captions", captions.len() as u64);
    report.set_count("hallucinated_objects", hallucinated);
    report.set_count("hallucinated_captions", bad_captions);
    report.set_count("annotated_objects", annotated);
    report.set_count("mentioned_objects", mentioned);
    report.set_count("mentioned_annotated_objects", mentioned_annotated);
    Ok(report)
}
