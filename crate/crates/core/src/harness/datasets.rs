//! Dataset record formats (one JSON object per line).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{parse_yes_no, Answer, MmeAnswer, MmeCase, PopeRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeItem {
    pub question_id: String,
    pub image_id: String,
    /// Probed object; informational.
    #[serde(default)]
    pub object: String,
    pub question: String,
    pub label: Answer,
    /// Free-form model answer. Absent answers are produced by the toy model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
}

impl PopeItem {
    pub fn to_record(&self, prediction: &str) -> PopeRecord {
        PopeRecord {
            question_id: self.question_id.clone(),
            gold: self.label,
            predicted: parse_yes_no(prediction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmeItem {
    /// Groups the two questions of a case.
    pub image_id: String,
    /// Annotated image whose content the toy model sees; defaults to `image_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_image: Option<String>,
    #[serde(default = "default_subset")]
    pub subset: String,
    pub question: String,
    pub label: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
}

fn default_subset() -> String {
    "all".into()
}

impl MmeItem {
    pub fn content_image(&self) -> &str {
        self.source_image.as_deref().unwrap_or(&self.image_id)
    }
}

/// Groups questions into cases by `(subset, image_id)`, in first-appearance order.
pub fn mme_cases(items: &[MmeItem], predictions: &[String]) -> Result<Vec<MmeCase>> {
    if items.len() != predictions.len() {
        return Err(Error::Internal(
            "one prediction per MME question expected".into(),
        ));
    }
    let mut cases: Vec<MmeCase> = Vec::new();
    for (item, pred) in items.iter().zip(predictions) {
        let answer = MmeAnswer {
            question: item.question.clone(),
            gold: item.label,
            predicted: parse_yes_no(pred),
        };
        match cases
            .iter_mut()
            .find(|c| c.image_id == item.image_id && c.subset == item.subset)
        {
            Some(case) => case.questions.push(answer),
            None => cases.push(MmeCase {
                image_id: item.image_id.clone(),
                subset: item.subset.clone(),
                questions: vec![answer],
            }),
        }
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(image: &str, label: Answer) -> MmeItem {
        MmeItem {
            image_id: image.into(),
            source_image: None,
            subset: "all".into(),
            question: String::new(),
            label,
            prediction: None,
        }
    }

    #[test]
    fn groups_by_image_in_order() {
        let items = [
            item("b", Answer::Yes),
            item("a", Answer::Yes),
            item("b", Answer::No),
            item("a", Answer::No),
        ];
        let preds: Vec<String> = ["yes", "no", "no", "maybe"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let cases = mme_cases(&items, &preds).unwrap();
        assert_eq!(cases.len(), 2);
        assert_eq!(cases[0].image_id, "b");
        assert_eq!(cases[0].questions.len(), 2);
        assert_eq!(cases[1].questions[1].predicted, None);
    }

    #[test]
    fn pope_item_parses_prediction() {
        let json =
            r#"{"question_id":"q","image_id":"i","question":"Is there a dog?","label":"no"}"#;
        let it: PopeItem = serde_json::from_str(json).unwrap();
        assert_eq!(it.prediction, None);
        assert_eq!(
            it.to_record("No, there is not.").predicted,
            Some(Answer::No)
        );
    }
}
