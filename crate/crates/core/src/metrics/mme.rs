use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Answer, MetricReport, Ratio};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmeAnswer {
    #[serde(default)]
    pub question: String,
    pub gold: Answer,
    pub predicted: Option<Answer>,
}

impl MmeAnswer {
    fn correct(&self) -> bool {
        self.predicted == Some(self.gold)
    }
}

/// One image with its pair of contradictory questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmeCase {
    pub image_id: String,
    #[serde(default = "default_subset")]
    pub subset: String,
    pub questions: Vec<MmeAnswer>,
}

fn default_subset() -> String {
    "all".to_string()
}

#[derive(Default)]
struct Tally {
    cases: u64,
    answers: u64,
    correct: u64,
    both_correct: u64,
}

impl Tally {
    fn add(&mut self, case: &MmeCase) {
        let correct = case.questions.iter().filter(|q| q.correct()).count() as u64;
        self.cases += 1;
        self.answers += case.questions.len() as u64;
        self.correct += correct;
        self.both_correct += u64::from(correct == case.questions.len() as u64);
    }

    fn accuracy(&self) -> Ratio {
        Ratio::from_counts(self.correct, self.answers)
    }

    fn accuracy_plus(&self) -> Ratio {
        Ratio::from_counts(self.both_correct, self.cases)
    }
}

/// Per-answer accuracy, per-case accuracy+ (both answers right), and the
/// percent score `100 * (accuracy + accuracy+)` for each subset.
pub fn mme_scores(cases: &[MmeCase]) -> Result<MetricReport> {
    if cases.is_empty() {
        return Err(Error::Input("no MME cases to score".into()));
    }
    if let Some(bad) = cases.iter().find(|c| c.questions.len() != 2) {
        return Err(Error::Input(format!(
            "MME case for image `{}` has {} questions, expected 2",
            bad.image_id,
            bad.questions.len()
        )));
    }
    let mut overall = Tally::default();
    let mut by_subset: BTreeMap<&str, Tally> = BTreeMap::new();
    for case in cases {
        overall.add(case);
        by_subset.entry(case.subset.as_str()).or_default().add(case);
    }

    let mut report = MetricReport::default();
    report.ratio("accuracy", overall.accuracy());
    report.ratio("accuracy_plus", overall.accuracy_plus());
    report.set_count("cases", overall.cases);
    report.set_count("answers", overall.answers);
    report.set_count("correct", overall.correct);
    report.set_count("both_correct", overall.both_correct);
    let unparsed = cases
        .iter()
        .flat_map(|c| &c.questions)
        .filter(|q| q.predicted.is_none())
        .count() as u64;
    report.set_count("unparsed", unparsed);
    if unparsed > 0 {
        report
            .flags
            .push(format!("{unparsed} prediction(s) had no leading yes/no"));
    }

    let mut total_acc = 0.0;
    let mut total_acc_plus = 0.0;
    for (subset, tally) in &by_subset {
        let acc = tally.accuracy();
        let acc_plus = tally.accuracy_plus();
        report.ratio(&format!("accuracy/{subset}"), acc);
        report.ratio(&format!("accuracy_plus/{subset}"), acc_plus);
        report.scores.insert(
            format!("score/{subset}"),
            100.0 * (acc.value + acc_plus.value),
        );
        total_acc += 100.0 * acc.value;
        total_acc_plus += 100.0 * acc_plus.value;
    }
    // summed over subsets, as MME leaderboards report totals
    report.scores.insert("total_accuracy".into(), total_acc);
    report
        .scores
        .insert("total_accuracy_plus".into(), total_acc_plus);
    report
        .scores
        .insert("total_score".into(), total_acc + total_acc_plus);
    Ok(report)
}
