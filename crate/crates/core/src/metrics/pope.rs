use serde::{Deserialize, Serialize};

use super::{Answer, MetricReport, Ratio};
use crate::error::{Error, Result};

/// One scored POPE question. `predicted = None` means the output had no
/// leading yes/no; it is counted as a wrong answer and flagged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeRecord {
    pub question_id: String,
    pub gold: Answer,
    pub predicted: Option<Answer>,
}

/// Accuracy, precision, recall and F1 with "yes" as the positive class.
pub fn pope_scores(records: &[PopeRecord]) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::Input("no POPE records to score".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn, mut unparsed) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for r in records {
        let predicted = r.predicted.unwrap_or_else(|| {
            unparsed += 1;
            r.gold.flip()
        });
        match (r.gold, predicted) {
            (Answer::Yes, Answer::Yes) => tp += 1,
            (Answer::No, Answer::Yes) => fp += 1,
            (Answer::Yes, Answer::No) => fn_ += 1,
            (Answer::No, Answer::No) => tn += 1,
        }
    }
    let mut report = MetricReport::default();
    report.ratio(
        "accuracy",
        Ratio::from_counts(tp + tn, records.len() as u64),
    );
    report.ratio("precision", Ratio::from_counts(tp, tp + fp));
    report.ratio("recall", Ratio::from_counts(tp, tp + fn_));
    // 2PR / (P + R) == 2TP / (2TP + FP + FN); undefined whenever TP = 0
    let mut f1 = Ratio::from_counts(2 * tp, 2 * tp + fp + fn_);
    f1.degenerate |= tp == 0;
    report.ratio("f1", f1);
    report.set_count("tp", tp);
    report.set_count("fp", fp);
    report.set_count("fn", fn_);
    report.set_count("tn", tn);
    report.set_count("total", records.len() as u64);
    report.set_count("unparsed", unparsed);
    report.set_count("yes_predictions", tp + fp);
    if unparsed > 0 {
        report
            .flags
            .push(format!("{unparsed} prediction(s) had no leading yes/no"));
    }
    Ok(report)
}
