//! LLM-as-judge scoring for the open-ended tasks.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{EvalError, EvalRecord};
use crate::llm::LlmClient;

const DEFAULT_RUBRIC: &str = include_str!("../../assets/judge_rubric.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRubric {
    pub version: String,
    pub system: String,
    /// Must contain `{question}` and `{answer}`.
    pub template: String,
}

impl JudgeRubric {
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_RUBRIC).expect("bundled rubric is valid")
    }

    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        let r: JudgeRubric = serde_json::from_str(s).map_err(|e| EvalError::Rubric(e.to_string()))?;
        for p in ["{question}", "{answer}"] {
            if !r.template.contains(p) {
                return Err(EvalError::Rubric(format!("template lacks {p}")));
            }
        }
        Ok(r)
    }

    pub fn render(&self, question: &str, answer: &str) -> String {
        self.template.replace("{question}", question).replace("{answer}", answer)
    }
}

fn number() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+(?:\.\d+)?").unwrap())
}

/// The first number in a judge reply: `"Score: 7/10"` gives 7.
pub fn parse_judge_score(reply: &str) -> Result<f64, EvalError> {
    number()
        .find(reply)
        .and_then(|m| m.as_str().parse().ok())
        .ok_or_else(|| EvalError::JudgeParse(reply.to_string()))
}

/// Scores the label and the prediction in two separate requests.
pub fn judge_with_llm(record: &EvalRecord, client: &dyn LlmClient, rubric: &JudgeRubric) -> Result<(f64, f64), EvalError> {
    if !record.task.is_advanced() {
        return Err(EvalError::NotJudged(record.sample_id.clone()));
    }
    let ask = |answer: &str| -> Result<f64, EvalError> {
        parse_judge_score(&client.send(&rubric.render(&record.question, answer), &rubric.system)?)
    };
    let pred = ask(&record.prediction)?;
    let label = ask(&record.label)?;
    Ok((pred, label))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeSummary {
    pub judged: usize,
    pub parse_failures: usize,
    pub transport_failures: usize,
    pub failed_ids: Vec<String>,
}

/// Attaches judge scores to every advanced record that lacks them. Failed
/// records keep `judge_scores = None` and are excluded from scoring later.
pub fn judge_records(
    records: &mut [EvalRecord],
    client: &dyn LlmClient,
    rubric: &JudgeRubric,
    max_in_flight: usize,
) -> JudgeSummary {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Option<Result<(f64, f64), EvalError>>> = pool.install(|| {
        records
            .par_iter()
            .map(|r| (r.task.is_advanced() && r.judge_scores.is_none()).then(|| judge_with_llm(r, client, rubric)))
            .collect()
    });
    let mut summary = JudgeSummary::default();
    for (r, res) in records.iter_mut().zip(results) {
        match res {
            None => {}
            Some(Ok(scores)) => {
                r.judge_scores = Some(scores);
                summary.judged += 1;
            }
            Some(Err(e)) => {
                log::warn!("judge failed for {}: {e}", r.sample_id);
                match e {
                    EvalError::Llm(_) => summary.transport_failures += 1,
                    _ => summary.parse_failures += 1,
                }
                summary.failed_ids.push(r.sample_id.clone());
            }
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Fixture, ReplayClient};
    use crate::task::Task;

    #[test]
    fn score_extraction() {
        assert_eq!(parse_judge_score("Score: 7/10").unwrap(), 7.0);
        assert_eq!(parse_judge_score("8.5").unwrap(), 8.5);
        assert!(matches!(parse_judge_score("excellent answer"), Err(EvalError::JudgeParse(_))));
    }

    #[test]
    fn replay_judging_is_deterministic() {
        let rubric = JudgeRubric::builtin();
        let record = EvalRecord {
            sample_id: "conv_perception:s1:q0".into(),
            task: Task::ConvPerception,
            platform: None,
            question: "What is shown?".into(),
            prediction: "A list.".into(),
            label: "A list of songs.".into(),
            references: vec![],
            pred_regions: vec![],
            label_regions: vec![],
            judge_scores: None,
        };
        let client = ReplayClient::new(
            "judge",
            [
                Fixture::new("judge", &rubric.system, &rubric.render("What is shown?", "A list."), "Score: 6/10"),
                Fixture::new("judge", &rubric.system, &rubric.render("What is shown?", "A list of songs."), "Score: 8/10"),
            ],
        );
        assert_eq!(judge_with_llm(&record, &client, &rubric).unwrap(), (6.0, 8.0));
        let mut recs = vec![record.clone(), EvalRecord { prediction: "other".into(), ..record }];
        let s = judge_records(&mut recs, &client, &rubric, 2);
        assert_eq!(s.judged, 1);
        assert_eq!(s.transport_failures, 1);
        assert_eq!(recs[0].judge_scores, Some((6.0, 8.0)));
        assert_eq!(recs[1].judge_scores, None);
    }
}
