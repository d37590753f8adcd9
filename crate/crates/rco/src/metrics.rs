//! Evaluation aggregates: mean critique utility, mean response quality
//! score, and refinement accuracy via answer-consistency checking.
//!
//! CU is aggregated per judged pair first (both orders averaged), then per
//! task, then overall with count weighting. Reported CU is multiplied
//! by 100. Ratings that failed to parse never enter a denominator.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::{complete, CompletionRequest, Endpoint, GREEDY_TEMPERATURE};
use crate::judge::{parse_verdict, JudgmentRecord, RatingRecord, Verdict};
use crate::records::{PromptRecord, TaskKind};

/// One report row. `count` is the number of judged refinement units behind
/// the row; rating means are taken over the units whose rating parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task: String,
    pub mean_cu_x100: f64,
    pub mean_rqs: f64,
    pub count: u64,
}

/// Per-task rows plus the count-weighted overall row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub overall: MetricRow,
}

/// Per-task means with their counts.
#[derive(Debug, Clone, Default)]
pub struct TaskAggregate {
    pub per_task: BTreeMap<TaskKind, (f64, u64)>,
    pub overall: (f64, u64),
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report has no rows")]
    EmptyReport,
}

fn weighted_overall(rows: &BTreeMap<TaskKind, (f64, u64)>) -> (f64, u64) {
    let total: u64 = rows.values().map(|(_, n)| n).sum();
    if total == 0 {
        return (0.0, 0);
    }
    let sum: f64 = rows.values().map(|(mean, n)| mean * *n as f64).sum();
    (sum / total as f64, total)
}

/// Mean CU per task and overall, multiplied by 100.
///
/// Judgments are grouped per (prompt, critique, refinement) pair and the
/// preference scores of the available orders averaged before task-level
/// averaging. Judgments whose prompt is missing from `task_of` are skipped
/// with a warning entry.
pub fn aggregate_cu(
    judgments: &[JudgmentRecord],
    task_of: &BTreeMap<String, TaskKind>,
) -> (TaskAggregate, Vec<String>) {
    let mut pairs: BTreeMap<(String, u32, u32), Vec<f64>> = BTreeMap::new();
    let mut warnings = Vec::new();
    for judgment in judgments {
        if !task_of.contains_key(&judgment.prompt_id) {
            warnings.push(format!(
                "judgment for unknown prompt {} skipped",
                judgment.prompt_id
            ));
            continue;
        }
        pairs
            .entry((
                judgment.prompt_id.clone(),
                judgment.critique_index,
                judgment.refinement_index,
            ))
            .or_default()
            .push(judgment.ps);
    }
    let mut sums: BTreeMap<TaskKind, (f64, u64)> = BTreeMap::new();
    for ((prompt_id, _, _), scores) in &pairs {
        let task = task_of[prompt_id];
        let pair_mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let entry = sums.entry(task).or_insert((0.0, 0));
        entry.0 += pair_mean;
        entry.1 += 1;
    }
    let per_task: BTreeMap<TaskKind, (f64, u64)> = sums
        .into_iter()
        .map(|(task, (sum, n))| (task, (100.0 * sum / n as f64, n)))
        .collect();
    let overall = weighted_overall(&per_task);
    (TaskAggregate { per_task, overall }, warnings)
}

/// Mean 1-10 rating per task and overall.
pub fn aggregate_rqs(
    ratings: &[RatingRecord],
    task_of: &BTreeMap<String, TaskKind>,
) -> (TaskAggregate, Vec<String>) {
    let mut sums: BTreeMap<TaskKind, (f64, u64)> = BTreeMap::new();
    let mut warnings = Vec::new();
    for rating in ratings {
        let Some(task) = task_of.get(&rating.prompt_id) else {
            warnings.push(format!(
                "rating for unknown prompt {} skipped",
                rating.prompt_id
            ));
            continue;
        };
        let entry = sums.entry(*task).or_insert((0.0, 0));
        entry.0 += rating.rating as f64;
        entry.1 += 1;
    }
    let per_task: BTreeMap<TaskKind, (f64, u64)> = sums
        .into_iter()
        .map(|(task, (sum, n))| (task, (sum / n as f64, n)))
        .collect();
    let overall = weighted_overall(&per_task);
    (TaskAggregate { per_task, overall }, warnings)
}

/// Combine CU and RQS aggregates into the report table. Row counts come
/// from the CU pair counts; tasks with ratings but no judgments keep their
/// rating count.
pub fn build_report(cu: &TaskAggregate, rqs: &TaskAggregate) -> MetricReport {
    let tasks: std::collections::BTreeSet<TaskKind> = cu
        .per_task
        .keys()
        .chain(rqs.per_task.keys())
        .copied()
        .collect();
    let rows: Vec<MetricRow> = TaskKind::ALL
        .iter()
        .filter(|t| tasks.contains(t))
        .map(|task| {
            let (mean_cu, pairs) = cu.per_task.get(task).copied().unwrap_or((0.0, 0));
            let (mean_rqs, ratings) = rqs.per_task.get(task).copied().unwrap_or((0.0, 0));
            MetricRow {
                task: task.name().to_string(),
                mean_cu_x100: mean_cu,
                mean_rqs,
                count: pairs.max(ratings),
            }
        })
        .collect();
    MetricReport {
        overall: MetricRow {
            task: "overall".to_string(),
            mean_cu_x100: cu.overall.0,
            mean_rqs: rqs.overall.0,
            count: cu.overall.1.max(rqs.overall.1),
        },
        rows,
    }
}

/// Executable contract for code-accuracy checking: run `code` against the
/// identified test suite and report pass/fail.
pub trait CodeExecutor {
    fn execute(&self, code: &str, suite_id: &str) -> Result<bool, String>;
}

/// Consistency-check tally.
#[derive(Debug, Clone, Default)]
pub struct ConsistencyOutcome {
    pub checked: u64,
    pub consistent: u64,
    pub warnings: Vec<String>,
}

impl ConsistencyOutcome {
    /// Fraction of checked refinements judged consistent; `None` when
    /// nothing could be checked.
    pub fn accuracy(&self) -> Option<f64> {
        (self.checked > 0).then(|| self.consistent as f64 / self.checked as f64)
    }
}

const CONSISTENCY_PROMPT: &str = "You are checking answer consistency. Compare the final answer \
given in a response against the gold standard answer to the question.\n\
Question: {prompt}\n\
Gold standard answer: {gold}\n\
Response: {answer}\n\
Does the response's final answer agree with the gold standard answer? After a brief check, reply \
with \"[[A]]\" if it agrees and \"[[B]]\" if it does not.";

/// Fraction of refinements whose final answer matches the gold standard.
///
/// QA and math records are checked by the judge endpoint; code records are
/// delegated to the `executor` hook. Records without a gold answer (or
/// without an executor) are skipped with a warning.
pub fn consistency_accuracy(
    items: &[(&PromptRecord, &str)],
    judge: &Endpoint,
    executor: Option<&dyn CodeExecutor>,
    max_tokens: u32,
) -> ConsistencyOutcome {
    let mut outcome = ConsistencyOutcome::default();
    for (record, refined_text) in items {
        match record.task {
            TaskKind::Code => {
                let Some(executor) = executor else {
                    outcome
                        .warnings
                        .push(format!("{}: no code executor configured", record.id));
                    continue;
                };
                match executor.execute(refined_text, &record.id) {
                    Ok(passed) => {
                        outcome.checked += 1;
                        if passed {
                            outcome.consistent += 1;
                        }
                    }
                    Err(e) => outcome
                        .warnings
                        .push(format!("{}: execution failed: {e}", record.id)),
                }
            }
            TaskKind::QuestionAnswering | TaskKind::Math => {
                let Some(gold) = &record.reference_answer else {
                    outcome
                        .warnings
                        .push(format!("{}: no gold answer", record.id));
                    continue;
                };
                let user = CONSISTENCY_PROMPT
                    .replace("{prompt}", &record.prompt)
                    .replace("{gold}", gold)
                    .replace("{answer}", refined_text);
                let request = CompletionRequest::from_prompt(
                    crate::config::Role::Judge,
                    &crate::templates::RenderedPrompt { system: None, user },
                    GREEDY_TEMPERATURE,
                    max_tokens,
                    None,
                );
                match complete(judge, &request).map(|r| parse_verdict(&r.text)) {
                    Ok(Ok(Verdict::A)) => {
                        outcome.checked += 1;
                        outcome.consistent += 1;
                    }
                    Ok(Ok(Verdict::B)) => outcome.checked += 1,
                    Ok(Ok(Verdict::C)) => outcome
                        .warnings
                        .push(format!("{}: judge returned a tie on a yes/no check", record.id)),
                    Ok(Err(e)) => outcome
                        .warnings
                        .push(format!("{}: unparseable consistency verdict: {e}", record.id)),
                    Err(e) => outcome
                        .warnings
                        .push(format!("{}: judge call failed: {e}", record.id)),
                }
            }
            _ => outcome.warnings.push(format!(
                "{}: consistency checking applies to QA, math, and code records",
                record.id
            )),
        }
    }
    outcome
}

/// Write the report as an aligned text table plus one JSON object per row.
/// Produces `report.txt` and `report.jsonl` in `dir`; bytes depend only on
/// the report contents.
pub fn emit_report(report: &MetricReport, dir: &Path) -> Result<(), MetricsError> {
    if report.rows.is_empty() {
        return Err(MetricsError::EmptyReport);
    }
    let io_err = |path: &Path| {
        let display = path.display().to_string();
        move |source| MetricsError::Io {
            path: display.clone(),
            source,
        }
    };

    let mut lines: Vec<[String; 4]> = Vec::new();
    lines.push([
        "task".into(),
        "mean_cu_x100".into(),
        "mean_rqs".into(),
        "count".into(),
    ]);
    for row in report.rows.iter().chain([&report.overall]) {
        lines.push([
            row.task.clone(),
            format!("{:.1}", row.mean_cu_x100),
            format!("{:.2}", row.mean_rqs),
            row.count.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..4)
        .map(|col| lines.iter().map(|l| l[col].len()).max().unwrap_or(0))
        .collect();
    let mut table = String::new();
    for line in &lines {
        let mut rendered = format!("{:<width$}", line[0], width = widths[0]);
        for col in 1..4 {
            rendered.push_str(&format!("  {:>width$}", line[col], width = widths[col]));
        }
        table.push_str(rendered.trim_end());
        table.push('\n');
    }
    let text_path = dir.join("report.txt");
    std::fs::write(&text_path, table).map_err(io_err(&text_path))?;

    let mut jsonl = String::new();
    for row in report.rows.iter().chain([&report.overall]) {
        jsonl.push_str(&serde_json::to_string(row).expect("row serializes"));
        jsonl.push('\n');
    }
    let json_path = dir.join("report.jsonl");
    std::fs::write(&json_path, jsonl).map_err(io_err(&json_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{make_mock_backend, BackendError, MockBehavior, RetryPolicy, ScriptedBackend};
    use crate::judge::{verdict_to_ps, JudgeOrder};
    use std::time::Duration;

    fn judgment(
        prompt_id: &str,
        critique: u32,
        refinement: u32,
        order: JudgeOrder,
        verdict: Verdict,
    ) -> JudgmentRecord {
        JudgmentRecord {
            prompt_id: prompt_id.into(),
            critique_index: critique,
            refinement_index: refinement,
            order,
            verdict,
            ps: verdict_to_ps(verdict, order),
            raw: String::new(),
        }
    }

    fn tasks(pairs: &[(&str, TaskKind)]) -> BTreeMap<String, TaskKind> {
        pairs.iter().map(|(id, t)| (id.to_string(), *t)).collect()
    }

    #[test]
    fn unanimous_refined_preference_scores_100() {
        let task_of = tasks(&[("q1", TaskKind::Dialog)]);
        let judgments = vec![
            judgment("q1", 1, 1, JudgeOrder::RefinedFirst, Verdict::A),
            judgment("q1", 1, 1, JudgeOrder::InitialFirst, Verdict::B),
        ];
        let (agg, warnings) = aggregate_cu(&judgments, &task_of);
        assert!(warnings.is_empty());
        assert_eq!(agg.overall, (100.0, 1));
    }

    #[test]
    fn fully_position_biased_judge_scores_50() {
        let task_of = tasks(&[("q1", TaskKind::Math)]);
        let judgments = vec![
            judgment("q1", 1, 1, JudgeOrder::RefinedFirst, Verdict::A),
            judgment("q1", 1, 1, JudgeOrder::InitialFirst, Verdict::A),
        ];
        let (agg, _) = aggregate_cu(&judgments, &task_of);
        assert_eq!(agg.overall.0, 50.0);
    }

    #[test]
    fn mixed_fixture_matches_hand_enumeration() {
        let task_of = tasks(&[("q1", TaskKind::Dialog), ("q2", TaskKind::Code)]);
        // q1: pairs with means 1.0 and 0.5; q2: pairs with means 0.0,
        // 1.0, 0.25.
        let judgments = vec![
            judgment("q1", 1, 1, JudgeOrder::RefinedFirst, Verdict::A),
            judgment("q1", 1, 1, JudgeOrder::InitialFirst, Verdict::B),
            judgment("q1", 2, 1, JudgeOrder::RefinedFirst, Verdict::C),
            judgment("q1", 2, 1, JudgeOrder::InitialFirst, Verdict::C),
            judgment("q2", 1, 1, JudgeOrder::RefinedFirst, Verdict::B),
            judgment("q2", 1, 1, JudgeOrder::InitialFirst, Verdict::A),
            judgment("q2", 2, 1, JudgeOrder::RefinedFirst, Verdict::A),
            judgment("q2", 2, 1, JudgeOrder::InitialFirst, Verdict::B),
            judgment("q2", 3, 1, JudgeOrder::RefinedFirst, Verdict::C),
            judgment("q2", 3, 1, JudgeOrder::InitialFirst, Verdict::A),
        ];
        let (agg, _) = aggregate_cu(&judgments, &task_of);
        let dialog = agg.per_task[&TaskKind::Dialog];
        let code = agg.per_task[&TaskKind::Code];
        assert_eq!(dialog, (75.0, 2));
        assert!((code.0 - 100.0 * (0.0 + 1.0 + 0.25) / 3.0).abs() < 1e-12);
        // Overall: count-weighted.
        let expected = (75.0 * 2.0 + code.0 * 3.0) / 5.0;
        assert!((agg.overall.0 - expected).abs() < 1e-12);
    }

    #[test]
    fn rqs_means_and_exclusions() {
        let task_of = tasks(&[("q1", TaskKind::Dialog)]);
        let ratings = vec![
            RatingRecord {
                prompt_id: "q1".into(),
                subject: crate::judge::RatingSubject::Refinement,
                critique_index: 1,
                rating: 6,
                raw: String::new(),
            },
            RatingRecord {
                prompt_id: "q1".into(),
                subject: crate::judge::RatingSubject::Refinement,
                critique_index: 2,
                rating: 8,
                raw: String::new(),
            },
        ];
        let (agg, _) = aggregate_rqs(&ratings, &task_of);
        assert_eq!(agg.overall, (7.0, 2));

        let (single, _) = aggregate_rqs(&ratings[..1], &task_of);
        assert_eq!(single.overall, (6.0, 1));
    }

    #[test]
    fn order_relabeling_leaves_cu_unchanged() {
        let task_of = tasks(&[("q1", TaskKind::Dialog), ("q2", TaskKind::Math)]);
        let judgments = vec![
            judgment("q1", 1, 1, JudgeOrder::RefinedFirst, Verdict::A),
            judgment("q1", 1, 2, JudgeOrder::InitialFirst, Verdict::C),
            judgment("q2", 2, 1, JudgeOrder::InitialFirst, Verdict::A),
            judgment("q2", 3, 1, JudgeOrder::RefinedFirst, Verdict::B),
        ];
        // Swap every order label and the verdict letter with it; the
        // preference each judgment expresses is unchanged.
        let relabeled: Vec<JudgmentRecord> = judgments
            .iter()
            .map(|j| {
                let verdict = match j.verdict {
                    Verdict::A => Verdict::B,
                    Verdict::B => Verdict::A,
                    Verdict::C => Verdict::C,
                };
                JudgmentRecord {
                    order: j.order.flipped(),
                    verdict,
                    ps: verdict_to_ps(verdict, j.order.flipped()),
                    ..j.clone()
                }
            })
            .collect();
        let (a, _) = aggregate_cu(&judgments, &task_of);
        let (b, _) = aggregate_cu(&relabeled, &task_of);
        assert_eq!(a.per_task, b.per_task);
    }

    #[test]
    fn adding_a_full_preference_never_lowers_cu() {
        let task_of = tasks(&[("q1", TaskKind::Dialog)]);
        let mut judgments = vec![
            judgment("q1", 1, 1, JudgeOrder::RefinedFirst, Verdict::B),
            judgment("q1", 1, 1, JudgeOrder::InitialFirst, Verdict::A),
            judgment("q1", 2, 1, JudgeOrder::RefinedFirst, Verdict::C),
        ];
        let (before, _) = aggregate_cu(&judgments, &task_of);
        judgments.push(judgment("q1", 3, 1, JudgeOrder::RefinedFirst, Verdict::A));
        let (after, _) = aggregate_cu(&judgments, &task_of);
        assert!(after.overall.0 >= before.overall.0);
    }

    struct ScriptedExecutor(Vec<bool>);

    impl CodeExecutor for ScriptedExecutor {
        fn execute(&self, _code: &str, suite_id: &str) -> Result<bool, String> {
            let index: usize = suite_id
                .trim_start_matches(|c: char| !c.is_ascii_digit())
                .parse()
                .map_err(|_| "bad suite id".to_string())?;
            Ok(self.0[index])
        }
    }

    fn qa_record(id: &str) -> PromptRecord {
        PromptRecord {
            id: id.into(),
            task: TaskKind::QuestionAnswering,
            prompt: "Capital of France?".into(),
            choices: None,
            table_title: None,
            table_content: None,
            reference_answer: Some("Paris".into()),
            source: "fixture".into(),
        }
    }

    #[test]
    fn consistency_fraction_matches_the_script() {
        // 10 QA records; judge scripted to 7 agrees + 3 disagrees.
        let records: Vec<PromptRecord> = (0..10).map(|i| qa_record(&format!("q{i}"))).collect();
        let items: Vec<(&PromptRecord, &str)> =
            records.iter().map(|r| (r, "Paris is the capital.")).collect();
        let script: Vec<Result<String, BackendError>> = (0..10)
            .map(|i| Ok(format!("checked. [[{}]]", if i < 7 { 'A' } else { 'B' })))
            .collect();
        let judge = Endpoint::new(
            ScriptedBackend::new(script),
            RetryPolicy { max_attempts: 1, base_delay: Duration::ZERO },
        );
        let outcome = consistency_accuracy(&items, &judge, None, 128);
        assert_eq!(outcome.checked, 10);
        assert_eq!(outcome.accuracy(), Some(0.7));
    }

    #[test]
    fn all_or_nothing_consistency() {
        let records: Vec<PromptRecord> = (0..4).map(|i| qa_record(&format!("q{i}"))).collect();
        let items: Vec<(&PromptRecord, &str)> = records.iter().map(|r| (r, "answer")).collect();
        let yes = make_mock_backend(0, MockBehavior::Fixed("agrees [[A]]".into()));
        assert_eq!(consistency_accuracy(&items, &yes, None, 64).accuracy(), Some(1.0));
        let no = make_mock_backend(0, MockBehavior::Fixed("differs [[B]]".into()));
        assert_eq!(consistency_accuracy(&items, &no, None, 64).accuracy(), Some(0.0));
    }

    #[test]
    fn missing_gold_is_skipped_with_warning() {
        let mut record = qa_record("q0");
        record.reference_answer = None;
        let items: Vec<(&PromptRecord, &str)> = vec![(&record, "answer")];
        let judge = make_mock_backend(0, MockBehavior::Fixed("[[A]]".into()));
        let outcome = consistency_accuracy(&items, &judge, None, 64);
        assert_eq!(outcome.checked, 0);
        assert_eq!(outcome.accuracy(), None);
        assert_eq!(outcome.warnings.len(), 1);
    }

    #[test]
    fn code_records_use_the_executor_hook() {
        let records: Vec<PromptRecord> = (0..3)
            .map(|i| PromptRecord {
                id: format!("c{i}"),
                task: TaskKind::Code,
                prompt: "write add".into(),
                choices: None,
                table_title: None,
                table_content: None,
                reference_answer: None,
                source: "mbpp".into(),
            })
            .collect();
        let items: Vec<(&PromptRecord, &str)> =
            records.iter().map(|r| (r, "def add(a,b): return a+b")).collect();
        let judge = make_mock_backend(0, MockBehavior::Fixed("[[A]]".into()));
        let executor = ScriptedExecutor(vec![true, false, true]);
        let outcome = consistency_accuracy(&items, &judge, Some(&executor), 64);
        assert_eq!(outcome.checked, 3);
        assert_eq!(outcome.consistent, 2);

        let without = consistency_accuracy(&items, &judge, None, 64);
        assert_eq!(without.checked, 0);
        assert_eq!(without.warnings.len(), 3);
    }

    #[test]
    fn report_table_is_deterministic_and_self_consistent() {
        let task_of = tasks(&[("q1", TaskKind::Dialog), ("q2", TaskKind::Code)]);
        let judgments = vec![
            judgment("q1", 1, 1, JudgeOrder::RefinedFirst, Verdict::A),
            judgment("q1", 1, 1, JudgeOrder::InitialFirst, Verdict::B),
            judgment("q2", 1, 1, JudgeOrder::RefinedFirst, Verdict::C),
        ];
        let ratings = vec![
            RatingRecord {
                prompt_id: "q1".into(),
                subject: crate::judge::RatingSubject::Refinement,
                critique_index: 1,
                rating: 6,
                raw: String::new(),
            },
            RatingRecord {
                prompt_id: "q2".into(),
                subject: crate::judge::RatingSubject::Refinement,
                critique_index: 1,
                rating: 8,
                raw: String::new(),
            },
        ];
        let (cu, _) = aggregate_cu(&judgments, &task_of);
        let (rqs, _) = aggregate_rqs(&ratings, &task_of);
        let report = build_report(&cu, &rqs);
        assert_eq!(report.rows.len(), 2);

        // Overall equals the count-weighted mean of the rows.
        let total: u64 = report.rows.iter().map(|r| r.count).sum();
        let weighted: f64 = report
            .rows
            .iter()
            .map(|r| r.mean_cu_x100 * r.count as f64)
            .sum::<f64>()
            / total as f64;
        assert!((report.overall.mean_cu_x100 - weighted).abs() < 1e-12);

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        emit_report(&report, dir_a.path()).unwrap();
        emit_report(&report, dir_b.path()).unwrap();
        let text = std::fs::read(dir_a.path().join("report.txt")).unwrap();
        assert_eq!(text, std::fs::read(dir_b.path().join("report.txt")).unwrap());
        assert_eq!(
            std::fs::read(dir_a.path().join("report.jsonl")).unwrap(),
            std::fs::read(dir_b.path().join("report.jsonl")).unwrap()
        );
        let rendered = String::from_utf8(text).unwrap();
        assert!(rendered.contains("overall"));
        assert!(rendered.lines().count() == 4);
    }
}
