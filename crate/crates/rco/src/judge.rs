//! Pairwise preference judging with position-swap debiasing.
//!
//! Every refined-vs-initial pair is judged twice, once per candidate
//! order, so a judge that favors a slot rather than a candidate cancels
//! out: its two preference scores average to 0.5. Verdicts and ratings are
//! parsed from the last bracketed marker in the reply, since judges often
//! rehearse the format before the final answer.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::config::Role;
use crate::gateway::{complete, CompletionRequest, Endpoint, GatewayError, GREEDY_TEMPERATURE};
use crate::records::{PromptRecord, Record, RefinementRecord, ResponseRecord, TaskKind};
use crate::templates::{render, slots_for_record, swap_candidates, CriticStyle, TemplateStage};

/// A single preference score: 1 refined preferred, 0.5 tie, 0 initial
/// preferred.
pub type PreferenceScore = f64;

/// Pairwise verdict letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    A,
    B,
    C,
}

/// Candidate order used for one judgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeOrder {
    /// The refined response sits in slot A.
    RefinedFirst,
    /// The initial response sits in slot A.
    InitialFirst,
}

impl JudgeOrder {
    pub fn flipped(self) -> Self {
        match self {
            JudgeOrder::RefinedFirst => JudgeOrder::InitialFirst,
            JudgeOrder::InitialFirst => JudgeOrder::RefinedFirst,
        }
    }
}

/// One parsed refined-vs-initial judgment. The raw judge reply is kept for
/// audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub prompt_id: String,
    pub critique_index: u32,
    pub refinement_index: u32,
    pub order: JudgeOrder,
    pub verdict: Verdict,
    pub ps: PreferenceScore,
    pub raw: String,
}

impl Record for JudgmentRecord {
    const KIND: &'static str = "judgment";

    fn key(&self) -> String {
        format!(
            "{}\u{1f}{}\u{1f}{}\u{1f}{:?}",
            self.prompt_id, self.critique_index, self.refinement_index, self.order
        )
    }

    fn sort_key(&self) -> String {
        format!(
            "{}\u{1f}{:010}\u{1f}{:010}\u{1f}{}",
            self.prompt_id,
            self.critique_index,
            self.refinement_index,
            match self.order {
                JudgeOrder::RefinedFirst => 0,
                JudgeOrder::InitialFirst => 1,
            }
        )
    }

    fn check(&self) -> Result<(), String> {
        if ![0.0, 0.5, 1.0].contains(&self.ps) {
            return Err(format!("ps must be one of 0, 0.5, 1, got {}", self.ps));
        }
        if self.ps != verdict_to_ps(self.verdict, self.order) {
            return Err("ps is inconsistent with (verdict, order)".into());
        }
        Ok(())
    }
}

/// What a rating applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingSubject {
    Initial,
    Refinement,
}

/// A 1-10 quality rating of one response. `critique_index` is 0 for the
/// initial response and the owning critique for refinements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub prompt_id: String,
    pub subject: RatingSubject,
    pub critique_index: u32,
    pub rating: u32,
    pub raw: String,
}

impl Record for RatingRecord {
    const KIND: &'static str = "rating";

    fn key(&self) -> String {
        format!("{}\u{1f}{:?}\u{1f}{}", self.prompt_id, self.subject, self.critique_index)
    }

    fn sort_key(&self) -> String {
        format!(
            "{}\u{1f}{}\u{1f}{:010}",
            self.prompt_id,
            match self.subject {
                RatingSubject::Initial => 0,
                RatingSubject::Refinement => 1,
            },
            self.critique_index
        )
    }

    fn check(&self) -> Result<(), String> {
        if !(1..=10).contains(&self.rating) {
            return Err(format!("rating must be 1..=10, got {}", self.rating));
        }
        if self.subject == RatingSubject::Initial && self.critique_index != 0 {
            return Err("initial ratings carry critique_index 0".into());
        }
        Ok(())
    }
}

/// Judge-side errors.
#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error(transparent)]
    Endpoint(#[from] GatewayError),
    #[error("no bracketed verdict in judge reply")]
    NoVerdict { raw: String },
    #[error("no valid bracketed rating in judge reply: {reason}")]
    NoRating { raw: String, reason: String },
    #[error("template error: {0}")]
    Template(#[from] crate::templates::TemplateError),
}

/// The verdict letter of the *last* `[[A]]`/`[[B]]`/`[[C]]` marker.
pub fn parse_verdict(text: &str) -> Result<Verdict, JudgeError> {
    [("[[A]]", Verdict::A), ("[[B]]", Verdict::B), ("[[C]]", Verdict::C)]
        .iter()
        .filter_map(|(marker, verdict)| text.rfind(marker).map(|at| (at, *verdict)))
        .max_by_key(|(at, _)| *at)
        .map(|(_, verdict)| verdict)
        .ok_or_else(|| JudgeError::NoVerdict {
            raw: text.to_string(),
        })
}

/// The integer inside the *last* `[[k]]` marker, required to be in 1..=10.
pub fn parse_rating(text: &str) -> Result<u32, JudgeError> {
    static MARKER: OnceLock<Regex> = OnceLock::new();
    let marker = MARKER.get_or_init(|| Regex::new(r"\[\[([0-9]+)\]\]").expect("valid regex"));
    let last = marker
        .captures_iter(text)
        .last()
        .ok_or_else(|| JudgeError::NoRating {
            raw: text.to_string(),
            reason: "no [[k]] marker".into(),
        })?;
    let rating: u32 = last[1].parse().map_err(|_| JudgeError::NoRating {
        raw: text.to_string(),
        reason: "marker value out of range".into(),
    })?;
    if !(1..=10).contains(&rating) {
        return Err(JudgeError::NoRating {
            raw: text.to_string(),
            reason: format!("rating {rating} outside 1..=10"),
        });
    }
    Ok(rating)
}

/// Map a verdict to a preference score given which candidate held slot A.
pub fn verdict_to_ps(verdict: Verdict, order: JudgeOrder) -> PreferenceScore {
    match (verdict, order) {
        (Verdict::C, _) => 0.5,
        (Verdict::A, JudgeOrder::RefinedFirst) | (Verdict::B, JudgeOrder::InitialFirst) => 1.0,
        (Verdict::A, JudgeOrder::InitialFirst) | (Verdict::B, JudgeOrder::RefinedFirst) => 0.0,
    }
}

/// One failed judgment slot: the order it was issued under and why it is
/// unusable.
#[derive(Debug)]
pub struct JudgeFailure {
    pub order: JudgeOrder,
    pub message: String,
    pub raw: Option<String>,
}

/// Both judgments of one (refinement, initial) pair.
#[derive(Debug, Default)]
pub struct PairJudgments {
    pub forward: Option<JudgmentRecord>,
    pub reversed: Option<JudgmentRecord>,
    pub failures: Vec<JudgeFailure>,
}

impl PairJudgments {
    pub fn ps_forward(&self) -> Option<PreferenceScore> {
        self.forward.as_ref().map(|j| j.ps)
    }

    pub fn ps_reversed(&self) -> Option<PreferenceScore> {
        self.reversed.as_ref().map(|j| j.ps)
    }

    /// Valid preference scores, forward order first.
    pub fn ps_values(&self) -> Vec<PreferenceScore> {
        [self.ps_forward(), self.ps_reversed()]
            .into_iter()
            .flatten()
            .collect()
    }

    pub fn into_records(self) -> Vec<JudgmentRecord> {
        [self.forward, self.reversed].into_iter().flatten().collect()
    }
}

fn fill_math_reference(slots: &mut BTreeMap<String, String>, record: &PromptRecord) {
    if record.task == TaskKind::Math && !slots.contains_key("ref_answer") {
        slots.insert(
            "ref_answer".into(),
            "(no reference answer provided)".into(),
        );
    }
}

fn judge_once(
    judge: &Endpoint,
    task: TaskKind,
    stage: TemplateStage,
    slots: &BTreeMap<String, String>,
    max_tokens: u32,
) -> Result<String, JudgeError> {
    let prompt = render(stage, task, slots, CriticStyle::Generic)?;
    let request =
        CompletionRequest::from_prompt(Role::Judge, &prompt, GREEDY_TEMPERATURE, max_tokens, None);
    Ok(complete(judge, &request)?.text)
}

/// Judge one refinement against its initial response in both candidate
/// orders. Each order yields its own [`JudgmentRecord`]; a parse failure
/// invalidates only its slot.
pub fn judge_pair_debiased(
    judge: &Endpoint,
    record: &PromptRecord,
    initial: &ResponseRecord,
    refinement: &RefinementRecord,
    max_tokens: u32,
) -> Result<PairJudgments, GatewayError> {
    let mut slots = slots_for_record(record);
    fill_math_reference(&mut slots, record);
    slots.insert("answer_0".into(), refinement.text.clone());
    slots.insert("answer_1".into(), initial.text.clone());

    let mut pair = PairJudgments::default();
    for order in [JudgeOrder::RefinedFirst, JudgeOrder::InitialFirst] {
        let ordered = match order {
            JudgeOrder::RefinedFirst => slots.clone(),
            JudgeOrder::InitialFirst => swap_candidates(&slots),
        };
        let raw = match judge_once(judge, record.task, TemplateStage::JudgePair, &ordered, max_tokens)
        {
            Ok(raw) => raw,
            Err(JudgeError::Endpoint(e)) => return Err(e),
            Err(other) => {
                pair.failures.push(JudgeFailure {
                    order,
                    message: other.to_string(),
                    raw: None,
                });
                continue;
            }
        };
        match parse_verdict(&raw) {
            Ok(verdict) => {
                let judgment = JudgmentRecord {
                    prompt_id: record.id.clone(),
                    critique_index: refinement.critique_index,
                    refinement_index: refinement.refinement_index,
                    order,
                    verdict,
                    ps: verdict_to_ps(verdict, order),
                    raw,
                };
                match order {
                    JudgeOrder::RefinedFirst => pair.forward = Some(judgment),
                    JudgeOrder::InitialFirst => pair.reversed = Some(judgment),
                }
            }
            Err(e) => pair.failures.push(JudgeFailure {
                order,
                message: e.to_string(),
                raw: Some(raw),
            }),
        }
    }
    Ok(pair)
}

/// Outcome of double-judging one critique pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CritiquePairOutcome {
    /// Both orders prefer the first critique.
    FirstWins,
    /// Both orders prefer the second critique.
    SecondWins,
    /// Both orders call a tie; no strict winner.
    Tie,
    /// The two orders disagree on the winner.
    Inconsistent,
    /// At least one reply had no parseable verdict.
    Invalid,
}

/// Judge a critique pair in both orders. Pairs whose two judgments
/// disagree, tie, or fail to parse produce no usable preference.
pub fn judge_critique_pair(
    judge: &Endpoint,
    record: &PromptRecord,
    initial: &ResponseRecord,
    critique_a: &str,
    critique_b: &str,
    max_tokens: u32,
) -> Result<CritiquePairOutcome, GatewayError> {
    let mut slots = slots_for_record(record);
    fill_math_reference(&mut slots, record);
    slots.insert("answer".into(), initial.text.clone());
    slots.insert("critique_0".into(), critique_a.to_string());
    slots.insert("critique_1".into(), critique_b.to_string());

    // Winner in terms of (first critique, second critique, tie).
    let mut winners = Vec::with_capacity(2);
    for swapped in [false, true] {
        let ordered = if swapped { swap_candidates(&slots) } else { slots.clone() };
        let raw =
            match judge_once(judge, record.task, TemplateStage::CritiquePref, &ordered, max_tokens)
            {
                Ok(raw) => raw,
                Err(JudgeError::Endpoint(e)) => return Err(e),
                Err(_) => return Ok(CritiquePairOutcome::Invalid),
            };
        let verdict = match parse_verdict(&raw) {
            Ok(v) => v,
            Err(_) => return Ok(CritiquePairOutcome::Invalid),
        };
        let winner = match (verdict, swapped) {
            (Verdict::C, _) => None,
            (Verdict::A, false) | (Verdict::B, true) => Some(0u8),
            (Verdict::B, false) | (Verdict::A, true) => Some(1u8),
        };
        winners.push(winner);
    }
    Ok(match (winners[0], winners[1]) {
        (Some(0), Some(0)) => CritiquePairOutcome::FirstWins,
        (Some(1), Some(1)) => CritiquePairOutcome::SecondWins,
        (None, None) => CritiquePairOutcome::Tie,
        _ => CritiquePairOutcome::Inconsistent,
    })
}

/// Rate one response on the 1-10 scale.
pub fn score_response(
    judge: &Endpoint,
    record: &PromptRecord,
    response_text: &str,
    subject: RatingSubject,
    critique_index: u32,
    max_tokens: u32,
) -> Result<RatingRecord, JudgeError> {
    let mut slots = slots_for_record(record);
    fill_math_reference(&mut slots, record);
    slots.insert("answer".into(), response_text.to_string());
    let raw = judge_once(judge, record.task, TemplateStage::JudgeScore, &slots, max_tokens)?;
    let rating = parse_rating(&raw)?;
    Ok(RatingRecord {
        prompt_id: record.id.clone(),
        subject,
        critique_index,
        rating,
        raw,
    })
}
