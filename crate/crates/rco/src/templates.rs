//! Prompt template registry and renderer.
//!
//! Templates live as external text assets under `assets/templates/`, one
//! file per (stage, task, variant, style), named
//! `<stage>__<task>[__<variant>].txt` (for example `initial__math__table.txt`
//! and `judge_pair__code.txt`), with the style-specific critique formats at
//! `critique__auto_j.txt` and `critique__ultra_cm.txt`. Files contain
//! `{name}` placeholders; judge-side templates carry a `=== system ===` /
//! `=== user ===` split, generation templates are user-only.
//!
//! Only the slots declared for a template are substituted, so literal
//! brace text such as `\boxed{answer}` in the math instructions survives
//! rendering untouched.
//!
//! Variant selection is driven by the record shape:
//! - `choices` present selects the multiple-choice form (QA and math),
//! - `table_content` present selects the table form (math),
//! - `source = humaneval` selects the code-completion form that re-presents
//!   the original prompt after the critique,
//! - for summarization judging, the `{kind}` slot is derived from `source`
//!   (`tldr` becomes "Reddit post", `cnn_dailymail` becomes "News", anything
//!   else "Article").

use std::collections::BTreeMap;

use crate::config::CriticStyleKind;
use crate::records::{PromptRecord, TaskKind};

/// Pipeline stage a template belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateStage {
    Initial,
    Critique,
    Refinement,
    SelfRefinement,
    JudgePair,
    JudgeScore,
    CritiquePref,
}

impl TemplateStage {
    pub fn name(self) -> &'static str {
        match self {
            TemplateStage::Initial => "initial",
            TemplateStage::Critique => "critique",
            TemplateStage::Refinement => "refinement",
            TemplateStage::SelfRefinement => "self_refinement",
            TemplateStage::JudgePair => "judge_pair",
            TemplateStage::JudgeScore => "judge_score",
            TemplateStage::CritiquePref => "critique_pref",
        }
    }
}

/// Critique prompt family. `AutoJ` and `UltraCm` carry their own critique
/// template; every other stage falls back to the generic family.
pub type CriticStyle = CriticStyleKind;

/// A rendered prompt, split into the optional system turn and the user turn.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub system: Option<String>,
    pub user: String,
}

/// Template lookup and rendering errors.
#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template} is missing slot {placeholder}")]
    MissingSlot { template: String, placeholder: String },
    #[error("no template registered for {key}")]
    UnknownTemplate { key: String },
}

struct TemplateDef {
    key: &'static str,
    slots: &'static [&'static str],
    source: &'static str,
}

macro_rules! template {
    ($key:literal, $slots:expr) => {
        TemplateDef {
            key: $key,
            slots: $slots,
            source: include_str!(concat!("../assets/templates/", $key, ".txt")),
        }
    };
}

static REGISTRY: &[TemplateDef] = &[
    template!("initial__dialog", &["prompt"]),
    template!("initial__summarization", &["prompt"]),
    template!("initial__question_answering__choice", &["prompt", "choices"]),
    template!("initial__question_answering", &["prompt"]),
    template!("initial__math__choice", &["prompt", "choices"]),
    template!("initial__math__table", &["prompt", "table_title", "table_content"]),
    template!("initial__math", &["prompt"]),
    template!("initial__code__completion", &["prompt"]),
    template!("initial__code", &["prompt"]),
    template!("critique__dialog", &["prompt", "response"]),
    template!("critique__summarization", &["prompt", "response"]),
    template!("critique__question_answering__choice", &["prompt", "choices", "response"]),
    template!("critique__question_answering", &["prompt", "response"]),
    template!("critique__math__choice", &["prompt", "choices", "response"]),
    template!("critique__math__table", &["prompt", "table_title", "table_content", "response"]),
    template!("critique__math", &["prompt", "response"]),
    template!("critique__code__completion", &["prompt", "response"]),
    template!("critique__code", &["prompt", "response"]),
    template!("critique__auto_j", &["prompt", "answer"]),
    template!("critique__ultra_cm", &["prompt", "answer"]),
    template!("refinement__dialog", &["prompt", "response", "critique"]),
    template!("refinement__summarization", &["prompt", "response", "critique"]),
    template!("refinement__question_answering__choice", &["prompt", "choices", "response", "critique"]),
    template!("refinement__question_answering", &["prompt", "response", "critique"]),
    template!("refinement__math__choice", &["prompt", "choices", "response", "critique"]),
    template!("refinement__math__table", &["prompt", "table_title", "table_content", "response", "critique"]),
    template!("refinement__math", &["prompt", "response", "critique"]),
    template!("refinement__code__completion", &["prompt", "response", "critique"]),
    template!("refinement__code", &["prompt", "response", "critique"]),
    template!("self_refinement__dialog", &["prompt", "response"]),
    template!("self_refinement__summarization", &["prompt", "response"]),
    template!("self_refinement__question_answering__choice", &["prompt", "choices", "response"]),
    template!("self_refinement__question_answering", &["prompt", "response"]),
    template!("self_refinement__math__choice", &["prompt", "choices", "response"]),
    template!("self_refinement__math__table", &["prompt", "table_title", "table_content", "response"]),
    template!("self_refinement__math", &["prompt", "response"]),
    template!("self_refinement__code__completion", &["prompt", "response"]),
    template!("self_refinement__code", &["prompt", "response"]),
    template!("judge_pair__dialog", &["prompt", "answer_0", "answer_1"]),
    template!("judge_pair__summarization", &["kind", "prompt", "answer_0", "answer_1"]),
    template!("judge_pair__question_answering", &["prompt", "answer_0", "answer_1"]),
    template!("judge_pair__math", &["prompt", "ref_answer", "answer_0", "answer_1"]),
    template!("judge_pair__code", &["prompt", "answer_0", "answer_1"]),
    template!("judge_score__dialog", &["prompt", "answer"]),
    template!("judge_score__summarization", &["kind", "prompt", "answer"]),
    template!("judge_score__question_answering", &["prompt", "answer"]),
    template!("judge_score__math", &["prompt", "ref_answer", "answer"]),
    template!("judge_score__code", &["prompt", "answer"]),
    template!("critique_pref__dialog", &["prompt", "answer", "critique_0", "critique_1"]),
    template!("critique_pref__summarization", &["kind", "prompt", "answer", "critique_0", "critique_1"]),
    template!("critique_pref__question_answering", &["prompt", "answer", "critique_0", "critique_1"]),
    template!("critique_pref__math", &["prompt", "ref_answer", "answer", "critique_0", "critique_1"]),
    template!("critique_pref__code", &["prompt", "answer", "critique_0", "critique_1"]),
];

fn lookup(key: &str) -> Result<&'static TemplateDef, TemplateError> {
    REGISTRY
        .iter()
        .find(|def| def.key == key)
        .ok_or_else(|| TemplateError::UnknownTemplate { key: key.to_string() })
}

/// All registered template keys, in registry order.
pub fn template_keys() -> Vec<&'static str> {
    REGISTRY.iter().map(|def| def.key).collect()
}

/// Declared slots of a template, for fixture generation.
pub fn template_slots(key: &str) -> Result<&'static [&'static str], TemplateError> {
    Ok(lookup(key)?.slots)
}

/// Render a template addressed by its registry key, bypassing stage/task
/// selection. Used by golden-fixture tooling.
pub fn render_key(
    key: &str,
    slots: &BTreeMap<String, String>,
) -> Result<RenderedPrompt, TemplateError> {
    let def = lookup(key)?;
    let text = def.source.trim_end_matches('\n');
    let (system_raw, user_raw) = split_sections(text);
    let system = system_raw
        .map(|s| substitute(key, s, def.slots, slots))
        .transpose()?;
    let user = substitute(key, user_raw, def.slots, slots)?;
    Ok(RenderedPrompt { system, user })
}

fn split_sections(text: &str) -> (Option<&str>, &str) {
    match text.strip_prefix("=== system ===\n") {
        Some(rest) => {
            let (system, user) = rest
                .split_once("\n=== user ===\n")
                .expect("judge template must carry a user section");
            (Some(system), user)
        }
        None => (None, text),
    }
}

/// Resolve the template key for a stage/task/style and the record shape
/// implied by the provided slots.
pub fn template_key(
    stage: TemplateStage,
    task: TaskKind,
    style: CriticStyle,
    slots: &BTreeMap<String, String>,
) -> String {
    if stage == TemplateStage::Critique {
        match style {
            CriticStyle::AutoJ => return "critique__auto_j".into(),
            CriticStyle::UltraCm => return "critique__ultra_cm".into(),
            CriticStyle::Generic => {}
        }
    }
    let base = format!("{}__{}", stage.name(), task.name());
    let variant_applies = matches!(
        stage,
        TemplateStage::Initial
            | TemplateStage::Critique
            | TemplateStage::Refinement
            | TemplateStage::SelfRefinement
    );
    if !variant_applies {
        return base;
    }
    match task {
        TaskKind::QuestionAnswering if slots.contains_key("choices") => format!("{base}__choice"),
        TaskKind::Math if slots.contains_key("choices") => format!("{base}__choice"),
        TaskKind::Math if slots.contains_key("table_content") => format!("{base}__table"),
        TaskKind::Code if slots.get("source").map(String::as_str) == Some("humaneval") => {
            format!("{base}__completion")
        }
        _ => base,
    }
}

/// The `{kind}` value for a summarization source tag.
pub fn summarization_kind(source: &str) -> &'static str {
    match source {
        "tldr" => "Reddit post",
        "cnn_dailymail" => "News",
        _ => "Article",
    }
}

fn substitute(
    template_key: &str,
    section: &str,
    declared: &[&str],
    slots: &BTreeMap<String, String>,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(section.len());
    let mut rest = section;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find(['{', '}']) {
            Some(close) if after.as_bytes()[close] == b'}' => {
                let name = &after[..close];
                if declared.contains(&name) {
                    let value =
                        slots
                            .get(name)
                            .ok_or_else(|| TemplateError::MissingSlot {
                                template: template_key.to_string(),
                                placeholder: name.to_string(),
                            })?;
                    out.push_str(value);
                } else {
                    out.push('{');
                    out.push_str(name);
                    out.push('}');
                }
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Render the template selected by (stage, task, style, record shape),
/// substituting every declared placeholder from `slots`.
///
/// Styles other than `generic` only affect the critique stage; all other
/// stages render the generic template family. The summarization `{kind}`
/// slot is derived from `source` when not supplied explicitly.
pub fn render(
    stage: TemplateStage,
    task: TaskKind,
    slots: &BTreeMap<String, String>,
    style: CriticStyle,
) -> Result<RenderedPrompt, TemplateError> {
    let key = template_key(stage, task, style, slots);
    let def = lookup(&key)?;
    let mut effective = slots.clone();
    if def.slots.contains(&"kind") && !effective.contains_key("kind") {
        let kind = effective
            .get("source")
            .map(|s| summarization_kind(s))
            .unwrap_or("Article");
        effective.insert("kind".into(), kind.to_string());
    }

    let text = def.source.trim_end_matches('\n');
    let (system_raw, user_raw) = split_sections(text);
    let system = system_raw
        .map(|s| substitute(&key, s, def.slots, &effective))
        .transpose()?;
    let user = substitute(&key, user_raw, def.slots, &effective)?;
    Ok(RenderedPrompt { system, user })
}

/// Exchange the two candidate texts in a slot map: `answer_0`/`answer_1`,
/// and `critique_0`/`critique_1` when present. Applying it twice restores
/// the original slots.
pub fn swap_candidates(slots: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    let mut out = slots.clone();
    for (a, b) in [("answer_0", "answer_1"), ("critique_0", "critique_1")] {
        if let (Some(first), Some(second)) = (slots.get(a), slots.get(b)) {
            out.insert(a.into(), second.clone());
            out.insert(b.into(), first.clone());
        }
    }
    out
}

/// Format answer choices the way the prompts expect: one lettered line each.
pub fn format_choices(choices: &[String]) -> String {
    choices
        .iter()
        .enumerate()
        .map(|(i, choice)| format!("{}. {}", (b'A' + i as u8) as char, choice))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Base slot map for a prompt record: prompt text, source tag, and the
/// optional choice/table/reference material.
pub fn slots_for_record(record: &PromptRecord) -> BTreeMap<String, String> {
    let mut slots = BTreeMap::new();
    slots.insert("prompt".to_string(), record.prompt.clone());
    slots.insert("source".to_string(), record.source.clone());
    if let Some(choices) = &record.choices {
        slots.insert("choices".to_string(), format_choices(choices));
    }
    if let Some(title) = &record.table_title {
        slots.insert("table_title".to_string(), title.clone());
    }
    if let Some(content) = &record.table_content {
        slots.insert("table_content".to_string(), content.clone());
    }
    if let Some(reference) = &record.reference_answer {
        slots.insert("ref_answer".to_string(), reference.clone());
    }
    slots
}
