//! Domain record types and line-delimited record file I/O.
//!
//! Every dataset that flows between pipeline stages is a plain text file
//! with one JSON object per line. Serialization is deterministic: keys are
//! emitted in the declared field order, optional fields are omitted when
//! absent, and [`write_records`] sorts records by their natural key, so
//! equal record sets always produce byte-identical files.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// The five task categories a prompt can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Dialog,
    Summarization,
    QuestionAnswering,
    Math,
    Code,
}

impl TaskKind {
    /// All variants in canonical report order.
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Dialog,
        TaskKind::Summarization,
        TaskKind::QuestionAnswering,
        TaskKind::Math,
        TaskKind::Code,
    ];

    /// The snake_case name used in record files and file names.
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Dialog => "dialog",
            TaskKind::Summarization => "summarization",
            TaskKind::QuestionAnswering => "question_answering",
            TaskKind::Math => "math",
            TaskKind::Code => "code",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One task instance: the prompt shown to the actor model plus whatever
/// side material (answer choices, a table, a reference answer) the task
/// kind calls for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub task: TaskKind,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
    pub source: String,
}

/// An actor model's response to a prompt. Turn 0 is the initial response;
/// higher turns come from iterative critique-refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub prompt_id: String,
    pub actor_id: String,
    pub turn: u32,
    pub text: String,
}

/// One of the N critiques sampled for an initial response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritiqueRecord {
    pub prompt_id: String,
    pub critic_id: String,
    /// 1-based position within the critique sample set.
    pub index: u32,
    pub text: String,
}

/// One of the M refined responses sampled under a critique.
///
/// `critique_index` 0 marks a self-refinement produced without any critique
/// in the prompt; critique-conditioned refinements use indices 1..=N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub prompt_id: String,
    pub critique_index: u32,
    pub refinement_index: u32,
    pub text: String,
}

/// Errors from record file loading, writing, and validation.
#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate {kind} key {key}")]
    Duplicate {
        path: String,
        line: usize,
        kind: &'static str,
        key: String,
    },
    #[error("{path}:{line}: invalid {kind}: {message}")]
    Invalid {
        path: String,
        line: usize,
        kind: &'static str,
        message: String,
    },
    #[error("dangling reference: {message}")]
    DanglingReference { message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A record kind that can live in a line-delimited record file.
pub trait Record: Serialize + DeserializeOwned {
    /// Schema name used in error messages.
    const KIND: &'static str;

    /// Key that must be unique within one file.
    fn key(&self) -> String;

    /// Sort key used by [`write_records`]; defaults to the unique key.
    fn sort_key(&self) -> String {
        self.key()
    }

    /// Intrinsic single-record invariants.
    fn check(&self) -> Result<(), String>;
}

impl Record for PromptRecord {
    const KIND: &'static str = "prompt";

    fn key(&self) -> String {
        self.id.clone()
    }

    fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("id must be non-empty".into());
        }
        if self.prompt.is_empty() {
            return Err("prompt must be non-empty".into());
        }
        if self.choices.is_some()
            && !matches!(self.task, TaskKind::QuestionAnswering | TaskKind::Math)
        {
            return Err("choices are only valid for question_answering and math records".into());
        }
        if self.table_title.is_some() != self.table_content.is_some() {
            return Err("table_title and table_content must be present together".into());
        }
        if self.table_content.is_some() && self.task != TaskKind::Math {
            return Err("table fields are only valid for math records".into());
        }
        if self.table_content.is_some() && self.choices.is_some() {
            return Err("a record cannot carry both choices and a table".into());
        }
        Ok(())
    }
}

impl Record for ResponseRecord {
    const KIND: &'static str = "response";

    fn key(&self) -> String {
        format!("{}\u{1f}{}\u{1f}{}", self.prompt_id, self.actor_id, self.turn)
    }

    fn sort_key(&self) -> String {
        format!("{}\u{1f}{}\u{1f}{:010}", self.prompt_id, self.actor_id, self.turn)
    }

    fn check(&self) -> Result<(), String> {
        if self.prompt_id.is_empty() {
            return Err("prompt_id must be non-empty".into());
        }
        Ok(())
    }
}

impl Record for CritiqueRecord {
    const KIND: &'static str = "critique";

    fn key(&self) -> String {
        format!("{}\u{1f}{}\u{1f}{}", self.prompt_id, self.critic_id, self.index)
    }

    fn sort_key(&self) -> String {
        format!("{}\u{1f}{}\u{1f}{:010}", self.prompt_id, self.critic_id, self.index)
    }

    fn check(&self) -> Result<(), String> {
        if self.index < 1 {
            return Err("critique index must be >= 1".into());
        }
        Ok(())
    }
}

impl Record for RefinementRecord {
    const KIND: &'static str = "refinement";

    fn key(&self) -> String {
        format!(
            "{}\u{1f}{}\u{1f}{}",
            self.prompt_id, self.critique_index, self.refinement_index
        )
    }

    fn sort_key(&self) -> String {
        format!(
            "{}\u{1f}{:010}\u{1f}{:010}",
            self.prompt_id, self.critique_index, self.refinement_index
        )
    }

    fn check(&self) -> Result<(), String> {
        if self.refinement_index < 1 {
            return Err("refinement index must be >= 1".into());
        }
        Ok(())
    }
}

/// Load a record file: one JSON object per line, in file order.
///
/// Fails with the offending line number on malformed lines, invariant
/// violations, and duplicate keys.
pub fn load_records<T: Record>(path: &Path) -> Result<Vec<T>, RecordError> {
    let display = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| RecordError::Io {
        path: display.clone(),
        source,
    })?;
    let mut records = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RecordError::Io {
            path: display.clone(),
            source,
        })?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            return Err(RecordError::Parse {
                path: display,
                line: lineno,
                message: "blank line in record file".into(),
            });
        }
        let record: T = serde_json::from_str(&line).map_err(|e| RecordError::Parse {
            path: display.clone(),
            line: lineno,
            message: e.to_string(),
        })?;
        record.check().map_err(|message| RecordError::Invalid {
            path: display.clone(),
            line: lineno,
            kind: T::KIND,
            message,
        })?;
        if !seen.insert(record.key()) {
            return Err(RecordError::Duplicate {
                path: display,
                line: lineno,
                kind: T::KIND,
                key: record.key(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Write records sorted by their natural key, one JSON object per line.
///
/// Output bytes depend only on the record set, not on input order.
pub fn write_records<T: Record>(records: &[T], path: &Path) -> Result<(), RecordError> {
    let display = path.display().to_string();
    let io_err = |source| RecordError::Io {
        path: display.clone(),
        source,
    };
    let mut ordered: Vec<&T> = records.iter().collect();
    ordered.sort_by_key(|r| r.sort_key());
    let mut out = Vec::new();
    for record in ordered {
        let line = serde_json::to_string(record).map_err(|e| RecordError::Parse {
            path: display.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)?;
    Ok(())
}

/// Cross-file referential checks for one dataset directory.
///
/// Rejects downstream records whose prompt or critique reference does not
/// resolve, and enforces the configured N/M bounds on indices.
pub fn validate_dataset(
    prompts: &[PromptRecord],
    responses: &[ResponseRecord],
    critiques: &[CritiqueRecord],
    refinements: &[RefinementRecord],
    n_critiques: u32,
    m_refinements: u32,
) -> Result<(), RecordError> {
    let prompt_ids: BTreeSet<&str> = prompts.iter().map(|p| p.id.as_str()).collect();
    let dangling = |message: String| RecordError::DanglingReference { message };

    for response in responses {
        if !prompt_ids.contains(response.prompt_id.as_str()) {
            return Err(dangling(format!(
                "response references unknown prompt {}",
                response.prompt_id
            )));
        }
    }
    let mut critique_keys: BTreeSet<(&str, u32)> = BTreeSet::new();
    for critique in critiques {
        if !prompt_ids.contains(critique.prompt_id.as_str()) {
            return Err(dangling(format!(
                "critique references unknown prompt {}",
                critique.prompt_id
            )));
        }
        if critique.index > n_critiques {
            return Err(dangling(format!(
                "critique index {} exceeds configured N={} for prompt {}",
                critique.index, n_critiques, critique.prompt_id
            )));
        }
        critique_keys.insert((critique.prompt_id.as_str(), critique.index));
    }
    for refinement in refinements {
        if !prompt_ids.contains(refinement.prompt_id.as_str()) {
            return Err(dangling(format!(
                "refinement references unknown prompt {}",
                refinement.prompt_id
            )));
        }
        if refinement.refinement_index > m_refinements {
            return Err(dangling(format!(
                "refinement index {} exceeds configured M={} for prompt {}",
                refinement.refinement_index, m_refinements, refinement.prompt_id
            )));
        }
        // critique_index 0 is a self-refinement and carries no critique link.
        if refinement.critique_index > 0
            && !critique_keys.contains(&(refinement.prompt_id.as_str(), refinement.critique_index))
        {
            return Err(dangling(format!(
                "refinement references unknown critique ({}, {})",
                refinement.prompt_id, refinement.critique_index
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn prompt(id: &str) -> PromptRecord {
        PromptRecord {
            id: id.into(),
            task: TaskKind::Dialog,
            prompt: "Say hi.".into(),
            choices: None,
            table_title: None,
            table_content: None,
            reference_answer: None,
            source: "fixture".into(),
        }
    }

    #[test]
    fn loads_valid_prompt_lines() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("prompts.jsonl");
        write_records(&[prompt("q1"), prompt("q2")], &path).unwrap();
        let loaded: Vec<PromptRecord> = load_records(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].id, "q1");
    }

    #[test]
    fn missing_prompt_field_names_the_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("prompts.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"task\":\"dialog\",\"prompt\":\"x\",\"source\":\"s\"}\n{\"id\":\"b\",\"task\":\"dialog\",\"source\":\"s\"}\n",
        )
        .unwrap();
        let err = load_records::<PromptRecord>(&path).unwrap_err();
        match err {
            RecordError::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("prompt"), "message: {message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("prompts.jsonl");
        let line = serde_json::to_string(&prompt("q1")).unwrap();
        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        let err = load_records::<PromptRecord>(&path).unwrap_err();
        match err {
            RecordError::Duplicate { line, key, .. } => {
                assert_eq!(line, 2);
                assert_eq!(key, "q1");
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn empty_prompt_text_is_invalid() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("prompts.jsonl");
        let mut record = prompt("q1");
        record.prompt = String::new();
        std::fs::write(&path, format!("{}\n", serde_json::to_string(&record).unwrap())).unwrap();
        assert!(matches!(
            load_records::<PromptRecord>(&path),
            Err(RecordError::Invalid { .. })
        ));
    }

    #[test]
    fn choices_rejected_outside_qa_and_math() {
        let mut record = prompt("q1");
        record.choices = Some(vec!["a".into()]);
        assert!(record.check().is_err());
        record.task = TaskKind::QuestionAnswering;
        assert!(record.check().is_ok());
    }

    #[test]
    fn write_is_deterministic_and_sorted() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let records = vec![prompt("q3"), prompt("q1"), prompt("q2")];
        write_records(&records, &a).unwrap();
        write_records(&records, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        // Oracle: sorting the inputs by id first must give the same bytes.
        let mut sorted = records.clone();
        sorted.sort_by(|x, y| x.id.cmp(&y.id));
        let c = dir.path().join("c.jsonl");
        write_records(&sorted, &c).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    }

    #[test]
    fn empty_list_writes_empty_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        write_records::<PromptRecord>(&[], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
        assert!(load_records::<PromptRecord>(&path).unwrap().is_empty());
    }

    #[test]
    fn dataset_validation_rejects_dangling_references() {
        let prompts = vec![prompt("q1")];
        let critiques = vec![CritiqueRecord {
            prompt_id: "q1".into(),
            critic_id: "c".into(),
            index: 1,
            text: "t".into(),
        }];
        let refinements = vec![RefinementRecord {
            prompt_id: "q1".into(),
            critique_index: 2,
            refinement_index: 1,
            text: "t".into(),
        }];
        let err = validate_dataset(&prompts, &[], &critiques, &refinements, 4, 5).unwrap_err();
        assert!(matches!(err, RecordError::DanglingReference { .. }));

        let ok = vec![RefinementRecord {
            prompt_id: "q1".into(),
            critique_index: 1,
            refinement_index: 1,
            text: "t".into(),
        }];
        validate_dataset(&prompts, &[], &critiques, &ok, 4, 5).unwrap();
    }

    #[test]
    fn index_bounds_are_checked_against_config() {
        let prompts = vec![prompt("q1")];
        let critiques = vec![CritiqueRecord {
            prompt_id: "q1".into(),
            critic_id: "c".into(),
            index: 3,
            text: "t".into(),
        }];
        assert!(validate_dataset(&prompts, &[], &critiques, &[], 2, 5).is_err());
        assert!(validate_dataset(&prompts, &[], &critiques, &[], 4, 5).is_ok());
    }

    fn id_strategy() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9_]{0,8}"
    }

    fn record_strategy() -> impl Strategy<Value = PromptRecord> {
        (
            id_strategy(),
            prop::sample::select(TaskKind::ALL.to_vec()),
            "[ -~]{1,40}",
            prop::option::of(prop::collection::vec("[ -~]{1,10}", 1..4)),
            prop::option::of("[ -~]{1,20}"),
            "[a-z]{1,10}",
        )
            .prop_map(|(id, task, prompt, choices, reference_answer, source)| {
                let choices = match task {
                    TaskKind::QuestionAnswering | TaskKind::Math => choices,
                    _ => None,
                };
                PromptRecord {
                    id,
                    task,
                    prompt,
                    choices,
                    table_title: None,
                    table_content: None,
                    reference_answer,
                    source,
                }
            })
    }

    proptest! {
        /// Round-trip plus determinism: load(write(R)) == sort(R), and the
        /// bytes do not depend on input order.
        #[test]
        fn round_trip_preserves_fields(records in prop::collection::vec(record_strategy(), 0..12)) {
            let mut unique = Vec::<PromptRecord>::new();
            let mut seen = BTreeSet::new();
            for r in records {
                if seen.insert(r.id.clone()) {
                    unique.push(r);
                }
            }
            let dir = tempdir().unwrap();
            let path = dir.path().join("r.jsonl");
            write_records(&unique, &path).unwrap();
            let loaded: Vec<PromptRecord> = load_records(&path).unwrap();
            let mut expected = unique.clone();
            expected.sort_by(|a, b| a.id.cmp(&b.id));
            prop_assert_eq!(loaded, expected);

            let mut shuffled = unique.clone();
            shuffled.reverse();
            let path2 = dir.path().join("r2.jsonl");
            write_records(&shuffled, &path2).unwrap();
            prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        }
    }
}
