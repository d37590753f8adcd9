//! Generation stages: initial responses, N critiques per response, M
//! refinements per critique, the critique-free self-refinement baseline,
//! and the turn-by-turn critique-refine loop.
//!
//! Distinctness of samples comes from per-index seed perturbation: every
//! critique and refinement request carries a seed derived from the run
//! seed, the stage, and its indices. Endpoint failures leave holes that are
//! reported per record; the run continues.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::config::Role;
use crate::gateway::{
    batch_complete, complete, CompletionRequest, Endpoint, GREEDY_TEMPERATURE,
    SAMPLING_TEMPERATURE,
};
use crate::records::{CritiqueRecord, PromptRecord, RefinementRecord, ResponseRecord};
use crate::templates::{render, slots_for_record, CriticStyle, RenderedPrompt, TemplateStage};

/// Knobs shared by all sampling calls.
#[derive(Debug, Clone, Copy)]
pub struct SamplerOptions {
    /// Run seed; per-request seeds are derived from it.
    pub base_seed: u64,
    pub max_tokens: u32,
    pub parallelism: u32,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            base_seed: 0,
            max_tokens: 1024,
            parallelism: 4,
        }
    }
}

/// Whether a stage samples or decodes greedily.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationMode {
    Sampled,
    Greedy,
}

/// One recorded generation failure; the slot it covers stays empty.
#[derive(Debug, Clone)]
pub struct StageFailure {
    pub prompt_id: String,
    pub what: String,
    pub message: String,
}

/// Items produced by a stage plus the holes it could not fill.
#[derive(Debug)]
pub struct StageOutcome<T> {
    pub items: Vec<T>,
    pub failures: Vec<StageFailure>,
}

impl<T> Default for StageOutcome<T> {
    fn default() -> Self {
        StageOutcome {
            items: Vec::new(),
            failures: Vec::new(),
        }
    }
}

/// A record's full sample set: initial response, critiques, refinements
/// keyed by critique index.
#[derive(Debug, Clone)]
pub struct SampleBundle {
    pub record: PromptRecord,
    pub initial: ResponseRecord,
    pub critiques: Vec<CritiqueRecord>,
    pub refinements: BTreeMap<u32, Vec<RefinementRecord>>,
}

impl SampleBundle {
    /// True when every critique and refinement slot is filled.
    pub fn is_complete(&self, n: u32, m: u32) -> bool {
        self.critiques.len() == n as usize
            && self.refinements.len() == n as usize
            && self.refinements.values().all(|r| r.len() == m as usize)
    }
}

/// Stable per-request seed from the run seed and a stage path.
pub fn derive_seed(base_seed: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base_seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest long enough"))
}

fn request_for(
    role: Role,
    prompt: &RenderedPrompt,
    mode: GenerationMode,
    seed: Option<u64>,
    opts: &SamplerOptions,
) -> CompletionRequest {
    let (temperature, seed) = match mode {
        GenerationMode::Sampled => (SAMPLING_TEMPERATURE, seed),
        GenerationMode::Greedy => (GREEDY_TEMPERATURE, None),
    };
    CompletionRequest::from_prompt(role, prompt, temperature, opts.max_tokens, seed)
}

/// Render the initial-response prompt for one record.
pub fn initial_prompt(record: &PromptRecord) -> RenderedPrompt {
    let slots = slots_for_record(record);
    render(TemplateStage::Initial, record.task, &slots, CriticStyle::Generic)
        .expect("initial templates cover every record shape")
}

/// Generate one turn-0 response per record. Failed records are reported
/// and skipped; the rest of the batch proceeds.
pub fn generate_initial(
    records: &[PromptRecord],
    actor: &Endpoint,
    opts: &SamplerOptions,
) -> StageOutcome<ResponseRecord> {
    let requests: Vec<CompletionRequest> = records
        .iter()
        .map(|record| {
            let seed = derive_seed(opts.base_seed, &["initial", &record.id]);
            request_for(
                Role::Actor,
                &initial_prompt(record),
                GenerationMode::Sampled,
                Some(seed),
                opts,
            )
        })
        .collect();
    let mut outcome = StageOutcome::default();
    for (record, result) in records
        .iter()
        .zip(batch_complete(actor, &requests, opts.parallelism))
    {
        match result {
            Ok(completion) => outcome.items.push(ResponseRecord {
                prompt_id: record.id.clone(),
                actor_id: completion.endpoint_id,
                turn: 0,
                text: completion.text,
            }),
            Err(e) => outcome.failures.push(StageFailure {
                prompt_id: record.id.clone(),
                what: "initial response".into(),
                message: e.to_string(),
            }),
        }
    }
    outcome
}

fn critique_slots(record: &PromptRecord, initial: &ResponseRecord) -> BTreeMap<String, String> {
    let mut slots = slots_for_record(record);
    slots.insert("response".into(), initial.text.clone());
    // The auto_j and ultra_cm critique formats name the judged text
    // `answer`; the generic family names it `response`.
    slots.insert("answer".into(), initial.text.clone());
    slots
}

/// Sample `n` critiques of one initial response, indexed 1..=n.
pub fn generate_critiques(
    record: &PromptRecord,
    initial: &ResponseRecord,
    critic: &Endpoint,
    style: CriticStyle,
    n: u32,
    opts: &SamplerOptions,
) -> StageOutcome<CritiqueRecord> {
    let slots = critique_slots(record, initial);
    let prompt = match render(TemplateStage::Critique, record.task, &slots, style) {
        Ok(prompt) => prompt,
        Err(e) => {
            return StageOutcome {
                items: Vec::new(),
                failures: vec![StageFailure {
                    prompt_id: record.id.clone(),
                    what: "critique prompt".into(),
                    message: e.to_string(),
                }],
            }
        }
    };
    let requests: Vec<CompletionRequest> = (1..=n)
        .map(|index| {
            let seed =
                derive_seed(opts.base_seed, &["critique", &record.id, &index.to_string()]);
            request_for(Role::Critic, &prompt, GenerationMode::Sampled, Some(seed), opts)
        })
        .collect();
    let mut outcome = StageOutcome::default();
    for (offset, result) in batch_complete(critic, &requests, opts.parallelism)
        .into_iter()
        .enumerate()
    {
        let index = offset as u32 + 1;
        match result {
            Ok(completion) => outcome.items.push(CritiqueRecord {
                prompt_id: record.id.clone(),
                critic_id: completion.endpoint_id,
                index,
                text: completion.text,
            }),
            Err(e) => outcome.failures.push(StageFailure {
                prompt_id: record.id.clone(),
                what: format!("critique {index}"),
                message: e.to_string(),
            }),
        }
    }
    outcome
}

fn refinement_slots(
    record: &PromptRecord,
    initial: &ResponseRecord,
    critique_text: &str,
) -> BTreeMap<String, String> {
    let mut slots = slots_for_record(record);
    slots.insert("response".into(), initial.text.clone());
    slots.insert("critique".into(), critique_text.to_string());
    slots
}

/// Sample `m` refinements of one initial response under one critique,
/// indexed 1..=m. `Greedy` mode is the single-refinement evaluation path.
pub fn generate_refinements(
    record: &PromptRecord,
    initial: &ResponseRecord,
    critique: &CritiqueRecord,
    actor: &Endpoint,
    m: u32,
    mode: GenerationMode,
    opts: &SamplerOptions,
) -> StageOutcome<RefinementRecord> {
    let slots = refinement_slots(record, initial, &critique.text);
    let prompt = render(TemplateStage::Refinement, record.task, &slots, CriticStyle::Generic)
        .expect("refinement templates cover every record shape");
    let requests: Vec<CompletionRequest> = (1..=m)
        .map(|j| {
            let seed = derive_seed(
                opts.base_seed,
                &["refinement", &record.id, &critique.index.to_string(), &j.to_string()],
            );
            request_for(Role::Actor, &prompt, mode, Some(seed), opts)
        })
        .collect();
    let mut outcome = StageOutcome::default();
    for (offset, result) in batch_complete(actor, &requests, opts.parallelism)
        .into_iter()
        .enumerate()
    {
        let refinement_index = offset as u32 + 1;
        match result {
            Ok(completion) => outcome.items.push(RefinementRecord {
                prompt_id: record.id.clone(),
                critique_index: critique.index,
                refinement_index,
                text: completion.text,
            }),
            Err(e) => outcome.failures.push(StageFailure {
                prompt_id: record.id.clone(),
                what: format!("refinement ({}, {refinement_index})", critique.index),
                message: e.to_string(),
            }),
        }
    }
    outcome
}

/// One critique-free refinement from the self-refinement prompt, stored
/// with critique index 0.
pub fn self_refine(
    record: &PromptRecord,
    initial: &ResponseRecord,
    actor: &Endpoint,
    opts: &SamplerOptions,
) -> Result<RefinementRecord, StageFailure> {
    let mut slots = slots_for_record(record);
    slots.insert("response".into(), initial.text.clone());
    let prompt =
        render(TemplateStage::SelfRefinement, record.task, &slots, CriticStyle::Generic)
            .expect("self-refinement templates cover every record shape");
    let request = request_for(Role::Actor, &prompt, GenerationMode::Greedy, None, opts);
    match complete(actor, &request) {
        Ok(completion) => Ok(RefinementRecord {
            prompt_id: record.id.clone(),
            critique_index: 0,
            refinement_index: 1,
            text: completion.text,
        }),
        Err(e) => Err(StageFailure {
            prompt_id: record.id.clone(),
            what: "self-refinement".into(),
            message: e.to_string(),
        }),
    }
}

/// Run `turns` critique-refine rounds, each critiquing the latest response
/// greedily and refining it once greedily. A failure at turn t aborts the
/// remaining turns, returning turns 1..t-1.
pub fn iterate(
    record: &PromptRecord,
    initial: &ResponseRecord,
    critic: &Endpoint,
    actor: &Endpoint,
    style: CriticStyle,
    turns: u32,
    opts: &SamplerOptions,
) -> StageOutcome<ResponseRecord> {
    let mut outcome = StageOutcome::default();
    let mut current = initial.clone();
    for turn in 1..=turns {
        let slots = critique_slots(record, &current);
        let critique_prompt = match render(TemplateStage::Critique, record.task, &slots, style) {
            Ok(p) => p,
            Err(e) => {
                outcome.failures.push(StageFailure {
                    prompt_id: record.id.clone(),
                    what: format!("turn {turn} critique prompt"),
                    message: e.to_string(),
                });
                return outcome;
            }
        };
        let critique_request =
            request_for(Role::Critic, &critique_prompt, GenerationMode::Greedy, None, opts);
        let critique_text = match complete(critic, &critique_request) {
            Ok(completion) => completion.text,
            Err(e) => {
                outcome.failures.push(StageFailure {
                    prompt_id: record.id.clone(),
                    what: format!("turn {turn} critique"),
                    message: e.to_string(),
                });
                return outcome;
            }
        };

        let slots = refinement_slots(record, &current, &critique_text);
        let refine_prompt =
            render(TemplateStage::Refinement, record.task, &slots, CriticStyle::Generic)
                .expect("refinement templates cover every record shape");
        let refine_request =
            request_for(Role::Actor, &refine_prompt, GenerationMode::Greedy, None, opts);
        match complete(actor, &refine_request) {
            Ok(completion) => {
                current = ResponseRecord {
                    prompt_id: record.id.clone(),
                    actor_id: completion.endpoint_id,
                    turn,
                    text: completion.text,
                };
                outcome.items.push(current.clone());
            }
            Err(e) => {
                outcome.failures.push(StageFailure {
                    prompt_id: record.id.clone(),
                    what: format!("turn {turn} refinement"),
                    message: e.to_string(),
                });
                return outcome;
            }
        }
    }
    outcome
}

/// Collect a record's full bundle: critiques of the initial response, then
/// M sampled refinements per critique.
#[allow(clippy::too_many_arguments)]
pub fn collect_bundle(
    record: &PromptRecord,
    initial: &ResponseRecord,
    critic: &Endpoint,
    actor: &Endpoint,
    style: CriticStyle,
    n: u32,
    m: u32,
    opts: &SamplerOptions,
) -> (SampleBundle, Vec<StageFailure>) {
    let mut failures = Vec::new();
    let critiques = generate_critiques(record, initial, critic, style, n, opts);
    failures.extend(critiques.failures);
    let mut refinements = BTreeMap::new();
    for critique in &critiques.items {
        let refined = generate_refinements(
            record,
            initial,
            critique,
            actor,
            m,
            GenerationMode::Sampled,
            opts,
        );
        failures.extend(refined.failures);
        refinements.insert(critique.index, refined.items);
    }
    (
        SampleBundle {
            record: record.clone(),
            initial: initial.clone(),
            critiques: critiques.items,
            refinements,
        },
        failures,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{make_mock_backend, BackendError, Endpoint, MockBehavior, RetryPolicy, ScriptedBackend};
    use crate::records::TaskKind;
    use std::time::Duration;

    fn record(id: &str, task: TaskKind) -> PromptRecord {
        PromptRecord {
            id: id.into(),
            task,
            prompt: "Explain tides.".into(),
            choices: None,
            table_title: None,
            table_content: None,
            reference_answer: None,
            source: "fixture".into(),
        }
    }

    fn opts() -> SamplerOptions {
        SamplerOptions {
            base_seed: 42,
            max_tokens: 128,
            parallelism: 2,
        }
    }

    fn initial_for(record: &PromptRecord) -> ResponseRecord {
        ResponseRecord {
            prompt_id: record.id.clone(),
            actor_id: "actor".into(),
            turn: 0,
            text: "The moon pulls the water.".into(),
        }
    }

    #[test]
    fn initial_generation_covers_all_records() {
        let records = vec![
            record("a", TaskKind::Dialog),
            record("b", TaskKind::Summarization),
            record("c", TaskKind::Code),
        ];
        let actor = make_mock_backend(1, MockBehavior::Generate);
        let outcome = generate_initial(&records, &actor, &opts());
        assert_eq!(outcome.items.len(), 3);
        assert!(outcome.failures.is_empty());
        assert!(outcome.items.iter().all(|r| r.turn == 0));
    }

    #[test]
    fn math_initial_prompt_asks_for_boxed_answers() {
        let rendered = initial_prompt(&record("m", TaskKind::Math));
        assert!(rendered.user.contains("\\boxed{answer}"));
    }

    #[test]
    fn failed_record_leaves_a_hole() {
        let records = vec![record("a", TaskKind::Dialog), record("b", TaskKind::Dialog)];
        let backend = ScriptedBackend::new(vec![
            Ok("fine".into()),
            Err(BackendError::Fatal("rejected".into())),
        ]);
        let endpoint = Endpoint::new(
            backend,
            RetryPolicy { max_attempts: 1, base_delay: Duration::ZERO },
        );
        let outcome = generate_initial(
            &records,
            &endpoint,
            &SamplerOptions { parallelism: 1, ..opts() },
        );
        assert_eq!(outcome.items.len(), 1);
        assert_eq!(outcome.failures.len(), 1);
        assert_eq!(outcome.failures[0].prompt_id, "b");
    }

    #[test]
    fn critique_indices_run_from_one_to_n() {
        let rec = record("q", TaskKind::QuestionAnswering);
        let initial = initial_for(&rec);
        let critic = make_mock_backend(7, MockBehavior::Generate);
        for n in [4u32, 2] {
            let outcome =
                generate_critiques(&rec, &initial, &critic, CriticStyle::Generic, n, &opts());
            let indices: Vec<u32> = outcome.items.iter().map(|c| c.index).collect();
            assert_eq!(indices, (1..=n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn critique_sampling_is_reproducible_and_index_distinct() {
        let rec = record("q", TaskKind::Dialog);
        let initial = initial_for(&rec);
        let critic = make_mock_backend(7, MockBehavior::Generate);
        let a = generate_critiques(&rec, &initial, &critic, CriticStyle::Generic, 4, &opts());
        let b = generate_critiques(&rec, &initial, &critic, CriticStyle::Generic, 4, &opts());
        let texts = |o: &StageOutcome<CritiqueRecord>| {
            o.items.iter().map(|c| c.text.clone()).collect::<Vec<_>>()
        };
        assert_eq!(texts(&a), texts(&b));
        let mut unique = texts(&a);
        unique.dedup();
        assert_eq!(unique.len(), 4, "per-index seeds must differ");
    }

    #[test]
    fn refinements_embed_the_critique_and_initial() {
        let rec = record("q", TaskKind::Math);
        let initial = initial_for(&rec);
        let critique = CritiqueRecord {
            prompt_id: "q".into(),
            critic_id: "critic".into(),
            index: 2,
            text: "UNIQUE-CRITIQUE-MARKER".into(),
        };
        let slots = refinement_slots(&rec, &initial, &critique.text);
        let prompt =
            render(TemplateStage::Refinement, rec.task, &slots, CriticStyle::Generic).unwrap();
        assert!(prompt.user.contains("UNIQUE-CRITIQUE-MARKER"));
        assert!(prompt.user.contains(&initial.text));

        let actor = make_mock_backend(3, MockBehavior::Generate);
        let outcome = generate_refinements(
            &rec,
            &initial,
            &critique,
            &actor,
            5,
            GenerationMode::Sampled,
            &opts(),
        );
        let indices: Vec<u32> = outcome.items.iter().map(|r| r.refinement_index).collect();
        assert_eq!(indices, vec![1, 2, 3, 4, 5]);
        assert!(outcome.items.iter().all(|r| r.critique_index == 2));
    }

    #[test]
    fn greedy_single_refinement_is_deterministic() {
        let rec = record("q", TaskKind::Dialog);
        let initial = initial_for(&rec);
        let critique = CritiqueRecord {
            prompt_id: "q".into(),
            critic_id: "critic".into(),
            index: 1,
            text: "be brief".into(),
        };
        let actor = make_mock_backend(3, MockBehavior::Generate);
        let a = generate_refinements(
            &rec, &initial, &critique, &actor, 1, GenerationMode::Greedy, &opts(),
        );
        let b = generate_refinements(
            &rec, &initial, &critique, &actor, 1, GenerationMode::Greedy, &opts(),
        );
        assert_eq!(a.items[0].text, b.items[0].text);
        assert_eq!(a.items.len(), 1);
    }

    #[test]
    fn self_refinement_prompt_has_no_critique_section() {
        let rec = record("q", TaskKind::Dialog);
        let initial = initial_for(&rec);
        let mut slots = slots_for_record(&rec);
        slots.insert("response".into(), initial.text.clone());
        let prompt =
            render(TemplateStage::SelfRefinement, rec.task, &slots, CriticStyle::Generic).unwrap();
        assert!(prompt.user.contains("Please revise the assistant's response"));
        assert!(!prompt.user.contains("Comment by the judge"));

        let summ = record("s", TaskKind::Summarization);
        let mut slots = slots_for_record(&summ);
        slots.insert("response".into(), "short summary".into());
        let prompt =
            render(TemplateStage::SelfRefinement, summ.task, &slots, CriticStyle::Generic)
                .unwrap();
        assert!(prompt.user.contains("revise the summary to improve"));

        let actor = make_mock_backend(5, MockBehavior::Generate);
        let refined = self_refine(&rec, &initial, &actor, &opts()).unwrap();
        assert_eq!(refined.critique_index, 0);
        let again = self_refine(&rec, &initial, &actor, &opts()).unwrap();
        assert_eq!(refined.text, again.text);
    }

    #[test]
    fn iterate_produces_one_response_per_turn() {
        let rec = record("q", TaskKind::QuestionAnswering);
        let initial = initial_for(&rec);
        let critic = make_mock_backend(11, MockBehavior::Generate);
        let actor = make_mock_backend(13, MockBehavior::Generate);
        let outcome = iterate(&rec, &initial, &critic, &actor, CriticStyle::Generic, 3, &opts());
        assert!(outcome.failures.is_empty());
        let turns: Vec<u32> = outcome.items.iter().map(|r| r.turn).collect();
        assert_eq!(turns, vec![1, 2, 3]);

        let again = iterate(&rec, &initial, &critic, &actor, CriticStyle::Generic, 3, &opts());
        let texts = |o: &StageOutcome<ResponseRecord>| {
            o.items.iter().map(|r| r.text.clone()).collect::<Vec<_>>()
        };
        assert_eq!(texts(&outcome), texts(&again));
    }

    #[test]
    fn iterate_aborts_after_a_failed_turn() {
        let rec = record("q", TaskKind::Dialog);
        let initial = initial_for(&rec);
        // Critique of turn 1 succeeds, turn 2 critique fails terminally.
        let critic = Endpoint::new(
            ScriptedBackend::new(vec![
                Ok("turn one critique".into()),
                Err(BackendError::Fatal("gone".into())),
            ]),
            RetryPolicy { max_attempts: 1, base_delay: Duration::ZERO },
        );
        let actor = make_mock_backend(13, MockBehavior::Generate);
        let outcome = iterate(&rec, &initial, &critic, &actor, CriticStyle::Generic, 3, &opts());
        assert_eq!(outcome.items.len(), 1);
        assert_eq!(outcome.items[0].turn, 1);
        assert_eq!(outcome.failures.len(), 1);
    }

    #[test]
    fn bundle_cardinality_matches_configuration() {
        let rec = record("q", TaskKind::Code);
        let initial = initial_for(&rec);
        let critic = make_mock_backend(17, MockBehavior::Generate);
        let actor = make_mock_backend(19, MockBehavior::Generate);
        let (bundle, failures) = collect_bundle(
            &rec,
            &initial,
            &critic,
            &actor,
            CriticStyle::Generic,
            4,
            5,
            &opts(),
        );
        assert!(failures.is_empty());
        assert!(bundle.is_complete(4, 5));
        assert_eq!(bundle.critiques.len(), 4);
        let total: usize = bundle.refinements.values().map(Vec::len).sum();
        assert_eq!(total, 20);
        assert!(bundle
            .refinements
            .values()
            .flatten()
            .all(|r| r.prompt_id == rec.id));
    }

    #[test]
    fn auto_j_style_critique_uses_its_own_format() {
        let rec = record("q", TaskKind::Math);
        let initial = initial_for(&rec);
        let slots = critique_slots(&rec, &initial);
        let prompt = render(TemplateStage::Critique, rec.task, &slots, CriticStyle::AutoJ).unwrap();
        assert!(prompt.user.starts_with("[INST]"));
        assert!(prompt.user.contains(&initial.text));
    }
}
