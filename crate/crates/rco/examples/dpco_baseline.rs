//! The direct critique-preference baseline: double-judge the fixed
//! critique pairings, keep only order-consistent strict winners, and
//! evaluate the preference loss on the resulting pairs.
//!
//! Run with: `cargo run --example dpco_baseline`

use rco::fixtures::desk_prompts;
use rco::gateway::{make_mock_backend, MockBehavior};
use rco::judge::judge_critique_pair;
use rco::records::ResponseRecord;
use rco::reward::{dpco_pairs, DPCO_GROUPINGS};
use rco::trainer::{dpo_loss, CategoricalPolicy, ReferencePolicy};

fn main() {
    let records = desk_prompts();
    let record = records.iter().find(|r| r.id == "dialog-01").unwrap();
    let initial = ResponseRecord {
        prompt_id: record.id.clone(),
        actor_id: "actor".into(),
        turn: 0,
        text: "Try stirring it and hoping for the best.".into(),
    };
    let critiques = [
        "The response ignores the acetone smell, which signals an underfed starter.",
        "Fine answer.",
        "Suggest feeding twice daily and discarding half; mention temperature.",
        "The tone is dismissive and there are no concrete steps.",
    ];

    let judge = make_mock_backend(5, MockBehavior::ConsistentJudge);
    let mut outcomes = Vec::new();
    for (first, second) in DPCO_GROUPINGS {
        let outcome = judge_critique_pair(
            &judge,
            record,
            &initial,
            critiques[first as usize - 1],
            critiques[second as usize - 1],
            512,
        )
        .unwrap();
        println!("pair ({first}, {second}): {outcome:?}");
        outcomes.push(outcome);
    }
    let pairs = dpco_pairs(&record.id, 4, &[outcomes[0], outcomes[1]]).unwrap();
    println!("kept pairs: {pairs:?}");

    if !pairs.is_empty() {
        let reference = ReferencePolicy::uniform(4);
        let uniform = CategoricalPolicy::uniform(4);
        println!(
            "preference loss at zero margin: {:.6} (= ln 2)",
            dpo_loss(&uniform, &reference, &pairs, 0.1).unwrap()
        );
        let skewed = CategoricalPolicy {
            logits: pairs
                .iter()
                .fold(vec![0.0; 4], |mut logits, pair| {
                    logits[pair.chosen_index as usize - 1] += 2.0;
                    logits[pair.rejected_index as usize - 1] -= 2.0;
                    logits
                }),
        };
        println!(
            "preference loss favoring the chosen critiques: {:.6}",
            dpo_loss(&skewed, &reference, &pairs, 1.0).unwrap()
        );
    }
}
