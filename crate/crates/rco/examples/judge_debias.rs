//! Position-swap debiasing in action: a judge that always answers [[A]]
//! contributes exactly 0.5 once both orders are averaged, while a
//! content-consistent judge gives the same score in both orders.
//!
//! Run with: `cargo run --example judge_debias`

use rco::fixtures::desk_prompts;
use rco::gateway::{make_mock_backend, MockBehavior};
use rco::judge::judge_pair_debiased;
use rco::records::{RefinementRecord, ResponseRecord};

fn main() {
    let records = desk_prompts();
    let record = records.iter().find(|r| r.id == "qa-03").unwrap();
    let initial = ResponseRecord {
        prompt_id: record.id.clone(),
        actor_id: "actor".into(),
        turn: 0,
        text: "Because onions are sad vegetables.".into(),
    };
    let refinement = RefinementRecord {
        prompt_id: record.id.clone(),
        critique_index: 1,
        refinement_index: 1,
        text: "Cutting ruptures cells; an enzyme cascade releases a volatile \
               sulfur compound that irritates the eyes."
            .into(),
    };

    let biased = make_mock_backend(1, MockBehavior::ConstantVerdict('A'));
    let pair = judge_pair_debiased(&biased, record, &initial, &refinement, 512).unwrap();
    println!("position-biased judge (always [[A]]):");
    println!("  refined first:  ps = {:?}", pair.ps_forward());
    println!("  initial first:  ps = {:?}", pair.ps_reversed());
    let values = pair.ps_values();
    println!("  averaged:       {}", values.iter().sum::<f64>() / values.len() as f64);

    let consistent = make_mock_backend(2, MockBehavior::ConsistentJudge);
    let pair = judge_pair_debiased(&consistent, record, &initial, &refinement, 512).unwrap();
    println!("content-consistent judge:");
    println!("  refined first:  ps = {:?}", pair.ps_forward());
    println!("  initial first:  ps = {:?}", pair.ps_reversed());
    println!(
        "  orders agree:   {}",
        pair.ps_forward() == pair.ps_reversed()
    );
}
